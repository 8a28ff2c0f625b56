#include "fedfed/distillation.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "fedfed/rng.hpp"

namespace fedfed {

void DistillConfig::validate() const {
    if (rounds < 1) throw DomainError("distill rounds must be >= 1");
    if (local_epochs < 1) throw DomainError("distill local epochs must be >= 1");
    if (!(rho > 0.0 && rho < 1.0)) throw DomainError("rho must be in (0, 1)");
    if (sigma_s_sq < 0.0) throw DomainError("sigma_s_sq must be >= 0");
    if (batch_size < 1) throw DomainError("batch size must be >= 1");
    if (!(lr >= 0.0)) throw DomainError("lr must be >= 0");
    if (clients_per_round < 1) throw DomainError("clients per round must be >= 1");
    generator_arch.validate();
    classifier_arch.validate();
    if (generator_arch.output_kind != OutputKind::IdentityRegressor)
        throw DomainError("generator needs an identity head");
    if (generator_arch.input_dim() != generator_arch.output_dim())
        throw DimensionError("generator must map d -> d");
    if (classifier_arch.output_kind != OutputKind::SoftmaxClassifier)
        throw DomainError("distillation classifier needs a softmax head");
    if (classifier_arch.input_dim() != generator_arch.input_dim())
        throw DimensionError("generator and classifier input dims differ");
}

NoiseMechanism DistillConfig::sharing_mechanism() const {
    const double sigma = std::sqrt(sigma_s_sq);
    return mechanism == NoiseMechanism::Kind::Gaussian
               ? NoiseMechanism::gaussian(sigma)
               : NoiseMechanism::laplace(sigma / std::sqrt(2.0));
}

std::vector<double> clip_norm(std::span<const double> z, double bound) {
    if (bound < 0.0) throw DomainError("clip bound must be >= 0");
    std::vector<double> out(z.begin(), z.end());
    const double norm = l2_norm(z);
    if (norm > bound) {
        const double s = bound / norm;
        for (double& v : out) v *= s;
    }
    return out;
}

FeatureTriple split_features(std::span<const double> x, const ParamSet& generator, double rho) {
    if (static_cast<int>(x.size()) != generator.arch.input_dim() ||
        generator.arch.output_dim() != generator.arch.input_dim())
        throw DimensionError("generator must map the sample dimension to itself");
    Matrix batch(1, static_cast<int>(x.size()));
    std::copy(x.begin(), x.end(), batch.data.begin());
    const Matrix q = forward(generator, batch);

    FeatureTriple triple;
    triple.x.assign(x.begin(), x.end());
    std::vector<double> residual(x.size());
    for (size_t i = 0; i < x.size(); ++i) residual[i] = x[i] - q.data[i];
    triple.x_s = clip_norm(residual, rho * l2_norm(x));
    triple.x_r.resize(x.size());
    for (size_t i = 0; i < x.size(); ++i) triple.x_r[i] = x[i] - triple.x_s[i];
    return triple;
}

DistillGrads distill_loss_and_grads(const ParamSet& generator, const ParamSet& classifier,
                                    const Matrix& batch, const std::vector<int>& labels,
                                    double rho) {
    if (!(rho > 0.0 && rho < 1.0)) throw DomainError("rho must be in (0, 1)");
    const int n = batch.rows;
    const int d = batch.cols;

    const Matrix q = forward(generator, batch);
    Matrix z(n, d);
    std::vector<double> scales(static_cast<size_t>(n), 1.0);
    for (int r = 0; r < n; ++r) {
        double res_sq = 0.0, x_sq = 0.0;
        for (int c = 0; c < d; ++c) {
            const double rz = batch(r, c) - q(r, c);
            z(r, c) = rz;
            res_sq += rz * rz;
            x_sq += batch(r, c) * batch(r, c);
        }
        const double bound = rho * std::sqrt(x_sq);
        const double norm = std::sqrt(res_sq);
        if (norm > bound) {
            const double s = norm > 0.0 ? bound / norm : 1.0;
            scales[static_cast<size_t>(r)] = s;
            for (int c = 0; c < d; ++c) z(r, c) *= s;
        }
    }

    Matrix z_grad;
    const LossGrad cls = loss_and_grad_input(classifier, z, labels, LossKind::CrossEntropy, z_grad);
    if (!std::isfinite(cls.loss)) throw NumericError("distillation loss diverged; reduce lr");

    // d(loss)/d(q) = -scale * d(loss)/d(z); the clip scale is a constant of
    // the step (straight-through projection).
    Matrix q_grad(n, d);
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < d; ++c) q_grad(r, c) = -scales[static_cast<size_t>(r)] * z_grad(r, c);

    DistillGrads out;
    out.loss = cls.loss;
    out.generator = backprop_output_grad(generator, batch, q_grad);
    out.classifier = cls.grads;
    return out;
}

double distill_step(ParamSet& generator, ParamSet& classifier, const Matrix& batch,
                    const std::vector<int>& labels, double rho, double lr) {
    const DistillGrads grads = distill_loss_and_grads(generator, classifier, batch, labels, rho);
    GradSet gen_velocity = zeros_like(generator);
    GradSet cls_velocity = zeros_like(classifier);
    sgd_step_inplace(generator, grads.generator, lr, 0.0, 0.0, gen_velocity);
    sgd_step_inplace(classifier, grads.classifier, lr, 0.0, 0.0, cls_velocity);
    return grads.loss;
}

namespace {

struct LocalDistillResult {
    ParamSet generator;
    ParamSet classifier;
    long samples = 0;
};

Matrix gather_rows(const Matrix& src, const std::vector<int>& rows, int from, int to) {
    Matrix out(to - from, src.cols);
    for (int r = from; r < to; ++r)
        for (int c = 0; c < src.cols; ++c)
            out(r - from, c) = src(rows[static_cast<size_t>(r)], c);
    return out;
}

std::vector<int> gather_labels(const std::vector<int>& labels, const std::vector<int>& rows,
                               int from, int to) {
    std::vector<int> out(static_cast<size_t>(to - from));
    for (int r = from; r < to; ++r)
        out[static_cast<size_t>(r - from)] = labels[static_cast<size_t>(rows[static_cast<size_t>(r)])];
    return out;
}

}  // namespace

DistillOutput run_feature_distillation(const std::vector<LabeledDataset>& clients,
                                       const DistillConfig& cfg, int threads) {
    cfg.validate();
    if (clients.empty()) throw ProtocolError("distillation needs at least one client");
    for (const auto& c : clients) c.validate();

    ParamSet generator = init_params(cfg.generator_arch, splitmix64(cfg.seed ^ stream_tag("gen")));
    ParamSet classifier = init_params(cfg.classifier_arch, splitmix64(cfg.seed ^ stream_tag("cls")));

    const int K = static_cast<int>(clients.size());
    const int per_round = std::min(cfg.clients_per_round, K);

    for (int round = 1; round <= cfg.rounds; ++round) {
        RngStream sample_rng =
            RngStream::derive(cfg.seed, {stream_tag("dsample"), static_cast<uint64_t>(round)});
        const std::vector<int> selected = sample_rng.sample_without_replacement(K, per_round);

        std::vector<LocalDistillResult> results(selected.size());
        parallel_for(static_cast<int>(selected.size()), threads, [&](int slot) {
            const int k = selected[static_cast<size_t>(slot)];
            const LabeledDataset& data = clients[static_cast<size_t>(k)];
            LocalDistillResult local{generator, classifier, data.size()};
            RngStream order_rng = RngStream::derive(
                cfg.seed, {stream_tag("dbatch"), static_cast<uint64_t>(k), static_cast<uint64_t>(round)});
            std::vector<int> order(static_cast<size_t>(data.size()));
            for (int i = 0; i < data.size(); ++i) order[static_cast<size_t>(i)] = i;
            for (int epoch = 0; epoch < cfg.local_epochs; ++epoch) {
                order_rng.shuffle(order);
                for (int off = 0; off < data.size(); off += cfg.batch_size) {
                    const int end = std::min(off + cfg.batch_size, data.size());
                    const Matrix batch = gather_rows(data.features, order, off, end);
                    const std::vector<int> labels = gather_labels(data.labels, order, off, end);
                    distill_step(local.generator, local.classifier, batch, labels, cfg.rho, cfg.lr);
                }
            }
            results[static_cast<size_t>(slot)] = std::move(local);
        });

        long total = 0;
        for (const auto& r : results) total += r.samples;
        std::vector<std::pair<const ParamSet*, double>> gen_entries, cls_entries;
        for (const auto& r : results) {
            const double w = static_cast<double>(r.samples) / static_cast<double>(total);
            gen_entries.emplace_back(&r.generator, w);
            cls_entries.emplace_back(&r.classifier, w);
        }
        generator = weighted_param_sum(gen_entries);
        classifier = weighted_param_sum(cls_entries);
    }

    // Sharing: one protected record per local example, noise applied once.
    DistillOutput out{generator, classifier, {}};
    GlobalSharedDataset& shared = out.shared;
    shared.dim = cfg.generator_arch.input_dim();
    shared.rho = cfg.rho;
    shared.sigma_s_sq = cfg.sigma_s_sq;
    shared.mechanism = cfg.mechanism;
    for (const auto& c : clients) shared.num_classes = std::max(shared.num_classes, c.num_classes);

    for (int k = 0; k < K; ++k) {
        const LabeledDataset& data = clients[static_cast<size_t>(k)];
        RngStream noise_rng =
            RngStream::derive(cfg.seed, {stream_tag("share"), static_cast<uint64_t>(k)});
        for (int i = 0; i < data.size(); ++i) {
            const FeatureTriple triple = split_features(data.features.row(i), generator, cfg.rho);
            SharedRecord rec;
            rec.x_p = triple.x_s;
            if (cfg.sigma_s_sq > 0.0) {
                const std::vector<double> noise = sample_noise(cfg.sharing_mechanism(), shared.dim, noise_rng);
                for (int c = 0; c < shared.dim; ++c) rec.x_p[static_cast<size_t>(c)] += noise[static_cast<size_t>(c)];
            }
            rec.label = data.labels[static_cast<size_t>(i)];
            rec.source_client = k;
            shared.records.push_back(std::move(rec));
        }
    }
    return out;
}

// ---- shared-dataset io -------------------------------------------------------

namespace {

void write_f64_le(std::ostream& os, double v) {
    uint64_t bits;
    std::memcpy(&bits, &v, sizeof(bits));
    unsigned char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(buf), 8);
}

double read_f64_le(std::istream& is) {
    unsigned char buf[8];
    is.read(reinterpret_cast<char*>(buf), 8);
    if (is.gcount() != 8) throw FormatError("truncated feature block");
    uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<uint64_t>(buf[i]) << (8 * i);
    double v;
    std::memcpy(&v, &bits, sizeof(v));
    return v;
}

void write_i32_le(std::ostream& os, int32_t v) {
    unsigned char buf[4];
    for (int i = 0; i < 4; ++i) buf[i] = static_cast<unsigned char>((static_cast<uint32_t>(v) >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(buf), 4);
}

int32_t read_i32_le(std::istream& is) {
    unsigned char buf[4];
    is.read(reinterpret_cast<char*>(buf), 4);
    if (is.gcount() != 4) throw FormatError("truncated int32 block");
    uint32_t bits = 0;
    for (int i = 0; i < 4; ++i) bits |= static_cast<uint32_t>(buf[i]) << (8 * i);
    return static_cast<int32_t>(bits);
}

}  // namespace

void save_shared(const GlobalSharedDataset& shared, const std::string& path) {
    nlohmann::ordered_json header;
    header["d"] = shared.dim;
    header["classes"] = shared.num_classes;
    header["rho"] = shared.rho;
    header["sigma_s_sq"] = shared.sigma_s_sq;
    header["mechanism"] = shared.mechanism == NoiseMechanism::Kind::Gaussian ? "gaussian" : "laplace";
    header["count"] = shared.records.size();

    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot open " + path + " for writing");
    os << header.dump() << '\n';
    for (const auto& rec : shared.records)
        for (double v : rec.x_p) write_f64_le(os, v);
    for (const auto& rec : shared.records) write_i32_le(os, rec.label);
    for (const auto& rec : shared.records) write_i32_le(os, rec.source_client);
    if (!os) throw FormatError("write failed for " + path);
}

GlobalSharedDataset load_shared(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open " + path);
    std::string line;
    if (!std::getline(is, line)) throw FormatError("missing shared-dataset header");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("bad shared-dataset header: ") + e.what());
    }
    GlobalSharedDataset shared;
    shared.dim = header.at("d").get<int>();
    shared.num_classes = header.at("classes").get<int>();
    shared.rho = header.at("rho").get<double>();
    shared.sigma_s_sq = header.at("sigma_s_sq").get<double>();
    const std::string mech = header.at("mechanism").get<std::string>();
    if (mech == "gaussian")
        shared.mechanism = NoiseMechanism::Kind::Gaussian;
    else if (mech == "laplace")
        shared.mechanism = NoiseMechanism::Kind::Laplace;
    else
        throw FormatError("unknown mechanism: " + mech);
    const size_t count = header.at("count").get<size_t>();
    shared.records.resize(count);
    for (auto& rec : shared.records) {
        rec.x_p.resize(static_cast<size_t>(shared.dim));
        for (double& v : rec.x_p) v = read_f64_le(is);
    }
    for (auto& rec : shared.records) rec.label = read_i32_le(is);
    for (auto& rec : shared.records) rec.source_client = read_i32_le(is);
    return shared;
}

void shared_as_batch(const GlobalSharedDataset& shared, Matrix& features, std::vector<int>& labels) {
    features = Matrix(static_cast<int>(shared.records.size()), shared.dim);
    labels.resize(shared.records.size());
    for (size_t r = 0; r < shared.records.size(); ++r) {
        for (int c = 0; c < shared.dim; ++c)
            features(static_cast<int>(r), c) = shared.records[r].x_p[static_cast<size_t>(c)];
        labels[r] = shared.records[r].label;
    }
}

}  // namespace fedfed

#include "fedfed/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "fedfed/attacks.hpp"
#include "fedfed/rng.hpp"

namespace fedfed {

void ExperimentConfig::validate() const {
    if (dataset.kind == DatasetSource::Kind::Blobs) {
        if (dataset.classes < 1 || dataset.dim < 1 || dataset.per_class < 1)
            throw ConfigError("dataset.classes/dim/per_class must be >= 1");
        if (!(dataset.spread > 0.0)) throw ConfigError("dataset.spread must be > 0");
    }
    if (!(dataset.test_fraction >= 0.0 && dataset.test_fraction < 1.0))
        throw ConfigError("dataset.test_fraction must be in [0, 1)");
    if (partition.num_clients < 1) throw ConfigError("partition.clients must be >= 1");
    if (distill_rounds < 1) throw ConfigError("distill.rounds must be >= 1");
    if (distill_epochs < 1) throw ConfigError("distill.epochs must be >= 1");
    if (!(rho > 0.0 && rho < 1.0)) throw ConfigError("distill.rho must be in (0, 1)");
    if (sigma_s_sq < 0.0) throw ConfigError("distill.sigma_sq must be >= 0");
    if (train_rounds < 0) throw ConfigError("train.rounds must be >= 0");
    if (train_epochs < 0) throw ConfigError("train.epochs must be >= 0");
    if (!(lr > 0.0)) throw ConfigError("train.lr must be > 0");
    if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("train.momentum must be in [0, 1)");
    if (weight_decay < 0.0) throw ConfigError("train.weight_decay must be >= 0");
    if (seeds.empty()) throw ConfigError("seeds must be non-empty");
    if (target_acc < 0.0 || target_acc > 1.0) throw ConfigError("target_acc must be in [0, 1]");
    try {
        strategy.validate();
    } catch (const Error& e) {
        throw ConfigError(std::string("train.strategy: ") + e.what());
    }
}

namespace {

struct RawConfig {
    std::vector<std::pair<std::string, std::string>> entries;
};

RawConfig tokenize(const std::string& text) {
    RawConfig raw;
    std::stringstream ss(text);
    std::string line;
    int line_no = 0;
    auto trim = [](std::string s) {
        const auto a = s.find_first_not_of(" \t\r");
        if (a == std::string::npos) return std::string();
        const auto b = s.find_last_not_of(" \t\r");
        return s.substr(a, b - a + 1);
    };
    while (std::getline(ss, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
        raw.entries.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return raw;
}

int parse_int(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        const int out = std::stoi(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw ConfigError(key + ": expected integer, got '" + v + "'");
    }
}

double parse_double(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        const double out = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw ConfigError(key + ": expected number, got '" + v + "'");
    }
}

std::vector<uint64_t> parse_seed_list(const std::string& key, const std::string& v) {
    std::vector<uint64_t> out;
    std::stringstream ss(v);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
        try {
            out.push_back(std::stoull(cell));
        } catch (const std::exception&) {
            throw ConfigError(key + ": expected comma-separated integers, got '" + v + "'");
        }
    }
    if (out.empty()) throw ConfigError(key + ": empty seed list");
    return out;
}

}  // namespace

ExperimentConfig parse_config_text(const std::string& text) {
    ExperimentConfig cfg;
    for (const auto& [key, value] : tokenize(text).entries) {
        if (key == "dataset.kind") {
            if (value == "blobs") cfg.dataset.kind = DatasetSource::Kind::Blobs;
            else if (value == "idx") cfg.dataset.kind = DatasetSource::Kind::Idx;
            else if (value == "csv") cfg.dataset.kind = DatasetSource::Kind::Csv;
            else throw ConfigError("dataset.kind: unknown kind '" + value + "'");
        } else if (key == "dataset.classes") cfg.dataset.classes = parse_int(key, value);
        else if (key == "dataset.dim") cfg.dataset.dim = parse_int(key, value);
        else if (key == "dataset.per_class") cfg.dataset.per_class = parse_int(key, value);
        else if (key == "dataset.spread") cfg.dataset.spread = parse_double(key, value);
        else if (key == "dataset.images") cfg.dataset.images_path = value;
        else if (key == "dataset.labels") cfg.dataset.labels_path = value;
        else if (key == "dataset.csv") cfg.dataset.csv_path = value;
        else if (key == "dataset.test_fraction") cfg.dataset.test_fraction = parse_double(key, value);
        else if (key == "partition.method") {
            if (value == "lda") cfg.partition.method = PartitionSpec::Method::Lda;
            else if (value == "labels_per_client") cfg.partition.method = PartitionSpec::Method::LabelsPerClient;
            else if (value == "subset") cfg.partition.method = PartitionSpec::Method::Subset;
            else throw ConfigError("partition.method: unknown method '" + value + "'");
        } else if (key == "partition.alpha") cfg.partition.alpha = parse_double(key, value);
        else if (key == "partition.labels_per_client") cfg.partition.labels_per_client = parse_int(key, value);
        else if (key == "partition.dominant_fraction") cfg.partition.dominant_fraction = parse_double(key, value);
        else if (key == "partition.clients") cfg.partition.num_clients = parse_int(key, value);
        else if (key == "distill.rounds") cfg.distill_rounds = parse_int(key, value);
        else if (key == "distill.epochs") cfg.distill_epochs = parse_int(key, value);
        else if (key == "distill.rho") cfg.rho = parse_double(key, value);
        else if (key == "distill.sigma_sq") cfg.sigma_s_sq = parse_double(key, value);
        else if (key == "distill.batch") cfg.distill_batch = parse_int(key, value);
        else if (key == "distill.lr") cfg.distill_lr = parse_double(key, value);
        else if (key == "distill.sample_count") cfg.distill_sample_count = parse_int(key, value);
        else if (key == "distill.gen_hidden") cfg.gen_hidden = parse_int(key, value);
        else if (key == "distill.cls_hidden") cfg.cls_hidden = parse_int(key, value);
        else if (key == "distill.mechanism") {
            if (value == "gaussian") cfg.mechanism = NoiseMechanism::Kind::Gaussian;
            else if (value == "laplace") cfg.mechanism = NoiseMechanism::Kind::Laplace;
            else throw ConfigError("distill.mechanism: unknown mechanism '" + value + "'");
        } else if (key == "train.rounds") cfg.train_rounds = parse_int(key, value);
        else if (key == "train.epochs") cfg.train_epochs = parse_int(key, value);
        else if (key == "train.batch") cfg.train_batch = parse_int(key, value);
        else if (key == "train.lr") cfg.lr = parse_double(key, value);
        else if (key == "train.momentum") cfg.momentum = parse_double(key, value);
        else if (key == "train.weight_decay") cfg.weight_decay = parse_double(key, value);
        else if (key == "train.sample_count") cfg.train_sample_count = parse_int(key, value);
        else if (key == "train.hidden") cfg.train_hidden = parse_int(key, value);
        else if (key == "train.strategy") {
            if (value == "fedavg") cfg.strategy.kind = AggStrategy::Kind::FedAvg;
            else if (value == "fedprox") cfg.strategy.kind = AggStrategy::Kind::FedProx;
            else if (value == "scaffold") cfg.strategy.kind = AggStrategy::Kind::Scaffold;
            else if (value == "fednova") cfg.strategy.kind = AggStrategy::Kind::FedNova;
            else throw ConfigError("train.strategy: unknown strategy '" + value + "'");
        } else if (key == "train.mu") cfg.strategy.mu = parse_double(key, value);
        else if (key == "train.scaffold_variant") cfg.strategy.scaffold_variant = parse_int(key, value);
        else if (key == "train.varrho") cfg.strategy.varrho = parse_double(key, value);
        else if (key == "train.shared_subsample") cfg.shared_subsample = parse_int(key, value);
        else if (key == "seeds") cfg.seeds = parse_seed_list(key, value);
        else if (key == "target_acc") cfg.target_acc = parse_double(key, value);
        else throw ConfigError("unknown key: " + key);
    }
    cfg.validate();
    return cfg;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config " + path);
    std::stringstream buf;
    buf << is.rdbuf();
    return parse_config_text(buf.str());
}

std::string config_to_text(const ExperimentConfig& cfg) {
    std::ostringstream os;
    os.precision(17);
    const char* kind = cfg.dataset.kind == DatasetSource::Kind::Blobs   ? "blobs"
                       : cfg.dataset.kind == DatasetSource::Kind::Idx   ? "idx"
                                                                        : "csv";
    os << "dataset.kind = " << kind << "\n";
    os << "dataset.classes = " << cfg.dataset.classes << "\n";
    os << "dataset.dim = " << cfg.dataset.dim << "\n";
    os << "dataset.per_class = " << cfg.dataset.per_class << "\n";
    os << "dataset.spread = " << cfg.dataset.spread << "\n";
    if (!cfg.dataset.images_path.empty()) os << "dataset.images = " << cfg.dataset.images_path << "\n";
    if (!cfg.dataset.labels_path.empty()) os << "dataset.labels = " << cfg.dataset.labels_path << "\n";
    if (!cfg.dataset.csv_path.empty()) os << "dataset.csv = " << cfg.dataset.csv_path << "\n";
    os << "dataset.test_fraction = " << cfg.dataset.test_fraction << "\n";
    const char* method = cfg.partition.method == PartitionSpec::Method::Lda ? "lda"
                         : cfg.partition.method == PartitionSpec::Method::LabelsPerClient
                             ? "labels_per_client"
                             : "subset";
    os << "partition.method = " << method << "\n";
    os << "partition.alpha = " << cfg.partition.alpha << "\n";
    os << "partition.labels_per_client = " << cfg.partition.labels_per_client << "\n";
    os << "partition.dominant_fraction = " << cfg.partition.dominant_fraction << "\n";
    os << "partition.clients = " << cfg.partition.num_clients << "\n";
    os << "distill.rounds = " << cfg.distill_rounds << "\n";
    os << "distill.epochs = " << cfg.distill_epochs << "\n";
    os << "distill.rho = " << cfg.rho << "\n";
    os << "distill.sigma_sq = " << cfg.sigma_s_sq << "\n";
    os << "distill.batch = " << cfg.distill_batch << "\n";
    os << "distill.lr = " << cfg.distill_lr << "\n";
    os << "distill.sample_count = " << cfg.distill_sample_count << "\n";
    os << "distill.gen_hidden = " << cfg.gen_hidden << "\n";
    os << "distill.cls_hidden = " << cfg.cls_hidden << "\n";
    os << "distill.mechanism = "
       << (cfg.mechanism == NoiseMechanism::Kind::Gaussian ? "gaussian" : "laplace") << "\n";
    os << "train.rounds = " << cfg.train_rounds << "\n";
    os << "train.epochs = " << cfg.train_epochs << "\n";
    os << "train.batch = " << cfg.train_batch << "\n";
    os << "train.lr = " << cfg.lr << "\n";
    os << "train.momentum = " << cfg.momentum << "\n";
    os << "train.weight_decay = " << cfg.weight_decay << "\n";
    os << "train.sample_count = " << cfg.train_sample_count << "\n";
    os << "train.hidden = " << cfg.train_hidden << "\n";
    const char* strategy = cfg.strategy.kind == AggStrategy::Kind::FedAvg    ? "fedavg"
                           : cfg.strategy.kind == AggStrategy::Kind::FedProx ? "fedprox"
                           : cfg.strategy.kind == AggStrategy::Kind::Scaffold ? "scaffold"
                                                                              : "fednova";
    os << "train.strategy = " << strategy << "\n";
    os << "train.mu = " << cfg.strategy.mu << "\n";
    os << "train.scaffold_variant = " << cfg.strategy.scaffold_variant << "\n";
    os << "train.varrho = " << cfg.strategy.varrho << "\n";
    os << "train.shared_subsample = " << cfg.shared_subsample << "\n";
    os << "seeds = ";
    for (size_t i = 0; i < cfg.seeds.size(); ++i) os << (i ? "," : "") << cfg.seeds[i];
    os << "\n";
    os << "target_acc = " << cfg.target_acc << "\n";
    return os.str();
}

void save_config(const ExperimentConfig& cfg, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw ConfigError("cannot open " + path + " for writing");
    os << config_to_text(cfg);
}

MetricsReport metrics(const std::vector<RoundLog>& logs, double target_acc,
                      std::optional<int> baseline_rounds) {
    if (logs.empty()) throw ProtocolError("metrics on empty logs");
    MetricsReport report;
    for (const auto& log : logs) {
        report.best_acc = std::max(report.best_acc, log.test_acc);
        if (!report.rounds_to_target && log.test_acc >= target_acc)
            report.rounds_to_target = log.round;
    }
    if (report.rounds_to_target && baseline_rounds)
        report.speedup = static_cast<double>(*baseline_rounds) / *report.rounds_to_target;
    return report;
}

double comm_overhead_ratio(double clients, double distill_rounds, double train_rounds, double beta,
                           double gamma) {
    if (!(clients > 0.0)) throw DomainError("client count must be > 0");
    if (distill_rounds < 0.0) throw DomainError("distill rounds must be >= 0");
    if (!(train_rounds > 0.0)) throw DomainError("train rounds must be > 0");
    if (!(beta > 0.0 && beta <= 1.0)) throw DomainError("beta must be in (0, 1]");
    if (gamma < 0.0) throw DomainError("gamma must be >= 0");
    const double denom = train_rounds * beta;
    return distill_rounds / denom + gamma / (2.0 * denom) + gamma / (2.0 * clients * denom);
}

PreparedData prepare_data(const ExperimentConfig& cfg, uint64_t seed) {
    LabeledDataset base;
    switch (cfg.dataset.kind) {
        case DatasetSource::Kind::Blobs:
            base = synthesize_blobs(cfg.dataset.classes, cfg.dataset.dim, cfg.dataset.per_class,
                                    cfg.dataset.spread, splitmix64(seed ^ stream_tag("data")));
            break;
        case DatasetSource::Kind::Idx:
            base = load_idx(cfg.dataset.images_path, cfg.dataset.labels_path);
            break;
        case DatasetSource::Kind::Csv:
            base = load_csv(cfg.dataset.csv_path);
            break;
    }
    const auto [train_idx, test_idx] =
        stratified_split(base, cfg.dataset.test_fraction, splitmix64(seed ^ stream_tag("split")));
    if (cfg.dataset.test_fraction > 0.0 && test_idx.empty())
        throw ConfigError("dataset.test_fraction leaves no evaluation samples");
    PreparedData prep;
    prep.train = take_subset(base, train_idx);
    prep.eval = cfg.dataset.test_fraction > 0.0 ? take_subset(base, test_idx) : prep.train;

    PartitionSpec pspec = cfg.partition;
    pspec.seed = splitmix64(seed ^ stream_tag("part"));
    prep.parts = partition(prep.train, pspec);

    prep.clients.reserve(prep.parts.assignments.size());
    for (size_t k = 0; k < prep.parts.assignments.size(); ++k) {
        ClientState client;
        client.id = static_cast<int>(k);
        client.data = take_subset(prep.train, prep.parts.assignments[k]);
        prep.clients.push_back(std::move(client));
    }
    return prep;
}

DistillConfig make_distill_config(const ExperimentConfig& cfg, int dim, uint64_t seed) {
    DistillConfig dc;
    dc.rounds = cfg.distill_rounds;
    dc.local_epochs = cfg.distill_epochs;
    dc.rho = cfg.rho;
    dc.sigma_s_sq = cfg.sigma_s_sq;
    dc.batch_size = cfg.distill_batch;
    dc.lr = cfg.distill_lr;
    dc.clients_per_round = cfg.distill_sample_count;
    dc.generator_arch = mlp_regressor(dim, cfg.gen_hidden, dim);
    dc.classifier_arch = mlp_classifier(dim, cfg.cls_hidden, cfg.dataset.classes);
    dc.mechanism = cfg.mechanism;
    dc.seed = splitmix64(seed ^ stream_tag("distill"));
    return dc;
}

FederationConfig make_federation_config(const ExperimentConfig& cfg, int dim, int num_classes,
                                        uint64_t seed, int threads) {
    FederationConfig fc;
    fc.arch = mlp_classifier(dim, cfg.train_hidden, num_classes);
    fc.rounds = cfg.train_rounds;
    fc.epochs = cfg.train_epochs;
    fc.batch_size = cfg.train_batch;
    fc.lr = cfg.lr;
    fc.momentum = cfg.momentum;
    fc.weight_decay = cfg.weight_decay;
    fc.sample_count = std::min(cfg.train_sample_count, cfg.partition.num_clients);
    fc.shared_subsample = cfg.shared_subsample;
    fc.strategy = cfg.strategy;
    fc.seed = splitmix64(seed ^ stream_tag("fl"));
    fc.threads = threads;
    return fc;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg, int threads) {
    cfg.validate();
    ExperimentResult result;
    for (uint64_t seed : cfg.seeds) {
        PreparedData prep = prepare_data(cfg, seed);
        const int dim = prep.train.dim();
        const int classes = prep.train.num_classes;
        FederationConfig fc = make_federation_config(cfg, dim, classes, seed, threads);

        SeedResult sr;
        sr.seed = seed;

        // Both arms consume the same partition and the same derived streams;
        // only the shared pool differs.
        {
            std::vector<ClientState> clients = prep.clients;
            FederationRun run = run_federation(clients, nullptr, prep.eval, fc);
            sr.baseline.logs = std::move(run.logs);
        }
        {
            std::vector<LabeledDataset> client_data;
            client_data.reserve(prep.clients.size());
            for (const auto& c : prep.clients) client_data.push_back(c.data);
            const DistillConfig dc = make_distill_config(cfg, dim, seed);
            const DistillOutput distilled = run_feature_distillation(client_data, dc, threads);
            const SharedPool pool = SharedPool::from(distilled.shared);
            std::vector<ClientState> clients = prep.clients;
            FederationRun run = run_federation(clients, &pool, prep.eval, fc);
            sr.with_sharing.logs = std::move(run.logs);
        }

        double baseline_best = 0.0;
        for (const auto& log : sr.baseline.logs) baseline_best = std::max(baseline_best, log.test_acc);
        sr.target_acc = cfg.target_acc > 0.0 ? cfg.target_acc : baseline_best;
        sr.baseline.report = metrics(sr.baseline.logs, sr.target_acc);
        sr.with_sharing.report =
            metrics(sr.with_sharing.logs, sr.target_acc, sr.baseline.report.rounds_to_target);
        result.seeds.push_back(std::move(sr));
    }
    for (const auto& sr : result.seeds) {
        result.mean_best_with += sr.with_sharing.report.best_acc;
        result.mean_best_baseline += sr.baseline.report.best_acc;
    }
    result.mean_best_with /= static_cast<double>(result.seeds.size());
    result.mean_best_baseline /= static_cast<double>(result.seeds.size());
    return result;
}

nlohmann::ordered_json metrics_json(const MetricsReport& report) {
    nlohmann::ordered_json j;
    j["best_acc"] = report.best_acc;
    if (report.rounds_to_target)
        j["rounds_to_target"] = *report.rounds_to_target;
    else
        j["rounds_to_target"] = nullptr;
    if (report.speedup)
        j["speedup"] = *report.speedup;
    else
        j["speedup"] = nullptr;
    return j;
}

nlohmann::ordered_json experiment_report_json(const ExperimentResult& result) {
    nlohmann::ordered_json j;
    auto seeds = nlohmann::ordered_json::array();
    for (const auto& sr : result.seeds) {
        nlohmann::ordered_json s;
        s["seed"] = sr.seed;
        s["target_acc"] = sr.target_acc;
        s["with_sharing"] = metrics_json(sr.with_sharing.report);
        s["baseline"] = metrics_json(sr.baseline.report);
        seeds.push_back(std::move(s));
    }
    j["seeds"] = std::move(seeds);
    j["mean_best_with_sharing"] = result.mean_best_with;
    j["mean_best_baseline"] = result.mean_best_baseline;
    return j;
}

namespace {

Matrix noised_copy(const Matrix& base, double sigma_sq, RngStream& rng) {
    Matrix out = base;
    if (sigma_sq > 0.0) {
        const double sigma = std::sqrt(sigma_sq);
        for (double& v : out.data) v += rng.normal(0.0, sigma);
    }
    return out;
}

Matrix sensitive_features(const LabeledDataset& data, const ParamSet& generator, double rho) {
    Matrix out(data.size(), data.dim());
    for (int i = 0; i < data.size(); ++i) {
        const FeatureTriple t = split_features(data.features.row(i), generator, rho);
        for (int c = 0; c < data.dim(); ++c) out(i, c) = t.x_s[static_cast<size_t>(c)];
    }
    return out;
}

}  // namespace

std::vector<MiaSweepPoint> mia_noise_sweep(const ExperimentConfig& cfg,
                                           const std::vector<double>& sigma_levels,
                                           const std::vector<uint64_t>& seeds, int threads) {
    if (sigma_levels.empty()) throw ConfigError("mia sweep needs at least one noise level");
    std::vector<MiaSweepPoint> points(sigma_levels.size());
    for (size_t m = 0; m < sigma_levels.size(); ++m) points[m].sigma_sq = sigma_levels[m];

    for (uint64_t seed : seeds) {
        const PreparedData prep = prepare_data(cfg, seed);
        const int dim = prep.train.dim();

        // Distill without sharing noise; each sweep point re-noises the same
        // sensitive features at its own level.
        DistillConfig dcfg = make_distill_config(cfg, dim, seed);
        dcfg.sigma_s_sq = 0.0;
        std::vector<LabeledDataset> client_data;
        for (const auto& c : prep.clients) client_data.push_back(c.data);
        const DistillOutput distilled = run_feature_distillation(client_data, dcfg, threads);

        Matrix member_base;
        std::vector<int> member_labels;
        shared_as_batch(distilled.shared, member_base, member_labels);
        const Matrix heldout_base = sensitive_features(prep.eval, distilled.generator, cfg.rho);

        const int n_eval = std::min({heldout_base.rows, member_base.rows, 80});
        if (n_eval < 4) throw ProtocolError("mia sweep needs a larger evaluation split");

        for (size_t m = 0; m < sigma_levels.size(); ++m) {
            const double sigma_sq = sigma_levels[m];
            RngStream noise_rng =
                RngStream::derive(seed, {stream_tag("miasweep"), static_cast<uint64_t>(m)});
            const Matrix member_x = noised_copy(member_base, sigma_sq, noise_rng);

            GlobalSharedDataset pool;
            pool.dim = dim;
            pool.num_classes = prep.train.num_classes;
            pool.rho = cfg.rho;
            pool.sigma_s_sq = sigma_sq;
            pool.records.resize(static_cast<size_t>(member_x.rows));
            for (int r = 0; r < member_x.rows; ++r) {
                pool.records[static_cast<size_t>(r)].x_p.assign(member_x.row(r).begin(),
                                                                member_x.row(r).end());
                pool.records[static_cast<size_t>(r)].label = member_labels[static_cast<size_t>(r)];
            }

            // Target: the model an adversary probes, fit on the protected pool.
            const ParamSet target = train_classifier(
                member_x, member_labels, mlp_classifier(dim, cfg.train_hidden, pool.num_classes), 80,
                0.1, 32, splitmix64(seed ^ stream_tag("miatarget") ^ static_cast<uint64_t>(m)));

            // Membership is probed on the underlying clean features: did this
            // sample's record enter training? The higher the sharing noise,
            // the weaker the trace the clean sample leaves in the model.
            Matrix members(n_eval, dim), non_members(n_eval, dim);
            for (int r = 0; r < n_eval; ++r)
                for (int c = 0; c < dim; ++c) {
                    members(r, c) = member_base(r, c);
                    non_members(r, c) = heldout_base(r, c);
                }

            AttackConfig acfg;
            acfg.top_k = std::min(3, pool.num_classes);
            acfg.seed = splitmix64(seed ^ stream_tag("mia") ^ static_cast<uint64_t>(m));
            const AttackReport report =
                membership_inference(target, members, non_members, pool, acfg, &member_base);
            points[m].recalls.push_back(report.recall);
        }
    }
    for (auto& p : points) {
        for (double r : p.recalls) p.mean_recall += r;
        p.mean_recall /= static_cast<double>(p.recalls.size());
    }
    return points;
}

InversionComparison inversion_psnr_comparison(const ExperimentConfig& cfg,
                                              const std::vector<uint64_t>& seeds, int steps,
                                              double lr, int threads) {
    InversionComparison cmp;
    for (uint64_t seed : seeds) {
        const PreparedData prep = prepare_data(cfg, seed);
        const int dim = prep.train.dim();
        const int classes = prep.train.num_classes;

        std::vector<LabeledDataset> client_data;
        for (const auto& c : prep.clients) client_data.push_back(c.data);
        const DistillConfig dcfg = make_distill_config(cfg, dim, seed);
        const DistillOutput distilled = run_feature_distillation(client_data, dcfg, threads);

        Matrix shared_x;
        std::vector<int> shared_y;
        shared_as_batch(distilled.shared, shared_x, shared_y);

        const ArchSpec arch = mlp_classifier(dim, cfg.train_hidden, classes);
        const ParamSet raw_target =
            train_classifier(prep.train.features, prep.train.labels, arch, 60, 0.1, 32,
                             splitmix64(seed ^ stream_tag("rawtarget")));
        const ParamSet shared_target = train_classifier(
            shared_x, shared_y, arch, 60, 0.1, 32, splitmix64(seed ^ stream_tag("sharedtarget")));

        // class centroids of the raw training data
        Matrix centroids(classes, dim, 0.0);
        std::vector<int> counts(static_cast<size_t>(classes), 0);
        for (int i = 0; i < prep.train.size(); ++i) {
            const int y = prep.train.labels[static_cast<size_t>(i)];
            ++counts[static_cast<size_t>(y)];
            for (int c = 0; c < dim; ++c) centroids(y, c) += prep.train.features(i, c);
        }
        for (int y = 0; y < classes; ++y)
            for (int c = 0; c < dim; ++c)
                if (counts[static_cast<size_t>(y)] > 0) centroids(y, c) /= counts[static_cast<size_t>(y)];

        double raw_psnr = 0.0, shared_psnr = 0.0;
        for (int y = 0; y < classes; ++y) {
            const uint64_t inv_seed = splitmix64(seed ^ stream_tag("inv") ^ static_cast<uint64_t>(y));
            const auto inv_raw = model_inversion(raw_target, y, dim, steps, lr, inv_seed);
            const auto inv_shared = model_inversion(shared_target, y, dim, steps, lr, inv_seed);
            raw_psnr += psnr(inv_raw, centroids.row(y));
            shared_psnr += psnr(inv_shared, centroids.row(y));
        }
        cmp.psnr_raw_per_seed.push_back(raw_psnr / classes);
        cmp.psnr_shared_per_seed.push_back(shared_psnr / classes);
    }
    for (double v : cmp.psnr_raw_per_seed) cmp.mean_psnr_raw_trained += v;
    for (double v : cmp.psnr_shared_per_seed) cmp.mean_psnr_shared_trained += v;
    cmp.mean_psnr_raw_trained /= static_cast<double>(cmp.psnr_raw_per_seed.size());
    cmp.mean_psnr_shared_trained /= static_cast<double>(cmp.psnr_shared_per_seed.size());
    return cmp;
}

nlohmann::ordered_json mia_sweep_json(const std::vector<MiaSweepPoint>& points) {
    nlohmann::ordered_json j = nlohmann::ordered_json::array();
    for (const auto& p : points) {
        nlohmann::ordered_json item;
        item["sigma_sq"] = p.sigma_sq;
        item["mean_recall"] = p.mean_recall;
        item["recalls"] = p.recalls;
        j.push_back(std::move(item));
    }
    return j;
}

nlohmann::ordered_json inversion_json(const InversionComparison& cmp) {
    nlohmann::ordered_json j;
    j["mean_psnr_raw_trained"] = cmp.mean_psnr_raw_trained;
    j["mean_psnr_shared_trained"] = cmp.mean_psnr_shared_trained;
    j["psnr_raw_per_seed"] = cmp.psnr_raw_per_seed;
    j["psnr_shared_per_seed"] = cmp.psnr_shared_per_seed;
    return j;
}

int threads_from_env() {
    const char* env = std::getenv("FEDFED_THREADS");
    if (env == nullptr) return 1;
    try {
        const int n = std::stoi(env);
        return n >= 1 ? n : 1;
    } catch (const std::exception&) {
        return 1;
    }
}

}  // namespace fedfed

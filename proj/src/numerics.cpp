#include "fedfed/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "fedfed/rng.hpp"

namespace fedfed {

void ArchSpec::validate() const {
    if (layer_sizes.size() < 2) throw DomainError("arch needs at least 2 layers");
    for (int s : layer_sizes)
        if (s < 1) throw DomainError("all layer sizes must be >= 1");
}

ArchSpec mlp_classifier(int input_dim, int hidden, int num_classes) {
    ArchSpec arch;
    arch.layer_sizes = {input_dim, hidden, num_classes};
    arch.output_kind = OutputKind::SoftmaxClassifier;
    arch.validate();
    return arch;
}

ArchSpec mlp_regressor(int input_dim, int hidden, int output_dim) {
    ArchSpec arch;
    arch.layer_sizes = {input_dim, hidden, output_dim};
    arch.output_kind = OutputKind::IdentityRegressor;
    arch.validate();
    return arch;
}

void ParamSet::validate() const {
    arch.validate();
    const int layers = arch.num_layers();
    if (static_cast<int>(segments.size()) != 2 * layers)
        throw DimensionError("param set has wrong segment count for arch");
    for (int l = 0; l < layers; ++l) {
        const int in = arch.layer_sizes[static_cast<size_t>(l)];
        const int out = arch.layer_sizes[static_cast<size_t>(l) + 1];
        const Segment& w = segments[static_cast<size_t>(2 * l)];
        const Segment& b = segments[static_cast<size_t>(2 * l) + 1];
        if (w.shape != std::vector<int>{in, out} || w.count() != static_cast<size_t>(in) * out)
            throw DimensionError("weight segment shape mismatch at layer " + std::to_string(l));
        if (b.shape != std::vector<int>{out} || b.count() != static_cast<size_t>(out))
            throw DimensionError("bias segment shape mismatch at layer " + std::to_string(l));
    }
    for (const Segment& s : segments)
        for (double v : s.values)
            if (!std::isfinite(v)) throw NumericError("non-finite parameter in segment " + s.name);
}

ParamSet init_params(const ArchSpec& arch, uint64_t seed) {
    arch.validate();
    ParamSet p;
    p.arch = arch;
    const int layers = arch.num_layers();
    p.segments.reserve(static_cast<size_t>(2 * layers));
    for (int l = 0; l < layers; ++l) {
        const int in = arch.layer_sizes[static_cast<size_t>(l)];
        const int out = arch.layer_sizes[static_cast<size_t>(l) + 1];
        Segment w{"w" + std::to_string(l), {in, out}, std::vector<double>(static_cast<size_t>(in) * out)};
        const double bound = std::sqrt(6.0 / (in + out));
        RngStream rng = RngStream::derive(seed, {stream_tag("init"), static_cast<uint64_t>(l)});
        for (double& v : w.values) v = rng.uniform(-bound, bound);
        Segment b{"b" + std::to_string(l), {out}, std::vector<double>(static_cast<size_t>(out), 0.0)};
        p.segments.push_back(std::move(w));
        p.segments.push_back(std::move(b));
    }
    return p;
}

GradSet zeros_like(const ParamSet& params) {
    GradSet g;
    g.segments.reserve(params.segments.size());
    for (const Segment& s : params.segments)
        g.segments.push_back({s.name, s.shape, std::vector<double>(s.count(), 0.0)});
    return g;
}

namespace {

void check_segments(const std::vector<Segment>& a, const std::vector<Segment>& b) {
    if (a.size() != b.size()) throw DimensionError("segment count mismatch");
    for (size_t i = 0; i < a.size(); ++i)
        if (a[i].shape != b[i].shape) throw DimensionError("segment shape mismatch at " + a[i].name);
}

}  // namespace

void check_congruent(const ParamSet& a, const ParamSet& b) {
    if (!(a.arch == b.arch)) throw DimensionError("arch mismatch");
    check_segments(a.segments, b.segments);
}

void check_congruent(const ParamSet& a, const GradSet& b) { check_segments(a.segments, b.segments); }

GradSet param_diff(const ParamSet& a, const ParamSet& b) {
    check_congruent(a, b);
    GradSet out;
    out.segments.reserve(a.segments.size());
    for (size_t i = 0; i < a.segments.size(); ++i) {
        Segment s{a.segments[i].name, a.segments[i].shape, a.segments[i].values};
        for (size_t j = 0; j < s.values.size(); ++j) s.values[j] -= b.segments[i].values[j];
        out.segments.push_back(std::move(s));
    }
    return out;
}

void add_scaled(ParamSet& p, const GradSet& g, double factor) {
    check_congruent(p, g);
    for (size_t i = 0; i < p.segments.size(); ++i)
        for (size_t j = 0; j < p.segments[i].values.size(); ++j)
            p.segments[i].values[j] += factor * g.segments[i].values[j];
}

void add_scaled(GradSet& a, const GradSet& b, double factor) {
    check_segments(a.segments, b.segments);
    for (size_t i = 0; i < a.segments.size(); ++i)
        for (size_t j = 0; j < a.segments[i].values.size(); ++j)
            a.segments[i].values[j] += factor * b.segments[i].values[j];
}

void scale(GradSet& g, double factor) {
    for (Segment& s : g.segments)
        for (double& v : s.values) v *= factor;
}

double sq_l2_diff(const ParamSet& a, const ParamSet& b) {
    check_congruent(a, b);
    double acc = 0.0;
    for (size_t i = 0; i < a.segments.size(); ++i)
        for (size_t j = 0; j < a.segments[i].values.size(); ++j) {
            const double d = a.segments[i].values[j] - b.segments[i].values[j];
            acc += d * d;
        }
    return acc;
}

ParamSet weighted_param_sum(const std::vector<std::pair<const ParamSet*, double>>& entries) {
    if (entries.empty()) throw ProtocolError("weighted_param_sum needs at least one entry");
    for (const auto& [p, w] : entries) {
        if (p == nullptr) throw ProtocolError("null entry in weighted_param_sum");
        if (!std::isfinite(w)) throw NumericError("non-finite weight in weighted_param_sum");
        check_congruent(*entries.front().first, *p);
    }
    ParamSet out = *entries.front().first;
    for (Segment& s : out.segments) std::fill(s.values.begin(), s.values.end(), 0.0);
    // Fixed entry order keeps the summation bit-stable across runs.
    for (const auto& [p, w] : entries)
        for (size_t i = 0; i < out.segments.size(); ++i)
            for (size_t j = 0; j < out.segments[i].values.size(); ++j)
                out.segments[i].values[j] += w * p->segments[i].values[j];
    return out;
}

namespace {

struct ForwardCache {
    // inputs[l] is the activation fed into layer l; inputs[0] is the batch.
    std::vector<Matrix> inputs;
    std::vector<Matrix> pre_act;  // pre-activation of each layer
    Matrix output;                // post-head
};

Matrix affine(const Matrix& a, const Segment& w, const Segment& b, int in, int out) {
    Matrix z(a.rows, out);
    for (int r = 0; r < a.rows; ++r) {
        const double* arow = a.data.data() + static_cast<size_t>(r) * in;
        double* zrow = z.data.data() + static_cast<size_t>(r) * out;
        for (int c = 0; c < out; ++c) zrow[c] = b.values[static_cast<size_t>(c)];
        for (int i = 0; i < in; ++i) {
            const double ai = arow[i];
            if (ai == 0.0) continue;
            const double* wrow = w.values.data() + static_cast<size_t>(i) * out;
            for (int c = 0; c < out; ++c) zrow[c] += ai * wrow[c];
        }
    }
    return z;
}

void softmax_rows(Matrix& m) {
    for (int r = 0; r < m.rows; ++r) {
        auto row = m.row(r);
        double mx = row[0];
        for (double v : row) mx = std::max(mx, v);
        double sum = 0.0;
        for (double& v : row) {
            v = std::exp(v - mx);
            sum += v;
        }
        for (double& v : row) v /= sum;
    }
}

ForwardCache forward_cached(const ParamSet& params, const Matrix& batch) {
    params.validate();
    if (batch.cols != params.arch.input_dim())
        throw DimensionError("batch has " + std::to_string(batch.cols) + " columns, arch expects " +
                             std::to_string(params.arch.input_dim()));
    const int layers = params.arch.num_layers();
    ForwardCache cache;
    cache.inputs.reserve(static_cast<size_t>(layers));
    cache.pre_act.reserve(static_cast<size_t>(layers));
    Matrix a = batch;
    for (int l = 0; l < layers; ++l) {
        const int in = params.arch.layer_sizes[static_cast<size_t>(l)];
        const int out = params.arch.layer_sizes[static_cast<size_t>(l) + 1];
        cache.inputs.push_back(a);
        Matrix z = affine(a, params.segments[static_cast<size_t>(2 * l)],
                          params.segments[static_cast<size_t>(2 * l) + 1], in, out);
        cache.pre_act.push_back(z);
        if (l + 1 < layers) {
            for (double& v : z.data) v = v > 0.0 ? v : 0.0;  // relu
            a = std::move(z);
        } else {
            if (params.arch.output_kind == OutputKind::SoftmaxClassifier) softmax_rows(z);
            cache.output = std::move(z);
        }
    }
    return cache;
}

// Backward pass from d(loss)/d(logits) of the last layer.
GradSet backward_from_logit_grad(const ParamSet& params, const ForwardCache& cache, Matrix delta,
                                 Matrix* input_grad) {
    const int layers = params.arch.num_layers();
    GradSet grads = zeros_like(params);
    for (int l = layers - 1; l >= 0; --l) {
        const int in = params.arch.layer_sizes[static_cast<size_t>(l)];
        const int out = params.arch.layer_sizes[static_cast<size_t>(l) + 1];
        const Matrix& a = cache.inputs[static_cast<size_t>(l)];
        Segment& gw = grads.segments[static_cast<size_t>(2 * l)];
        Segment& gb = grads.segments[static_cast<size_t>(2 * l) + 1];
        for (int r = 0; r < delta.rows; ++r) {
            const double* arow = a.data.data() + static_cast<size_t>(r) * in;
            const double* drow = delta.data.data() + static_cast<size_t>(r) * out;
            for (int c = 0; c < out; ++c) gb.values[static_cast<size_t>(c)] += drow[c];
            for (int i = 0; i < in; ++i) {
                const double ai = arow[i];
                if (ai == 0.0) continue;
                double* gwrow = gw.values.data() + static_cast<size_t>(i) * out;
                for (int c = 0; c < out; ++c) gwrow[c] += ai * drow[c];
            }
        }
        if (l == 0 && input_grad == nullptr) break;
        // delta for the previous layer: (delta * W^T) masked by relu'.
        const Segment& w = params.segments[static_cast<size_t>(2 * l)];
        Matrix prev(delta.rows, in);
        for (int r = 0; r < delta.rows; ++r) {
            const double* drow = delta.data.data() + static_cast<size_t>(r) * out;
            double* prow = prev.data.data() + static_cast<size_t>(r) * in;
            for (int i = 0; i < in; ++i) {
                const double* wrow = w.values.data() + static_cast<size_t>(i) * out;
                double acc = 0.0;
                for (int c = 0; c < out; ++c) acc += drow[c] * wrow[c];
                prow[i] = acc;
            }
        }
        if (l > 0) {
            const Matrix& z = cache.pre_act[static_cast<size_t>(l) - 1];
            for (size_t i = 0; i < prev.data.size(); ++i)
                if (z.data[i] <= 0.0) prev.data[i] = 0.0;
        }
        if (l == 0 && input_grad != nullptr) {
            *input_grad = std::move(prev);
            break;
        }
        delta = std::move(prev);
    }
    return grads;
}

void check_labels(const std::vector<int>& labels, int rows, int num_out) {
    if (static_cast<int>(labels.size()) != rows)
        throw DimensionError("label count does not match batch rows");
    for (int y : labels)
        if (y < 0 || y >= num_out)
            throw DomainError("label " + std::to_string(y) + " outside [0, " +
                              std::to_string(num_out) + ")");
}

// Converts d(loss)/d(output) to d(loss)/d(logits) through the head.
Matrix head_jacobian_apply(const ParamSet& params, const Matrix& output, const Matrix& out_grad) {
    if (params.arch.output_kind == OutputKind::IdentityRegressor) return out_grad;
    // Softmax: delta_j = p_j * (g_j - sum_k g_k p_k) per row.
    Matrix delta(out_grad.rows, out_grad.cols);
    for (int r = 0; r < out_grad.rows; ++r) {
        const auto p = output.row(r);
        const auto g = out_grad.row(r);
        double dot = 0.0;
        for (int c = 0; c < out_grad.cols; ++c) dot += g[static_cast<size_t>(c)] * p[static_cast<size_t>(c)];
        for (int c = 0; c < out_grad.cols; ++c)
            delta(r, c) = p[static_cast<size_t>(c)] * (g[static_cast<size_t>(c)] - dot);
    }
    return delta;
}

LossGrad loss_and_grad_impl(const ParamSet& params, const Matrix& batch,
                            const std::vector<int>& labels, LossKind kind,
                            const ProximalTerm* prox, Matrix* input_grad) {
    ForwardCache cache = forward_cached(params, batch);
    const int n = batch.rows;
    const int out = params.arch.output_dim();
    check_labels(labels, n, out);
    if (n == 0) throw DimensionError("empty batch");

    double loss = 0.0;
    Matrix delta(n, out);  // d(loss)/d(logits)
    if (kind == LossKind::CrossEntropy) {
        if (params.arch.output_kind != OutputKind::SoftmaxClassifier)
            throw DomainError("cross-entropy requires a softmax-classifier head");
        for (int r = 0; r < n; ++r) {
            const double p = cache.output(r, labels[static_cast<size_t>(r)]);
            loss -= std::log(p);
            for (int c = 0; c < out; ++c)
                delta(r, c) = (cache.output(r, c) - (c == labels[static_cast<size_t>(r)] ? 1.0 : 0.0)) / n;
        }
        loss /= n;
    } else {
        // Squared error against the one-hot target: 1/(2n) * sum ||out - y||^2.
        Matrix out_grad(n, out);
        for (int r = 0; r < n; ++r)
            for (int c = 0; c < out; ++c) {
                const double d = cache.output(r, c) - (c == labels[static_cast<size_t>(r)] ? 1.0 : 0.0);
                loss += 0.5 * d * d;
                out_grad(r, c) = d / n;
            }
        loss /= n;
        delta = head_jacobian_apply(params, cache.output, out_grad);
    }

    LossGrad result;
    result.grads = backward_from_logit_grad(params, cache, std::move(delta), input_grad);
    result.loss = loss;

    if (prox != nullptr && prox->mu != 0.0) {
        if (prox->mu < 0.0) throw DomainError("proximal mu must be >= 0");
        if (prox->anchor == nullptr) throw ProtocolError("proximal term needs an anchor");
        check_congruent(params, *prox->anchor);
        double sq = 0.0;
        for (size_t i = 0; i < params.segments.size(); ++i)
            for (size_t j = 0; j < params.segments[i].values.size(); ++j) {
                const double d = params.segments[i].values[j] - prox->anchor->segments[i].values[j];
                sq += d * d;
                result.grads.segments[i].values[j] += prox->mu * d;
            }
        result.loss += 0.5 * prox->mu * sq;
    }
    return result;
}

}  // namespace

Matrix forward(const ParamSet& params, const Matrix& batch) {
    return forward_cached(params, batch).output;
}

LossGrad loss_and_grad(const ParamSet& params, const Matrix& batch, const std::vector<int>& labels,
                       LossKind kind, const ProximalTerm* prox) {
    return loss_and_grad_impl(params, batch, labels, kind, prox, nullptr);
}

LossGrad loss_and_grad_input(const ParamSet& params, const Matrix& batch,
                             const std::vector<int>& labels, LossKind kind, Matrix& input_grad) {
    return loss_and_grad_impl(params, batch, labels, kind, nullptr, &input_grad);
}

GradSet backprop_output_grad(const ParamSet& params, const Matrix& batch, const Matrix& output_grad,
                             Matrix* input_grad) {
    ForwardCache cache = forward_cached(params, batch);
    if (output_grad.rows != batch.rows || output_grad.cols != params.arch.output_dim())
        throw DimensionError("output gradient shape mismatch");
    Matrix delta = head_jacobian_apply(params, cache.output, output_grad);
    return backward_from_logit_grad(params, cache, std::move(delta), input_grad);
}

void sgd_step_inplace(ParamSet& params, const GradSet& grads, double lr, double momentum,
                      double weight_decay, GradSet& velocity) {
    if (!(lr >= 0.0) || !std::isfinite(lr)) throw DomainError("learning rate must be finite and >= 0");
    if (momentum < 0.0 || momentum >= 1.0) throw DomainError("momentum must be in [0, 1)");
    if (weight_decay < 0.0) throw DomainError("weight decay must be >= 0");
    check_congruent(params, grads);
    check_congruent(params, velocity);
    for (size_t i = 0; i < params.segments.size(); ++i) {
        auto& p = params.segments[i].values;
        const auto& g = grads.segments[i].values;
        auto& v = velocity.segments[i].values;
        for (size_t j = 0; j < p.size(); ++j) {
            if (!std::isfinite(g[j])) throw NumericError("non-finite gradient in sgd step");
            v[j] = momentum * v[j] + (g[j] + weight_decay * p[j]);
            p[j] -= lr * v[j];
        }
    }
}

SgdResult sgd_step(const ParamSet& params, const GradSet& grads, double lr, double momentum,
                   double weight_decay, const GradSet& velocity) {
    SgdResult out{params, velocity};
    sgd_step_inplace(out.params, grads, lr, momentum, weight_decay, out.velocity);
    return out;
}

double accuracy(const ParamSet& params, const Matrix& batch, const std::vector<int>& labels) {
    if (batch.rows == 0) throw DomainError("accuracy on empty batch");
    Matrix out = forward(params, batch);
    check_labels(labels, batch.rows, params.arch.output_dim());
    int hits = 0;
    for (int r = 0; r < out.rows; ++r) {
        int best = 0;
        for (int c = 1; c < out.cols; ++c)
            if (out(r, c) > out(r, best)) best = c;
        if (best == labels[static_cast<size_t>(r)]) ++hits;
    }
    return static_cast<double>(hits) / out.rows;
}

// ---- checkpoint io ----------------------------------------------------------

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
    if (is.gcount() != 8) throw FormatError("truncated float64 block");
    uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<uint64_t>(buf[i]) << (8 * i);
    double v;
    std::memcpy(&v, &bits, sizeof(v));
    return v;
}

}  // namespace

void save_params(const ParamSet& params, const std::string& path) {
    params.validate();
    nlohmann::ordered_json header;
    header["layers"] = params.arch.layer_sizes;
    header["activation"] = "relu";
    header["output"] =
        params.arch.output_kind == OutputKind::SoftmaxClassifier ? "softmax" : "identity";
    auto segs = nlohmann::ordered_json::array();
    for (const Segment& s : params.segments)
        segs.push_back({{"name", s.name}, {"shape", s.shape}});
    header["segments"] = segs;

    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot open " + path + " for writing");
    os << header.dump() << '\n';
    for (const Segment& s : params.segments)
        for (double v : s.values) write_f64_le(os, v);
    if (!os) throw FormatError("write failed for " + path);
}

ParamSet load_params(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open " + path);
    std::string line;
    if (!std::getline(is, line)) throw FormatError("missing checkpoint header");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("bad checkpoint header: ") + e.what());
    }
    ParamSet p;
    p.arch.layer_sizes = header.at("layers").get<std::vector<int>>();
    const std::string output = header.at("output").get<std::string>();
    if (output == "softmax")
        p.arch.output_kind = OutputKind::SoftmaxClassifier;
    else if (output == "identity")
        p.arch.output_kind = OutputKind::IdentityRegressor;
    else
        throw FormatError("unknown output kind: " + output);
    for (const auto& seg : header.at("segments")) {
        Segment s;
        s.name = seg.at("name").get<std::string>();
        s.shape = seg.at("shape").get<std::vector<int>>();
        size_t count = 1;
        for (int d : s.shape) count *= static_cast<size_t>(d);
        s.values.resize(count);
        for (double& v : s.values) v = read_f64_le(is);
        p.segments.push_back(std::move(s));
    }
    p.validate();
    return p;
}

}  // namespace fedfed

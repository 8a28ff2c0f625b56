#include "fedfed/attacks.hpp"

#include <algorithm>
#include <cmath>

#include "fedfed/rng.hpp"

namespace fedfed {

void AttackConfig::validate(int num_classes) const {
    if (top_k < 1) throw DomainError("top_k must be >= 1");
    if (top_k > num_classes) throw DomainError("top_k cannot exceed the class count");
    if (shadow_epochs < 0 || attack_epochs < 0) throw DomainError("epochs must be >= 0");
    if (inversion_steps < 0) throw DomainError("inversion steps must be >= 0");
}

// Shared by the shadow, attack, and target models.
ParamSet train_classifier(const Matrix& x, const std::vector<int>& y, const ArchSpec& arch,
                          int epochs, double lr, int batch_size, uint64_t seed) {
    ParamSet params = init_params(arch, seed);
    GradSet velocity = zeros_like(params);
    RngStream rng = RngStream::derive(seed, {stream_tag("fit")});
    std::vector<int> order(static_cast<size_t>(x.rows));
    for (int i = 0; i < x.rows; ++i) order[static_cast<size_t>(i)] = i;
    for (int epoch = 0; epoch < epochs; ++epoch) {
        rng.shuffle(order);
        for (int off = 0; off < x.rows; off += batch_size) {
            const int end = std::min(off + batch_size, x.rows);
            Matrix batch(end - off, x.cols);
            std::vector<int> labels(static_cast<size_t>(end - off));
            for (int r = off; r < end; ++r) {
                for (int c = 0; c < x.cols; ++c) batch(r - off, c) = x(order[static_cast<size_t>(r)], c);
                labels[static_cast<size_t>(r - off)] = y[static_cast<size_t>(order[static_cast<size_t>(r)])];
            }
            const LossGrad lg = loss_and_grad(params, batch, labels, LossKind::CrossEntropy);
            if (!std::isfinite(lg.loss)) throw NumericError("attack-side training diverged");
            sgd_step_inplace(params, lg.grads, lr, 0.9, 0.0, velocity);
        }
    }
    return params;
}

namespace {

// Sorted top-k confidence vectors of `model` on every row of x.
Matrix topk_confidences(const ParamSet& model, const Matrix& x, int top_k) {
    const Matrix probs = forward(model, x);
    Matrix out(x.rows, top_k);
    std::vector<double> row(static_cast<size_t>(probs.cols));
    for (int r = 0; r < probs.rows; ++r) {
        for (int c = 0; c < probs.cols; ++c) row[static_cast<size_t>(c)] = probs(r, c);
        std::sort(row.begin(), row.end(), std::greater<double>());
        for (int c = 0; c < top_k; ++c) out(r, c) = row[static_cast<size_t>(c)];
    }
    return out;
}

}  // namespace

ParamSet train_shadow(const GlobalSharedDataset& shared, const ArchSpec& arch, int epochs,
                      double lr, int batch_size, uint64_t seed) {
    if (shared.records.empty()) throw ProtocolError("shadow training needs shared records");
    Matrix x;
    std::vector<int> y;
    shared_as_batch(shared, x, y);
    return train_classifier(x, y, arch, epochs, lr, batch_size, seed);
}

AttackReport membership_inference(const ParamSet& target, const Matrix& members,
                                  const Matrix& non_members, const GlobalSharedDataset& attacker_pool,
                                  const AttackConfig& cfg, const Matrix* pool_query) {
    if (members.rows != non_members.rows)
        throw DomainError("membership evaluation must be balanced");
    if (members.rows == 0) throw DomainError("membership evaluation needs samples");
    cfg.validate(attacker_pool.num_classes);
    if (attacker_pool.records.size() < 4)
        throw ProtocolError("attacker pool too small to split");

    // Deterministic half split of the attacker's pool: in-half trains the
    // shadow model, out-half supplies non-member examples for the attack net.
    Matrix pool_x;
    std::vector<int> pool_y;
    shared_as_batch(attacker_pool, pool_x, pool_y);
    if (pool_query != nullptr &&
        (pool_query->rows != pool_x.rows || pool_query->cols != pool_x.cols))
        throw DimensionError("pool query view must match the pool row-for-row");
    const Matrix& query = pool_query != nullptr ? *pool_query : pool_x;
    std::vector<int> order(static_cast<size_t>(pool_x.rows));
    for (int i = 0; i < pool_x.rows; ++i) order[static_cast<size_t>(i)] = i;
    RngStream split_rng = RngStream::derive(cfg.seed, {stream_tag("miasplit")});
    split_rng.shuffle(order);
    const int half = pool_x.rows / 2;
    if (half == 0) throw ProtocolError("degenerate single-class attack data");

    Matrix in_x(half, pool_x.cols), out_q(pool_x.rows - half, pool_x.cols), in_q(half, pool_x.cols);
    std::vector<int> in_y(static_cast<size_t>(half));
    for (int r = 0; r < pool_x.rows; ++r) {
        const int src = order[static_cast<size_t>(r)];
        if (r < half) {
            for (int c = 0; c < pool_x.cols; ++c) {
                in_x(r, c) = pool_x(src, c);
                in_q(r, c) = query(src, c);
            }
            in_y[static_cast<size_t>(r)] = pool_y[static_cast<size_t>(src)];
        } else {
            for (int c = 0; c < pool_x.cols; ++c) out_q(r - half, c) = query(src, c);
        }
    }

    const ArchSpec shadow_arch =
        mlp_classifier(pool_x.cols, cfg.shadow_hidden, attacker_pool.num_classes);
    const ParamSet shadow = train_classifier(in_x, in_y, shadow_arch, cfg.shadow_epochs, cfg.shadow_lr,
                                           cfg.batch_size, splitmix64(cfg.seed ^ stream_tag("shadow")));

    // Attack training set: shadow confidences on its own members vs held-out
    // rows, both taken in the query view.
    const Matrix conf_in = topk_confidences(shadow, in_q, cfg.top_k);
    const Matrix conf_out = topk_confidences(shadow, out_q, cfg.top_k);
    Matrix attack_x(conf_in.rows + conf_out.rows, cfg.top_k);
    std::vector<int> attack_y(static_cast<size_t>(attack_x.rows));
    for (int r = 0; r < conf_in.rows; ++r) {
        for (int c = 0; c < cfg.top_k; ++c) attack_x(r, c) = conf_in(r, c);
        attack_y[static_cast<size_t>(r)] = 1;
    }
    for (int r = 0; r < conf_out.rows; ++r) {
        for (int c = 0; c < cfg.top_k; ++c) attack_x(conf_in.rows + r, c) = conf_out(r, c);
        attack_y[static_cast<size_t>(conf_in.rows + r)] = 0;
    }
    if (conf_in.rows == 0 || conf_out.rows == 0)
        throw ProtocolError("degenerate single-class attack data");

    const ArchSpec attack_arch = mlp_classifier(cfg.top_k, cfg.attack_hidden, 2);
    const ParamSet attack_model =
        train_classifier(attack_x, attack_y, attack_arch, cfg.attack_epochs, cfg.attack_lr,
                       cfg.batch_size, splitmix64(cfg.seed ^ stream_tag("attack")));

    // Score the target.
    const Matrix member_conf = topk_confidences(target, members, cfg.top_k);
    const Matrix nonmember_conf = topk_confidences(target, non_members, cfg.top_k);
    const Matrix member_pred = forward(attack_model, member_conf);
    const Matrix nonmember_pred = forward(attack_model, nonmember_conf);
    int tp = 0, fn = 0, fp = 0;
    for (int r = 0; r < member_pred.rows; ++r)
        (member_pred(r, 1) > member_pred(r, 0) ? tp : fn)++;
    for (int r = 0; r < nonmember_pred.rows; ++r)
        if (nonmember_pred(r, 1) > nonmember_pred(r, 0)) ++fp;

    AttackReport report;
    report.recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
    report.precision = tp + fp > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
    return report;
}

std::vector<double> model_inversion(const ParamSet& target, int target_class, int dim, int steps,
                                    double lr, uint64_t seed) {
    if (target.arch.input_dim() != dim) throw DimensionError("inversion dim mismatch");
    if (target_class < 0 || target_class >= target.arch.output_dim())
        throw DomainError("inversion class out of range");

    RngStream rng = RngStream::derive(seed, {stream_tag("invert"), static_cast<uint64_t>(target_class)});
    Matrix x(1, dim);
    for (double& v : x.data) v = rng.uniform01();

    const std::vector<int> label = {target_class};
    for (int step = 0; step < steps; ++step) {
        Matrix input_grad;
        loss_and_grad_input(target, x, label, LossKind::CrossEntropy, input_grad);
        // Ascent on log p(c|x) == descent on the cross-entropy.
        for (int c = 0; c < dim; ++c)
            x(0, c) = std::clamp(x(0, c) - lr * input_grad(0, c), 0.0, 1.0);
    }
    return x.data;
}

double psnr(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw DimensionError("psnr inputs must have equal dims");
    if (a.empty()) throw DimensionError("psnr needs non-empty inputs");
    double mse = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        mse += d * d;
    }
    mse /= static_cast<double>(a.size());
    if (mse == 0.0) return 99.0;
    return 10.0 * std::log10(1.0 / mse);
}

}  // namespace fedfed

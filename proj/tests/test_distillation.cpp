#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "fedfed/attacks.hpp"
#include "fedfed/distillation.hpp"
#include "fedfed/rng.hpp"
#include "oracle.hpp"

using namespace fedfed;

namespace {

std::vector<double> random_vector(int dim, uint64_t seed) {
    RngStream rng(seed);
    std::vector<double> v(static_cast<size_t>(dim));
    for (double& x : v) x = rng.uniform01();
    return v;
}

// d -> 2d -> d generator that computes q(x) = x exactly through the relu pair
// relu(x + c) - relu(c - x), then perturbed so gradients are generic. All
// hidden pre-activations sit near c, far from the kink, and the residual norm
// stays well inside the clip budget.
ParamSet near_identity_generator(int d, double jitter, uint64_t seed) {
    ArchSpec arch = mlp_regressor(d, 2 * d, d);
    ParamSet gen = init_params(arch, seed);
    auto& w1 = gen.segments[0].values;
    auto& b1 = gen.segments[1].values;
    auto& w2 = gen.segments[2].values;
    auto& b2 = gen.segments[3].values;
    std::fill(w1.begin(), w1.end(), 0.0);
    std::fill(w2.begin(), w2.end(), 0.0);
    std::fill(b2.begin(), b2.end(), 0.0);
    const double c = 2.0;
    for (int i = 0; i < d; ++i) {
        w1[static_cast<size_t>(i) * 2 * d + i] = 1.0;
        w1[static_cast<size_t>(i) * 2 * d + d + i] = -1.0;
        // 0.5 relu(x+c) - 0.5 relu(c-x) = x for |x| < c
        w2[static_cast<size_t>(i) * d + i] = 0.5;
        w2[static_cast<size_t>(d + i) * d + i] = -0.5;
    }
    std::fill(b1.begin(), b1.end(), c);
    RngStream rng(seed);
    for (Segment& s : gen.segments)
        for (double& v : s.values) v += rng.uniform(-jitter, jitter);
    return gen;
}

DistillConfig small_config(int dim, int classes, uint64_t seed) {
    DistillConfig cfg;
    cfg.rounds = 2;
    cfg.local_epochs = 1;
    cfg.rho = 0.4;
    cfg.sigma_s_sq = 0.0;
    cfg.batch_size = 16;
    cfg.lr = 0.05;
    cfg.clients_per_round = 2;
    cfg.generator_arch = mlp_regressor(dim, 12, dim);
    cfg.classifier_arch = mlp_classifier(dim, 12, classes);
    cfg.seed = seed;
    return cfg;
}

}  // namespace

TEST_CASE("clip_norm: scales exactly by bound/norm when active") {
    std::vector<double> z = {3.0, 4.0};  // norm 5
    const auto out = clip_norm(z, 2.5);
    CHECK(out[0] == doctest::Approx(1.5).epsilon(1e-15));
    CHECK(out[1] == doctest::Approx(2.0).epsilon(1e-15));
}

TEST_CASE("clip_norm: zero vector and inactive bound pass through") {
    const std::vector<double> zero = {0.0, 0.0, 0.0};
    CHECK(clip_norm(zero, 1.0) == zero);
    const std::vector<double> z = {0.1, 0.2};
    CHECK(clip_norm(z, 10.0) == z);
    CHECK_THROWS_AS(clip_norm(z, -1.0), DomainError);
}

TEST_CASE("clip_norm: random vectors respect the bound") {
    for (uint64_t seed = 1; seed <= 50; ++seed) {
        const auto x = random_vector(16, seed);
        const auto z = random_vector(16, seed ^ 0xff);
        const double bound = 0.3 * l2_norm(x);
        const auto out = clip_norm(z, bound);
        CHECK(l2_norm(out) <= bound * (1.0 + 1e-12));
    }
}

TEST_CASE("split_features: identity generator yields empty sensitive part") {
    ArchSpec arch;
    arch.layer_sizes = {4, 4};
    arch.output_kind = OutputKind::IdentityRegressor;
    ParamSet gen = init_params(arch, 1);
    std::fill(gen.segments[0].values.begin(), gen.segments[0].values.end(), 0.0);
    for (int i = 0; i < 4; ++i) gen.segments[0].values[static_cast<size_t>(i) * 4 + i] = 1.0;

    const auto x = random_vector(4, 3);
    const FeatureTriple t = split_features(x, gen, 0.5);
    for (double v : t.x_s) CHECK(v == 0.0);
    CHECK(t.x_r == x);
}

TEST_CASE("split_features: zero generator clips x to rho * x") {
    ArchSpec arch;
    arch.layer_sizes = {4, 4};
    arch.output_kind = OutputKind::IdentityRegressor;
    ParamSet gen = init_params(arch, 1);
    for (Segment& s : gen.segments) std::fill(s.values.begin(), s.values.end(), 0.0);

    const double rho = 0.3;
    const auto x = random_vector(4, 5);
    const FeatureTriple t = split_features(x, gen, rho);
    for (size_t i = 0; i < x.size(); ++i) {
        CHECK(t.x_s[i] == doctest::Approx(rho * x[i]).epsilon(1e-12));
        CHECK(t.x_r[i] == doctest::Approx((1.0 - rho) * x[i]).epsilon(1e-12));
    }
}

TEST_CASE("split_features: reconstruction is exact for random generators") {
    const ParamSet gen = init_params(mlp_regressor(8, 6, 8), 17);
    for (uint64_t seed = 1; seed <= 30; ++seed) {
        const auto x = random_vector(8, seed);
        const FeatureTriple t = split_features(x, gen, 0.35);
        for (size_t i = 0; i < x.size(); ++i)
            CHECK(std::abs(t.x_r[i] + t.x_s[i] - t.x[i]) < 1e-12);
        CHECK(l2_norm(t.x_s) <= 0.35 * l2_norm(x) * (1.0 + 1e-9));
    }
}

TEST_CASE("distill_step: lr = 0 changes nothing") {
    const int d = 6;
    ParamSet gen = init_params(mlp_regressor(d, 8, d), 2);
    ParamSet cls = init_params(mlp_classifier(d, 8, 3), 3);
    const ParamSet gen0 = gen, cls0 = cls;
    Matrix batch(2, d);
    for (double& v : batch.data) v = 0.4;
    distill_step(gen, cls, batch, {0, 2}, 0.4, 0.0);
    for (size_t i = 0; i < gen.segments.size(); ++i)
        CHECK(gen.segments[i].values == gen0.segments[i].values);
    for (size_t i = 0; i < cls.segments.size(); ++i)
        CHECK(cls.segments[i].values == cls0.segments[i].values);
}

TEST_CASE("distill_step: loss drops on separable two-class blobs") {
    const LabeledDataset data = synthesize_blobs(2, 6, 40, 0.05, 23);
    ParamSet gen = init_params(mlp_regressor(6, 10, 6), 4);
    ParamSet cls = init_params(mlp_classifier(6, 10, 2), 5);
    const double first = distill_loss_and_grads(gen, cls, data.features, data.labels, 0.6).loss;
    double last = first;
    for (int s = 0; s < 200; ++s)
        last = distill_step(gen, cls, data.features, data.labels, 0.6, 0.1);
    CHECK(last < first);
}

TEST_CASE("distill gradients match finite differences off the clip boundary") {
    const int d = 6;
    for (uint64_t seed = 1; seed <= 5; ++seed) {
        RngStream rng(seed);
        Matrix batch(3, d);
        for (double& v : batch.data) v = rng.uniform(0.2, 0.9);
        std::vector<int> labels = {0, 1, 2};

        const ParamSet gen = near_identity_generator(d, 0.01, splitmix64(seed));
        const ParamSet cls = init_params(mlp_classifier(d, 8, 3), splitmix64(seed ^ 0xbeef));

        // The oracle needs smoothness: every sample must sit strictly inside
        // the clip region and away from relu kinks.
        const double rho = 0.5;
        bool inactive = true;
        for (int r = 0; r < batch.rows; ++r) {
            const FeatureTriple t = split_features(batch.row(r), gen, rho);
            if (l2_norm(t.x_s) > 0.9 * rho * l2_norm(t.x)) inactive = false;
        }
        REQUIRE(inactive);

        const DistillGrads analytic = distill_loss_and_grads(gen, cls, batch, labels, rho);
        const GradSet fd_gen = testutil::finite_diff_grad(gen, [&](const ParamSet& g) {
            return distill_loss_and_grads(g, cls, batch, labels, rho).loss;
        });
        const GradSet fd_cls = testutil::finite_diff_grad(cls, [&](const ParamSet& c) {
            return distill_loss_and_grads(gen, c, batch, labels, rho).loss;
        });
        CHECK(testutil::max_grad_rel_err(analytic.generator, fd_gen) < 1e-4);
        CHECK(testutil::max_grad_rel_err(analytic.classifier, fd_cls) < 1e-4);
    }
}

TEST_CASE("run_feature_distillation: lr = 0 keeps the seeded initialization") {
    const LabeledDataset data = synthesize_blobs(3, 5, 8, 0.2, 31);
    DistillConfig cfg = small_config(5, 3, 41);
    cfg.lr = 0.0;
    cfg.rounds = 1;
    cfg.clients_per_round = 1;
    const DistillOutput out = run_feature_distillation({data}, cfg);
    const ParamSet expected = init_params(cfg.generator_arch, splitmix64(cfg.seed ^ stream_tag("gen")));
    for (size_t i = 0; i < expected.segments.size(); ++i)
        CHECK(out.generator.segments[i].values == expected.segments[i].values);
}

TEST_CASE("run_feature_distillation: record accounting and noiseless bound") {
    std::vector<LabeledDataset> clients;
    for (int k = 0; k < 3; ++k) {
        const int size = 4 + k;  // 4, 5, 6
        LabeledDataset d = synthesize_blobs(2, 5, 8, 0.2, 100 + static_cast<uint64_t>(k));
        std::vector<int> idx(static_cast<size_t>(size));
        for (int i = 0; i < size; ++i) idx[static_cast<size_t>(i)] = i;
        clients.push_back(take_subset(d, idx));
    }
    DistillConfig cfg = small_config(5, 2, 51);
    const DistillOutput out = run_feature_distillation(clients, cfg);
    CHECK(out.shared.records.size() == 15);

    // sigma^2 = 0: x_p = x_s, so the exported records obey the clip bound.
    size_t rec = 0;
    for (int k = 0; k < 3; ++k)
        for (int i = 0; i < clients[static_cast<size_t>(k)].size(); ++i, ++rec) {
            const auto& record = out.shared.records[rec];
            CHECK(record.source_client == k);
            CHECK(l2_norm(record.x_p) <=
                  cfg.rho * l2_norm(clients[static_cast<size_t>(k)].features.row(i)) * (1.0 + 1e-9));
            const FeatureTriple t =
                split_features(clients[static_cast<size_t>(k)].features.row(i), out.generator, cfg.rho);
            CHECK(record.x_p == t.x_s);
        }
}

TEST_CASE("run_feature_distillation: deterministic and scheduling-independent") {
    std::vector<LabeledDataset> clients;
    for (int k = 0; k < 4; ++k)
        clients.push_back(synthesize_blobs(3, 5, 6, 0.2, 200 + static_cast<uint64_t>(k)));
    DistillConfig cfg = small_config(5, 3, 61);
    cfg.sigma_s_sq = 0.15;
    cfg.clients_per_round = 3;
    const DistillOutput serial = run_feature_distillation(clients, cfg, 1);
    const DistillOutput parallel = run_feature_distillation(clients, cfg, 3);
    REQUIRE(serial.shared.records.size() == parallel.shared.records.size());
    for (size_t i = 0; i < serial.shared.records.size(); ++i) {
        CHECK(serial.shared.records[i].x_p == parallel.shared.records[i].x_p);
        CHECK(serial.shared.records[i].label == parallel.shared.records[i].label);
    }
}

TEST_CASE("sharing mechanism matches the configured noise variance") {
    DistillConfig cfg = small_config(5, 3, 1);
    cfg.sigma_s_sq = 0.15;
    const NoiseMechanism gauss = cfg.sharing_mechanism();
    CHECK(gauss.kind == NoiseMechanism::Kind::Gaussian);
    CHECK(gauss.variance() == doctest::Approx(0.15).epsilon(1e-15));

    cfg.mechanism = NoiseMechanism::Kind::Laplace;
    const NoiseMechanism lap = cfg.sharing_mechanism();
    CHECK(lap.kind == NoiseMechanism::Kind::Laplace);
    CHECK(lap.variance() == doctest::Approx(0.15).epsilon(1e-12));
}

TEST_CASE("laplace sharing produces a deterministic, differently-noised export") {
    const LabeledDataset data = synthesize_blobs(3, 5, 8, 0.2, 91);
    DistillConfig cfg = small_config(5, 3, 92);
    cfg.sigma_s_sq = 0.15;
    cfg.clients_per_round = 1;
    const DistillOutput gauss = run_feature_distillation({data}, cfg);
    cfg.mechanism = NoiseMechanism::Kind::Laplace;
    const DistillOutput lap_a = run_feature_distillation({data}, cfg);
    const DistillOutput lap_b = run_feature_distillation({data}, cfg);
    CHECK(lap_a.shared.records[0].x_p == lap_b.shared.records[0].x_p);
    CHECK(gauss.shared.records[0].x_p != lap_a.shared.records[0].x_p);
    CHECK(lap_a.shared.mechanism == NoiseMechanism::Kind::Laplace);
}

TEST_CASE("utility ordering: sensitive features carry the labels, the residual loses them") {
    // 10-class blobs with heavy overlap and a narrow generator bottleneck;
    // 5-seed means. The sensitive split must stay within 10 points of raw
    // accuracy while the residual-trained classifier falls strictly below it.
    const int d = 32, classes = 10;
    const double rho = 0.75;
    double acc_raw = 0.0, acc_xs = 0.0, acc_xr = 0.0;
    const int n_seeds = 5;
    for (uint64_t seed = 1; seed <= n_seeds; ++seed) {
        const LabeledDataset data = synthesize_blobs(classes, d, 50, 0.35, 3000 + seed);
        const auto [train_idx, eval_idx] = stratified_split(data, 0.2, 77 + seed);
        const LabeledDataset train = take_subset(data, train_idx);
        const LabeledDataset eval = take_subset(data, eval_idx);

        PartitionSpec pspec;
        pspec.num_clients = 10;
        pspec.alpha = 0.1;
        pspec.seed = 500 + seed;
        std::vector<LabeledDataset> clients;
        for (const auto& idx : partition(train, pspec).assignments)
            clients.push_back(take_subset(train, idx));

        DistillConfig cfg;
        cfg.rounds = 30;
        cfg.rho = rho;
        cfg.sigma_s_sq = 0.0;
        cfg.lr = 0.05;
        cfg.clients_per_round = 5;
        cfg.generator_arch = mlp_regressor(d, 6, d);
        cfg.classifier_arch = mlp_classifier(d, 32, classes);
        cfg.seed = 9000 + seed;
        const DistillOutput out = run_feature_distillation(clients, cfg, 2);

        auto split_all = [&](const LabeledDataset& src, Matrix& xs, Matrix& xr) {
            xs = Matrix(src.size(), d);
            xr = Matrix(src.size(), d);
            for (int i = 0; i < src.size(); ++i) {
                const FeatureTriple t = split_features(src.features.row(i), out.generator, rho);
                for (int c = 0; c < d; ++c) {
                    xs(i, c) = t.x_s[static_cast<size_t>(c)];
                    xr(i, c) = t.x_r[static_cast<size_t>(c)];
                }
            }
        };
        Matrix xs, xr, e_xs, e_xr;
        split_all(train, xs, xr);
        split_all(eval, e_xs, e_xr);

        const ArchSpec arch = mlp_classifier(d, 32, classes);
        auto fit_acc = [&](const Matrix& X, const Matrix& eX) {
            const ParamSet m = train_classifier(X, train.labels, arch, 60, 0.05, 32, 777 + seed);
            return accuracy(m, eX, eval.labels);
        };
        acc_raw += fit_acc(train.features, eval.features);
        acc_xs += fit_acc(xs, e_xs);
        acc_xr += fit_acc(xr, e_xr);
    }
    acc_raw /= n_seeds;
    acc_xs /= n_seeds;
    acc_xr /= n_seeds;
    CHECK(std::abs(acc_xs - acc_raw) <= 0.10);
    CHECK(acc_xr < acc_xs);
}

TEST_CASE("shared dataset file round trips bit-exactly") {
    const LabeledDataset data = synthesize_blobs(3, 5, 6, 0.2, 71);
    DistillConfig cfg = small_config(5, 3, 81);
    cfg.sigma_s_sq = 0.15;
    cfg.clients_per_round = 1;
    const DistillOutput out = run_feature_distillation({data}, cfg);

    const std::string path = (std::filesystem::temp_directory_path() / "fedfed_shared_test.ffd").string();
    save_shared(out.shared, path);
    const GlobalSharedDataset loaded = load_shared(path);
    CHECK(loaded.dim == out.shared.dim);
    CHECK(loaded.num_classes == out.shared.num_classes);
    CHECK(loaded.rho == out.shared.rho);
    CHECK(loaded.sigma_s_sq == out.shared.sigma_s_sq);
    REQUIRE(loaded.records.size() == out.shared.records.size());
    for (size_t i = 0; i < loaded.records.size(); ++i) {
        CHECK(loaded.records[i].x_p == out.shared.records[i].x_p);
        CHECK(loaded.records[i].label == out.shared.records[i].label);
        CHECK(loaded.records[i].source_client == out.shared.records[i].source_client);
    }
    std::filesystem::remove(path);
}

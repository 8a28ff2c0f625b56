#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "fedfed/datasets.hpp"
#include "fedfed/numerics.hpp"
#include "fedfed/rng.hpp"

using namespace fedfed;

namespace {

void check_disjoint_cover(const PartitionResult& parts, int n) {
    std::vector<int> seen(static_cast<size_t>(n), 0);
    for (const auto& client : parts.assignments)
        for (int idx : client) {
            REQUIRE(idx >= 0);
            REQUIRE(idx < n);
            ++seen[static_cast<size_t>(idx)];
        }
    for (int count : seen) CHECK(count == 1);
}

double mean_client_entropy(const LabeledDataset& data, const PartitionResult& parts) {
    const auto hist = partition_histogram(data, parts);
    double total = 0.0;
    int counted = 0;
    for (const auto& h : hist) {
        int n = 0;
        for (int c : h) n += c;
        if (n == 0) continue;
        double ent = 0.0;
        for (int c : h)
            if (c > 0) {
                const double p = static_cast<double>(c) / n;
                ent -= p * std::log(p);
            }
        total += ent;
        ++counted;
    }
    return total / counted;
}

}  // namespace

TEST_CASE("rescale: affine map to the unit interval") {
    Matrix m(3, 1);
    m(0, 0) = 0.0;
    m(1, 0) = 5.0;
    m(2, 0) = 10.0;
    const Matrix out = rescale_unit_interval(m);
    CHECK(out(0, 0) == 0.0);
    CHECK(out(1, 0) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(out(2, 0) == 1.0);
}

TEST_CASE("rescale: constant columns map to zero") {
    Matrix m(4, 2, 7.0);
    for (int r = 0; r < 4; ++r) m(r, 1) = r;  // one varying column
    const Matrix out = rescale_unit_interval(m);
    for (int r = 0; r < 4; ++r) CHECK(out(r, 0) == 0.0);
}

TEST_CASE("rescale: random matrix hits 0 and 1 per varying column") {
    RngStream rng(5);
    Matrix m(20, 6);
    for (double& v : m.data) v = rng.uniform(-3.0, 9.0);
    const Matrix out = rescale_unit_interval(m);
    for (int c = 0; c < out.cols; ++c) {
        double lo = 1e300, hi = -1e300;
        for (int r = 0; r < out.rows; ++r) {
            lo = std::min(lo, out(r, c));
            hi = std::max(hi, out(r, c));
        }
        CHECK(lo == 0.0);
        CHECK(hi == 1.0);
    }
}

TEST_CASE("rescale: empty input raises a domain error") {
    CHECK_THROWS_AS(rescale_unit_interval(Matrix()), DomainError);
}

TEST_CASE("partition: disjoint cover holds for every method and seed") {
    const LabeledDataset data = synthesize_blobs(10, 8, 30, 0.2, 99);
    for (auto method : {PartitionSpec::Method::Lda, PartitionSpec::Method::LabelsPerClient,
                        PartitionSpec::Method::Subset}) {
        for (uint64_t seed = 1; seed <= 20; ++seed) {
            PartitionSpec spec;
            spec.method = method;
            spec.alpha = 0.1;
            spec.labels_per_client = 3;
            spec.dominant_fraction = 0.6;
            spec.num_clients = 7;
            spec.seed = seed;
            check_disjoint_cover(partition(data, spec), data.size());
        }
    }
}

TEST_CASE("partition: labels-per-client gives exactly k distinct labels") {
    const LabeledDataset data = synthesize_blobs(10, 8, 40, 0.2, 7);
    PartitionSpec spec;
    spec.method = PartitionSpec::Method::LabelsPerClient;
    spec.labels_per_client = 2;
    spec.num_clients = 10;
    spec.seed = 3;
    const PartitionResult parts = partition(data, spec);
    for (const auto& client : parts.assignments) {
        std::set<int> labels;
        for (int idx : client) labels.insert(data.labels[static_cast<size_t>(idx)]);
        CHECK(labels.size() == 2);
    }
}

TEST_CASE("partition: high-concentration lda is near-uniform") {
    const LabeledDataset data = synthesize_blobs(4, 6, 100, 0.2, 11);
    for (uint64_t seed = 1; seed <= 10; ++seed) {
        PartitionSpec spec;
        spec.method = PartitionSpec::Method::Lda;
        spec.alpha = 1e6;
        spec.num_clients = 4;
        spec.seed = seed;
        const auto hist = partition_histogram(data, partition(data, spec));
        for (const auto& h : hist) {
            int n = 0;
            for (int c : h) n += c;
            for (int c : h)
                CHECK(std::abs(static_cast<double>(c) / n - 0.25) < 0.05);
        }
    }
}

TEST_CASE("partition: identical spec gives identical assignments") {
    const LabeledDataset data = synthesize_blobs(6, 5, 25, 0.2, 21);
    PartitionSpec spec;
    spec.method = PartitionSpec::Method::Lda;
    spec.alpha = 0.2;
    spec.num_clients = 5;
    spec.seed = 77;
    const PartitionResult a = partition(data, spec);
    const PartitionResult b = partition(data, spec);
    CHECK(a.assignments == b.assignments);
}

TEST_CASE("partition: lda entropy grows with alpha") {
    const LabeledDataset data = synthesize_blobs(10, 6, 50, 0.2, 31);
    double low = 0.0, high = 0.0;
    for (uint64_t seed = 1; seed <= 10; ++seed) {
        PartitionSpec spec;
        spec.method = PartitionSpec::Method::Lda;
        spec.num_clients = 10;
        spec.seed = seed;
        spec.alpha = 0.05;
        low += mean_client_entropy(data, partition(data, spec));
        spec.alpha = 100.0;
        high += mean_client_entropy(data, partition(data, spec));
    }
    CHECK(low / 10.0 < high / 10.0);
}

TEST_CASE("partition: subset dominant class meets its floor") {
    const LabeledDataset data = synthesize_blobs(5, 6, 60, 0.2, 41);
    PartitionSpec spec;
    spec.method = PartitionSpec::Method::Subset;
    spec.dominant_fraction = 0.7;
    spec.num_clients = 8;
    spec.seed = 9;
    const PartitionResult parts = partition(data, spec);
    const auto hist = partition_histogram(data, parts);
    for (int k = 0; k < spec.num_clients; ++k) {
        const int quota = static_cast<int>(parts.assignments[static_cast<size_t>(k)].size());
        const int dominant = hist[static_cast<size_t>(k)][static_cast<size_t>(k % 5)];
        CHECK(dominant >= spec.dominant_fraction * quota - 1.0);
    }
}

TEST_CASE("partition: error paths") {
    const LabeledDataset data = synthesize_blobs(3, 4, 2, 0.2, 1);  // n = 6
    PartitionSpec spec;
    spec.num_clients = 7;
    CHECK_THROWS_AS(partition(data, spec), InfeasibleError);

    spec.num_clients = 2;
    spec.method = PartitionSpec::Method::LabelsPerClient;
    spec.labels_per_client = 4;  // > C
    CHECK_THROWS_AS(partition(data, spec), DomainError);
}

TEST_CASE("blobs: counts, label balance, determinism") {
    const LabeledDataset a = synthesize_blobs(2, 3, 5, 0.1, 13);
    CHECK(a.size() == 10);
    int zeros = 0;
    for (int y : a.labels) zeros += y == 0 ? 1 : 0;
    CHECK(zeros == 5);

    const LabeledDataset b = synthesize_blobs(2, 3, 5, 0.1, 13);
    CHECK(a.features.data == b.features.data);
    CHECK(a.labels == b.labels);
}

TEST_CASE("blobs: tiny spread is linearly separable") {
    const LabeledDataset data = synthesize_blobs(4, 6, 20, 1e-6, 17);
    ParamSet params = init_params(mlp_classifier(6, 8, 4), 1);
    GradSet velocity = zeros_like(params);
    for (int step = 0; step < 300; ++step) {
        const LossGrad lg = loss_and_grad(params, data.features, data.labels, LossKind::CrossEntropy);
        sgd_step_inplace(params, lg.grads, 0.5, 0.9, 0.0, velocity);
    }
    CHECK(accuracy(params, data.features, data.labels) == 1.0);
}

namespace {

std::string write_idx_fixture(bool truncate_images) {
    const auto dir = std::filesystem::temp_directory_path();
    const std::string img_path = (dir / "fedfed_test_images.idx").string();
    const std::string lab_path = (dir / "fedfed_test_labels.idx").string();
    // two 2x2 images
    const unsigned char images[] = {
        0x00, 0x00, 0x08, 0x03,              // magic
        0x00, 0x00, 0x00, 0x02,              // count
        0x00, 0x00, 0x00, 0x02,              // rows
        0x00, 0x00, 0x00, 0x02,              // cols
        0,    51,   102,  153,               // image 0
        204,  255,  0,    255,               // image 1
    };
    const unsigned char labels[] = {
        0x00, 0x00, 0x08, 0x01,  // magic
        0x00, 0x00, 0x00, 0x02,  // count
        1,    0,
    };
    std::ofstream img(img_path, std::ios::binary);
    img.write(reinterpret_cast<const char*>(images),
              static_cast<std::streamsize>(sizeof(images) - (truncate_images ? 3 : 0)));
    img.close();
    std::ofstream lab(lab_path, std::ios::binary);
    lab.write(reinterpret_cast<const char*>(labels), sizeof(labels));
    lab.close();
    return img_path;
}

}  // namespace

TEST_CASE("idx: hand-built fixture parses with exact pixel values") {
    const std::string img_path = write_idx_fixture(false);
    const std::string lab_path =
        (std::filesystem::temp_directory_path() / "fedfed_test_labels.idx").string();
    const LabeledDataset data = load_idx(img_path, lab_path);
    CHECK(data.size() == 2);
    CHECK(data.dim() == 4);
    CHECK(data.features(0, 0) == 0.0);
    CHECK(data.features(0, 1) == doctest::Approx(51.0 / 255.0).epsilon(1e-15));
    CHECK(data.features(1, 1) == 1.0);  // pixel 255
    CHECK(data.features(1, 3) == 1.0);
    CHECK(data.labels == std::vector<int>{1, 0});
}

TEST_CASE("idx: truncated file raises a format error") {
    const std::string img_path = write_idx_fixture(true);
    const std::string lab_path =
        (std::filesystem::temp_directory_path() / "fedfed_test_labels.idx").string();
    CHECK_THROWS_AS(load_idx(img_path, lab_path), FormatError);
}

TEST_CASE("idx: bad magic raises a format error") {
    const auto dir = std::filesystem::temp_directory_path();
    const std::string path = (dir / "fedfed_bad_magic.idx").string();
    const unsigned char bytes[] = {0xde, 0xad, 0xbe, 0xef, 0, 0, 0, 0};
    std::ofstream os(path, std::ios::binary);
    os.write(reinterpret_cast<const char*>(bytes), sizeof(bytes));
    os.close();
    CHECK_THROWS_AS(load_idx(path, path), FormatError);
}

TEST_CASE("csv: header-checked ingestion with rescale") {
    const auto path = (std::filesystem::temp_directory_path() / "fedfed_test.csv").string();
    {
        std::ofstream os(path);
        os << "f0,f1,label\n0,10,0\n5,20,1\n10,30,1\n";
    }
    const LabeledDataset data = load_csv(path);
    CHECK(data.size() == 3);
    CHECK(data.num_classes == 2);
    CHECK(data.features(1, 0) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(data.features(2, 1) == 1.0);
    std::filesystem::remove(path);
}

TEST_CASE("stratified split keeps classes on both sides") {
    const LabeledDataset data = synthesize_blobs(5, 4, 20, 0.2, 3);
    const auto [kept, held] = stratified_split(data, 0.2, 9);
    CHECK(kept.size() + held.size() == static_cast<size_t>(data.size()));
    const LabeledDataset eval = take_subset(data, held);
    std::set<int> classes(eval.labels.begin(), eval.labels.end());
    CHECK(classes.size() == 5);
}

#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "fedfed/common.hpp"

namespace fedfed {

struct LabeledDataset {
    Matrix features;          // n x d, every value in [0, 1]
    std::vector<int> labels;  // in [0, num_classes)
    int num_classes = 0;

    int size() const { return features.rows; }
    int dim() const { return features.cols; }
    void validate() const;
};

struct PartitionSpec {
    enum class Method { Lda, LabelsPerClient, Subset };

    Method method = Method::Lda;
    double alpha = 0.1;               // Lda concentration
    int labels_per_client = 2;        // LabelsPerClient k
    double dominant_fraction = 0.5;   // Subset, in (1/C, 1]
    int num_clients = 10;
    uint64_t seed = 1;

    void validate(int num_classes) const;
};

struct PartitionResult {
    std::vector<std::vector<int>> assignments;  // disjoint, union = {0..n-1}
};

// Per-column affine map min->0, max->1; constant columns map to 0.
Matrix rescale_unit_interval(const Matrix& raw);

PartitionResult partition(const LabeledDataset& data, const PartitionSpec& spec);

// Gaussian class blobs around seeded centers in [0.2, 0.8]^dim, rescaled to
// the unit interval. Samples are ordered class-major; n = num_classes * per_class.
LabeledDataset synthesize_blobs(int num_classes, int dim, int per_class, double spread,
                                uint64_t seed);

// IDX image/label pair (magic 0x00000803 / 0x00000801, big-endian dims);
// pixels are divided by 255.
LabeledDataset load_idx(const std::string& images_path, const std::string& labels_path);

// CSV with header row "f0,...,f{d-1},label". Features are rescaled to [0,1].
LabeledDataset load_csv(const std::string& path);

LabeledDataset take_subset(const LabeledDataset& data, const std::vector<int>& indices);

// Seeded stratified split; returns (kept, held_out) index lists where the
// held-out side receives ~fraction of each class.
std::pair<std::vector<int>, std::vector<int>> stratified_split(const LabeledDataset& data,
                                                               double fraction, uint64_t seed);

// Per-client class histogram, used by the partition report.
std::vector<std::vector<int>> partition_histogram(const LabeledDataset& data,
                                                  const PartitionResult& result);

}  // namespace fedfed

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fedfed/common.hpp"
#include "fedfed/datasets.hpp"
#include "fedfed/numerics.hpp"
#include "fedfed/privacy.hpp"

namespace fedfed {

// Federated feature distillation: train a generator q(.;theta) and auxiliary
// classifiers so that the residual x_s = clip(x - q(x)) keeps the label
// information under a norm budget rho*||x||, while x_r = x - x_s keeps the
// rest of the data. Afterwards every client exports x_p = x_s + noise.

struct DistillConfig {
    int rounds = 15;           // T_d
    int local_epochs = 1;      // E_d
    double rho = 0.5;          // norm budget, in (0, 1)
    double sigma_s_sq = 0.15;  // sharing noise variance
    int batch_size = 64;
    double lr = 0.01;
    int clients_per_round = 5;  // |C_t|
    ArchSpec generator_arch;    // d -> h -> d, identity head
    ArchSpec classifier_arch;   // d -> h -> C, softmax head
    NoiseMechanism::Kind mechanism = NoiseMechanism::Kind::Gaussian;
    uint64_t seed = 1;

    void validate() const;
    // The Laplace scale matching a target variance sigma^2 is sigma/sqrt(2).
    NoiseMechanism sharing_mechanism() const;
};

struct FeatureTriple {
    std::vector<double> x;
    std::vector<double> x_s;  // clipped performance-sensitive part
    std::vector<double> x_r;  // x - x_s, reconstructs exactly
};

struct SharedRecord {
    std::vector<double> x_p;  // x_s + noise
    int label = 0;
    int source_client = 0;
};

struct GlobalSharedDataset {
    std::vector<SharedRecord> records;
    int dim = 0;
    int num_classes = 0;
    double rho = 0.0;
    double sigma_s_sq = 0.0;
    NoiseMechanism::Kind mechanism = NoiseMechanism::Kind::Gaussian;
};

// z if ||z|| <= bound, else z * bound / ||z||.
std::vector<double> clip_norm(std::span<const double> z, double bound);

FeatureTriple split_features(std::span<const double> x, const ParamSet& generator, double rho);

// Joint gradients of the cross-entropy of `classifier` applied to the clipped
// residual features, flowing into both models. Where the clip is active its
// scale is treated as a constant of the step.
struct DistillGrads {
    double loss = 0.0;
    GradSet generator;
    GradSet classifier;
};
DistillGrads distill_loss_and_grads(const ParamSet& generator, const ParamSet& classifier,
                                    const Matrix& batch, const std::vector<int>& labels, double rho);

// One plain SGD step on both models using the joint gradients above.
double distill_step(ParamSet& generator, ParamSet& classifier, const Matrix& batch,
                    const std::vector<int>& labels, double rho, double lr);

struct DistillOutput {
    ParamSet generator;
    ParamSet classifier;
    GlobalSharedDataset shared;
};

DistillOutput run_feature_distillation(const std::vector<LabeledDataset>& clients,
                                       const DistillConfig& cfg, int threads = 1);

// Shared-dataset file: one-line JSON header (d, C, rho, sigma_s_sq, mechanism,
// count), then float64 features, int32 labels, int32 source ids, all
// little-endian.
void save_shared(const GlobalSharedDataset& shared, const std::string& path);
GlobalSharedDataset load_shared(const std::string& path);

// Flattens the records into matrix/labels form for training consumers.
void shared_as_batch(const GlobalSharedDataset& shared, Matrix& features, std::vector<int>& labels);

}  // namespace fedfed

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fedfed/common.hpp"
#include "fedfed/distillation.hpp"
#include "fedfed/numerics.hpp"

namespace fedfed {

// Empirical privacy probes: shadow-model membership inference and white-box
// gradient-ascent model inversion scored by PSNR.

struct AttackConfig {
    int top_k = 3;               // confidence-vector truncation
    int shadow_hidden = 32;
    int shadow_epochs = 40;
    double shadow_lr = 0.05;
    int attack_hidden = 16;
    int attack_epochs = 80;
    double attack_lr = 0.05;
    int batch_size = 32;
    int inversion_steps = 200;
    double inversion_lr = 0.1;
    uint64_t seed = 1;

    void validate(int num_classes) const;  // top_k <= C
};

struct AttackReport {
    double recall = 0.0;
    double precision = 0.0;
    std::vector<double> psnr_values;
};

// Plain seeded minibatch-SGD classifier fit (momentum 0.9, no weight decay);
// epochs == 0 returns the initialization.
ParamSet train_classifier(const Matrix& x, const std::vector<int>& y, const ArchSpec& arch,
                          int epochs, double lr, int batch_size, uint64_t seed);

// Classifier fit to the protected shared records. epochs == 0 returns the
// seeded initialization.
ParamSet train_shadow(const GlobalSharedDataset& shared, const ArchSpec& arch, int epochs,
                      double lr, int batch_size, uint64_t seed);

// Shokri-style pipeline: split the attacker pool in half, fit a shadow model
// on one half, label its sorted top-k confidences member/non-member, fit a
// small binary attack net on them, then score the target's confidences on the
// balanced member/non-member evaluation sets.
//
// When the evaluation queries live in a different view than the records the
// models train on (clean features probed against a noise-trained model),
// `pool_query` supplies that view row-for-row with the pool: the shadow still
// trains on the pool records, but the attack net is fit on shadow confidences
// over the query view, keeping the attack calibrated for the queries it will
// judge. Null means the pool records themselves are the queries.
AttackReport membership_inference(const ParamSet& target, const Matrix& members,
                                  const Matrix& non_members, const GlobalSharedDataset& attacker_pool,
                                  const AttackConfig& cfg, const Matrix* pool_query = nullptr);

// Gradient ascent on log p(class | x) from a seeded uniform start, re-projected
// to the unit box each step.
std::vector<double> model_inversion(const ParamSet& target, int target_class, int dim, int steps,
                                    double lr, uint64_t seed);

// 10 log10(1 / MSE) for unit-range signals; MSE == 0 reports the 99.0 cap.
double psnr(std::span<const double> a, std::span<const double> b);

}  // namespace fedfed

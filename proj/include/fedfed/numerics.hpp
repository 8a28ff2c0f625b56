#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fedfed/common.hpp"

namespace fedfed {

enum class Activation { Relu };
enum class OutputKind { SoftmaxClassifier, IdentityRegressor };

// Fully-connected network shape: layer_sizes = {d, h1, ..., out}.
struct ArchSpec {
    std::vector<int> layer_sizes;
    Activation activation = Activation::Relu;
    OutputKind output_kind = OutputKind::SoftmaxClassifier;

    int input_dim() const { return layer_sizes.front(); }
    int output_dim() const { return layer_sizes.back(); }
    int num_layers() const { return static_cast<int>(layer_sizes.size()) - 1; }
    void validate() const;

    bool operator==(const ArchSpec&) const = default;
};

ArchSpec mlp_classifier(int input_dim, int hidden, int num_classes);
ArchSpec mlp_regressor(int input_dim, int hidden, int output_dim);

// One named tensor of a model; weight "w<l>" has shape {in, out}, bias "b<l>"
// has shape {out}.
struct Segment {
    std::string name;
    std::vector<int> shape;
    std::vector<double> values;

    size_t count() const { return values.size(); }
};

struct ParamSet {
    ArchSpec arch;
    std::vector<Segment> segments;

    void validate() const;  // segment shapes must match arch, values finite
};

// Shape-congruent companion of a ParamSet (gradients, velocities, control
// variates, parameter deltas).
struct GradSet {
    std::vector<Segment> segments;
};

ParamSet init_params(const ArchSpec& arch, uint64_t seed);
GradSet zeros_like(const ParamSet& params);

// ---- parameter algebra -----------------------------------------------------
// All binary ops require shape congruence and throw DimensionError otherwise.

void check_congruent(const ParamSet& a, const ParamSet& b);
void check_congruent(const ParamSet& a, const GradSet& b);

GradSet param_diff(const ParamSet& a, const ParamSet& b);           // a - b
void add_scaled(ParamSet& p, const GradSet& g, double scale);       // p += scale * g
void add_scaled(GradSet& a, const GradSet& b, double scale);        // a += scale * b
void scale(GradSet& g, double factor);
double sq_l2_diff(const ParamSet& a, const ParamSet& b);

ParamSet weighted_param_sum(const std::vector<std::pair<const ParamSet*, double>>& entries);

// ---- forward / backward ----------------------------------------------------

Matrix forward(const ParamSet& params, const Matrix& batch);

enum class LossKind { CrossEntropy, SquaredError };

// Optional FedProx-style term: adds mu/2 * ||p - anchor||^2 to the loss and
// mu * (p - anchor) to the gradients. mu == 0 is a strict no-op.
struct ProximalTerm {
    double mu = 0.0;
    const ParamSet* anchor = nullptr;
};

struct LossGrad {
    double loss = 0.0;
    GradSet grads;
};

LossGrad loss_and_grad(const ParamSet& params, const Matrix& batch, const std::vector<int>& labels,
                       LossKind kind, const ProximalTerm* prox = nullptr);

// As above but also yields d(loss)/d(batch); used by the distillation
// competition and by model inversion.
LossGrad loss_and_grad_input(const ParamSet& params, const Matrix& batch,
                             const std::vector<int>& labels, LossKind kind, Matrix& input_grad);

// Backpropagates an arbitrary gradient w.r.t. the network output (post-head)
// into parameter gradients; optionally also the input gradient.
GradSet backprop_output_grad(const ParamSet& params, const Matrix& batch, const Matrix& output_grad,
                             Matrix* input_grad = nullptr);

// ---- SGD ---------------------------------------------------------------

// v <- momentum * v + (g + weight_decay * p); p <- p - lr * v.
struct SgdResult {
    ParamSet params;
    GradSet velocity;
};
SgdResult sgd_step(const ParamSet& params, const GradSet& grads, double lr, double momentum,
                   double weight_decay, const GradSet& velocity);
void sgd_step_inplace(ParamSet& params, const GradSet& grads, double lr, double momentum,
                      double weight_decay, GradSet& velocity);

// Fraction of rows whose argmax output matches the label.
double accuracy(const ParamSet& params, const Matrix& batch, const std::vector<int>& labels);

// Checkpoint format: one-line JSON header (arch + segment names/shapes),
// newline, then every segment's values as little-endian float64.
void save_params(const ParamSet& params, const std::string& path);
ParamSet load_params(const std::string& path);

}  // namespace fedfed

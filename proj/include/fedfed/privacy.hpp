#pragma once

#include <cstdint>
#include <vector>

#include "fedfed/common.hpp"
#include "fedfed/rng.hpp"

namespace fedfed {

// Closed-form (epsilon, delta) accounting for the feature-sharing pipeline.
//
// The accountant evaluates the strong-composition style expressions with the
// asymptotic constants fixed to 1 and the sampling probability q fixed to 1
// (the whole shared pool is consumed each round). The numbers it reports are
// therefore budget *indices*: internally consistent and correct under
// comparison (fedfed-vs-raw, monotonicity, composition), which is what the
// guarantees here need, but not calibrated absolute budgets.

struct NoiseMechanism {
    enum class Kind { Gaussian, Laplace };

    Kind kind = Kind::Gaussian;
    double scale = 1.0;  // stddev for Gaussian, b for Laplace

    static NoiseMechanism gaussian(double sigma);
    static NoiseMechanism laplace(double scale);
    double variance() const;  // sigma^2 or 2 b^2
};

// i.i.d. draws from the mechanism's distribution; deterministic per stream.
std::vector<double> sample_noise(const NoiseMechanism& mech, int dim, RngStream& rng);

struct PrivacyBudget {
    double epsilon = 0.0;  // > 0
    double delta = 0.0;    // in (0, 1)
};

enum class SharingMode { FedFed, Raw };

// Per-client budget for R rounds of sharing.
//   FedFed: eps = rho * sqrt(R ln(1/delta)) / sigma_s
//   Raw:    eps = sqrt(R ln(1/delta)) * (rho / sigma_s + (1 - rho) / sigma_r)
// Raw mode needs sigma_r; FedFed keeps the residual features local, which the
// accountant treats as sigma_r = infinity (the term vanishes).
double epsilon_single(double rho, int rounds, double delta, double sigma_s, SharingMode mode,
                      double sigma_r = 0.0);

// Noise scales required to hit a given (epsilon, delta) over R rounds.
// The clipped-feature sensitivity is rho * ||x|| versus ||x|| for raw data,
// so fedfed = rho * raw < raw for every rho in (0, 1).
struct SigmaPair {
    double fedfed = 0.0;
    double raw = 0.0;
};
SigmaPair required_sigma_pair(double epsilon, double delta, int rounds, double rho);

struct CompositionInput {
    int clients = 1;         // k
    double epsilon = 0.0;    // per-client epsilon (see from_mechanism)
    double delta = 0.0;      // per-client delta
    double hat_delta = 0.0;  // composition slack, in (0, 1)
    double rho = 0.0;
    int rounds = 0;
    double sigma_s = 0.0;

    // Builds the input with epsilon derived from the sharing mechanism, i.e.
    // epsilon_single(rho, rounds, delta, sigma_s, FedFed).
    static CompositionInput from_mechanism(int clients, double delta, double hat_delta, double rho,
                                           int rounds, double sigma_s);
};

struct CompositionResult {
    double epsilon_hat = 0.0;
    double delta_total = 0.0;
};

// k-fold adaptive composition: epsilon_hat is the minimum of
//   b1 = k e
//   b2 = (e^e - 1) e k / (e^e + 1) + e sqrt(2 k ln(e_base + sqrt(k e^2 / hat_delta)))
//   b3 = (e^e - 1) e k / (e^e + 1) + e sqrt(2 k ln(1 / hat_delta))
// and delta_total = 1 - (1 - hat_delta) (1 - delta)^k.
CompositionResult compose_epsilon(const CompositionInput& inp);

// The three branch values, exposed so the minimum can be cross-checked.
std::vector<double> composition_branches(const CompositionInput& inp);

}  // namespace fedfed

#include "fedfed/privacy.hpp"

#include <algorithm>
#include <cmath>

namespace fedfed {

NoiseMechanism NoiseMechanism::gaussian(double sigma) {
    if (!(sigma > 0.0)) throw DomainError("gaussian sigma must be > 0");
    return {Kind::Gaussian, sigma};
}

NoiseMechanism NoiseMechanism::laplace(double scale) {
    if (!(scale > 0.0)) throw DomainError("laplace scale must be > 0");
    return {Kind::Laplace, scale};
}

double NoiseMechanism::variance() const {
    return kind == Kind::Gaussian ? scale * scale : 2.0 * scale * scale;
}

std::vector<double> sample_noise(const NoiseMechanism& mech, int dim, RngStream& rng) {
    if (dim < 1) throw DomainError("noise dimension must be >= 1");
    std::vector<double> out(static_cast<size_t>(dim));
    if (mech.kind == NoiseMechanism::Kind::Gaussian)
        for (double& v : out) v = rng.normal(0.0, mech.scale);
    else
        for (double& v : out) v = rng.laplace(mech.scale);
    return out;
}

namespace {

void check_budget_domain(double rho, int rounds, double delta, double sigma_s) {
    if (!(rho > 0.0 && rho < 1.0)) throw DomainError("rho must be in (0, 1)");
    if (rounds < 1) throw DomainError("rounds must be >= 1");
    if (!(delta > 0.0 && delta < 1.0)) throw DomainError("delta must be in (0, 1)");
    if (!(sigma_s > 0.0)) throw DomainError("sigma_s must be > 0");
}

}  // namespace

double epsilon_single(double rho, int rounds, double delta, double sigma_s, SharingMode mode,
                      double sigma_r) {
    check_budget_domain(rho, rounds, delta, sigma_s);
    const double root = std::sqrt(rounds * std::log(1.0 / delta));
    if (mode == SharingMode::FedFed) return rho * root / sigma_s;
    if (!(sigma_r > 0.0)) throw DomainError("raw mode requires sigma_r > 0");
    return root * (rho / sigma_s + (1.0 - rho) / sigma_r);
}

SigmaPair required_sigma_pair(double epsilon, double delta, int rounds, double rho) {
    if (!(epsilon > 0.0)) throw DomainError("epsilon must be > 0");
    if (!(rho > 0.0 && rho < 1.0)) throw DomainError("rho must be in (0, 1)");
    if (rounds < 1) throw DomainError("rounds must be >= 1");
    if (!(delta > 0.0 && delta < 1.0)) throw DomainError("delta must be in (0, 1)");
    const double root = std::sqrt(rounds * std::log(1.0 / delta));
    SigmaPair pair;
    pair.raw = root / epsilon;
    pair.fedfed = rho * pair.raw;
    return pair;
}

CompositionInput CompositionInput::from_mechanism(int clients, double delta, double hat_delta,
                                                  double rho, int rounds, double sigma_s) {
    CompositionInput inp;
    inp.clients = clients;
    inp.delta = delta;
    inp.hat_delta = hat_delta;
    inp.rho = rho;
    inp.rounds = rounds;
    inp.sigma_s = sigma_s;
    inp.epsilon = epsilon_single(rho, rounds, delta, sigma_s, SharingMode::FedFed);
    return inp;
}

std::vector<double> composition_branches(const CompositionInput& inp) {
    if (inp.clients < 1) throw DomainError("composition needs k >= 1");
    if (!(inp.epsilon > 0.0)) throw DomainError("per-client epsilon must be > 0");
    if (!(inp.delta > 0.0 && inp.delta < 1.0)) throw DomainError("delta must be in (0, 1)");
    if (!(inp.hat_delta > 0.0 && inp.hat_delta < 1.0))
        throw DomainError("hat_delta must be in (0, 1)");

    const double e = inp.epsilon;
    const double k = static_cast<double>(inp.clients);
    const double shrink = (std::exp(e) - 1.0) / (std::exp(e) + 1.0) * e * k;
    const double b1 = k * e;
    const double b2 =
        shrink + e * std::sqrt(2.0 * k * std::log(std::exp(1.0) + std::sqrt(k * e * e / inp.hat_delta)));
    const double b3 = shrink + e * std::sqrt(2.0 * k * std::log(1.0 / inp.hat_delta));
    return {b1, b2, b3};
}

CompositionResult compose_epsilon(const CompositionInput& inp) {
    const std::vector<double> branches = composition_branches(inp);
    CompositionResult out;
    out.epsilon_hat = *std::min_element(branches.begin(), branches.end());
    out.delta_total =
        1.0 - (1.0 - inp.hat_delta) * std::pow(1.0 - inp.delta, static_cast<double>(inp.clients));
    if (!std::isfinite(out.epsilon_hat) || !(out.epsilon_hat > 0.0))
        throw NumericError("composed epsilon is not finite and positive");
    return out;
}

}  // namespace fedfed

#ifndef IMBIBE_SMC_HPP
#define IMBIBE_SMC_HPP

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "imbibe/rng.hpp"

namespace imbibe {

struct PriorEntry {
    std::string name;
    double lower;
    double upper;
};

/// Reparameterisation rule: target = sum(addends) + constant, evaluated on
/// the sampled coordinates. Derived names never appear as sampled entries.
struct DerivedRule {
    std::string name;
    std::vector<std::string> addends;
    double constant = 0.0;
};

/// Independent uniform marginals plus optional derived parameters.
struct PriorSpec {
    std::vector<PriorEntry> entries;
    std::vector<DerivedRule> derived;

    void validate() const;
    int dim() const { return static_cast<int>(entries.size()); }
    int index_of(const std::string& name) const;  // -1 if absent
    bool contains(std::span<const double> theta) const;
    double derived_value(const DerivedRule& rule, std::span<const double> theta) const;
};

struct Particle {
    std::vector<double> theta;  ///< sampled coordinates
    double weight = 0.0;
    double distance = 0.0;
};

struct Population {
    int generation = 0;
    std::vector<Particle> particles;
    double epsilon = 0.0;
    double ess = 0.0;
    double acceptance_rate = 0.0;
    long total_sims = 0;
    bool resampled = false;
};

struct SmcConfig {
    int n_particles = 1000;
    int max_generations = 20;
    double quantile_level = 0.3;
    double eps_min = 0.0;
    double phi_crit = 0.005;
    double ess_threshold = -1.0;       ///< < 0 means N/2
    double kernel_scale = 2.0;
    std::uint64_t seed = 0;
    long max_sims_per_generation = -1; ///< < 0 means 200 N
    int workers = 1;

    void validate() const;
};

/// Black-box simulator: sampled coordinates -> discrepancy. May return +inf
/// to signal a failed forward run (never accepted).
using DistanceFn = std::function<double(std::span<const double>)>;

std::vector<double> sample_prior(const PriorSpec& spec, SubstreamRng& rng);
double prior_density(const PriorSpec& spec, std::span<const double> theta);

/// kernel_scale times the weighted empirical covariance of the population.
/// Adds diagonal jitter (1e-12 trace/d) when not positive definite; throws
/// if the population carries no spread at all.
Eigen::MatrixXd kernel_covariance(const Population& pop, double kernel_scale = 2.0);

/// Multivariate normal proposal about theta_star; draws outside the prior box
/// are redrawn (up to 1e4 attempts). chol is the lower Cholesky factor.
std::vector<double> perturb(std::span<const double> theta_star, const Eigen::MatrixXd& chol,
                            const PriorSpec& spec, SubstreamRng& rng);

/// Unnormalised importance weight p(theta) / sum_j w_j K(theta | theta_j),
/// with the mixture denominator accumulated in the log domain.
double importance_weight(std::span<const double> theta, const Population& prev,
                         const Eigen::MatrixXd& sigma_chol, const PriorSpec& spec);

double effective_sample_size(std::span<const double> normalized_weights);

/// Type-7 (linear interpolation) quantile of unweighted values.
double quantile(std::vector<double> values, double q);

/// alpha-quantile of the previous generation's distances, clamped to be
/// non-increasing.
double next_epsilon(const Population& prev, double quantile_level);

Population systematic_resample(const Population& pop, SubstreamRng& rng);
/// Deterministic variant with an explicit offset u in [0, 1/N).
Population systematic_resample_offset(const Population& pop, double u);

/// Full ABC-SMC loop: rejection initialisation with a pilot-quantile first
/// tolerance, then sequential perturb/simulate/reweight generations with
/// adaptive quantile tolerances, ESS-triggered systematic resampling, and
/// termination on generation count, eps_min, or acceptance-rate collapse.
/// Trials use counter-keyed RNG substreams and are committed in trial order,
/// so the result is bitwise independent of the worker count.
std::vector<Population> run_smc(const PriorSpec& spec, const DistanceFn& distance,
                                const SmcConfig& cfg);

}  // namespace imbibe

#endif

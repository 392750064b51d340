#include "imbibe/smc.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <thread>

namespace imbibe {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kLog2Pi = 1.8378770664093454835606594728112;
// substream id reserved for the resampling draw of each generation
constexpr std::uint64_t kResampleStream = 0x8000000000000000ULL;

std::vector<double> normalized_weights(const Population& pop) {
    double total = 0.0;
    for (const auto& p : pop.particles) total += p.weight;
    if (!(total > 0.0)) throw std::runtime_error("population weights sum to zero");
    std::vector<double> w(pop.particles.size());
    for (size_t i = 0; i < w.size(); ++i) w[i] = pop.particles[i].weight / total;
    return w;
}

double log_prior_density(const PriorSpec& spec) {
    double lp = 0.0;
    for (const auto& e : spec.entries) lp -= std::log(e.upper - e.lower);
    return lp;
}

Eigen::LLT<Eigen::MatrixXd> cholesky_with_jitter(Eigen::MatrixXd sigma) {
    const int d = static_cast<int>(sigma.rows());
    double jitter = 1e-12 * sigma.trace() / d;
    if (!(jitter > 0.0)) jitter = 1e-300;
    Eigen::LLT<Eigen::MatrixXd> llt(sigma);
    int attempts = 0;
    while (llt.info() != Eigen::Success) {
        if (++attempts > 60) throw std::runtime_error("kernel covariance not factorizable");
        sigma.diagonal().array() += jitter;
        jitter *= 10.0;
        llt.compute(sigma);
    }
    return llt;
}

struct Trial {
    std::vector<double> theta;
    double distance = kInf;
};

// Evaluate trials [first, first+count) of one generation; trial i always uses
// substream (seed, generation, i), so the outcome does not depend on the
// worker count or scheduling.
std::vector<Trial> evaluate_trials(
    long first, long count, int workers,
    const std::function<Trial(SubstreamRng&)>& propose_and_score,
    std::uint64_t seed, std::uint64_t generation) {
    std::vector<Trial> results(count);
    std::atomic<long> cursor{0};
    const auto worker = [&] {
        for (;;) {
            const long i = cursor.fetch_add(1);
            if (i >= count) return;
            SubstreamRng rng(seed, generation, static_cast<std::uint64_t>(first + i));
            results[i] = propose_and_score(rng);
        }
    };
    const int n_threads = std::max(1, std::min<int>(workers, static_cast<int>(count)));
    if (n_threads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(n_threads);
        for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    return results;
}

}  // namespace

void PriorSpec::validate() const {
    if (entries.empty()) throw std::invalid_argument("prior: no entries");
    for (const auto& e : entries)
        if (!(e.lower < e.upper))
            throw std::invalid_argument("prior: need lower < upper for " + e.name);
    for (const auto& r : derived) {
        if (index_of(r.name) >= 0)
            throw std::invalid_argument("prior: derived parameter " + r.name +
                                        " also appears as a sampled coordinate");
        for (const auto& n : r.addends)
            if (index_of(n) < 0)
                throw std::invalid_argument("prior: derived rule for " + r.name +
                                            " references unknown coordinate " + n);
    }
}

int PriorSpec::index_of(const std::string& name) const {
    for (size_t i = 0; i < entries.size(); ++i)
        if (entries[i].name == name) return static_cast<int>(i);
    return -1;
}

bool PriorSpec::contains(std::span<const double> theta) const {
    if (theta.size() != entries.size()) return false;
    for (size_t i = 0; i < entries.size(); ++i)
        if (theta[i] < entries[i].lower || theta[i] > entries[i].upper) return false;
    return true;
}

double PriorSpec::derived_value(const DerivedRule& rule, std::span<const double> theta) const {
    double v = rule.constant;
    for (const auto& n : rule.addends) v += theta[static_cast<size_t>(index_of(n))];
    return v;
}

void SmcConfig::validate() const {
    if (n_particles < 2) throw std::invalid_argument("smc: need n_particles >= 2");
    if (!(quantile_level > 0.0 && quantile_level < 1.0))
        throw std::invalid_argument("smc: need quantile_level in (0,1)");
    if (!(eps_min >= 0.0)) throw std::invalid_argument("smc: need eps_min >= 0");
    if (!(phi_crit > 0.0 && phi_crit < 1.0))
        throw std::invalid_argument("smc: need phi_crit in (0,1)");
    if (max_generations < 1) throw std::invalid_argument("smc: need max_generations >= 1");
    if (workers < 1) throw std::invalid_argument("smc: need workers >= 1");
}

std::vector<double> sample_prior(const PriorSpec& spec, SubstreamRng& rng) {
    std::vector<double> theta(spec.entries.size());
    for (size_t i = 0; i < theta.size(); ++i)
        theta[i] = rng.uniform(spec.entries[i].lower, spec.entries[i].upper);
    return theta;
}

double prior_density(const PriorSpec& spec, std::span<const double> theta) {
    if (!spec.contains(theta)) return 0.0;
    double d = 1.0;
    for (const auto& e : spec.entries) d /= (e.upper - e.lower);
    return d;
}

Eigen::MatrixXd kernel_covariance(const Population& pop, double kernel_scale) {
    const size_t n = pop.particles.size();
    if (n < 2) throw std::runtime_error("kernel_covariance: need >= 2 particles");
    const int d = static_cast<int>(pop.particles.front().theta.size());
    const auto w = normalized_weights(pop);

    Eigen::VectorXd mean = Eigen::VectorXd::Zero(d);
    for (size_t i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) mean[j] += w[i] * pop.particles[i].theta[j];

    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(d, d);
    Eigen::VectorXd dev(d);
    for (size_t i = 0; i < n; ++i) {
        if (w[i] == 0.0) continue;
        for (int j = 0; j < d; ++j) dev[j] = pop.particles[i].theta[j] - mean[j];
        cov.noalias() += w[i] * dev * dev.transpose();
    }
    cov *= kernel_scale;

    if (!(cov.trace() > 0.0))
        throw std::runtime_error("kernel_covariance: degenerate population (no spread)");

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov, Eigen::EigenvaluesOnly);
    if (es.eigenvalues().minCoeff() <= 0.0)
        cov.diagonal().array() += 1e-12 * cov.trace() / d;
    return cov;
}

std::vector<double> perturb(std::span<const double> theta_star, const Eigen::MatrixXd& chol,
                            const PriorSpec& spec, SubstreamRng& rng) {
    const int d = static_cast<int>(theta_star.size());
    Eigen::VectorXd z(d);
    std::vector<double> theta(d);
    for (int attempt = 0; attempt < 10000; ++attempt) {
        for (int j = 0; j < d; ++j) z[j] = rng.normal();
        const Eigen::VectorXd step = chol.triangularView<Eigen::Lower>() * z;
        for (int j = 0; j < d; ++j) theta[j] = theta_star[j] + step[j];
        if (spec.contains(theta)) return theta;
    }
    throw std::runtime_error("perturb: 1e4 consecutive proposals outside the prior support");
}

namespace {

double log_mixture_density(std::span<const double> theta, const Population& prev,
                           const Eigen::MatrixXd& chol, const std::vector<double>& logw) {
    const int d = static_cast<int>(theta.size());
    double log_det = 0.0;
    for (int j = 0; j < d; ++j) log_det += std::log(chol(j, j));
    const double log_norm = -0.5 * d * kLog2Pi - log_det;

    double max_term = -kInf;
    std::vector<double> terms(prev.particles.size(), -kInf);
    Eigen::VectorXd r(d);
    for (size_t j = 0; j < prev.particles.size(); ++j) {
        if (logw[j] == -kInf) continue;
        for (int k = 0; k < d; ++k) r[k] = theta[k] - prev.particles[j].theta[k];
        const Eigen::VectorXd y = chol.triangularView<Eigen::Lower>().solve(r);
        terms[j] = logw[j] + log_norm - 0.5 * y.squaredNorm();
        max_term = std::max(max_term, terms[j]);
    }
    if (max_term == -kInf) throw std::runtime_error("importance weight: empty mixture");
    double acc = 0.0;
    for (double t : terms)
        if (t != -kInf) acc += std::exp(t - max_term);
    return max_term + std::log(acc);
}

}  // namespace

double importance_weight(std::span<const double> theta, const Population& prev,
                         const Eigen::MatrixXd& sigma_chol, const PriorSpec& spec) {
    const auto w = normalized_weights(prev);
    std::vector<double> logw(w.size());
    for (size_t i = 0; i < w.size(); ++i) logw[i] = w[i] > 0.0 ? std::log(w[i]) : -kInf;
    const double lw = log_prior_density(spec) - log_mixture_density(theta, prev, sigma_chol, logw);
    const double v = std::exp(lw);
    if (!(std::isfinite(v)))
        throw std::runtime_error("importance weight not finite");
    return v;
}

double effective_sample_size(std::span<const double> normalized) {
    // extended precision keeps ESS of N equal weights at exactly N
    long double sum = 0.0L, sumsq = 0.0L;
    for (double w : normalized) {
        sum += w;
        sumsq += static_cast<long double>(w) * w;
    }
    if (!(sumsq > 0.0L)) throw std::invalid_argument("effective_sample_size: zero weights");
    return static_cast<double>((sum * sum) / sumsq);
}

double quantile(std::vector<double> values, double q) {
    if (values.empty()) throw std::invalid_argument("quantile: empty input");
    if (!(q >= 0.0 && q <= 1.0)) throw std::invalid_argument("quantile: q outside [0,1]");
    std::sort(values.begin(), values.end());
    const double h = (static_cast<double>(values.size()) - 1.0) * q;
    const size_t lo = static_cast<size_t>(h);
    if (lo + 1 >= values.size()) return values.back();
    return values[lo] + (h - static_cast<double>(lo)) * (values[lo + 1] - values[lo]);
}

double next_epsilon(const Population& prev, double quantile_level) {
    std::vector<double> d;
    d.reserve(prev.particles.size());
    for (const auto& p : prev.particles) d.push_back(p.distance);
    return std::min(quantile(std::move(d), quantile_level), prev.epsilon);
}

Population systematic_resample_offset(const Population& pop, double u) {
    const size_t n = pop.particles.size();
    const auto w = normalized_weights(pop);
    Population out;
    out.generation = pop.generation;
    out.epsilon = pop.epsilon;
    out.ess = pop.ess;
    out.acceptance_rate = pop.acceptance_rate;
    out.total_sims = pop.total_sims;
    out.resampled = true;
    out.particles.reserve(n);

    double cum = w[0];
    size_t j = 0;
    for (size_t i = 0; i < n; ++i) {
        const double pos = u + static_cast<double>(i) / static_cast<double>(n);
        while (cum <= pos && j + 1 < n) cum += w[++j];
        Particle p = pop.particles[j];
        p.weight = 1.0 / static_cast<double>(n);
        out.particles.push_back(std::move(p));
    }
    return out;
}

Population systematic_resample(const Population& pop, SubstreamRng& rng) {
    const double u = rng.uniform() / static_cast<double>(pop.particles.size());
    return systematic_resample_offset(pop, u);
}

std::vector<Population> run_smc(const PriorSpec& spec, const DistanceFn& distance,
                                const SmcConfig& cfg) {
    spec.validate();
    cfg.validate();
    const long n = cfg.n_particles;
    const double ess_threshold = cfg.ess_threshold < 0.0 ? 0.5 * n : cfg.ess_threshold;
    const long max_sims = cfg.max_sims_per_generation < 0 ? 200 * n : cfg.max_sims_per_generation;
    const long chunk = std::max<long>(n, 256);

    std::vector<Population> pops;

    // Accepts trials in trial order until n particles are collected, fetching
    // further chunks on demand. Returns total trials consumed.
    const auto fill_population =
        [&](std::uint64_t gen, double eps, std::vector<Trial>& first_chunk,
            const std::function<Trial(SubstreamRng&)>& proposer,
            std::vector<Particle>& out) -> long {
        long consumed = 0;
        long produced = static_cast<long>(first_chunk.size());
        std::vector<Trial>* buffer = &first_chunk;
        std::vector<Trial> extra;
        size_t pos = 0;
        while (static_cast<long>(out.size()) < n) {
            if (pos == buffer->size()) {
                if (produced >= max_sims)
                    throw std::runtime_error(
                        "run_smc: simulation budget exhausted in generation " +
                        std::to_string(gen) + " (" + std::to_string(produced) + " trials)");
                const long batch = std::min(chunk, max_sims - produced);
                extra = evaluate_trials(produced, batch, cfg.workers, proposer, cfg.seed, gen);
                produced += batch;
                buffer = &extra;
                pos = 0;
            }
            Trial& t = (*buffer)[pos++];
            ++consumed;
            if (t.distance <= eps) {
                Particle p;
                p.theta = std::move(t.theta);
                p.distance = t.distance;
                out.push_back(std::move(p));
            }
        }
        return consumed;
    };

    // --- generation 1: rejection sampling with a pilot-quantile tolerance
    {
        const auto proposer = [&](SubstreamRng& rng) {
            Trial t;
            t.theta = sample_prior(spec, rng);
            t.distance = distance(t.theta);
            return t;
        };
        auto pilot = evaluate_trials(0, n, cfg.workers, proposer, cfg.seed, 1);
        std::vector<double> pilot_dists;
        for (const auto& t : pilot)
            if (std::isfinite(t.distance)) pilot_dists.push_back(t.distance);
        if (pilot_dists.empty())
            throw std::runtime_error("run_smc: every pilot simulation failed");
        const double eps1 = quantile(std::move(pilot_dists), cfg.quantile_level);

        Population pop;
        pop.generation = 1;
        pop.epsilon = eps1;
        pop.total_sims = fill_population(1, eps1, pilot, proposer, pop.particles);
        for (auto& p : pop.particles) p.weight = 1.0 / static_cast<double>(n);
        pop.ess = static_cast<double>(n);
        pop.acceptance_rate = static_cast<double>(n) / static_cast<double>(pop.total_sims);
        pops.push_back(std::move(pop));
    }

    for (int gen = 2; gen <= cfg.max_generations; ++gen) {
        const Population& prev = pops.back();
        if (prev.epsilon <= cfg.eps_min) break;
        if (prev.acceptance_rate < cfg.phi_crit) break;

        const Eigen::MatrixXd sigma = kernel_covariance(prev, cfg.kernel_scale);
        const Eigen::MatrixXd chol = cholesky_with_jitter(sigma).matrixL();
        const double eps = next_epsilon(prev, cfg.quantile_level);

        // precursor selection by cumulative weights
        const auto wprev = normalized_weights(prev);
        std::vector<double> cum(wprev.size());
        double acc = 0.0;
        for (size_t i = 0; i < wprev.size(); ++i) { acc += wprev[i]; cum[i] = acc; }
        cum.back() = 1.0;

        const auto proposer = [&](SubstreamRng& rng) {
            const double u = rng.uniform();
            const size_t idx = static_cast<size_t>(
                std::lower_bound(cum.begin(), cum.end(), u) - cum.begin());
            Trial t;
            t.theta = perturb(prev.particles[idx].theta, chol, spec, rng);
            t.distance = distance(t.theta);
            return t;
        };

        Population pop;
        pop.generation = gen;
        pop.epsilon = eps;
        std::vector<Trial> empty;
        pop.total_sims = fill_population(static_cast<std::uint64_t>(gen), eps, empty,
                                         proposer, pop.particles);
        pop.acceptance_rate = static_cast<double>(n) / static_cast<double>(pop.total_sims);

        // importance weights, normalized in the log domain
        std::vector<double> logw_prev(wprev.size());
        for (size_t i = 0; i < wprev.size(); ++i)
            logw_prev[i] = wprev[i] > 0.0 ? std::log(wprev[i]) : -kInf;
        const double lp = log_prior_density(spec);
        std::vector<double> logw(pop.particles.size());
        double max_lw = -kInf;
        for (size_t i = 0; i < pop.particles.size(); ++i) {
            logw[i] = lp - log_mixture_density(pop.particles[i].theta, prev, chol, logw_prev);
            max_lw = std::max(max_lw, logw[i]);
        }
        if (max_lw == -kInf) throw std::runtime_error("run_smc: all importance weights underflowed");
        double norm = 0.0;
        for (double lw : logw) norm += std::exp(lw - max_lw);
        for (size_t i = 0; i < pop.particles.size(); ++i)
            pop.particles[i].weight = std::exp(logw[i] - max_lw) / norm;

        std::vector<double> wnow(pop.particles.size());
        for (size_t i = 0; i < wnow.size(); ++i) wnow[i] = pop.particles[i].weight;
        pop.ess = effective_sample_size(wnow);

        if (pop.ess < ess_threshold) {
            SubstreamRng rng(cfg.seed, static_cast<std::uint64_t>(gen), kResampleStream);
            pop = systematic_resample(pop, rng);
        }
        pops.push_back(std::move(pop));
    }
    return pops;
}

}  // namespace imbibe

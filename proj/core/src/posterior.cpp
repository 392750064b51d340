#include "imbibe/posterior.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace imbibe {

WeightedSamples WeightedSamples::from_population(const Population& pop) {
    if (pop.particles.empty()) throw std::invalid_argument("empty population");
    const long n = static_cast<long>(pop.particles.size());
    const int d = static_cast<int>(pop.particles.front().theta.size());
    WeightedSamples s;
    s.values.resize(n, d);
    s.weights.resize(n);
    double total = 0.0;
    for (long i = 0; i < n; ++i) {
        for (int j = 0; j < d; ++j) s.values(i, j) = pop.particles[i].theta[j];
        s.weights[i] = pop.particles[i].weight;
        total += s.weights[i];
    }
    if (!(total > 0.0)) throw std::invalid_argument("population weights sum to zero");
    s.weights /= total;
    return s;
}

void WeightedSamples::validate() const {
    if (values.rows() == 0) throw std::invalid_argument("no samples");
    if (weights.size() != values.rows()) throw std::invalid_argument("weight/sample mismatch");
    if (std::abs(weights.sum() - 1.0) > 1e-9)
        throw std::invalid_argument("weights not normalized");
}

double weighted_quantile(std::span<const double> samples, std::span<const double> weights,
                         double q) {
    if (samples.empty()) throw std::invalid_argument("weighted_quantile: empty input");
    if (samples.size() != weights.size())
        throw std::invalid_argument("weighted_quantile: size mismatch");
    if (!(q >= 0.0 && q <= 1.0)) throw std::invalid_argument("weighted_quantile: q outside [0,1]");

    std::vector<size_t> order(samples.size());
    std::iota(order.begin(), order.end(), size_t{0});
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return samples[a] < samples[b]; });

    double cum = 0.0;
    for (size_t k = 0; k < order.size(); ++k) {
        cum += weights[order[k]];
        if (cum >= q - 1e-12) {
            // exact tie on the cumulative weight: interpolate to the next sample
            if (std::abs(cum - q) <= 1e-12 && k + 1 < order.size())
                return 0.5 * (samples[order[k]] + samples[order[k + 1]]);
            return samples[order[k]];
        }
    }
    return samples[order.back()];
}

std::vector<IntervalSummary> summarize(const WeightedSamples& s, double nu) {
    if (!(nu > 0.0 && nu < 1.0)) throw std::invalid_argument("summarize: need nu in (0,1)");
    s.validate();
    std::vector<IntervalSummary> out;
    out.reserve(s.dim());
    const double tail = 0.5 * (1.0 - nu);
    std::vector<double> col(s.count()), w(s.count());
    for (long i = 0; i < s.count(); ++i) w[i] = s.weights[i];
    for (int j = 0; j < s.dim(); ++j) {
        for (long i = 0; i < s.count(); ++i) col[i] = s.values(i, j);
        out.push_back({weighted_quantile(col, w, 0.5),
                       weighted_quantile(col, w, tail),
                       weighted_quantile(col, w, 1.0 - tail)});
    }
    return out;
}

Eigen::MatrixXd weighted_mean_and_covariance(const WeightedSamples& s, Eigen::VectorXd* mean_out) {
    s.validate();
    const Eigen::VectorXd mean = s.values.transpose() * s.weights;
    Eigen::MatrixXd centered = s.values.rowwise() - mean.transpose();
    Eigen::MatrixXd cov =
        centered.transpose() * s.weights.asDiagonal() * centered;
    cov = 0.5 * (cov + cov.transpose());
    if (mean_out) *mean_out = mean;
    return cov;
}

Eigen::MatrixXd weighted_correlation(const WeightedSamples& s) {
    const Eigen::MatrixXd cov = weighted_mean_and_covariance(s, nullptr);
    const int d = static_cast<int>(cov.rows());
    Eigen::MatrixXd corr(d, d);
    for (int i = 0; i < d; ++i)
        if (!(cov(i, i) > 0.0))
            throw std::runtime_error("weighted_correlation: zero variance in parameter " +
                                     std::to_string(i));
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j)
            corr(i, j) = i == j ? 1.0
                               : std::clamp(cov(i, j) / std::sqrt(cov(i, i) * cov(j, j)),
                                            -1.0, 1.0);
    return corr;
}

PcaResult weighted_pca(const WeightedSamples& s, bool standardize) {
    Eigen::MatrixXd m = weighted_mean_and_covariance(s, nullptr);
    const int d = static_cast<int>(m.rows());
    if (standardize) {
        // correlation-like scaling; zero-variance rows/columns stay zero so
        // dead parameters surface as zero eigenvalues instead of crashing
        Eigen::VectorXd inv_sd(d);
        for (int i = 0; i < d; ++i) inv_sd[i] = m(i, i) > 0.0 ? 1.0 / std::sqrt(m(i, i)) : 0.0;
        m = inv_sd.asDiagonal() * m * inv_sd.asDiagonal();
    }

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
    if (es.info() != Eigen::Success) throw std::runtime_error("weighted_pca: eigensolver failed");

    // descending order
    std::vector<int> order(d);
    std::iota(order.begin(), order.end(), 0);
    const auto& ev = es.eigenvalues();
    std::sort(order.begin(), order.end(), [&](int a, int b) { return ev[a] > ev[b]; });

    PcaResult r;
    r.explained_fractions.resize(d);
    r.loadings.resize(d, d);
    r.squared_loadings.resize(d, d);
    double total = 0.0;
    for (int k = 0; k < d; ++k) {
        r.explained_fractions[k] = std::max(ev[order[k]], 0.0);
        total += r.explained_fractions[k];
        Eigen::VectorXd v = es.eigenvectors().col(order[k]);
        int arg = 0;
        v.cwiseAbs().maxCoeff(&arg);
        if (v[arg] < 0.0) v = -v;  // deterministic sign
        r.loadings.col(k) = v;
        r.squared_loadings.col(k) = v.cwiseAbs2();
    }
    if (total > 0.0) r.explained_fractions /= total;
    return r;
}

Histogram weighted_histogram(const WeightedSamples& s, int column, double lower, double upper,
                             int bins) {
    if (!(upper > lower)) throw std::invalid_argument("weighted_histogram: bad range");
    if (bins < 1) throw std::invalid_argument("weighted_histogram: need bins >= 1");
    s.validate();
    Histogram h{lower, upper, std::vector<double>(bins, 0.0)};
    const double width = (upper - lower) / bins;
    double mass = 0.0;
    for (long i = 0; i < s.count(); ++i) {
        const double x = s.values(i, column);
        int b = static_cast<int>((x - lower) / width);
        b = std::clamp(b, 0, bins - 1);
        h.densities[b] += s.weights[i];
        mass += s.weights[i];
    }
    if (mass > 0.0)
        for (double& v : h.densities) v /= mass * width;
    return h;
}

}  // namespace imbibe

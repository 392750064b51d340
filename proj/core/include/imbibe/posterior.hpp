#ifndef IMBIBE_POSTERIOR_HPP
#define IMBIBE_POSTERIOR_HPP

#include <Eigen/Dense>
#include <span>
#include <vector>

#include "imbibe/smc.hpp"

namespace imbibe {

/// Weighted sample matrix: one row per particle, one column per parameter,
/// with normalized weights. Posterior analysis runs on this view so that it
/// can cover derived (reported) coordinates as well as sampled ones.
struct WeightedSamples {
    Eigen::MatrixXd values;
    Eigen::VectorXd weights;

    static WeightedSamples from_population(const Population& pop);
    int dim() const { return static_cast<int>(values.cols()); }
    long count() const { return values.rows(); }
    void validate() const;
};

/// Smallest sample whose cumulative weight reaches q; an exact tie on the
/// cumulative weight interpolates between the bracketing samples.
double weighted_quantile(std::span<const double> samples, std::span<const double> weights,
                         double q);

struct IntervalSummary {
    double median;
    double lo;
    double hi;
};

/// Weighted median and central credible interval at level nu per parameter.
std::vector<IntervalSummary> summarize(const WeightedSamples& s, double nu);

Eigen::MatrixXd weighted_mean_and_covariance(const WeightedSamples& s, Eigen::VectorXd* mean_out);

/// Weighted correlation matrix; throws on a zero-variance parameter.
Eigen::MatrixXd weighted_correlation(const WeightedSamples& s);

struct PcaResult {
    Eigen::VectorXd explained_fractions;  ///< descending, sums to 1
    Eigen::MatrixXd loadings;             ///< orthonormal columns, sign-fixed
    Eigen::MatrixXd squared_loadings;     ///< per-column squares, each sums to 1
};

/// Eigendecomposition of the weighted covariance (standardize = false) or of
/// the correlation-like standardized matrix (default). Zero-variance
/// parameters yield zero eigenvalues rather than an error.
PcaResult weighted_pca(const WeightedSamples& s, bool standardize = true);

struct Histogram {
    double lower;
    double upper;
    std::vector<double> densities;  ///< integrates to 1 over [lower, upper]
};

/// Density-normalized weighted histogram of one column on a fixed range.
Histogram weighted_histogram(const WeightedSamples& s, int column, double lower, double upper,
                             int bins);

}  // namespace imbibe

#endif

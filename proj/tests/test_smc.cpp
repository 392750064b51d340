#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <vector>

#include <imbibe/rng.hpp>
#include <imbibe/smc.hpp>

using namespace imbibe;

namespace {

PriorSpec unit_prior(int d) {
    PriorSpec s;
    for (int i = 0; i < d; ++i) s.entries.push_back({"x" + std::to_string(i), 0.0, 1.0});
    return s;
}

Population make_pop(const std::vector<std::vector<double>>& thetas,
                    const std::vector<double>& weights) {
    Population pop;
    pop.generation = 1;
    pop.epsilon = 1.0;
    for (size_t i = 0; i < thetas.size(); ++i)
        pop.particles.push_back({thetas[i], weights[i], 0.0});
    return pop;
}

}  // namespace

TEST_CASE("prior sampling stays in the box and covers it") {
    PriorSpec spec;
    spec.entries = {{"a", 0.05, 0.5}, {"c", 1e-4, 5e-3}};
    SubstreamRng rng(3, 0, 0);
    double mean_a = 0.0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        const auto th = sample_prior(spec, rng);
        REQUIRE(spec.contains(th));
        mean_a += th[0];
    }
    mean_a /= n;
    // U(0.05, 0.5) has mean 0.275 and sd 0.1299; 4 standard errors
    CHECK(std::fabs(mean_a - 0.275) < 4.0 * 0.1299 / std::sqrt(static_cast<double>(n)));
}

TEST_CASE("prior density is the box volume reciprocal") {
    PriorSpec spec;
    spec.entries = {{"x", 0.0, 2.0}, {"y", 0.0, 4.0}};
    const std::vector<double> inside{1.0, 1.0}, outside{3.0, 1.0};
    CHECK(prior_density(spec, inside) == doctest::Approx(1.0 / 8.0).epsilon(1e-15));
    CHECK(prior_density(spec, outside) == 0.0);
}

TEST_CASE("derived rule evaluates gamma = alpha + 1 + eta") {
    PriorSpec spec;
    spec.entries = {{"alpha", 0.2, 0.7}, {"eta", 0.1, 0.7}};
    spec.derived = {{"gamma", {"alpha", "eta"}, 1.0}};
    CHECK_NOTHROW(spec.validate());
    const std::vector<double> th{0.45, 0.53};
    CHECK(spec.derived_value(spec.derived[0], th) == doctest::Approx(1.98).epsilon(1e-15));

    PriorSpec bad = spec;
    bad.derived[0].addends.push_back("missing");
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = spec;
    bad.derived[0].name = "alpha";
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("kernel covariance doubles the weighted spread") {
    const auto pop = make_pop({{0.0}, {2.0}}, {0.5, 0.5});
    const auto sigma = kernel_covariance(pop, 2.0);
    CHECK(sigma(0, 0) == doctest::Approx(2.0).epsilon(1e-14));  // weighted var 1, scale 2
    const auto half = kernel_covariance(pop, 0.5);
    CHECK(half(0, 0) == doctest::Approx(0.5).epsilon(1e-14));
}

TEST_CASE("kernel covariance rejects a population without spread") {
    const auto pop = make_pop({{1.0}, {1.0}, {1.0}}, {0.3, 0.3, 0.4});
    CHECK_THROWS_AS(kernel_covariance(pop, 2.0), std::runtime_error);
}

TEST_CASE("perturb reproduces the requested covariance") {
    PriorSpec spec;
    spec.entries = {{"x", -100.0, 100.0}, {"y", -100.0, 100.0}};
    Eigen::MatrixXd sigma(2, 2);
    sigma << 1.0, 0.3, 0.3, 0.5;
    const Eigen::MatrixXd chol = Eigen::LLT<Eigen::MatrixXd>(sigma).matrixL();
    const std::vector<double> center{0.0, 0.0};
    SubstreamRng rng(17, 0, 0);
    const int n = 100000;
    double m0 = 0, m1 = 0, c00 = 0, c01 = 0, c11 = 0;
    for (int i = 0; i < n; ++i) {
        const auto th = perturb(center, chol, spec, rng);
        m0 += th[0];
        m1 += th[1];
        c00 += th[0] * th[0];
        c01 += th[0] * th[1];
        c11 += th[1] * th[1];
    }
    m0 /= n; m1 /= n; c00 = c00 / n - m0 * m0; c01 = c01 / n - m0 * m1; c11 = c11 / n - m1 * m1;
    CHECK(std::fabs(c00 - 1.0) < 0.05);
    CHECK(std::fabs(c01 - 0.3) < 0.05);
    CHECK(std::fabs(c11 - 0.5) < 0.05);
    CHECK(std::fabs(m0) < 0.02);
}

TEST_CASE("perturb redraws until inside the prior") {
    PriorSpec spec;
    spec.entries = {{"x", 0.0, 1.0}};
    Eigen::MatrixXd chol(1, 1);
    chol << 0.5;
    const std::vector<double> edge{0.01};
    SubstreamRng rng(19, 0, 0);
    for (int i = 0; i < 200; ++i) {
        const auto th = perturb(edge, chol, spec, rng);
        CHECK(th[0] >= 0.0);
        CHECK(th[0] <= 1.0);
    }
}

TEST_CASE("importance weight matches a hand-computed two-particle mixture") {
    PriorSpec spec;
    spec.entries = {{"x", -5.0, 5.0}};
    const auto prev = make_pop({{0.0}, {1.0}}, {0.3, 0.7});
    const double s = 0.5;
    Eigen::MatrixXd chol(1, 1);
    chol << s;
    const std::vector<double> th{0.2};

    auto normal_pdf = [&](double x, double mu) {
        return std::exp(-(x - mu) * (x - mu) / (2.0 * s * s)) / (s * std::sqrt(2.0 * M_PI));
    };
    const double expected = 0.1 / (0.3 * normal_pdf(0.2, 0.0) + 0.7 * normal_pdf(0.2, 1.0));
    const double got = importance_weight(th, prev, chol, spec);
    CHECK(got == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("effective sample size") {
    for (int n : {4, 10, 300, 1000}) {
        std::vector<double> w(n, 1.0 / n);
        CHECK(effective_sample_size(w) == static_cast<double>(n));  // exact
    }
    std::vector<double> degenerate{1.0, 0.0, 0.0};
    CHECK(effective_sample_size(degenerate) == doctest::Approx(1.0).epsilon(1e-14));
    std::vector<double> pair{0.75, 0.25};
    CHECK(effective_sample_size(pair) == doctest::Approx(1.6).epsilon(1e-14));
    std::vector<double> zero{0.0, 0.0};
    CHECK_THROWS_AS(effective_sample_size(zero), std::invalid_argument);
}

TEST_CASE("type-7 quantile") {
    std::vector<double> v(100);
    for (int i = 0; i < 100; ++i) v[i] = i + 1.0;
    CHECK(quantile(v, 0.3) == doctest::Approx(30.7).epsilon(1e-12));
    CHECK(quantile(v, 0.0) == 1.0);
    CHECK(quantile(v, 1.0) == 100.0);
    CHECK(quantile({5.0, 5.0, 5.0}, 0.4) == 5.0);
    CHECK(quantile({3.0, 1.0}, 0.5) == doctest::Approx(2.0).epsilon(1e-14));
    CHECK_THROWS_AS((quantile({}, 0.5)), std::invalid_argument);
    CHECK_THROWS_AS((quantile({1.0}, 1.5)), std::invalid_argument);
}

TEST_CASE("next_epsilon never increases the tolerance") {
    auto pop = make_pop({{0.0}, {0.0}, {0.0}}, {1.0, 1.0, 1.0});
    pop.particles[0].distance = 1.0;
    pop.particles[1].distance = 2.0;
    pop.particles[2].distance = 3.0;
    pop.epsilon = 10.0;
    CHECK(next_epsilon(pop, 0.5) == doctest::Approx(2.0).epsilon(1e-14));
    pop.epsilon = 1.5;  // already below the quantile
    CHECK(next_epsilon(pop, 0.5) == 1.5);
}

TEST_CASE("systematic resampling of (0.75, 0.25) with N = 4 gives counts (3, 1)") {
    auto pop = make_pop({{10.0}, {20.0}, {30.0}, {40.0}}, {0.75, 0.25, 0.0, 0.0});
    for (double u = 0.0; u < 0.25; u += 0.01) {
        const auto out = systematic_resample_offset(pop, u);
        REQUIRE(out.particles.size() == 4);
        int c10 = 0, c20 = 0;
        for (const auto& p : out.particles) {
            if (p.theta[0] == 10.0) ++c10;
            if (p.theta[0] == 20.0) ++c20;
            CHECK(p.weight == 0.25);
        }
        CHECK(c10 == 3);
        CHECK(c20 == 1);
        CHECK(out.resampled);
    }
}

TEST_CASE("systematic resampling keeps an equal-weight population intact") {
    auto pop = make_pop({{1.0}, {2.0}, {3.0}, {4.0}}, {0.25, 0.25, 0.25, 0.25});
    const auto out = systematic_resample_offset(pop, 0.13);
    std::vector<double> got;
    for (const auto& p : out.particles) got.push_back(p.theta[0]);
    std::sort(got.begin(), got.end());
    CHECK(got == std::vector<double>{1.0, 2.0, 3.0, 4.0});

    std::vector<double> w(out.particles.size());
    for (size_t i = 0; i < w.size(); ++i) w[i] = out.particles[i].weight;
    CHECK(effective_sample_size(w) == 4.0);
}

TEST_CASE("systematic resampling is unbiased") {
    SubstreamRng seed_rng(29, 0, 0);
    std::vector<std::vector<double>> thetas;
    std::vector<double> weights;
    double target = 0.0, wsum = 0.0;
    for (int i = 0; i < 10; ++i) {
        thetas.push_back({seed_rng.uniform()});
        weights.push_back(0.05 + seed_rng.uniform());
        wsum += weights.back();
    }
    for (int i = 0; i < 10; ++i) target += thetas[i][0] * weights[i] / wsum;
    const auto pop = make_pop(thetas, weights);

    double mean = 0.0;
    const int reps = 2000;
    for (int r = 0; r < reps; ++r) {
        SubstreamRng rng(29, 1, static_cast<std::uint64_t>(r));
        const auto out = systematic_resample(pop, rng);
        for (const auto& p : out.particles) mean += p.theta[0];
    }
    mean /= reps * 10.0;
    CHECK(std::fabs(mean - target) < 0.01);
}

TEST_CASE("run_smc contracts the tolerance on a cheap distance") {
    PriorSpec spec = unit_prior(2);
    const std::vector<double> center{0.3, 0.6};
    const DistanceFn f = [&](std::span<const double> th) {
        const double dx = th[0] - center[0], dy = th[1] - center[1];
        return dx * dx + dy * dy;
    };
    SmcConfig cfg;
    cfg.n_particles = 200;
    cfg.max_generations = 8;
    cfg.seed = 101;
    const auto pops = run_smc(spec, f, cfg);
    REQUIRE(pops.size() >= 2);
    for (size_t t = 1; t < pops.size(); ++t) CHECK(pops[t].epsilon <= pops[t - 1].epsilon);
    CHECK(pops.back().epsilon < 0.2 * pops.front().epsilon);

    const auto& last = pops.back();
    REQUIRE(static_cast<int>(last.particles.size()) == cfg.n_particles);
    double wsum = 0.0, m0 = 0.0, m1 = 0.0;
    for (const auto& p : last.particles) {
        CHECK(spec.contains(p.theta));
        CHECK(p.distance <= last.epsilon);
        wsum += p.weight;
        m0 += p.weight * p.theta[0];
        m1 += p.weight * p.theta[1];
    }
    CHECK(wsum == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(std::fabs(m0 / wsum - center[0]) < 0.1);
    CHECK(std::fabs(m1 / wsum - center[1]) < 0.1);
}

TEST_CASE("run_smc is independent of the worker count") {
    PriorSpec spec = unit_prior(3);
    const DistanceFn f = [](std::span<const double> th) {
        return std::fabs(th[0] - 0.5) + std::fabs(th[1] - 0.2) + std::fabs(th[2] - 0.8);
    };
    SmcConfig cfg;
    cfg.n_particles = 120;
    cfg.max_generations = 5;
    cfg.seed = 7;
    cfg.workers = 1;
    const auto serial = run_smc(spec, f, cfg);
    cfg.workers = 4;
    const auto parallel = run_smc(spec, f, cfg);
    REQUIRE(serial.size() == parallel.size());
    for (size_t t = 0; t < serial.size(); ++t) {
        CHECK(serial[t].epsilon == parallel[t].epsilon);
        CHECK(serial[t].total_sims == parallel[t].total_sims);
        REQUIRE(serial[t].particles.size() == parallel[t].particles.size());
        for (size_t i = 0; i < serial[t].particles.size(); ++i) {
            CHECK(serial[t].particles[i].theta == parallel[t].particles[i].theta);
            CHECK(serial[t].particles[i].weight == parallel[t].particles[i].weight);
            CHECK(serial[t].particles[i].distance == parallel[t].particles[i].distance);
        }
    }
}

TEST_CASE("run_smc reports budget exhaustion") {
    PriorSpec spec = unit_prior(1);
    const DistanceFn f = [](std::span<const double> th) { return th[0]; };
    SmcConfig cfg;
    cfg.n_particles = 100;
    cfg.max_generations = 10;
    cfg.seed = 5;
    cfg.max_sims_per_generation = 110;  // tight: later generations cannot finish
    CHECK_THROWS_WITH_AS(run_smc(spec, f, cfg), doctest::Contains("budget"), std::runtime_error);
}

TEST_CASE("run_smc fails loudly when every pilot run fails") {
    PriorSpec spec = unit_prior(1);
    const DistanceFn f = [](std::span<const double>) {
        return std::numeric_limits<double>::infinity();
    };
    SmcConfig cfg;
    cfg.n_particles = 50;
    cfg.seed = 5;
    CHECK_THROWS_AS(run_smc(spec, f, cfg), std::runtime_error);
}

TEST_CASE("run_smc stops once the tolerance target is reached") {
    PriorSpec spec = unit_prior(1);
    const DistanceFn f = [](std::span<const double> th) { return std::fabs(th[0] - 0.5); };
    SmcConfig cfg;
    cfg.n_particles = 100;
    cfg.max_generations = 50;
    cfg.eps_min = 0.05;
    cfg.seed = 13;
    const auto pops = run_smc(spec, f, cfg);
    CHECK(pops.size() < 50);
    CHECK(pops.back().epsilon <= 0.05 * (1.0 + 1e-12));
}

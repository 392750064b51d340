#include "imbibe/solver.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace imbibe {

namespace {

// B(s) sampled on a uniform s-grid over [0,1]; the time loop interpolates
// linearly instead of re-evaluating the closed form (pow-heavy for BkP).
// B is C^1 with bounded curvature, so the interpolation error at this
// resolution is ~1e-11 relative.
class AbsorptionTable {
  public:
    static constexpr int kSize = 8192;

    explicit AbsorptionTable(const AbsorptionModel& model) : values_(kSize + 1) {
        for (int i = 0; i <= kSize; ++i)
            values_[i] = b_value(model, static_cast<double>(i) / kSize);
    }

    double operator()(double s) const {
        s = std::clamp(s, 0.0, 1.0);
        const double x = s * kSize;
        const int i = std::min(static_cast<int>(x), kSize - 1);
        const double f = x - i;
        return values_[i] + f * (values_[i + 1] - values_[i]);
    }

  private:
    std::vector<double> values_;
};

}  // namespace

void ExperimentSetup::validate() const {
    if (!(0.0 < h0 && h0 < L)) throw std::invalid_argument("setup: need 0 < h0 < L");
    if (!(T_final > 0.0)) throw std::invalid_argument("setup: need T_final > 0");
    if (!(n0 > 0.0 && n0 < 1.0)) throw std::invalid_argument("setup: need n0 in (0,1)");
    if (!(theta_ext >= 0.0)) throw std::invalid_argument("setup: need theta_ext >= 0");
    if (!(rho > 0.0)) throw std::invalid_argument("setup: need rho > 0");
    if (measurement_times.empty())
        throw std::invalid_argument("setup: empty measurement schedule");
    double prev = 0.0;
    for (double t : measurement_times) {
        if (!(t > prev)) throw std::invalid_argument("setup: measurement times must be strictly increasing and > 0");
        prev = t;
    }
    if (measurement_times.back() > T_final * (1.0 + 1e-12))
        throw std::invalid_argument("setup: last measurement time exceeds T_final");
}

double ExperimentSetup::k_w() const { return std::pow(10.0, k_log); }

void ImbibitionCurve::validate() const {
    if (times.size() != q_values.size())
        throw std::invalid_argument("curve: times/q_values length mismatch");
    double prev = -std::numeric_limits<double>::infinity();
    for (size_t i = 0; i < times.size(); ++i) {
        if (!(times[i] > prev)) throw std::invalid_argument("curve: times not strictly increasing");
        if (!(q_values[i] >= 0.0)) throw std::invalid_argument("curve: negative q value");
        prev = times[i];
    }
}

double saturated_vapour_density(double t) {
    if (!(t >= 0.0 && t <= 60.0))
        throw std::out_of_range("saturated_vapour_density: temperature outside [0,60] C");
    return 5.018 + 0.32321 * t + 8.1847e-3 * t * t + 3.1243e-4 * t * t * t;
}

double external_moisture(double temp_celsius, double rh) {
    if (!(rh >= 0.0 && rh <= 1.0))
        throw std::out_of_range("external_moisture: relative humidity outside [0,1]");
    return saturated_vapour_density(temp_celsius) * rh / 1e6;
}

SolverGrid stable_grid(const ExperimentSetup& setup, const AbsorptionModel& model,
                       int nz, double safety, long max_steps) {
    if (nz < 8) throw std::invalid_argument("stable_grid: need nz >= 8");
    if (!(safety > 0.0 && safety <= 1.0))
        throw std::invalid_argument("stable_grid: need safety in (0,1]");
    double d_max = max_diffusivity(model);
    if (!(d_max > 0.0)) throw std::runtime_error("stable_grid: degenerate model, max B' = 0");
    if (model.is_bkp()) d_max *= 1.001;  // numerical peak, keep an upper bound for CFL
    const double dz = setup.L / nz;
    const double dt = safety * setup.n0 * dz * dz / (2.0 * d_max);
    const double steps = std::ceil(setup.T_final / dt);
    if (steps > static_cast<double>(max_steps))
        throw std::runtime_error("stable_grid: step cap exceeded (" + std::to_string(steps) +
                                 " > " + std::to_string(max_steps) + ")");
    return SolverGrid{dz, dt, nz, safety};
}

ImbibitionCurve simulate(const ExperimentSetup& setup, const AbsorptionModel& model,
                         const SolverGrid& grid) {
    setup.validate();
    model.validate();

    const int nz = grid.nz;
    const double dz = grid.dz;
    const double dt = grid.dt;
    const double lambda = dt / (dz * dz);
    const double n0 = setup.n0;
    const double kw = setup.k_w();
    const double robin_den = 3.0 + 2.0 * kw * dz;
    const double robin_src = 2.0 * kw * dz * setup.theta_ext;
    const long n_steps = static_cast<long>(std::ceil(setup.T_final / dt));

    const AbsorptionTable b_of(model);

    // nodes 0..nz+1: 0 is the saturated bottom, 1..nz interior, nz+1 the
    // Robin-extrapolated top value
    std::vector<double> theta(nz + 2, 0.0), theta_new(nz + 2, 0.0), bval(nz + 2, 0.0);
    for (int j = 0; j <= nz; ++j)
        theta[j] = (j * dz <= setup.h0 * (1.0 + 1e-12)) ? n0 : 0.0;
    theta[0] = n0;
    theta[nz + 1] = (4.0 * theta[nz] - theta[nz - 1] + robin_src) / robin_den;

    // map measurement times to step indices (nearest step)
    std::vector<long> target_step(setup.measurement_times.size());
    for (size_t i = 0; i < target_step.size(); ++i)
        target_step[i] = std::clamp<long>(std::llround(setup.measurement_times[i] / dt), 0, n_steps);

    std::vector<double> q_out(target_step.size(), 0.0);
    const auto record_q = [&](long step) {
        double acc = 0.5 * (theta[0] + theta[nz]);
        for (int j = 1; j < nz; ++j) acc += theta[j];
        const double q = setup.rho * dz * acc;
        for (size_t i = 0; i < target_step.size(); ++i)
            if (target_step[i] == step) q_out[i] = q;
    };
    record_q(0);

    size_t next_target = 0;
    while (next_target < target_step.size() && target_step[next_target] == 0) ++next_target;

    for (long k = 0; k < n_steps; ++k) {
        if (next_target >= target_step.size()) break;
        for (int j = 0; j <= nz + 1; ++j) bval[j] = b_of(theta[j] / n0);
        for (int j = 1; j <= nz; ++j)
            theta_new[j] = theta[j] + lambda * (bval[j + 1] - 2.0 * bval[j] + bval[j - 1]);
        theta_new[0] = n0;
        theta_new[nz + 1] = (4.0 * theta[nz] - theta[nz - 1] + robin_src) / robin_den;

        for (int j = 1; j <= nz; ++j) {
            const double v = theta_new[j];
            if (std::isnan(v))
                throw std::runtime_error("simulate: NaN at node " + std::to_string(j) +
                                         ", step " + std::to_string(k + 1));
            if (v < -1e-9 || v > n0 + 1e-9)
                throw std::runtime_error("simulate: instability, theta = " + std::to_string(v) +
                                         " at node " + std::to_string(j) + ", step " +
                                         std::to_string(k + 1));
            theta_new[j] = std::clamp(v, 0.0, n0);
        }
        theta.swap(theta_new);

        if (target_step[next_target] == k + 1) {
            record_q(k + 1);
            while (next_target < target_step.size() && target_step[next_target] == k + 1)
                ++next_target;
        }
    }

    ImbibitionCurve curve{setup.measurement_times, std::move(q_out)};
    curve.validate();
    return curve;
}

double discrepancy(const ImbibitionCurve& sim, const ImbibitionCurve& obs) {
    if (sim.times.size() != obs.times.size())
        throw std::invalid_argument("discrepancy: time grid size mismatch");
    for (size_t i = 0; i < sim.times.size(); ++i)
        if (std::abs(sim.times[i] - obs.times[i]) > 1e-9)
            throw std::invalid_argument("discrepancy: time grids differ at index " + std::to_string(i));
    double acc = 0.0;
    for (size_t i = 0; i < sim.times.size(); ++i) {
        const double qn = sim.q_values[i];
        if (qn == 0.0)
            throw std::runtime_error("discrepancy: simulated Q = 0 at index " + std::to_string(i));
        const double r = (qn - obs.q_values[i]) / qn;
        acc += r * r;
    }
    return acc / static_cast<double>(sim.times.size());
}

}  // namespace imbibe

#ifndef IMBIBE_SOLVER_HPP
#define IMBIBE_SOLVER_HPP

#include <vector>

#include "imbibe/absorption.hpp"

namespace imbibe {

/// Column geometry and ambient conditions of one imbibition experiment.
/// Lengths in cm, times in seconds, moisture contents dimensionless.
struct ExperimentSetup {
    double L;          ///< specimen height
    double h0;         ///< immersion depth (bottom saturated region)
    double T_final;    ///< experiment duration
    double n0;         ///< open porosity
    double k_log;      ///< log10 of the top boundary exchange coefficient K_w
    double theta_ext;  ///< external moisture content
    double rho = 1.0;  ///< fluid density, g/cm^3
    std::vector<double> measurement_times;  ///< strictly increasing, in (0, T_final]

    void validate() const;
    double k_w() const;
};

struct SolverGrid {
    double dz;
    double dt;
    int nz;          ///< interior node count
    double safety;   ///< CFL safety factor used to build the grid
};

/// Time series of the spatially integrated water content Q(t), g/cm^2.
struct ImbibitionCurve {
    std::vector<double> times;     ///< seconds
    std::vector<double> q_values;

    void validate() const;
};

/// Saturated vapour density in g/m^3 as a cubic in temperature (Celsius).
double saturated_vapour_density(double temp_celsius);

/// theta_ext from temperature and relative humidity: SVD * RH converted from
/// g/m^3 to the dimensionless volumetric fraction (water density 1e6 g/m^3).
double external_moisture(double temp_celsius, double rh);

/// CFL-stable grid: dz = L/nz, dt = safety * n0 * dz^2 / (2 max B').
/// The BkP peak is found numerically, so it is inflated by 0.1% before use.
/// Errors out if the implied step count exceeds max_steps.
SolverGrid stable_grid(const ExperimentSetup& setup, const AbsorptionModel& model,
                       int nz, double safety, long max_steps = 50'000'000);

/// Explicit forward-in-time central-in-space integration of
/// d_t theta = d_zz B(theta/n0) with a saturated bottom boundary and a
/// second-order Robin top boundary, sampled at the measurement times by
/// nearest-time-step lookup.
ImbibitionCurve simulate(const ExperimentSetup& setup, const AbsorptionModel& model,
                         const SolverGrid& grid);

/// Mean relative square error between a simulated and an observed curve.
double discrepancy(const ImbibitionCurve& sim, const ImbibitionCurve& obs);

}  // namespace imbibe

#endif

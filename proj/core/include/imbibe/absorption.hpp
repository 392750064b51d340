#ifndef IMBIBE_ABSORPTION_HPP
#define IMBIBE_ABSORPTION_HPP

#include <variant>

namespace imbibe {

/// Three-parameter polynomial diffusivity: B' is a downward parabola with
/// compact support (a, b) and peak value c at the midpoint.
struct NNParams {
    double a;  ///< residual saturation, lower support bound
    double b;  ///< maximal saturation, upper support bound
    double c;  ///< maximum diffusivity, attained at s = (a+b)/2

    void validate() const;
};

/// Darcy-derived diffusivity built from a power-law permeability
/// k(s) = Ks ((s-a)/(b-a))^gamma and a capillary pressure
/// Pc(s) = d (s-b)^2 / (s-a)^alpha. Ks and d are folded into a single
/// coefficient d_tilde = Ks*d; the viscosity mu only ever appears as
/// d_tilde/mu and defaults to 1.
struct BkPParams {
    double a;
    double b;
    double d_tilde;
    double alpha;   ///< capillary-pressure exponent, in (0,1)
    double gamma;   ///< permeability exponent, must exceed alpha + 1
    double mu = 1.0;

    void validate() const;
};

struct AbsorptionModel {
    std::variant<NNParams, BkPParams> variant;

    void validate() const;
    bool is_bkp() const { return std::holds_alternative<BkPParams>(variant); }
};

// Saturation inputs within 1e-12 of [0,1] are clipped; anything further out
// is a hard error.
double clip_saturation(double s);

double nn_b_prime(const NNParams& p, double s);
double nn_b(const NNParams& p, double s);

double bkp_b_prime(const BkPParams& p, double s);
double bkp_b(const BkPParams& p, double s);

/// Relative permeability k(s)/Ks of the BkP model (Ks itself is folded into
/// d_tilde and never carried separately).
double bkp_relative_permeability(const BkPParams& p, double s);

/// Derivative of the capillary pressure for unit d; multiply by d to get the
/// physical value. Defined on (a, b).
double bkp_capillary_pressure_deriv_unit(const BkPParams& p, double s);

double b_value(const AbsorptionModel& m, double s);
double b_prime(const AbsorptionModel& m, double s);

/// Peak of B'. Exact (= c) for NN; dense grid plus golden-section refinement
/// (1e-10 tolerance in s) for BkP.
double max_diffusivity(const AbsorptionModel& m);

}  // namespace imbibe

#endif

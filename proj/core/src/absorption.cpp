#include "imbibe/absorption.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace imbibe {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

// (s-a)^e for e > 0, with a hard floor on the base so that s -> a+ gives 0
// instead of a NaN from pow(0, e) corner cases.
double pow_from_a(double x, double e) {
    return std::pow(std::max(x, 1e-300), e);
}

}  // namespace

void NNParams::validate() const {
    if (!(0.0 <= a && a < b && b <= 1.0)) fail("NNParams: need 0 <= a < b <= 1");
    if (!(c > 0.0)) fail("NNParams: need c > 0");
}

void BkPParams::validate() const {
    if (!(0.0 <= a && a < b && b <= 1.0)) fail("BkPParams: need 0 <= a < b <= 1");
    if (!(d_tilde > 0.0)) fail("BkPParams: need d_tilde > 0");
    if (!(alpha > 0.0 && alpha < 1.0)) fail("BkPParams: need alpha in (0,1)");
    if (!(gamma > alpha + 1.0)) throw std::domain_error("BkPParams: need gamma > alpha + 1");
    if (!(mu > 0.0)) fail("BkPParams: need mu > 0");
}

void AbsorptionModel::validate() const {
    std::visit([](const auto& p) { p.validate(); }, variant);
}

double clip_saturation(double s) {
    const double c = std::clamp(s, 0.0, 1.0);
    if (std::abs(s - c) > 1e-12)
        throw std::domain_error("saturation outside [0,1]: " + std::to_string(s));
    return c;
}

double nn_b_prime(const NNParams& p, double s) {
    s = clip_saturation(s);
    const double ab = p.a - p.b;
    return std::max(0.0, -4.0 * p.c * (p.a - s) * (p.b - s) / (ab * ab));
}

double nn_b(const NNParams& p, double s) {
    s = clip_saturation(s);
    if (s < p.a) return 0.0;
    if (s > p.b) return 2.0 / 3.0 * p.c * (p.b - p.a);
    const double ab = p.a - p.b;
    const double as = p.a - s;
    return -(2.0 * p.c * as * as * (p.a - 3.0 * p.b + 2.0 * s)) / (3.0 * ab * ab);
}

double bkp_b_prime(const BkPParams& p, double s) {
    s = clip_saturation(s);
    if (!(p.gamma > p.alpha + 1.0)) throw std::domain_error("bkp_b_prime: gamma <= alpha + 1");
    if (s <= p.a || s >= p.b) return 0.0;
    const double pre = p.d_tilde / p.mu * pow_from_a(s - p.a, p.gamma - p.alpha - 1.0) /
                       std::pow(p.b - p.a, p.gamma);
    return std::max(0.0, pre * (s - p.b) * (2.0 * p.a + s * (p.alpha - 2.0) - p.alpha * p.b));
}

double bkp_b(const BkPParams& p, double s) {
    s = clip_saturation(s);
    if (!(p.gamma > p.alpha + 1.0)) throw std::domain_error("bkp_b: gamma <= alpha + 1");
    if (s <= p.a) return 0.0;
    if (s > p.b) s = p.b;
    // Antiderivative of B'_kP from a to s. With x = s-a, w = b-a, m = gamma-alpha:
    //   B(s) = d~/(mu w^gamma) x^m [ (alpha-2) x^2/(m+2) - 2(alpha-1) w x/(m+1) + alpha w^2/m ]
    // At x = w the bracket collapses to 2 gamma w^2 / (m(m+1)(m+2)).
    const double x = s - p.a;
    const double w = p.b - p.a;
    const double m = p.gamma - p.alpha;
    const double bracket = (p.alpha - 2.0) * x * x / (m + 2.0) -
                           2.0 * (p.alpha - 1.0) * w * x / (m + 1.0) +
                           p.alpha * w * w / m;
    return p.d_tilde / (p.mu * std::pow(w, p.gamma)) * pow_from_a(x, m) * bracket;
}

double bkp_relative_permeability(const BkPParams& p, double s) {
    s = clip_saturation(s);
    if (s <= p.a) return 0.0;
    if (s >= p.b) return 1.0;
    return pow_from_a((s - p.a) / (p.b - p.a), p.gamma);
}

double bkp_capillary_pressure_deriv_unit(const BkPParams& p, double s) {
    s = clip_saturation(s);
    if (s <= p.a || s > p.b)
        throw std::domain_error("capillary pressure derivative defined on (a,b]");
    return -(s - p.b) * (2.0 * p.a - 2.0 * s - p.alpha * p.b + p.alpha * s) /
           pow_from_a(s - p.a, p.alpha + 1.0);
}

double b_value(const AbsorptionModel& m, double s) {
    return std::visit([s](const auto& p) {
        if constexpr (std::is_same_v<std::decay_t<decltype(p)>, NNParams>)
            return nn_b(p, s);
        else
            return bkp_b(p, s);
    }, m.variant);
}

double b_prime(const AbsorptionModel& m, double s) {
    return std::visit([s](const auto& p) {
        if constexpr (std::is_same_v<std::decay_t<decltype(p)>, NNParams>)
            return nn_b_prime(p, s);
        else
            return bkp_b_prime(p, s);
    }, m.variant);
}

double max_diffusivity(const AbsorptionModel& m) {
    if (const auto* nn = std::get_if<NNParams>(&m.variant)) return nn->c;
    const auto& p = std::get<BkPParams>(m.variant);
    p.validate();

    constexpr int kGridPoints = 2001;
    const double w = p.b - p.a;
    double best = 0.0;
    int best_i = 0;
    for (int i = 0; i <= kGridPoints; ++i) {
        const double s = p.a + w * i / kGridPoints;
        const double v = bkp_b_prime(p, std::min(s, 1.0));
        if (v > best) { best = v; best_i = i; }
    }
    // golden-section refinement in the bracketing interval around the argmax
    double lo = p.a + w * std::max(best_i - 1, 0) / kGridPoints;
    double hi = p.a + w * std::min(best_i + 1, kGridPoints) / kGridPoints;
    constexpr double kInvPhi = 0.6180339887498949;
    double x1 = hi - kInvPhi * (hi - lo);
    double x2 = lo + kInvPhi * (hi - lo);
    double f1 = bkp_b_prime(p, x1), f2 = bkp_b_prime(p, x2);
    while (hi - lo > 1e-10) {
        if (f1 < f2) {
            lo = x1; x1 = x2; f1 = f2;
            x2 = lo + kInvPhi * (hi - lo);
            f2 = bkp_b_prime(p, x2);
        } else {
            hi = x2; x2 = x1; f2 = f1;
            x1 = hi - kInvPhi * (hi - lo);
            f1 = bkp_b_prime(p, x1);
        }
    }
    return std::max(best, std::max(f1, f2));
}

}  // namespace imbibe

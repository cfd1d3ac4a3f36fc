#pragma once

// Displacement sensing with pure single-mode states: quantum Fisher information
// from the orthogonal quadrature variance, Cramer-Rao bound, squeezing equivalent.

#include <cmath>
#include <complex>
#include <numbers>

#include "gcs/compensated.hpp"
#include "gcs/errors.hpp"
#include "gcs/fock.hpp"

namespace gcs {

/// Poisson average <z_j> = sum_n P_n(alpha^2) exp(-i tau ((n+j)^eps - n^eps)),
/// truncated where the Poisson tail drops below 1e-16.
inline complex z_moment(const GcsParams& params, int j) {
    validate(params);
    if (j < 1) throw DomainError("z_moment: j must be >= 1");
    const double nbar = params.nbar();
    const int top = auto_cutoff(nbar, 1e-16);
    const auto weights = poisson_weights(nbar, top);
    CompensatedSum<complex> acc;
    for (int n = 0; n <= top; ++n) {
        const double shift = number_power(n + j, params.epsilon) - number_power(n, params.epsilon);
        acc += weights[static_cast<std::size_t>(n)] * std::polar(1.0, -params.tau * shift);
    }
    return acc.value();
}

/// Quadrature variance of a GCS expressed through Poisson averages of z_1, z_2:
///   1 + 2 nbar Re[e^{2i phi} (<z_2> - <z_1>^2)] + 2 nbar (1 - |<z_1>|^2).
/// Same quantity as quadrature_variance(make_gcs(params), angle) without a Fock vector.
inline double z_variance(const GcsParams& params, double angle) {
    const double nbar = params.nbar();
    const complex z1 = z_moment(params, 1);
    const complex z2 = z_moment(params, 2);
    const complex spread = z2 - z1 * z1;
    return 1.0 + 2.0 * nbar * (std::polar(1.0, 2.0 * angle) * spread).real() + 2.0 * nbar * (1.0 - std::norm(z1));
}

/// The expression 4 nbar (<Re[z_2]^2> - <Re[z_1]>^2) + 1 taken literally, with the
/// square inside the first average. Kept for comparison only: it does not reduce
/// to 1 for eps = 1 (it gives 4 nbar (cos^2 2tau - cos^2 tau) + 1), so it is never
/// used as the variance behind the Fisher information.
inline double literal_z_variance(const GcsParams& params) {
    validate(params);
    const double nbar = params.nbar();
    const int top = auto_cutoff(nbar, 1e-16);
    const auto weights = poisson_weights(nbar, top);
    CompensatedSum<double> re_z2_sq, re_z1;
    for (int n = 0; n <= top; ++n) {
        const double w = weights[static_cast<std::size_t>(n)];
        const double base = number_power(n, params.epsilon);
        const double c2 = std::cos(params.tau * (number_power(n + 2, params.epsilon) - base));
        const double c1 = std::cos(params.tau * (number_power(n + 1, params.epsilon) - base));
        re_z2_sq += w * c2 * c2;
        re_z1 += w * c1;
    }
    const double mean1 = re_z1.value();
    return 4.0 * nbar * (re_z2_sq.value() - mean1 * mean1) + 1.0;
}

/// Fisher information for a displacement along `displacement_angle`: four times
/// the variance of the quadrature orthogonal to it.
inline double qfi_direction(const FockState& state, double displacement_angle) {
    return 4.0 * quadrature_variance(state, displacement_angle + std::numbers::pi / 2);
}

struct QfiReport {
    double qfi = 0.0;
    double best_angle = 0.0;  ///< displacement direction in [0, pi)
    double variance = 0.0;    ///< orthogonal-quadrature variance, qfi / 4
    bool degenerate = false;  ///< <a^2> = <a>^2: every direction is optimal
};

/// Maximum over displacement directions, in closed form:
///   max_phi Var X_phi = 1 + 2 |<a^2> - <a>^2| + 2 (<n> - |<a>|^2),
/// reached at 2 phi = -arg(<a^2> - <a>^2); the displacement is phi - pi/2.
inline QfiReport qfi_max(const FockState& state) {
    const auto mom = ladder_expectations(state);
    const complex spread = mom.a2_mean - mom.a_mean * mom.a_mean;
    QfiReport report;
    report.variance = 1.0 + 2.0 * std::abs(spread) + 2.0 * (mom.n_mean - std::norm(mom.a_mean));
    report.qfi = 4.0 * report.variance;
    report.degenerate = std::abs(spread) <= 1e-9 * (1.0 + mom.n_mean);
    if (!report.degenerate) {
        const double quadrature = -0.5 * std::arg(spread);
        double angle = std::fmod(quadrature - std::numbers::pi / 2, std::numbers::pi);
        if (angle < 0.0) angle += std::numbers::pi;
        report.best_angle = angle;
    }
    return report;
}

/// qfi_max / 4(4 nbar + 1).
inline double normalized_qfi(const FockState& state, double nbar) {
    if (!(nbar > 0.0)) throw DomainError("normalized_qfi: nbar must be > 0");
    return qfi_max(state).qfi / (4.0 * (4.0 * nbar + 1.0));
}

/// Lower bound 1/sqrt(nbar * F) on the displacement uncertainty.
inline double cramer_rao(double qfi, double nbar) {
    if (!(qfi > 0.0) || !(nbar > 0.0)) throw DomainError("cramer_rao: qfi and nbar must be > 0");
    return 1.0 / std::sqrt(nbar * qfi);
}

/// Squeezing (dB) of a squeezed vacuum with the same optimal Fisher information, -10 log10(4 nbar + 1).
inline double squeezing_equivalent_db(double nbar) {
    if (!(nbar >= 0.0)) throw DomainError("squeezing_equivalent_db: nbar must be >= 0");
    return -10.0 * std::log10(4.0 * nbar + 1.0);
}

}  // namespace gcs

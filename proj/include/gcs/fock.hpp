#pragma once

// Truncated single-mode Fock-space states: construction of generalized coherent
// states, photon statistics, ladder moments and quadrature variances.

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gcs/compensated.hpp"
#include "gcs/errors.hpp"

namespace gcs {

using complex = std::complex<double>;

/// Pure state of one bosonic mode in the basis |0>, ..., |cutoff>.
///
/// Amplitudes are renormalized over the represented basis on construction; the
/// weight that was missing before renormalization is kept as `norm_deficit()`.
class FockState {
public:
    FockState() : amps_{complex{1.0, 0.0}} {}

    /// Normalizes `amps`. Throws DomainError for an empty or all-zero vector.
    static FockState from_amplitudes(std::vector<complex> amps) {
        if (amps.empty()) throw DomainError("FockState: empty amplitude vector");
        CompensatedSum<double> norm2;
        for (const auto& c : amps) norm2 += std::norm(c);
        const double total = norm2.value();
        if (!(total > 0.0) || !std::isfinite(total))
            throw DomainError("FockState: amplitudes have zero or non-finite norm");
        const double scale = 1.0 / std::sqrt(total);
        for (auto& c : amps) c *= scale;
        FockState s;
        s.amps_ = std::move(amps);
        s.norm_deficit_ = 1.0 - total;
        return s;
    }

    int cutoff() const noexcept { return static_cast<int>(amps_.size()) - 1; }
    std::span<const complex> amplitudes() const noexcept { return amps_; }
    complex operator[](int n) const { return amps_[static_cast<std::size_t>(n)]; }

    /// 1 - sum |c_n|^2 of the raw amplitudes, i.e. the probability lost to truncation.
    double norm_deficit() const noexcept { return norm_deficit_; }

private:
    std::vector<complex> amps_;
    double norm_deficit_ = 0.0;
};

/// Parameters of |alpha_{theta,eps}(t)> with the coupling folded into tau = theta * t.
struct GcsParams {
    double alpha = 0.0;    ///< real coherent amplitude, nbar = alpha^2
    double epsilon = 0.0;  ///< nonlinear exponent of the photon number
    double tau = 0.0;      ///< dimensionless evolution parameter

    double nbar() const noexcept { return alpha * alpha; }
    bool operator==(const GcsParams&) const = default;
};

inline void validate(const GcsParams& p) {
    if (!std::isfinite(p.alpha) || !std::isfinite(p.epsilon) || !std::isfinite(p.tau))
        throw DomainError("GcsParams: non-finite parameter");
    if (p.alpha < 0.0) throw DomainError("GcsParams: alpha must be >= 0");
    if (p.epsilon < 0.0) throw DomainError("GcsParams: epsilon must be >= 0");
}

/// n^eps with the convention 0^0 = 1 and 0^eps = 0 for eps > 0.
inline double number_power(int n, double epsilon) {
    if (n == 0) return epsilon == 0.0 ? 1.0 : 0.0;
    if (epsilon == 0.0) return 1.0;
    if (epsilon == 1.0) return static_cast<double>(n);
    if (epsilon == 2.0) return static_cast<double>(n) * n;
    return std::pow(static_cast<double>(n), epsilon);
}

/// Poisson(nbar) probabilities P_0..P_cutoff, evaluated in log space.
inline std::vector<double> poisson_weights(double nbar, int cutoff) {
    std::vector<double> p(static_cast<std::size_t>(cutoff) + 1, 0.0);
    if (nbar == 0.0) {
        p[0] = 1.0;
        return p;
    }
    const double log_nbar = std::log(nbar);
    for (int n = 0; n <= cutoff; ++n)
        p[static_cast<std::size_t>(n)] = std::exp(-nbar + n * log_nbar - std::lgamma(n + 1.0));
    return p;
}

/// Smallest N >= ceil(nbar) with P(X > N) < tail_tol for X ~ Poisson(nbar).
inline int auto_cutoff(double nbar, double tail_tol) {
    if (!std::isfinite(nbar) || !std::isfinite(tail_tol))
        throw DomainError("auto_cutoff: non-finite input");
    if (nbar < 0.0) throw DomainError("auto_cutoff: nbar must be >= 0");
    if (!(tail_tol > 0.0 && tail_tol < 1.0)) throw DomainError("auto_cutoff: tail_tol must lie in (0,1)");
    if (nbar == 0.0) return 0;

    // Extend the table until the remaining geometric tail is far below tail_tol.
    const double log_nbar = std::log(nbar);
    std::vector<double> pmf;
    for (int n = 0;; ++n) {
        const double p = std::exp(-nbar + n * log_nbar - std::lgamma(n + 1.0));
        pmf.push_back(p);
        if (n > nbar + 1 && p < 1e-6 * tail_tol * (1.0 - nbar / (n + 1.0))) break;
    }
    // tail[n] = P(X >= n), accumulated from the small end.
    std::vector<double> tail(pmf.size() + 1, 0.0);
    CompensatedSum<double> acc;
    for (std::size_t i = pmf.size(); i-- > 0;) {
        acc += pmf[i];
        tail[i] = acc.value();
    }
    const int floor_n = static_cast<int>(std::ceil(nbar));
    for (std::size_t n = 0; n + 1 < tail.size(); ++n) {
        if (tail[n + 1] < tail_tol) return std::max(static_cast<int>(n), floor_n);
    }
    return static_cast<int>(pmf.size()) - 1;
}

namespace detail {

/// |<n|alpha>| for n = 0..cutoff, anchored at the Poisson mode so that the
/// ratio recurrence |c_{n+1}| = |c_n| alpha / sqrt(n+1) never overflows.
inline std::vector<double> coherent_magnitudes(double alpha, int cutoff) {
    std::vector<double> mag(static_cast<std::size_t>(cutoff) + 1, 0.0);
    if (alpha == 0.0) {
        mag[0] = 1.0;
        return mag;
    }
    const double nbar = alpha * alpha;
    const int mode = std::min(cutoff, static_cast<int>(std::floor(nbar)));
    const double log_mode =
        -0.5 * nbar + mode * std::log(alpha) - 0.5 * std::lgamma(mode + 1.0);
    mag[static_cast<std::size_t>(mode)] = std::exp(log_mode);
    for (int n = mode; n < cutoff; ++n)
        mag[static_cast<std::size_t>(n) + 1] = mag[static_cast<std::size_t>(n)] * alpha / std::sqrt(n + 1.0);
    for (int n = mode; n > 0; --n)
        mag[static_cast<std::size_t>(n) - 1] = mag[static_cast<std::size_t>(n)] * std::sqrt(static_cast<double>(n)) / alpha;
    return mag;
}

inline void check_cutoff(int cutoff, const char* who) {
    if (cutoff < 0) throw DomainError(std::string(who) + ": cutoff must be >= 0");
}

}  // namespace detail

/// Generalized coherent state sum_n alpha^n e^{-alpha^2/2}/sqrt(n!) e^{-i tau n^eps} |n>.
inline FockState make_gcs(const GcsParams& params, int cutoff) {
    detail::check_cutoff(cutoff, "make_gcs");
    validate(params);
    const auto mag = detail::coherent_magnitudes(params.alpha, cutoff);
    std::vector<complex> amps(mag.size());
    for (int n = 0; n <= cutoff; ++n) {
        const double phase = -params.tau * number_power(n, params.epsilon);
        amps[static_cast<std::size_t>(n)] = std::polar(mag[static_cast<std::size_t>(n)], phase);
    }
    return FockState::from_amplitudes(std::move(amps));
}

/// Glauber coherent state with complex amplitude.
inline FockState coherent_state(complex alpha, int cutoff) {
    detail::check_cutoff(cutoff, "coherent_state");
    const auto mag = detail::coherent_magnitudes(std::abs(alpha), cutoff);
    const double arg = std::arg(alpha);
    std::vector<complex> amps(mag.size());
    for (int n = 0; n <= cutoff; ++n)
        amps[static_cast<std::size_t>(n)] = std::polar(mag[static_cast<std::size_t>(n)], arg * n);
    return FockState::from_amplitudes(std::move(amps));
}

/// Number state |n> on the basis 0..cutoff.
inline FockState fock_state(int n, int cutoff) {
    detail::check_cutoff(cutoff, "fock_state");
    if (n < 0 || n > cutoff) throw DomainError("fock_state: n must lie in [0, cutoff]");
    std::vector<complex> amps(static_cast<std::size_t>(cutoff) + 1);
    amps[static_cast<std::size_t>(n)] = 1.0;
    return FockState::from_amplitudes(std::move(amps));
}

/// (e^{-i pi/4}|alpha> + e^{i pi/4}|-alpha>)/sqrt(2), the Kerr cat at tau = pi/2.
inline FockState yurke_stoler_cat(double alpha, int cutoff) {
    detail::check_cutoff(cutoff, "yurke_stoler_cat");
    if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw DomainError("yurke_stoler_cat: alpha must be >= 0");
    const auto mag = detail::coherent_magnitudes(alpha, cutoff);
    const complex minus = std::polar(1.0, -std::numbers::pi / 4);
    const complex plus = std::polar(1.0, std::numbers::pi / 4);
    std::vector<complex> amps(mag.size());
    for (int n = 0; n <= cutoff; ++n) {
        const double m = mag[static_cast<std::size_t>(n)];
        const double sign = (n % 2 == 0) ? 1.0 : -1.0;
        amps[static_cast<std::size_t>(n)] = (minus * m + plus * (sign * m)) / std::numbers::sqrt2;
    }
    return FockState::from_amplitudes(std::move(amps));
}

/// <n^m> = sum_n n^m |c_n|^2.
inline double photon_moment(const FockState& state, int m) {
    if (m < 1) throw DomainError("photon_moment: order must be >= 1");
    CompensatedSum<double> acc;
    for (int n = 1; n <= state.cutoff(); ++n)
        acc += std::pow(static_cast<double>(n), m) * std::norm(state[n]);
    return acc.value();
}

/// Mandel Q = (Var n - <n>) / <n>.
inline double mandel_q(const FockState& state) {
    const double n1 = photon_moment(state, 1);
    if (!(n1 > 0.0)) throw UndefinedStatistic("mandel_q: undefined for <n> = 0");
    // Var n - <n> = <n(n-1)> - <n>^2 avoids one cancellation.
    CompensatedSum<double> fact2;
    for (int n = 2; n <= state.cutoff(); ++n)
        fact2 += static_cast<double>(n) * (n - 1) * std::norm(state[n]);
    return (fact2.value() - n1 * n1) / n1;
}

/// Normalized factorial-moment correlation g^(k) = <n(n-1)...(n-k+1)> / <n>^k.
inline double g_k(const FockState& state, int k) {
    if (k < 1 || k > state.cutoff())
        throw DomainError("g_k: order must satisfy 1 <= k <= cutoff");
    const double n1 = photon_moment(state, 1);
    if (!(n1 > 0.0)) throw UndefinedStatistic("g_k: undefined for <n> = 0");
    CompensatedSum<double> acc;
    for (int n = k; n <= state.cutoff(); ++n) {
        double falling = 1.0;
        for (int j = 0; j < k; ++j) falling *= static_cast<double>(n - j);
        acc += falling * std::norm(state[n]);
    }
    return acc.value() / std::pow(n1, k);
}

struct LadderMoments {
    complex a_mean;   ///< <a>
    complex a2_mean;  ///< <a^2>
    double n_mean;    ///< <a^dagger a>
};

inline LadderMoments ladder_expectations(const FockState& state) {
    CompensatedSum<complex> a, a2;
    const int top = state.cutoff();
    for (int n = 0; n + 1 <= top; ++n)
        a += state[n + 1] * std::conj(state[n]) * std::sqrt(n + 1.0);
    for (int n = 0; n + 2 <= top; ++n)
        a2 += state[n + 2] * std::conj(state[n]) * std::sqrt((n + 1.0) * (n + 2.0));
    return {a.value(), a2.value(), top >= 1 ? photon_moment(state, 1) : 0.0};
}

/// Variance of X_phi = a e^{i phi} + a^dagger e^{-i phi}; the vacuum gives 1.
inline double quadrature_variance(const LadderMoments& mom, double angle) {
    const complex spread = mom.a2_mean - mom.a_mean * mom.a_mean;
    const complex rot = std::polar(1.0, 2.0 * angle);
    return 1.0 + 2.0 * (rot * spread).real() + 2.0 * (mom.n_mean - std::norm(mom.a_mean));
}

inline double quadrature_variance(const FockState& state, double angle) {
    return quadrature_variance(ladder_expectations(state), angle);
}

/// |<a|b>|^2; the shorter state is zero-padded.
inline double fidelity(const FockState& a, const FockState& b) {
    const int top = std::min(a.cutoff(), b.cutoff());
    CompensatedSum<complex> overlap;
    for (int n = 0; n <= top; ++n) overlap += std::conj(a[n]) * b[n];
    return std::norm(overlap.value());
}

}  // namespace gcs

#pragma once

// Phase-space evaluation of single-mode Wigner functions.
//
// Conventions: beta = x + i y is the coherent amplitude, the vacuum is
// (2/pi) exp(-2|beta|^2) and every Wigner function is bounded by 2/pi.
//
// Three independent routes are provided:
//   * wigner_point_pure   - displaced parity, W = (2/pi) sum c_m^* c_n <m|D(2 beta)|n> (-1)^n
//   * wigner_point_closed - the closed double series for real-alpha GCS, summed in log space
//   * wigner_field        - grid evaluation of the displaced-parity series, grouped by radius
//
// The closed series for |alpha_{tau,eps}> reads
//   W = (2/pi) e^{-alpha^2 - 2r^2} [ e^{-alpha^2 + 4 alpha r cos d}
//         - 4 sum_{m>n} (-1)^n alpha^{m+n}/m! (2r)^{m-n} L_n^{m-n}(4r^2)
//             sin((m-n) d + tau (m^eps - n^eps)/2) sin(tau (m^eps - n^eps)/2) ]
// with beta = r e^{i d}. It follows from the displaced-parity sum through
// cos(A + B) = cos A - 2 sin(A + B/2) sin(B/2); the tests confirm both agree to 1e-12.

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstddef>
#include <limits>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "gcs/compensated.hpp"
#include "gcs/ensembles.hpp"
#include "gcs/errors.hpp"
#include "gcs/fock.hpp"
#include "gcs/laguerre.hpp"
#include "gcs/parallel.hpp"

namespace gcs {

inline constexpr double wigner_bound = 2.0 / std::numbers::pi;

/// Sampling of the square [-L, L]^2 with nx points along Re(beta) and ny along Im(beta).
struct PhaseGrid {
    double half_width = 6.0;
    int nx = 301;
    int ny = 301;

    static PhaseGrid square(double half_width, int points) { return {half_width, points, points}; }

    double step_x() const noexcept { return 2.0 * half_width / (nx - 1); }
    double step_y() const noexcept { return 2.0 * half_width / (ny - 1); }
    // Symmetric form keeps x(i) == -x(nx-1-i) bit for bit.
    double x(int i) const noexcept { return (2 * i - (nx - 1)) * (half_width / (nx - 1)); }
    double y(int j) const noexcept { return (2 * j - (ny - 1)) * (half_width / (ny - 1)); }
    complex beta(int i, int j) const noexcept { return {x(i), y(j)}; }
    std::size_t size() const noexcept { return static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny); }

    bool operator==(const PhaseGrid&) const = default;
};

inline void validate(const PhaseGrid& grid) {
    if (!(grid.half_width > 0.0) || !std::isfinite(grid.half_width))
        throw DomainError("PhaseGrid: half_width must be > 0");
    if (grid.nx < 2 || grid.ny < 2) throw DomainError("PhaseGrid: need at least 2 points per axis");
}

/// Default extent for a state of mean amplitude `alpha` on the basis 0..cutoff.
inline double default_half_width(double alpha, int cutoff) {
    return alpha + 5.0 + 0.5 * std::sqrt(static_cast<double>(cutoff));
}

inline double default_half_width(const FockState& s) {
    return default_half_width(std::sqrt(std::max(0.0, s.cutoff() > 0 ? photon_moment(s, 1) : 0.0)), s.cutoff());
}

inline double default_half_width(const Ensemble& e) {
    double width = 0.0;
    for (const auto& comp : e.components()) width = std::max(width, default_half_width(comp.state));
    return width;
}

/// Sampled Wigner function. values[j * nx + i] = W(grid.beta(i, j)).
struct WignerField {
    PhaseGrid grid;
    std::vector<double> values;

    double at(int i, int j) const { return values[static_cast<std::size_t>(j) * grid.nx + i]; }
    double min() const { return *std::min_element(values.begin(), values.end()); }
    double max() const { return *std::max_element(values.begin(), values.end()); }
};

namespace detail {

/// Off-diagonal bands of a density matrix with the parity sign folded in:
///   band(k)[n] = (-1)^n rho_{n, n+k} = (-1)^n sum_j w_j c_n^{(j)} conj(c_{n+k}^{(j)}).
class CoherenceBands {
public:
    explicit CoherenceBands(const FockState& s) : CoherenceBands(s.cutoff()) { add(1.0, s); }

    explicit CoherenceBands(const Ensemble& e) : CoherenceBands(e.cutoff()) {
        for (const auto& comp : e.components()) add(comp.weight, comp.state);
    }

    int cutoff() const noexcept { return cutoff_; }
    const std::vector<complex>& data() const noexcept { return data_; }

private:
    explicit CoherenceBands(int cutoff)
        : cutoff_(cutoff), data_(LaguerreRecurrence::triangle_size(cutoff)) {}

    void add(double weight, const FockState& s) {
        std::size_t i = 0;
        for (int k = 0; k <= cutoff_; ++k) {
            for (int n = 0; n + k <= cutoff_; ++n, ++i) {
                if (n + k > s.cutoff()) continue;
                const double sign = (n % 2 == 0) ? weight : -weight;
                data_[i] += sign * s[n] * std::conj(s[n + k]);
            }
        }
    }

    int cutoff_;
    std::vector<complex> data_;
};

/// Radial part of the displaced-parity sum. For fixed x = 4|beta|^2,
///   S_k = sum_n band(k)[n] M_n^k(x),   W = (2/pi) [Re S_0 + 2 Re sum_{k>=1} S_k u^k],
/// with u = beta/|beta|. Up to `lanes` radii are processed together; the
/// Laguerre recurrence runs along n and is independent across radii.
class RadialKernel {
public:
    static constexpr int lanes = 8;

    explicit RadialKernel(const LaguerreRecurrence& rec)
        : rec_(&rec),
          re_(static_cast<std::size_t>(rec.max_n() + 1) * lanes),
          im_(re_.size()) {}

    /// Computes S_k for the radii x[0..count), count <= lanes.
    void set_radii(const CoherenceBands& bands, const double* x, int count) {
        const int top = bands.cutoff();
        const auto& band = bands.data();
        alignas(64) double xs[lanes], root[lanes], head[lanes], m0[lanes], m1[lanes], m2[lanes];
        for (int l = 0; l < lanes; ++l) {
            xs[l] = l < count ? x[l] : x[0];
            root[l] = std::sqrt(xs[l]);
            head[l] = std::exp(-0.5 * xs[l]);
        }
        std::size_t i = 0;
        for (int k = 0; k <= top; ++k) {
            double* sre = re_.data() + static_cast<std::size_t>(k) * lanes;
            double* sim = im_.data() + static_cast<std::size_t>(k) * lanes;
            const int len = top - k + 1;
            if (k > 0) {
                const double s = rec_->inv_sqrt(k);
                for (int l = 0; l < lanes; ++l) head[l] *= root[l] * s;
            }
            const double b0r = band[i].real(), b0i = band[i].imag();
            for (int l = 0; l < lanes; ++l) {
                m0[l] = head[l];
                sre[l] = b0r * m0[l];
                sim[l] = b0i * m0[l];
            }
            if (len > 1) {
                const double s = rec_->inv_sqrt(k + 1);
                const double b1r = band[i + 1].real(), b1i = band[i + 1].imag();
                for (int l = 0; l < lanes; ++l) {
                    m1[l] = head[l] * (1.0 + k - xs[l]) * s;
                    sre[l] += b1r * m1[l];
                    sim[l] += b1i * m1[l];
                }
                const double* inv = rec_->inv_column(k);
                const double* back = rec_->back_column(k);
                for (int n = 1; n + 1 < len; ++n) {
                    const double c = 2.0 * n + 1.0 + k;
                    const double bn = back[n], in = inv[n];
                    const double br = band[i + n + 1].real(), bi = band[i + n + 1].imag();
                    for (int l = 0; l < lanes; ++l) {
                        m2[l] = ((c - xs[l]) * m1[l] - bn * m0[l]) * in;
                        sre[l] += br * m2[l];
                        sim[l] += bi * m2[l];
                        m0[l] = m1[l];
                        m1[l] = m2[l];
                    }
                }
            }
            i += static_cast<std::size_t>(len);
        }
        top_ = top;
    }

    /// W at direction u for radius lane `lane` of the last set_radii call.
    double value(int lane, complex u) const {
        const auto at = [&](int k) {
            const std::size_t p = static_cast<std::size_t>(k) * lanes + static_cast<std::size_t>(lane);
            return complex{re_[p], im_[p]};
        };
        double out = at(0).real();
        if (top_ >= 1) {
            complex acc = at(top_);
            for (int k = top_ - 1; k >= 1; --k) acc = acc * u + at(k);
            out += 2.0 * (acc * u).real();
        }
        return wigner_bound * out;
    }

private:
    const LaguerreRecurrence* rec_;
    std::vector<double> re_;  // [k][lane]
    std::vector<double> im_;
    int top_ = 0;
};

inline complex unit_direction(double x, double y) {
    const double r = std::hypot(x, y);
    return r > 0.0 ? complex{x / r, y / r} : complex{0.0, 0.0};
}

/// Index map from a square grid into a coarser or smaller square grid whose
/// nodes are a subset of its own: node i lies on known node (i - offset) / stride.
struct Nesting {
    const WignerField* known = nullptr;
    int stride = 0;
    int offset = 0;

    int map(int i) const noexcept {
        if (known == nullptr) return -1;
        const int t = i - offset;
        if (t < 0 || t % stride != 0) return -1;
        return t / stride < known->grid.nx ? t / stride : -1;
    }
};

inline Nesting find_nesting(const WignerField* known, const PhaseGrid& grid) {
    if (known == nullptr) return {};
    const PhaseGrid& k = known->grid;
    if (k.nx != k.ny || grid.nx != grid.ny || k.half_width > grid.half_width) return {};
    const double h = grid.step_x();
    const double ratio = k.step_x() / h;
    const double stride = std::nearbyint(ratio);
    const double shift = (grid.half_width - k.half_width) / h;
    const double offset = std::nearbyint(shift);
    if (stride < 1.0 || std::abs(ratio - stride) > 1e-9 || std::abs(shift - offset) > 1e-9) return {};
    if (offset + stride * (k.nx - 1) > grid.nx - 1) return {};
    return {known, static_cast<int>(stride), static_cast<int>(offset)};
}

/// Grid evaluation. Points with 4|beta|^2 > skip_x are left at 0; callers pass
/// a radius beyond which |W| is known to be negligible (see negligible_radius).
/// Nodes shared with `known` (a previous evaluation of the same bands on a
/// nested square grid) are copied instead of recomputed.
inline WignerField evaluate_field(const CoherenceBands& bands, const PhaseGrid& grid, int threads,
                                  double skip_x = std::numeric_limits<double>::infinity(),
                                  const WignerField* known = nullptr) {
    validate(grid);
    WignerField field{grid, std::vector<double>(grid.size(), 0.0)};
    const LaguerreRecurrence rec(bands.cutoff());
    constexpr int lanes = RadialKernel::lanes;

    if (grid.nx != grid.ny) {
        parallel_for(static_cast<std::size_t>(grid.ny), threads, [&](std::size_t jj) {
            RadialKernel kernel(rec);
            const int j = static_cast<int>(jj);
            const double by = grid.y(j);
            double xs[lanes];
            for (int i0 = 0; i0 < grid.nx; i0 += lanes) {
                const int count = std::min(lanes, grid.nx - i0);
                bool far = true;
                for (int l = 0; l < count; ++l) {
                    const double bx = grid.x(i0 + l);
                    xs[l] = 4.0 * (bx * bx + by * by);
                    far = far && xs[l] > skip_x;
                }
                if (far) continue;
                kernel.set_radii(bands, xs, count);
                for (int l = 0; l < count; ++l)
                    field.values[static_cast<std::size_t>(j) * grid.nx + i0 + l] =
                        kernel.value(l, unit_direction(grid.x(i0 + l), by));
            }
        });
        return field;
    }

    // Square grid: offsets o = 2i - (n-1) are symmetric, so every radius is shared
    // by up to eight points related by reflections. Work over the octant a >= b >= 0.
    const int n = grid.nx;
    const int last = n - 1;
    const double half_step = grid.half_width / last;
    const int first = last % 2;  // smallest non-negative offset
    const auto octant_rows = static_cast<std::size_t>((last - first) / 2 + 1);
    const Nesting nest = find_nesting(known, grid);

    // Calls fn(i, j) once for each distinct reflection of offsets (a, b).
    const auto for_reflections = [last](int a, int b, auto&& fn) {
        std::array<std::pair<int, int>, 8> seen{};
        int filled = 0;
        for (auto [ox, oy] : {std::pair{a, b}, std::pair{b, a}}) {
            for (int sx : {1, -1}) {
                for (int sy : {1, -1}) {
                    const std::pair<int, int> off{sx * ox, sy * oy};
                    if (std::find(seen.begin(), seen.begin() + filled, off) != seen.begin() + filled) continue;
                    seen[static_cast<std::size_t>(filled++)] = off;
                    fn((off.first + last) / 2, (off.second + last) / 2);
                }
            }
        }
    };

    parallel_for(octant_rows, threads, [&](std::size_t row) {
        RadialKernel kernel(rec);
        const int a = first + 2 * static_cast<int>(row);
        const double ra = a * half_step;
        if (4.0 * ra * ra > skip_x) return;
        const int ka = nest.map((a + last) / 2);
        double xs[lanes];
        int pending[lanes];
        int count = 0;
        const auto flush = [&] {
            kernel.set_radii(bands, xs, count);
            for (int l = 0; l < count; ++l) {
                for_reflections(a, pending[l], [&](int i, int j) {
                    field.values[static_cast<std::size_t>(j) * n + i] =
                        kernel.value(l, unit_direction(grid.x(i), grid.y(j)));
                });
            }
            count = 0;
        };
        for (int b = first; b <= a; b += 2) {
            const double rb = b * half_step;
            const double x = 4.0 * (ra * ra + rb * rb);
            if (x > skip_x) break;  // radii only grow with b
            if (ka >= 0 && nest.map((b + last) / 2) >= 0) {
                for_reflections(a, b, [&](int i, int j) {
                    field.values[static_cast<std::size_t>(j) * n + i] = nest.known->at(nest.map(i), nest.map(j));
                });
                continue;
            }
            xs[count] = x;
            pending[count++] = b;
            if (count == lanes) flush();
        }
        if (count > 0) flush();
    });
    return field;
}

/// Smallest x = 4|beta|^2 (on a coarse ladder) beyond which |W| < threshold.
///
/// Past x = 4N + 2 every normalized Laguerre function M_n^k with n + k <= N is
/// outside its oscillatory region and decreases monotonically, so the bound
/// (2/pi) sum |band| |M| evaluated at one x holds for all larger x.
inline double negligible_radius(const CoherenceBands& bands, double threshold) {
    const int top = bands.cutoff();
    const LaguerreRecurrence rec(top);
    std::vector<double> table;
    const auto& band = bands.data();
    for (double x = 4.0 * top + 10.0; x < 1e6; x += 8.0 + 0.1 * x) {
        rec.fill(x, table);
        double bound = 0.0;
        std::size_t i = 0;
        for (int k = 0; k <= top; ++k)
            for (int n = 0; n + k <= top; ++n, ++i)
                bound += (k == 0 ? 1.0 : 2.0) * std::abs(band[i]) * std::abs(table[i]);
        if (wigner_bound * bound < threshold) return x;
    }
    return std::numeric_limits<double>::infinity();
}

}  // namespace detail

/// Displaced-parity Wigner value of a pure state, summing all (m, n) pairs.
/// Throws NumericalConsistencyError if the imaginary residue exceeds 1e-8.
inline double wigner_point_pure(const FockState& state, complex beta) {
    const int top = state.cutoff();
    const LaguerreRecurrence rec(top);
    std::vector<double> table;
    const complex zeta = 2.0 * beta;
    rec.fill(std::norm(zeta), table);
    const complex u = detail::unit_direction(zeta.real(), zeta.imag());

    // phase[k] = u^k; the m < n elements use (-conj u)^k.
    std::vector<complex> up(static_cast<std::size_t>(top) + 1), down(up.size());
    up[0] = down[0] = 1.0;
    for (int k = 1; k <= top; ++k) {
        up[static_cast<std::size_t>(k)] = up[static_cast<std::size_t>(k) - 1] * u;
        down[static_cast<std::size_t>(k)] = down[static_cast<std::size_t>(k) - 1] * -std::conj(u);
    }
    CompensatedSum<complex> acc;
    for (int m = 0; m <= top; ++m) {
        for (int n = 0; n <= top; ++n) {
            // <m|D(zeta)|n>
            const complex element = m >= n
                ? table[rec.index(m - n, n)] * up[static_cast<std::size_t>(m - n)]
                : table[rec.index(n - m, m)] * down[static_cast<std::size_t>(n - m)];
            const double parity = (n % 2 == 0) ? 1.0 : -1.0;
            acc += std::conj(state[m]) * state[n] * element * parity;
        }
    }
    const complex total = acc.value();
    if (std::abs(total.imag()) > 1e-8)
        throw NumericalConsistencyError("wigner_point_pure: imaginary residue " + std::to_string(total.imag()));
    return wigner_bound * total.real();
}

/// Closed double series for a real-alpha GCS truncated at m, n <= cutoff.
/// Each term is assembled in log space with explicit sign tracking.
inline double wigner_point_closed(const GcsParams& params, complex beta, int cutoff) {
    validate(params);
    if (cutoff < 0) throw DomainError("wigner_point_closed: cutoff must be >= 0");
    const double alpha = params.alpha;
    const double r = std::abs(beta);
    const double delta = std::arg(beta);
    const double a2 = alpha * alpha;

    const double lead = std::exp(-2.0 * a2 + 4.0 * alpha * r * std::cos(delta) - 2.0 * r * r);
    if (alpha == 0.0 || r == 0.0) return wigner_bound * lead;

    std::vector<double> half_phase(static_cast<std::size_t>(cutoff) + 1), log_fact(half_phase.size());
    for (int n = 0; n <= cutoff; ++n) {
        half_phase[static_cast<std::size_t>(n)] = 0.5 * params.tau * number_power(n, params.epsilon);
        log_fact[static_cast<std::size_t>(n)] = std::lgamma(n + 1.0);
    }
    const double log_alpha = std::log(alpha);
    const double log_2r = std::log(2.0 * r);
    const double x = 4.0 * r * r;
    const double envelope = -a2 - 2.0 * r * r;

    CompensatedSum<double> series;
    std::vector<double> column;
    for (int k = 1; k <= cutoff; ++k) {
        laguerre_column(k, x, column, cutoff - k + 1);
        for (int n = 0; n + k <= cutoff; ++n) {
            const int m = n + k;
            const double lag = column[static_cast<std::size_t>(n)];
            if (!std::isfinite(lag))
                throw OverflowError("wigner_point_closed: Laguerre value overflow at n=" + std::to_string(n) +
                                    ", k=" + std::to_string(k));
            if (lag == 0.0) continue;
            const double half = half_phase[static_cast<std::size_t>(m)] - half_phase[static_cast<std::size_t>(n)];
            const double trig = std::sin(k * delta + half) * std::sin(half);
            if (trig == 0.0) continue;
            const double log_mag = (m + n) * log_alpha - log_fact[static_cast<std::size_t>(m)] + k * log_2r +
                                   std::log(std::abs(lag)) + envelope;
            double sign = (n % 2 == 0) ? 1.0 : -1.0;
            if (lag < 0.0) sign = -sign;
            series += sign * std::exp(log_mag) * trig;
        }
    }
    const double value = wigner_bound * (lead - 4.0 * series.value());
    if (!std::isfinite(value)) throw OverflowError("wigner_point_closed: non-finite result");
    return value;
}

inline WignerField wigner_field(const FockState& state, const PhaseGrid& grid, int threads = 1) {
    return detail::evaluate_field(detail::CoherenceBands(state), grid, threads);
}

/// Mixture field, sum_j w_j W_j, built from the weighted density-matrix bands in one pass.
inline WignerField wigner_field(const Ensemble& ensemble, const PhaseGrid& grid, int threads = 1) {
    return detail::evaluate_field(detail::CoherenceBands(ensemble), grid, threads);
}

/// Composite trapezoidal rule over [-L, L]^2.
inline double integrate_field(const WignerField& field) {
    const auto& g = field.grid;
    CompensatedSum<double> acc;
    for (int j = 0; j < g.ny; ++j) {
        const double wy = (j == 0 || j == g.ny - 1) ? 0.5 : 1.0;
        for (int i = 0; i < g.nx; ++i) {
            const double wx = (i == 0 || i == g.nx - 1) ? 0.5 : 1.0;
            acc += wx * wy * field.at(i, j);
        }
    }
    return acc.value() * g.step_x() * g.step_y();
}

namespace detail {

/// Integral of max(f, 0) over a triangle of unit area, f linear with vertex values a, b, c.
inline double positive_part_unit_triangle(double a, double b, double c) {
    if (a > b) std::swap(a, b);
    if (b > c) std::swap(b, c);
    if (a > b) std::swap(a, b);
    if (c <= 0.0) return 0.0;
    if (a >= 0.0) return (a + b + c) / 3.0;
    if (b <= 0.0) return c * c * c / ((c - a) * (c - b)) / 3.0;
    return (a + b + c) / 3.0 - a * a * a / ((b - a) * (c - a)) / 3.0;
}

}  // namespace detail

/// Single-grid estimate of int (|W| - W) = 2 int max(-W, 0).
///
/// The samples are interpolated linearly on triangles, averaging both diagonal
/// splits of every cell, and the negative part is integrated exactly. The error
/// is a smooth O(h^2) series, which is what makes Richardson extrapolation in
/// `negativity` effective despite the kinks of |W| along the nodal lines.
inline double field_negativity(const WignerField& field) {
    const auto& g = field.grid;
    const double tri_area = 0.5 * g.step_x() * g.step_y();
    CompensatedSum<double> acc;
    for (int j = 0; j + 1 < g.ny; ++j) {
        for (int i = 0; i + 1 < g.nx; ++i) {
            const double f00 = -field.at(i, j), f10 = -field.at(i + 1, j);
            const double f01 = -field.at(i, j + 1), f11 = -field.at(i + 1, j + 1);
            if (f00 <= 0.0 && f10 <= 0.0 && f01 <= 0.0 && f11 <= 0.0) continue;
            double cell;
            if (f00 >= 0.0 && f10 >= 0.0 && f01 >= 0.0 && f11 >= 0.0) {
                cell = 0.5 * (f00 + f10 + f01 + f11);
            } else {
                using detail::positive_part_unit_triangle;
                cell = 0.5 * (positive_part_unit_triangle(f00, f10, f11) + positive_part_unit_triangle(f00, f01, f11) +
                              positive_part_unit_triangle(f00, f10, f01) + positive_part_unit_triangle(f10, f11, f01));
            }
            acc += cell;
        }
    }
    return 2.0 * tri_area * acc.value();
}

/// Adaptive refinement settings for `negativity`.
struct GridPolicy {
    double half_width = 0.0;  ///< 0 selects alpha + 5 + sqrt(cutoff)/2
    int points = 301;          ///< starting samples per axis (forced odd)
    int max_points = 2401;     ///< resolution budget
    double extent_step = 2.0;  ///< growth of L when the extent check fails
    int max_extensions = 4;
    double abs_floor = 1e-10;  ///< absolute slack in the convergence test
    int threads = 1;

    bool operator==(const GridPolicy&) const = default;
};

namespace detail {

// Pointwise |W| below this is treated as exactly zero by the negativity estimators.
inline constexpr double negligible_wigner = 1e-18;

inline WignerField subsample(const WignerField& fine) {
    const auto& g = fine.grid;
    WignerField coarse{{g.half_width, (g.nx + 1) / 2, (g.ny + 1) / 2}, {}};
    coarse.values.reserve(coarse.grid.size());
    for (int j = 0; j < g.ny; j += 2)
        for (int i = 0; i < g.nx; i += 2) coarse.values.push_back(fine.at(i, j));
    return coarse;
}

/// Richardson-extrapolated negativity from a field and its every-other-point subsample.
inline double extrapolated_negativity(const WignerField& field) {
    const double fine = field_negativity(field);
    const double coarse = field_negativity(subsample(field));
    return (4.0 * fine - coarse) / 3.0;
}

/// Drives grid refinement for a family of targets evaluated on shared grids.
/// `estimate(grid)` returns one extrapolated estimate per target.
template <class Estimate>
std::vector<double> converge_negativity(Estimate&& estimate, double half_width, const GridPolicy& policy,
                                        double rel_tol) {
    if (!(rel_tol > 0.0 && rel_tol <= 0.1)) throw DomainError("negativity: rel_tol must lie in (0, 0.1]");
    int n = std::max(5, policy.points | 1);
    double L = half_width;

    auto close = [&](const std::vector<double>& a, const std::vector<double>& b, double& worst_a, double& worst_b) {
        bool ok = true;
        double worst = -1.0;
        for (std::size_t i = 0; i < a.size(); ++i) {
            const double gap = std::abs(a[i] - b[i]);
            const double slack = rel_tol * std::max(std::abs(a[i]), std::abs(b[i])) + policy.abs_floor;
            if (gap > slack) ok = false;
            if (gap - slack > worst) {
                worst = gap - slack;
                worst_a = a[i];
                worst_b = b[i];
            }
        }
        return ok;
    };

    auto prev = estimate(PhaseGrid::square(L, n));
    std::vector<double> older;  // estimate preceding prev, reported when the budget runs out
    int extensions = 0;
    for (;;) {
        const int refined = 2 * n - 1;
        double wa = 0.0, wb = 0.0;
        if (refined > policy.max_points) {
            close(older.empty() ? prev : older, prev, wa, wb);
            throw ConvergenceError("negativity: resolution budget exhausted", wa, wb);
        }
        auto cur = estimate(PhaseGrid::square(L, refined));
        if (!close(prev, cur, wa, wb)) {
            n = refined;
            older = std::move(prev);
            prev = std::move(cur);
            continue;
        }
        // Resolution settled; grow the square at the coarser spacing and compare.
        const double h = 2.0 * L / (n - 1);
        const int pad = static_cast<int>(std::ceil(policy.extent_step / h - 1e-9));
        const double wider_L = L + pad * h;
        const int wider_n = n + 2 * pad;
        auto wide = estimate(PhaseGrid::square(wider_L, wider_n));
        if (close(prev, wide, wa, wb)) {
            for (auto& v : cur) v = std::max(0.0, v);
            return cur;
        }
        if (++extensions > policy.max_extensions)
            throw ConvergenceError("negativity: extent budget exhausted", wa, wb);
        L = wider_L;
        n = wider_n;
        older = std::move(prev);
        prev = std::move(wide);
    }
}

/// The last two fields of one source, handed back to evaluate_field so that nodes
/// shared between refinement levels are computed once.
class FieldCache {
public:
    FieldCache(const CoherenceBands& bands, double skip_x, int threads)
        : bands_(&bands), skip_x_(skip_x), threads_(threads) {}

    const WignerField& evaluate(const PhaseGrid& grid) {
        const WignerField* known = nullptr;
        int reuse = -1;
        for (const auto& f : fields_) {
            const Nesting nest = find_nesting(&f, grid);
            if (nest.known != nullptr && f.grid.nx / nest.stride > reuse) {
                reuse = f.grid.nx / nest.stride;
                known = &f;
            }
        }
        WignerField next = evaluate_field(*bands_, grid, threads_, skip_x_, known);
        if (fields_.size() == 2) fields_.erase(fields_.begin());
        fields_.push_back(std::move(next));
        return fields_.back();
    }

private:
    const CoherenceBands* bands_;
    double skip_x_;
    int threads_;
    std::vector<WignerField> fields_;
};

template <class Source>
double negativity_impl(const Source& source, double rel_tol, const GridPolicy& policy) {
    const CoherenceBands bands(source);
    const double L = policy.half_width > 0.0 ? policy.half_width : default_half_width(source);
    FieldCache cache(bands, negligible_radius(bands, negligible_wigner), policy.threads);
    auto estimate = [&](const PhaseGrid& grid) {
        return std::vector<double>{extrapolated_negativity(cache.evaluate(grid))};
    };
    return converge_negativity(estimate, L, policy, rel_tol).front();
}

}  // namespace detail

/// Converged int (|W| - W) over phase space. Grids are refined (spacing halved,
/// extent grown) until successive Richardson estimates agree within rel_tol.
inline double negativity(const FockState& state, double rel_tol, const GridPolicy& policy = {}) {
    return detail::negativity_impl(state, rel_tol, policy);
}

inline double negativity(const Ensemble& ensemble, double rel_tol, const GridPolicy& policy = {}) {
    return detail::negativity_impl(ensemble, rel_tol, policy);
}

/// Negativities of several mixtures of the same member states, sharing the
/// member fields across all weight vectors: result[s] = N(sum_j weights[s][j] W_j).
inline std::vector<double> negativity_family(const std::vector<FockState>& members,
                                             const std::vector<std::vector<double>>& weights, double rel_tol,
                                             const GridPolicy& policy = {}) {
    if (members.empty()) throw DomainError("negativity_family: no member states");
    for (const auto& w : weights)
        if (w.size() != members.size()) throw DomainError("negativity_family: weight vector length mismatch");
    std::vector<detail::CoherenceBands> bands;
    bands.reserve(members.size());
    double L = policy.half_width;
    for (const auto& m : members) {
        bands.emplace_back(m);
        if (policy.half_width <= 0.0) L = std::max(L, default_half_width(m));
    }
    std::vector<detail::FieldCache> caches;
    caches.reserve(members.size());
    for (const auto& b : bands)
        caches.emplace_back(b, detail::negligible_radius(b, detail::negligible_wigner), policy.threads);
    auto estimate = [&](const PhaseGrid& grid) {
        std::vector<const WignerField*> fields;
        fields.reserve(members.size());
        for (auto& c : caches) fields.push_back(&c.evaluate(grid));
        std::vector<double> out;
        out.reserve(weights.size());
        WignerField mix{grid, std::vector<double>(grid.size())};
        for (const auto& w : weights) {
            for (std::size_t p = 0; p < grid.size(); ++p) {
                double v = 0.0;
                for (std::size_t j = 0; j < fields.size(); ++j) v += w[j] * fields[j]->values[p];
                mix.values[p] = v;
            }
            out.push_back(detail::extrapolated_negativity(mix));
        }
        return out;
    };
    if (weights.empty()) return {};
    return detail::converge_negativity(estimate, L, policy, rel_tol);
}

/// Negativity of |n>, the normalization reference.
inline double fock_negativity(int n, double rel_tol, const GridPolicy& policy = {}) {
    if (n < 0) throw DomainError("fock_negativity: n must be >= 0");
    return negativity(fock_state(n, n), rel_tol, policy);
}

/// Index of the Fock reference for a mean photon number (nearest, ties to even).
inline int reference_fock_number(double nbar) {
    if (!(nbar > 0.0) || !std::isfinite(nbar)) throw DomainError("normalized_negativity: nbar must be > 0");
    const double k = std::nearbyint(nbar);
    if (k < 1.0) throw DomainError("normalized_negativity: nbar rounds to 0");
    return static_cast<int>(k);
}

template <class Source>
double normalized_negativity(const Source& source, double nbar, double rel_tol, const GridPolicy& policy = {}) {
    const int ref = reference_fock_number(nbar);
    return negativity(source, rel_tol, policy) / fock_negativity(ref, rel_tol, policy);
}

}  // namespace gcs

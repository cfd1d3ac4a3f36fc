#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "gcs/errors.hpp"

namespace gcs {

/// Associated Laguerre polynomial L_n^k(x) by upward three-term recurrence in n:
///   (j+1) L_{j+1} = (2j+1+k-x) L_j - (j+k) L_{j-1}.
inline double laguerre_assoc(int n, int k, double x) {
    if (n < 0 || k < 0) throw DomainError("laguerre_assoc: n and k must be >= 0");
    double prev = 1.0;
    if (n == 0) return prev;
    double cur = 1.0 + k - x;
    for (int j = 1; j < n; ++j) {
        const double next = ((2.0 * j + 1.0 + k - x) * cur - (j + k) * prev) / (j + 1.0);
        prev = cur;
        cur = next;
    }
    return cur;
}

/// Column L_0^k(x), ..., L_{count-1}^k(x) of unnormalized polynomials.
inline void laguerre_column(int k, double x, std::vector<double>& out, int count) {
    out.resize(static_cast<std::size_t>(count));
    if (count == 0) return;
    out[0] = 1.0;
    if (count == 1) return;
    out[1] = 1.0 + k - x;
    for (int j = 1; j + 1 < count; ++j)
        out[static_cast<std::size_t>(j) + 1] =
            ((2.0 * j + 1.0 + k - x) * out[static_cast<std::size_t>(j)] -
             (j + k) * out[static_cast<std::size_t>(j) - 1]) /
            (j + 1.0);
}

/// Recurrence coefficients for the normalized Laguerre functions
///   M_n^k(x) = sqrt(n!/(n+k)!) x^{k/2} e^{-x/2} L_n^k(x),
/// which are the magnitudes of Fock-basis displacement matrix elements
/// |<n+k|D(z)|n>| at x = |z|^2 and never exceed 1. Independent of x, so
/// one instance serves a whole grid.
class LaguerreRecurrence {
public:
    explicit LaguerreRecurrence(int max_n) : max_n_(max_n) {
        if (max_n < 0) throw DomainError("LaguerreRecurrence: max_n must be >= 0");
        const std::size_t size = triangle_size(max_n);
        inv_.resize(size);
        back_.resize(size);
        for (int k = 0; k <= max_n; ++k) {
            for (int n = 0; n + k <= max_n; ++n) {
                const std::size_t i = index(k, n);
                inv_[i] = 1.0 / std::sqrt((n + 1.0) * (n + k + 1.0));
                back_[i] = std::sqrt(static_cast<double>(n) * (n + k));
            }
        }
        inv_sqrt_.resize(static_cast<std::size_t>(max_n) + 2);
        for (std::size_t j = 0; j < inv_sqrt_.size(); ++j)
            inv_sqrt_[j] = j == 0 ? 0.0 : 1.0 / std::sqrt(static_cast<double>(j));
    }

    int max_n() const noexcept { return max_n_; }

    /// 1/sqrt((n+1)(n+k+1)) and sqrt(n(n+k)) for n = 0..max_n-k.
    const double* inv_column(int k) const noexcept { return inv_.data() + index(k, 0); }
    const double* back_column(int k) const noexcept { return back_.data() + index(k, 0); }
    double inv_sqrt(int j) const noexcept { return inv_sqrt_[static_cast<std::size_t>(j)]; }

    /// Flattened (k, n) position for n + k <= max_n.
    std::size_t index(int k, int n) const noexcept {
        const auto kk = static_cast<std::size_t>(k);
        return kk * static_cast<std::size_t>(max_n_ + 1) - kk * (kk - 1) / 2 + static_cast<std::size_t>(n);
    }

    static std::size_t triangle_size(int max_n) {
        const auto m = static_cast<std::size_t>(max_n) + 1;
        return m * (m + 1) / 2;
    }

    /// Fills `table` with M_n^k(x) for all n + k <= max_n.
    void fill(double x, std::vector<double>& table) const {
        table.resize(triangle_size(max_n_));
        const double root_x = std::sqrt(x);
        double head = std::exp(-0.5 * x);  // M_0^k(x), advanced in k
        for (int k = 0; k <= max_n_; ++k) {
            if (k > 0) head *= root_x * inv_sqrt_[static_cast<std::size_t>(k)];
            const std::size_t base = index(k, 0);
            const int len = max_n_ - k + 1;
            double* col = table.data() + base;
            col[0] = head;
            if (len == 1) continue;
            col[1] = head * (1.0 + k - x) * inv_sqrt_[static_cast<std::size_t>(k) + 1];
            const double* inv = inv_.data() + base;
            const double* back = back_.data() + base;
            for (int n = 1; n + 1 < len; ++n)
                col[n + 1] = ((2.0 * n + 1.0 + k - x) * col[n] - back[n] * col[n - 1]) * inv[n];
        }
    }

private:
    int max_n_;
    std::vector<double> inv_;
    std::vector<double> back_;
    std::vector<double> inv_sqrt_;
};

}  // namespace gcs

#pragma once

#include <cmath>
#include <complex>
#include <ranges>

namespace gcs {

/// Neumaier (improved Kahan-Babuska) running sum.
template <class T>
class CompensatedSum;

template <>
class CompensatedSum<double> {
public:
    CompensatedSum() = default;
    explicit CompensatedSum(double init) : sum_(init) {}

    CompensatedSum& operator+=(double x) noexcept {
        const double t = sum_ + x;
        if (std::abs(sum_) >= std::abs(x))
            carry_ += (sum_ - t) + x;
        else
            carry_ += (x - t) + sum_;
        sum_ = t;
        return *this;
    }

    double value() const noexcept { return sum_ + carry_; }

private:
    double sum_ = 0.0;
    double carry_ = 0.0;
};

template <>
class CompensatedSum<std::complex<double>> {
public:
    CompensatedSum& operator+=(std::complex<double> z) noexcept {
        re_ += z.real();
        im_ += z.imag();
        return *this;
    }

    std::complex<double> value() const noexcept { return {re_.value(), im_.value()}; }

private:
    CompensatedSum<double> re_;
    CompensatedSum<double> im_;
};

template <std::ranges::input_range R>
double compensated_sum(const R& values) {
    CompensatedSum<double> acc;
    for (double v : values) acc += v;
    return acc.value();
}

}  // namespace gcs

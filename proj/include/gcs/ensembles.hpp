#pragma once

// Werner-state preparation of the atomic subsystem and the induced statistical
// mixture of generalized coherent states carried by the field.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "gcs/compensated.hpp"
#include "gcs/errors.hpp"
#include "gcs/fock.hpp"

namespace gcs {

/// rho_a(0) = p |Psi><Psi| + (1-p) 1/d with |Psi> = sum_j c_j |lambda_j>.
///
/// `taus[j]` is the evolution parameter picked up by the field while the atoms
/// sit in eigenstate j (coupling times eigenvalue times time).
struct WernerSpec {
    double p = 1.0;
    std::vector<complex> c;
    std::vector<double> taus;

    int dimension() const noexcept { return static_cast<int>(c.size()); }
    bool operator==(const WernerSpec&) const = default;
};

inline void validate(const WernerSpec& spec) {
    if (!(spec.p >= 0.0 && spec.p <= 1.0)) throw DomainError("WernerSpec: p must lie in [0,1]");
    if (spec.c.size() < 2) throw DomainError("WernerSpec: dimension d must be >= 2");
    if (spec.taus.size() != spec.c.size())
        throw DomainError("WernerSpec: c and taus must have the same length");
    CompensatedSum<double> norm2;
    for (const auto& cj : spec.c) norm2 += std::norm(cj);
    if (std::abs(norm2.value() - 1.0) > 1e-12)
        throw DomainError("WernerSpec: sum |c_j|^2 must equal 1");
    for (double t : spec.taus)
        if (!std::isfinite(t)) throw DomainError("WernerSpec: non-finite tau");
}

/// Weighted pure-state mixture sum_j w_j |psi_j><psi_j|.
class Ensemble {
public:
    struct Component {
        double weight;
        FockState state;
    };

    Ensemble() = default;

    /// Throws DomainError unless weights are >= 0 and sum to 1 within 1e-12.
    explicit Ensemble(std::vector<Component> components) : components_(std::move(components)) {
        if (components_.empty()) throw DomainError("Ensemble: no components");
        CompensatedSum<double> total;
        for (const auto& comp : components_) {
            if (!(comp.weight >= 0.0)) throw DomainError("Ensemble: negative weight");
            total += comp.weight;
        }
        if (std::abs(total.value() - 1.0) > 1e-12) throw DomainError("Ensemble: weights must sum to 1");
    }

    const std::vector<Component>& components() const noexcept { return components_; }
    std::size_t size() const noexcept { return components_.size(); }

    int cutoff() const noexcept {
        int top = 0;
        for (const auto& comp : components_) top = std::max(top, comp.state.cutoff());
        return top;
    }

private:
    std::vector<Component> components_;
};

/// w_j = p |c_j|^2 + (1-p)/d, written as 1/d + p (|c_j|^2 - 1/d). Amplitudes
/// that are uniform up to rounding (|c_j|^2 within 1e-14 of 1/d, e.g. c_j = 1/sqrt(3))
/// give exactly 1/d for every p.
inline std::vector<double> werner_weights(const WernerSpec& spec) {
    validate(spec);
    const double inv_d = 1.0 / spec.dimension();
    bool uniform = true;
    for (const auto& cj : spec.c) uniform = uniform && std::abs(std::norm(cj) - inv_d) <= 1e-14;
    std::vector<double> w;
    w.reserve(spec.c.size());
    for (const auto& cj : spec.c) w.push_back(uniform ? inv_d : inv_d + spec.p * (std::norm(cj) - inv_d));
    return w;
}

/// Field state after the atom-field evolution; no pruning or deduplication of components.
inline Ensemble evolve_werner(const WernerSpec& spec, double alpha, double epsilon, int cutoff) {
    const auto weights = werner_weights(spec);
    std::vector<Ensemble::Component> comps;
    comps.reserve(weights.size());
    for (std::size_t j = 0; j < weights.size(); ++j)
        comps.push_back({weights[j], make_gcs({alpha, epsilon, spec.taus[j]}, cutoff)});
    return Ensemble(std::move(comps));
}

/// Tr rho_a(0)^2 = p^2 + 2p(1-p)/d + (1-p)^2/d.
inline double atomic_purity(const WernerSpec& spec) {
    validate(spec);
    const double p = spec.p;
    const double d = spec.dimension();
    return p * p + 2.0 * p * (1.0 - p) / d + (1.0 - p) * (1.0 - p) / d;
}

inline double ensemble_photon_moment(const Ensemble& e, int m) {
    CompensatedSum<double> acc;
    for (const auto& comp : e.components()) acc += comp.weight * photon_moment(comp.state, m);
    return acc.value();
}

}  // namespace gcs

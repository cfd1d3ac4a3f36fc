#pragma once

// Parameter sweeps over (eps, tau, p), their configuration schema and export.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "gcs/ensembles.hpp"
#include "gcs/errors.hpp"
#include "gcs/fock.hpp"
#include "gcs/metrology.hpp"
#include "gcs/parallel.hpp"
#include "gcs/wigner.hpp"

#ifndef GCS_VERSION
#define GCS_VERSION "0.1.0"
#endif

namespace gcs {

using json = nlohmann::ordered_json;

inline constexpr const char* tool_version = GCS_VERSION;

enum class Quantity { negativity, qfi, both };
enum class ScanMode { evolution, max, werner };
enum class Format { csv, json };

/// Inclusive linear grid of `count` points.
struct TauGrid {
    double start = 0.0;
    double stop = 2.0 * std::numbers::pi;
    int count = 400;

    double at(int i) const noexcept {
        return i == count - 1 ? stop : start + (stop - start) * i / (count - 1);
    }
    bool operator==(const TauGrid&) const = default;
};

/// Atomic preparation swept by the werner mode: field parameters tau_j = lambdas[j] * tau.
struct WernerScan {
    std::vector<complex> c{1.0, 0.0};
    std::vector<double> lambdas{1.0, -1.0};

    bool operator==(const WernerScan&) const = default;
};

struct OutputSpec {
    std::string path;  ///< empty writes to stdout
    Format format = Format::csv;

    bool operator==(const OutputSpec&) const = default;
};

struct ScanSpec {
    double alpha_sq = 10.0;
    std::vector<double> epsilons;
    ScanMode mode = ScanMode::evolution;
    Quantity quantity = Quantity::negativity;
    std::optional<TauGrid> tau_grid;  ///< unset: per-eps default window, see default_tau_grid
    int tau_points = 400;
    int refine_points = 50;
    bool rescale = true;
    int cutoff = 0;  ///< 0 selects auto_cutoff(alpha_sq, 1e-18)
    double rel_tol = 1e-3;
    int threads = 1;
    GridPolicy grid;
    std::optional<WernerScan> werner;
    std::vector<double> p_grid;  ///< werner mode only; empty selects 0, 0.1, ..., 1
    OutputSpec output;

    bool operator==(const ScanSpec&) const = default;
};

inline bool is_integer(double x) { return std::isfinite(x) && x == std::floor(x); }

/// Upper end of the default tau window. Integer eps: the phases are 2pi-periodic.
/// Otherwise one period of the quadratic (Kerr-like) term of the expansion of
/// n^eps around nbar, tau |eps (eps - 1)| nbar^{eps-2} / 2 = 2pi.
inline double default_tau_stop(double epsilon, double nbar) {
    if (is_integer(epsilon)) return 2.0 * std::numbers::pi;
    const double curvature = 0.5 * std::abs(epsilon * (epsilon - 1.0)) * std::pow(nbar, epsilon - 2.0);
    return 2.0 * std::numbers::pi / curvature;
}

/// (0, stop] sampled at `points` equally spaced values, 0 excluded.
inline TauGrid default_tau_grid(double epsilon, double nbar, int points) {
    const double stop = default_tau_stop(epsilon, nbar);
    return {stop / points, stop, points};
}

inline TauGrid tau_grid_for(const ScanSpec& spec, double epsilon) {
    return spec.tau_grid ? *spec.tau_grid : default_tau_grid(epsilon, spec.alpha_sq, spec.tau_points);
}

inline int effective_cutoff(const ScanSpec& spec) {
    return spec.cutoff > 0 ? spec.cutoff : auto_cutoff(spec.alpha_sq, 1e-18);
}

inline std::vector<double> effective_p_grid(const ScanSpec& spec) {
    if (!spec.p_grid.empty()) return spec.p_grid;
    std::vector<double> p;
    for (int i = 0; i <= 10; ++i) p.push_back(i / 10.0);
    return p;
}

inline double rescaled_tau(double tau, double epsilon, bool rescale) {
    return rescale ? tau * std::exp(epsilon * (epsilon - 1.0)) : tau;
}

// ---------------------------------------------------------------- names

inline const char* to_string(Quantity q) {
    switch (q) {
        case Quantity::negativity: return "negativity";
        case Quantity::qfi: return "qfi";
        case Quantity::both: return "both";
    }
    return "";
}

inline const char* to_string(ScanMode m) {
    switch (m) {
        case ScanMode::evolution: return "evolution";
        case ScanMode::max: return "max";
        case ScanMode::werner: return "werner";
    }
    return "";
}

inline const char* to_string(Format f) { return f == Format::csv ? "csv" : "json"; }

inline Quantity parse_quantity(const std::string& s, const std::string& key = "quantity") {
    if (s == "negativity") return Quantity::negativity;
    if (s == "qfi") return Quantity::qfi;
    if (s == "both") return Quantity::both;
    throw ConfigError(key, "expected one of negativity, qfi, both; got '" + s + "'");
}

inline ScanMode parse_mode(const std::string& s, const std::string& key = "mode") {
    if (s == "evolution") return ScanMode::evolution;
    if (s == "max") return ScanMode::max;
    if (s == "werner") return ScanMode::werner;
    throw ConfigError(key, "expected one of evolution, max, werner; got '" + s + "'");
}

inline Format parse_format(const std::string& s, const std::string& key = "output.format") {
    if (s == "csv") return Format::csv;
    if (s == "json") return Format::json;
    throw ConfigError(key, "expected csv or json; got '" + s + "'");
}

// ---------------------------------------------------------------- validation

inline void validate(const ScanSpec& spec) {
    if (!(spec.alpha_sq > 0.0) || !std::isfinite(spec.alpha_sq)) throw ConfigError("alpha_sq", "must be > 0");
    if (spec.epsilons.empty()) throw ConfigError("epsilons", "must be non-empty");
    for (std::size_t i = 0; i < spec.epsilons.size(); ++i)
        if (!(spec.epsilons[i] >= 0.0) || !std::isfinite(spec.epsilons[i]))
            throw ConfigError("epsilons[" + std::to_string(i) + "]", "must be finite and >= 0");
    if (spec.tau_grid) {
        if (!(spec.tau_grid->start < spec.tau_grid->stop)) throw ConfigError("tau_grid", "start must be < stop");
        if (spec.tau_grid->count < 2) throw ConfigError("tau_grid.count", "must be >= 2");
    }
    if (spec.tau_points < 2) throw ConfigError("tau_points", "must be >= 2");
    if (spec.refine_points < 2) throw ConfigError("refine_points", "must be >= 2");
    if (spec.cutoff < 0) throw ConfigError("cutoff", "must be >= 0 (0 selects auto)");
    if (!(spec.rel_tol > 0.0 && spec.rel_tol <= 0.1)) throw ConfigError("rel_tol", "must lie in (0, 0.1]");
    if (spec.threads < 1) throw ConfigError("threads", "must be >= 1");
    if (spec.grid.half_width < 0.0) throw ConfigError("grid.half_width", "must be >= 0 (0 selects auto)");
    if (spec.grid.points < 5) throw ConfigError("grid.points", "must be >= 5");
    if (spec.grid.max_points < spec.grid.points) throw ConfigError("grid.max_points", "must be >= grid.points");
    if (!(spec.grid.extent_step > 0.0)) throw ConfigError("grid.extent_step", "must be > 0");
    if (spec.grid.max_extensions < 0) throw ConfigError("grid.max_extensions", "must be >= 0");
    if (!(spec.grid.abs_floor >= 0.0)) throw ConfigError("grid.abs_floor", "must be >= 0");
    if (!spec.p_grid.empty() && !spec.werner) throw ConfigError("werner", "p_grid requires the 'werner' block");
    if (spec.mode == ScanMode::werner && !spec.werner) throw ConfigError("werner", "mode 'werner' requires the 'werner' block");
    for (std::size_t i = 0; i < spec.p_grid.size(); ++i)
        if (!(spec.p_grid[i] >= 0.0 && spec.p_grid[i] <= 1.0))
            throw ConfigError("p_grid[" + std::to_string(i) + "]", "must lie in [0, 1]");
    if (spec.werner) {
        if (spec.werner->lambdas.size() != spec.werner->c.size())
            throw ConfigError("werner.lambdas", "must have the same length as werner.c");
        try {
            validate(WernerSpec{1.0, spec.werner->c, spec.werner->lambdas});
        } catch (const DomainError& e) {
            throw ConfigError("werner", e.what());
        }
    }
}

// ---------------------------------------------------------------- JSON schema

inline json complex_to_json(complex z) {
    if (z.imag() == 0.0) return z.real();
    return json::array({z.real(), z.imag()});
}

inline json to_json(const GridPolicy& g) {
    return {{"half_width", g.half_width}, {"points", g.points},           {"max_points", g.max_points},
            {"extent_step", g.extent_step}, {"max_extensions", g.max_extensions}, {"abs_floor", g.abs_floor}};
}

/// Serializes every field, defaults included, so the result parses back to an equal spec.
inline json to_json(const ScanSpec& spec) {
    json j;
    j["alpha_sq"] = spec.alpha_sq;
    j["epsilons"] = spec.epsilons;
    j["mode"] = to_string(spec.mode);
    j["quantity"] = to_string(spec.quantity);
    if (spec.tau_grid)
        j["tau_grid"] = {{"start", spec.tau_grid->start}, {"stop", spec.tau_grid->stop}, {"count", spec.tau_grid->count}};
    j["tau_points"] = spec.tau_points;
    j["refine_points"] = spec.refine_points;
    j["rescale"] = spec.rescale;
    j["cutoff"] = spec.cutoff;
    j["rel_tol"] = spec.rel_tol;
    j["threads"] = spec.threads;
    j["grid"] = to_json(spec.grid);
    if (spec.werner) {
        json c = json::array();
        for (const auto& cj : spec.werner->c) c.push_back(complex_to_json(cj));
        j["werner"] = {{"c", c}, {"lambdas", spec.werner->lambdas}};
        if (!spec.p_grid.empty()) j["p_grid"] = spec.p_grid;
    }
    j["output"] = {{"path", spec.output.path}, {"format", to_string(spec.output.format)}};
    return j;
}

namespace detail {

// Typed access with the key path in every error.
class Reader {
public:
    Reader(const json& node, std::string path) : node_(node), path_(std::move(path)) {
        if (!node_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
    }

    void allow(std::initializer_list<const char*> keys) const {
        for (const auto& [key, value] : node_.items()) {
            bool known = false;
            for (const char* k : keys) known = known || key == k;
            if (!known) throw ConfigError(join(key), "unknown key");
        }
    }

    bool has(const char* key) const { return node_.contains(key) && !node_.at(key).is_null(); }
    const json& at(const char* key) const { return node_.at(key); }
    std::string join(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

    double number(const char* key) const { return as_number(at(key), join(key)); }

    int integer(const char* key) const {
        const json& v = at(key);
        if (!v.is_number_integer()) throw ConfigError(join(key), "expected an integer");
        return v.get<int>();
    }

    bool boolean(const char* key) const {
        const json& v = at(key);
        if (!v.is_boolean()) throw ConfigError(join(key), "expected true or false");
        return v.get<bool>();
    }

    std::string string(const char* key) const {
        const json& v = at(key);
        if (!v.is_string()) throw ConfigError(join(key), "expected a string");
        return v.get<std::string>();
    }

    std::vector<double> numbers(const char* key) const {
        const json& v = at(key);
        if (!v.is_array()) throw ConfigError(join(key), "expected an array of numbers");
        std::vector<double> out;
        for (std::size_t i = 0; i < v.size(); ++i)
            out.push_back(as_number(v[i], join(key) + "[" + std::to_string(i) + "]"));
        return out;
    }

    static double as_number(const json& v, const std::string& where) {
        if (!v.is_number()) throw ConfigError(where, "expected a number");
        return v.get<double>();
    }

private:
    const json& node_;
    std::string path_;
};

}  // namespace detail

/// Strict parse of the configuration schema: unknown keys, wrong types and
/// invariant violations raise ConfigError naming the key path.
inline ScanSpec parse_config_json(const json& root) {
    const detail::Reader r(root, "");
    r.allow({"alpha_sq", "epsilons", "mode", "quantity", "tau_grid", "tau_points", "refine_points", "rescale",
             "cutoff", "rel_tol", "threads", "grid", "werner", "p_grid", "output"});
    ScanSpec spec;
    if (!r.has("alpha_sq")) throw ConfigError("alpha_sq", "missing required key");
    if (!r.has("epsilons")) throw ConfigError("epsilons", "missing required key");
    spec.alpha_sq = r.number("alpha_sq");
    spec.epsilons = r.numbers("epsilons");
    if (r.has("mode")) spec.mode = parse_mode(r.string("mode"));
    if (r.has("quantity")) spec.quantity = parse_quantity(r.string("quantity"));
    if (r.has("tau_grid")) {
        const detail::Reader t(r.at("tau_grid"), "tau_grid");
        t.allow({"start", "stop", "count"});
        for (const char* k : {"start", "stop", "count"})
            if (!t.has(k)) throw ConfigError(t.join(k), "missing required key");
        spec.tau_grid = TauGrid{t.number("start"), t.number("stop"), t.integer("count")};
    }
    if (r.has("tau_points")) spec.tau_points = r.integer("tau_points");
    if (r.has("refine_points")) spec.refine_points = r.integer("refine_points");
    if (r.has("rescale")) spec.rescale = r.boolean("rescale");
    if (r.has("cutoff")) spec.cutoff = r.integer("cutoff");
    if (r.has("rel_tol")) spec.rel_tol = r.number("rel_tol");
    if (r.has("threads")) spec.threads = r.integer("threads");
    if (r.has("grid")) {
        const detail::Reader g(r.at("grid"), "grid");
        g.allow({"half_width", "points", "max_points", "extent_step", "max_extensions", "abs_floor"});
        if (g.has("half_width")) spec.grid.half_width = g.number("half_width");
        if (g.has("points")) spec.grid.points = g.integer("points");
        if (g.has("max_points")) spec.grid.max_points = g.integer("max_points");
        if (g.has("extent_step")) spec.grid.extent_step = g.number("extent_step");
        if (g.has("max_extensions")) spec.grid.max_extensions = g.integer("max_extensions");
        if (g.has("abs_floor")) spec.grid.abs_floor = g.number("abs_floor");
    }
    if (r.has("werner")) {
        const detail::Reader w(r.at("werner"), "werner");
        w.allow({"c", "lambdas"});
        WernerScan ws;
        if (w.has("c")) {
            const json& c = w.at("c");
            if (!c.is_array()) throw ConfigError("werner.c", "expected an array");
            ws.c.clear();
            for (std::size_t i = 0; i < c.size(); ++i) {
                const std::string where = "werner.c[" + std::to_string(i) + "]";
                if (c[i].is_array()) {
                    if (c[i].size() != 2) throw ConfigError(where, "complex entries are [re, im]");
                    ws.c.emplace_back(detail::Reader::as_number(c[i][0], where), detail::Reader::as_number(c[i][1], where));
                } else {
                    ws.c.emplace_back(detail::Reader::as_number(c[i], where), 0.0);
                }
            }
        }
        if (w.has("lambdas")) ws.lambdas = w.numbers("lambdas");
        spec.werner = ws;
    }
    if (r.has("p_grid")) {
        if (!r.has("werner")) throw ConfigError("werner", "p_grid requires the 'werner' block");
        spec.p_grid = r.numbers("p_grid");
    }
    if (r.has("output")) {
        const detail::Reader o(r.at("output"), "output");
        o.allow({"path", "format"});
        if (o.has("path")) spec.output.path = o.string("path");
        if (o.has("format")) spec.output.format = parse_format(o.string("format"));
    }
    validate(spec);
    return spec;
}

inline ScanSpec parse_config_text(const std::string& text) {
    json root;
    try {
        root = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError("<root>", std::string("malformed JSON: ") + e.what());
    }
    return parse_config_json(root);
}

inline ScanSpec parse_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file '" + path + "'");
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_config_text(buf.str());
}

// ---------------------------------------------------------------- results

/// One output record. `kind` is evolution (coarse tau grid), refine (window
/// around the best coarse point), max (per eps, or per (eps, p)) or purity.
/// NaN marks a column that does not apply; failed points carry `error`.
struct ScanRow {
    std::string kind;
    std::string quantity;
    double epsilon = std::numeric_limits<double>::quiet_NaN();
    double p = std::numeric_limits<double>::quiet_NaN();
    double tau = std::numeric_limits<double>::quiet_NaN();
    double rescaled_tau = std::numeric_limits<double>::quiet_NaN();
    double value = std::numeric_limits<double>::quiet_NaN();
    std::string error;

    bool operator==(const ScanRow& o) const {
        const auto same = [](double a, double b) { return a == b || (std::isnan(a) && std::isnan(b)); };
        return kind == o.kind && quantity == o.quantity && same(epsilon, o.epsilon) && same(p, o.p) &&
               same(tau, o.tau) && same(rescaled_tau, o.rescaled_tau) && same(value, o.value) && error == o.error;
    }
};

struct ScanResult {
    json metadata;
    std::vector<ScanRow> rows;
    double wall_seconds = 0.0;  ///< reported by the CLI on stderr; not written to files
};

namespace detail {

inline json base_metadata(const ScanSpec& spec) {
    json m;
    m["tool"] = "gcs";
    m["version"] = tool_version;
    m["alpha_sq"] = spec.alpha_sq;
    m["cutoff"] = effective_cutoff(spec);
    m["cutoff_rule"] = spec.cutoff > 0 ? "explicit" : "auto_cutoff(alpha_sq, 1e-18)";
    m["rel_tol"] = spec.rel_tol;
    m["grid_policy"] = to_json(spec.grid);
    m["threads"] = spec.threads;
    m["spec"] = to_json(spec);
    return m;
}

// Shared per-scan state: the GCS amplitude, basis size and normalizers.
struct ScanContext {
    double nbar;
    double alpha;
    int cutoff;
    double rel_tol;
    GridPolicy policy;  // single-threaded per point; scan points run in parallel
    int reference = 0;
    double reference_negativity = 0.0;

    explicit ScanContext(const ScanSpec& spec)
        : nbar(spec.alpha_sq),
          alpha(std::sqrt(spec.alpha_sq)),
          cutoff(effective_cutoff(spec)),
          rel_tol(spec.rel_tol),
          policy(spec.grid) {
        policy.threads = 1;
    }

    bool needs_negativity(Quantity q) const { return q != Quantity::qfi; }

    void prepare_reference(int threads) {
        reference = reference_fock_number(nbar);
        GridPolicy p = policy;
        p.threads = threads;
        reference_negativity = fock_negativity(reference, rel_tol, p);
    }

    double normalized_negativity(double epsilon, double tau) const {
        return negativity(make_gcs({alpha, epsilon, tau}, cutoff), rel_tol, policy) / reference_negativity;
    }

    double normalized_qfi(double epsilon, double tau) const {
        return gcs::normalized_qfi(make_gcs({alpha, epsilon, tau}, cutoff), nbar);
    }
};

struct PointTask {
    Quantity quantity;  // negativity or qfi
    double epsilon;
    double tau;
};

struct PointResult {
    double value = std::numeric_limits<double>::quiet_NaN();
    std::string error;
};

inline std::vector<PointResult> run_points(const ScanContext& ctx, const std::vector<PointTask>& tasks, int threads) {
    std::vector<PointResult> out(tasks.size());
    parallel_for(tasks.size(), threads, [&](std::size_t i) {
        const auto& t = tasks[i];
        try {
            out[i].value = t.quantity == Quantity::qfi ? ctx.normalized_qfi(t.epsilon, t.tau)
                                                       : ctx.normalized_negativity(t.epsilon, t.tau);
        } catch (const ConvergenceError& e) {
            out[i].error = e.what();
        } catch (const NumericalConsistencyError& e) {
            out[i].error = e.what();
        } catch (const OverflowError& e) {
            out[i].error = e.what();
        }
    });
    return out;
}

inline std::vector<Quantity> expand(Quantity q) {
    if (q == Quantity::both) return {Quantity::negativity, Quantity::qfi};
    return {q};
}

inline ScanRow point_row(const char* kind, Quantity q, double epsilon, double tau, bool rescale,
                         const PointResult& r) {
    ScanRow row;
    row.kind = kind;
    row.quantity = to_string(q);
    row.epsilon = epsilon;
    row.tau = tau;
    row.rescaled_tau = rescaled_tau(tau, epsilon, rescale);
    row.value = r.value;
    row.error = r.error;
    return row;
}

inline json tau_grid_json(const TauGrid& g) { return {{"start", g.start}, {"stop", g.stop}, {"count", g.count}}; }

/// Index of the largest successful value; -1 if none.
inline int best_index(const std::vector<PointResult>& results, std::size_t first, std::size_t count) {
    int best = -1;
    for (std::size_t i = 0; i < count; ++i) {
        const auto& r = results[first + i];
        if (!r.error.empty()) continue;
        if (best < 0 || r.value > results[first + static_cast<std::size_t>(best)].value) best = static_cast<int>(i);
    }
    return best;
}

/// Refinement window between the coarse neighbours of the best point.
inline TauGrid refine_window(const TauGrid& coarse, int best, int points) {
    const int lo = std::max(best - 1, 0);
    const int hi = std::min(best + 1, coarse.count - 1);
    return {coarse.at(lo), coarse.at(hi), points};
}

struct Timer {
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
};

}  // namespace detail

/// Normalized negativity and/or QFI of GCS(sqrt(alpha_sq), eps, tau) on the tau grid of every eps.
inline ScanResult scan_evolution(const ScanSpec& spec) {
    validate(spec);
    const detail::Timer timer;
    detail::ScanContext ctx(spec);
    const auto quantities = detail::expand(spec.quantity);
    if (ctx.needs_negativity(spec.quantity)) ctx.prepare_reference(spec.threads);

    std::vector<detail::PointTask> tasks;
    for (Quantity q : quantities)
        for (double eps : spec.epsilons) {
            const TauGrid g = tau_grid_for(spec, eps);
            for (int i = 0; i < g.count; ++i) tasks.push_back({q, eps, g.at(i)});
        }
    const auto results = detail::run_points(ctx, tasks, spec.threads);

    ScanResult out;
    out.metadata = detail::base_metadata(spec);
    out.metadata["operation"] = "scan_evolution";
    json grids = json::array();
    for (double eps : spec.epsilons) grids.push_back({{"epsilon", eps}, {"tau_grid", detail::tau_grid_json(tau_grid_for(spec, eps))}});
    out.metadata["tau_grids"] = grids;
    if (ctx.needs_negativity(spec.quantity))
        out.metadata["reference"] = {{"fock_n", ctx.reference}, {"negativity", ctx.reference_negativity}};
    for (std::size_t i = 0; i < tasks.size(); ++i)
        out.rows.push_back(
            detail::point_row("evolution", tasks[i].quantity, tasks[i].epsilon, tasks[i].tau, spec.rescale, results[i]));
    out.wall_seconds = timer.seconds();
    return out;
}

/// Per-eps maximum over tau: the coarse grid, then `refine_points` values
/// between the coarse neighbours of the best point. Emits the coarse rows
/// (kind evolution), the window rows (refine) and one max row per (eps, quantity).
inline ScanResult scan_max_over_tau(const ScanSpec& spec) {
    validate(spec);
    const detail::Timer timer;
    detail::ScanContext ctx(spec);
    const auto quantities = detail::expand(spec.quantity);
    if (ctx.needs_negativity(spec.quantity)) ctx.prepare_reference(spec.threads);

    struct Block {
        Quantity q;
        double eps;
        TauGrid coarse;
        std::size_t first;
        TauGrid window{};
        std::size_t window_first = 0;
        bool refined = false;
    };
    std::vector<Block> blocks;
    std::vector<detail::PointTask> coarse_tasks;
    for (Quantity q : quantities)
        for (double eps : spec.epsilons) {
            const TauGrid g = tau_grid_for(spec, eps);
            blocks.push_back({q, eps, g, coarse_tasks.size()});
            for (int i = 0; i < g.count; ++i) coarse_tasks.push_back({q, eps, g.at(i)});
        }
    const auto coarse = detail::run_points(ctx, coarse_tasks, spec.threads);

    std::vector<detail::PointTask> fine_tasks;
    for (auto& b : blocks) {
        const int best = detail::best_index(coarse, b.first, static_cast<std::size_t>(b.coarse.count));
        if (best < 0) continue;
        b.window = detail::refine_window(b.coarse, best, spec.refine_points);
        b.window_first = fine_tasks.size();
        b.refined = true;
        for (int i = 0; i < b.window.count; ++i) fine_tasks.push_back({b.q, b.eps, b.window.at(i)});
    }
    const auto fine = detail::run_points(ctx, fine_tasks, spec.threads);

    ScanResult out;
    out.metadata = detail::base_metadata(spec);
    out.metadata["operation"] = "scan_max_over_tau";
    if (ctx.needs_negativity(spec.quantity))
        out.metadata["reference"] = {{"fock_n", ctx.reference}, {"negativity", ctx.reference_negativity}};
    json grids = json::array();
    for (const auto& b : blocks) {
        json entry = {{"quantity", to_string(b.q)}, {"epsilon", b.eps}, {"coarse", detail::tau_grid_json(b.coarse)}};
        entry["refine"] = b.refined ? detail::tau_grid_json(b.window) : json(nullptr);
        grids.push_back(entry);
    }
    out.metadata["tau_grids"] = grids;

    for (const auto& b : blocks)
        for (int i = 0; i < b.coarse.count; ++i) {
            const auto k = b.first + static_cast<std::size_t>(i);
            out.rows.push_back(detail::point_row("evolution", b.q, b.eps, coarse_tasks[k].tau, spec.rescale, coarse[k]));
        }
    for (const auto& b : blocks) {
        if (!b.refined) continue;
        for (int i = 0; i < b.window.count; ++i) {
            const auto k = b.window_first + static_cast<std::size_t>(i);
            out.rows.push_back(detail::point_row("refine", b.q, b.eps, fine_tasks[k].tau, spec.rescale, fine[k]));
        }
    }
    for (const auto& b : blocks) {
        detail::PointResult best{std::numeric_limits<double>::quiet_NaN(), "no successful points"};
        double best_tau = std::numeric_limits<double>::quiet_NaN();
        const auto consider = [&](const detail::PointResult& r, double tau) {
            if (!r.error.empty()) return;
            if (!best.error.empty() || r.value > best.value) {
                best = r;
                best_tau = tau;
            }
        };
        for (int i = 0; i < b.coarse.count; ++i) {
            const auto k = b.first + static_cast<std::size_t>(i);
            consider(coarse[k], coarse_tasks[k].tau);
        }
        if (b.refined)
            for (int i = 0; i < b.window.count; ++i) {
                const auto k = b.window_first + static_cast<std::size_t>(i);
                consider(fine[k], fine_tasks[k].tau);
            }
        out.rows.push_back(detail::point_row("max", b.q, b.eps, best_tau, spec.rescale, best));
    }
    out.wall_seconds = timer.seconds();
    return out;
}

/// Werner mixtures: for every eps and tau the members GCS(lambda_j tau) are
/// evaluated once and combined for all p. Emits per-(eps, p) evolution rows,
/// refinement rows, max rows and one purity row per p.
inline ScanResult scan_werner(const ScanSpec& spec) {
    validate(spec);
    if (!spec.werner) throw ConfigError("werner", "scan_werner requires the 'werner' block");
    const detail::Timer timer;
    detail::ScanContext ctx(spec);
    ctx.prepare_reference(spec.threads);
    const auto ps = effective_p_grid(spec);
    const WernerScan& ws = *spec.werner;

    std::vector<std::vector<double>> weight_sets;
    for (double p : ps) weight_sets.push_back(werner_weights({p, ws.c, ws.lambdas}));

    struct Task {
        double eps;
        double tau;
    };
    struct Outcome {
        std::vector<double> values;  // per p, normalized
        std::string error;
    };
    const auto run = [&](const std::vector<Task>& tasks) {
        std::vector<Outcome> out(tasks.size());
        parallel_for(tasks.size(), spec.threads, [&](std::size_t i) {
            std::vector<FockState> members;
            for (double lambda : ws.lambdas)
                members.push_back(make_gcs({ctx.alpha, tasks[i].eps, lambda * tasks[i].tau}, ctx.cutoff));
            try {
                out[i].values = negativity_family(members, weight_sets, ctx.rel_tol, ctx.policy);
                for (double& v : out[i].values) v /= ctx.reference_negativity;
            } catch (const ConvergenceError& e) {
                out[i].error = e.what();
            }
        });
        return out;
    };

    std::vector<TauGrid> coarse_grids;
    std::vector<Task> coarse_tasks;
    for (double eps : spec.epsilons) {
        coarse_grids.push_back(tau_grid_for(spec, eps));
        for (int i = 0; i < coarse_grids.back().count; ++i) coarse_tasks.push_back({eps, coarse_grids.back().at(i)});
    }
    const auto coarse = run(coarse_tasks);

    // One refinement window per distinct best coarse index of each eps.
    struct Window {
        std::size_t eps_index;
        int best;
        TauGrid grid;
        std::size_t first;
    };
    std::vector<Window> windows;
    std::vector<Task> fine_tasks;
    std::vector<std::vector<int>> window_of(spec.epsilons.size(), std::vector<int>(ps.size(), -1));
    std::size_t offset = 0;
    for (std::size_t e = 0; e < spec.epsilons.size(); ++e) {
        const TauGrid& g = coarse_grids[e];
        for (std::size_t s = 0; s < ps.size(); ++s) {
            int best = -1;
            for (int i = 0; i < g.count; ++i) {
                const auto& r = coarse[offset + static_cast<std::size_t>(i)];
                if (!r.error.empty()) continue;
                if (best < 0 || r.values[s] > coarse[offset + static_cast<std::size_t>(best)].values[s]) best = i;
            }
            if (best < 0) continue;
            int found = -1;
            for (std::size_t w = 0; w < windows.size(); ++w)
                if (windows[w].eps_index == e && windows[w].best == best) found = static_cast<int>(w);
            if (found < 0) {
                found = static_cast<int>(windows.size());
                const TauGrid win = detail::refine_window(g, best, spec.refine_points);
                windows.push_back({e, best, win, fine_tasks.size()});
                for (int i = 0; i < win.count; ++i) fine_tasks.push_back({spec.epsilons[e], win.at(i)});
            }
            window_of[e][s] = found;
        }
        offset += static_cast<std::size_t>(g.count);
    }
    const auto fine = run(fine_tasks);

    ScanResult out;
    out.metadata = detail::base_metadata(spec);
    out.metadata["operation"] = "scan_werner";
    out.metadata["reference"] = {{"fock_n", ctx.reference}, {"negativity", ctx.reference_negativity}};
    out.metadata["p_grid"] = ps;
    json grids = json::array();
    for (std::size_t e = 0; e < spec.epsilons.size(); ++e) {
        json refine = json::array();
        for (const auto& w : windows)
            if (w.eps_index == e) refine.push_back(detail::tau_grid_json(w.grid));
        grids.push_back({{"epsilon", spec.epsilons[e]}, {"coarse", detail::tau_grid_json(coarse_grids[e])}, {"refine", refine}});
    }
    out.metadata["tau_grids"] = grids;

    const auto make_row = [&](const char* kind, double eps, double p, double tau, double value, const std::string& err) {
        ScanRow row;
        row.kind = kind;
        row.quantity = "negativity";
        row.epsilon = eps;
        row.p = p;
        row.tau = tau;
        row.rescaled_tau = rescaled_tau(tau, eps, spec.rescale);
        row.value = err.empty() ? value : std::numeric_limits<double>::quiet_NaN();
        row.error = err;
        return row;
    };

    offset = 0;
    for (std::size_t e = 0; e < spec.epsilons.size(); ++e) {
        const double eps = spec.epsilons[e];
        const TauGrid& g = coarse_grids[e];
        for (std::size_t s = 0; s < ps.size(); ++s)
            for (int i = 0; i < g.count; ++i) {
                const auto& r = coarse[offset + static_cast<std::size_t>(i)];
                out.rows.push_back(make_row("evolution", eps, ps[s], g.at(i), r.error.empty() ? r.values[s] : 0.0, r.error));
            }
        for (std::size_t s = 0; s < ps.size(); ++s) {
            if (window_of[e][s] < 0) continue;
            const Window& w = windows[static_cast<std::size_t>(window_of[e][s])];
            for (int i = 0; i < w.grid.count; ++i) {
                const auto& r = fine[w.first + static_cast<std::size_t>(i)];
                out.rows.push_back(make_row("refine", eps, ps[s], w.grid.at(i), r.error.empty() ? r.values[s] : 0.0, r.error));
            }
        }
        for (std::size_t s = 0; s < ps.size(); ++s) {
            double best = 0.0, best_tau = std::numeric_limits<double>::quiet_NaN();
            bool any = false;
            const auto consider = [&](const Outcome& r, double tau) {
                if (!r.error.empty()) return;
                if (!any || r.values[s] > best) {
                    best = r.values[s];
                    best_tau = tau;
                    any = true;
                }
            };
            for (int i = 0; i < g.count; ++i) consider(coarse[offset + static_cast<std::size_t>(i)], g.at(i));
            if (window_of[e][s] >= 0) {
                const Window& w = windows[static_cast<std::size_t>(window_of[e][s])];
                for (int i = 0; i < w.grid.count; ++i) consider(fine[w.first + static_cast<std::size_t>(i)], w.grid.at(i));
            }
            out.rows.push_back(make_row("max", eps, ps[s], best_tau, best, any ? "" : "no successful points"));
        }
        offset += static_cast<std::size_t>(g.count);
    }
    for (double p : ps) {
        ScanRow row;
        row.kind = "purity";
        row.quantity = "purity";
        row.p = p;
        row.value = atomic_purity({p, ws.c, ws.lambdas});
        out.rows.push_back(row);
    }
    out.wall_seconds = timer.seconds();
    return out;
}

inline ScanResult run_scan(const ScanSpec& spec) {
    switch (spec.mode) {
        case ScanMode::evolution: return scan_evolution(spec);
        case ScanMode::max: return scan_max_over_tau(spec);
        case ScanMode::werner: return scan_werner(spec);
    }
    throw ConfigError("mode", "unsupported");
}

// ---------------------------------------------------------------- writers

/// %.17g, with NaN written as an empty field.
inline std::string format_number(double v) {
    if (std::isnan(v)) return "";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::string csv_escape(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char ch : s) {
        if (ch == '"') out += '"';
        out += ch;
    }
    return out + "\"";
}

inline json number_or_null(double v) { return std::isnan(v) ? json(nullptr) : json(v); }

/// Metadata as one leading comment line, then a header and one record per row.
inline std::string to_csv(const ScanResult& result) {
    std::string out = "# " + result.metadata.dump() + "\n";
    out += "kind,quantity,epsilon,p,tau,rescaled_tau,value,error\n";
    for (const auto& r : result.rows) {
        out += r.kind + ',' + r.quantity + ',' + format_number(r.epsilon) + ',' + format_number(r.p) + ',' +
               format_number(r.tau) + ',' + format_number(r.rescaled_tau) + ',' + format_number(r.value) + ',' +
               csv_escape(r.error) + '\n';
    }
    return out;
}

inline json to_json(const ScanResult& result) {
    json rows = json::array();
    for (const auto& r : result.rows) {
        json row = {{"kind", r.kind},
                    {"quantity", r.quantity},
                    {"epsilon", number_or_null(r.epsilon)},
                    {"p", number_or_null(r.p)},
                    {"tau", number_or_null(r.tau)},
                    {"rescaled_tau", number_or_null(r.rescaled_tau)},
                    {"value", number_or_null(r.value)}};
        if (!r.error.empty()) row["error"] = r.error;
        rows.push_back(row);
    }
    return {{"metadata", result.metadata}, {"rows", rows}};
}

inline std::string render(const ScanResult& result, Format format) {
    return format == Format::csv ? to_csv(result) : to_json(result).dump(2) + "\n";
}

/// Throws IoError if `path` cannot be opened for writing. Creates parent directories.
inline void ensure_writable(const std::filesystem::path& path) {
    std::error_code ec;
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
    const bool existed = std::filesystem::exists(path);
    {
        std::ofstream probe(path, std::ios::app);
        if (!probe) throw IoError("cannot write '" + path.string() + "'");
    }
    if (!existed) std::filesystem::remove(path, ec);
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    std::error_code ec;
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + path.string() + "'");
    out << text;
    if (!out) throw IoError("write failed for '" + path.string() + "'");
}

// ---------------------------------------------------------------- Wigner frames

struct FrameSummary {
    double tau;
    std::string path;
    double min;
    double max;
};

inline json frame_to_json(const WignerField& field, const json& meta) {
    return {{"metadata", meta},
            {"grid", {{"L", field.grid.half_width}, {"nx", field.grid.nx}, {"ny", field.grid.ny}}},
            {"min", field.min()},
            {"max", field.max()},
            {"values", field.values}};
}

inline std::string frame_to_csv(const WignerField& field, const json& meta) {
    std::string out = "# " + meta.dump() + "\n";
    out += "# grid L=" + format_number(field.grid.half_width) + " nx=" + std::to_string(field.grid.nx) +
           " ny=" + std::to_string(field.grid.ny) + " min=" + format_number(field.min()) +
           " max=" + format_number(field.max()) + "\n";
    out += "# row j holds W(x_i + i y_j) for i = 0..nx-1, x_i = -L + 2 L i / (nx - 1)\n";
    for (int j = 0; j < field.grid.ny; ++j) {
        for (int i = 0; i < field.grid.nx; ++i) {
            if (i > 0) out += ',';
            out += format_number(field.at(i, j));
        }
        out += '\n';
    }
    return out;
}

/// Writes one file per tau into directory `dir`, named frame_eps<e>_<k>.<ext>.
/// Every target is checked for writability before any field is computed.
inline std::vector<FrameSummary> export_wigner_frames(double alpha_sq, double epsilon, const std::vector<double>& taus,
                                                      const PhaseGrid& grid, const std::filesystem::path& dir,
                                                      Format format, int cutoff = 0, int threads = 1,
                                                      const json& extra = json::object()) {
    if (!(alpha_sq >= 0.0)) throw DomainError("export_wigner_frames: alpha_sq must be >= 0");
    validate(grid);
    const int n = cutoff > 0 ? cutoff : auto_cutoff(alpha_sq, 1e-18);
    std::vector<std::filesystem::path> paths;
    for (std::size_t k = 0; k < taus.size(); ++k) {
        char name[96];
        std::snprintf(name, sizeof name, "frame_eps%g_%zu.%s", epsilon, k, to_string(format));
        paths.push_back(dir / name);
        ensure_writable(paths.back());
    }
    std::vector<FrameSummary> out;
    for (std::size_t k = 0; k < taus.size(); ++k) {
        const auto field = wigner_field(make_gcs({std::sqrt(alpha_sq), epsilon, taus[k]}, n), grid, threads);
        json meta = {{"tool", "gcs"}, {"version", tool_version}, {"alpha_sq", alpha_sq}, {"epsilon", epsilon},
                     {"tau", taus[k]}, {"cutoff", n}};
        for (const auto& [key, value] : extra.items()) meta[key] = value;
        write_text(paths[k], format == Format::json ? frame_to_json(field, meta).dump() + "\n" : frame_to_csv(field, meta));
        out.push_back({taus[k], paths[k].string(), field.min(), field.max()});
    }
    return out;
}

}  // namespace gcs

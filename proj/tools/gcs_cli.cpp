// gcs: command-line driver for single evaluations, sweeps and figure data.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 numerical
// failure (including scans that recorded error rows), 3 I/O error.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "gcs/gcs.hpp"

namespace {

using gcs::json;

struct Common {
    double alpha_sq = 10.0;
    std::vector<double> epsilons;
    double tau = 0.0;
    int cutoff = 0;
    double grid_l = 0.0;
    int grid_n = 301;
    double rel_tol = 1e-3;
    int threads = 1;
    std::string config;
    std::string out;
    std::string format = "csv";
};

// Flags shared by every subcommand.
void add_common(CLI::App& app, Common& c, bool point) {
    app.add_option("--alpha-sq", c.alpha_sq, "mean photon number |alpha|^2");
    if (point)
        app.add_option("--epsilon", c.epsilons, "nonlinear exponent")->expected(1);
    else
        app.add_option("--epsilon", c.epsilons, "nonlinear exponents (repeat or comma-separate)")->delimiter(',');
    if (point) app.add_option("--tau", c.tau, "evolution parameter");
    app.add_option("--cutoff", c.cutoff, "Fock cutoff (0 = auto)");
    app.add_option("--grid-l", c.grid_l, "phase-space half width (0 = auto)");
    app.add_option("--grid-n", c.grid_n, "points per axis");
    app.add_option("--rel-tol", c.rel_tol, "negativity tolerance");
    app.add_option("--threads", c.threads, "worker threads")->check(CLI::PositiveNumber);
    app.add_option("--config", c.config, "JSON configuration file");
    app.add_option("--out", c.out, "output path (default stdout)");
    app.add_option("--format", c.format, "csv or json")->check(CLI::IsMember({"csv", "json"}));
}

bool given(const CLI::App& app, const char* flag) { return app.count(flag) > 0; }

void emit(const std::string& text, const std::string& path) {
    if (path.empty()) {
        std::cout << text;
        std::cout.flush();
        if (!std::cout) throw gcs::IoError("write to stdout failed");
        return;
    }
    gcs::write_text(path, text);
}

gcs::GcsParams point_params(const Common& c) {
    if (c.epsilons.empty()) throw gcs::ConfigError("--epsilon", "required");
    if (!(c.alpha_sq >= 0.0)) throw gcs::ConfigError("--alpha-sq", "must be >= 0");
    gcs::GcsParams p{std::sqrt(c.alpha_sq), c.epsilons.front(), c.tau};
    gcs::validate(p);
    return p;
}

int point_cutoff(const Common& c) { return c.cutoff > 0 ? c.cutoff : gcs::auto_cutoff(c.alpha_sq, 1e-18); }

gcs::GridPolicy point_policy(const Common& c) {
    gcs::GridPolicy policy;
    policy.half_width = c.grid_l;
    policy.points = c.grid_n;
    policy.threads = c.threads;
    return policy;
}

json point_metadata(const Common& c, int cutoff) {
    return {{"tool", "gcs"},           {"version", gcs::tool_version}, {"alpha_sq", c.alpha_sq},
            {"epsilon", c.epsilons.front()}, {"tau", c.tau},                {"cutoff", cutoff}};
}

// Key/value records for single evaluations.
std::string render_record(const json& record, const std::string& format) {
    if (format == "json") return record.dump(2) + "\n";
    std::string head, row;
    for (const auto& [key, value] : record.items()) {
        if (value.is_object()) continue;
        head += (head.empty() ? "" : ",") + key;
        std::string cell;
        if (value.is_number_float())
            cell = gcs::format_number(value.get<double>());
        else if (value.is_string())
            cell = gcs::csv_escape(value.get<std::string>());
        else
            cell = value.dump();
        row += (row.empty() ? "" : ",") + cell;
    }
    std::string meta = record.contains("metadata") ? "# " + record["metadata"].dump() + "\n" : "";
    return meta + head + "\n" + row + "\n";
}

int run_wigner(const Common& c) {
    const auto params = point_params(c);
    const int cutoff = point_cutoff(c);
    const auto state = gcs::make_gcs(params, cutoff);
    const gcs::PhaseGrid grid =
        gcs::PhaseGrid::square(c.grid_l > 0.0 ? c.grid_l : gcs::default_half_width(params.alpha, cutoff), c.grid_n);
    if (!c.out.empty()) gcs::ensure_writable(c.out);
    const auto field = gcs::wigner_field(state, grid, c.threads);
    const json meta = point_metadata(c, cutoff);
    emit(c.format == "json" ? gcs::frame_to_json(field, meta).dump() + "\n" : gcs::frame_to_csv(field, meta), c.out);
    std::fprintf(stderr, "min %.17g max %.17g integral %.17g\n", field.min(), field.max(), gcs::integrate_field(field));
    return 0;
}

int run_negativity(const Common& c) {
    const auto params = point_params(c);
    const int cutoff = point_cutoff(c);
    if (!c.out.empty()) gcs::ensure_writable(c.out);
    const auto policy = point_policy(c);
    const double value = gcs::negativity(gcs::make_gcs(params, cutoff), c.rel_tol, policy);
    json record = {{"negativity", value}};
    if (params.nbar() >= 0.5) {
        const int ref = gcs::reference_fock_number(params.nbar());
        const double ref_value = gcs::fock_negativity(ref, c.rel_tol, policy);
        record["reference_fock_n"] = ref;
        record["reference_negativity"] = ref_value;
        record["normalized"] = value / ref_value;
    }
    json meta = point_metadata(c, cutoff);
    meta["rel_tol"] = c.rel_tol;
    meta["grid_policy"] = gcs::to_json(policy);
    record["metadata"] = meta;
    emit(render_record(record, c.format), c.out);
    return 0;
}

int run_qfi(const Common& c) {
    const auto params = point_params(c);
    const int cutoff = point_cutoff(c);
    if (!c.out.empty()) gcs::ensure_writable(c.out);
    const auto report = gcs::qfi_max(gcs::make_gcs(params, cutoff));
    json record = {{"qfi", report.qfi}, {"best_angle", report.best_angle}, {"variance", report.variance},
                   {"degenerate", report.degenerate}};
    if (params.nbar() > 0.0) {
        record["normalized"] = report.qfi / (4.0 * (4.0 * params.nbar() + 1.0));
        record["cramer_rao"] = gcs::cramer_rao(report.qfi, params.nbar());
        record["squeezing_equivalent_db"] = gcs::squeezing_equivalent_db(params.nbar());
    }
    record["metadata"] = point_metadata(c, cutoff);
    emit(render_record(record, c.format), c.out);
    return 0;
}

struct ScanFlags {
    std::string mode;
    std::string quantity;
    std::optional<double> tau_start, tau_stop;
    std::optional<int> tau_count;
    std::optional<int> tau_points, refine_points;
    bool no_rescale = false;
    std::vector<double> p;
    std::vector<double> c_re;
    std::vector<double> lambdas;
};

void add_scan_flags(CLI::App& app, ScanFlags& f, bool werner) {
    if (!werner) {
        app.add_option("--mode", f.mode, "evolution, max or werner")->check(CLI::IsMember({"evolution", "max", "werner"}));
        app.add_option("--quantity", f.quantity, "negativity, qfi or both")
            ->check(CLI::IsMember({"negativity", "qfi", "both"}));
    }
    app.add_option("--tau-start", f.tau_start, "explicit tau grid start");
    app.add_option("--tau-stop", f.tau_stop, "explicit tau grid stop");
    app.add_option("--tau-count", f.tau_count, "explicit tau grid size");
    app.add_option("--tau-points", f.tau_points, "points of the default tau window");
    app.add_option("--refine-points", f.refine_points, "points of the refinement window");
    app.add_flag("--no-rescale", f.no_rescale, "emit rescaled_tau equal to tau");
    app.add_option("--p", f.p, "Werner parameters (repeat or comma-separate)")->delimiter(',');
    app.add_option("--c", f.c_re, "real atomic amplitudes c_j")->delimiter(',');
    app.add_option("--lambda", f.lambdas, "tau multipliers per eigenstate")->delimiter(',');
}

// Config file first, explicit flags on top.
gcs::ScanSpec build_spec(const CLI::App& app, const Common& c, const ScanFlags& f, std::optional<gcs::ScanMode> mode) {
    gcs::ScanSpec spec;
    if (!c.config.empty()) spec = gcs::parse_config(c.config);
    if (given(app, "--alpha-sq") || c.config.empty()) spec.alpha_sq = c.alpha_sq;
    if (given(app, "--epsilon")) spec.epsilons = c.epsilons;
    if (given(app, "--cutoff")) spec.cutoff = c.cutoff;
    if (given(app, "--grid-l")) spec.grid.half_width = c.grid_l;
    if (given(app, "--grid-n")) spec.grid.points = c.grid_n;
    if (given(app, "--rel-tol")) spec.rel_tol = c.rel_tol;
    if (given(app, "--threads")) spec.threads = c.threads;
    if (given(app, "--out")) spec.output.path = c.out;
    if (given(app, "--format")) spec.output.format = gcs::parse_format(c.format, "--format");
    if (!f.mode.empty()) spec.mode = gcs::parse_mode(f.mode, "--mode");
    if (mode) spec.mode = *mode;
    if (!f.quantity.empty()) spec.quantity = gcs::parse_quantity(f.quantity, "--quantity");
    if (f.tau_start || f.tau_stop || f.tau_count) {
        if (!(f.tau_start && f.tau_stop && f.tau_count))
            throw gcs::ConfigError("--tau-start/--tau-stop/--tau-count", "give all three or none");
        spec.tau_grid = gcs::TauGrid{*f.tau_start, *f.tau_stop, *f.tau_count};
    }
    if (f.tau_points) spec.tau_points = *f.tau_points;
    if (f.refine_points) spec.refine_points = *f.refine_points;
    if (f.no_rescale) spec.rescale = false;
    if (!f.c_re.empty() || !f.lambdas.empty() || spec.mode == gcs::ScanMode::werner || !f.p.empty()) {
        gcs::WernerScan ws = spec.werner.value_or(gcs::WernerScan{});
        if (!f.c_re.empty()) ws.c.assign(f.c_re.begin(), f.c_re.end());
        if (!f.lambdas.empty()) ws.lambdas = f.lambdas;
        spec.werner = ws;
    }
    if (!f.p.empty()) spec.p_grid = f.p;
    gcs::validate(spec);
    return spec;
}

int finish_scan(const gcs::ScanResult& result, const gcs::ScanSpec& spec) {
    emit(gcs::render(result, spec.output.format), spec.output.path);
    std::size_t failures = 0;
    for (const auto& row : result.rows) failures += row.error.empty() ? 0 : 1;
    std::fprintf(stderr, "%zu rows in %.1f s\n", result.rows.size(), result.wall_seconds);
    if (failures > 0) {
        std::fprintf(stderr, "%zu rows failed to converge; see the error column\n", failures);
        return 2;
    }
    return 0;
}

int execute_scan(const gcs::ScanSpec& spec) {
    if (!spec.output.path.empty()) gcs::ensure_writable(spec.output.path);
    return finish_scan(gcs::run_scan(spec), spec);
}

// Kerr-equivalent snapshots: tau such that tau |eps(eps-1)| nbar^{eps-2} / 2 = kappa.
std::vector<double> fig1_taus(double epsilon, double nbar) {
    const double curvature = 0.5 * std::abs(epsilon * (epsilon - 1.0)) * std::pow(nbar, epsilon - 2.0);
    std::vector<double> taus;
    for (double kappa : {0.0, std::numbers::pi / 8.0, std::numbers::pi / 2.0}) taus.push_back(kappa / curvature);
    return taus;
}

int run_fig(const CLI::App& app, int which, const Common& c, const ScanFlags& f) {
    if (which == 1) {
        const double nbar = given(app, "--alpha-sq") ? c.alpha_sq : 50.0;
        const int cutoff = c.cutoff > 0 ? c.cutoff : gcs::auto_cutoff(nbar, 1e-18);
        const double L = c.grid_l > 0.0 ? c.grid_l : gcs::default_half_width(std::sqrt(nbar), cutoff);
        const auto grid = gcs::PhaseGrid::square(L, c.grid_n);
        const std::filesystem::path dir = c.out.empty() ? "fig1" : c.out;
        const auto format = gcs::parse_format(c.format, "--format");
        const std::vector<double> eps = c.epsilons.empty() ? std::vector<double>{0.5, 2.0} : c.epsilons;
        json index = {{"tool", "gcs"}, {"version", gcs::tool_version}, {"alpha_sq", nbar}, {"cutoff", cutoff},
                      {"grid", {{"L", L}, {"nx", grid.nx}, {"ny", grid.ny}}},
                      {"tau_rule", "kappa in {0, pi/8, pi/2} with tau |eps(eps-1)| nbar^(eps-2) / 2 = kappa"}};
        gcs::ensure_writable(dir / "index.json");
        json frames = json::array();
        for (double e : eps) {
            if (gcs::is_integer(e) && (e == 0.0 || e == 1.0))
                throw gcs::ConfigError("--epsilon", "fig 1 snapshots need a nonlinear eps (not 0 or 1)");
            const auto taus = fig1_taus(e, nbar);
            for (const auto& s : gcs::export_wigner_frames(nbar, e, taus, grid, dir, format, cutoff, c.threads))
                frames.push_back({{"epsilon", e}, {"tau", s.tau}, {"path", s.path}, {"min", s.min}, {"max", s.max}});
        }
        index["frames"] = frames;
        gcs::write_text(dir / "index.json", index.dump(2) + "\n");
        std::cout << index.dump(2) << "\n";
        return 0;
    }

    gcs::ScanSpec spec;
    spec.alpha_sq = 10.0;
    spec.epsilons = {0.0, 0.5, 1.0, 1.5, 2.0, 3.0};
    spec.mode = gcs::ScanMode::max;
    if (which == 2) spec.quantity = gcs::Quantity::negativity;
    if (which == 3) spec.quantity = gcs::Quantity::qfi;
    if (which == 4) {
        spec.mode = gcs::ScanMode::werner;
        spec.epsilons = {0.5, 1.5, 2.0, 3.0};
        spec.werner = gcs::WernerScan{};
    }
    if (given(app, "--alpha-sq")) spec.alpha_sq = c.alpha_sq;
    if (given(app, "--epsilon")) spec.epsilons = c.epsilons;
    if (given(app, "--cutoff")) spec.cutoff = c.cutoff;
    if (given(app, "--grid-l")) spec.grid.half_width = c.grid_l;
    if (given(app, "--grid-n")) spec.grid.points = c.grid_n;
    if (given(app, "--rel-tol")) spec.rel_tol = c.rel_tol;
    spec.threads = c.threads;
    spec.output.path = c.out;
    spec.output.format = gcs::parse_format(c.format, "--format");
    if (f.tau_points) spec.tau_points = *f.tau_points;
    if (f.refine_points) spec.refine_points = *f.refine_points;
    if (f.no_rescale) spec.rescale = false;
    if (which == 4 && !f.p.empty()) spec.p_grid = f.p;
    gcs::validate(spec);
    return execute_scan(spec);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Generalized coherent states: Wigner negativity, Fisher information and parameter sweeps"};
    app.set_version_flag("--version", gcs::tool_version);
    app.require_subcommand(1);

    Common wig_c, neg_c, qfi_c, scan_c, wer_c, fig_c;
    ScanFlags scan_f, wer_f, fig_f;
    int which = 0;

    auto* wig = app.add_subcommand("wigner", "sample the Wigner function of one GCS on a square grid");
    add_common(*wig, wig_c, true);
    auto* neg = app.add_subcommand("negativity", "converged Wigner negativity of one GCS");
    add_common(*neg, neg_c, true);
    auto* qfi = app.add_subcommand("qfi", "maximal displacement Fisher information of one GCS");
    add_common(*qfi, qfi_c, true);
    auto* scan = app.add_subcommand("scan", "sweep over (eps, tau) from a config file and/or flags");
    add_common(*scan, scan_c, false);
    add_scan_flags(*scan, scan_f, false);
    auto* wer = app.add_subcommand("werner", "Werner-state sweep over (eps, tau, p)");
    add_common(*wer, wer_c, false);
    add_scan_flags(*wer, wer_f, true);
    auto* fig = app.add_subcommand("fig", "regenerate the data behind one figure");
    add_common(*fig, fig_c, false);
    add_scan_flags(*fig, fig_f, true);
    fig->add_option("--which", which, "figure number")->required()->check(CLI::Range(1, 4));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (wig->parsed()) return run_wigner(wig_c);
        if (neg->parsed()) return run_negativity(neg_c);
        if (qfi->parsed()) return run_qfi(qfi_c);
        if (scan->parsed()) return execute_scan(build_spec(*scan, scan_c, scan_f, std::nullopt));
        if (wer->parsed()) return execute_scan(build_spec(*wer, wer_c, wer_f, gcs::ScanMode::werner));
        if (fig->parsed()) return run_fig(*fig, which, fig_c, fig_f);
    } catch (const gcs::IoError& e) {
        std::fprintf(stderr, "I/O error: %s\n", e.what());
        return 3;
    } catch (const gcs::ConfigError& e) {
        std::fprintf(stderr, "configuration error: %s\n", e.what());
        return 1;
    } catch (const gcs::DomainError& e) {
        std::fprintf(stderr, "invalid argument: %s\n", e.what());
        return 1;
    } catch (const gcs::UndefinedStatistic& e) {
        std::fprintf(stderr, "undefined: %s\n", e.what());
        return 1;
    } catch (const gcs::ConvergenceError& e) {
        std::fprintf(stderr, "convergence failure: %s\n", e.what());
        return 2;
    } catch (const gcs::NumericalConsistencyError& e) {
        std::fprintf(stderr, "numerical failure: %s\n", e.what());
        return 2;
    } catch (const gcs::OverflowError& e) {
        std::fprintf(stderr, "numerical failure: %s\n", e.what());
        return 2;
    }
    return 1;
}

// Acceptance run: one PASS/FAIL line per criterion. CLI-driven criteria write their
// CSV files under ./acceptance_out next to the binary's working directory.
#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "gcs/gcs.hpp"

namespace fs = std::filesystem;
using namespace gcs;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;
};

const fs::path out_dir = "acceptance_out";

std::string fmt(const char* f, double a) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, a);
    return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

int run_cli(const std::string& args) {
    const std::string cmd = std::string(GCS_CLI_PATH) + " " + args;
    std::fprintf(stderr, "  $ gcs %s\n", args.c_str());
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

struct CsvRow {
    std::string kind, quantity;
    double epsilon, p, tau, value;
    std::string error;
    std::string raw;
};

double cell(const std::string& s) { return s.empty() ? std::nan("") : std::stod(s); }

std::vector<CsvRow> read_csv(const fs::path& path) {
    std::ifstream in(path);
    std::vector<CsvRow> rows;
    std::string line;
    bool header = false;
    while (std::getline(in, line)) {
        if (line.rfind("#", 0) == 0) continue;
        if (!header) {
            header = true;
            continue;
        }
        std::vector<std::string> f;
        std::stringstream ss(line);
        for (std::string x; std::getline(ss, x, ',');) f.push_back(x);
        while (f.size() < 8) f.emplace_back();
        rows.push_back({f[0], f[1], cell(f[2]), cell(f[3]), cell(f[4]), cell(f[6]), f[7], line});
    }
    return rows;
}

// Coherent-state moments <n^m> are Touchard polynomials of nbar.
double touchard(int m, double x) {
    switch (m) {
        case 1: return x;
        case 2: return x * x + x;
        case 3: return x * x * x + 3 * x * x + x;
        default: return x * x * x * x + 6 * x * x * x + 7 * x * x + x;
    }
}

Outcome moment_invariance() {
    Outcome o;
    std::mt19937_64 rng(101);
    std::uniform_real_distribution<double> eps(0.0, 3.0), tau(0.0, 2 * std::numbers::pi);
    const double nbar = 10.0;
    double worst = 0.0;
    for (int t = 0; t < 20; ++t) {
        const auto s = make_gcs({std::sqrt(nbar), eps(rng), tau(rng)}, auto_cutoff(nbar, 1e-18));
        for (int m = 1; m <= 4; ++m)
            worst = std::max(worst, std::abs(photon_moment(s, m) / touchard(m, nbar) - 1.0));
        worst = std::max(worst, std::abs(mandel_q(s)));
        for (int k = 1; k <= 4; ++k) worst = std::max(worst, std::abs(g_k(s, k) - 1.0));
    }
    o.pass = worst <= 1e-9;
    o.detail = "worst deviation " + fmt("%.3g", worst);
    return o;
}

Outcome special_reductions() {
    Outcome o;
    const double alpha = 3.0;
    const int n = auto_cutoff(alpha * alpha, 1e-18);
    double worst = 0.0;
    for (double tau : {0.3, 1.7, 4.9}) {
        worst = std::max(worst, std::abs(fidelity(make_gcs({alpha, 0.0, tau}, n), coherent_state(alpha, n)) - 1.0));
        worst = std::max(worst, std::abs(fidelity(make_gcs({alpha, 1.0, tau}, n),
                                                  coherent_state(std::polar(alpha, -tau), n)) - 1.0));
    }
    worst = std::max(worst, std::abs(fidelity(make_gcs({alpha, 2.0, std::numbers::pi / 2}, n), yurke_stoler_cat(alpha, n)) - 1.0));
    o.pass = worst <= 1e-10;
    o.detail = "worst |F - 1| " + fmt("%.3g", worst);
    return o;
}

std::vector<GcsParams> oracle_triples() {
    std::mt19937_64 rng(103);
    std::uniform_real_distribution<double> a2(0.25, 10.0), eps(0.0, 3.0), tau(0.0, 2 * std::numbers::pi);
    std::vector<GcsParams> out;
    for (int t = 0; t < 12; ++t) out.push_back({std::sqrt(a2(rng)), eps(rng), tau(rng)});
    return out;
}

Outcome wigner_oracle() {
    Outcome o;
    double worst = 0.0;
    for (const auto& p : oracle_triples()) {
        const int n = auto_cutoff(p.nbar(), 1e-20);
        const auto grid = PhaseGrid::square(p.alpha + 5.0, 101);
        const auto field = wigner_field(make_gcs(p, n), grid);
        for (int j = 0; j < grid.ny; ++j)
            for (int i = 0; i < grid.nx; ++i)
                worst = std::max(worst, std::abs(wigner_point_closed(p, grid.beta(i, j), n) -
                                                 field.values[static_cast<std::size_t>(j) * grid.nx + i]));
    }
    o.pass = worst < 1e-8;
    o.detail = "max |closed - parity| " + fmt("%.3g", worst) + " over 12 x 101^2 points";
    return o;
}

Outcome normalization_and_bound() {
    Outcome o;
    std::vector<FockState> states;
    for (const auto& p : oracle_triples()) states.push_back(make_gcs(p, auto_cutoff(p.nbar(), 1e-18)));
    const double alpha = std::sqrt(10.0);
    for (double eps : {0.0, 0.5, 1.0, 1.5, 2.0, 3.0}) states.push_back(make_gcs({alpha, eps, 1.36}, 48));
    states.push_back(fock_state(1, 1));
    states.push_back(fock_state(10, 10));
    states.push_back(coherent_state(alpha, 48));
    states.push_back(yurke_stoler_cat(3.0, 48));
    double worst_norm = 0.0, worst_bound = 0.0;
    const GridPolicy policy;
    for (const auto& s : states) {
        const auto field = wigner_field(s, PhaseGrid::square(default_half_width(s), policy.points));
        worst_norm = std::max(worst_norm, std::abs(integrate_field(field) - 1.0));
        worst_bound = std::max(worst_bound, std::max(field.max(), -field.min()) - wigner_bound);
    }
    o.pass = worst_norm <= 1e-6 && worst_bound <= 1e-9;
    o.detail = std::to_string(states.size()) + " fields: worst |integral - 1| " + fmt("%.3g", worst_norm) +
               ", max |W| - 2/pi " + fmt("%.3g", worst_bound);
    return o;
}

Outcome negativity_calibration() {
    Outcome o;
    const double tol = 1e-4;
    const double exact = 4.0 * std::exp(-0.5) - 2.0;
    const double fock1 = negativity(fock_state(1, 1), tol);
    const double rel = std::abs(fock1 / exact - 1.0);
    const double alpha = std::sqrt(10.0);
    double classical = negativity(coherent_state(alpha, 48), tol);
    for (double eps : {0.0, 1.0})
        for (double tau : {0.7, 2.9})
            classical = std::max(classical, negativity(make_gcs({alpha, eps, tau}, 48), tol));
    o.pass = rel <= 1e-4 && classical < 1e-8;
    o.detail = "N(|1>) " + fmt("%.9f", fock1) + " rel err " + fmt("%.2g", rel) + ", classical max " +
               fmt("%.3g", classical);
    return o;
}

std::map<double, double> maxima(const std::vector<CsvRow>& rows, const std::string& quantity, std::string& errors) {
    std::map<double, double> out;
    for (const auto& r : rows) {
        if (!r.error.empty()) errors += r.raw + "\n";
        if (r.kind == "max" && r.quantity == quantity) out[r.epsilon] = r.value;
    }
    return out;
}

double fig2_seconds = 0.0;

Outcome fig2_negativity() {
    Outcome o;
    const auto path = out_dir / "fig2_threads1.csv";
    const auto t0 = std::chrono::steady_clock::now();
    const int code = run_cli("fig --which 2 --threads 1 --out " + path.string());
    fig2_seconds = seconds_since(t0);
    std::string errors;
    const auto m = maxima(read_csv(path), "negativity", errors);
    o.pass = code == 0 && errors.empty() && fig2_seconds < 1800.0 && m.size() == 6;
    for (const auto& [eps, v] : m) {
        const bool ok = (eps == 0.0 || eps == 1.0) ? v < 1e-6 : v > 1.0;
        o.pass = o.pass && ok;
        o.detail += "eps " + fmt("%g", eps) + ": " + fmt("%.6g", v) + (ok ? "" : " (!)") + "; ";
    }
    o.detail += "exit " + std::to_string(code) + ", scan " + fmt("%.0f", fig2_seconds) + " s";
    return o;
}

Outcome fig3_qfi() {
    Outcome o;
    const auto path = out_dir / "fig3.csv";
    const auto t0 = std::chrono::steady_clock::now();
    const int code = run_cli("fig --which 3 --out " + path.string());
    const double secs = seconds_since(t0);
    const auto rows = read_csv(path);
    std::string errors;
    const auto m = maxima(rows, "qfi", errors);
    const double flat = 4.0 / (4.0 * 41.0);
    double linear_dev = 0.0;
    for (const auto& r : rows)
        if (r.epsilon == 0.0 || r.epsilon == 1.0) linear_dev = std::max(linear_dev, std::abs(r.value - flat));
    o.pass = code == 0 && errors.empty() && secs < 600.0 && m.size() == 6 && linear_dev <= 1e-6;
    for (const auto& [eps, v] : m) {
        bool ok = true;
        if (eps == 2.0) ok = v >= 0.9;
        else if (eps != 0.0 && eps != 1.0) ok = v > 0.5;
        o.pass = o.pass && ok;
        o.detail += "eps " + fmt("%g", eps) + ": " + fmt("%.6g", v) + (ok ? "" : " (!)") + "; ";
    }
    o.detail += "linear-eps deviation " + fmt("%.2g", linear_dev) + ", exit " + std::to_string(code) + ", " +
                fmt("%.0f", secs) + " s";
    return o;
}

Outcome variance_bounds() {
    Outcome o;
    std::mt19937_64 rng(108);
    std::uniform_real_distribution<double> eps(0.0, 3.0), tau(0.0, 2 * std::numbers::pi);
    const double nbar = 10.0;
    double lowest = 1e300, highest = 0.0;
    GcsParams lowest_at{};
    int squeezed = 0;
    for (int t = 0; t < 50; ++t) {
        const GcsParams p{std::sqrt(nbar), eps(rng), tau(rng)};
        const auto m = ladder_expectations(make_gcs(p, auto_cutoff(nbar, 1e-18)));
        double state_min = 1e300;
        for (int i = 0; i < 720; ++i) {
            const double v = quadrature_variance(m, 2 * std::numbers::pi * i / 720);
            state_min = std::min(state_min, v);
            highest = std::max(highest, v);
        }
        if (state_min < 1.0 - 1e-9) ++squeezed;
        if (state_min < lowest) {
            lowest = state_min;
            lowest_at = p;
        }
    }
    const bool upper = highest <= 4 * nbar + 1 + 1e-6;
    const bool lower = lowest >= 1.0 - 1e-9;
    o.pass = upper && lower;
    o.detail = std::string("upper bound ") + (upper ? "holds" : "violated") + " (max " + fmt("%.6g", highest) +
               "); lower bound " + (lower ? "holds" : "violated") + ": " + std::to_string(squeezed) +
               "/50 states below 1, min Var " + fmt("%.6g", lowest) + " at eps " + fmt("%.4g", lowest_at.epsilon) +
               " tau " + fmt("%.4g", lowest_at.tau);
    return o;
}

Outcome werner_suite() {
    Outcome o;
    // Exact identities.
    bool identities = true;
    for (int i = 0; i <= 10; ++i) {
        const double p = i / 10.0;
        const auto w = werner_weights({p, {1.0, 0.0}, {1.0, -1.0}});
        identities = identities && w[0] >= 0.0 && w[1] >= 0.0 && w[0] + w[1] == 1.0;
        const double h = 1.0 / std::sqrt(2.0);
        const auto u = werner_weights({p, {h, h}, {1.0, -1.0}});
        identities = identities && u[0] == 0.5 && u[1] == 0.5;
    }
    double purity_dev = 0.0;
    for (int i = 0; i <= 10; ++i) {
        const double p = i / 10.0;
        purity_dev = std::max(purity_dev, std::abs(atomic_purity({p, {1.0, 0.0}, {1.0, -1.0}}) - 0.5 * (1.0 + p * p)));
    }
    // Monotonicity in p from the sweep.
    const auto path = out_dir / "werner.csv";
    const auto t0 = std::chrono::steady_clock::now();
    const int code = run_cli("werner --alpha-sq 10 --epsilon 0.5,2 --out " + path.string());
    const double secs = seconds_since(t0);
    std::map<double, std::map<double, double>> curve;
    std::string errors;
    for (const auto& r : read_csv(path)) {
        if (!r.error.empty()) errors += r.raw + "\n";
        if (r.kind == "max") curve[r.epsilon][r.p] = r.value;
    }
    // Each maximum carries the scan tolerance, so steps are compared with that slack.
    const double slack = 1e-3;
    bool monotone = curve.size() == 2, positive = curve.size() == 2;
    std::string shape;
    for (const auto& [eps, byp] : curve) {
        monotone = monotone && byp.size() == 11;
        double last = -1.0;
        for (const auto& [p, v] : byp) {
            if (v < last * (1.0 - slack)) monotone = false;
            last = std::max(last, v);
        }
        positive = positive && !byp.empty() && byp.begin()->second > 0.0;
        shape += "eps " + fmt("%g", eps) + ": p=0 " + fmt("%.4g", byp.begin()->second) + ", p=1 " +
                 fmt("%.4g", byp.rbegin()->second) + "; ";
    }
    o.pass = identities && purity_dev <= 1e-15 && code == 0 && errors.empty() && monotone && positive && secs < 1800.0;
    o.detail = std::string("identities ") + (identities ? "exact" : "broken") + ", purity dev " +
               fmt("%.2g", purity_dev) + ", monotone " + (monotone ? "yes" : "no") + "; " + shape + "exit " +
               std::to_string(code) + ", " + fmt("%.0f", secs) + " s";
    return o;
}

Outcome determinism() {
    Outcome o;
    const auto path = out_dir / "fig2_threads8.csv";
    const int code = run_cli("fig --which 2 --threads 8 --out " + path.string());
    const auto a = read_csv(out_dir / "fig2_threads1.csv");
    const auto b = read_csv(path);
    std::size_t mismatched = 0;
    for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i)
        if (a[i].raw != b[i].raw) ++mismatched;
    o.pass = code == 0 && !a.empty() && a.size() == b.size() && mismatched == 0;
    o.detail = std::to_string(a.size()) + " vs " + std::to_string(b.size()) + " rows, " + std::to_string(mismatched) +
               " differ, exit " + std::to_string(code);
    return o;
}

}  // namespace

// Optional arguments select criteria by number; the default runs all of them.
int main(int argc, char** argv) {
    fs::create_directories(out_dir);
    std::vector<bool> selected(10, argc == 1);
    for (int a = 1; a < argc; ++a) {
        const int k = std::atoi(argv[a]);
        if (k >= 1 && k <= 10) selected[static_cast<std::size_t>(k - 1)] = true;
    }
    const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
        {"moment invariance", moment_invariance},
        {"special-case reductions", special_reductions},
        {"Wigner closed series vs parity oracle", wigner_oracle},
        {"normalization and bound", normalization_and_bound},
        {"negativity calibration", negativity_calibration},
        {"max negativity over tau (nbar=10)", fig2_negativity},
        {"max QFI over tau (nbar=10)", fig3_qfi},
        {"quadrature variance bounds", variance_bounds},
        {"Werner suite", werner_suite},
        {"thread determinism of fig 2", determinism},
    };
    const double limits[] = {1.0, 1.0, 120.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0};
    int failed = 0;
    for (std::size_t k = 0; k < criteria.size(); ++k) {
        if (!selected[k]) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = criteria[k].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = seconds_since(t0);
        if (limits[k] > 0.0 && secs >= limits[k]) {
            o.pass = false;
            o.detail += "; over the " + fmt("%.0f", limits[k]) + " s limit";
        }
        if (!o.pass) ++failed;
        std::printf("criterion %2zu %s  [%s] %.2f s  %s\n", k + 1, o.pass ? "PASS" : "FAIL", criteria[k].first, secs,
                    o.detail.c_str());
        std::fflush(stdout);
    }
    std::printf("%d of %zu criteria failed\n", failed, criteria.size());
    return failed == 0 ? 0 : 1;
}

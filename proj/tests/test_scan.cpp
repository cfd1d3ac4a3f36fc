#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include <gtest/gtest.h>

#include "gcs/scan.hpp"

using namespace gcs;

namespace {

std::string config_error_key(const std::string& text) {
    try {
        parse_config_text(text);
    } catch (const ConfigError& e) {
        return e.key_path();
    }
    return "<no error>";
}

ScanSpec small_spec() {
    ScanSpec s;
    s.alpha_sq = 2.0;
    s.epsilons = {0.0, 1.0, 2.0};
    s.quantity = Quantity::both;
    s.tau_grid = TauGrid{0.2, 1.4, 4};
    s.refine_points = 4;
    return s;
}

std::filesystem::path temp_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("gcs_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace

TEST(Config, MinimalConfigGetsDefaults) {
    const auto spec = parse_config_text(R"({"alpha_sq": 10, "epsilons": [2]})");
    EXPECT_EQ(spec.alpha_sq, 10.0);
    EXPECT_EQ(spec.epsilons, std::vector<double>{2.0});
    EXPECT_EQ(spec.mode, ScanMode::evolution);
    EXPECT_EQ(spec.quantity, Quantity::negativity);
    EXPECT_FALSE(spec.tau_grid.has_value());
    EXPECT_EQ(spec.tau_points, 400);
    EXPECT_EQ(spec.refine_points, 50);
    EXPECT_TRUE(spec.rescale);
    EXPECT_EQ(spec.rel_tol, 1e-3);
    EXPECT_EQ(spec.grid, GridPolicy{});
    EXPECT_EQ(effective_cutoff(spec), 48);
    EXPECT_EQ(effective_p_grid(spec).size(), 11u);
}

TEST(Config, ErrorsNameTheKeyPath) {
    EXPECT_EQ(config_error_key(R"({"epsilons": [2]})"), "alpha_sq");
    EXPECT_EQ(config_error_key(R"({"alpha_sq": 10})"), "epsilons");
    EXPECT_EQ(config_error_key(R"({"alpha_sq": 10, "epsilons": [2], "tau_pionts": 3})"), "tau_pionts");
    EXPECT_EQ(config_error_key(R"({"alpha_sq": 10, "epsilons": [2], "grid": {"pointz": 3}})"), "grid.pointz");
    EXPECT_EQ(config_error_key(R"({"alpha_sq": 10, "epsilons": [2], "p_grid": [0, 1]})"), "werner");
    EXPECT_EQ(config_error_key(R"({"alpha_sq": 10, "epsilons": [2], "tau_points": "many"})"), "tau_points");
    EXPECT_EQ(config_error_key(R"({"alpha_sq": 10, "epsilons": [2, "x"]})"), "epsilons[1]");
    EXPECT_EQ(config_error_key(R"({"alpha_sq": -1, "epsilons": [2]})"), "alpha_sq");
    EXPECT_EQ(config_error_key(R"({"alpha_sq": 10, "epsilons": [2], "tau_grid": {"start": 2, "stop": 1, "count": 5}})"),
              "tau_grid");
    EXPECT_EQ(config_error_key(R"({"alpha_sq": 10, "epsilons": [2], "werner": {"c": [1, 0], "lambdas": [1]}})"),
              "werner.lambdas");
    EXPECT_EQ(config_error_key(R"({"alpha_sq": 10, "epsilons": [2], "werner": {"c": [1, 1]}})"), "werner");
    EXPECT_EQ(config_error_key(R"({"alpha_sq": 10, "epsilons": [2], "mode": "werner"})"), "werner");
    EXPECT_EQ(config_error_key(R"({"alpha_sq": 10, "epsilons": [2], "output": {"format": "xml"}})"), "output.format");
    EXPECT_EQ(config_error_key(R"({"alpha_sq": 10,)"), "<root>");
    EXPECT_THROW(parse_config("/nonexistent/config.json"), IoError);
}

TEST(Config, RoundTrip) {
    ScanSpec spec;
    spec.alpha_sq = 7.25;
    spec.epsilons = {0.5, 2.0, 3.0};
    spec.mode = ScanMode::werner;
    spec.quantity = Quantity::both;
    spec.tau_grid = TauGrid{0.1, 3.3, 17};
    spec.tau_points = 120;
    spec.refine_points = 9;
    spec.rescale = false;
    spec.cutoff = 44;
    spec.rel_tol = 2.5e-4;
    spec.threads = 3;
    spec.grid.points = 201;
    spec.grid.half_width = 12.5;
    spec.werner = WernerScan{{complex{0.6, 0.0}, complex{0.0, 0.8}}, {1.0, -0.5}};
    spec.p_grid = {0.0, 0.25, 1.0};
    spec.output = {"out/run.json", Format::json};
    validate(spec);
    const auto text = to_json(spec).dump();
    EXPECT_EQ(parse_config_text(text), spec);
    const auto minimal = parse_config_text(R"({"alpha_sq": 10, "epsilons": [2]})");
    EXPECT_EQ(parse_config_text(to_json(minimal).dump()), minimal);
}

TEST(TauWindow, DefaultsAndGrid) {
    EXPECT_EQ(default_tau_stop(2.0, 10.0), 2 * std::numbers::pi);
    EXPECT_EQ(default_tau_stop(0.0, 10.0), 2 * std::numbers::pi);
    EXPECT_NEAR(default_tau_stop(0.5, 10.0), 2 * std::numbers::pi / (0.125 * std::pow(10.0, -1.5)), 1e-9);
    EXPECT_NEAR(default_tau_stop(1.5, 10.0), 2 * std::numbers::pi / (0.375 * std::pow(10.0, -0.5)), 1e-12);
    const auto g = default_tau_grid(2.0, 10.0, 400);
    EXPECT_EQ(g.at(399), 2 * std::numbers::pi);
    EXPECT_NEAR(g.at(0), 2 * std::numbers::pi / 400, 1e-15);
    EXPECT_NEAR(rescaled_tau(1.0, 2.0, true), std::exp(2.0), 1e-15);
    EXPECT_EQ(rescaled_tau(1.0, 2.0, false), 1.0);
}

TEST(Scan, EvolutionRowsAndLinearReductions) {
    const auto spec = small_spec();
    const auto r = scan_evolution(spec);
    ASSERT_EQ(r.rows.size(), 3u * 4u * 2u);
    for (const auto& row : r.rows) {
        EXPECT_TRUE(row.error.empty());
        EXPECT_TRUE(std::isfinite(row.value));
        EXPECT_EQ(row.rescaled_tau, rescaled_tau(row.tau, row.epsilon, true));
    }
    // Rows are grouped quantity-major, then eps, then tau.
    for (std::size_t i = 0; i < 4; ++i) {
        const auto& e0 = r.rows[i];
        const auto& e1 = r.rows[4 + i];
        EXPECT_EQ(e0.quantity, "negativity");
        EXPECT_LT(e0.value, 1e-6);
        EXPECT_LT(e1.value, 1e-6);
        const auto& q0 = r.rows[12 + i];
        const auto& q1 = r.rows[16 + i];
        EXPECT_EQ(q0.quantity, "qfi");
        EXPECT_NEAR(q0.value, 4.0 / (4.0 * 9.0), 1e-12);
        EXPECT_NEAR(q1.value, q0.value, 1e-12);
    }
    EXPECT_GT(r.rows[8 + 3].value, 0.1);  // eps = 2 is nonclassical
    EXPECT_EQ(r.metadata["cutoff"], auto_cutoff(2.0, 1e-18));
    EXPECT_EQ(r.metadata["reference"]["fock_n"], 2);
}

TEST(Scan, ThreadCountDoesNotChangeRows) {
    auto spec = small_spec();
    const auto one = scan_max_over_tau(spec);
    spec.threads = 3;
    const auto three = scan_max_over_tau(spec);
    EXPECT_EQ(one.rows, three.rows);
}

TEST(Scan, MaxOverTauCoversCoarseAndRefinedRows) {
    auto spec = small_spec();
    spec.epsilons = {2.0};
    spec.quantity = Quantity::qfi;
    const auto r = scan_max_over_tau(spec);
    ASSERT_EQ(r.rows.size(), 4u + 4u + 1u);
    const auto& best = r.rows.back();
    EXPECT_EQ(best.kind, "max");
    for (const auto& row : r.rows) EXPECT_LE(row.value, best.value);
    EXPECT_EQ(r.metadata["tau_grids"][0]["coarse"]["count"], 4);
    EXPECT_EQ(r.metadata["tau_grids"][0]["refine"]["count"], 4);
}

TEST(Scan, ReferenceFailureAborts) {
    auto spec = small_spec();
    spec.epsilons = {2.0};
    spec.quantity = Quantity::negativity;
    spec.grid.points = 11;
    spec.grid.max_points = 21;
    spec.rel_tol = 1e-6;
    // Without the Fock normalizer no row is meaningful.
    EXPECT_THROW(scan_evolution(spec), ConvergenceError);
    spec.quantity = Quantity::qfi;
    EXPECT_EQ(scan_evolution(spec).rows.size(), 4u);
}

TEST(Scan, PointFailuresAreRecordedPerRow) {
    ScanSpec spec;
    spec.alpha_sq = 1.0;
    spec.epsilons = {2.0};
    spec.tau_grid = TauGrid{0.5, 1.5, 2};
    detail::ScanContext ctx(spec);
    ctx.reference = 1;
    ctx.reference_negativity = 1.0;
    ctx.policy.points = 11;
    ctx.policy.max_points = 21;
    ctx.rel_tol = 1e-9;
    const auto out = detail::run_points(ctx, {{Quantity::negativity, 2.0, 0.5}, {Quantity::qfi, 2.0, 0.5}}, 1);
    EXPECT_FALSE(out[0].error.empty());
    EXPECT_TRUE(std::isnan(out[0].value));
    EXPECT_TRUE(out[1].error.empty());
}

TEST(Scan, WernerRows) {
    ScanSpec spec;
    spec.alpha_sq = 3.0;
    spec.epsilons = {2.0};
    spec.mode = ScanMode::werner;
    spec.tau_grid = TauGrid{0.4, 1.6, 4};
    spec.refine_points = 3;
    spec.werner = WernerScan{};
    spec.p_grid = {0.0, 0.5, 1.0};
    const auto r = scan_werner(spec);
    std::vector<ScanRow> maxima, purity;
    for (const auto& row : r.rows) {
        if (row.kind == "max") maxima.push_back(row);
        if (row.kind == "purity") purity.push_back(row);
    }
    ASSERT_EQ(maxima.size(), 3u);
    ASSERT_EQ(purity.size(), 3u);
    EXPECT_DOUBLE_EQ(purity[0].value, 0.5);
    EXPECT_DOUBLE_EQ(purity[2].value, 1.0);
    EXPECT_GT(maxima[0].value, 0.0);
    EXPECT_LE(maxima[0].value, maxima[1].value + 1e-3);
    EXPECT_LE(maxima[1].value, maxima[2].value + 1e-3);

    ScanSpec pure = spec;
    pure.mode = ScanMode::max;
    pure.werner.reset();
    pure.p_grid.clear();
    const auto p = scan_max_over_tau(pure);
    EXPECT_NEAR(maxima[2].value / p.rows.back().value, 1.0, 2e-3);
}

TEST(Export, CsvAndJson) {
    EXPECT_EQ(format_number(0.1), "0.10000000000000001");
    EXPECT_EQ(format_number(2.0), "2");
    EXPECT_EQ(format_number(std::nan("")), "");
    EXPECT_EQ(csv_escape("a,b"), "\"a,b\"");

    ScanResult r;
    r.metadata = {{"tool", "gcs"}};
    ScanRow row;
    row.kind = "evolution";
    row.quantity = "qfi";
    row.epsilon = 2.0;
    row.tau = 1.0 / 3.0;
    row.rescaled_tau = 1.0;
    row.value = 0.5;
    r.rows.push_back(row);
    const auto csv = to_csv(r);
    std::istringstream lines(csv);
    std::string meta, header, record;
    std::getline(lines, meta);
    std::getline(lines, header);
    std::getline(lines, record);
    EXPECT_EQ(meta, "# {\"tool\":\"gcs\"}");
    EXPECT_EQ(header, "kind,quantity,epsilon,p,tau,rescaled_tau,value,error");
    EXPECT_EQ(record, "evolution,qfi,2,,0.33333333333333331,1,0.5,");
    const auto j = json::parse(render(r, Format::json));
    EXPECT_TRUE(j["rows"][0]["p"].is_null());
    EXPECT_EQ(j["rows"][0]["tau"].get<double>(), 1.0 / 3.0);
}

TEST(Export, WignerFrames) {
    const auto dir = temp_dir("frames");
    const auto grid = PhaseGrid::square(6.0, 61);
    const auto frames = export_wigner_frames(4.0, 2.0, {0.0, 0.3}, grid, dir, Format::json);
    ASSERT_EQ(frames.size(), 2u);
    EXPECT_GE(frames[0].min, -1e-8);
    EXPECT_LT(frames[1].min, -1e-3);
    std::ifstream in(frames[0].path);
    const auto j = json::parse(in);
    EXPECT_EQ(j["grid"]["nx"], 61);
    EXPECT_EQ(j["grid"]["L"], 6.0);
    const auto& values = j["values"];
    ASSERT_EQ(values.size(), 61u * 61u);
    // tau = 0: the coherent peak sits at beta = (2, 0): i = (2 + 6) / 0.2 = 40, j = 30.
    std::size_t arg = 0;
    for (std::size_t i = 0; i < values.size(); ++i)
        if (values[i].get<double>() > values[arg].get<double>()) arg = i;
    EXPECT_EQ(arg, 30u * 61u + 40u);

    const auto linear = export_wigner_frames(4.0, 1.0, {0.7}, grid, dir, Format::csv);
    EXPECT_GE(linear[0].min, -1e-8);
    std::filesystem::remove_all(dir);
}

TEST(Export, UnwritableTargetFailsBeforeComputing) {
    const auto grid = PhaseGrid::square(6.0, 2001);
    EXPECT_THROW(export_wigner_frames(50.0, 2.0, {0.1, 0.2}, grid, "/proc/gcs_frames", Format::csv), IoError);
    EXPECT_THROW(ensure_writable("/proc/nope/out.csv"), IoError);
}

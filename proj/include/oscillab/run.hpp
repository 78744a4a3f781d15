#pragma once

// Dispatch of a validated configuration to the library and emission of its reports:
// one CSV per table, summary.json with the verdict, and meta.json with everything that
// varies between reruns (timestamp, threads), so the CSV bodies stay byte-identical.

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "oscillab/catalog.hpp"
#include "oscillab/cellhom.hpp"
#include "oscillab/config.hpp"
#include "oscillab/measure_io.hpp"
#include "oscillab/nonlocal.hpp"
#include "oscillab/osclab.hpp"
#include "oscillab/parallel.hpp"
#include "oscillab/ymeasure.hpp"

namespace oscillab {

struct Table {
    std::string name;  // file stem
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    template <class... Cells>
    void add(const Cells&... cells) {
        rows.push_back({cell(cells)...});
    }
    static std::string cell(const std::string& s) { return s; }
    static std::string cell(const char* s) { return s; }
    static std::string cell(double v) { return format_double(v); }
    static std::string cell(int v) { return std::to_string(v); }
    static std::string cell(std::size_t v) { return std::to_string(v); }
    static std::string cell(bool v) { return v ? "true" : "false"; }
};

struct RunOutput {
    bool pass = true;
    std::vector<Table> tables;
    std::vector<Table> plots;  // two-column series
    std::vector<std::pair<std::string, std::string>> files;  // extra artifacts: name, contents
    nlohmann::json summary = nlohmann::json::object();
};

/// RFC 4180 field quoting.
inline std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

inline std::string to_csv(const Table& t) {
    std::string out;
    const auto line = [&](const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) out += (i ? "," : "") + csv_field(cells[i]);
        out += '\n';
    };
    line(t.header);
    for (const auto& r : t.rows) line(r);
    return out;
}

namespace detail {

inline nlohmann::json finite_or_string(double v) {
    if (std::isfinite(v)) return v;
    return std::isnan(v) ? "nan" : (v > 0 ? "inf" : "-inf");
}

inline GridField field_from(const std::vector<double>& vals, const GridSpec& spec, const std::string& what) {
    const auto d = static_cast<std::size_t>(spec.dim_state);
    if (vals.size() == d) return GridField::constant(spec, vals);
    if (vals.size() == spec.macro_cells() * d) return GridField(spec, vals);
    throw ConfigError(what + " needs d values or one value per macro cell (" +
                      std::to_string(spec.macro_cells() * d) + ")");
}

inline std::vector<IntegrandF> battery_from(const std::vector<std::string>& names) {
    if (names.empty()) return standard_battery();
    std::vector<IntegrandF> out;
    for (const auto& n : names) out.push_back(catalog::local(n));
    return out;
}

inline CellSolverOptions cell_options(const ExperimentConfig& c) {
    CellSolverOptions o;
    o.starts = static_cast<int>(c.seeds.size());
    return o;
}

inline RunOutput run_cellhom(const ExperimentConfig& c) {
    RunOutput out;
    const auto est = f_hom_estimate(*c.integrand, c.xi, c.T, c.m, c.seeds.front(), cell_options(c),
                                    c.tol.plateau_rel, c.grid.dim_macro, c.grid.window);
    Table t{"cellhom", {"T", "value"}, {}};
    bool monotone = true;
    for (std::size_t i = 0; i < est.per_T_values.size(); ++i) {
        const auto [T, v] = est.per_T_values[i];
        t.add(T, v);
        if (i > 0) {
            const double prev = est.per_T_values[i - 1].second;
            if (v > prev + 1e-9 * (1.0 + std::abs(prev))) monotone = false;
        }
    }
    out.tables.push_back(t);
    out.plots.push_back({"plot_cellhom", {"T", "value"}, t.rows});
    out.pass = monotone;
    out.summary["xi"] = c.xi;
    out.summary["f_hom_estimate"] = est.extrapolated;
    out.summary["status"] = to_string(est.status);
    out.summary["monotone_in_T"] = monotone;
    return out;
}

inline RunOutput run_convexify(const ExperimentConfig& c) {
    RunOutput out;
    auto xs = c.xi_list;
    if (xs.empty()) {
        if (c.grid.dim_state != 1) throw ConfigError("convexify with d > 1 needs an explicit xi_list");
        for (double v : {-2.0, -1.0, 0.0, 0.5, 1.0, 2.0}) xs.push_back({v});
    }
    Table t{"convexify", {}, {}};
    for (std::size_t k = 0; k < static_cast<std::size_t>(c.grid.dim_state); ++k) t.header.push_back("xi_" + std::to_string(k));
    for (const char* h : {"f_hom_estimate", "cof_hom", "abs_diff", "allowed", "pass"}) t.header.push_back(h);
    CofHomSolver solver(*c.integrand, c.m, c.grid.dim_macro, c.grid.window, c.seeds.front(), cell_options(c));
    double worst = 0.0;
    for (const auto& xi : xs) {
        if (xi.size() != static_cast<std::size_t>(c.grid.dim_state))
            throw ConfigError("xi_list entries must have d components");
        const auto est = f_hom_estimate(*c.integrand, xi, c.T, c.m, c.seeds.front(), cell_options(c),
                                        c.tol.plateau_rel, c.grid.dim_macro, c.grid.window);
        const double co = solver(xi);
        const double diff = std::abs(est.extrapolated - co);
        const double allowed = c.tol.convexify * (1.0 + std::abs(co));
        std::vector<std::string> row;
        for (double v : xi) row.push_back(format_double(v));
        for (auto s : {format_double(est.extrapolated), format_double(co), format_double(diff), format_double(allowed)})
            row.push_back(s);
        row.push_back(diff <= allowed ? "true" : "false");
        t.rows.push_back(row);
        out.pass = out.pass && diff <= allowed;
        worst = std::max(worst, diff / (1.0 + std::abs(co)));
    }
    out.tables.push_back(t);
    out.summary["worst_relative_diff"] = worst;
    out.summary["tolerance"] = c.tol.convexify;
    return out;
}

inline RunOutput run_ym_check(const ExperimentConfig& c) {
    RunOutput out;
    std::ifstream in(c.measure_path);
    if (!in) throw ConfigError("cannot open measure '" + c.measure_path + "'");
    const auto nu = read_measure_csv(in, c.grid);
    CharacterizeOptions co;
    co.gap_tol = c.tol.gap;
    co.seed = c.seeds.front();
    co.solver.starts = static_cast<int>(c.seeds.size());
    if (c.deformation) co.claimed_deformation = field_from(*c.deformation, c.grid, "deformation");
    const auto rep = characterize(nu, battery_from(c.battery), co);
    Table t{"ym-check", {"integrand", "worst_macro_cell", "gap", "f_hom"}, {}};
    for (const auto& g : rep.jensen_gaps) t.add(g.label, g.worst_cell, g.gap, g.f_hom);
    out.tables.push_back(t);
    out.pass = rep.verdict == Verdict::consistent;
    out.summary["characterization"] = to_string(rep.verdict);
    out.summary["diagnostics"] = rep.diagnostics;
    out.summary["p_moment"] = finite_or_string(rep.p_moment);
    return out;
}

inline RunOutput run_oscillate(const ExperimentConfig& c) {
    RunOutput out;
    auto [phi, period] = catalog::periodic_profile(c.sequence.profile);
    OscillationSequence seq;
    seq.kind = c.sequence.kind == "averaging_tiles" ? OscillationSequence::Kind::averaging_tiles
                                                     : OscillationSequence::Kind::periodic_shift;
    seq.phi = phi;
    seq.F = c.sequence.F;
    seq.eps_schedule = c.eps;
    seq.spec = c.grid;
    auto nu = periodic_shift_measure(phi, seq.F, period, c.grid);
    if (seq.kind == OscillationSequence::Kind::averaging_tiles) nu = average_over_x(nu);
    const auto results = test_generation(seq, nu, macro_battery(c.z_battery), cell_state_battery(c.psi_battery));

    Table pairs{"oscillate", {"z", "psi", "eps", "pairing", "target", "error"}, {}};
    Table rates{"rates", {"z", "psi", "rate", "final_error", "pass"}, {}};
    for (const auto& r : results) {
        for (std::size_t n = 0; n < r.eps.size(); ++n) pairs.add(r.z_label, r.psi_label, r.eps[n], r.values[n], r.target, r.error(n));
        const bool ok = seq.kind == OscillationSequence::Kind::periodic_shift
                            ? (r.rate >= c.tol.rate_min || r.final_error() <= 1e-12 * (1.0 + std::abs(r.target)))
                            : r.final_error() < c.tol.pairing_gap;
        rates.add(r.z_label, r.psi_label, r.rate, r.final_error(), ok);
        out.pass = out.pass && ok;
        out.plots.push_back({"plot_" + r.z_label + "_" + r.psi_label, {"eps", "error"}, {}});
        for (std::size_t n = 0; n < r.eps.size(); ++n) out.plots.back().add(r.eps[n], r.error(n));
    }
    out.tables.push_back(pairs);
    out.tables.push_back(rates);
    out.summary["pairs"] = results.size();
    out.summary["criterion"] = seq.kind == OscillationSequence::Kind::periodic_shift ? "rate" : "final_error";

    if (c.product) {
        const auto& p = *c.product;
        const auto rep = test_product_structure(seq, nu, catalog::macro_test(p.theta1), catalog::macro_test(p.theta2),
                                                catalog::cell_state_test(p.psi1), catalog::cell_state_test(p.psi2));
        Table t{"product", {"eps", "joint", "product_of_marginals"}, {}};
        for (std::size_t n = 0; n < rep.eps.size(); ++n) t.add(rep.eps[n], rep.joint[n], rep.product_of_marginals);
        out.tables.push_back(t);
        out.summary["product_gap"] = rep.gap;
        out.pass = out.pass && rep.gap <= c.tol.product_gap;
    }
    return out;
}

inline RunOutput run_gamma(const ExperimentConfig& c) {
    RunOutput out;
    NonlocalW W = *c.W;
    if (c.y_independent) W = reduce_y_independent(W, c.grid);
    OscillationSequence::check_schedule(c.eps, c.grid);
    GridSpec hom = c.grid;
    hom.n_x = c.hom_n_x;
    hom.n_y = c.hom_n_y;
    std::optional<GridField> u;
    if (c.constraint == "fixed") u = field_from(*c.deformation, hom, "deformation");

    std::vector<int> Ks = c.K;
    std::sort(Ks.begin(), Ks.end());
    Table ks{"k_schedule", {"K", "I_hom", "converged", "audit"}, {}};
    std::optional<HomMinimum> best;
    std::optional<AtomicYoungMeasure> previous;
    for (int K : Ks) {
        HomOptions ho;
        ho.warm = previous;
        auto m = detail::minimize_I_hom_seeds(W, u, static_cast<std::size_t>(K), hom, c.seeds, ho);
        ks.add(K, m.value, m.converged, m.audit ? to_string(m.audit->verdict) : "skipped");
        previous = m.nu;
        if (!best || m.value < best->value) best = std::move(m);
    }
    const double I_hom = best->value;

    EpsOptions eo;
    if (u) eo.fixed_deformation = u;
    Table t{"gamma", {"eps", "min_I_eps", "I_hom", "gap"}, {}};
    std::vector<double> gaps;
    for (double e : c.eps) {
        const auto m = detail::minimize_I_eps_seeds(W, e, c.grid, c.seeds, eo);
        gaps.push_back(std::abs(m.value - I_hom));
        t.add(e, m.value, I_hom, gaps.back());
    }
    bool trend = true;
    for (std::size_t n = 1; n < gaps.size(); ++n)
        if (gaps[n] > gaps[n - 1] + 1e-4 * (1.0 + std::abs(I_hom))) trend = false;
    const double allowed = std::max(c.tol.gamma_rel * std::abs(I_hom), c.tol.gamma_abs);
    const bool audit_ok = !best->audit || best->audit->verdict == Verdict::consistent;
    out.pass = gaps.back() <= allowed && audit_ok;

    out.tables.push_back(t);
    out.tables.push_back(ks);
    out.plots.push_back({"plot_gamma_gap", {"eps", "gap"}, {}});
    for (std::size_t n = 0; n < gaps.size(); ++n) out.plots.back().add(c.eps[n], gaps[n]);
    std::ostringstream measure;
    write_measure_csv(measure, best->nu);
    out.files.emplace_back("hom_measure.csv", measure.str());
    out.summary["W"] = c.W_name;
    out.summary["constraint"] = c.constraint;
    out.summary["I_hom"] = I_hom;
    out.summary["best_K"] = best->nu.K;
    out.summary["final_gap"] = gaps.back();
    out.summary["allowed_gap"] = allowed;
    out.summary["gaps_nonincreasing"] = trend;
    out.summary["audit"] = best->audit ? to_string(best->audit->verdict) : "skipped";
    if (best->audit && !audit_ok) out.summary["audit_diagnostics"] = best->audit->diagnostics;
    return out;
}

inline RunOutput run_single_gamma(const ExperimentConfig& c) {
    RunOutput out;
    const auto rep = single_integral_gamma(*c.integrand, c.eps, c.grid, c.seeds.front());
    Table t{"single-gamma", {"eps", "min_F_eps", "min_hom", "gap"}, {}};
    for (std::size_t n = 0; n < rep.eps.size(); ++n) t.add(rep.eps[n], rep.min_F_eps[n], rep.min_hom, rep.gaps[n]);
    out.tables.push_back(t);
    out.plots.push_back({"plot_single_gamma_gap", {"eps", "gap"}, {}});
    for (std::size_t n = 0; n < rep.eps.size(); ++n) out.plots.back().add(rep.eps[n], rep.gaps[n]);
    const double allowed = c.tol.single_rel * std::abs(rep.min_hom) + c.tol.single_abs;
    out.pass = rep.gaps.back() <= allowed;
    out.summary["min_hom"] = rep.min_hom;
    out.summary["argmin_hom"] = rep.argmin_hom;
    out.summary["final_gap"] = rep.gaps.back();
    out.summary["allowed_gap"] = allowed;
    return out;
}

}  // namespace detail

/// Runs the configured command. Library errors propagate; a refuted check sets pass = false.
inline RunOutput run_experiment(const ExperimentConfig& c) {
    if (c.seeds.empty()) throw ConfigError("at least one seed is required");
    RunOutput out;
    if (c.command == "cellhom") out = detail::run_cellhom(c);
    else if (c.command == "convexify") out = detail::run_convexify(c);
    else if (c.command == "ym-check") out = detail::run_ym_check(c);
    else if (c.command == "oscillate") out = detail::run_oscillate(c);
    else if (c.command == "gamma") out = detail::run_gamma(c);
    else if (c.command == "single-gamma") out = detail::run_single_gamma(c);
    else throw ConfigError("no command given");
    out.summary["command"] = c.command;
    out.summary["seeds"] = c.seeds;
    out.summary["verdict"] = out.pass ? "pass" : "fail";
    return out;
}

/// Writes tables, plot series (when enabled), extra files, summary.json and meta.json.
inline void write_outputs(const RunOutput& out, const ExperimentConfig& c, const nlohmann::json& meta) {
    namespace fs = std::filesystem;
    const fs::path dir(c.output_dir);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw ConfigError("cannot create output directory '" + c.output_dir + "': " + ec.message());
    const auto put = [&](const std::string& name, const std::string& body) {
        std::ofstream f(dir / name, std::ios::binary);
        if (!f) throw ConfigError("cannot write '" + (dir / name).string() + "'");
        f << body;
    };
    for (const auto& t : out.tables) put(t.name + ".csv", to_csv(t));
    if (c.plots)
        for (const auto& t : out.plots) put(t.name + ".csv", to_csv(t));
    for (const auto& [name, body] : out.files) put(name, body);
    put("summary.json", out.summary.dump(2) + "\n");
    put("meta.json", meta.dump(2) + "\n");
}

inline nlohmann::json run_metadata(const std::string& config_path) {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
    return {{"timestamp", buf}, {"config", config_path}, {"threads", thread_count()}};
}

}  // namespace oscillab

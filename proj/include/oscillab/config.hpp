#pragma once

// Experiment configuration: a JSON document describing one command of the lab. Unknown
// keys are rejected, defaults are filled in, and every error names the offending key
// and the line it sits on.

#include <json.hpp>

#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "oscillab/catalog.hpp"
#include "oscillab/error.hpp"
#include "oscillab/lattice.hpp"

namespace oscillab {

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& what) : Error("config: " + what) {}
};

struct Tolerances {
    double plateau_rel = 1e-2;    // f_hom_estimate plateau detection
    double convexify = 5e-2;      // |f_hom_estimate − (co f)_hom| ≤ tol·(1+|value|)
    double gap = 1e-2;            // Jensen gap tolerance in characterize, relative to 1+|f_hom|
    double rate_min = 0.8;        // log-log rate required of periodic-shift pairings
    double pairing_gap = 5e-2;    // final pairing error allowed for averaging tiles
    double product_gap = 5e-3;    // product structure at the finest ε
    double gamma_rel = 2e-2;      // final minima gap relative to |I_hom|
    double gamma_abs = 1e-6;      // absolute floor when I_hom is near zero
    double single_rel = 1e-2;     // single-integral limit, relative to |min ∫ f_hom|
    double single_abs = 1e-6;
};

struct SequenceConfig {
    std::string kind = "periodic_shift";  // or averaging_tiles
    std::string profile = "sin";
    std::vector<double> F;                // defaults to zeros
};

struct ProductConfig {
    std::string theta1 = "one", theta2 = "one", psi1 = "xi2", psi2 = "xi2";
};

struct ExperimentConfig {
    std::string command;
    GridSpec grid;
    std::optional<IntegrandF> integrand;
    std::string integrand_name;
    std::optional<NonlocalW> W;
    std::string W_name;
    bool y_independent = false;
    std::vector<double> xi{1.0};
    std::vector<std::vector<double>> xi_list;
    std::vector<int> T{1, 2, 4, 8};
    int m = 8;
    std::vector<double> eps;
    std::vector<int> K{4};
    std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5, 6, 7, 8};
    std::string output_dir = "oscillab-out";
    std::string measure_path;
    std::vector<std::string> battery;
    std::optional<std::vector<double>> deformation;  // per macro cell of the relevant grid, or one value
    std::string constraint = "free";
    int hom_n_x = 4;
    int hom_n_y = 64;
    SequenceConfig sequence;
    std::vector<std::string> z_battery{"one", "x", "x2", "exp"};
    std::vector<std::string> psi_battery{"xi", "xi2", "cos_y_xi"};
    std::optional<ProductConfig> product;
    bool plots = false;
    Tolerances tol;
};

inline const std::vector<std::string>& command_names() {
    static const std::vector<std::string> names{"cellhom", "convexify", "ym-check",
                                                "oscillate", "gamma",    "single-gamma"};
    return names;
}

namespace detail {

/// 1-based line and column of a byte offset.
inline std::pair<std::size_t, std::size_t> line_col(const std::string& text, std::size_t offset) {
    std::size_t line = 1, col = 1;
    for (std::size_t i = 0; i < std::min(offset, text.size()); ++i) {
        if (text[i] == '\n') ++line, col = 1;
        else ++col;
    }
    return {line, col};
}

class ConfigReader {
public:
    ConfigReader(const std::string& text, std::string origin) : text_(text), origin_(std::move(origin)) {}

    /// Line of the first occurrence of "key" as a JSON member name.
    std::string where(const std::string& key) const {
        const auto pos = text_.find("\"" + key + "\"");
        if (pos == std::string::npos) return origin_;
        return origin_ + ":" + std::to_string(line_col(text_, pos).first);
    }
    [[noreturn]] void fail(const std::string& key, const std::string& msg) const {
        throw ConfigError(where(key) + ": '" + key + "' " + msg);
    }

    void only_keys(const nlohmann::json& obj, const std::set<std::string>& allowed, const std::string& ctx) const {
        for (auto it = obj.begin(); it != obj.end(); ++it)
            if (!allowed.count(it.key())) {
                std::string list;
                for (const auto& k : allowed) list += (list.empty() ? "" : ", ") + k;
                throw ConfigError(where(it.key()) + ": unknown key '" + it.key() + "' in " + ctx +
                                  " (allowed: " + list + ")");
            }
    }

    double number(const nlohmann::json& v, const std::string& key) const {
        if (!v.is_number()) fail(key, "must be a number");
        return v.get<double>();
    }
    int integer(const nlohmann::json& v, const std::string& key) const {
        if (!v.is_number_integer()) fail(key, "must be an integer");
        return v.get<int>();
    }
    bool boolean(const nlohmann::json& v, const std::string& key) const {
        if (!v.is_boolean()) fail(key, "must be true or false");
        return v.get<bool>();
    }
    std::string string(const nlohmann::json& v, const std::string& key) const {
        if (!v.is_string()) fail(key, "must be a string");
        return v.get<std::string>();
    }
    std::vector<double> numbers(const nlohmann::json& v, const std::string& key) const {
        if (v.is_number()) return {v.get<double>()};
        if (!v.is_array() || v.empty()) fail(key, "must be a nonempty list of numbers");
        std::vector<double> out;
        for (const auto& e : v) out.push_back(number(e, key));
        return out;
    }
    std::vector<int> integers(const nlohmann::json& v, const std::string& key) const {
        if (v.is_number_integer()) return {v.get<int>()};
        if (!v.is_array() || v.empty()) fail(key, "must be a nonempty list of integers");
        std::vector<int> out;
        for (const auto& e : v) out.push_back(integer(e, key));
        return out;
    }
    std::vector<std::string> strings(const nlohmann::json& v, const std::string& key) const {
        if (!v.is_array() || v.empty()) fail(key, "must be a nonempty list of names");
        std::vector<std::string> out;
        for (const auto& e : v) out.push_back(string(e, key));
        return out;
    }

private:
    const std::string& text_;
    std::string origin_;
};

inline IntegrandF polynomial_integrand(const ConfigReader& r, const nlohmann::json& j) {
    r.only_keys(j, {"label", "pieces", "p", "growth_c"}, "integrand");
    catalog::PiecewisePolynomial poly;
    if (!j.contains("pieces") || !j["pieces"].is_array()) r.fail("pieces", "must be a list of polynomial pieces");
    for (const auto& pc : j["pieces"]) {
        if (!pc.is_object()) r.fail("pieces", "entries must be objects");
        r.only_keys(pc, {"y_lo", "y_hi", "coeffs"}, "polynomial piece");
        catalog::PolynomialPiece piece;
        if (pc.contains("y_lo")) piece.y_lo = r.number(pc["y_lo"], "y_lo");
        if (pc.contains("y_hi")) piece.y_hi = r.number(pc["y_hi"], "y_hi");
        if (!pc.contains("coeffs")) r.fail("coeffs", "is required in every polynomial piece");
        piece.coeffs = r.numbers(pc["coeffs"], "coeffs");
        poly.pieces.push_back(std::move(piece));
    }
    const double p = j.contains("p") ? r.number(j["p"], "p") : 2.0;
    const double c = j.contains("growth_c") ? r.number(j["growth_c"], "growth_c") : 1.0;
    const std::string label = j.contains("label") ? r.string(j["label"], "label") : "polynomial";
    try {
        return catalog::from_polynomial(std::move(poly), p, c, label);
    } catch (const InvalidArgument& e) {
        throw ConfigError(r.where("pieces") + ": " + e.what());
    }
}

}  // namespace detail

/// Parses and validates a configuration. origin names the source in diagnostics; a
/// nonempty command fills in (or must match) the config's own command.
inline ExperimentConfig parse_config(const std::string& text, const std::string& origin = "<config>",
                                     const std::string& command = "") {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        const auto [line, col] = detail::line_col(text, e.byte == 0 ? 0 : e.byte - 1);
        std::string msg = e.what();
        if (const auto p = msg.find("parse error"); p != std::string::npos) msg = msg.substr(p);
        throw ConfigError(origin + ":" + std::to_string(line) + ":" + std::to_string(col) + ": " + msg);
    }
    const detail::ConfigReader r(text, origin);
    if (!j.is_object()) throw ConfigError(origin + ": top level must be an object");
    r.only_keys(j,
                {"command", "grid", "integrand", "W", "y_independent", "xi", "xi_list", "T", "m", "eps", "K",
                 "seeds", "output_dir", "measure", "battery", "deformation", "constraint", "hom_grid",
                 "sequence", "z_battery", "psi_battery", "product", "plots", "tolerances"},
                "config");

    ExperimentConfig c;
    if (j.contains("command")) {
        c.command = r.string(j["command"], "command");
        if (std::find(command_names().begin(), command_names().end(), c.command) == command_names().end()) {
            std::string list;
            for (const auto& n : command_names()) list += (list.empty() ? "" : ", ") + n;
            r.fail("command", "must be one of " + list + " (got '" + c.command + "')");
        }
    }
    if (!command.empty()) {
        if (!c.command.empty() && c.command != command)
            r.fail("command", "is '" + c.command + "' but '" + command + "' was requested");
        c.command = command;
    }
    if (c.command.empty()) throw ConfigError(origin + ": no command given");

    GridSpec& g = c.grid;
    if (j.contains("grid")) {
        const auto& gj = j["grid"];
        if (!gj.is_object()) r.fail("grid", "must be an object");
        r.only_keys(gj, {"N", "d", "p", "n_x", "n_y", "omega_lo", "omega_hi", "window"}, "grid");
        if (gj.contains("N")) g.dim_macro = r.integer(gj["N"], "N");
        if (gj.contains("d")) g.dim_state = r.integer(gj["d"], "d");
        if (gj.contains("p")) g.p_exponent = r.number(gj["p"], "p");
        if (gj.contains("n_x")) g.n_x = r.integer(gj["n_x"], "n_x");
        if (gj.contains("n_y")) g.n_y = r.integer(gj["n_y"], "n_y");
        g.omega_lo.assign(static_cast<std::size_t>(std::max(g.dim_macro, 1)), 0.0);
        g.omega_hi.assign(static_cast<std::size_t>(std::max(g.dim_macro, 1)), 1.0);
        if (gj.contains("omega_lo")) g.omega_lo = r.numbers(gj["omega_lo"], "omega_lo");
        if (gj.contains("omega_hi")) g.omega_hi = r.numbers(gj["omega_hi"], "omega_hi");
        if (gj.contains("window")) {
            const auto w = r.numbers(gj["window"], "window");
            if (w.size() != 2) r.fail("window", "must be [lo, hi]");
            g.window = {w[0], w[1]};
        }
    }
    try {
        g.validate();
    } catch (const InvalidArgument& e) {
        throw ConfigError(r.where("grid") + ": " + e.what());
    }

    if (j.contains("integrand")) {
        const auto& ij = j["integrand"];
        if (ij.is_string()) {
            c.integrand_name = ij.get<std::string>();
            try {
                c.integrand = catalog::local(c.integrand_name);
            } catch (const InvalidArgument& e) {
                throw ConfigError(r.where("integrand") + ": " + e.what());
            }
        } else if (ij.is_object()) {
            c.integrand = detail::polynomial_integrand(r, ij);
            c.integrand_name = c.integrand->label;
        } else {
            r.fail("integrand", "must be a catalog name or a piecewise polynomial object");
        }
    }
    if (j.contains("W")) {
        c.W_name = r.string(j["W"], "W");
        try {
            c.W = catalog::nonlocal(c.W_name);
        } catch (const InvalidArgument& e) {
            throw ConfigError(r.where("W") + ": " + e.what());
        }
    }
    if (j.contains("y_independent")) c.y_independent = r.boolean(j["y_independent"], "y_independent");
    if (j.contains("xi")) c.xi = r.numbers(j["xi"], "xi");
    if (j.contains("xi_list")) {
        const auto& xl = j["xi_list"];
        if (!xl.is_array() || xl.empty()) r.fail("xi_list", "must be a nonempty list");
        for (const auto& e : xl) c.xi_list.push_back(r.numbers(e, "xi_list"));
    }
    if (j.contains("T")) c.T = r.integers(j["T"], "T");
    for (int t : c.T)
        if (t < 1) r.fail("T", "entries must be positive");
    if (j.contains("m")) c.m = r.integer(j["m"], "m");
    if (c.m < 1) r.fail("m", "must be positive");
    if (j.contains("eps")) c.eps = r.numbers(j["eps"], "eps");
    for (double e : c.eps)
        if (!(e > 0.0)) r.fail("eps", "entries must be positive");
    if (j.contains("K")) c.K = r.integers(j["K"], "K");
    for (int k : c.K)
        if (k < 1) r.fail("K", "entries must be positive");
    if (j.contains("seeds")) {
        c.seeds.clear();
        for (int s : r.integers(j["seeds"], "seeds")) {
            if (s < 0) r.fail("seeds", "entries must be nonnegative");
            c.seeds.push_back(static_cast<std::uint64_t>(s));
        }
    }
    if (j.contains("output_dir")) c.output_dir = r.string(j["output_dir"], "output_dir");
    if (j.contains("measure")) c.measure_path = r.string(j["measure"], "measure");
    if (j.contains("battery")) {
        c.battery = r.strings(j["battery"], "battery");
        for (const auto& n : c.battery) try {
                catalog::local(n);
            } catch (const InvalidArgument& e) {
                throw ConfigError(r.where("battery") + ": " + e.what());
            }
    }
    if (j.contains("deformation")) c.deformation = r.numbers(j["deformation"], "deformation");
    if (j.contains("constraint")) {
        c.constraint = r.string(j["constraint"], "constraint");
        if (c.constraint != "free" && c.constraint != "fixed") r.fail("constraint", "must be \"free\" or \"fixed\"");
    }
    if (j.contains("hom_grid")) {
        const auto& hj = j["hom_grid"];
        if (!hj.is_object()) r.fail("hom_grid", "must be an object");
        r.only_keys(hj, {"n_x", "n_y"}, "hom_grid");
        if (hj.contains("n_x")) c.hom_n_x = r.integer(hj["n_x"], "n_x");
        if (hj.contains("n_y")) c.hom_n_y = r.integer(hj["n_y"], "n_y");
        if (c.hom_n_x < 1 || c.hom_n_y < 1) r.fail("hom_grid", "cell counts must be positive");
    }
    if (j.contains("sequence")) {
        const auto& sj = j["sequence"];
        if (!sj.is_object()) r.fail("sequence", "must be an object");
        r.only_keys(sj, {"kind", "profile", "F"}, "sequence");
        if (sj.contains("kind")) c.sequence.kind = r.string(sj["kind"], "kind");
        if (c.sequence.kind != "periodic_shift" && c.sequence.kind != "averaging_tiles")
            r.fail("kind", "must be \"periodic_shift\" or \"averaging_tiles\"");
        if (sj.contains("profile")) c.sequence.profile = r.string(sj["profile"], "profile");
        try {
            catalog::periodic_profile(c.sequence.profile);
        } catch (const InvalidArgument& e) {
            throw ConfigError(r.where("profile") + ": " + e.what());
        }
        if (sj.contains("F")) c.sequence.F = r.numbers(sj["F"], "F");
    }
    if (c.sequence.F.empty()) c.sequence.F.assign(static_cast<std::size_t>(g.dim_state), 0.0);
    const auto check_names = [&](const std::string& key, const std::vector<std::string>& names, auto probe) {
        for (const auto& n : names) try {
                probe(n);
            } catch (const InvalidArgument& e) {
                throw ConfigError(r.where(key) + ": " + e.what());
            }
    };
    if (j.contains("z_battery")) c.z_battery = r.strings(j["z_battery"], "z_battery");
    if (j.contains("psi_battery")) c.psi_battery = r.strings(j["psi_battery"], "psi_battery");
    check_names("z_battery", c.z_battery, [](const std::string& n) { catalog::macro_test(n); });
    check_names("psi_battery", c.psi_battery, [](const std::string& n) { catalog::cell_state_test(n); });
    if (j.contains("product")) {
        const auto& pj = j["product"];
        if (!pj.is_object()) r.fail("product", "must be an object");
        r.only_keys(pj, {"theta1", "theta2", "psi1", "psi2"}, "product");
        ProductConfig p;
        if (pj.contains("theta1")) p.theta1 = r.string(pj["theta1"], "theta1");
        if (pj.contains("theta2")) p.theta2 = r.string(pj["theta2"], "theta2");
        if (pj.contains("psi1")) p.psi1 = r.string(pj["psi1"], "psi1");
        if (pj.contains("psi2")) p.psi2 = r.string(pj["psi2"], "psi2");
        check_names("product", {p.theta1, p.theta2}, [](const std::string& n) { catalog::macro_test(n); });
        check_names("product", {p.psi1, p.psi2}, [](const std::string& n) { catalog::cell_state_test(n); });
        c.product = p;
    }
    if (j.contains("plots")) c.plots = r.boolean(j["plots"], "plots");
    if (j.contains("tolerances")) {
        const auto& tj = j["tolerances"];
        if (!tj.is_object()) r.fail("tolerances", "must be an object");
        const std::map<std::string, double*> fields{
            {"plateau_rel", &c.tol.plateau_rel}, {"convexify", &c.tol.convexify},
            {"gap", &c.tol.gap},                 {"rate_min", &c.tol.rate_min},
            {"pairing_gap", &c.tol.pairing_gap}, {"product_gap", &c.tol.product_gap},
            {"gamma_rel", &c.tol.gamma_rel},     {"gamma_abs", &c.tol.gamma_abs},
            {"single_rel", &c.tol.single_rel},   {"single_abs", &c.tol.single_abs}};
        std::set<std::string> allowed;
        for (const auto& [k, _] : fields) allowed.insert(k);
        r.only_keys(tj, allowed, "tolerances");
        for (auto it = tj.begin(); it != tj.end(); ++it) {
            const double v = r.number(it.value(), it.key());
            if (!(v >= 0.0)) r.fail(it.key(), "must be nonnegative");
            *fields.at(it.key()) = v;
        }
    }

    // command-specific requirements
    const auto need = [&](bool ok, const std::string& key, const std::string& what) {
        if (!ok) throw ConfigError(origin + ": command '" + c.command + "' needs " + what + " ('" + key + "')");
    };
    if (c.command == "cellhom" || c.command == "convexify" || c.command == "single-gamma")
        need(c.integrand.has_value(), "integrand", "an integrand");
    if (c.command == "gamma") need(c.W.has_value(), "W", "a non-local density");
    if (c.command == "ym-check") need(!c.measure_path.empty(), "measure", "a measure CSV path");
    if (c.command == "oscillate" || c.command == "gamma" || c.command == "single-gamma")
        need(!c.eps.empty(), "eps", "an eps schedule");
    if (c.command == "gamma" && c.constraint == "fixed") need(c.deformation.has_value(), "deformation", "a deformation");
    if (c.command == "cellhom" && c.xi.size() != static_cast<std::size_t>(g.dim_state))
        r.fail("xi", "must have d components");
    if (c.sequence.F.size() != static_cast<std::size_t>(g.dim_state)) r.fail("F", "must have d components");
    return c;
}

inline ExperimentConfig load_config(const std::string& path, const std::string& command = "") {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), path, command);
}

}  // namespace oscillab

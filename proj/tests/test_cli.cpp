#include <catch_amalgamated.hpp>

#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>
#include <string>

#include "oscillab/config.hpp"
#include "oscillab/run.hpp"

using namespace oscillab;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const auto dir = fs::temp_directory_path() / ("oscillab_cli_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

void write_file(const fs::path& p, const std::string& body) {
    std::ofstream f(p, std::ios::binary);
    f << body;
}

std::string read_file(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

/// Runs the CLI and returns its exit status; stderr goes to err_file.
int cli(const std::string& args, const fs::path& err_file) {
    const std::string cmd = std::string(OSCILLAB_CLI_PATH) + " " + args + " > /dev/null 2> " + err_file.string();
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string message_of(const std::string& text) {
    try {
        parse_config(text, "cfg.json");
    } catch (const ConfigError& e) {
        return e.what();
    }
    return "";
}

}  // namespace

TEST_CASE("config defaults") {
    const auto c = parse_config(R"({"command": "cellhom", "integrand": "weighted_quadratic", "xi": [1.0]})");
    CHECK(c.grid.dim_macro == 1);
    CHECK(c.grid.dim_state == 1);
    CHECK(c.grid.p_exponent == 2.0);
    CHECK(c.grid.n_x == 512);
    CHECK(c.grid.n_y == 64);
    CHECK(c.K == std::vector<int>{4});
    CHECK(c.seeds == std::vector<std::uint64_t>{1, 2, 3, 4, 5, 6, 7, 8});
    CHECK(c.integrand->label == "weighted_quadratic");
}

TEST_CASE("config errors carry line context") {
    SECTION("unknown integrand names the catalog") {
        const auto msg = message_of("{\n  \"command\": \"cellhom\",\n  \"integrand\": \"cubic\"\n}");
        CHECK(msg.find("cfg.json:3") != std::string::npos);
        CHECK(msg.find("weighted_quadratic") != std::string::npos);
    }
    SECTION("negative eps") {
        const auto msg = message_of("{\"command\": \"oscillate\",\n\"eps\": [0.5, -0.25]}");
        CHECK(msg.find("cfg.json:2") != std::string::npos);
        CHECK(msg.find("positive") != std::string::npos);
    }
    SECTION("unknown key") {
        const auto msg = message_of("{\"command\": \"gamma\",\n \"W\": \"quadratic\",\n \"epsilon\": [0.5]}");
        CHECK(msg.find("cfg.json:3") != std::string::npos);
        CHECK(msg.find("unknown key 'epsilon'") != std::string::npos);
    }
    SECTION("syntax error reports line and column") {
        const auto msg = message_of("{\"command\": \"gamma\",\n \"W\": \"quadratic\"\n \"eps\": [0.5]}");
        CHECK(std::regex_search(msg, std::regex("cfg\\.json:3:[0-9]+: parse error")));
    }
    SECTION("missing command requirements") {
        CHECK(message_of(R"({"command": "gamma", "eps": [0.5]})").find("non-local density") != std::string::npos);
        CHECK(message_of(R"({"command": "teleport"})").find("must be one of") != std::string::npos);
        CHECK(message_of(R"({"command": "cellhom", "integrand": "quadratic", "grid": {"n_x": 0}})")
                  .find("n_x") != std::string::npos);
    }
}

TEST_CASE("inline piecewise polynomial integrand") {
    const auto c = parse_config(R"({"command": "cellhom", "xi": [1.0], "T": [1], "m": 8,
        "integrand": {"label": "two_phase", "pieces": [
            {"y_lo": 0.0, "y_hi": 0.5, "coeffs": [0, 0, 1]},
            {"y_lo": 0.5, "y_hi": 1.0, "coeffs": [0, 0, 3]}]}})");
    // harmonic mean of 1 and 3
    CHECK(cell_infimum({*c.integrand, {1.0}, 1, 8}, 1) == Catch::Approx(1.5).epsilon(1e-8));
    CHECK(message_of(R"({"command": "cellhom", "integrand": {"pieces": [{"y_lo": 0, "y_hi": 0.5, "coeffs": [1]}]}})")
              .find("end at y = 1") != std::string::npos);
}

TEST_CASE("CSV quoting and number format") {
    Table t{"t", {"label", "value"}, {}};
    t.add(std::string("plain"), 0.1);
    t.add(std::string("a,b"), 1.0 / 3.0);
    t.add(std::string("say \"hi\""), 2.0);
    const auto csv = to_csv(t);
    CHECK(csv == "label,value\nplain,0.10000000000000001\n\"a,b\",0.33333333333333331\n\"say \"\"hi\"\"\",2\n");
    CHECK(csv.find('\r') == std::string::npos);
}

TEST_CASE("cli: gamma run passes and writes reports") {
    const auto dir = scratch("gamma");
    write_file(dir / "gamma.json", R"({"command": "gamma", "W": "tilted_weighted", "grid": {"n_x": 256},
        "hom_grid": {"n_x": 2, "n_y": 32}, "eps": [0.125, 0.0625, 0.03125], "K": [1], "seeds": [1, 2]})");
    REQUIRE(cli("gamma -c " + (dir / "gamma.json").string() + " -o " + (dir / "out").string(), dir / "err") == 0);
    const auto csv = read_file(dir / "out" / "gamma.csv");
    CHECK(csv.rfind("eps,min_I_eps,I_hom,gap\n", 0) == 0);
    const auto summary = nlohmann::json::parse(read_file(dir / "out" / "summary.json"));
    CHECK(summary["verdict"] == "pass");
    CHECK(summary["seeds"] == nlohmann::json::array({1, 2}));
    CHECK(fs::exists(dir / "out" / "meta.json"));
    CHECK(fs::exists(dir / "out" / "hom_measure.csv"));

    // every number carries full precision: parsing back reproduces the row exactly
    std::istringstream rows(csv);
    std::string line;
    std::getline(rows, line);
    while (std::getline(rows, line)) {
        std::istringstream cells(line);
        std::string cell;
        while (std::getline(cells, cell, ',')) CHECK(format_double(std::stod(cell)) == cell);
    }
}

TEST_CASE("cli: reruns are byte-identical") {
    const auto dir = scratch("rerun");
    write_file(dir / "c.json", R"({"command": "oscillate", "grid": {"n_x": 1024}, "eps": [0.125, 0.0625, 0.03125],
        "sequence": {"profile": "sin"}, "plots": true})");
    REQUIRE(cli("run -c " + (dir / "c.json").string() + " -o " + (dir / "a").string(), dir / "err") == 0);
    REQUIRE(cli("run -c " + (dir / "c.json").string() + " -o " + (dir / "b").string(), dir / "err") == 0);
    for (const char* f : {"oscillate.csv", "rates.csv", "summary.json", "plot_x_xi2.csv"})
        CHECK(read_file(dir / "a" / f) == read_file(dir / "b" / f));
}

TEST_CASE("cli: ym-check on an unnormalized measure exits 2 and names the cell") {
    const auto dir = scratch("ymcheck");
    std::string csv = "x_cell,y_cell,k,xi_0,weight\n";
    for (int x = 0; x < 2; ++x)
        for (int y = 0; y < 4; ++y) csv += std::to_string(x) + "," + std::to_string(y) + ",0,0.5," + (x == 1 && y == 2 ? "0.5" : "1") + "\n";
    write_file(dir / "m.csv", csv);
    write_file(dir / "c.json", "{\"command\": \"ym-check\", \"grid\": {\"n_x\": 2, \"n_y\": 4}, \"measure\": \"" +
                                   (dir / "m.csv").string() + "\"}");
    CHECK(cli("ym-check -c " + (dir / "c.json").string() + " -o " + (dir / "out").string(), dir / "err") == 2);
    const auto summary = nlohmann::json::parse(read_file(dir / "out" / "summary.json"));
    CHECK(summary["verdict"] == "fail");
    CHECK(summary["diagnostics"].dump().find("x_cell 1, y_cell 2") != std::string::npos);
}

TEST_CASE("cli: cellhom rows are nonincreasing in T") {
    const auto dir = scratch("cellhom");
    write_file(dir / "c.json", R"({"command": "cellhom", "integrand": "double_well", "xi": [0.0], "T": [1, 2, 4], "m": 4})");
    REQUIRE(cli("run -c " + (dir / "c.json").string() + " -o " + (dir / "out").string() + " --seed 5", dir / "err") == 0);
    std::istringstream rows(read_file(dir / "out" / "cellhom.csv"));
    std::string line;
    std::getline(rows, line);
    CHECK(line == "T,value");
    double prev = INFINITY;
    int count = 0;
    while (std::getline(rows, line)) {
        const double v = std::stod(line.substr(line.find(',') + 1));
        CHECK(v <= prev + 1e-9);
        prev = v;
        ++count;
    }
    CHECK(count == 3);
    const auto summary = nlohmann::json::parse(read_file(dir / "out" / "summary.json"));
    CHECK(summary["seeds"] == nlohmann::json::array({5, 6, 7, 8, 9, 10, 11, 12}));
}

TEST_CASE("cli: errors exit 1") {
    const auto dir = scratch("errors");
    write_file(dir / "bad.json", "{\"command\": \"cellhom\", \"integrand\": \"nope\"}");
    CHECK(cli("run -c " + (dir / "bad.json").string() + " -o " + (dir / "out").string(), dir / "err") == 1);
    CHECK(read_file(dir / "err").find("catalog") != std::string::npos);
    // subcommand and config disagree
    write_file(dir / "g.json", R"({"command": "gamma", "W": "quadratic", "eps": [0.5]})");
    CHECK(cli("cellhom -c " + (dir / "g.json").string(), dir / "err") == 1);
    // library refusal: ε not commensurable with the grid
    write_file(dir / "s.json", R"({"command": "single-gamma", "integrand": "quadratic", "grid": {"n_x": 10}, "eps": [0.25]})");
    CHECK(cli("run -c " + (dir / "s.json").string() + " -o " + (dir / "out").string(), dir / "err") == 1);
    CHECK(read_file(dir / "err").find("invalid schedule") != std::string::npos);
    CHECK(cli("run", dir / "err") == 1);
}

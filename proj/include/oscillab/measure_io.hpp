#pragma once

// Columnar CSV for atomic measures: x_cell,y_cell,k,xi_0..xi_{d-1},weight with
// 17 significant digits, so a write/read cycle reproduces every double exactly.

#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "oscillab/error.hpp"
#include "oscillab/ymeasure.hpp"

namespace oscillab {

inline std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline void write_measure_csv(std::ostream& os, const AtomicYoungMeasure& nu) {
    const std::size_t d = nu.d();
    os << "x_cell,y_cell,k";
    for (std::size_t i = 0; i < d; ++i) os << ",xi_" << i;
    os << ",weight\n";
    const std::size_t U = nu.spec.unit_cells();
    for (std::size_t c = 0; c < nu.cells(); ++c)
        for (std::size_t k = 0; k < nu.K; ++k) {
            os << c / U << ',' << c % U << ',' << k;
            for (double a : nu.atom(c, k)) os << ',' << format_double(a);
            os << ',' << format_double(nu.weight(c, k)) << '\n';
        }
}

/// Reads a measure on the given grid. K is inferred from the largest k column. Rows
/// may come in any order but every (x_cell, y_cell, k) must appear exactly once.
/// The result is not validated, so invalid measures can be loaded and then checked.
inline AtomicYoungMeasure read_measure_csv(std::istream& is, const GridSpec& spec) {
    spec.validate();
    const std::size_t d = static_cast<std::size_t>(spec.dim_state);
    std::string line;
    if (!std::getline(is, line)) throw InvalidArgument("measure CSV is empty");
    std::string expect = "x_cell,y_cell,k";
    for (std::size_t i = 0; i < d; ++i) expect += ",xi_" + std::to_string(i);
    expect += ",weight";
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != expect) throw InvalidArgument("measure CSV header must be '" + expect + "'");

    struct Row {
        std::size_t x, y, k;
        std::vector<double> vals;
    };
    std::vector<Row> rows;
    std::size_t K = 0;
    for (std::size_t lineno = 2; std::getline(is, line); ++lineno) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string tok;
        std::vector<std::string> toks;
        while (std::getline(ss, tok, ',')) toks.push_back(tok);
        if (toks.size() != 4 + d)
            throw InvalidArgument("measure CSV line " + std::to_string(lineno) + ": expected " +
                                  std::to_string(4 + d) + " fields");
        Row r;
        try {
            std::size_t pos = 0;
            const auto index = [&](const std::string& s) {
                const long long v = std::stoll(s, &pos);
                if (pos != s.size() || v < 0) throw std::invalid_argument(s);
                return static_cast<std::size_t>(v);
            };
            r.x = index(toks[0]);
            r.y = index(toks[1]);
            r.k = index(toks[2]);
            for (std::size_t i = 3; i < toks.size(); ++i) {
                r.vals.push_back(std::stod(toks[i], &pos));
                if (pos != toks[i].size()) throw std::invalid_argument(toks[i]);
            }
        } catch (const std::logic_error&) {
            throw InvalidArgument("measure CSV line " + std::to_string(lineno) + ": malformed number");
        }
        if (r.x >= spec.macro_cells() || r.y >= spec.unit_cells())
            throw InvalidArgument("measure CSV line " + std::to_string(lineno) +
                                  ": cell index outside the grid");
        K = std::max(K, r.k + 1);
        rows.push_back(std::move(r));
    }
    if (K == 0) throw InvalidArgument("measure CSV has no rows");
    AtomicYoungMeasure nu(spec, K);
    std::vector<char> seen(nu.cells() * K, 0);
    for (const auto& r : rows) {
        const std::size_t c = nu.cell(r.x, r.y);
        if (seen[c * K + r.k]++)
            throw InvalidArgument("measure CSV repeats cell (" + std::to_string(r.x) + ", " +
                                  std::to_string(r.y) + ") atom " + std::to_string(r.k));
        for (std::size_t i = 0; i < d; ++i) nu.atom(c, r.k)[i] = r.vals[i];
        nu.weight(c, r.k) = r.vals[d];
    }
    for (std::size_t i = 0; i < seen.size(); ++i)
        if (!seen[i])
            throw InvalidArgument("measure CSV is missing cell (" + std::to_string(i / K / spec.unit_cells()) +
                                  ", " + std::to_string(i / K % spec.unit_cells()) + ") atom " +
                                  std::to_string(i % K));
    return nu;
}

}  // namespace oscillab

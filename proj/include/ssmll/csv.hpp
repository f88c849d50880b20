#pragma once

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "ssmll/matrix.hpp"

namespace ssmll {

/// 17-significant-digit decimal, enough to round-trip any double exactly.
inline std::string format_g17(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

/// Matrix CSV: header row `class_0,...,class_{C-1}`, one data row per
/// instance, %.17g cells.
inline void save_matrix(const std::string& path, const DenseMatrix& m) {
    std::ofstream out(path);
    if (!out) throw data_error("save_matrix: cannot open " + path);
    for (std::size_t j = 0; j < m.cols; ++j) {
        if (j) out << ',';
        out << "class_" << j;
    }
    out << '\n';
    for (std::size_t i = 0; i < m.rows; ++i) {
        for (std::size_t j = 0; j < m.cols; ++j) {
            if (j) out << ',';
            out << format_g17(m(i, j));
        }
        out << '\n';
    }
    if (!out) throw data_error("save_matrix: write failed for " + path);
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            cells.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur += ch;
        }
    }
    cells.push_back(cur);
    return cells;
}

inline DenseMatrix load_matrix(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw data_error("load_matrix: cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw data_error("load_matrix: " + path + ": missing header row");
    const std::vector<std::string> header = split_csv_line(line);
    for (std::size_t j = 0; j < header.size(); ++j) {
        if (header[j] != "class_" + std::to_string(j))
            throw data_error("load_matrix: " + path + ": line 1, column " + std::to_string(j + 1) +
                             ": bad header cell '" + header[j] + "'");
    }
    const std::size_t cols = header.size();
    std::vector<double> values;
    std::size_t rows = 0;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() && in.eof()) break;
        const std::vector<std::string> cells = split_csv_line(line);
        if (cells.size() != cols)
            throw data_error("load_matrix: " + path + ": line " + std::to_string(lineno) +
                             ": expected " + std::to_string(cols) + " cells, got " +
                             std::to_string(cells.size()));
        for (std::size_t j = 0; j < cols; ++j) {
            const char* s = cells[j].c_str();
            char* end = nullptr;
            const double v = std::strtod(s, &end);
            if (end == s || *end != '\0')
                throw data_error("load_matrix: " + path + ": line " + std::to_string(lineno) +
                                 ", column " + std::to_string(j + 1) + ": non-numeric cell '" +
                                 cells[j] + "'");
            values.push_back(v);
        }
        ++rows;
    }
    DenseMatrix m(rows, cols);
    m.data = std::move(values);
    return m;
}

}  // namespace ssmll

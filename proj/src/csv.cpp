#include "sgmm/csv.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "sgmm/error.hpp"

namespace sgmm::csv {

namespace {

std::string trim(const std::string& s) {
    std::size_t b = 0;
    std::size_t e = s.size();
    while (b < e && (s[b] == ' ' || s[b] == '\t')) ++b;
    while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r')) --e;
    return s.substr(b, e - b);
}

std::ifstream open(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open '" + path + "'");
    }
    return in;
}

}  // namespace

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            cells.push_back(trim(cur));
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    cells.push_back(trim(cur));
    return cells;
}

TextTable read_text(const std::string& path) {
    auto in = open(path);
    TextTable table;
    std::string line;
    if (!std::getline(in, line) || trim(line).empty()) {
        throw ParseError(path + ": missing header row");
    }
    table.header = split_line(line);
    std::size_t row = 0;
    while (std::getline(in, line)) {
        ++row;
        if (trim(line).empty()) {
            continue;
        }
        auto cells = split_line(line);
        if (cells.size() != table.header.size()) {
            std::ostringstream msg;
            msg << path << ": row " << row << " has " << cells.size() << " cells, header has "
                << table.header.size();
            throw ParseError(msg.str());
        }
        table.rows.push_back(std::move(cells));
    }
    return table;
}

NumericTable read_numeric(const std::string& path) {
    TextTable text = read_text(path);
    NumericTable table;
    table.header = text.header;
    table.rows.reserve(text.rows.size());
    for (std::size_t r = 0; r < text.rows.size(); ++r) {
        std::vector<double> values(text.header.size());
        for (std::size_t c = 0; c < text.header.size(); ++c) {
            const std::string& cell = text.rows[r][c];
            auto where = [&] {
                std::ostringstream msg;
                msg << path << ": row " << (r + 1) << ", column " << (c + 1) << " ('"
                    << text.header[c] << "')";
                return msg.str();
            };
            if (cell.empty()) {
                throw ParseError(where() + ": empty cell");
            }
            char* end = nullptr;
            const double v = std::strtod(cell.c_str(), &end);
            if (end != cell.c_str() + cell.size()) {
                throw ParseError(where() + ": not a number: '" + cell + "'");
            }
            if (!std::isfinite(v)) {
                throw ParseError(where() + ": non-finite value '" + cell + "'");
            }
            values[c] = v;
        }
        table.rows.push_back(std::move(values));
    }
    return table;
}

}  // namespace sgmm::csv

#pragma once

#include <string>
#include <vector>

namespace sgmm::csv {

/// Shortest text that reads back to exactly `v` (17 significant digits).
std::string format_double(double v);

/// Splits one line on commas; surrounding whitespace and a trailing CR are dropped.
std::vector<std::string> split_line(const std::string& line);

struct NumericTable {
    std::vector<std::string> header;
    std::vector<std::vector<double>> rows;
};

/// Parses a header row followed by numeric rows. Errors name the 1-based
/// data row and the column.
NumericTable read_numeric(const std::string& path);

/// Parses a header row followed by rows of raw text cells.
struct TextTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};
TextTable read_text(const std::string& path);

}  // namespace sgmm::csv

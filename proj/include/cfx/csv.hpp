#ifndef CFX_CSV_HPP
#define CFX_CSV_HPP

#include <cstdint>
#include <string>
#include <vector>

namespace cfx {

// Minimal comma-separated table: UTF-8, '.' decimal separator, no quoting
// (no field in any format this project reads or writes contains a comma).
// Lines beginning with '#' are metadata comments.
struct CsvTable {
    std::vector<std::string> comments;  // leading '#' lines, verbatim
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
    std::vector<std::size_t> line_numbers;  // 1-based source line per row

    std::size_t column(const std::string& name) const;  // npos when missing
    static constexpr std::size_t npos = static_cast<std::size_t>(-1);
};

CsvTable read_csv(const std::string& path);

std::vector<std::string> split_fields(const std::string& line);

// Strict full-cell numeric parses; `where` gives row/column context.
double parse_double(const std::string& cell, const std::string& where);
std::int64_t parse_int(const std::string& cell, const std::string& where);

}  // namespace cfx

#endif

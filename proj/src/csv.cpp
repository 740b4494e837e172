#include "cfx/csv.hpp"

#include <charconv>
#include <fstream>

#include "cfx/error.hpp"

namespace cfx {

std::size_t CsvTable::column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
        if (header[i] == name) return i;
    return npos;
}

std::vector<std::string> split_fields(const std::string& line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        std::size_t pos = line.find(',', start);
        if (pos == std::string::npos) {
            out.push_back(line.substr(start));
            break;
        }
        out.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
    return out;
}

CsvTable read_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open file: " + path);

    CsvTable table;
    std::string line;
    std::size_t line_no = 0;
    bool have_header = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!line.empty() && line.front() == '#') {
            table.comments.push_back(line);
            continue;
        }
        if (line.empty()) continue;
        if (!have_header) {
            table.header = split_fields(line);
            have_header = true;
            continue;
        }
        table.rows.push_back(split_fields(line));
        table.line_numbers.push_back(line_no);
        if (table.rows.back().size() != table.header.size())
            throw DataError(path + ":" + std::to_string(line_no) + ": expected " +
                            std::to_string(table.header.size()) + " fields, got " +
                            std::to_string(table.rows.back().size()));
    }
    if (!have_header) throw DataError(path + ": empty file (no header row)");
    return table;
}

double parse_double(const std::string& cell, const std::string& where) {
    double v = 0.0;
    const char* first = cell.data();
    const char* last = cell.data() + cell.size();
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc() || ptr != last)
        throw DataError(where + ": non-numeric cell '" + cell + "'");
    return v;
}

std::int64_t parse_int(const std::string& cell, const std::string& where) {
    std::int64_t v = 0;
    const char* first = cell.data();
    const char* last = cell.data() + cell.size();
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc() || ptr != last)
        throw DataError(where + ": non-integer cell '" + cell + "'");
    return v;
}

}  // namespace cfx

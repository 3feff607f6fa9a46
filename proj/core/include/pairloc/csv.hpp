#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace pairloc {

// Maps canonical column names onto the names used by a particular file.
// File format, one entry per line:
//
//   # comment
//   serial = sensorSerial
//   good =                 (column absent; values read as unknown)
//   @server_time_unit = s  (timeAtServer unit: s, ms or us)
class ColumnMap {
public:
    ColumnMap() = default;

    static ColumnMap parse(std::istream& in, const std::string& source = "<column-map>");
    static ColumnMap load(const std::string& path);

    // Name of the column that carries `canonical`; nullopt when the mapping
    // declares it absent.
    std::optional<std::string> resolve(const std::string& canonical) const;

    std::optional<std::string> directive(const std::string& key) const;

private:
    std::map<std::string, std::string> columns_;
    std::map<std::string, std::string> directives_;
};

/// Line-oriented CSV reader. Handles double-quoted fields (with "" escapes),
/// CRLF line endings, blank lines and '#' comment lines. Reads one row at a
/// time so memory stays constant regardless of file size.
class CsvReader {
public:
    CsvReader(std::istream& in, std::string source);

    // Reads the header row. Throws ParseError when the stream is empty.
    const std::vector<std::string>& read_header();

    // Next data row; false at end of stream.
    bool next(std::vector<std::string>& fields);

    const std::vector<std::string>& header() const { return header_; }
    std::size_t line() const { return line_; }
    const std::string& source() const { return source_; }

    // Index of a named column, or nullopt.
    std::optional<std::size_t> column(std::string_view name) const;

    [[noreturn]] void fail(const std::string& what) const;

private:
    bool read_line(std::string& out);

    std::istream& in_;
    std::string source_;
    std::size_t line_ = 0;
    std::vector<std::string> header_;
    std::string buffer_;
};

void split_csv_line(std::string_view line, std::vector<std::string>& out);

// Shortest decimal representation that parses back to the same double.
std::string format_double(double v);

// Quotes a field when it contains a comma, quote or newline.
std::string csv_escape(std::string_view field);

std::optional<double> parse_double(std::string_view s);
std::optional<std::int64_t> parse_int(std::string_view s);

std::string_view trim(std::string_view s);

}  // namespace pairloc

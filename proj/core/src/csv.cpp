#include "pairloc/csv.hpp"

#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>

#include "pairloc/error.hpp"

namespace pairloc {

std::string_view trim(std::string_view s) {
    const auto ws = [](char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n'; };
    while (!s.empty() && ws(s.front())) s.remove_prefix(1);
    while (!s.empty() && ws(s.back())) s.remove_suffix(1);
    return s;
}

ColumnMap ColumnMap::parse(std::istream& in, const std::string& source) {
    ColumnMap map;
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        const std::string_view t = trim(line);
        if (t.empty() || t.front() == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string_view::npos) {
            throw ParseError(source, n, "expected 'canonical = column'");
        }
        const std::string key(trim(t.substr(0, eq)));
        const std::string value(trim(t.substr(eq + 1)));
        if (key.empty()) throw ParseError(source, n, "empty key");
        if (key.front() == '@') {
            map.directives_[key.substr(1)] = value;
        } else {
            map.columns_[key] = value;
        }
    }
    return map;
}

ColumnMap ColumnMap::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open column map " + path);
    return parse(in, path);
}

std::optional<std::string> ColumnMap::resolve(const std::string& canonical) const {
    const auto it = columns_.find(canonical);
    if (it == columns_.end()) return canonical;
    if (it->second.empty()) return std::nullopt;
    return it->second;
}

std::optional<std::string> ColumnMap::directive(const std::string& key) const {
    const auto it = directives_.find(key);
    if (it == directives_.end()) return std::nullopt;
    return it->second;
}

CsvReader::CsvReader(std::istream& in, std::string source) : in_(in), source_(std::move(source)) {}

bool CsvReader::read_line(std::string& out) {
    while (std::getline(in_, out)) {
        ++line_;
        if (!out.empty() && out.back() == '\r') out.pop_back();
        const std::string_view t = trim(out);
        if (t.empty() || t.front() == '#') continue;
        return true;
    }
    return false;
}

const std::vector<std::string>& CsvReader::read_header() {
    if (!read_line(buffer_)) fail("missing header row");
    split_csv_line(buffer_, header_);
    for (auto& h : header_) h = std::string(trim(h));
    return header_;
}

bool CsvReader::next(std::vector<std::string>& fields) {
    if (!read_line(buffer_)) return false;
    split_csv_line(buffer_, fields);
    if (fields.size() != header_.size()) {
        fail("expected " + std::to_string(header_.size()) + " fields, found " +
             std::to_string(fields.size()));
    }
    return true;
}

std::optional<std::size_t> CsvReader::column(std::string_view name) const {
    for (std::size_t i = 0; i < header_.size(); ++i) {
        if (header_[i] == name) return i;
    }
    return std::nullopt;
}

void CsvReader::fail(const std::string& what) const {
    throw ParseError(source_, line_, what);
}

void split_csv_line(std::string_view line, std::vector<std::string>& out) {
    out.clear();
    std::string field;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    field.push_back('"');
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                field.push_back(c);
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.push_back(std::move(field));
            field.clear();
        } else {
            field.push_back(c);
        }
    }
    out.push_back(std::move(field));
}

std::string format_double(double v) {
    if (std::isnan(v)) return "nan";
    std::array<char, 64> buf{};
    const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    return std::string(buf.data(), res.ptr);
}

std::string csv_escape(std::string_view field) {
    if (field.find_first_of(",\"\n") == std::string_view::npos) return std::string(field);
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out.push_back('"');
        out.push_back(c);
    }
    out.push_back('"');
    return out;
}

std::optional<double> parse_double(std::string_view s) {
    s = trim(s);
    if (s.empty()) return std::nullopt;
    if (s.front() == '+') s.remove_prefix(1);
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) return std::nullopt;
    return v;
}

std::optional<std::int64_t> parse_int(std::string_view s) {
    s = trim(s);
    if (s.empty()) return std::nullopt;
    if (s.front() == '+') s.remove_prefix(1);
    std::int64_t v = 0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) return std::nullopt;
    return v;
}

}  // namespace pairloc

#include "emit.hpp"

#include <charconv>
#include <cmath>
#include <fstream>

#include "semad/errors.hpp"

namespace semad::cli {

std::string format_double(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    if (v == 0.0) return "0";
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    std::string_view shortest(buf, static_cast<std::size_t>(res.ptr - buf));
    const auto mantissa = shortest.substr(0, shortest.find_first_of("eE"));
    std::size_t digits = 0;
    bool leading = true;
    for (char c : mantissa) {
        if (c < '0' || c > '9') continue;
        if (leading && c == '0') continue;
        leading = false;
        ++digits;
    }
    if (digits <= 9) return std::string(shortest);
    res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, 9);
    return std::string(buf, res.ptr);
}

Json number(double v) {
    if (!std::isfinite(v)) return nullptr;
    const auto s = format_double(v);
    double parsed = 0.0;
    std::from_chars(s.data(), s.data() + s.size(), parsed);
    return parsed;
}

OutputFormat parse_format(std::string_view s) {
    if (s == "csv") return OutputFormat::csv;
    if (s == "json") return OutputFormat::json;
    throw ValidationError("unknown format '" + std::string(s) + "' (expected csv or json)");
}

namespace {

std::string csv_escape(std::string_view s) {
    if (s.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(s);
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    out += '"';
    return out;
}

struct CellCsv {
    std::string operator()(std::monostate) const { return {}; }
    std::string operator()(const std::string& s) const { return csv_escape(s); }
    std::string operator()(double v) const { return format_double(v); }
    std::string operator()(std::int64_t v) const { return std::to_string(v); }
};

struct CellJson {
    Json operator()(std::monostate) const { return nullptr; }
    Json operator()(const std::string& s) const { return s; }
    Json operator()(double v) const { return number(v); }
    Json operator()(std::int64_t v) const { return v; }
};

}  // namespace

std::string to_csv(const Table& table) {
    std::string out;
    for (std::size_t c = 0; c < table.columns.size(); ++c) {
        if (c) out += ',';
        out += csv_escape(table.columns[c]);
    }
    out += '\n';
    for (const auto& row : table.rows) {
        for (std::size_t c = 0; c < row.size(); ++c) {
            if (c) out += ',';
            out += std::visit(CellCsv{}, row[c]);
        }
        out += '\n';
    }
    return out;
}

Json to_json(const Table& table) {
    Json arr = Json::array();
    for (const auto& row : table.rows) {
        Json obj = Json::object();
        for (std::size_t c = 0; c < row.size() && c < table.columns.size(); ++c)
            obj[table.columns[c]] = std::visit(CellJson{}, row[c]);
        arr.push_back(std::move(obj));
    }
    return arr;
}

void write_text(const std::filesystem::path& path, std::string_view text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw IoError("write failed on '" + path.string() + "'");
}

void write_json(const std::filesystem::path& path, const Json& j) { write_text(path, j.dump(2) + "\n"); }

void write_table(const std::filesystem::path& dir, std::string_view stem, const Table& table, OutputFormat format) {
    if (format == OutputFormat::csv)
        write_text(dir / (std::string(stem) + ".csv"), to_csv(table));
    else
        write_json(dir / (std::string(stem) + ".json"), to_json(table));
}

void ensure_dir(const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec || !std::filesystem::is_directory(dir)) throw IoError("cannot create output directory '" + dir.string() + "'");
}

}  // namespace semad::cli

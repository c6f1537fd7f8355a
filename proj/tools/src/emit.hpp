#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

namespace semad::cli {

using Json = nlohmann::ordered_json;

/// Shortest round-trip decimal, capped at 9 significant digits.
/// Non-finite values print as nan / inf / -inf.
std::string format_double(double v);

/// JSON number carrying format_double's value; null when non-finite.
Json number(double v);

enum class OutputFormat { csv, json };

OutputFormat parse_format(std::string_view s);

using Cell = std::variant<std::monostate, std::string, double, std::int64_t>;

struct Table {
    std::vector<std::string> columns;
    std::vector<std::vector<Cell>> rows;
};

std::string to_csv(const Table& table);
Json to_json(const Table& table);

/// Writes `<stem>.csv` or `<stem>.json` into dir.
void write_table(const std::filesystem::path& dir, std::string_view stem, const Table& table, OutputFormat format);
void write_json(const std::filesystem::path& path, const Json& j);
void write_text(const std::filesystem::path& path, std::string_view text);
void ensure_dir(const std::filesystem::path& dir);

}  // namespace semad::cli

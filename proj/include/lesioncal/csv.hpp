#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace lesioncal::csv {

using Row = std::vector<std::string>;

/// Quotes a field when it contains a comma, quote, CR or LF.
std::string escape(std::string_view field);

/// Shortest round-trippable decimal text for `value` ("%.17g" trimmed to
/// the fewest digits that parse back exactly).
std::string format_number(double value);
std::string format_optional(const std::optional<double>& value);

/// Writes rows with CRLF line endings.
class Writer {
 public:
  explicit Writer(std::ostream& out) : out_(out) {}
  void row(const Row& fields);

 private:
  std::ostream& out_;
};

/// Parses RFC-4180 text into rows (quoted fields, embedded newlines).
std::vector<Row> parse(std::string_view text);

std::vector<Row> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const Row& header, const std::vector<Row>& rows);

}  // namespace lesioncal::csv

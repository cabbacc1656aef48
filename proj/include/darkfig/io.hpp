#pragma once

// CSV tables, number formatting and declarative feature encoding.

#include "darkfig/numeric.hpp"

#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace darkfig {

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  /// Throws SchemaError naming `what` when the column is absent.
  std::size_t column(const std::string& name, std::string_view what = "table") const;
  std::optional<std::size_t> find(const std::string& name) const;
};

/// RFC 4180 subset: comma separated, optional double quotes, header required.
CsvTable read_csv(const std::string& path);
CsvTable parse_csv(std::istream& in, const std::string& source);

std::string csv_escape(const std::string& field);
void write_csv_row(std::ostream& out, const std::vector<std::string>& fields);

/// Full round-trip precision (%.17g).
std::string format_full(double v);
/// Six significant digits (%.6g).
std::string format_text(double v);

double parse_number(const std::string& text, const std::string& context);

struct FeatureSpec {
  std::string column;
  bool categorical = false;
  std::string reference;            // categorical only
  std::vector<std::string> levels;  // optional explicit non-reference levels
};

/// Maps raw columns to a numeric design row; the intercept comes first.
/// Categorical features expand to indicators named "column:level" for every
/// non-reference level, in sorted order.
class FeatureEncoder {
 public:
  FeatureEncoder() = default;
  /// Levels of categorical features without explicit levels are collected
  /// from `level_sources` (column values across those tables).
  FeatureEncoder(std::vector<FeatureSpec> specs, const std::vector<const CsvTable*>& level_sources);

  const std::vector<std::string>& names() const { return names_; }
  /// Throws SchemaError for missing columns or unparsable numbers and
  /// EncodingMismatch for unknown categorical levels.
  VectorXd encode(const CsvTable& table, std::size_t row) const;
  /// Resolves column positions for `table`; must be called before encode.
  void bind(const CsvTable& table, std::string_view what);

 private:
  std::vector<FeatureSpec> specs_;
  std::vector<std::string> names_;
  std::vector<std::size_t> positions_;
};

}  // namespace darkfig

#include "darkfig/io.hpp"

#include "darkfig/error.hpp"

#include <algorithm>
#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

namespace darkfig {

namespace {
constexpr std::string_view kModule = "cli";

std::vector<std::string> split_record(const std::string& line, const std::string& source, std::size_t line_no) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (quoted) {
    throw Error(ErrorCode::SchemaError, kModule, source + ":" + std::to_string(line_no) + ": unterminated quote");
  }
  fields.push_back(std::move(cur));
  return fields;
}

}  // namespace

std::optional<std::size_t> CsvTable::find(const std::string& name) const {
  auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) return std::nullopt;
  return static_cast<std::size_t>(it - header.begin());
}

std::size_t CsvTable::column(const std::string& name, std::string_view what) const {
  if (auto c = find(name)) return *c;
  throw Error(ErrorCode::SchemaError, kModule, std::string(what) + " has no column \"" + name + "\"");
}

CsvTable parse_csv(std::istream& in, const std::string& source) {
  CsvTable t;
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = split_record(line, source, line_no);
    if (!have_header) {
      t.header = std::move(fields);
      have_header = true;
      continue;
    }
    if (fields.size() != t.header.size()) {
      throw Error(ErrorCode::SchemaError, kModule,
                  source + ":" + std::to_string(line_no) + ": expected " + std::to_string(t.header.size()) +
                      " fields, found " + std::to_string(fields.size()));
    }
    t.rows.push_back(std::move(fields));
  }
  if (!have_header) throw Error(ErrorCode::SchemaError, kModule, source + ": missing header row");
  return t;
}

CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::SchemaError, kModule, "cannot open " + path);
  return parse_csv(in, path);
}

std::string csv_escape(const std::string& field) {
  if (field.find_first_of(",\"\n\r") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

void write_csv_row(std::ostream& out, const std::vector<std::string>& fields) {
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i > 0) out << ',';
    out << csv_escape(fields[i]);
  }
  out << '\n';
}

std::string format_full(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string format_text(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

double parse_number(const std::string& text, const std::string& context) {
  const char* begin = text.c_str();
  char* end = nullptr;
  errno = 0;
  const double v = std::strtod(begin, &end);
  if (text.empty() || end != begin + text.size() || errno == ERANGE) {
    throw Error(ErrorCode::SchemaError, kModule, context + ": \"" + text + "\" is not a number");
  }
  return v;
}

FeatureEncoder::FeatureEncoder(std::vector<FeatureSpec> specs, const std::vector<const CsvTable*>& level_sources)
    : specs_(std::move(specs)) {
  names_.push_back("intercept");
  for (auto& s : specs_) {
    if (s.column == "intercept") {
      throw Error(ErrorCode::EncodingMismatch, kModule, "\"intercept\" is added automatically; do not declare it");
    }
    if (!s.categorical) {
      names_.push_back(s.column);
      continue;
    }
    if (s.levels.empty()) {
      std::set<std::string> seen;
      for (const CsvTable* t : level_sources) {
        auto c = t->find(s.column);
        if (!c) continue;
        for (const auto& row : t->rows) seen.insert(row[*c]);
      }
      if (!seen.count(s.reference)) {
        throw Error(ErrorCode::EncodingMismatch, kModule,
                    "reference level \"" + s.reference + "\" of " + s.column + " does not occur in the data");
      }
      seen.erase(s.reference);
      s.levels.assign(seen.begin(), seen.end());
    } else {
      std::sort(s.levels.begin(), s.levels.end());
      s.levels.erase(std::remove(s.levels.begin(), s.levels.end(), s.reference), s.levels.end());
    }
    for (const auto& l : s.levels) names_.push_back(s.column + ":" + l);
  }
}

void FeatureEncoder::bind(const CsvTable& table, std::string_view what) {
  positions_.clear();
  for (const auto& s : specs_) positions_.push_back(table.column(s.column, what));
}

VectorXd FeatureEncoder::encode(const CsvTable& table, std::size_t row) const {
  VectorXd out = VectorXd::Zero(static_cast<Index>(names_.size()));
  out(0) = 1.0;
  Index k = 1;
  for (std::size_t f = 0; f < specs_.size(); ++f) {
    const auto& s = specs_[f];
    const std::string& v = table.rows[row][positions_[f]];
    if (!s.categorical) {
      out(k++) = parse_number(v, "column " + s.column + ", row " + std::to_string(row + 1));
      continue;
    }
    if (v != s.reference) {
      auto it = std::lower_bound(s.levels.begin(), s.levels.end(), v);
      if (it == s.levels.end() || *it != v) {
        throw Error(ErrorCode::EncodingMismatch, kModule,
                    "level \"" + v + "\" of " + s.column + " is not part of the declared encoding");
      }
      out(k + (it - s.levels.begin())) = 1.0;
    }
    k += static_cast<Index>(s.levels.size());
  }
  return out;
}

}  // namespace darkfig

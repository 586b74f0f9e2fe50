#pragma once

#include <algorithm>
#include <cctype>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "btcxr/error.hpp"

namespace btcxr::csv {

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  /// Column index by exact header name (after trimming), if present.
  std::optional<std::size_t> column(std::string_view name) const {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (header[i] == name) return i;
    }
    return std::nullopt;
  }

  std::size_t require_column(std::string_view name) const {
    auto c = column(name);
    if (!c) throw Error(ErrorCode::MalformedRow, "missing CSV column '" + std::string(name) + "'", "row 1");
    return *c;
  }
};

inline std::string trim(std::string_view s) {
  const auto sp = [](unsigned char c) { return std::isspace(c) != 0; };
  while (!s.empty() && sp(s.front())) s.remove_prefix(1);
  while (!s.empty() && sp(s.back())) s.remove_suffix(1);
  return std::string(s);
}

inline std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

/// RFC 4180 reader: comma separator, double-quote quoting with "" escapes,
/// LF or CRLF records, optional UTF-8 BOM. Blank lines are skipped. The
/// first record is the header. Header names are trimmed.
inline Table parse(std::string_view text) {
  if (text.starts_with("\xEF\xBB\xBF")) text.remove_prefix(3);

  std::vector<std::vector<std::string>> records;
  std::vector<std::string> record;
  std::string field;
  bool in_quotes = false;
  bool field_quoted = false;

  const auto end_field = [&] {
    record.push_back(std::move(field));
    field.clear();
    field_quoted = false;
  };
  const auto end_record = [&] {
    const bool last_quoted = field_quoted;
    end_field();
    const bool blank = record.size() == 1 && record[0].empty() && !last_quoted;
    if (!blank) records.push_back(std::move(record));
    record.clear();
  };

  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        field.push_back(c);
      }
      continue;
    }
    switch (c) {
      case '"':
        in_quotes = true;
        field_quoted = true;
        break;
      case ',':
        end_field();
        break;
      case '\r':
        break;
      case '\n':
        end_record();
        break;
      default:
        field.push_back(c);
    }
  }
  if (in_quotes) throw Error(ErrorCode::MalformedRow, "unterminated quoted field", "end of file");
  if (!field.empty() || !record.empty()) end_record();

  Table t;
  if (records.empty()) return t;
  for (auto& h : records.front()) t.header.push_back(trim(h));
  t.rows.assign(std::make_move_iterator(records.begin() + 1), std::make_move_iterator(records.end()));
  return t;
}

}  // namespace btcxr::csv

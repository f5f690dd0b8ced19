#include "metapn/toml_lite.h"

#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>

#include "metapn/error.h"

namespace metapn::toml {
namespace {

std::string trim(std::string_view s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

[[noreturn]] void fail(std::size_t line, const std::string& what) {
  throw Error(ErrorCode::kMalformedInput, "config line " + std::to_string(line) + ": " + what);
}

std::string strip_comment(const std::string& line) {
  char quote = 0;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quote != 0) {
      if (ch == '\\' && quote == '"') ++i;
      else if (ch == quote) quote = 0;
    } else if (ch == '"' || ch == '\'') {
      quote = ch;
    } else if (ch == '#') {
      return line.substr(0, i);
    }
  }
  return line;
}

Scalar parse_scalar(const std::string& raw, std::size_t line) {
  const std::string s = trim(raw);
  if (s.empty()) fail(line, "missing value");
  if (s.front() == '"' || s.front() == '\'') {
    if (s.size() < 2 || s.back() != s.front()) fail(line, "unterminated string");
    std::string out;
    for (std::size_t i = 1; i + 1 < s.size(); ++i) {
      if (s.front() == '"' && s[i] == '\\' && i + 2 < s.size()) {
        const char esc = s[++i];
        out.push_back(esc == 'n' ? '\n' : esc == 't' ? '\t' : esc);
      } else {
        out.push_back(s[i]);
      }
    }
    return out;
  }
  if (s == "true") return true;
  if (s == "false") return false;

  std::string digits;
  for (char ch : s) {
    if (ch != '_') digits.push_back(ch);
  }
  const char* first = digits.data();
  const char* last = digits.data() + digits.size();
  if (*first == '+') ++first;
  const bool looks_float = digits.find_first_of(".eE") != std::string::npos ||
                           digits == "inf" || digits == "nan";
  if (!looks_float) {
    std::int64_t value = 0;
    auto [ptr, ec] = std::from_chars(first, last, value);
    if (ec == std::errc() && ptr == last) return value;
  }
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last) fail(line, "cannot parse value '" + s + "'");
  return value;
}

std::vector<Scalar> parse_array(const std::string& s, std::size_t line) {
  if (s.back() != ']') fail(line, "arrays must close on the same line");
  std::vector<Scalar> out;
  std::string item;
  char quote = 0;
  for (std::size_t i = 1; i + 1 < s.size(); ++i) {
    const char ch = s[i];
    if (quote != 0) {
      if (ch == quote) quote = 0;
      item.push_back(ch);
    } else if (ch == '"' || ch == '\'') {
      quote = ch;
      item.push_back(ch);
    } else if (ch == ',') {
      if (!trim(item).empty()) out.push_back(parse_scalar(item, line));
      item.clear();
    } else {
      item.push_back(ch);
    }
  }
  if (!trim(item).empty()) out.push_back(parse_scalar(item, line));
  return out;
}

}  // namespace

Document parse(const std::string& text) {
  Document doc;
  std::string table;
  std::istringstream in(text);
  std::string raw;
  for (std::size_t lineno = 1; std::getline(in, raw); ++lineno) {
    const std::string line = trim(strip_comment(raw));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']' || line.size() < 3) fail(lineno, "malformed table header");
      table = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) fail(lineno, "expected key = value");
    std::string key = trim(line.substr(0, eq));
    if (key.size() >= 2 && (key.front() == '"' || key.front() == '\'')) key = key.substr(1, key.size() - 2);
    if (key.empty()) fail(lineno, "empty key");
    const std::string value = trim(line.substr(eq + 1));
    const std::string full = table.empty() ? key : table + "." + key;
    if (doc.contains(full)) fail(lineno, "duplicate key '" + full + "'");
    if (!value.empty() && value.front() == '[') {
      doc.emplace(full, parse_array(value, lineno));
    } else {
      doc.emplace(full, parse_scalar(value, lineno));
    }
  }
  return doc;
}

Document parse_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kMissingFile, path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse(buffer.str());
}

}  // namespace metapn::toml

#include "mstm/csv.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "mstm/errors.hpp"

namespace mstm::csv {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

std::vector<std::string> split(std::string_view line, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(sep, start);
    const auto piece = line.substr(
        start, pos == std::string_view::npos ? std::string_view::npos
                                             : pos - start);
    out.emplace_back(trim(piece));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::size_t Table::column(std::string_view name) const {
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == name) return i;
  }
  throw ValidationError(source.string() + ": missing column '" +
                        std::string(name) + "'");
}

Table read(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingInputError("cannot open " + path.string());
  Table t;
  t.source = path;
  std::string line;
  std::size_t lineno = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (lineno == 1 && line.size() >= 3 &&
        line.compare(0, 3, "\xEF\xBB\xBF") == 0) {
      line.erase(0, 3);
    }
    if (trim(line).empty()) continue;
    auto fields = split(line);
    if (!have_header) {
      t.header = std::move(fields);
      have_header = true;
      continue;
    }
    if (fields.size() != t.header.size()) {
      throw ValidationError(path.string() + ":" + std::to_string(lineno) +
                            ": expected " + std::to_string(t.header.size()) +
                            " fields, found " + std::to_string(fields.size()));
    }
    t.rows.push_back({lineno, std::move(fields)});
  }
  if (!have_header) throw ValidationError(path.string() + ": empty file");
  return t;
}

namespace {

[[noreturn]] void bad_number(const std::string& field, const Table& table,
                             const Record& rec) {
  throw ValidationError(table.source.string() + ":" + std::to_string(rec.line) +
                        ": not a number: '" + field + "'");
}

}  // namespace

double to_double(const std::string& field, const Table& table,
                 const Record& rec) {
  double x = 0.0;
  const auto* end = field.data() + field.size();
  auto [ptr, ec] = std::from_chars(field.data(), end, x);
  if (ec != std::errc() || ptr != end || field.empty()) {
    bad_number(field, table, rec);
  }
  return x;
}

long long to_int(const std::string& field, const Table& table,
                 const Record& rec) {
  long long x = 0;
  const auto* end = field.data() + field.size();
  auto [ptr, ec] = std::from_chars(field.data(), end, x);
  if (ec != std::errc() || ptr != end || field.empty()) {
    bad_number(field, table, rec);
  }
  return x;
}

std::string format(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

void write_matrix(const std::filesystem::path& path, const Eigen::MatrixXd& m) {
  std::ofstream out(path);
  if (!out) throw MissingInputError("cannot write " + path.string());
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (j) out << ',';
      out << format(m(i, j));
    }
    out << '\n';
  }
}

Eigen::MatrixXd read_matrix(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingInputError("cannot open " + path.string());
  std::vector<std::vector<double>> rows;
  std::string line;
  Table ctx;
  ctx.source = path;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    Record rec{lineno, split(line)};
    std::vector<double> row;
    row.reserve(rec.fields.size());
    for (const auto& f : rec.fields) row.push_back(to_double(f, ctx, rec));
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw ValidationError(path.string() + ":" + std::to_string(lineno) +
                            ": ragged matrix row");
    }
    rows.push_back(std::move(row));
  }
  Eigen::MatrixXd m(rows.size(), rows.empty() ? 0 : rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < rows[i].size(); ++j) m(i, j) = rows[i][j];
  }
  return m;
}

}  // namespace mstm::csv

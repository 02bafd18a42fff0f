#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace mstm::csv {

struct Record {
  std::size_t line = 0;  // 1-based line number in the source file
  std::vector<std::string> fields;
};

struct Table {
  std::filesystem::path source;
  std::vector<std::string> header;
  std::vector<Record> rows;

  // Column index of `name`, or throws ValidationError naming the file.
  std::size_t column(std::string_view name) const;
};

// Reads a comma-separated file with a header line. Blank lines are skipped,
// surrounding whitespace of every field is trimmed. Throws MissingInputError
// when the file cannot be opened.
Table read(const std::filesystem::path& path);

std::vector<std::string> split(std::string_view line, char sep = ',');
std::string_view trim(std::string_view s);

// Strict numeric parsing; the whole field must be consumed.
double to_double(const std::string& field, const Table& table,
                 const Record& rec);
long long to_int(const std::string& field, const Table& table,
                 const Record& rec);

// Round-trip exact decimal form ("%.17g").
std::string format(double x);

// Dense matrix as headerless CSV, one matrix row per line.
void write_matrix(const std::filesystem::path& path, const Eigen::MatrixXd& m);
Eigen::MatrixXd read_matrix(const std::filesystem::path& path);

}  // namespace mstm::csv

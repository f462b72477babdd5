#pragma once

// Comma-separated data files with a mandatory header. Column 1 is the
// response, column 2 the kink variable, remaining columns are covariates.

#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "errors.hpp"
#include "model.hpp"

namespace mkqr {

//! Malformed data file; the message names the offending row and column.
class InputError : public Error
{
public:
  using Error::Error;
};

struct CsvData
{
  Dataset data;
  std::vector<std::string> columns;
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line)
{
  std::vector<std::string> out;
  std::string cell;
  std::stringstream in(line);
  while (std::getline(in, cell, ','))
    out.push_back(cell);
  if (!line.empty() && line.back() == ',')
    out.emplace_back();
  return out;
}

inline std::string trim(const std::string& s)
{
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos)
    return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

} // namespace detail

//! Rows are numbered from 1 after the header.
inline CsvData read_csv(std::istream& in)
{
  std::string line;
  if (!std::getline(in, line))
    throw InputError("empty input: a header line y,x[,z1,...] is required");
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF)
    line.erase(0, 3); // UTF-8 byte order mark
  CsvData out;
  for (const auto& c : detail::split_csv_line(line))
    out.columns.push_back(detail::trim(c));
  const std::size_t width = out.columns.size();
  if (width < 2)
    throw InputError("header must name at least two columns (y and x)");
  for (const auto& c : out.columns) {
    if (c.empty())
      throw InputError("header has an empty column name");
    char* end = nullptr;
    std::strtod(c.c_str(), &end);
    if (end != c.c_str() && *end == '\0')
      throw InputError("the first line looks numeric; a header line is required");
  }

  std::vector<std::vector<double>> rows;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (detail::trim(line).empty())
      continue;
    ++row;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != width)
      throw InputError("row " + std::to_string(row) + ": expected " + std::to_string(width) + " values, found " +
                       std::to_string(cells.size()));
    std::vector<double> values(width);
    for (std::size_t j = 0; j < width; ++j) {
      const std::string cell = detail::trim(cells[j]);
      const std::string where = "row " + std::to_string(row) + ", column '" + out.columns[j] + "'";
      if (cell.empty() || cell == "NA" || cell == "NaN" || cell == "nan")
        throw InputError(where + ": missing value");
      char* end = nullptr;
      errno = 0;
      const double v = std::strtod(cell.c_str(), &end);
      if (end == cell.c_str() || *end != '\0')
        throw InputError(where + ": '" + cell + "' is not a number");
      if (!std::isfinite(v) || errno == ERANGE)
        throw InputError(where + ": value out of range");
      values[j] = v;
    }
    rows.push_back(std::move(values));
  }
  if (rows.empty())
    throw InputError("no data rows after the header");

  const auto n = static_cast<Eigen::Index>(rows.size());
  const auto p = static_cast<Eigen::Index>(width) - 2;
  out.data.y.resize(n);
  out.data.x.resize(n);
  out.data.z.resize(n, p);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& r = rows[static_cast<std::size_t>(i)];
    out.data.y[i] = r[0];
    out.data.x[i] = r[1];
    for (Eigen::Index j = 0; j < p; ++j)
      out.data.z(i, j) = r[static_cast<std::size_t>(j + 2)];
  }
  return out;
}

inline CsvData read_csv_file(const std::string& path)
{
  std::ifstream in(path);
  if (!in)
    throw InputError("cannot open '" + path + "'");
  return read_csv(in);
}

//! Writes every value with 17 significant digits so that reading the file
//! back reproduces the data bit for bit.
inline void write_csv(std::ostream& out, const Dataset& data)
{
  out << "y,x";
  for (Eigen::Index j = 0; j < data.z.cols(); ++j)
    out << ",z" << (j + 1);
  out << '\n';
  char buf[32];
  auto put = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    out << buf;
  };
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    put(data.y[i]);
    out << ',';
    put(data.x[i]);
    for (Eigen::Index j = 0; j < data.z.cols(); ++j) {
      out << ',';
      put(data.z(i, j));
    }
    out << '\n';
  }
}

} // namespace mkqr

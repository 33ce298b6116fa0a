#include "smmd/io.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <system_error>

namespace smmd {

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

Matrix parse_csv_matrix(const std::string& text) {
  std::vector<std::vector<double>> rows;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    bool blank = true;
    for (char c : line)
      if (!std::isspace(static_cast<unsigned char>(c))) { blank = false; break; }
    if (blank) continue;
    std::vector<double> row;
    std::size_t pos = 0;
    while (pos <= line.size()) {
      std::size_t comma = line.find(',', pos);
      std::string cell = line.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
      const char* begin = cell.data();
      const char* end = begin + cell.size();
      while (begin < end && std::isspace(static_cast<unsigned char>(*begin))) ++begin;
      while (end > begin && std::isspace(static_cast<unsigned char>(end[-1]))) --end;
      double value = 0.0;
      auto res = std::from_chars(begin, end, value);
      if (res.ec != std::errc{} || res.ptr != end)
        throw InputError("csv parse error at line " + std::to_string(line_no) +
                         ": '" + cell + "' is not a number");
      row.push_back(value);
      if (comma == std::string::npos) break;
      pos = comma + 1;
    }
    if (!rows.empty() && row.size() != rows.front().size())
      throw InputError("csv parse error at line " + std::to_string(line_no) +
                       ": inconsistent column count");
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw InputError("csv input is empty");
  Matrix m(rows.size(), rows.front().size());
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = rows[i][j];
  return m;
}

Matrix read_csv_matrix(const std::string& path) {
  return parse_csv_matrix(read_text_file(path));
}

std::string csv_to_string(const std::string& header, const Matrix& rows) {
  std::string out;
  if (!header.empty()) {
    out += header;
    out += '\n';
  }
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    for (Eigen::Index j = 0; j < rows.cols(); ++j) {
      if (j) out += ',';
      out += format_double(rows(i, j));
    }
    out += '\n';
  }
  return out;
}

void write_csv(const std::string& path, const std::string& header, const Matrix& rows) {
  write_text_file(path, csv_to_string(header, rows));
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot open '" + path + "' for writing");
  out << text;
  if (!out) throw InputError("write failed for '" + path + "'");
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace smmd

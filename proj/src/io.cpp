#include "kfcov/io.hpp"

#include <cinttypes>
#include <cstdio>
#include <cstdlib>

namespace kfcov {

CsvWriter::CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& header)
    : path_(path), stream_(path) {
  if (!stream_) throw numerical_error("cannot open " + path.string() + " for writing");
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (i) stream_ << ',';
    stream_ << header[i];
  }
  stream_ << '\n';
}

void CsvWriter::write_row(const std::vector<double>& values) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) stream_ << ',';
    stream_ << format_double(values[i]);
  }
  stream_ << '\n';
}

void CsvWriter::write_row_with_index(long index, const Vector& values) {
  stream_ << index;
  for (Eigen::Index i = 0; i < values.size(); ++i) stream_ << ',' << format_double(values(i));
  stream_ << '\n';
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

int CsvTable::column(const std::string& name) const {
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i] == name) return static_cast<int>(i);
  return -1;
}

CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw numerical_error("cannot open " + path.string());
  CsvTable table;
  std::string line;
  if (!std::getline(in, line)) throw numerical_error("empty CSV " + path.string());
  std::size_t start = 0;
  while (start <= line.size()) {
    const std::size_t comma = line.find(',', start);
    const std::size_t end = comma == std::string::npos ? line.size() : comma;
    table.header.push_back(line.substr(start, end - start));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    row.reserve(table.header.size());
    const char* p = line.c_str();
    char* next = nullptr;
    while (true) {
      row.push_back(std::strtod(p, &next));
      if (*next != ',') break;
      p = next + 1;
    }
    table.rows.push_back(std::move(row));
  }
  return table;
}

void write_matrix_container(const std::filesystem::path& path, const std::vector<Matrix>& matrices) {
  std::ofstream os(path);
  if (!os) throw numerical_error("cannot open " + path.string() + " for writing");
  os << "kfcov-matrices 1\n" << matrices.size() << '\n';
  for (const Matrix& m : matrices) {
    os << m.rows() << ' ' << m.cols() << '\n';
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      for (Eigen::Index j = 0; j < m.cols(); ++j) {
        if (j) os << ' ';
        os << format_double(m(i, j));
      }
      os << '\n';
    }
  }
}

std::vector<Matrix> read_matrix_container(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw numerical_error("cannot open " + path.string());
  std::string magic;
  int version = 0;
  std::size_t count = 0;
  if (!(is >> magic >> version >> count) || magic != "kfcov-matrices" || version != 1)
    throw numerical_error("bad matrix container " + path.string());
  std::vector<Matrix> matrices;
  matrices.reserve(count);
  for (std::size_t t = 0; t < count; ++t) {
    Eigen::Index rows = 0, cols = 0;
    if (!(is >> rows >> cols) || rows < 1 || cols < 1)
      throw numerical_error("bad matrix header in " + path.string());
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index j = 0; j < cols; ++j)
        if (!(is >> m(i, j))) throw numerical_error("truncated matrix in " + path.string());
    matrices.push_back(std::move(m));
  }
  return matrices;
}

std::uint64_t fnv1a_file_hash(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw numerical_error("cannot open " + path.string() + " for hashing");
  std::uint64_t hash = 0xcbf29ce484222325ull;
  char chunk[4096];
  while (in.read(chunk, sizeof(chunk)) || in.gcount() > 0) {
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      hash ^= static_cast<unsigned char>(chunk[i]);
      hash *= 0x100000001b3ull;
    }
    if (!in) break;
  }
  return hash;
}

std::string fnv1a_file_hash_hex(const std::filesystem::path& path) {
  char buf[24];
  std::snprintf(buf, sizeof(buf), "%016" PRIx64, fnv1a_file_hash(path));
  return buf;
}

}  // namespace kfcov

#ifndef KFCOV_IO_HPP
#define KFCOV_IO_HPP

#include "kfcov/types.hpp"

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace kfcov {

// CSV with a header row; numeric cells are written with 17 significant
// digits so re-runs produce bitwise-identical files.
class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& header);

  void write_row(const std::vector<double>& values);
  void write_row_with_index(long index, const Vector& values);
  void close() { stream_.close(); }

  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  std::ofstream stream_;
};

std::string format_double(double v);

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;

  int column(const std::string& name) const;  // -1 when absent
};

CsvTable read_csv(const std::filesystem::path& path);

// FNV-1a 64-bit content hash, hex-encoded; recorded per file in run
// manifests.
std::uint64_t fnv1a_file_hash(const std::filesystem::path& path);
std::string fnv1a_file_hash_hex(const std::filesystem::path& path);

// Matrix-list container: "kfcov-matrices 1", count, then per matrix a
// "rows cols" line followed by row-major values.
void write_matrix_container(const std::filesystem::path& path, const std::vector<Matrix>& matrices);
std::vector<Matrix> read_matrix_container(const std::filesystem::path& path);

}  // namespace kfcov

#endif  // KFCOV_IO_HPP

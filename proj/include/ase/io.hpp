#pragma once

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "ase/common.hpp"

namespace ase {

inline std::uint64_t fnv1a64(std::string_view data) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(v));
  return buf;
}

// Shortest round-trip decimal form; keeps emitted files deterministic.
inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  double back = std::strtod(buf, nullptr);
  for (int prec = 1; prec <= 16; ++prec) {
    char shorter[64];
    std::snprintf(shorter, sizeof(shorter), "%.*g", prec, v);
    if (std::strtod(shorter, nullptr) == back) return shorter;
  }
  return buf;
}

inline void append_f32_le(std::string& out, float f) {
  std::uint32_t bits;
  static_assert(sizeof(bits) == sizeof(f));
  std::memcpy(&bits, &f, sizeof(bits));
  out.push_back(static_cast<char>(bits & 0xFF));
  out.push_back(static_cast<char>((bits >> 8) & 0xFF));
  out.push_back(static_cast<char>((bits >> 16) & 0xFF));
  out.push_back(static_cast<char>((bits >> 24) & 0xFF));
}

inline float read_f32_le(const char* p) {
  const unsigned char* u = reinterpret_cast<const unsigned char*>(p);
  std::uint32_t bits = static_cast<std::uint32_t>(u[0]) |
                       (static_cast<std::uint32_t>(u[1]) << 8) |
                       (static_cast<std::uint32_t>(u[2]) << 16) |
                       (static_cast<std::uint32_t>(u[3]) << 24);
  float f;
  std::memcpy(&f, &bits, sizeof(f));
  return f;
}

inline void write_file_bytes(const std::string& path,
                             const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for '" + path + "'");
}

inline std::string read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Sample matrix file: one ASCII header line "ase-samples <n> <dim> <digest>"
// followed by n*dim little-endian 32-bit floats in row-major order.
inline void write_samples(const std::string& path, const Mat& samples,
                          const std::string& digest) {
  std::string bytes = "ase-samples " + std::to_string(samples.rows()) + " " +
                      std::to_string(samples.cols()) + " " + digest + "\n";
  bytes.reserve(bytes.size() + 4 * samples.size());
  for (Eigen::Index i = 0; i < samples.rows(); ++i)
    for (Eigen::Index j = 0; j < samples.cols(); ++j)
      append_f32_le(bytes, static_cast<float>(samples(i, j)));
  write_file_bytes(path, bytes);
}

struct SampleFile {
  Mat samples;
  std::string digest;
};

inline SampleFile read_samples(const std::string& path) {
  std::string bytes = read_file_bytes(path);
  std::size_t nl = bytes.find('\n');
  if (nl == std::string::npos)
    throw IoError("sample file '" + path + "': missing header");
  std::istringstream header(bytes.substr(0, nl));
  std::string magic, digest;
  long long n = 0, d = 0;
  header >> magic >> n >> d >> digest;
  if (magic != "ase-samples" || n < 0 || d < 1)
    throw IoError("sample file '" + path + "': bad header");
  std::size_t need = nl + 1 + static_cast<std::size_t>(4 * n * d);
  if (bytes.size() != need)
    throw IoError("sample file '" + path + "': payload size mismatch");
  SampleFile f;
  f.digest = digest;
  f.samples = Mat(n, d);
  const char* p = bytes.data() + nl + 1;
  for (long long i = 0; i < n; ++i)
    for (long long j = 0; j < d; ++j) {
      f.samples(i, j) = read_f32_le(p);
      p += 4;
    }
  return f;
}

// Minimal CSV emitter with a comment header carrying the config digest.
// Wall-clock readings go in columns whose names start with "wall_" so
// determinism checks can filter them out.
class CsvWriter {
 public:
  explicit CsvWriter(std::vector<std::string> columns)
      : columns_(std::move(columns)) {}

  void set_digest(const std::string& digest) { digest_ = digest; }

  void add_row(const std::vector<std::string>& cells) {
    if (cells.size() != columns_.size())
      throw std::invalid_argument("csv row width mismatch");
    rows_.push_back(cells);
  }

  std::string str() const {
    std::string out;
    if (!digest_.empty()) out += "# config_digest=" + digest_ + "\n";
    for (std::size_t i = 0; i < columns_.size(); ++i)
      out += (i ? "," : "") + columns_[i];
    out += "\n";
    for (const auto& row : rows_) {
      for (std::size_t i = 0; i < row.size(); ++i)
        out += (i ? "," : "") + row[i];
      out += "\n";
    }
    return out;
  }

  void write(const std::string& path) const { write_file_bytes(path, str()); }

 private:
  std::vector<std::string> columns_;
  std::vector<std::vector<std::string>> rows_;
  std::string digest_;
};

}  // namespace ase

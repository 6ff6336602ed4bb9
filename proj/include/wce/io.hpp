#pragma once

#include <bit>
#include <charconv>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "wce/error.hpp"
#include "wce/tensor.hpp"

namespace wce {

namespace fs = std::filesystem;

// Shortest decimal form that round-trips to the same double.
inline std::string format_double(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return {buf, res.ptr};
}

// Header-first CSV writer; every row must match the header width.
class CsvWriter {
 public:
  CsvWriter(std::ostream& out, std::vector<std::string> header) : out_(out), width_(header.size()) {
    for (std::size_t c = 0; c < header.size(); ++c) out_ << (c ? "," : "") << header[c];
    out_ << '\n';
  }

  CsvWriter& operator<<(double v) { return cell(format_double(v)); }
  CsvWriter& operator<<(std::size_t v) { return cell(std::to_string(v)); }
  CsvWriter& operator<<(int v) { return cell(std::to_string(v)); }
  CsvWriter& operator<<(std::string_view v) { return cell(std::string(v)); }
  CsvWriter& operator<<(const char* v) { return cell(std::string(v)); }

  void end_row() {
    if (column_ != width_) {
      throw Error(ErrorKind::shape, "csv row has " + std::to_string(column_) + " cells, header has " +
                                        std::to_string(width_));
    }
    out_ << '\n';
    column_ = 0;
  }

 private:
  CsvWriter& cell(const std::string& s) {
    out_ << (column_ ? "," : "") << s;
    ++column_;
    return *this;
  }

  std::ostream& out_;
  std::size_t width_;
  std::size_t column_ = 0;
};

inline std::ofstream open_output(const fs::path& path, std::ios::openmode mode = std::ios::out) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, mode | std::ios::trunc);
  if (!out) throw Error(ErrorKind::io, "cannot open '" + path.string() + "' for writing");
  return out;
}

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, "cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// SHA-1 over "blob <size>\0<content>", the same id git assigns the file.
inline std::string git_blob_hash(std::string_view content) {
  const std::string header = "blob " + std::to_string(content.size()) + std::string(1, '\0');
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  const bool ok = ctx && EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) == 1 &&
                  EVP_DigestUpdate(ctx, header.data(), header.size()) == 1 &&
                  EVP_DigestUpdate(ctx, content.data(), content.size()) == 1 &&
                  EVP_DigestFinal_ex(ctx, digest, &len) == 1;
  EVP_MD_CTX_free(ctx);
  if (!ok) throw Error(ErrorKind::io, "sha1 digest failed");
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 15];
  }
  return out;
}

inline std::string file_hash(const fs::path& path) { return git_blob_hash(read_file(path)); }

// Flat little-endian float64 array plus "<name>.json" sidecar.
struct ArrayFile {
  std::vector<std::size_t> shape;
  std::vector<double> data;
  nlohmann::json meta;
};

inline fs::path sidecar_path(const fs::path& bin) {
  fs::path p = bin;
  p += ".json";
  return p;
}

inline void write_array(const fs::path& path, std::span<const double> data, const std::vector<std::size_t>& shape,
                        const nlohmann::json& meta = nlohmann::json::object()) {
  std::size_t count = 1;
  for (auto s : shape) count *= s;
  if (count != data.size()) throw Error(ErrorKind::shape, "array shape does not match data length");
  {
    auto out = open_output(path, std::ios::binary);
    if constexpr (std::endian::native == std::endian::little) {
      out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size() * 8));
    } else {
      for (double v : data) {
        auto bits = std::bit_cast<std::uint64_t>(v);
        for (int b = 0; b < 8; ++b) out.put(static_cast<char>((bits >> (8 * b)) & 0xff));
      }
    }
  }
  nlohmann::json side = meta;
  side["shape"] = shape;
  side["dtype"] = "float64";
  side["byte_order"] = "little";
  auto out = open_output(sidecar_path(path));
  out << side.dump(2) << '\n';
}

inline void write_array(const fs::path& path, const Tensor3& t, const nlohmann::json& meta = nlohmann::json::object()) {
  write_array(path, t.storage(), {t.dim(0), t.dim(1), t.dim(2)}, meta);
}

inline void write_array(const fs::path& path, const Matrix& m, const nlohmann::json& meta = nlohmann::json::object()) {
  write_array(path, std::span<const double>(m.data(), static_cast<std::size_t>(m.size())),
              {static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())}, meta);
}

inline ArrayFile read_array(const fs::path& path) {
  ArrayFile a;
  try {
    a.meta = nlohmann::json::parse(read_file(sidecar_path(path)));
    a.shape = a.meta.at("shape").get<std::vector<std::size_t>>();
    if (a.meta.at("dtype") != "float64") throw Error(ErrorKind::io, "unsupported dtype in sidecar");
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::io, "bad sidecar for '" + path.string() + "': " + e.what());
  }
  std::size_t count = 1;
  for (auto s : a.shape) count *= s;
  const std::string raw = read_file(path);
  if (raw.size() != count * 8) {
    throw Error(ErrorKind::io, "'" + path.string() + "' holds " + std::to_string(raw.size()) +
                                   " bytes, sidecar shape needs " + std::to_string(count * 8));
  }
  a.data.resize(count);
  for (std::size_t q = 0; q < count; ++q) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= std::uint64_t(static_cast<unsigned char>(raw[q * 8 + b])) << (8 * b);
    a.data[q] = std::bit_cast<double>(bits);
  }
  return a;
}

inline Tensor3 to_tensor(const ArrayFile& a) {
  if (a.shape.size() != 3) throw Error(ErrorKind::shape, "expected a rank-3 array");
  Tensor3 t(a.shape[0], a.shape[1], a.shape[2]);
  std::memcpy(t.data(), a.data.data(), a.data.size() * sizeof(double));
  return t;
}

inline Matrix to_matrix(const ArrayFile& a) {
  if (a.shape.size() != 2) throw Error(ErrorKind::shape, "expected a rank-2 array");
  return ConstMatrixMap(a.data.data(), static_cast<Eigen::Index>(a.shape[0]),
                        static_cast<Eigen::Index>(a.shape[1]));
}

}  // namespace wce

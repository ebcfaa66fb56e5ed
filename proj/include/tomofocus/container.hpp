// SPDX-License-Identifier: Apache-2.0
//
// TFC1 tensor container. Layout (all integers little-endian):
//
//   "TFC1"
//   u32 header_len, header bytes (UTF-8 JSON, may be empty)
//   u32 array_count
//   per array:
//     u32 name_len, name bytes (UTF-8)
//     u8  dtype (1 = f64, 2 = c128 stored as re,im f64 pairs)
//     u8  rank
//     u64 dims[rank]
//     payload, row-major
//   u32 CRC-32 (IEEE 802.3) of every preceding byte
#pragma once

#include <algorithm>
#include <bit>
#include <complex>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <zlib.h>

#include "tomofocus/error.hpp"

namespace tomofocus {

static_assert(std::endian::native == std::endian::little, "TFC1 I/O assumes a little-endian host");

enum class DType : std::uint8_t { f64 = 1, c128 = 2 };

struct TensorArray {
  std::string name;
  DType dtype = DType::f64;
  std::vector<std::uint64_t> dims;
  std::vector<double> data;  // c128 interleaved

  std::uint64_t element_count() const {
    return std::accumulate(dims.begin(), dims.end(), std::uint64_t{1}, std::multiplies<>());
  }
  std::uint64_t value_count() const { return element_count() * (dtype == DType::c128 ? 2 : 1); }
};

class TensorContainer {
 public:
  std::string header;

  const std::vector<TensorArray>& arrays() const { return arrays_; }

  bool contains(const std::string& name) const { return find(name) != nullptr; }

  void put(TensorArray array) {
    if (contains(array.name))
      throw Error(ErrorKind::invalid_input, "duplicate array name '" + array.name + "'");
    if (array.dims.size() > 255) throw Error(ErrorKind::invalid_shape, "rank exceeds 255");
    if (array.data.size() != array.value_count())
      throw Error(ErrorKind::invalid_shape, "payload size of '" + array.name + "' disagrees with dims");
    arrays_.push_back(std::move(array));
  }

  void put(const std::string& name, const Eigen::MatrixXd& m) {
    TensorArray a{name, DType::f64, {std::uint64_t(m.rows()), std::uint64_t(m.cols())}, {}};
    a.data.resize(m.size());
    Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        a.data.data(), m.rows(), m.cols()) = m;
    put(std::move(a));
  }

  void put(const std::string& name, const Eigen::VectorXd& v) {
    put(TensorArray{name, DType::f64, {std::uint64_t(v.size())}, {v.data(), v.data() + v.size()}});
  }

  void put(const std::string& name, const Eigen::MatrixXcd& m) {
    TensorArray a{name, DType::c128, {std::uint64_t(m.rows()), std::uint64_t(m.cols())}, {}};
    a.data.resize(2 * m.size());
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) {
        const auto idx = 2 * (i * m.cols() + j);
        a.data[idx] = m(i, j).real();
        a.data[idx + 1] = m(i, j).imag();
      }
    put(std::move(a));
  }

  const TensorArray& at(const std::string& name) const {
    if (const auto* a = find(name)) return *a;
    throw Error(ErrorKind::parse_error, "container has no array '" + name + "'");
  }

  /// Rank-2 f64 array as a matrix (rank 1 is read as a column).
  Eigen::MatrixXd matrix(const std::string& name) const {
    const auto& a = at(name);
    if (a.dtype != DType::f64 || a.dims.empty() || a.dims.size() > 2)
      throw Error(ErrorKind::parse_error, "array '" + name + "' is not a real matrix");
    const auto rows = Eigen::Index(a.dims[0]);
    const auto cols = a.dims.size() == 2 ? Eigen::Index(a.dims[1]) : Eigen::Index(1);
    return Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        a.data.data(), rows, cols);
  }

  Eigen::VectorXd vector(const std::string& name) const {
    const auto& a = at(name);
    if (a.dtype != DType::f64 || a.dims.size() != 1)
      throw Error(ErrorKind::parse_error, "array '" + name + "' is not a real vector");
    return Eigen::Map<const Eigen::VectorXd>(a.data.data(), Eigen::Index(a.dims[0]));
  }

  Eigen::MatrixXcd complex_matrix(const std::string& name) const {
    const auto& a = at(name);
    if (a.dtype != DType::c128 || a.dims.size() != 2)
      throw Error(ErrorKind::parse_error, "array '" + name + "' is not a complex matrix");
    Eigen::MatrixXcd m(Eigen::Index(a.dims[0]), Eigen::Index(a.dims[1]));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) {
        const auto idx = 2 * (i * m.cols() + j);
        m(i, j) = {a.data[idx], a.data[idx + 1]};
      }
    return m;
  }

  std::string serialize() const {
    std::string out = "TFC1";
    append_u32(out, static_cast<std::uint32_t>(header.size()));
    out += header;
    append_u32(out, static_cast<std::uint32_t>(arrays_.size()));
    for (const auto& a : arrays_) {
      append_u32(out, static_cast<std::uint32_t>(a.name.size()));
      out += a.name;
      out.push_back(static_cast<char>(a.dtype));
      out.push_back(static_cast<char>(a.dims.size()));
      for (auto d : a.dims) append_raw(out, d);
      out.append(reinterpret_cast<const char*>(a.data.data()), a.data.size() * sizeof(double));
    }
    append_u32(out, crc32_of(out));
    return out;
  }

  static TensorContainer deserialize(const std::string& bytes) {
    if (bytes.size() < 16 || bytes.compare(0, 4, "TFC1") != 0)
      throw Error(ErrorKind::parse_error, "not a TFC1 container");
    const std::size_t body = bytes.size() - 4;
    std::uint32_t stored = 0;
    std::memcpy(&stored, bytes.data() + body, 4);
    if (stored != crc32_of(std::string_view(bytes.data(), body)))
      throw Error(ErrorKind::parse_error, "CRC mismatch");

    Reader r{bytes, 4, body};
    TensorContainer c;
    const auto header_len = r.read<std::uint32_t>();
    c.header = r.read_string(header_len);
    const auto count = r.read<std::uint32_t>();
    for (std::uint32_t i = 0; i < count; ++i) {
      TensorArray a;
      a.name = r.read_string(r.read<std::uint32_t>());
      const auto dtype = r.read<std::uint8_t>();
      if (dtype != 1 && dtype != 2) throw Error(ErrorKind::parse_error, "unknown dtype code");
      a.dtype = static_cast<DType>(dtype);
      const auto rank = r.read<std::uint8_t>();
      for (int d = 0; d < rank; ++d) a.dims.push_back(r.read<std::uint64_t>());
      const auto values = a.value_count();
      if (values > (r.end - r.pos) / sizeof(double))
        throw Error(ErrorKind::parse_error, "payload of '" + a.name + "' is truncated");
      a.data.resize(values);
      std::memcpy(a.data.data(), bytes.data() + r.pos, values * sizeof(double));
      r.pos += values * sizeof(double);
      if (c.contains(a.name)) throw Error(ErrorKind::parse_error, "duplicate array '" + a.name + "'");
      c.arrays_.push_back(std::move(a));
    }
    if (r.pos != body) throw Error(ErrorKind::parse_error, "trailing bytes before CRC");
    return c;
  }

  void save(const std::string& path) const {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw Error(ErrorKind::io_error, "cannot open '" + path + "' for writing");
    const auto bytes = serialize();
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw Error(ErrorKind::io_error, "write to '" + path + "' failed");
  }

  static TensorContainer load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error(ErrorKind::io_error, "cannot open '" + path + "'");
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return deserialize(bytes);
  }

  static std::uint32_t crc32_of(std::string_view bytes) {
    uLong crc = ::crc32(0L, Z_NULL, 0);
    // zlib takes uInt lengths; feed large buffers in pieces.
    std::size_t off = 0;
    while (off < bytes.size()) {
      const auto piece = static_cast<uInt>(std::min<std::size_t>(bytes.size() - off, 1u << 30));
      crc = ::crc32(crc, reinterpret_cast<const Bytef*>(bytes.data() + off), piece);
      off += piece;
    }
    return static_cast<std::uint32_t>(crc);
  }

 private:
  std::vector<TensorArray> arrays_;

  const TensorArray* find(const std::string& name) const {
    for (const auto& a : arrays_)
      if (a.name == name) return &a;
    return nullptr;
  }

  template <class T>
  static void append_raw(std::string& out, T value) {
    out.append(reinterpret_cast<const char*>(&value), sizeof(T));
  }
  static void append_u32(std::string& out, std::uint32_t v) { append_raw(out, v); }

  struct Reader {
    const std::string& bytes;
    std::size_t pos;
    std::size_t end;

    template <class T>
    T read() {
      if (end - pos < sizeof(T)) throw Error(ErrorKind::parse_error, "container is truncated");
      T v;
      std::memcpy(&v, bytes.data() + pos, sizeof(T));
      pos += sizeof(T);
      return v;
    }
    std::string read_string(std::size_t len) {
      if (end - pos < len) throw Error(ErrorKind::parse_error, "container is truncated");
      std::string s = bytes.substr(pos, len);
      pos += len;
      return s;
    }
  };
};

}  // namespace tomofocus

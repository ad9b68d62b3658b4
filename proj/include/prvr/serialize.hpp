#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "prvr/matrix.hpp"

static_assert(std::endian::native == std::endian::little,
              "on-disk formats are little-endian; big-endian hosts are unsupported");

namespace prvr::io {

inline std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t fnv1a(const std::string& s) { return fnv1a(s.data(), s.size()); }

/// Buffered binary writer with a running FNV-1a checksum; finish() appends
/// the checksum and flushes the file atomically (write temp, then rename).
class Writer {
 public:
  void put_bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  template <class T>
  void put(T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    put_bytes(&v, sizeof(T));
  }
  void put_u32(std::uint32_t v) { put(v); }
  void put_u64(std::uint64_t v) { put(v); }
  void put_f64(double v) { put(v); }
  void put_f32(float v) { put(v); }
  void put_string(const std::string& s) {
    put_u32(static_cast<std::uint32_t>(s.size()));
    put_bytes(s.data(), s.size());
  }
  void put_f32_array(const std::vector<float>& v) {
    put_u32(static_cast<std::uint32_t>(v.size()));
    put_bytes(v.data(), v.size() * sizeof(float));
  }
  void put_matrix_f64(const Matrix& m) {
    put_u32(static_cast<std::uint32_t>(m.rows));
    put_u32(static_cast<std::uint32_t>(m.cols));
    put_bytes(m.data.data(), m.data.size() * sizeof(double));
  }
  void put_matrix_f32(const Matrix& m) {
    put_u32(static_cast<std::uint32_t>(m.rows));
    put_u32(static_cast<std::uint32_t>(m.cols));
    for (double d : m.data) put_f32(static_cast<float>(d));
  }

  void write_file(const std::string& path) {
    const std::uint64_t sum = fnv1a(buf_.data(), buf_.size());
    put_u64(sum);
    const std::string tmp = path + ".tmp";
    {
      std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
      if (!f) throw std::runtime_error("cannot open for write: " + tmp);
      f.write(reinterpret_cast<const char*>(buf_.data()), static_cast<std::streamsize>(buf_.size()));
      if (!f) throw std::runtime_error("write failed: " + tmp);
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0)
      throw std::runtime_error("rename failed: " + path);
  }

  const std::vector<unsigned char>& bytes() const { return buf_; }

 private:
  std::vector<unsigned char> buf_;
};

/// Whole-file reader; verifies the trailing checksum up front so truncated
/// or corrupted files are refused before any parsing.
class Reader {
 public:
  explicit Reader(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open: " + path);
    f.seekg(0, std::ios::end);
    const auto sz = static_cast<std::size_t>(f.tellg());
    f.seekg(0, std::ios::beg);
    buf_.resize(sz);
    if (sz) f.read(reinterpret_cast<char*>(buf_.data()), static_cast<std::streamsize>(sz));
    if (!f) throw std::runtime_error("read failed: " + path);
    if (sz < 8) throw std::runtime_error("corrupt file (too short): " + path);
    std::uint64_t stored;
    std::memcpy(&stored, buf_.data() + sz - 8, 8);
    if (stored != fnv1a(buf_.data(), sz - 8))
      throw std::runtime_error("corrupt file (checksum mismatch): " + path);
    end_ = sz - 8;
  }

  void get_bytes(void* p, std::size_t n) {
    if (pos_ + n > end_) throw std::runtime_error("corrupt file (unexpected end)");
    std::memcpy(p, buf_.data() + pos_, n);
    pos_ += n;
  }
  template <class T>
  T get() {
    static_assert(std::is_trivially_copyable_v<T>);
    T v;
    get_bytes(&v, sizeof(T));
    return v;
  }
  std::uint32_t get_u32() { return get<std::uint32_t>(); }
  std::uint64_t get_u64() { return get<std::uint64_t>(); }
  double get_f64() { return get<double>(); }
  float get_f32() { return get<float>(); }
  std::string get_string() {
    const std::uint32_t n = get_u32();
    if (pos_ + n > end_) throw std::runtime_error("corrupt file (bad string length)");
    std::string s(reinterpret_cast<const char*>(buf_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::vector<float> get_f32_array() {
    const std::uint32_t n = get_u32();
    std::vector<float> v(n);
    get_bytes(v.data(), n * sizeof(float));
    return v;
  }
  Matrix get_matrix_f64() {
    const std::uint32_t r = get_u32(), c = get_u32();
    Matrix m(static_cast<int>(r), static_cast<int>(c));
    get_bytes(m.data.data(), m.data.size() * sizeof(double));
    return m;
  }
  Matrix get_matrix_f32() {
    const std::uint32_t r = get_u32(), c = get_u32();
    Matrix m(static_cast<int>(r), static_cast<int>(c));
    for (double& d : m.data) d = get_f32();
    return m;
  }

  bool at_end() const { return pos_ == end_; }

 private:
  std::vector<unsigned char> buf_;
  std::size_t pos_ = 0;
  std::size_t end_ = 0;
};

}  // namespace prvr::io

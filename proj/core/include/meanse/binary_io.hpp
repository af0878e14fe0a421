#pragma once

// Little-endian byte packing shared by the checkpoint and corpus containers.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <type_traits>
#include <string>
#include <vector>

namespace meanse::io {

class ByteWriter {
 public:
  template <class T>
  void put(T v) {
    static_assert(std::is_integral_v<T>);
    using U = std::make_unsigned_t<T>;
    U u = static_cast<U>(v);
    for (std::size_t i = 0; i < sizeof(T); ++i) bytes_.push_back(static_cast<std::uint8_t>(u >> (8 * i)));
  }
  void put_f64(double v) { put(std::bit_cast<std::uint64_t>(v)); }
  void put_f64s(std::span<const double> vs) {
    for (double v : vs) put_f64(v);
  }
  void put_raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    bytes_.insert(bytes_.end(), b, b + n);
  }
  void put_string(const std::string& s) {
    put(static_cast<std::uint32_t>(s.size()));
    put_raw(s.data(), s.size());
  }

  std::vector<std::uint8_t>& bytes() { return bytes_; }
  const std::vector<std::uint8_t>& bytes() const { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

/// Reads what ByteWriter wrote; throws std::out_of_range on truncation.
class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  template <class T>
  T get() {
    static_assert(std::is_integral_v<T>);
    need(sizeof(T));
    using U = std::make_unsigned_t<T>;
    U u = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) u |= static_cast<U>(U(bytes_[pos_ + i]) << (8 * i));
    pos_ += sizeof(T);
    return static_cast<T>(u);
  }
  double get_f64() { return std::bit_cast<double>(get<std::uint64_t>()); }
  std::vector<double> get_f64s(std::size_t n) {
    need(n * 8);
    std::vector<double> out(n);
    for (auto& v : out) v = get_f64();
    return out;
  }
  void get_raw(void* p, std::size_t n) {
    need(n);
    std::memcpy(p, bytes_.data() + pos_, n);
    pos_ += n;
  }
  std::string get_string() {
    const auto n = get<std::uint32_t>();
    std::string s(n, '\0');
    get_raw(s.data(), n);
    return s;
  }

  std::size_t position() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw std::out_of_range("unexpected end of data");
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
/// Writes through a temporary sibling and renames, so readers never see a partial file.
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace meanse::io

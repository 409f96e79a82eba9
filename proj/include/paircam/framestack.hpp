#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "paircam/io.hpp"
#include "paircam/sensor.hpp"

namespace paircam {

// Frame-stack container: little-endian header {magic "PPFR", version u16,
// N u32, M u64, kind u8}, then M fixed-size records. Gray records hold N
// float64; Binary records pack N bits LSB-first, padded to a byte boundary.
namespace stack_detail {

inline constexpr char kMagic[4] = {'P', 'P', 'F', 'R'};
inline constexpr std::uint16_t kStackVersion = 1;

inline void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xFF));
  out.push_back(static_cast<char>((v >> 8) & 0xFF));
}

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline std::uint16_t get_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

inline std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline std::uint64_t get_u64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

} // namespace stack_detail

// magic + version + n_pixels + n_frames + kind byte
inline constexpr std::size_t kStackHeaderSize = 4 + 2 + 4 + 8 + 1;

inline std::uint8_t stack_kind_byte(Frame::Kind kind) {
  return kind == Frame::Kind::Binary ? 0 : 1;
}

inline std::size_t stack_record_size(std::uint32_t n, Frame::Kind kind) {
  return kind == Frame::Kind::Binary ? (n + 7) / 8 : static_cast<std::size_t>(n) * 8;
}

inline std::string render_stack_header(std::uint32_t n, std::uint64_t m, Frame::Kind kind) {
  std::string h;
  h.append(stack_detail::kMagic, 4);
  stack_detail::put_u16(h, stack_detail::kStackVersion);
  stack_detail::put_u32(h, n);
  stack_detail::put_u64(h, m);
  h.push_back(static_cast<char>(stack_kind_byte(kind)));
  return h;
}

inline void serialize_frame(const Frame& f, std::string& out) {
  if (f.kind == Frame::Kind::Binary) {
    const std::size_t bytes = (f.values.size() + 7) / 8;
    const std::size_t base = out.size();
    out.resize(base + bytes, '\0');
    for (std::size_t i = 0; i < f.values.size(); ++i)
      if (f.values[i] != 0.0) out[base + i / 8] = static_cast<char>(out[base + i / 8] | (1 << (i % 8)));
  } else {
    for (double v : f.values) stack_detail::put_u64(out, std::bit_cast<std::uint64_t>(v));
  }
}

// Sequential writer; keeps a running FNV-1a over everything written so
// reruns can be compared without re-reading the file.
class StackWriter {
public:
  StackWriter(const std::string& path, std::uint32_t n, std::uint64_t m, Frame::Kind kind)
      : out_(path, std::ios::binary), path_(path), n_(n), m_(m), kind_(kind) {
    if (!out_) throw std::runtime_error("stack: cannot open for writing: " + path);
    const std::string h = render_stack_header(n, m, kind);
    write_bytes(h.data(), h.size());
  }

  void append(const Frame& f) {
    if (f.kind != kind_ || f.values.size() != n_)
      throw std::invalid_argument("stack: frame kind/size mismatch");
    buf_.clear();
    serialize_frame(f, buf_);
    write_bytes(buf_.data(), buf_.size());
    ++written_;
  }

  // Pre-serialized records from a parallel producer, in frame order.
  void append_records(const std::string& bytes, std::uint64_t n_records) {
    if (bytes.size() != n_records * stack_record_size(n_, kind_))
      throw std::invalid_argument("stack: record block has wrong size");
    write_bytes(bytes.data(), bytes.size());
    written_ += n_records;
  }

  void finish() {
    if (written_ != m_)
      throw std::runtime_error("stack: frame count mismatch at finish: " + path_);
    out_.flush();
    if (!out_) throw std::runtime_error("stack: write failed: " + path_);
  }

  [[nodiscard]] std::uint64_t hash() const { return hash_; }
  [[nodiscard]] std::uint64_t frames_written() const { return written_; }

private:
  void write_bytes(const char* p, std::size_t len) {
    out_.write(p, static_cast<std::streamsize>(len));
    hash_ = fnv1a64(p, len, hash_);
  }

  std::ofstream out_;
  std::string path_;
  std::uint32_t n_;
  std::uint64_t m_;
  Frame::Kind kind_;
  std::uint64_t written_ = 0;
  std::uint64_t hash_ = 0xCBF29CE484222325ull;
  std::string buf_;
};

class StackReader {
public:
  explicit StackReader(const std::string& path) : in_(path, std::ios::binary) {
    if (!in_) throw std::runtime_error("stack: cannot open: " + path);
    unsigned char h[19];
    in_.read(reinterpret_cast<char*>(h), sizeof h);
    if (!in_ || std::memcmp(h, stack_detail::kMagic, 4) != 0)
      throw std::runtime_error("stack: bad magic: " + path);
    const std::uint16_t version = stack_detail::get_u16(h + 4);
    if (version != stack_detail::kStackVersion)
      throw std::runtime_error("stack: unsupported version " + std::to_string(version));
    n_ = stack_detail::get_u32(h + 6);
    m_ = stack_detail::get_u64(h + 10);
    kind_ = h[18] == 0 ? Frame::Kind::Binary : Frame::Kind::Gray;
    if (h[18] > 1) throw std::runtime_error("stack: unknown frame kind");
    record_.resize(stack_record_size(n_, kind_));
  }

  [[nodiscard]] std::uint32_t n_pixels() const { return n_; }
  [[nodiscard]] std::uint64_t n_frames() const { return m_; }
  [[nodiscard]] Frame::Kind kind() const { return kind_; }

  // Reads the next frame; false once all M records were consumed.
  bool next(Frame& f) {
    if (read_ >= m_) return false;
    in_.read(record_.data(), static_cast<std::streamsize>(record_.size()));
    if (!in_) throw std::runtime_error("stack: truncated record");
    f.kind = kind_;
    f.values.resize(n_);
    if (kind_ == Frame::Kind::Binary) {
      for (std::uint32_t i = 0; i < n_; ++i)
        f.values[i] = (record_[i / 8] >> (i % 8)) & 1 ? 1.0 : 0.0;
    } else {
      for (std::uint32_t i = 0; i < n_; ++i) {
        const auto* p = reinterpret_cast<const unsigned char*>(record_.data()) + 8 * i;
        f.values[i] = std::bit_cast<double>(stack_detail::get_u64(p));
      }
    }
    ++read_;
    return true;
  }

private:
  std::ifstream in_;
  std::uint32_t n_ = 0;
  std::uint64_t m_ = 0;
  Frame::Kind kind_ = Frame::Kind::Gray;
  std::uint64_t read_ = 0;
  std::vector<char> record_;
};

} // namespace paircam

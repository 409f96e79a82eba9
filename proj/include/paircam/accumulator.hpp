#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "paircam/framestack.hpp"
#include "paircam/io.hpp"
#include "paircam/matrix.hpp"
#include "paircam/sensor.hpp"

namespace paircam {

struct InsufficientFrames : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Streaming moments of a frame sequence: per-pixel sums, the same-frame
// outer-product sum, and the successive-frame cross sum used to estimate
// the accidental (independent-pair) background. Retains its first and last
// frames so two accumulators over adjacent ranges merge exactly.
class MomentAccumulator {
public:
  MomentAccumulator() = default;
  explicit MomentAccumulator(std::uint32_t n)
      : n_(n), sum_x_(n, 0.0), sum_sq_(n, 0.0), sum_xx_(n), sum_x_next_(n) {}

  [[nodiscard]] std::uint32_t n_pixels() const { return n_; }
  [[nodiscard]] std::uint64_t n_frames() const { return frames_; }

  void push(const Frame& frame) {
    if (frame.values.size() != n_) throw std::invalid_argument("accumulator: frame size mismatch");
    const std::vector<double>& x = frame.values;

    if (frames_ == 0) first_ = x;

    if (frame.kind == Frame::Kind::Binary) {
      // Binary frames are sparse; update only fired rows/columns.
      fired_.clear();
      for (std::uint32_t i = 0; i < n_; ++i)
        if (x[i] != 0.0) fired_.push_back(i);
      for (std::uint32_t i : fired_) {
        sum_x_[i] += 1.0;
        sum_sq_[i] += 1.0;
        for (std::uint32_t j : fired_) sum_xx_(i, j) += 1.0;
      }
    } else {
      for (std::uint32_t i = 0; i < n_; ++i) {
        const double xi = x[i];
        sum_x_[i] += xi;
        sum_sq_[i] += xi * xi;
        double* row = &sum_xx_.data()[static_cast<std::size_t>(i) * n_];
        for (std::uint32_t j = 0; j < n_; ++j) row[j] += xi * x[j];
      }
    }

    if (frames_ >= 1) add_cross(last_, x);
    last_ = x;
    ++frames_;
  }

  // b must cover the frames immediately after this accumulator's range;
  // the boundary successive product last*b.first is restored here.
  void merge(const MomentAccumulator& b) {
    if (b.frames_ == 0) return;
    if (frames_ == 0) {
      *this = b;
      return;
    }
    if (b.n_ != n_) throw std::invalid_argument("accumulator: merge size mismatch");
    for (std::uint32_t i = 0; i < n_; ++i) {
      sum_x_[i] += b.sum_x_[i];
      sum_sq_[i] += b.sum_sq_[i];
    }
    for (std::size_t c = 0; c < sum_xx_.data().size(); ++c) {
      sum_xx_.data()[c] += b.sum_xx_.data()[c];
      sum_x_next_.data()[c] += b.sum_x_next_.data()[c];
    }
    add_cross(last_, b.first_);
    last_ = b.last_;
    frames_ += b.frames_;
  }

  [[nodiscard]] std::vector<double> mean_direct() const {
    require_frames(1);
    return scaled(sum_x_, 1.0 / static_cast<double>(frames_));
  }

  [[nodiscard]] std::vector<double> mean_square() const {
    require_frames(1);
    return scaled(sum_sq_, 1.0 / static_cast<double>(frames_));
  }

  [[nodiscard]] SquareMatrix mean_corr() const {
    require_frames(1);
    SquareMatrix m = sum_xx_;
    for (double& v : m.data()) v /= static_cast<double>(frames_);
    return m;
  }

  // Average of x_i^(l) * x_j^(l+1) over the M-1 successive pairs.
  [[nodiscard]] SquareMatrix mean_corr_successive() const {
    require_frames(2);
    SquareMatrix m = sum_x_next_;
    for (double& v : m.data()) v /= static_cast<double>(frames_ - 1);
    return m;
  }

  void save(const std::string& path) const {
    nlohmann::json header;
    header["n_pixels"] = n_;
    header["n_frames"] = frames_;
    header["arrays"] = {"sum_x", "sum_sq", "first", "last", "sum_xx", "sum_x_next"};
    const std::string htext = header.dump();

    std::string out;
    stack_detail::put_u32(out, static_cast<std::uint32_t>(htext.size()));
    out += htext;
    append_blob(out, sum_x_);
    append_blob(out, sum_sq_);
    append_blob(out, frames_ ? first_ : std::vector<double>(n_, 0.0));
    append_blob(out, frames_ ? last_ : std::vector<double>(n_, 0.0));
    append_blob(out, sum_xx_.data());
    append_blob(out, sum_x_next_.data());
    write_file(path, out);
  }

  static MomentAccumulator load(const std::string& path) {
    const std::string bytes = read_file(path);
    if (bytes.size() < 4) throw std::runtime_error("accumulator: truncated file: " + path);
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    const std::uint32_t hlen = stack_detail::get_u32(p);
    if (bytes.size() < 4 + hlen) throw std::runtime_error("accumulator: truncated header: " + path);
    const auto header = nlohmann::json::parse(bytes.substr(4, hlen));

    MomentAccumulator acc(header.at("n_pixels").get<std::uint32_t>());
    acc.frames_ = header.at("n_frames").get<std::uint64_t>();
    std::size_t off = 4 + hlen;
    read_blob(bytes, off, acc.sum_x_);
    read_blob(bytes, off, acc.sum_sq_);
    acc.first_.resize(acc.n_);
    acc.last_.resize(acc.n_);
    read_blob(bytes, off, acc.first_);
    read_blob(bytes, off, acc.last_);
    read_blob(bytes, off, acc.sum_xx_.data());
    read_blob(bytes, off, acc.sum_x_next_.data());
    if (off != bytes.size()) throw std::runtime_error("accumulator: trailing bytes: " + path);
    return acc;
  }

private:
  void add_cross(const std::vector<double>& prev, const std::vector<double>& next) {
    for (std::uint32_t i = 0; i < n_; ++i) {
      const double xi = prev[i];
      if (xi == 0.0) continue;
      double* row = &sum_x_next_.data()[static_cast<std::size_t>(i) * n_];
      for (std::uint32_t j = 0; j < n_; ++j) row[j] += xi * next[j];
    }
  }

  void require_frames(std::uint64_t need) const {
    if (frames_ < need)
      throw InsufficientFrames("accumulator: needs >= " + std::to_string(need) + " frames");
  }

  static std::vector<double> scaled(const std::vector<double>& v, double s) {
    std::vector<double> out(v);
    for (double& x : out) x *= s;
    return out;
  }

  static void append_blob(std::string& out, const std::vector<double>& v) {
    for (double x : v) stack_detail::put_u64(out, std::bit_cast<std::uint64_t>(x));
  }

  static void read_blob(const std::string& bytes, std::size_t& off, std::vector<double>& v) {
    if (off + 8 * v.size() > bytes.size()) throw std::runtime_error("accumulator: truncated blob");
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data()) + off;
    for (double& x : v) {
      x = std::bit_cast<double>(stack_detail::get_u64(p));
      p += 8;
    }
    off += 8 * v.size();
  }

  std::uint32_t n_ = 0;
  std::uint64_t frames_ = 0;
  std::vector<double> sum_x_;
  std::vector<double> sum_sq_;
  SquareMatrix sum_xx_;
  SquareMatrix sum_x_next_;
  std::vector<double> first_;
  std::vector<double> last_;
  std::vector<std::uint32_t> fired_;
};

} // namespace paircam

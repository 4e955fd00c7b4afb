// 2-D trajectories, the grid softmax codec, and the text dataset format.
#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "vbp/common.hpp"

namespace vbp {

struct Point2 {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Point2&, const Point2&) = default;
};

/// A time series of points in the unit square.
class Trajectory2D {
 public:
  Trajectory2D() = default;
  explicit Trajectory2D(std::vector<Point2> points) : points_(std::move(points)) {
    for (std::size_t t = 0; t < points_.size(); ++t) check(points_[t], t);
  }

  void push_back(Point2 p) {
    check(p, points_.size());
    points_.push_back(p);
  }

  std::size_t step_count() const { return points_.size(); }
  bool empty() const { return points_.empty(); }
  const Point2& operator[](std::size_t t) const { return points_[t]; }
  const std::vector<Point2>& points() const { return points_; }

  Trajectory2D slice(std::size_t begin, std::size_t length) const {
    if (begin + length > points_.size()) throw std::out_of_range("trajectory slice past end");
    return Trajectory2D(std::vector<Point2>(points_.begin() + static_cast<long>(begin),
                                            points_.begin() + static_cast<long>(begin + length)));
  }

  friend bool operator==(const Trajectory2D&, const Trajectory2D&) = default;

 private:
  static void check(const Point2& p, std::size_t t) {
    if (!(p.x >= 0.0 && p.x <= 1.0 && p.y >= 0.0 && p.y <= 1.0))
      throw std::domain_error("trajectory point " + std::to_string(t) + " outside [0,1]^2");
  }
  std::vector<Point2> points_;
};

/// Joint softmax over a rows x cols lattice of cell centres spanning [0,1]^2.
/// Cell k = row * cols + col has centre (col / (cols-1), row / (rows-1)).
struct GridCodec {
  int rows = 11;
  int cols = 11;
  double sharpness = 150.0;

  int size() const { return rows * cols; }
  double pitch_x() const { return 1.0 / (cols - 1); }
  double pitch_y() const { return 1.0 / (rows - 1); }

  Point2 center(int k) const {
    return {static_cast<double>(k % cols) / (cols - 1), static_cast<double>(k / cols) / (rows - 1)};
  }

  void validate() const {
    if (rows < 2 || cols < 2) throw std::domain_error("grid codec needs at least 2 rows and 2 cols");
    if (!(sharpness > 0.0) || !std::isfinite(sharpness))
      throw std::domain_error("grid codec sharpness must be positive");
  }

  friend bool operator==(const GridCodec&, const GridCodec&) = default;
};

/// Per-step probability vectors, one column per step (M x T).
struct EncodedSequence {
  Eigen::MatrixXd frames;

  std::size_t step_count() const { return static_cast<std::size_t>(frames.cols()); }
  int dim() const { return static_cast<int>(frames.rows()); }
};

inline Eigen::VectorXd encode_point(const Point2& p, const GridCodec& codec) {
  codec.validate();
  if (!(p.x >= 0.0 && p.x <= 1.0 && p.y >= 0.0 && p.y <= 1.0))
    throw std::domain_error("encode_point: coordinate outside [0,1]");
  const int m = codec.size();
  Eigen::VectorXd logits(m);
  for (int k = 0; k < m; ++k) {
    const Point2 c = codec.center(k);
    const double dx = p.x - c.x, dy = p.y - c.y;
    logits[k] = -codec.sharpness * (dx * dx + dy * dy);
  }
  // The nearest centre is at most half a diagonal pitch away, so the max
  // logit is bounded and the shift below keeps every exponent <= 0.
  const double top = logits.maxCoeff();
  Eigen::VectorXd out = (logits.array() - top).exp().matrix();
  out /= out.sum();
  return out;
}

/// Expected cell centre under the frame.
inline Point2 decode_frame(const Eigen::Ref<const Eigen::VectorXd>& frame, const GridCodec& codec,
                           double tolerance = 1e-6) {
  if (frame.size() != codec.size()) throw std::domain_error("decode_frame: frame size mismatch");
  const double total = frame.sum();
  if (!(std::abs(total - 1.0) <= tolerance) || (frame.array() < -tolerance).any())
    throw std::domain_error("decode_frame: frame is not a probability vector");
  double x = 0.0, y = 0.0;
  for (int k = 0; k < codec.size(); ++k) {
    const Point2 c = codec.center(k);
    x += frame[k] * c.x;
    y += frame[k] * c.y;
  }
  x /= total;
  y /= total;
  return {std::clamp(x, 0.0, 1.0), std::clamp(y, 0.0, 1.0)};
}

inline EncodedSequence encode_trajectory(const Trajectory2D& traj, const GridCodec& codec) {
  if (traj.empty()) throw std::domain_error("encode_trajectory: empty trajectory");
  EncodedSequence seq;
  seq.frames.resize(codec.size(), static_cast<long>(traj.step_count()));
  for (std::size_t t = 0; t < traj.step_count(); ++t)
    seq.frames.col(static_cast<long>(t)) = encode_point(traj[t], codec);
  return seq;
}

inline Trajectory2D decode_sequence(const Eigen::Ref<const Eigen::MatrixXd>& frames, const GridCodec& codec) {
  std::vector<Point2> pts;
  pts.reserve(static_cast<std::size_t>(frames.cols()));
  for (long t = 0; t < frames.cols(); ++t) pts.push_back(decode_frame(frames.col(t), codec));
  return Trajectory2D(std::move(pts));
}

/// Raw trajectories plus their encodings; index-aligned.
struct Dataset {
  GridCodec codec;
  std::uint64_t seed = 0;
  std::vector<Trajectory2D> raw;
  std::vector<EncodedSequence> sequences;

  std::size_t size() const { return raw.size(); }

  void add(Trajectory2D traj) {
    sequences.push_back(encode_trajectory(traj, codec));
    raw.push_back(std::move(traj));
  }
};

inline Dataset make_dataset(const GridCodec& codec, std::uint64_t seed, std::vector<Trajectory2D> trajectories) {
  Dataset ds;
  ds.codec = codec;
  ds.seed = seed;
  for (auto& tr : trajectories) ds.add(std::move(tr));
  return ds;
}

// File layout:
//   VBPDATA v1 rows=<r> cols=<c> sharpness=<s> seed=<u64>
//   SEQ <id> <len>
//   <x> <y>            (len lines)
//   ...
// Encoded frames are recomputed on load.

inline void write_dataset(std::ostream& os, const Dataset& ds) {
  os << "VBPDATA v1 rows=" << ds.codec.rows << " cols=" << ds.codec.cols
     << " sharpness=" << format_double(ds.codec.sharpness) << " seed=" << ds.seed << '\n';
  for (std::size_t i = 0; i < ds.raw.size(); ++i) {
    const auto& tr = ds.raw[i];
    os << "SEQ " << i << ' ' << tr.step_count() << '\n';
    for (const auto& p : tr.points()) os << format_double(p.x) << ' ' << format_double(p.y) << '\n';
  }
}

inline void save_dataset(const std::string& path, const Dataset& ds) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  write_dataset(os, ds);
  if (!os) throw std::runtime_error("write failed: " + path);
}

namespace detail {

inline std::vector<std::string_view> split_ws(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t' || s[i] == '\r')) ++i;
    std::size_t j = i;
    while (j < s.size() && s[j] != ' ' && s[j] != '\t' && s[j] != '\r') ++j;
    if (j > i) out.push_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

inline std::string_view key_value(std::string_view tok, std::string_view key, std::size_t line) {
  if (tok.size() <= key.size() || tok.substr(0, key.size()) != key || tok[key.size()] != '=')
    throw LoadError("expected '" + std::string(key) + "=<value>'", line);
  return tok.substr(key.size() + 1);
}

}  // namespace detail

inline Dataset read_dataset(std::istream& is) {
  Dataset ds;
  std::string line;
  std::size_t lineno = 0;
  if (!std::getline(is, line)) throw LoadError("missing header", 1);
  ++lineno;
  auto head = detail::split_ws(line);
  if (head.size() != 6 || head[0] != "VBPDATA") throw LoadError("bad header", lineno);
  if (head[1] != "v1") throw LoadError("unsupported version '" + std::string(head[1]) + "'", lineno);
  if (!parse_int(detail::key_value(head[2], "rows", lineno), ds.codec.rows) ||
      !parse_int(detail::key_value(head[3], "cols", lineno), ds.codec.cols) ||
      !parse_double(detail::key_value(head[4], "sharpness", lineno), ds.codec.sharpness) ||
      !parse_int(detail::key_value(head[5], "seed", lineno), ds.seed))
    throw LoadError("malformed header value", lineno);
  try {
    ds.codec.validate();
  } catch (const std::domain_error& e) {
    throw LoadError(e.what(), lineno);
  }

  long record = 0;
  while (std::getline(is, line)) {
    ++lineno;
    auto tok = detail::split_ws(line);
    if (tok.empty()) continue;
    std::size_t id = 0, len = 0;
    if (tok.size() != 3 || tok[0] != "SEQ" || !parse_int(tok[1], id) || !parse_int(tok[2], len))
      throw LoadError("expected 'SEQ <id> <len>'", lineno, record);
    if (id != static_cast<std::size_t>(record)) throw LoadError("sequence id out of order", lineno, record);
    if (len == 0) throw LoadError("empty sequence", lineno, record);
    std::vector<Point2> pts;
    pts.reserve(len);
    for (std::size_t t = 0; t < len; ++t) {
      if (!std::getline(is, line))
        throw LoadError("truncated: expected " + std::to_string(len) + " points, got " + std::to_string(t),
                        lineno, record);
      ++lineno;
      auto xy = detail::split_ws(line);
      Point2 p;
      if (xy.size() != 2 || !parse_double(xy[0], p.x) || !parse_double(xy[1], p.y))
        throw LoadError("expected '<x> <y>'", lineno, record);
      if (!(p.x >= 0.0 && p.x <= 1.0 && p.y >= 0.0 && p.y <= 1.0))
        throw LoadError("point outside [0,1]^2", lineno, record);
      pts.push_back(p);
    }
    ds.add(Trajectory2D(std::move(pts)));
    ++record;
  }
  return ds;
}

inline Dataset load_dataset(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path);
  try {
    return read_dataset(is);
  } catch (const LoadError& e) {
    throw e.prefixed(path);
  }
}

}  // namespace vbp

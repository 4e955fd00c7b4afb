// Divergence steps, N-gram statistics, periodicity and sigma diagnostics.
#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <deque>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "vbp/net.hpp"
#include "vbp/pipeline.hpp"
#include "vbp/seqdata.hpp"

namespace vbp {

inline constexpr double kDivergenceThreshold = 0.025;

/// First 1-based step whose mean squared coordinate error exceeds
/// `threshold`, or nullopt if the pair never diverges.
inline std::optional<std::size_t> divergence_step(const Trajectory2D& target, const Trajectory2D& generated,
                                                  double threshold = kDivergenceThreshold) {
  if (target.step_count() != generated.step_count())
    throw std::domain_error("divergence_step: trajectories differ in length");
  for (std::size_t t = 0; t < target.step_count(); ++t) {
    const double dx = target[t].x - generated[t].x, dy = target[t].y - generated[t].y;
    if (0.5 * (dx * dx + dy * dy) > threshold) return t + 1;
  }
  return std::nullopt;
}

struct DivergenceReport {
  std::vector<std::optional<std::size_t>> steps;
  std::vector<std::size_t> lengths;
  double ads = 0.0;
  double threshold = kDivergenceThreshold;
};

/// Mean divergence step; a pair that never diverges counts its full length.
inline DivergenceReport average_divergence_step(const std::vector<std::pair<Trajectory2D, Trajectory2D>>& pairs,
                                                double threshold = kDivergenceThreshold) {
  if (pairs.empty()) throw std::domain_error("average_divergence_step: no pairs");
  DivergenceReport r;
  r.threshold = threshold;
  double acc = 0.0;
  for (const auto& [target, generated] : pairs) {
    auto s = divergence_step(target, generated, threshold);
    r.steps.push_back(s);
    r.lengths.push_back(target.step_count());
    acc += static_cast<double>(s.value_or(target.step_count()));
  }
  r.ads = acc / static_cast<double>(pairs.size());
  return r;
}

// ---------------------------------------------------------------------------
// N-grams over the 3-letter prototype alphabet.

inline std::size_t ngram_support(int order) {
  std::size_t n = 1;
  for (int k = 0; k < order; ++k) n *= kLabelCount;
  return n;
}

/// Base-3 index of a tuple, first symbol most significant.
inline std::size_t ngram_index(const Label* first, int order) {
  std::size_t idx = 0;
  for (int k = 0; k < order; ++k) idx = idx * kLabelCount + static_cast<std::size_t>(first[k]);
  return idx;
}

inline std::string ngram_name(std::size_t index, int order) {
  std::string s(static_cast<std::size_t>(order), 'A');
  for (int k = order - 1; k >= 0; --k) {
    s[static_cast<std::size_t>(k)] = static_cast<char>('A' + index % kLabelCount);
    index /= kLabelCount;
  }
  return s;
}

struct NGramDistribution {
  int order = 3;
  double epsilon = 1e-6;
  std::vector<double> counts;         // 3^order raw window counts
  std::vector<double> probabilities;  // (count + epsilon) / (windows + epsilon * 3^order)
  std::size_t windows = 0;

  double probability(std::string_view tuple) const {
    auto l = labels_from_string(tuple);
    if (static_cast<int>(l.size()) != order) throw std::domain_error("tuple length differs from order");
    return probabilities[ngram_index(l.data(), order)];
  }
};

/// Sliding-window counter; feeding labels one at a time gives the same
/// counts as ngram_distribution on the whole list.
class NGramCounter {
 public:
  explicit NGramCounter(int order) : order_(order), counts_(ngram_support(order), 0.0) {
    if (order < 1) throw std::domain_error("N-gram order must be >= 1");
  }

  void push(Label l) {
    window_.push_back(l);
    if (static_cast<int>(window_.size()) > order_) window_.pop_front();
    if (static_cast<int>(window_.size()) == order_) {
      std::vector<Label> w(window_.begin(), window_.end());
      counts_[ngram_index(w.data(), order_)] += 1.0;
      ++windows_;
    }
  }

  /// Starts a new independent stream; no window spans the boundary.
  void reset_window() { window_.clear(); }

  NGramDistribution finish(double epsilon) const {
    if (windows_ == 0) throw std::domain_error("N-gram distribution needs at least N labels");
    if (!(epsilon > 0.0)) throw std::domain_error("N-gram smoothing epsilon must be positive");
    NGramDistribution d;
    d.order = order_;
    d.epsilon = epsilon;
    d.counts = counts_;
    d.windows = windows_;
    const double denom = static_cast<double>(windows_) + epsilon * static_cast<double>(counts_.size());
    d.probabilities.resize(counts_.size());
    for (std::size_t k = 0; k < counts_.size(); ++k) d.probabilities[k] = (counts_[k] + epsilon) / denom;
    return d;
  }

 private:
  int order_;
  std::vector<double> counts_;
  std::deque<Label> window_;
  std::size_t windows_ = 0;
};

inline NGramDistribution ngram_distribution(const std::vector<Label>& labels, int order = 3, double epsilon = 1e-6) {
  if (order < 1) throw std::domain_error("N-gram order must be >= 1");
  if (labels.size() < static_cast<std::size_t>(order))
    throw std::domain_error("ngram_distribution: fewer than N labels");
  NGramCounter counter(order);
  for (Label l : labels) counter.push(l);
  return counter.finish(epsilon);
}

/// Pools several label streams; windows never cross stream boundaries.
inline NGramDistribution ngram_distribution(const std::vector<std::vector<Label>>& streams, int order,
                                            double epsilon) {
  NGramCounter counter(order);
  for (const auto& s : streams) {
    counter.reset_window();
    for (Label l : s) counter.push(l);
  }
  return counter.finish(epsilon);
}

/// sum_k p_k log(p_k / q_k), natural log.
inline double kl_divergence(const std::vector<double>& p, const std::vector<double>& q) {
  if (p.size() != q.size()) throw std::domain_error("kl_divergence: support mismatch");
  double acc = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    if (p[k] == 0.0) continue;
    if (!(q[k] > 0.0)) throw std::domain_error("kl_divergence: q has no mass where p does");
    acc += p[k] * std::log(p[k] / q[k]);
  }
  return acc;
}

/// KL(p || q) with p the reference (target generator) distribution.
inline double ngram_kl(const NGramDistribution& p, const NGramDistribution& q) {
  if (p.order != q.order || p.probabilities.size() != q.probabilities.size())
    throw std::domain_error("ngram_kl: distributions have different order");
  return kl_divergence(p.probabilities, q.probabilities);
}

// ---------------------------------------------------------------------------
// Periodicity

struct PeriodicityResult {
  std::size_t peak_lag = 0;
  double peak_correlation = 0.0;
  bool constant = false;
  bool aperiodic = false;
};

inline constexpr double kAperiodicBelow = 0.3;

/// Pearson correlation between the series and its lagged copy, averaged over
/// the non-constant coordinates. The dominant peak is searched after the
/// first local minimum so that the short-lag smoothness lobe is skipped.
inline PeriodicityResult periodicity_score(const Trajectory2D& traj, std::size_t max_lag) {
  const std::size_t n = traj.step_count();
  if (max_lag < 1 || n <= 2 * max_lag) throw std::domain_error("periodicity_score: need length > 2 * max_lag");
  std::array<std::vector<double>, 2> series;
  for (const auto& p : traj.points()) {
    series[0].push_back(p.x);
    series[1].push_back(p.y);
  }
  auto lagged_corr = [&](const std::vector<double>& s, std::size_t lag) -> std::optional<double> {
    const std::size_t m = n - lag;
    double ma = 0.0, mb = 0.0;
    for (std::size_t t = 0; t < m; ++t) {
      ma += s[t];
      mb += s[t + lag];
    }
    ma /= m;
    mb /= m;
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t t = 0; t < m; ++t) {
      const double a = s[t] - ma, b = s[t + lag] - mb;
      sab += a * b;
      saa += a * a;
      sbb += b * b;
    }
    if (saa <= 1e-24 || sbb <= 1e-24) return std::nullopt;
    return sab / std::sqrt(saa * sbb);
  };

  std::vector<double> r(max_lag + 1, 0.0);
  bool any = false;
  for (std::size_t lag = 1; lag <= max_lag; ++lag) {
    double acc = 0.0;
    int used = 0;
    for (const auto& s : series) {
      if (auto c = lagged_corr(s, lag)) {
        acc += *c;
        ++used;
      }
    }
    if (used > 0) any = true;
    r[lag] = used > 0 ? acc / used : 0.0;
  }
  PeriodicityResult res;
  if (!any) {
    res.constant = true;
    res.peak_lag = 1;
    res.peak_correlation = 1.0;
    return res;
  }
  std::size_t start = 1;
  while (start < max_lag && r[start + 1] < r[start]) ++start;
  res.peak_lag = start;
  res.peak_correlation = r[start];
  for (std::size_t lag = start; lag <= max_lag; ++lag) {
    if (r[lag] > res.peak_correlation) {
      res.peak_correlation = r[lag];
      res.peak_lag = lag;
    }
  }
  res.aperiodic = res.peak_correlation < kAperiodicBelow;
  return res;
}

// ---------------------------------------------------------------------------
// Sigma statistics

struct SigmaSummary {
  std::vector<int> units;
  std::vector<std::vector<double>> series;  // per selected unit, steps 2..T
  double mean = 0.0;
  double max = 0.0;
};

/// Global indices of the first `count` units of `layer`.
inline std::vector<int> units_in_layer(const NetworkSpec& spec, std::size_t layer, int count) {
  if (layer >= spec.layer_sizes.size()) throw std::domain_error("units_in_layer: no such layer");
  const int n = std::min(count, spec.layer_sizes[layer]);
  std::vector<int> out;
  for (int i = 0; i < n; ++i) out.push_back(spec.layer_offset(layer) + i);
  return out;
}

inline SigmaSummary sigma_statistics(const LatentTrace& trace, const std::vector<int>& units) {
  const long C = trace.sigma.rows(), T = trace.sigma.cols();
  if (T < 2) throw std::domain_error("sigma_statistics: trace has no sampled steps");
  SigmaSummary s;
  s.units = units;
  double acc = 0.0;
  long count = 0;
  s.max = 0.0;
  for (int u : units) {
    if (u < 0 || u >= C) throw std::domain_error("sigma_statistics: unit index " + std::to_string(u) + " out of range");
    std::vector<double> col;
    col.reserve(static_cast<std::size_t>(T - 1));
    for (long t = 1; t < T; ++t) {
      const double v = trace.sigma(u, t);
      col.push_back(v);
      acc += v;
      s.max = std::max(s.max, v);
      ++count;
    }
    s.series.push_back(std::move(col));
  }
  s.mean = count > 0 ? acc / static_cast<double>(count) : 0.0;
  return s;
}

/// Mean sigma over every unit and sampled step.
inline double mean_sigma(const LatentTrace& trace) {
  const long T = trace.sigma.cols();
  if (T < 2) return 0.0;
  return trace.sigma.rightCols(T - 1).mean();
}

}  // namespace vbp

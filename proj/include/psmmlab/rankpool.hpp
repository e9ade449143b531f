#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "psmmlab/error.hpp"
#include "psmmlab/image.hpp"

namespace psmmlab::rankpool {

// Window of consecutive frames that is pooled into one dynamic image.
struct FrameWindow {
  std::vector<Image> frames;
  std::size_t padded = 0;  // trailing frames that repeat the clip's last frame
  std::size_t k() const noexcept { return frames.size(); }
};

// means[i] is the running average of vectorized frames 0..i.
struct PrefixMeans {
  std::vector<std::vector<double>> means;
  std::size_t k() const noexcept { return means.size(); }
  std::size_t dims() const noexcept { return means.empty() ? 0 : means.front().size(); }
};

struct DynamicImage {
  std::vector<double> d;
  double objective_value = 0.0;
  double duality_gap = 0.0;
  int solver_iterations = 0;
  bool converged = false;
};

struct SolverOptions {
  double tol = 1e-6;      // stop once the primal-dual gap is below this
  int max_sweeps = 5000;  // full passes over all pairwise constraints
};

inline PrefixMeans prefix_means(std::span<const Image> frames) {
  require(!frames.empty(), "prefix_means: empty window");
  PrefixMeans out;
  std::vector<double> running(frames.front().size(), 0.0);
  for (std::size_t i = 0; i < frames.size(); ++i) {
    require(frames[i].same_shape(frames.front()), "prefix_means: frames differ in shape");
    for (std::size_t p = 0; p < running.size(); ++p) running[p] += frames[i].pixels[p];
    std::vector<double> mean(running.size());
    for (std::size_t p = 0; p < running.size(); ++p) mean[p] = running[p] / static_cast<double>(i + 1);
    out.means.push_back(std::move(mean));
  }
  return out;
}

// Weight on the pairwise slack sum: 2 / (K (K - 1)).
inline double slack_weight(std::size_t k) {
  require(k >= 2, "rank pooling needs at least two frames");
  return 2.0 / (static_cast<double>(k) * static_cast<double>(k - 1));
}

// 1/2 |d|^2 + w * sum_{i>j} max(0, 1 - d.(V_i - V_j)), slacks at their optimum.
inline double ranksvm_objective(std::span<const double> d, const PrefixMeans& v) {
  require(v.k() >= 2, "ranksvm_objective: needs at least two prefix means");
  require(d.size() == v.dims(), "ranksvm_objective: dimension mismatch");
  const double w = slack_weight(v.k());
  double norm2 = 0.0;
  for (double x : d) norm2 += x * x;
  std::vector<double> proj(v.k(), 0.0);
  for (std::size_t i = 0; i < v.k(); ++i)
    for (std::size_t p = 0; p < d.size(); ++p) proj[i] += d[p] * v.means[i][p];
  double slack = 0.0;
  for (std::size_t i = 1; i < v.k(); ++i)
    for (std::size_t j = 0; j < i; ++j) slack += std::max(0.0, 1.0 - (proj[i] - proj[j]));
  return 0.5 * norm2 + w * slack;
}

// Minimizes the RankSVM objective exactly through its box-constrained dual
//   max_a  sum a_p - 1/2 a'Qa,   0 <= a_p <= w,
// with one variable per ordered pair p = (i > j) and Q the Gram matrix of the
// differences V_i - V_j. Q is formed from the K x K inner products of the
// prefix means, so the per-sweep cost is independent of the pixel count.
// Coordinate ascent runs in fixed order until the duality gap certifies the
// objective to within `tol`.
inline DynamicImage rank_pool_exact(const PrefixMeans& v, const SolverOptions& opt = {}) {
  require(v.k() >= 2, "rank_pool_exact: needs K >= 2");
  require(opt.tol > 0.0, "rank_pool_exact: tol must be positive");
  for (const auto& m : v.means)
    for (double x : m) require(std::isfinite(x), "rank_pool_exact: non-finite frame value");

  const std::size_t K = v.k(), dims = v.dims();
  const double w = slack_weight(K);

  std::vector<double> gram(K * K);
  for (std::size_t a = 0; a < K; ++a)
    for (std::size_t b = 0; b <= a; ++b) {
      double s = 0.0;
      for (std::size_t p = 0; p < dims; ++p) s += v.means[a][p] * v.means[b][p];
      gram[a * K + b] = gram[b * K + a] = s;
    }

  struct Pair {
    std::size_t i, j;
  };
  std::vector<Pair> pairs;
  for (std::size_t i = 1; i < K; ++i)
    for (std::size_t j = 0; j < i; ++j) pairs.push_back({i, j});
  const std::size_t P = pairs.size();
  std::vector<double> Q(P * P);
  for (std::size_t p = 0; p < P; ++p)
    for (std::size_t q = 0; q < P; ++q) {
      const auto [i, j] = pairs[p];
      const auto [k, l] = pairs[q];
      Q[p * P + q] = gram[i * K + k] - gram[i * K + l] - gram[j * K + k] + gram[j * K + l];
    }

  std::vector<double> alpha(P, 0.0), margin(P, 0.0);  // margin = Q alpha
  auto gap_of = [&] {
    double quad = 0.0, lin = 0.0, slack = 0.0;
    for (std::size_t p = 0; p < P; ++p) {
      quad += alpha[p] * margin[p];
      lin += alpha[p];
      slack += std::max(0.0, 1.0 - margin[p]);
    }
    const double primal = 0.5 * quad + w * slack;
    const double dual = lin - 0.5 * quad;
    return primal - dual;
  };

  DynamicImage out;
  double gap = gap_of();
  int sweep = 0;
  while (gap > opt.tol && sweep < opt.max_sweeps) {
    for (std::size_t p = 0; p < P; ++p) {
      const double qpp = Q[p * P + p];
      const double next = qpp > 0.0 ? std::clamp(alpha[p] + (1.0 - margin[p]) / qpp, 0.0, w) : w;
      const double delta = next - alpha[p];
      if (delta == 0.0) continue;
      alpha[p] = next;
      for (std::size_t q = 0; q < P; ++q) margin[q] += delta * Q[q * P + p];
    }
    ++sweep;
    gap = gap_of();
  }

  // d = sum_p alpha_p (V_i - V_j) = sum_i c_i V_i
  std::vector<double> coef(K, 0.0);
  for (std::size_t p = 0; p < P; ++p) {
    coef[pairs[p].i] += alpha[p];
    coef[pairs[p].j] -= alpha[p];
  }
  out.d.assign(dims, 0.0);
  for (std::size_t i = 0; i < K; ++i)
    if (coef[i] != 0.0)
      for (std::size_t p = 0; p < dims; ++p) out.d[p] += coef[i] * v.means[i][p];
  out.objective_value = ranksvm_objective(out.d, v);
  out.duality_gap = std::max(gap, 0.0);
  out.solver_iterations = sweep;
  out.converged = gap <= opt.tol;
  return out;
}

// Window of `k` frames starting at `start`; positions past the end repeat the
// clip's last frame.
inline FrameWindow take_window(const Clip& clip, std::size_t k, std::size_t start) {
  require(!clip.frames.empty(), "empty clip");
  require(k >= 1, "window length must be positive");
  require(start < clip.frames.size(), "frame index " + std::to_string(start) + " out of range for clip of " +
                                          std::to_string(clip.frames.size()) + " frames");
  FrameWindow win;
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t idx = start + i;
    if (idx < clip.frames.size()) {
      win.frames.push_back(clip.frames[idx]);
    } else {
      win.frames.push_back(clip.frames.back());
      ++win.padded;
    }
  }
  return win;
}

inline std::vector<FrameWindow> window_slice(const Clip& clip, std::size_t k, std::size_t stride) {
  require(stride >= 1, "window_slice: stride must be >= 1");
  std::vector<FrameWindow> out;
  for (std::size_t start = 0; start < clip.frames.size(); start += stride) out.push_back(take_window(clip, k, start));
  return out;
}

// Reshapes d to the frame layout and maps each channel onto [0, 1]; a channel
// with zero range becomes 0.5.
inline Image normalize_channels(std::span<const double> d, std::size_t h, std::size_t w, std::size_t c) {
  require(d.size() == h * w * c, "normalize_channels: size mismatch");
  Image img(h, w, c);
  for (std::size_t ch = 0; ch < c; ++ch) {
    double lo = d[ch], hi = d[ch];
    for (std::size_t i = ch; i < d.size(); i += c) {
      lo = std::min(lo, d[i]);
      hi = std::max(hi, d[i]);
    }
    const double range = hi - lo;
    for (std::size_t i = ch; i < d.size(); i += c) img.pixels[i] = range > 0.0 ? (d[i] - lo) / range : 0.5;
  }
  return img;
}

inline DynamicImage pool_window(const FrameWindow& win, const SolverOptions& opt = {}) {
  if (win.k() == 1) {
    // One frame carries no ordering; pooling degenerates to d = 0.
    DynamicImage di;
    di.d.assign(win.frames.front().size(), 0.0);
    di.converged = true;
    return di;
  }
  return rank_pool_exact(prefix_means(win.frames), opt);
}

// Network-ready dynamic image for the window starting at `frame_index`.
inline Image dynamic_image(const Clip& clip, std::size_t k, std::size_t frame_index, const SolverOptions& opt = {}) {
  const FrameWindow win = take_window(clip, k, frame_index);
  const DynamicImage di = pool_window(win, opt);
  const Image& f = win.frames.front();
  return normalize_channels(di.d, f.height, f.width, f.channels);
}

}  // namespace psmmlab::rankpool

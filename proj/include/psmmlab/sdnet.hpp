#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "psmmlab/graph.hpp"
#include "psmmlab/layers.hpp"

namespace psmmlab {

enum class Modality { color, depth, ir };
inline constexpr std::array<Modality, 3> kAllModalities = {Modality::color, Modality::depth, Modality::ir};

inline std::string to_string(Modality m) {
  switch (m) {
    case Modality::color: return "color";
    case Modality::depth: return "depth";
    case Modality::ir: return "ir";
  }
  return "?";
}

inline Modality parse_modality(const std::string& s) {
  if (s == "color" || s == "rgb" || s == "R") return Modality::color;
  if (s == "depth" || s == "D") return Modality::depth;
  if (s == "ir" || s == "I") return Modality::ir;
  throw InputError("unknown modality: " + s);
}

enum class Preset { toy, resnet18 };

inline std::string to_string(Preset p) { return p == Preset::toy ? "toy" : "resnet18"; }
inline Preset parse_preset(const std::string& s) {
  if (s == "toy") return Preset::toy;
  if (s == "resnet18") return Preset::resnet18;
  throw InputError("unknown preset: " + s);
}

using layers::NormMode;

inline std::string to_string(NormMode n) { return n == NormMode::batch ? "batch" : "none"; }
inline NormMode parse_norm(const std::string& s) {
  if (s == "batch") return NormMode::batch;
  if (s == "none") return NormMode::none;
  throw InputError("unknown norm mode: " + s);
}

// Trunk layout shared by every branch. Level 1 is stem + res1, levels 2..4
// are res2..res4, each halving the spatial extent.
struct SDNetConfig {
  Modality modality = Modality::color;
  Preset preset = Preset::toy;
  std::size_t input_side = 32;
  std::size_t in_channels = 3;
  std::array<std::size_t, 4> widths = {4, 8, 16, 32};
  std::size_t blocks_per_stage = 1;
  std::size_t stem_kernel = 3;
  std::size_t stem_stride = 1;
  NormMode norm = NormMode::batch;

  static SDNetConfig make(Preset preset, Modality m = Modality::color, NormMode norm = NormMode::batch) {
    SDNetConfig c;
    c.modality = m;
    c.preset = preset;
    c.norm = norm;
    if (preset == Preset::resnet18) {
      c.input_side = 112;
      c.widths = {64, 128, 256, 512};
      c.blocks_per_stage = 2;
      c.stem_kernel = 7;
      c.stem_stride = 2;
    }
    return c;
  }

  std::size_t feature_width() const { return widths[3]; }

  // Spatial side of X[t] for t = 1..4 (index 0..3).
  std::array<std::size_t, 4> level_sides() const {
    auto conv_out = [](std::size_t s, std::size_t k, std::size_t stride, std::size_t pad) {
      return (s + 2 * pad - k) / stride + 1;
    };
    std::array<std::size_t, 4> out{};
    std::size_t s = conv_out(input_side, stem_kernel, stem_stride, stem_kernel / 2);
    s = conv_out(s, 3, 2, 1);  // max pool
    out[0] = s;
    for (std::size_t t = 1; t < 4; ++t) out[t] = s = conv_out(s, 3, 2, 1);
    return out;
  }
};

// Node ids of one SD-Net evaluation. Index t-1 holds feature level t. xf[0]
// is the elementwise sum of the static and dynamic level-1 features.
struct SdActivations {
  std::array<NodeId, 4> xs{}, xd{}, xf{};
  NodeId gap_static = 0, gap_dynamic = 0, gap_fused = 0, gap_summed = 0;
  NodeId logit_static = 0, logit_dynamic = 0, logit_fused = 0, logit_summed = 0;
};

struct SdLoss {
  NodeId total = 0;
  NodeId static_branch = 0, dynamic_branch = 0, fused_branch = 0, summed = 0;
};

namespace sdnet {

inline std::string level_prefix(const std::string& root, const std::string& branch, int level) {
  return root + "." + branch + "." + std::to_string(level);
}

inline NodeTag tag(const std::string& root, const std::string& branch, int level, std::string role = {}) {
  return {root + "." + branch + ".l" + std::to_string(level), std::move(role), level};
}

inline void add_level(ParameterSet& ps, const std::string& root, const std::string& branch, int level,
                      const SDNetConfig& cfg, std::mt19937_64& rng) {
  const std::string p = level_prefix(root, branch, level);
  if (level == 1) {
    layers::add_conv_bn(ps, p + ".stem", cfg.in_channels, cfg.widths[0], cfg.stem_kernel, cfg.norm, rng);
    layers::add_stage(ps, p, cfg.widths[0], cfg.widths[0], 1, cfg.blocks_per_stage, cfg.norm, rng);
  } else {
    layers::add_stage(ps, p, cfg.widths[level - 2], cfg.widths[level - 1], 2, cfg.blocks_per_stage, cfg.norm, rng);
  }
}

// Module M^t for one branch: stem + max-pool + res1 at level 1, otherwise one
// strided residual stage.
inline NodeId level(Graph& g, const std::string& root, const std::string& branch, int t, NodeId x,
                    const SDNetConfig& cfg) {
  const std::string p = level_prefix(root, branch, t);
  const NodeTag tg = tag(root, branch, t);
  if (t == 1) {
    NodeId h = g.relu(layers::conv_bn(g, p + ".stem", x, cfg.stem_stride, cfg.stem_kernel / 2, cfg.norm, tg), tg);
    h = g.max_pool(h, 3, 2, 1, tg);
    return layers::stage(g, p, h, 1, cfg.blocks_per_stage, cfg.norm, tg);
  }
  return layers::stage(g, p, x, 2, cfg.blocks_per_stage, cfg.norm, tg);
}

inline void add_params(ParameterSet& ps, const std::string& root, const SDNetConfig& cfg, std::mt19937_64& rng) {
  for (int t = 1; t <= 4; ++t) add_level(ps, root, "static", t, cfg, rng);
  for (int t = 1; t <= 4; ++t) add_level(ps, root, "dynamic", t, cfg, rng);
  for (int t = 2; t <= 4; ++t) add_level(ps, root, "fused", t, cfg, rng);
  for (const char* h : {"static", "dynamic", "fused", "sum"})
    layers::add_head(ps, root + "." + h + ".head", cfg.feature_width(), rng);
}

inline NodeId merge_level1(Graph& g, const std::string& root, NodeId xs1, NodeId xd1) {
  return g.add(xs1, xd1, tag(root, "fused", 1, "sd_merge"));
}

// GAP of each branch, the summed-feature vector and the four heads.
inline void heads(Graph& g, const std::string& root, SdActivations& a) {
  a.gap_static = g.global_avg_pool(a.xs[3], tag(root, "static", 4, "gap"));
  a.gap_dynamic = g.global_avg_pool(a.xd[3], tag(root, "dynamic", 4, "gap"));
  a.gap_fused = g.global_avg_pool(a.xf[3], tag(root, "fused", 4, "gap"));
  const NodeId parts[] = {a.gap_static, a.gap_dynamic, a.gap_fused};
  a.gap_summed = g.sum(parts, {root + ".sum", "gap_sum", 4});
  a.logit_static = layers::head(g, root + ".static.head", a.gap_static, {root + ".static.head", "head", 0});
  a.logit_dynamic = layers::head(g, root + ".dynamic.head", a.gap_dynamic, {root + ".dynamic.head", "head", 0});
  a.logit_fused = layers::head(g, root + ".fused.head", a.gap_fused, {root + ".fused.head", "head", 0});
  a.logit_summed = layers::head(g, root + ".sum.head", a.gap_summed, {root + ".sum.head", "head", 0});
}

inline void check_input(const Tensor& img, const SDNetConfig& cfg, const char* what) {
  require(img.rank() == 4 && img.dim(1) == cfg.in_channels && img.dim(2) == cfg.input_side &&
              img.dim(3) == cfg.input_side,
          std::string(what) + " image must be (N," + std::to_string(cfg.in_channels) + "," +
              std::to_string(cfg.input_side) + "," + std::to_string(cfg.input_side) + "), got " +
              to_string(img.shape()));
}

inline SdLoss loss(Graph& g, const std::string& root, const SdActivations& a, const std::vector<double>& labels) {
  SdLoss l;
  l.static_branch = g.bce_loss(a.logit_static, labels, {root + ".loss.static", "loss", 0});
  l.dynamic_branch = g.bce_loss(a.logit_dynamic, labels, {root + ".loss.dynamic", "loss", 0});
  l.fused_branch = g.bce_loss(a.logit_fused, labels, {root + ".loss.fused", "loss", 0});
  l.summed = g.bce_loss(a.logit_summed, labels, {root + ".loss.sum", "loss", 0});
  const NodeId parts[] = {l.static_branch, l.dynamic_branch, l.fused_branch, l.summed};
  l.total = g.sum(parts, {root + ".loss", "loss", 0});
  return l;
}

}  // namespace sdnet

// Single-modality static/dynamic network with four supervised heads.
class SdNet {
 public:
  explicit SdNet(SDNetConfig cfg, std::uint64_t seed = 0, std::string root = {})
      : cfg_(cfg), root_(root.empty() ? "sdnet." + to_string(cfg.modality) : std::move(root)) {
    std::mt19937_64 rng(split_seed(seed, 1));
    sdnet::add_params(params_, root_, cfg_, rng);
  }

  const SDNetConfig& config() const noexcept { return cfg_; }
  const std::string& root() const noexcept { return root_; }
  ParameterSet& parameters() noexcept { return params_; }
  const ParameterSet& parameters() const noexcept { return params_; }

  SdActivations forward(Graph& g, const Tensor& static_img, const Tensor& dynamic_img) const {
    sdnet::check_input(static_img, cfg_, "static");
    sdnet::check_input(dynamic_img, cfg_, "dynamic");
    require(static_img.dim(0) == dynamic_img.dim(0), "static and dynamic batch sizes differ");
    const NodeId s = g.input(static_img, {root_ + ".input.static", "input", 0});
    const NodeId d = g.input(dynamic_img, {root_ + ".input.dynamic", "input", 0});
    SdActivations a;
    a.xs[0] = sdnet::level(g, root_, "static", 1, s, cfg_);
    a.xd[0] = sdnet::level(g, root_, "dynamic", 1, d, cfg_);
    a.xf[0] = sdnet::merge_level1(g, root_, a.xs[0], a.xd[0]);
    for (int t = 2; t <= 4; ++t) {
      a.xs[t - 1] = sdnet::level(g, root_, "static", t, a.xs[t - 2], cfg_);
      a.xd[t - 1] = sdnet::level(g, root_, "dynamic", t, a.xd[t - 2], cfg_);
      a.xf[t - 1] = sdnet::level(g, root_, "fused", t, a.xf[t - 2], cfg_);
    }
    sdnet::heads(g, root_, a);
    return a;
  }

  SdLoss loss(Graph& g, const SdActivations& a, const std::vector<double>& labels) const {
    return sdnet::loss(g, root_, a, labels);
  }

 private:
  SDNetConfig cfg_;
  std::string root_;
  ParameterSet params_;
};

}  // namespace psmmlab

#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "psmmlab/checkpoint.hpp"
#include "psmmlab/sdnet.hpp"

namespace psmmlab {

enum class Variant { sdnet, psmm, psmm_wobf, nhf };

inline std::string to_string(Variant v) {
  switch (v) {
    case Variant::sdnet: return "sdnet";
    case Variant::psmm: return "psmm";
    case Variant::psmm_wobf: return "psmm-wobf";
    case Variant::nhf: return "nhf";
  }
  return "?";
}

inline Variant parse_variant(const std::string& s) {
  if (s == "sdnet") return Variant::sdnet;
  if (s == "psmm") return Variant::psmm;
  if (s == "psmm-wobf" || s == "psmm_wobf") return Variant::psmm_wobf;
  if (s == "nhf") return Variant::nhf;
  throw InputError("unknown variant: " + s);
}

// Canonical (color, depth, ir) order without duplicates.
inline std::vector<Modality> canonical_modalities(std::span<const Modality> ms) {
  std::set<Modality> uniq(ms.begin(), ms.end());
  return {uniq.begin(), uniq.end()};
}

inline std::vector<Modality> parse_modalities(const std::string& csv) {
  std::vector<Modality> out;
  std::stringstream ss(csv);
  std::string tok;
  while (std::getline(ss, tok, ','))
    if (!tok.empty()) out.push_back(parse_modality(tok));
  return canonical_modalities(out);
}

inline std::string join_modalities(std::span<const Modality> ms) {
  std::string out;
  for (std::size_t i = 0; i < ms.size(); ++i) out += (i ? "," : "") + to_string(ms[i]);
  return out;
}

struct PSMMConfig {
  std::vector<Modality> modalities = {Modality::color, Modality::depth, Modality::ir};
  Variant variant = Variant::psmm;
  SDNetConfig trunk = SDNetConfig::make(Preset::toy);
};

struct ModalityInput {
  Tensor static_img;
  Tensor dynamic_img;
};
using Inputs = std::map<Modality, ModalityInput>;

// shared[t-1] holds S^t for t = 2..4; S^1 is identically zero and has no node.
// fused_input[t-1] holds S~^t for t = 1..3.
struct SharedActivations {
  std::array<std::optional<NodeId>, 4> shared{};
  std::array<std::optional<NodeId>, 3> fused_input{};
};

struct PsmmActivations {
  std::map<Modality, SdActivations> sd;                             // psmm, psmm-wobf, sdnet
  std::map<Modality, std::pair<NodeId, NodeId>> level1;             // nhf: (X_s^1, X_d^1)
  SharedActivations shared;
  std::optional<NodeId> gap_shared, whole_features, whole_logit;
  NodeId score_logit = 0;  // logit behind the inference score
};

struct PsmmLoss {
  NodeId total = 0;
  std::vector<std::pair<std::string, NodeId>> components;  // named loss terms
};

namespace psmm {

inline NodeTag shared_tag(int level, std::string role = "shared") { return {"psmm.shared.l" + std::to_string(level), std::move(role), level}; }

// S~^t = sum_k X_s^t + sum_k X_d^t (+ S^t for t >= 2).
inline NodeId forward_feed_fuse(Graph& g, std::span<const NodeId> xs, std::span<const NodeId> xd,
                                std::optional<NodeId> shared, int t) {
  require(t >= 1 && t <= 3, "forward_feed_fuse: level must be 1..3");
  require(t == 1 || shared.has_value(), "forward_feed_fuse: S^t required for t >= 2");
  require(xs.size() == xd.size() && !xs.empty(), "forward_feed_fuse: need static and dynamic features per modality");
  std::vector<NodeId> ops(xs.begin(), xs.end());
  ops.insert(ops.end(), xd.begin(), xd.end());
  if (t >= 2) ops.push_back(*shared);
  return g.sum(ops, shared_tag(t, "fwd_feed"));
}

// (X~_s^t, X~_d^t) = (X_s^t + S^t, X_d^t + S^t); the fused branch is untouched.
inline std::pair<NodeId, NodeId> backward_feed_fuse(Graph& g, NodeId xs, NodeId xd, NodeId shared, int t,
                                                    const std::string& root) {
  require(t == 2 || t == 3, "backward_feed_fuse: level must be 2 or 3");
  return {g.add(xs, shared, {root + ".static.l" + std::to_string(t), "bwd_feed", t}),
          g.add(xd, shared, {root + ".dynamic.l" + std::to_string(t), "bwd_feed", t})};
}

inline std::string shared_prefix(int level) { return "psmm.shared." + std::to_string(level); }

}  // namespace psmm

// PSMM-Net and its ablations. Variant `sdnet` is a plain single-modality
// SD-Net with parameters under `sdnet.<modality>`.
class Network {
 public:
  explicit Network(PSMMConfig cfg, std::uint64_t seed = 0) : cfg_(std::move(cfg)) {
    cfg_.modalities = canonical_modalities(cfg_.modalities);
    require(!cfg_.modalities.empty(), "network needs at least one modality");
    if (cfg_.variant == Variant::sdnet)
      require(cfg_.modalities.size() == 1, "variant sdnet takes exactly one modality");
    std::mt19937_64 rng(split_seed(seed, 1));
    const SDNetConfig& tc = cfg_.trunk;
    switch (cfg_.variant) {
      case Variant::sdnet:
        sdnet::add_params(params_, root(cfg_.modalities[0]), tc, rng);
        break;
      case Variant::psmm:
      case Variant::psmm_wobf:
        for (Modality m : cfg_.modalities) sdnet::add_params(params_, root(m), tc, rng);
        add_shared(rng);
        break;
      case Variant::nhf:
        for (Modality m : cfg_.modalities) {
          sdnet::add_level(params_, root(m), "static", 1, tc, rng);
          sdnet::add_level(params_, root(m), "dynamic", 1, tc, rng);
        }
        add_shared(rng);
        break;
    }
    if (cfg_.variant != Variant::sdnet) layers::add_head(params_, "psmm.whole.head", tc.feature_width(), rng);
  }

  const PSMMConfig& config() const noexcept { return cfg_; }
  ParameterSet& parameters() noexcept { return params_; }
  const ParameterSet& parameters() const noexcept { return params_; }

  std::string root(Modality m) const {
    return (cfg_.variant == Variant::sdnet ? "sdnet." : "psmm.") + to_string(m);
  }

  PsmmActivations forward(Graph& g, const Inputs& inputs) const {
    for (Modality m : cfg_.modalities) {
      auto it = inputs.find(m);
      require(it != inputs.end(), "missing input for modality " + to_string(m));
      sdnet::check_input(it->second.static_img, cfg_.trunk, "static");
      sdnet::check_input(it->second.dynamic_img, cfg_.trunk, "dynamic");
      require(it->second.static_img.dim(0) == batch_size(inputs) && it->second.dynamic_img.dim(0) == batch_size(inputs),
              "all inputs must share one batch size");
    }
    std::map<Modality, std::pair<NodeId, NodeId>> in;
    for (Modality m : cfg_.modalities) {
      const auto& mi = inputs.at(m);
      in[m] = {g.input(mi.static_img, {root(m) + ".input.static", "input", 0}),
               g.input(mi.dynamic_img, {root(m) + ".input.dynamic", "input", 0})};
    }
    switch (cfg_.variant) {
      case Variant::sdnet: return forward_sdnet(g, in);
      case Variant::nhf: return forward_nhf(g, in);
      default: return forward_psmm(g, in);
    }
  }

  // Whole-network BCE plus the four SD-Net terms of every modality.
  PsmmLoss loss(Graph& g, const PsmmActivations& a, const std::vector<double>& labels) const {
    PsmmLoss l;
    std::vector<NodeId> terms;
    if (a.whole_logit) {
      const NodeId w = g.bce_loss(*a.whole_logit, labels, {"psmm.loss.whole", "loss", 0});
      l.components.emplace_back("whole", w);
      terms.push_back(w);
    }
    for (const auto& [m, acts] : a.sd) {
      const SdLoss s = sdnet::loss(g, root(m), acts, labels);
      const std::string name = to_string(m);
      l.components.emplace_back(name, s.total);
      l.components.emplace_back(name + ".static", s.static_branch);
      l.components.emplace_back(name + ".dynamic", s.dynamic_branch);
      l.components.emplace_back(name + ".fused", s.fused_branch);
      l.components.emplace_back(name + ".sum", s.summed);
      terms.push_back(s.total);
    }
    l.total = g.sum(terms, {"psmm.loss", "loss", 0});
    return l;
  }

  checkpoint::Metadata metadata() const {
    return {{"variant", to_string(cfg_.variant)},
            {"preset", to_string(cfg_.trunk.preset)},
            {"modalities", join_modalities(cfg_.modalities)},
            {"norm", to_string(cfg_.trunk.norm)}};
  }

  static PSMMConfig config_from_metadata(const checkpoint::Metadata& meta) {
    for (const char* key : {"variant", "preset", "modalities", "norm"})
      if (!meta.contains(key)) throw IncompatibleError(std::string("checkpoint metadata lacks ") + key);
    PSMMConfig c;
    c.variant = parse_variant(meta.at("variant"));
    c.modalities = parse_modalities(meta.at("modalities"));
    c.trunk = SDNetConfig::make(parse_preset(meta.at("preset")), c.modalities.front(), parse_norm(meta.at("norm")));
    return c;
  }

 private:
  static std::size_t batch_size(const Inputs& inputs) { return inputs.begin()->second.static_img.dim(0); }

  void add_shared(std::mt19937_64& rng) {
    const SDNetConfig& tc = cfg_.trunk;
    for (int t = 2; t <= 4; ++t)
      layers::add_stage(params_, psmm::shared_prefix(t), tc.widths[t - 2], tc.widths[t - 1], 2, tc.blocks_per_stage,
                        tc.norm, rng);
  }

  NodeId shared_level(Graph& g, int t, NodeId x) const {
    return layers::stage(g, psmm::shared_prefix(t), x, 2, cfg_.trunk.blocks_per_stage, cfg_.trunk.norm,
                         psmm::shared_tag(t));
  }

  PsmmActivations forward_sdnet(Graph& g, const std::map<Modality, std::pair<NodeId, NodeId>>& in) const {
    const Modality m = cfg_.modalities[0];
    const std::string r = root(m);
    const SDNetConfig& tc = cfg_.trunk;
    SdActivations a;
    a.xs[0] = sdnet::level(g, r, "static", 1, in.at(m).first, tc);
    a.xd[0] = sdnet::level(g, r, "dynamic", 1, in.at(m).second, tc);
    a.xf[0] = sdnet::merge_level1(g, r, a.xs[0], a.xd[0]);
    for (int t = 2; t <= 4; ++t) {
      a.xs[t - 1] = sdnet::level(g, r, "static", t, a.xs[t - 2], tc);
      a.xd[t - 1] = sdnet::level(g, r, "dynamic", t, a.xd[t - 2], tc);
      a.xf[t - 1] = sdnet::level(g, r, "fused", t, a.xf[t - 2], tc);
    }
    sdnet::heads(g, r, a);
    PsmmActivations out;
    out.score_logit = a.logit_summed;
    out.sd[m] = a;
    return out;
  }

  PsmmActivations forward_psmm(Graph& g, const std::map<Modality, std::pair<NodeId, NodeId>>& in) const {
    const SDNetConfig& tc = cfg_.trunk;
    const bool feedback = cfg_.variant == Variant::psmm;
    PsmmActivations out;
    // Inputs to M^t of the static/dynamic trunks (after feedback when enabled).
    std::map<Modality, std::pair<NodeId, NodeId>> next;

    for (Modality m : cfg_.modalities) {
      SdActivations& a = out.sd[m];
      a.xs[0] = sdnet::level(g, root(m), "static", 1, in.at(m).first, tc);
      a.xd[0] = sdnet::level(g, root(m), "dynamic", 1, in.at(m).second, tc);
      a.xf[0] = sdnet::merge_level1(g, root(m), a.xs[0], a.xd[0]);
      next[m] = {a.xs[0], a.xd[0]};
    }
    out.shared.fused_input[0] = fuse_forward(g, out, 1, std::nullopt);

    for (int t = 2; t <= 4; ++t) {
      const NodeId s = shared_level(g, t, *out.shared.fused_input[t - 2]);
      out.shared.shared[t - 1] = s;
      for (Modality m : cfg_.modalities) {
        SdActivations& a = out.sd[m];
        a.xs[t - 1] = sdnet::level(g, root(m), "static", t, next[m].first, tc);
        a.xd[t - 1] = sdnet::level(g, root(m), "dynamic", t, next[m].second, tc);
        a.xf[t - 1] = sdnet::level(g, root(m), "fused", t, a.xf[t - 2], tc);
        next[m] = {a.xs[t - 1], a.xd[t - 1]};
      }
      if (t <= 3) {
        out.shared.fused_input[t - 1] = fuse_forward(g, out, t, s);
        if (feedback)
          for (Modality m : cfg_.modalities) next[m] = psmm::backward_feed_fuse(g, next[m].first, next[m].second, s, t, root(m));
      }
      // S^t feeds M^{t+1} of both trunks through `next`.
    }

    std::vector<NodeId> whole;
    for (Modality m : cfg_.modalities) {
      sdnet::heads(g, root(m), out.sd[m]);
      whole.push_back(out.sd[m].gap_summed);
    }
    out.gap_shared = g.global_avg_pool(*out.shared.shared[3], psmm::shared_tag(4, "gap"));
    whole.push_back(*out.gap_shared);
    finish_whole(g, out, whole);
    return out;
  }

  PsmmActivations forward_nhf(Graph& g, const std::map<Modality, std::pair<NodeId, NodeId>>& in) const {
    const SDNetConfig& tc = cfg_.trunk;
    PsmmActivations out;
    std::vector<NodeId> xs, xd;
    for (Modality m : cfg_.modalities) {
      const NodeId s = sdnet::level(g, root(m), "static", 1, in.at(m).first, tc);
      const NodeId d = sdnet::level(g, root(m), "dynamic", 1, in.at(m).second, tc);
      out.level1[m] = {s, d};
      xs.push_back(s);
      xd.push_back(d);
    }
    std::vector<NodeId> ops = xs;
    ops.insert(ops.end(), xd.begin(), xd.end());
    NodeId x = g.sum(ops, psmm::shared_tag(1, "nhf_merge"));
    out.shared.fused_input[0] = x;
    for (int t = 2; t <= 4; ++t) {
      x = shared_level(g, t, x);
      out.shared.shared[t - 1] = x;
    }
    out.gap_shared = g.global_avg_pool(x, psmm::shared_tag(4, "gap"));
    const NodeId parts[] = {*out.gap_shared};
    finish_whole(g, out, parts);
    return out;
  }

  NodeId fuse_forward(Graph& g, const PsmmActivations& out, int t, std::optional<NodeId> s) const {
    std::vector<NodeId> xs, xd;
    for (Modality m : cfg_.modalities) {
      xs.push_back(out.sd.at(m).xs[t - 1]);
      xd.push_back(out.sd.at(m).xd[t - 1]);
    }
    return psmm::forward_feed_fuse(g, xs, xd, s, t);
  }

  void finish_whole(Graph& g, PsmmActivations& out, std::span<const NodeId> features) const {
    out.whole_features = g.sum(features, {"psmm.whole", "whole_features", 0});
    out.whole_logit = layers::head(g, "psmm.whole.head", *out.whole_features, {"psmm.whole.head", "head", 0});
    out.score_logit = *out.whole_logit;
  }

  PSMMConfig cfg_;
  ParameterSet params_;
};

}  // namespace psmmlab

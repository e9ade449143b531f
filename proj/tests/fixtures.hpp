#pragma once

#include <unistd.h>

#include <filesystem>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "psmmlab/gradcheck.hpp"
#include "psmmlab/psmm.hpp"

namespace fixture {

using namespace psmmlab;

inline Tensor random_images(std::size_t n, std::size_t side, std::mt19937_64& rng) {
  std::normal_distribution<double> nd;
  Tensor t({n, 3, side, side});
  for (double& x : t.data()) x = nd(rng);
  return t;
}

inline Inputs random_inputs(const PSMMConfig& cfg, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Inputs in;
  for (Modality m : canonical_modalities(cfg.modalities))
    in[m] = {random_images(n, cfg.trunk.input_side, rng), random_images(n, cfg.trunk.input_side, rng)};
  return in;
}

inline PSMMConfig toy(Variant v) {
  PSMMConfig c;
  c.variant = v;
  if (v == Variant::sdnet) c.modalities = {Modality::color};
  return c;
}

// Central-difference check of the full training loss with batch statistics
// frozen (no running-stat update), so the loss is a pure function.
inline GradcheckResult gradcheck_variant(Variant v, std::size_t probes, std::uint64_t seed) {
  Network net(toy(v), seed);
  const Inputs in = random_inputs(net.config(), 3, seed + 1);
  const std::vector<double> labels = {1, 0, 1};
  auto loss = [&](bool with_backward) {
    Graph g(net.parameters(), Mode::train, false);
    const auto a = net.forward(g, in);
    const auto l = net.loss(g, a, labels);
    if (with_backward) g.backward(l.total);
    return g.value(l.total)[0];
  };
  GradcheckOptions opt;
  opt.samples = probes;
  opt.seed = seed;
  return finite_difference_check(net.parameters(), loss, opt);
}

// Per-process so ctest -j runs of the same suite do not share files.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("psmmlab_" + name + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

inline std::set<int> levels_with_role(const Graph& g, const std::string& role) {
  std::set<int> out;
  for (NodeId i = 0; i < g.size(); ++i)
    if (g.node(i).tag.role == role) out.insert(g.node(i).tag.level);
  return out;
}

inline std::size_t count_role(const Graph& g, const std::string& role, int level) {
  std::size_t n = 0;
  for (NodeId i = 0; i < g.size(); ++i)
    if (g.node(i).tag.role == role && g.node(i).tag.level == level) ++n;
  return n;
}

inline bool scope_contains(const Node& n, const std::string& needle) {
  return n.tag.scope.find(needle) != std::string::npos;
}

}  // namespace fixture

#pragma once

#include <random>
#include <string>

#include "psmmlab/graph.hpp"
#include "psmmlab/parameters.hpp"

// ResNet building blocks on top of Graph. Each `add_*` registers parameters
// under a prefix; the matching function without the prefix emits the nodes.
namespace psmmlab::layers {

enum class NormMode { batch, none };

inline void add_conv_bn(ParameterSet& ps, const std::string& prefix, std::size_t in, std::size_t out,
                        std::size_t kernel, NormMode norm, std::mt19937_64& rng) {
  ps.add(prefix + ".weight", he_normal({out, in, kernel, kernel}, in * kernel * kernel, rng));
  if (norm == NormMode::batch) {
    ps.add(prefix + ".bn.gamma", Tensor({out}, 1.0));
    ps.add(prefix + ".bn.beta", Tensor({out}, 0.0));
    ps.add(prefix + ".bn.running_mean", Tensor({out}, 0.0), false);
    ps.add(prefix + ".bn.running_var", Tensor({out}, 1.0), false);
  }
}

inline NodeId conv_bn(Graph& g, const std::string& prefix, NodeId x, std::size_t stride, std::size_t pad,
                      NormMode norm, const NodeTag& tag) {
  NodeId y = g.conv2d(x, g.parameter(prefix + ".weight"), stride, pad, tag);
  if (norm == NormMode::batch)
    y = g.batch_norm(y, g.parameter(prefix + ".bn.gamma"), g.parameter(prefix + ".bn.beta"), prefix + ".bn", 1e-5,
                     tag);
  return y;
}

// Two 3x3 convolutions with a shortcut; a 1x1 projection is used when the
// stride or width changes.
inline void add_basic_block(ParameterSet& ps, const std::string& prefix, std::size_t in, std::size_t out,
                            std::size_t stride, NormMode norm, std::mt19937_64& rng) {
  add_conv_bn(ps, prefix + ".conv1", in, out, 3, norm, rng);
  add_conv_bn(ps, prefix + ".conv2", out, out, 3, norm, rng);
  if (stride != 1 || in != out) add_conv_bn(ps, prefix + ".down", in, out, 1, norm, rng);
}

inline NodeId basic_block(Graph& g, const std::string& prefix, NodeId x, std::size_t stride, NormMode norm,
                          const NodeTag& tag) {
  NodeId h = g.relu(conv_bn(g, prefix + ".conv1", x, stride, 1, norm, tag), tag);
  h = conv_bn(g, prefix + ".conv2", h, 1, 1, norm, tag);
  NodeId shortcut = x;
  if (g.parameters().contains(prefix + ".down.weight")) shortcut = conv_bn(g, prefix + ".down", x, stride, 0, norm, tag);
  return g.relu(g.add(h, shortcut, tag), tag);
}

// Sequence of `blocks` basic blocks; only the first may stride.
inline void add_stage(ParameterSet& ps, const std::string& prefix, std::size_t in, std::size_t out,
                      std::size_t stride, std::size_t blocks, NormMode norm, std::mt19937_64& rng) {
  for (std::size_t b = 0; b < blocks; ++b)
    add_basic_block(ps, prefix + ".block" + std::to_string(b), b == 0 ? in : out, out, b == 0 ? stride : 1, norm, rng);
}

inline NodeId stage(Graph& g, const std::string& prefix, NodeId x, std::size_t stride, std::size_t blocks,
                    NormMode norm, const NodeTag& tag) {
  for (std::size_t b = 0; b < blocks; ++b)
    x = basic_block(g, prefix + ".block" + std::to_string(b), x, b == 0 ? stride : 1, norm, tag);
  return x;
}

// Single-logit classifier: dense(features -> 1).
inline void add_head(ParameterSet& ps, const std::string& prefix, std::size_t features, std::mt19937_64& rng) {
  ps.add(prefix + ".weight", uniform_init({features, 1}, 1.0 / std::sqrt(static_cast<double>(features)), rng));
  ps.add(prefix + ".bias", Tensor({1}, 0.0));
}

inline NodeId head(Graph& g, const std::string& prefix, NodeId features, const NodeTag& tag) {
  return g.dense(features, g.parameter(prefix + ".weight"), g.parameter(prefix + ".bias"), tag);
}

}  // namespace psmmlab::layers

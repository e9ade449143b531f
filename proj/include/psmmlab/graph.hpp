#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "psmmlab/error.hpp"
#include "psmmlab/parallel.hpp"
#include "psmmlab/parameters.hpp"
#include "psmmlab/tensor.hpp"

namespace psmmlab {

enum class OpKind {
  input,
  parameter,
  conv2d,
  batch_norm,
  relu,
  max_pool,
  add,
  sum,
  global_avg_pool,
  dense,
  bce_loss,
  reduce_sum,
};

inline const char* op_name(OpKind k) {
  switch (k) {
    case OpKind::input: return "input";
    case OpKind::parameter: return "parameter";
    case OpKind::conv2d: return "conv2d";
    case OpKind::batch_norm: return "batch_norm";
    case OpKind::relu: return "relu";
    case OpKind::max_pool: return "max_pool";
    case OpKind::add: return "add";
    case OpKind::sum: return "sum";
    case OpKind::global_avg_pool: return "global_avg_pool";
    case OpKind::dense: return "dense";
    case OpKind::bce_loss: return "bce_loss";
    case OpKind::reduce_sum: return "reduce_sum";
  }
  return "?";
}

// Where a node sits in a network. `scope` is a dotted path such as
// "psmm.color.static.l2"; `role` marks fusion points ("fwd_feed", "bwd_feed",
// "sd_merge"), heads and losses so graph structure can be inspected.
struct NodeTag {
  std::string scope;
  std::string role;
  int level = 0;
};

enum class Mode { train, eval };

using NodeId = std::size_t;

class Graph;

struct Node {
  OpKind kind = OpKind::input;
  std::vector<NodeId> inputs;
  Tensor value;  // unused for parameter nodes
  std::vector<double> grad;
  std::size_t param_index = std::numeric_limits<std::size_t>::max();
  NodeTag tag;
  bool requires_grad = false;  // only consulted for input nodes
  std::function<void(Graph&, NodeId)> backward;
};

// Define-by-run tape. Every op appends one node whose inputs are earlier
// nodes, so insertion order is a valid topological order.
class Graph {
 public:
  explicit Graph(ParameterSet& params, Mode mode = Mode::train, bool update_running_stats = true)
      : params_(&params), mode_(mode), update_running_(update_running_stats) {}

  Mode mode() const noexcept { return mode_; }
  std::size_t size() const noexcept { return nodes_.size(); }
  const Node& node(NodeId id) const { return nodes_.at(id); }
  ParameterSet& parameters() { return *params_; }

  const Tensor& value(NodeId id) const {
    const Node& n = nodes_.at(id);
    return n.kind == OpKind::parameter ? params_->at(n.param_index).value : n.value;
  }

  std::span<const double> grad(NodeId id) const {
    const Node& n = nodes_.at(id);
    return n.kind == OpKind::parameter ? params_->at(n.param_index).value.grad() : std::span<const double>(n.grad);
  }

  NodeId input(Tensor t, NodeTag tag = {}, bool requires_grad = false) {
    Node n;
    n.kind = OpKind::input;
    n.value = std::move(t);
    n.tag = std::move(tag);
    n.requires_grad = requires_grad;
    return push(std::move(n));
  }

  NodeId parameter(const std::string& name) {
    if (auto it = param_nodes_.find(name); it != param_nodes_.end()) return it->second;
    Node n;
    n.kind = OpKind::parameter;
    n.param_index = params_->index_of(name);
    require(params_->at(n.param_index).trainable, "not a trainable parameter: " + name);
    n.tag.scope = name;
    NodeId id = push(std::move(n));
    param_nodes_.emplace(name, id);
    return id;
  }

  NodeId conv2d(NodeId xid, NodeId wid, std::size_t stride, std::size_t pad, NodeTag tag = {}) {
    const Tensor& x = value(xid);
    const Tensor& w = value(wid);
    require(x.rank() == 4, "conv2d: input must be NCHW, got " + to_string(x.shape()));
    require(w.rank() == 4 && w.dim(2) == w.dim(3), "conv2d: weight must be OIKK, got " + to_string(w.shape()));
    require(stride >= 1, "conv2d: stride must be positive");
    require(x.dim(1) == w.dim(1), "conv2d: input channels " + std::to_string(x.dim(1)) +
                                      " do not match weight input channels " + std::to_string(w.dim(1)));
    const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::size_t O = w.dim(0), K = w.dim(2);
    require(H + 2 * pad >= K && W + 2 * pad >= K,
            "conv2d: kernel " + std::to_string(K) + " does not fit padded input " + to_string(x.shape()));
    const std::size_t OH = (H + 2 * pad - K) / stride + 1, OW = (W + 2 * pad - K) / stride + 1;

    Tensor y({N, O, OH, OW});
    const auto xd = x.data();
    const auto wd = w.data();
    auto yd = y.data();
    parallel_for(N, [&](std::size_t n) {
      for (std::size_t o = 0; o < O; ++o) {
        double* yp = yd.data() + (n * O + o) * OH * OW;
        for (std::size_t c = 0; c < C; ++c) {
          const double* xp = xd.data() + (n * C + c) * H * W;
          for (std::size_t kh = 0; kh < K; ++kh) {
            for (std::size_t kw = 0; kw < K; ++kw) {
              const double wv = wd[((o * C + c) * K + kh) * K + kw];
              if (wv == 0.0) continue;
              const auto [ow_lo, ow_hi] = valid_range(OW, W, kw, stride, pad);
              for (std::size_t oh = 0; oh < OH; ++oh) {
                const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * stride + kh) - static_cast<std::ptrdiff_t>(pad);
                if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(H)) continue;
                const double* xr = xp + ih * W;
                double* yr = yp + oh * OW;
                for (std::size_t ow = ow_lo; ow < ow_hi; ++ow) yr[ow] += wv * xr[ow * stride + kw - pad];
              }
            }
          }
        }
      }
    });

    Node node;
    node.kind = OpKind::conv2d;
    node.inputs = {xid, wid};
    node.value = std::move(y);
    node.tag = std::move(tag);
    node.backward = [stride, pad](Graph& g, NodeId self) {
      const Node& nd = g.nodes_[self];
      const Tensor& x = g.value(nd.inputs[0]);
      const Tensor& w = g.value(nd.inputs[1]);
      const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
      const std::size_t O = w.dim(0), K = w.dim(2);
      const std::size_t OH = nd.value.dim(2), OW = nd.value.dim(3);
      const auto xd = x.data();
      const auto wd = w.data();
      const std::vector<double>& dy = nd.grad;
      const bool need_dx = g.wants_grad(nd.inputs[0]);
      const bool need_dw = g.wants_grad(nd.inputs[1]);
      std::span<double> dx = need_dx ? g.grad_buffer(nd.inputs[0]) : std::span<double>();
      std::span<double> dw = need_dw ? g.grad_buffer(nd.inputs[1]) : std::span<double>();

      // Per-sample weight-gradient partials are reduced in sample order, so the
      // result is identical for any worker count.
      const std::size_t chunk = std::max<std::size_t>(1, worker_count());
      std::vector<std::vector<double>> partial(need_dw ? std::min(chunk, N) : 0, std::vector<double>(w.size()));
      for (std::size_t base = 0; base < N; base += chunk) {
        const std::size_t count = std::min(chunk, N - base);
        parallel_for(count, [&](std::size_t j) {
          const std::size_t n = base + j;
          double* pw = need_dw ? partial[j].data() : nullptr;
          if (pw) std::fill(pw, pw + w.size(), 0.0);
          for (std::size_t o = 0; o < O; ++o) {
            const double* gp = dy.data() + (n * O + o) * OH * OW;
            for (std::size_t c = 0; c < C; ++c) {
              const double* xp = xd.data() + (n * C + c) * H * W;
              double* dxp = need_dx ? dx.data() + (n * C + c) * H * W : nullptr;
              for (std::size_t kh = 0; kh < K; ++kh) {
                for (std::size_t kw = 0; kw < K; ++kw) {
                  const std::size_t widx = ((o * C + c) * K + kh) * K + kw;
                  const double wv = wd[widx];
                  const auto [ow_lo, ow_hi] = valid_range(OW, W, kw, stride, pad);
                  double acc = 0.0;
                  for (std::size_t oh = 0; oh < OH; ++oh) {
                    const std::ptrdiff_t ih =
                        static_cast<std::ptrdiff_t>(oh * stride + kh) - static_cast<std::ptrdiff_t>(pad);
                    if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(H)) continue;
                    const double* xr = xp + ih * W;
                    const double* gr = gp + oh * OW;
                    if (dxp) {
                      double* dxr = dxp + ih * W;
                      for (std::size_t ow = ow_lo; ow < ow_hi; ++ow) dxr[ow * stride + kw - pad] += wv * gr[ow];
                    }
                    if (pw)
                      for (std::size_t ow = ow_lo; ow < ow_hi; ++ow) acc += xr[ow * stride + kw - pad] * gr[ow];
                  }
                  if (pw) pw[widx] += acc;
                }
              }
            }
          }
        });
        if (need_dw)
          for (std::size_t j = 0; j < count; ++j)
            for (std::size_t i = 0; i < dw.size(); ++i) dw[i] += partial[j][i];
      }
    };
    return push(std::move(node));
  }

  // Running statistics live in the parameter set as non-trainable tensors
  // `<stats>.running_mean` / `<stats>.running_var` (EMA, momentum 0.9).
  NodeId batch_norm(NodeId xid, NodeId gid, NodeId bid, const std::string& stats, double eps = 1e-5,
                    NodeTag tag = {}) {
    const Tensor& x = value(xid);
    const Tensor& gamma = value(gid);
    const Tensor& beta = value(bid);
    require(x.rank() == 4, "batch_norm: input must be NCHW, got " + to_string(x.shape()));
    require(x.dim(0) > 0, "batch_norm: zero batch size");
    require(eps > 0.0, "batch_norm: epsilon must be positive");
    const std::size_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
    require(gamma.size() == C && beta.size() == C,
            "batch_norm: gamma/beta length must equal channel count " + std::to_string(C));
    Tensor& rmean = params_->get(stats + ".running_mean").value;
    Tensor& rvar = params_->get(stats + ".running_var").value;
    require(rmean.size() == C && rvar.size() == C, "batch_norm: running statistics length mismatch");

    const double M = static_cast<double>(N * HW);
    std::vector<double> mean(C), inv_std(C);
    if (mode_ == Mode::train) {
      for (std::size_t c = 0; c < C; ++c) {
        double s = 0.0;
        for (std::size_t n = 0; n < N; ++n)
          for (std::size_t i = 0; i < HW; ++i) s += x[(n * C + c) * HW + i];
        const double mu = s / M;
        double v = 0.0;
        for (std::size_t n = 0; n < N; ++n)
          for (std::size_t i = 0; i < HW; ++i) {
            const double d = x[(n * C + c) * HW + i] - mu;
            v += d * d;
          }
        v /= M;
        mean[c] = mu;
        inv_std[c] = 1.0 / std::sqrt(v + eps);
        if (update_running_) {
          rmean[c] = kMomentum * rmean[c] + (1.0 - kMomentum) * mu;
          rvar[c] = kMomentum * rvar[c] + (1.0 - kMomentum) * v;
        }
      }
    } else {
      for (std::size_t c = 0; c < C; ++c) {
        mean[c] = rmean[c];
        inv_std[c] = 1.0 / std::sqrt(rvar[c] + eps);
      }
    }

    Tensor y(x.shape());
    Tensor xhat(x.shape());
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t i = 0; i < HW; ++i) {
          const std::size_t k = (n * C + c) * HW + i;
          xhat[k] = (x[k] - mean[c]) * inv_std[c];
          y[k] = gamma[c] * xhat[k] + beta[c];
        }

    Node node;
    node.kind = OpKind::batch_norm;
    node.inputs = {xid, gid, bid};
    node.value = std::move(y);
    node.tag = std::move(tag);
    const bool batch_stats = mode_ == Mode::train;
    node.backward = [xhat = std::move(xhat), inv_std = std::move(inv_std), batch_stats](Graph& g, NodeId self) {
      const Node& nd = g.nodes_[self];
      const Tensor& gamma = g.value(nd.inputs[1]);
      const std::size_t N = xhat.dim(0), C = xhat.dim(1), HW = xhat.dim(2) * xhat.dim(3);
      const double M = static_cast<double>(N * HW);
      const std::vector<double>& dy = nd.grad;
      std::vector<double> sum_dy(C, 0.0), sum_dy_xhat(C, 0.0);
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c)
          for (std::size_t i = 0; i < HW; ++i) {
            const std::size_t k = (n * C + c) * HW + i;
            sum_dy[c] += dy[k];
            sum_dy_xhat[c] += dy[k] * xhat[k];
          }
      if (g.wants_grad(nd.inputs[1])) {
        auto dg = g.grad_buffer(nd.inputs[1]);
        for (std::size_t c = 0; c < C; ++c) dg[c] += sum_dy_xhat[c];
      }
      if (g.wants_grad(nd.inputs[2])) {
        auto db = g.grad_buffer(nd.inputs[2]);
        for (std::size_t c = 0; c < C; ++c) db[c] += sum_dy[c];
      }
      if (g.wants_grad(nd.inputs[0])) {
        auto dx = g.grad_buffer(nd.inputs[0]);
        for (std::size_t n = 0; n < N; ++n)
          for (std::size_t c = 0; c < C; ++c) {
            const double scale = gamma[c] * inv_std[c];
            for (std::size_t i = 0; i < HW; ++i) {
              const std::size_t k = (n * C + c) * HW + i;
              if (batch_stats)
                dx[k] += scale * (dy[k] - sum_dy[c] / M - xhat[k] * sum_dy_xhat[c] / M);
              else
                dx[k] += scale * dy[k];
            }
          }
      }
    };
    return push(std::move(node));
  }

  // Subgradient at 0 is 0.
  NodeId relu(NodeId xid, NodeTag tag = {}) {
    const Tensor& x = value(xid);
    Tensor y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] < 0.0 ? 0.0 : x[i];  // NaN passes through
    Node node;
    node.kind = OpKind::relu;
    node.inputs = {xid};
    node.value = std::move(y);
    node.tag = std::move(tag);
    node.backward = [](Graph& g, NodeId self) {
      const Node& nd = g.nodes_[self];
      if (!g.wants_grad(nd.inputs[0])) return;
      const Tensor& x = g.value(nd.inputs[0]);
      auto dx = g.grad_buffer(nd.inputs[0]);
      for (std::size_t i = 0; i < x.size(); ++i)
        if (x[i] > 0.0) dx[i] += nd.grad[i];
    };
    return push(std::move(node));
  }

  // Padding cells never win the max.
  NodeId max_pool(NodeId xid, std::size_t kernel, std::size_t stride, std::size_t pad, NodeTag tag = {}) {
    const Tensor& x = value(xid);
    require(x.rank() == 4, "max_pool: input must be NCHW, got " + to_string(x.shape()));
    require(kernel >= 1 && stride >= 1 && pad < kernel, "max_pool: invalid window");
    const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    require(H + 2 * pad >= kernel && W + 2 * pad >= kernel, "max_pool: window does not fit input");
    const std::size_t OH = (H + 2 * pad - kernel) / stride + 1, OW = (W + 2 * pad - kernel) / stride + 1;
    Tensor y({N, C, OH, OW});
    std::vector<std::size_t> argmax(y.size());
    for (std::size_t nc = 0; nc < N * C; ++nc)
      for (std::size_t oh = 0; oh < OH; ++oh)
        for (std::size_t ow = 0; ow < OW; ++ow) {
          double best = -std::numeric_limits<double>::infinity();
          std::size_t best_i = 0;
          for (std::size_t kh = 0; kh < kernel; ++kh) {
            const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * stride + kh) - static_cast<std::ptrdiff_t>(pad);
            if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(H)) continue;
            for (std::size_t kw = 0; kw < kernel; ++kw) {
              const std::ptrdiff_t iw =
                  static_cast<std::ptrdiff_t>(ow * stride + kw) - static_cast<std::ptrdiff_t>(pad);
              if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(W)) continue;
              const std::size_t k = (nc * H + ih) * W + iw;
              if (x[k] > best) {
                best = x[k];
                best_i = k;
              }
            }
          }
          const std::size_t o = (nc * OH + oh) * OW + ow;
          y[o] = best;
          argmax[o] = best_i;
        }
    Node node;
    node.kind = OpKind::max_pool;
    node.inputs = {xid};
    node.value = std::move(y);
    node.tag = std::move(tag);
    node.backward = [argmax = std::move(argmax)](Graph& g, NodeId self) {
      const Node& nd = g.nodes_[self];
      if (!g.wants_grad(nd.inputs[0])) return;
      auto dx = g.grad_buffer(nd.inputs[0]);
      for (std::size_t o = 0; o < argmax.size(); ++o) dx[argmax[o]] += nd.grad[o];
    };
    return push(std::move(node));
  }

  NodeId add(NodeId a, NodeId b, NodeTag tag = {}) {
    const NodeId ids[] = {a, b};
    return sum(ids, std::move(tag), OpKind::add);
  }

  // Elementwise sum of equally shaped operands, accumulated left to right.
  NodeId sum(std::span<const NodeId> ids, NodeTag tag = {}, OpKind kind = OpKind::sum) {
    require(!ids.empty(), "sum: no operands");
    const Tensor& first = value(ids[0]);
    Tensor y = Tensor(first.shape(), std::vector<double>(first.data().begin(), first.data().end()));
    for (std::size_t k = 1; k < ids.size(); ++k) {
      const Tensor& t = value(ids[k]);
      require_same_shape(first, t, kind == OpKind::add ? "residual_add" : "sum");
      for (std::size_t i = 0; i < y.size(); ++i) y[i] += t[i];
    }
    Node node;
    node.kind = kind;
    node.inputs.assign(ids.begin(), ids.end());
    node.value = std::move(y);
    node.tag = std::move(tag);
    node.backward = [](Graph& g, NodeId self) {
      const Node& nd = g.nodes_[self];
      for (NodeId in : nd.inputs) {
        if (!g.wants_grad(in)) continue;
        auto d = g.grad_buffer(in);
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += nd.grad[i];
      }
    };
    return push(std::move(node));
  }

  NodeId global_avg_pool(NodeId xid, NodeTag tag = {}) {
    const Tensor& x = value(xid);
    require(x.rank() == 4, "global_avg_pool: input must be NCHW, got " + to_string(x.shape()));
    const std::size_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
    Tensor y({N, C});
    for (std::size_t nc = 0; nc < N * C; ++nc) {
      double s = 0.0;
      for (std::size_t i = 0; i < HW; ++i) s += x[nc * HW + i];
      y[nc] = s / static_cast<double>(HW);
    }
    Node node;
    node.kind = OpKind::global_avg_pool;
    node.inputs = {xid};
    node.value = std::move(y);
    node.tag = std::move(tag);
    node.backward = [HW](Graph& g, NodeId self) {
      const Node& nd = g.nodes_[self];
      if (!g.wants_grad(nd.inputs[0])) return;
      auto dx = g.grad_buffer(nd.inputs[0]);
      const double inv = 1.0 / static_cast<double>(HW);
      for (std::size_t nc = 0; nc < nd.grad.size(); ++nc)
        for (std::size_t i = 0; i < HW; ++i) dx[nc * HW + i] += nd.grad[nc] * inv;
    };
    return push(std::move(node));
  }

  // x (N,F) times weight (F,G) plus bias (G).
  NodeId dense(NodeId xid, NodeId wid, NodeId bid, NodeTag tag = {}) {
    const Tensor& x = value(xid);
    const Tensor& w = value(wid);
    const Tensor& b = value(bid);
    require(x.rank() == 2 && w.rank() == 2, "dense: expected x (N,F) and weight (F,G)");
    require(x.dim(1) == w.dim(0), "dense: feature size " + std::to_string(x.dim(1)) +
                                      " does not match weight rows " + std::to_string(w.dim(0)));
    require(b.size() == w.dim(1), "dense: bias length must equal output size");
    const std::size_t N = x.dim(0), F = x.dim(1), G = w.dim(1);
    Tensor y({N, G});
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t j = 0; j < G; ++j) {
        double s = b[j];
        for (std::size_t f = 0; f < F; ++f) s += x[n * F + f] * w[f * G + j];
        y[n * G + j] = s;
      }
    Node node;
    node.kind = OpKind::dense;
    node.inputs = {xid, wid, bid};
    node.value = std::move(y);
    node.tag = std::move(tag);
    node.backward = [](Graph& g, NodeId self) {
      const Node& nd = g.nodes_[self];
      const Tensor& x = g.value(nd.inputs[0]);
      const Tensor& w = g.value(nd.inputs[1]);
      const std::size_t N = x.dim(0), F = x.dim(1), G = w.dim(1);
      const std::vector<double>& dy = nd.grad;
      if (g.wants_grad(nd.inputs[0])) {
        auto dx = g.grad_buffer(nd.inputs[0]);
        for (std::size_t n = 0; n < N; ++n)
          for (std::size_t f = 0; f < F; ++f) {
            double s = 0.0;
            for (std::size_t j = 0; j < G; ++j) s += dy[n * G + j] * w[f * G + j];
            dx[n * F + f] += s;
          }
      }
      if (g.wants_grad(nd.inputs[1])) {
        auto dw = g.grad_buffer(nd.inputs[1]);
        for (std::size_t f = 0; f < F; ++f)
          for (std::size_t j = 0; j < G; ++j) {
            double s = 0.0;
            for (std::size_t n = 0; n < N; ++n) s += x[n * F + f] * dy[n * G + j];
            dw[f * G + j] += s;
          }
      }
      if (g.wants_grad(nd.inputs[2])) {
        auto db = g.grad_buffer(nd.inputs[2]);
        for (std::size_t j = 0; j < G; ++j) {
          double s = 0.0;
          for (std::size_t n = 0; n < N; ++n) s += dy[n * G + j];
          db[j] += s;
        }
      }
    };
    return push(std::move(node));
  }

  // Mean sigmoid binary cross-entropy over the batch, in the stable form
  // max(z,0) - z*y + log(1 + exp(-|z|)).
  NodeId bce_loss(NodeId logit_id, const std::vector<double>& labels, NodeTag tag = {}) {
    const Tensor& z = value(logit_id);
    require(z.size() == labels.size(), "bce_loss: " + std::to_string(z.size()) + " logits but " +
                                           std::to_string(labels.size()) + " labels");
    for (double y : labels) require(y == 0.0 || y == 1.0, "bce_loss: labels must be 0 or 1");
    double total = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i) total += stable_bce(z[i], labels[i]);
    Node node;
    node.kind = OpKind::bce_loss;
    node.inputs = {logit_id};
    node.value = Tensor::scalar(total / static_cast<double>(labels.size()));
    node.tag = std::move(tag);
    node.backward = [labels](Graph& g, NodeId self) {
      const Node& nd = g.nodes_[self];
      if (!g.wants_grad(nd.inputs[0])) return;
      const Tensor& z = g.value(nd.inputs[0]);
      auto dz = g.grad_buffer(nd.inputs[0]);
      const double scale = nd.grad[0] / static_cast<double>(labels.size());
      for (std::size_t i = 0; i < labels.size(); ++i) dz[i] += scale * (sigmoid(z[i]) - labels[i]);
    };
    return push(std::move(node));
  }

  // Scalar sum_i w_i * x_i; unit weights when `weights` is empty.
  NodeId reduce_sum(NodeId xid, std::vector<double> weights = {}, NodeTag tag = {}) {
    const Tensor& x = value(xid);
    if (weights.empty()) weights.assign(x.size(), 1.0);
    require(weights.size() == x.size(), "reduce_sum: weight count does not match input size");
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += weights[i] * x[i];
    Node node;
    node.kind = OpKind::reduce_sum;
    node.inputs = {xid};
    node.value = Tensor::scalar(s);
    node.tag = std::move(tag);
    node.backward = [weights = std::move(weights)](Graph& g, NodeId self) {
      const Node& nd = g.nodes_[self];
      if (!g.wants_grad(nd.inputs[0])) return;
      auto dx = g.grad_buffer(nd.inputs[0]);
      for (std::size_t i = 0; i < weights.size(); ++i) dx[i] += nd.grad[0] * weights[i];
    };
    return push(std::move(node));
  }

  // Accumulates d(loss)/d(param) into every reachable trainable parameter's
  // gradient slot (callers zero them first). Node gradients stay readable
  // through grad(id) afterwards.
  void backward(NodeId loss) {
    require(loss < nodes_.size(), "backward: unknown node");
    require(value(loss).size() == 1, "backward: loss must be scalar, got shape " + to_string(value(loss).shape()));
    for (auto& n : nodes_) n.grad.clear();
    live_ = reachable_from(loss);
    grad_buffer(loss)[0] += 1.0;
    for (NodeId id = loss + 1; id-- > 0;) {
      if (!live_[id]) continue;
      Node& n = nodes_[id];
      if (n.backward && !n.grad.empty()) n.backward(*this, id);
    }
    live_.clear();
  }

  // All nodes that `id` depends on, including itself.
  std::vector<bool> ancestors(NodeId id) const {
    std::vector<bool> mark(nodes_.size(), false);
    mark.at(id) = true;
    for (NodeId k = id + 1; k-- > 0;) {
      if (!mark[k]) continue;
      for (NodeId in : nodes_[k].inputs) mark[in] = true;
    }
    return mark;
  }

  static double sigmoid(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
  }

  static double stable_bce(double z, double y) {
    return std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
  }

 private:
  static constexpr double kMomentum = 0.9;

  NodeId push(Node n) {
    for (NodeId in : n.inputs) require(in < nodes_.size(), "graph inputs must reference earlier nodes");
    nodes_.push_back(std::move(n));
    return nodes_.size() - 1;
  }

  static std::pair<std::size_t, std::size_t> valid_range(std::size_t OW, std::size_t W, std::size_t kw,
                                                         std::size_t stride, std::size_t pad) {
    // ow such that 0 <= ow*stride + kw - pad < W
    std::size_t lo = 0;
    if (kw < pad) lo = (pad - kw + stride - 1) / stride;
    std::size_t hi = 0;
    if (W + pad > kw) hi = std::min(OW, (W + pad - kw - 1) / stride + 1);
    return {lo, std::max(lo, hi)};
  }

  std::vector<bool> reachable_from(NodeId loss) const { return ancestors(loss); }

  bool wants_grad(NodeId id) const {
    const Node& n = nodes_[id];
    return (n.kind != OpKind::input || n.requires_grad) && (live_.empty() || live_[id]);
  }

  std::span<double> grad_buffer(NodeId id) {
    Node& n = nodes_[id];
    if (n.kind == OpKind::parameter) {
      Tensor& p = params_->at(n.param_index).value;
      p.ensure_grad();
      return p.grad();
    }
    if (n.grad.empty()) n.grad.assign(value(id).size(), 0.0);
    return n.grad;
  }

  ParameterSet* params_;
  Mode mode_;
  bool update_running_;
  std::vector<Node> nodes_;
  std::unordered_map<std::string, NodeId> param_nodes_;
  std::vector<bool> live_;
};

}  // namespace psmmlab

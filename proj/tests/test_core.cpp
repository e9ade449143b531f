#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>

#include "psmmlab/checkpoint.hpp"
#include "psmmlab/gradcheck.hpp"
#include "psmmlab/graph.hpp"
#include "psmmlab/optimizer.hpp"
#include "psmmlab/psmm.hpp"

using namespace psmmlab;

namespace {

Tensor random_tensor(Shape s, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  Tensor t(std::move(s));
  for (double& x : t.data()) x = nd(rng);
  return t;
}

std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("psmmlab_core_" + name);
  std::filesystem::remove_all(p);
  return p;
}

}  // namespace

TEST(Tensor, RejectsZeroExtentAndSizeMismatch) {
  EXPECT_THROW(Tensor({2, 0, 3}), InputError);
  EXPECT_THROW(Tensor({2, 2}, std::vector<double>(3, 0.0)), InputError);
  Tensor t({2, 3}, 1.5);
  EXPECT_EQ(t.size(), 6u);
  EXPECT_EQ(t.rank(), 2u);
}

TEST(Graph, ConvIsLinearInInput) {
  ParameterSet ps;
  ps.add("w", random_tensor({3, 2, 3, 3}, 1));
  const Tensor a = random_tensor({2, 2, 5, 5}, 2), b = random_tensor({2, 2, 5, 5}, 3);
  const double alpha = 0.7, beta = -1.3;
  Tensor mix(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) mix[i] = alpha * a[i] + beta * b[i];
  Graph g(ps);
  const NodeId w = g.parameter("w");
  const NodeId ya = g.conv2d(g.input(a), w, 2, 1), yb = g.conv2d(g.input(b), w, 2, 1), ym = g.conv2d(g.input(mix), w, 2, 1);
  ASSERT_EQ(g.value(ym).shape(), (Shape{2, 3, 3, 3}));
  for (std::size_t i = 0; i < g.value(ym).size(); ++i)
    EXPECT_NEAR(g.value(ym)[i], alpha * g.value(ya)[i] + beta * g.value(yb)[i], 1e-12);
}

TEST(Graph, ConvMatchesDirectSum) {
  ParameterSet ps;
  const Tensor w = random_tensor({2, 1, 3, 3}, 4);
  ps.add("w", w);
  const Tensor x = random_tensor({1, 1, 4, 4}, 5);
  Graph g(ps);
  const NodeId y = g.conv2d(g.input(x), g.parameter("w"), 1, 1);
  for (std::size_t o = 0; o < 2; ++o)
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) {
        double s = 0.0;
        for (int u = 0; u < 3; ++u)
          for (int v = 0; v < 3; ++v) {
            const int yy = i + u - 1, xx = j + v - 1;
            if (yy >= 0 && yy < 4 && xx >= 0 && xx < 4) s += w.at(o, 0, u, v) * x.at(0, 0, yy, xx);
          }
        EXPECT_NEAR(g.value(y).at(0, o, i, j), s, 1e-12);
      }
}

TEST(Graph, BceIsStableForHugeLogits) {
  ParameterSet ps;
  Graph g(ps);
  const NodeId z = g.input(Tensor({4}, std::vector<double>{1e6, -1e6, 1e6, -1e6}), {}, true);
  const NodeId l = g.bce_loss(z, {1, 0, 0, 1});
  // Correct predictions cost 0, wrong ones cost |z|.
  EXPECT_DOUBLE_EQ(g.value(l)[0], (0 + 0 + 1e6 + 1e6) / 4.0);
  g.backward(l);
  const auto dz = g.grad(z);
  EXPECT_DOUBLE_EQ(dz[0], 0.0);
  EXPECT_DOUBLE_EQ(dz[1], 0.0);
  EXPECT_DOUBLE_EQ(dz[2], 0.25);
  EXPECT_DOUBLE_EQ(dz[3], -0.25);
  for (double v : dz) EXPECT_TRUE(std::isfinite(v));
}

TEST(Graph, BceRejectsLabelMismatch) {
  ParameterSet ps;
  Graph g(ps);
  const NodeId z = g.input(Tensor({2}, 0.0));
  EXPECT_THROW(g.bce_loss(z, {1}), InputError);
  EXPECT_THROW(g.bce_loss(z, {1, 0.5}), InputError);
}

TEST(Graph, ReluSubgradientAtZeroIsZero) {
  ParameterSet ps;
  Graph g(ps);
  const NodeId x = g.input(Tensor({3}, std::vector<double>{-1.0, 0.0, 2.0}), {}, true);
  const NodeId y = g.relu(x);
  g.backward(g.reduce_sum(y));
  EXPECT_EQ(g.value(y)[0], 0.0);
  EXPECT_EQ(g.value(y)[2], 2.0);
  EXPECT_EQ(g.grad(x)[0], 0.0);
  EXPECT_EQ(g.grad(x)[1], 0.0);
  EXPECT_EQ(g.grad(x)[2], 1.0);
}

TEST(Graph, BackwardRejectsNonScalarLoss) {
  ParameterSet ps;
  Graph g(ps);
  const NodeId x = g.input(Tensor({2}, 1.0), {}, true);
  EXPECT_THROW(g.backward(x), InputError);
}

TEST(Graph, AddRejectsShapeMismatch) {
  ParameterSet ps;
  Graph g(ps);
  EXPECT_THROW(g.add(g.input(Tensor({1, 2, 3, 3})), g.input(Tensor({1, 2, 2, 2}))), InputError);
}

TEST(Graph, BatchNormTrainNormalizesAndUpdatesRunningStats) {
  ParameterSet ps;
  ps.add("g", Tensor({1}, 1.0));
  ps.add("b", Tensor({1}, 0.0));
  ps.add("bn.running_mean", Tensor({1}, 0.0), false);
  ps.add("bn.running_var", Tensor({1}, 1.0), false);
  Graph g(ps, Mode::train, true);
  const Tensor x({2, 1, 1, 2}, std::vector<double>{1, 2, 3, 4});
  const NodeId y = g.batch_norm(g.input(x), g.parameter("g"), g.parameter("b"), "bn", 1e-5);
  double mean = 0.0, var = 0.0;
  for (double v : g.value(y).data()) mean += v / 4;
  for (double v : g.value(y).data()) var += (v - mean) * (v - mean) / 4;
  EXPECT_NEAR(mean, 0.0, 1e-12);
  EXPECT_NEAR(var, 1.25 / (1.25 + 1e-5), 1e-12);
  // EMA with momentum 0.9 toward batch mean 2.5 and biased variance 1.25.
  EXPECT_NEAR(ps.get("bn.running_mean").value[0], 0.25, 1e-12);
  EXPECT_NEAR(ps.get("bn.running_var").value[0], 0.9 + 0.125, 1e-12);
}

TEST(Graph, ParallelConvIsBitIdentical) {
  ParameterSet ps;
  ps.add("w", random_tensor({4, 3, 3, 3}, 6));
  const Tensor x = random_tensor({5, 3, 6, 6}, 7);
  auto run = [&] {
    ps.zero_grad();
    Graph g(ps);
    const NodeId y = g.conv2d(g.input(x), g.parameter("w"), 1, 1);
    g.backward(g.reduce_sum(y));
    return std::make_pair(g.value(y), std::vector<double>(ps.get("w").value.grad().begin(), ps.get("w").value.grad().end()));
  };
  setenv("PSMMLAB_THREADS", "1", 1);
  const auto one = run();
  setenv("PSMMLAB_THREADS", "4", 1);
  const auto four = run();
  unsetenv("PSMMLAB_THREADS");
  EXPECT_TRUE(one.first == four.first);
  EXPECT_EQ(one.second, four.second);
}

TEST(Adam, FirstStepMovesByLearningRateTimesSign) {
  ParameterSet ps;
  Tensor& w = ps.add("w", Tensor({4}, std::vector<double>{1.0, -2.0, 0.5, 3.0}));
  const std::vector<double> grads = {0.3, -7.0, 1e-3, -1e-2};
  for (std::size_t i = 0; i < 4; ++i) w.grad()[i] = grads[i];
  AdamConfig cfg;
  cfg.lr = 0.1;
  Adam adam(cfg);
  adam.step(ps);
  const std::vector<double> start = {1.0, -2.0, 0.5, 3.0};
  for (std::size_t i = 0; i < 4; ++i) {
    const double sign = grads[i] > 0 ? 1.0 : -1.0;
    // |m_hat| / (sqrt(v_hat) + eps) = |g| / (|g| + eps)
    EXPECT_NEAR(w[i], start[i] - 0.1 * sign * std::abs(grads[i]) / (std::abs(grads[i]) + 1e-8), 1e-15);
    EXPECT_NEAR(w[i], start[i] - 0.1 * sign, 1e-6);
  }
}

TEST(Adam, StepDecaySchedule) {
  Adam adam;
  adam.set_epoch(0);
  EXPECT_DOUBLE_EQ(adam.learning_rate(), 0.1);
  adam.set_epoch(14);
  EXPECT_DOUBLE_EQ(adam.learning_rate(), 0.1);
  adam.set_epoch(15);
  EXPECT_NEAR(adam.learning_rate(), 0.01, 1e-15);
  adam.set_epoch(20);
  EXPECT_NEAR(adam.learning_rate(), 0.001, 1e-15);
  adam.set_epoch(24);
  EXPECT_NEAR(adam.learning_rate(), 0.001, 1e-15);
}

TEST(Adam, FrozenParametersAreUntouched) {
  ParameterSet ps;
  ps.add("frozen", Tensor({2}, 5.0), false);
  Adam adam;
  adam.step(ps);
  EXPECT_EQ(ps.get("frozen").value[0], 5.0);
}

TEST(Parameters, DuplicateNameRejected) {
  ParameterSet ps;
  ps.add("a", Tensor({1}));
  EXPECT_THROW(ps.add("a", Tensor({1})), InputError);
  EXPECT_THROW(ps.get("missing"), InputError);
}

TEST(Parameters, SplitSeedSeparatesStreams) {
  EXPECT_NE(split_seed(0, 0), split_seed(0, 1));
  EXPECT_NE(split_seed(0, 1), split_seed(1, 1));
  EXPECT_EQ(split_seed(7, 3), split_seed(7, 3));
}

TEST(Checkpoint, RoundTripPreservesFloat32Values) {
  const auto dir = temp_dir("roundtrip");
  PSMMConfig cfg;
  cfg.modalities = {Modality::depth};
  cfg.variant = Variant::sdnet;
  Network a(cfg, 11), b(cfg, 12);
  checkpoint::save(dir, a.parameters(), a.metadata());
  const auto meta = checkpoint::load(dir, b.parameters());
  EXPECT_EQ(meta.at("variant"), "sdnet");
  EXPECT_EQ(meta.at("modalities"), "depth");
  for (std::size_t i = 0; i < a.parameters().size(); ++i) {
    const auto& pa = a.parameters().at(i).value;
    const auto& pb = b.parameters().at(i).value;
    for (std::size_t k = 0; k < pa.size(); ++k) EXPECT_EQ(pb[k], static_cast<double>(static_cast<float>(pa[k])));
  }
  // Saving the loaded copy reproduces the same bytes.
  const auto dir2 = temp_dir("roundtrip2");
  checkpoint::save(dir2, b.parameters(), a.metadata());
  auto slurp = [](const std::filesystem::path& p) {
    std::ifstream f(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  };
  EXPECT_EQ(slurp(dir / "weights.bin"), slurp(dir2 / "weights.bin"));
  EXPECT_EQ(slurp(dir / "index.txt"), slurp(dir2 / "index.txt"));
}

TEST(Checkpoint, IncompatibleModelRejected) {
  const auto dir = temp_dir("incompatible");
  PSMMConfig nhf;
  nhf.variant = Variant::nhf;
  Network a(nhf, 1);
  checkpoint::save(dir, a.parameters(), a.metadata());
  PSMMConfig psmm;
  Network b(psmm, 1);
  EXPECT_THROW(checkpoint::load(dir, b.parameters()), IncompatibleError);
  EXPECT_THROW(checkpoint::load(temp_dir("missing"), b.parameters()), InputError);
}

TEST(Checkpoint, MetadataRoundTripsConfig) {
  PSMMConfig cfg;
  cfg.variant = Variant::psmm_wobf;
  cfg.modalities = {Modality::ir, Modality::color};
  Network net(cfg, 0);
  const PSMMConfig back = Network::config_from_metadata(net.metadata());
  EXPECT_EQ(back.variant, Variant::psmm_wobf);
  EXPECT_EQ(back.modalities, (std::vector<Modality>{Modality::color, Modality::ir}));
  EXPECT_THROW(Network::config_from_metadata({{"variant", "psmm"}}), IncompatibleError);
}

TEST(Gradcheck, ShrinksStepAcrossReluKink) {
  ParameterSet ps;
  ps.add("w", Tensor({1}, 3e-6));  // central step 1e-5 would straddle the kink at 0
  auto loss = [&](bool with_backward) {
    Graph g(ps);
    const NodeId l = g.reduce_sum(g.relu(g.parameter("w")));
    if (with_backward) g.backward(l);
    return g.value(l)[0];
  };
  GradcheckOptions opt;
  opt.samples = 1;
  const auto res = finite_difference_check(ps, loss, opt);
  ASSERT_EQ(res.probes.size(), 1u);
  EXPECT_EQ(res.probes[0].analytic, 1.0);
  EXPECT_NEAR(res.probes[0].numeric, 1.0, 1e-6);
  EXPECT_LT(res.probes[0].step, 3e-6);
  opt.min_step = opt.step;
  EXPECT_NEAR(finite_difference_check(ps, loss, opt).probes[0].numeric, 0.65, 1e-9);
}

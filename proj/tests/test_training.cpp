#include <gtest/gtest.h>

#include <limits>

#include "fixtures.hpp"
#include "psmmlab/training.hpp"

using namespace psmmlab;

namespace {

double overfit(Variant v, std::size_t steps, double lr) {
  Network net(fixture::toy(v), 0);
  dataset::Batch batch;
  batch.inputs = fixture::random_inputs(net.config(), 32, 5);
  for (std::size_t i = 0; i < 32; ++i) batch.labels.push_back(static_cast<double>(i % 2));
  AdamConfig cfg;
  cfg.lr = lr;
  cfg.decay_epochs = {};
  Adam adam(cfg);
  double last = std::numeric_limits<double>::infinity();
  for (std::size_t s = 0; s < steps; ++s) last = training::train_step(net, adam, batch).at("total");
  return last;
}

dataset::Manifest whole_catalog(const std::filesystem::path& root) {
  dataset::Manifest m;
  for (const auto& r : dataset::scan_catalog(root)) m.push_back(dataset::to_row(r, dataset::Split::train));
  return m;
}

}  // namespace

TEST(Overfit, SdNetMemorizesRandomBatch) { EXPECT_LT(overfit(Variant::sdnet, 200, 0.01), 0.05); }

TEST(Overfit, PsmmMemorizesRandomBatch) { EXPECT_LT(overfit(Variant::psmm, 300, 0.01), 0.2); }

TEST(TrainStep, NonFiniteLossAborts) {
  Network net(fixture::toy(Variant::sdnet), 0);
  dataset::Batch batch;
  batch.inputs = fixture::random_inputs(net.config(), 2, 1);
  batch.inputs.at(Modality::color).static_img[0] = std::numeric_limits<double>::quiet_NaN();
  batch.labels = {0, 1};
  Adam adam;
  EXPECT_THROW(training::train_step(net, adam, batch), NumericalError);
}

class SyntheticTraining : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = fixture::scratch_dir("training_synth");
    dataset::SynthSpec spec;
    spec.subjects_per_ethnicity = 1;
    spec.frames_per_clip = 4;
    spec.side = 16;
    dataset::generate_synthetic(root_, spec);
  }
  static dataset::LoaderOptions opts(bool augment) {
    dataset::LoaderOptions o;
    o.k = 3;
    o.side = 32;
    o.augment = augment;
    return o;
  }
  static inline std::filesystem::path root_;
};

TEST_F(SyntheticTraining, SameSeedGivesIdenticalParameters) {
  auto run = [&] {
    Network net(fixture::toy(Variant::nhf), 4);
    dataset::BatchLoader loader(root_, whole_catalog(root_), net.config().modalities, opts(true));
    training::TrainOptions o;
    o.epochs = 2;
    o.batch = 4;
    o.seed = 4;
    training::train(net, loader, o);
    std::vector<double> flat;
    for (const auto& p : net.parameters()) flat.insert(flat.end(), p.value.data().begin(), p.value.data().end());
    return flat;
  };
  EXPECT_EQ(run(), run());
}

TEST_F(SyntheticTraining, EpochLogCarriesEveryLossTerm) {
  Network net(fixture::toy(Variant::psmm), 0);
  dataset::BatchLoader loader(root_, whole_catalog(root_), net.config().modalities, opts(false));
  training::TrainOptions o;
  o.epochs = 3;
  o.batch = 6;
  o.max_steps = 4;
  std::ostringstream log;
  const auto res = training::train(net, loader, o, &log);
  EXPECT_EQ(res.steps, 4u);
  EXPECT_EQ(res.epochs.size(), 2u);  // 12 samples / batch 6 = 2 steps per epoch
  const std::string text = log.str();
  for (const char* key : {"epoch=1", "loss.total=", "loss.whole=", "loss.color=", "loss.depth.static=",
                          "loss.ir.dynamic=", "loss.color.fused=", "loss.ir.sum="})
    EXPECT_NE(text.find(key), std::string::npos) << key;
}

TEST_F(SyntheticTraining, VideoScoresAreProbabilities) {
  Network net(fixture::toy(Variant::sdnet), 0);
  dataset::BatchLoader loader(root_, whole_catalog(root_), net.config().modalities, opts(false));
  const auto scores = training::video_scores(net, loader, 2);
  ASSERT_EQ(scores.size(), loader.size());
  for (double s : scores) {
    EXPECT_GE(s, 0.0);
    EXPECT_LE(s, 1.0);
  }
  EXPECT_THROW(training::video_scores(net, loader, 0), InputError);
}

TEST_F(SyntheticTraining, VideoScoreAveragesWindows) {
  Network net(fixture::toy(Variant::sdnet), 2);
  dataset::BatchLoader loader(root_, whole_catalog(root_), net.config().modalities, opts(false));
  const auto scores = training::video_scores(net, loader, 3);  // windows start at frames 0 and 3
  const std::vector<std::size_t> idx = {0};
  double expect = 0.0;
  for (std::size_t f : {0u, 3u}) {
    const std::vector<std::size_t> frames = {f};
    const auto b = loader.load_at(idx, frames, 0);
    Graph g(net.parameters(), Mode::eval, false);
    expect += Graph::sigmoid(g.value(net.forward(g, b.inputs).score_logit)[0]) / 2.0;
  }
  EXPECT_NEAR(scores[0], expect, 1e-15);
}

#include <gtest/gtest.h>

#include <functional>
#include <random>
#include <sstream>

#include "oracles.hpp"
#include "psmmlab/metrics.hpp"

using namespace psmmlab;
using namespace psmmlab::metrics;

namespace {

std::vector<ScoredSample> make(const std::vector<double>& bona, const std::vector<double>& attack,
                               const std::string& pai = "print") {
  std::vector<ScoredSample> s;
  for (double b : bona) s.push_back({b, 1, "real", "1_1", "x/real_1/color"});
  for (double a : attack) s.push_back({a, 0, pai, "1_1", "x/" + pai + "_1/color"});
  return s;
}

EvalReport row(const std::string& sub, double apcer, double bpcer, double acer) {
  EvalReport r;
  r.sub_protocol = sub;
  r.rates = {apcer / 100, bpcer / 100, acer / 100};
  return r;
}

// Calls f on every labelled multiset of size 2..8 over the alphabet that
// contains both classes.
template <typename F>
void for_each_multiset(F&& f) {
  const std::vector<double> alphabet = {0.1, 0.3, 0.5, 0.7, 0.9};
  // Count vectors over (value, label) pairs with total size n.
  std::vector<int> counts(2 * alphabet.size(), 0);
  std::function<void(std::size_t, int)> rec = [&](std::size_t slot, int left) {
    if (slot == counts.size()) {
      std::vector<ScoredSample> s;
      int nb = 0, na = 0;
      for (std::size_t i = 0; i < counts.size(); ++i)
        for (int c = 0; c < counts[i]; ++c) {
          const int label = static_cast<int>(i % 2);
          (label ? nb : na)++;
          s.push_back({alphabet[i / 2], label, label ? "real" : "print", "1_1", ""});
        }
      if (nb > 0 && na > 0) f(s);
      return;
    }
    for (int c = 0; c <= left; ++c) {
      counts[slot] = c;
      rec(slot + 1, left - c);
    }
    counts[slot] = 0;
  };
  rec(0, 8);
}

}  // namespace

TEST(ErrorRates, AllCorrectGivesZero) {
  const auto r = apcer_bpcer_acer(make({0.9, 0.8}, {0.1, 0.2}), 0.5);
  EXPECT_EQ(r.apcer, 0.0);
  EXPECT_EQ(r.bpcer, 0.0);
  EXPECT_EQ(r.acer, 0.0);
}

TEST(ErrorRates, HalfOfAttacksAccepted) {
  const auto r = apcer_bpcer_acer(make({0.9, 0.8}, {0.3, 0.6}), 0.5);
  EXPECT_DOUBLE_EQ(r.apcer, 0.5);
  EXPECT_DOUBLE_EQ(r.bpcer, 0.0);
  EXPECT_DOUBLE_EQ(r.acer, 0.25);
}

TEST(ErrorRates, ThresholdBoundaryAcceptsTies) {
  const auto r = apcer_bpcer_acer(make({0.5}, {0.5}), 0.5);
  EXPECT_EQ(r.apcer, 1.0);
  EXPECT_EQ(r.bpcer, 0.0);
}

TEST(ErrorRates, AcerIsMeanOfPublishedRates) { EXPECT_NEAR(100 * acer_from(0.149, 0.103), 12.6, 1e-9); }

TEST(ErrorRates, WorstInstrument) {
  auto s = make({0.9, 0.9}, {0.8, 0.1, 0.1, 0.1}, "print");
  for (double a : {0.7, 0.2}) s.push_back({a, 0, "replay", "1_1", ""});
  const auto pooled = apcer_bpcer_acer(s, 0.5);
  const auto worst = apcer_bpcer_acer(s, 0.5, true);
  EXPECT_DOUBLE_EQ(pooled.apcer, 2.0 / 6.0);
  EXPECT_DOUBLE_EQ(worst.apcer, 0.5);
}

TEST(ErrorRates, RejectsDegenerateInput) {
  EXPECT_THROW(apcer_bpcer_acer(make({0.9}, {}), 0.5), InputError);
  EXPECT_THROW(apcer_bpcer_acer(make({}, {0.1}), 0.5), InputError);
  EXPECT_THROW(apcer_bpcer_acer(make({std::nan("")}, {0.1}), 0.5), InputError);
}

TEST(ErrorRates, MonotoneInThreshold) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<double> b(40), a(60);
  for (double& x : b) x = u(rng);
  for (double& x : a) x = u(rng);
  const auto s = make(b, a);
  double prev_apcer = 2, prev_bpcer = -1;
  for (double thr = 0.0; thr <= 1.0; thr += 0.01) {
    const auto r = apcer_bpcer_acer(s, thr);
    EXPECT_LE(r.apcer, prev_apcer);
    EXPECT_GE(r.bpcer, prev_bpcer);
    prev_apcer = r.apcer;
    prev_bpcer = r.bpcer;
  }
}

TEST(ErrorRates, InvariantUnderMonotoneRescaling) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-3, 3);
  std::vector<double> b(20), a(30);
  for (double& x : b) x = u(rng);
  for (double& x : a) x = u(rng);
  auto s = make(b, a);
  auto t = s;
  for (auto& x : t) x.score = 1.0 / (1.0 + std::exp(-2.0 * x.score));
  const double thr = 0.4;
  const auto r1 = apcer_bpcer_acer(s, thr), r2 = apcer_bpcer_acer(t, 1.0 / (1.0 + std::exp(-2.0 * thr)));
  EXPECT_EQ(r1.apcer, r2.apcer);
  EXPECT_EQ(r1.bpcer, r2.bpcer);
  EXPECT_EQ(eer_threshold(t), 1.0 / (1.0 + std::exp(-2.0 * eer_threshold(s))));
  const auto c1 = roc_and_tpr_at_fpr(s, default_fpr_targets()), c2 = roc_and_tpr_at_fpr(t, default_fpr_targets());
  EXPECT_EQ(c1.tpr, c2.tpr);
}

TEST(Aggregate, PublishedProtocolOneRow) {
  const auto apcer = aggregate_mean_std({0.5, 4.8, 1.2});
  const auto bpcer = aggregate_mean_std({0.8, 4.0, 1.8});
  const auto acer = aggregate_mean_std({0.6, 4.4, 1.5});
  EXPECT_NEAR(apcer.mean, 2.2, 0.05);
  EXPECT_NEAR(apcer.std, 2.3, 0.05);
  EXPECT_NEAR(bpcer.mean, 2.2, 0.05);
  EXPECT_NEAR(bpcer.std, 1.6, 0.05);
  EXPECT_NEAR(acer.mean, 2.2, 0.05);
  EXPECT_NEAR(acer.std, 2.0, 0.05);
}

TEST(Aggregate, PublishedProtocolTwoRow) {
  const auto apcer = aggregate_mean_std({0.1, 13.8});
  const auto acer = aggregate_mean_std({0.4, 7.5});
  EXPECT_NEAR(apcer.mean, 7.0, 0.05);
  EXPECT_NEAR(apcer.std, 9.7, 0.05);
  EXPECT_NEAR(acer.mean, 4.0, 0.05);
  EXPECT_NEAR(acer.std, 5.0, 0.05);
}

TEST(Aggregate, EdgeCases) {
  const auto same = aggregate_mean_std({3.0, 3.0, 3.0});
  EXPECT_EQ(same.mean, 3.0);
  EXPECT_EQ(same.std, 0.0);
  EXPECT_THROW(aggregate_mean_std({1.0}), InputError);
  EXPECT_THROW(aggregate_mean_std({}), InputError);
}

TEST(Aggregate, TableFromReports) {
  const auto t = aggregate({row("1_3", 1.2, 1.8, 1.5), row("1_1", 0.5, 0.8, 0.6), row("1_2", 4.8, 4.0, 4.4)});
  ASSERT_TRUE(t.acer);
  EXPECT_EQ(t.rows.front().sub_protocol, "1_1");
  EXPECT_NEAR(t.acer->std, 2.0, 0.05);
  std::ostringstream out;
  write_table(out, t);
  EXPECT_NE(out.str().find("2.2+-2.3"), std::string::npos) << out.str();
  const auto single = aggregate({row("2_1", 0.1, 0.7, 0.4)});
  EXPECT_FALSE(single.acer);
  EXPECT_FALSE(single.notice.empty());
  EXPECT_THROW(aggregate({row("1_1", 1, 1, 1), row("2_1", 1, 1, 1)}), InputError);
}

TEST(Roc, PerfectClassifier) {
  const auto s = make({0.9, 0.8, 0.7}, {0.1, 0.2});
  const auto res = roc_and_tpr_at_fpr(s, {1e-2, 1e-4});
  EXPECT_EQ(res.tpr, (std::vector<double>{1.0, 1.0}));
  const auto curve = roc(s);
  EXPECT_TRUE(std::isinf(curve.front().threshold));
  EXPECT_EQ(curve.front().fpr, 0.0);
  EXPECT_EQ(curve.front().tpr, 0.0);
  EXPECT_EQ(curve.back().fpr, 1.0);
  EXPECT_EQ(curve.back().tpr, 1.0);
  EXPECT_THROW(tpr_at_fpr(curve, 0.0), InputError);
  EXPECT_THROW(tpr_at_fpr(curve, 1.5), InputError);
}

TEST(Roc, EerSplitsErrorsEvenly) {
  const auto s = make({0.6, 0.7, 0.8, 0.9}, {0.1, 0.2, 0.3, 0.65});
  const double thr = eer_threshold(s);
  const auto r = apcer_bpcer_acer(s, thr);
  EXPECT_DOUBLE_EQ(r.apcer, r.bpcer);
}

TEST(Roc, MatchesBruteForceOnAllSmallMultisets) {
  std::size_t cases = 0;
  for_each_multiset([&](const std::vector<ScoredSample>& s) {
    ++cases;
    const auto curve = roc(s);
    for (const auto& p : curve) {
      if (std::isinf(p.threshold)) continue;
      const auto r = oracle::count_at(s, p.threshold);
      ASSERT_EQ(p.false_accepts, r.fa);
      ASSERT_EQ(p.true_accepts, r.ta);
    }
    ASSERT_EQ(curve.size(), oracle::thresholds(s).size() + 1);
    for (double target : {0.1, 0.25, 1.0 / 3.0, 0.5, 1.0})
      ASSERT_EQ(tpr_at_fpr(curve, target), oracle::tpr_at_fpr(s, target));
    ASSERT_EQ(eer_threshold(s), oracle::eer_threshold(s));
  });
  EXPECT_GT(cases, 10000u);
}

TEST(ScoresIo, RoundTripIsExact) {
  auto s = make({0.123456789012345678, 1.0 / 3.0}, {1e-17, 0.5}, "replay");
  std::stringstream ss;
  write_scores(ss, s);
  const auto back = read_scores(ss);
  ASSERT_EQ(back.size(), s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    EXPECT_EQ(back[i].score, s[i].score);
    EXPECT_EQ(back[i].label, s[i].label);
    EXPECT_EQ(back[i].pai, s[i].pai);
    EXPECT_EQ(back[i].path, s[i].path);
  }
  EXPECT_EQ(pai_from_path("C_0301/replay_1/ir"), "replay");
  std::istringstream bad("x 0.5\n");
  EXPECT_THROW(read_scores(bad), InputError);
}

TEST(ReportIo, KeyValueRoundTrip) {
  const auto r = evaluate(make({0.9, 0.4}, {0.1, 0.6}), 0.5);
  std::stringstream ss;
  write_kv(ss, r);
  const auto back = report_from_kv(read_kv(ss));
  EXPECT_EQ(back.sub_protocol, "1_1");
  EXPECT_DOUBLE_EQ(back.rates.acer, 0.5);
  std::istringstream missing("sub_protocol=1_1\n");
  EXPECT_THROW(report_from_kv(read_kv(missing)), InputError);
}

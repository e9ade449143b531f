#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "psmmlab/batch.hpp"
#include "psmmlab/checkpoint.hpp"
#include "psmmlab/dataset.hpp"
#include "psmmlab/metrics.hpp"
#include "psmmlab/optimizer.hpp"
#include "psmmlab/psmm.hpp"

namespace psmmlab::training {

namespace fs = std::filesystem;

struct TrainOptions {
  int epochs = 25;
  std::size_t batch = 64;
  std::optional<std::size_t> max_steps;  // stop early after this many updates
  AdamConfig adam{};
  std::uint64_t seed = 0;
};

struct EpochLog {
  int epoch = 0;
  std::size_t steps = 0;
  double learning_rate = 0.0;
  std::map<std::string, double> mean_loss;  // "total" plus every loss component
};

struct TrainResult {
  std::vector<EpochLog> epochs;
  std::size_t steps = 0;
  double first_batch_loss = 0.0, last_batch_loss = 0.0;
};

inline void write_epoch_log(std::ostream& out, const EpochLog& e) {
  out << "epoch=" << e.epoch << " steps=" << e.steps << " lr=" << metrics::fmt(e.learning_rate);
  for (const auto& [k, v] : e.mean_loss) out << " loss." << k << '=' << metrics::fmt(v);
  out << '\n';
}

// One optimizer update on `batch`; returns every loss term of the step.
inline std::map<std::string, double> train_step(Network& net, Adam& adam, const dataset::Batch& batch) {
  ParameterSet& params = net.parameters();
  params.zero_grad();
  Graph g(params, Mode::train, true);
  const PsmmActivations a = net.forward(g, batch.inputs);
  const PsmmLoss l = net.loss(g, a, batch.labels);
  std::map<std::string, double> out;
  out["total"] = g.value(l.total)[0];
  for (const auto& [name, id] : l.components) out[name] = g.value(id)[0];
  if (!std::isfinite(out["total"])) throw NumericalError("non-finite training loss at step " + std::to_string(adam.step_count() + 1));
  g.backward(l.total);
  adam.step(params);
  return out;
}

// Epoch loop over shuffled samples with the step-decay schedule. Logs one
// key=value line per epoch to `log` when given.
inline TrainResult train(Network& net, dataset::BatchLoader& loader, const TrainOptions& opt,
                         std::ostream* log = nullptr) {
  require(opt.batch >= 1, "batch size must be positive");
  require(opt.epochs >= 1, "epochs must be positive");
  Adam adam(opt.adam);
  TrainResult res;
  std::mt19937_64 order_rng(split_seed(opt.seed, 2));
  std::vector<std::size_t> order(loader.size());
  bool done = false;
  for (int epoch = 0; epoch < opt.epochs && !done; ++epoch) {
    adam.set_epoch(epoch);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), order_rng);
    EpochLog elog;
    elog.epoch = epoch + 1;
    elog.learning_rate = adam.learning_rate();
    for (std::size_t start = 0; start < order.size() && !done; start += opt.batch) {
      const std::size_t end = std::min(order.size(), start + opt.batch);
      const std::vector<std::size_t> idx(order.begin() + static_cast<long>(start), order.begin() + static_cast<long>(end));
      const dataset::Batch batch = loader.load(idx, split_seed(opt.seed, 1000 + res.steps));
      const auto losses = train_step(net, adam, batch);
      if (res.steps == 0) res.first_batch_loss = losses.at("total");
      res.last_batch_loss = losses.at("total");
      for (const auto& [k, v] : losses) elog.mean_loss[k] += v;
      ++elog.steps;
      ++res.steps;
      if (opt.max_steps && res.steps >= *opt.max_steps) done = true;
    }
    for (auto& [_, v] : elog.mean_loss) v /= static_cast<double>(elog.steps);
    if (log) write_epoch_log(*log, elog);
    res.epochs.push_back(std::move(elog));
  }
  return res;
}

// Video-level score per sample: mean sigmoid of the score logit over the
// windows starting at frames 0, stride, 2*stride, ...
inline std::vector<double> video_scores(Network& net, dataset::BatchLoader& loader, std::size_t stride,
                                        std::size_t chunk = 32) {
  require(stride >= 1, "stride must be >= 1");
  std::vector<double> sum(loader.size(), 0.0);
  std::vector<std::size_t> windows(loader.size(), 0);
  std::size_t longest = 0;
  for (const auto& s : loader.samples()) longest = std::max(longest, s.frame_count);
  ParameterSet& params = net.parameters();
  for (std::size_t start = 0; start < longest; start += stride) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < loader.size(); ++i)
      if (start < loader.samples()[i].frame_count) idx.push_back(i);
    for (std::size_t c = 0; c < idx.size(); c += chunk) {
      const std::vector<std::size_t> part(idx.begin() + static_cast<long>(c),
                                          idx.begin() + static_cast<long>(std::min(idx.size(), c + chunk)));
      const std::vector<std::size_t> frames(part.size(), start);
      const dataset::Batch b = loader.load_at(part, frames, 0);
      Graph g(params, Mode::eval, false);
      const PsmmActivations a = net.forward(g, b.inputs);
      const Tensor& logits = g.value(a.score_logit);
      for (std::size_t n = 0; n < part.size(); ++n) {
        const double p = Graph::sigmoid(logits[n]);
        if (!std::isfinite(p)) throw NumericalError("non-finite score for " + loader.samples()[part[n]].dir);
        sum[part[n]] += p;
        ++windows[part[n]];
      }
    }
  }
  for (std::size_t i = 0; i < sum.size(); ++i) sum[i] /= static_cast<double>(windows[i]);
  return sum;
}

inline std::vector<metrics::ScoredSample> scored_samples(const dataset::BatchLoader& loader,
                                                         const std::vector<double>& scores,
                                                         const std::string& sub_protocol) {
  std::vector<metrics::ScoredSample> out;
  for (std::size_t i = 0; i < loader.size(); ++i) {
    const auto& s = loader.samples()[i];
    out.push_back({scores[i], s.label, dataset::to_string(s.pai), sub_protocol, s.dir});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Command drivers

struct RunConfig {
  fs::path root;
  std::string protocol = "1_1";
  std::optional<fs::path> protocol_table;  // overrides the built-in table
  Preset preset = Preset::toy;
  Variant variant = Variant::psmm;
  std::vector<Modality> modalities = {Modality::color, Modality::depth, Modality::ir};
  NormMode norm = NormMode::batch;
  int epochs = 25;
  std::size_t batch = 64;
  std::optional<std::size_t> max_steps;
  double lr = 0.1;
  std::vector<int> decay_epochs = {15, 20};
  std::size_t k = 7;
  std::size_t stride = 1;
  std::uint64_t seed = 0;
  fs::path out = "run";
  bool augment = true;
  bool include_3d = true;
  bool worst_pai = false;
  std::string eval_split = "test";
  std::string threshold_split = "valid";
  std::optional<fs::path> checkpoint;  // eval: defaults to <out>/checkpoint
};

inline PSMMConfig network_config(const RunConfig& rc) {
  PSMMConfig c;
  c.variant = rc.variant;
  c.modalities = canonical_modalities(rc.modalities);
  c.trunk = SDNetConfig::make(rc.preset, c.modalities.front(), rc.norm);
  return c;
}

inline dataset::ProtocolSpec resolve_protocol(const RunConfig& rc) {
  std::vector<dataset::ProtocolSpec> table;
  if (rc.protocol_table) {
    std::ifstream in(*rc.protocol_table);
    if (!in) throw InputError("cannot read protocol table " + rc.protocol_table->string());
    table = dataset::parse_protocol_table(in);
  } else {
    table = dataset::builtin_protocols();
  }
  dataset::ProtocolSpec spec = dataset::find_protocol(table, rc.protocol);
  spec.include_3d_in_test = rc.include_3d;
  return spec;
}

inline std::array<dataset::Manifest, 3> split_dataset(const RunConfig& rc) {
  const auto catalog = dataset::scan_catalog(rc.root);
  if (catalog.empty()) throw InputError("no clips found under " + rc.root.string());
  auto splits = dataset::protocol_split(catalog, resolve_protocol(rc));
  for (auto& m : splits) dataset::attach_frame_counts(m, catalog);
  return splits;
}

inline dataset::LoaderOptions loader_options(const RunConfig& rc, bool augment) {
  dataset::LoaderOptions o;
  o.k = rc.k;
  o.side = SDNetConfig::make(rc.preset).input_side;
  o.augment = augment;
  o.augment_options = augment::options_for_side(o.side);
  return o;
}

inline std::string timestamp() {
  std::time_t t = std::time(nullptr);
  char buf[64];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

// Writes <out>/manifests, <out>/checkpoint and <out>/train.log.
inline TrainResult run_train(const RunConfig& rc, std::ostream* echo = nullptr) {
  require(rc.k >= 1 && rc.stride >= 1, "--k and --stride must be positive");
  const auto splits = split_dataset(rc);
  fs::create_directories(rc.out);
  dataset::save_manifests(rc.out / "manifests", splits);

  Network net(network_config(rc), rc.seed);
  dataset::BatchLoader loader(rc.root, splits[0], net.config().modalities, loader_options(rc, rc.augment));

  TrainOptions opt;
  opt.epochs = rc.epochs;
  opt.batch = rc.batch;
  opt.max_steps = rc.max_steps;
  opt.adam.lr = rc.lr;
  opt.adam.decay_epochs = rc.decay_epochs;
  opt.seed = rc.seed;

  std::ofstream log(rc.out / "train.log");
  if (!log) throw InputError("cannot write " + (rc.out / "train.log").string());
  log << "# started " << timestamp() << '\n';
  std::ostringstream body;
  body << "protocol=" << rc.protocol << " variant=" << to_string(rc.variant) << " preset=" << to_string(rc.preset)
       << " modalities=" << join_modalities(net.config().modalities) << " samples=" << loader.size()
       << " params=" << net.parameters().trainable_scalars() << " seed=" << rc.seed << '\n';
  TrainResult res = train(net, loader, opt, &body);
  body << "steps=" << res.steps << " first_loss=" << metrics::fmt(res.first_batch_loss)
       << " last_loss=" << metrics::fmt(res.last_batch_loss) << '\n';
  log << body.str();
  if (echo) *echo << body.str();

  auto meta = net.metadata();
  meta["protocol"] = rc.protocol;
  meta["seed"] = std::to_string(rc.seed);
  meta["k"] = std::to_string(rc.k);
  meta["steps"] = std::to_string(res.steps);
  checkpoint::save(rc.out / "checkpoint", net.parameters(), meta);
  return res;
}

struct EvalOutcome {
  double threshold = 0.0;
  metrics::EvalReport report;
  std::vector<metrics::ScoredSample> scores;
};

// Loads the checkpoint, picks the EER threshold on `threshold_split`, then
// scores `eval_split`. Writes scores_<split>.txt, report.txt (key=value) and
// report_table.txt under <out>.
inline EvalOutcome run_eval(const RunConfig& rc, std::ostream* echo = nullptr) {
  const fs::path ckpt = rc.checkpoint.value_or(rc.out / "checkpoint");
  const auto meta = checkpoint::read_metadata(ckpt);
  const PSMMConfig want = network_config(rc);
  const PSMMConfig have = Network::config_from_metadata(meta);
  if (have.variant != want.variant || have.trunk.preset != want.trunk.preset || have.modalities != want.modalities ||
      have.trunk.norm != want.trunk.norm)
    throw IncompatibleError("checkpoint was trained as variant=" + meta.at("variant") + " preset=" + meta.at("preset") +
                            " modalities=" + meta.at("modalities") + ", but evaluation asks for variant=" +
                            to_string(want.variant) + " preset=" + to_string(want.trunk.preset) +
                            " modalities=" + join_modalities(want.modalities));
  Network net(want, 0);
  checkpoint::load(ckpt, net.parameters());

  const auto splits = split_dataset(rc);
  const auto& thr_manifest = splits[static_cast<std::size_t>(dataset::parse_split(rc.threshold_split))];
  const auto& eval_manifest = splits[static_cast<std::size_t>(dataset::parse_split(rc.eval_split))];

  dataset::BatchLoader thr_loader(rc.root, thr_manifest, want.modalities, loader_options(rc, false));
  const auto thr_scores = scored_samples(thr_loader, video_scores(net, thr_loader, rc.stride), rc.protocol);
  EvalOutcome out;
  out.threshold = metrics::eer_threshold(thr_scores);

  dataset::BatchLoader eval_loader(rc.root, eval_manifest, want.modalities, loader_options(rc, false));
  out.scores = scored_samples(eval_loader, video_scores(net, eval_loader, rc.stride), rc.protocol);
  out.report = metrics::evaluate(out.scores, out.threshold, rc.worst_pai);

  fs::create_directories(rc.out);
  {
    std::ofstream f(rc.out / ("scores_" + rc.threshold_split + ".txt"));
    metrics::write_scores(f, thr_scores);
  }
  {
    std::ofstream f(rc.out / ("scores_" + rc.eval_split + ".txt"));
    metrics::write_scores(f, out.scores);
  }
  std::ofstream kv(rc.out / "report.txt");
  if (!kv) throw InputError("cannot write report under " + rc.out.string());
  metrics::write_kv(kv, out.report);
  std::ofstream table(rc.out / "report_table.txt");
  metrics::write_table(table, metrics::aggregate({out.report}));
  if (echo) metrics::write_kv(*echo, out.report);
  return out;
}

// Aggregates sub-protocols of one protocol. Each file is either a key=value
// report written by run_eval or a score file, which is evaluated at
// `threshold`.
inline metrics::AggregateTable run_report(const std::vector<fs::path>& files, double threshold = 0.5,
                                          bool worst_pai = false) {
  if (files.empty()) throw InputError("report needs at least one report file");
  std::vector<metrics::EvalReport> rows;
  for (const auto& f : files) {
    std::ifstream in(f);
    if (!in) throw InputError("cannot read report " + f.string());
    std::stringstream buf;
    buf << in.rdbuf();
    const std::string text = buf.str();
    std::istringstream body(text);
    if (text.find('=') != std::string::npos) {
      rows.push_back(metrics::report_from_kv(metrics::read_kv(body)));
    } else {
      const auto scores = metrics::read_scores(body);
      if (scores.empty()) throw InputError("empty score file " + f.string());
      rows.push_back(metrics::evaluate(scores, threshold, worst_pai));
    }
  }
  return metrics::aggregate(std::move(rows));
}

}  // namespace psmmlab::training

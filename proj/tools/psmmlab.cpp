// psmmlab command-line driver: synth, pool, split, train, eval, report,
// gradcheck.

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>

#include "psmmlab/gradcheck.hpp"
#include "psmmlab/training.hpp"

namespace fs = std::filesystem;
using namespace psmmlab;

namespace {

constexpr const char* kFooter = R"(Profiles:
  Defaults follow the full schedule: --preset resnet18 (112x112 input),
  25 epochs, batch 64, Adam lr 0.1 decayed x0.1 at epochs 15 and 20, K=7.
  The toy profile used for desk-scale runs is --preset toy (32x32 input,
  four 8/16/32/64-channel levels), typically with --epochs 5 --batch 8
  --max-steps 300 on a `psmmlab synth` dataset.

Exit codes: 0 success, 2 input error, 3 numerical failure, 4 incompatible
checkpoint. PSMMLAB_THREADS bounds worker threads (default 1).)";

struct RunFlags {
  training::RunConfig rc;
  std::string protocol_table, preset = "resnet18", variant = "psmm", modalities = "color,depth,ir", norm = "batch",
                              decay = "15,20", checkpoint;
  bool no_augment = false, no_3d = false;
  std::size_t max_steps = 0;
  CLI::Option* modalities_opt = nullptr;
};

void add_run_flags(CLI::App* app, RunFlags& f, bool training_flags) {
  app->add_option("--root", f.rc.root, "dataset root")->required();
  app->add_option("--protocol", f.rc.protocol, "sub-protocol id P_S")->capture_default_str();
  app->add_option("--protocol-table", f.protocol_table, "text protocol table overriding the built-in one");
  app->add_option("--preset", f.preset, "toy or resnet18")->capture_default_str();
  app->add_option("--variant", f.variant, "psmm, psmm-wobf, nhf or sdnet")->capture_default_str();
  f.modalities_opt = app->add_option("--modalities", f.modalities, "comma-separated subset of color,depth,ir (sdnet: color)")
                         ->capture_default_str();
  app->add_option("--norm", f.norm, "batch or none")->capture_default_str();
  app->add_option("--k", f.rc.k, "dynamic-image window length")->capture_default_str();
  app->add_option("--seed", f.rc.seed, "64-bit seed")->capture_default_str();
  app->add_option("--out", f.rc.out, "run directory")->capture_default_str();
  app->add_flag("--no-3d", f.no_3d, "keep 3D attacks out of the test split");
  if (training_flags) {
    app->add_option("--epochs", f.rc.epochs)->capture_default_str();
    app->add_option("--batch", f.rc.batch)->capture_default_str();
    app->add_option("--max-steps", f.max_steps, "stop after this many optimizer steps (0 = no cap)");
    app->add_option("--lr", f.rc.lr)->capture_default_str();
    app->add_option("--decay-epochs", f.decay, "epochs at which lr is multiplied by 0.1")->capture_default_str();
    app->add_flag("--no-augment", f.no_augment, "disable training-time augmentation");
  } else {
    app->add_option("--stride", f.rc.stride, "frame stride between scored windows")->capture_default_str();
    app->add_option("--split", f.rc.eval_split, "split to evaluate")->capture_default_str();
    app->add_option("--threshold-split", f.rc.threshold_split, "split whose EER fixes the threshold")
        ->capture_default_str();
    app->add_option("--checkpoint", f.checkpoint, "checkpoint directory (default <out>/checkpoint)");
    app->add_flag("--worst-pai", f.rc.worst_pai, "APCER as the maximum over attack instruments");
  }
}

std::vector<int> parse_int_list(const std::string& csv) {
  std::vector<int> out;
  std::stringstream ss(csv);
  std::string tok;
  while (std::getline(ss, tok, ','))
    if (!tok.empty()) {
      try {
        std::size_t used = 0;
        out.push_back(std::stoi(tok, &used));
        if (used != tok.size()) throw std::invalid_argument(tok);
      } catch (const std::logic_error&) {
        throw InputError("not an integer list: " + csv);
      }
    }
  return out;
}

training::RunConfig finish(RunFlags& f) {
  training::RunConfig rc = f.rc;
  if (!f.protocol_table.empty()) rc.protocol_table = f.protocol_table;
  rc.preset = parse_preset(f.preset);
  rc.variant = parse_variant(f.variant);
  const bool explicit_modalities = f.modalities_opt && f.modalities_opt->count() > 0;
  rc.modalities = rc.variant == Variant::sdnet && !explicit_modalities ? std::vector<Modality>{Modality::color}
                                                                       : parse_modalities(f.modalities);
  rc.norm = parse_norm(f.norm);
  rc.decay_epochs = parse_int_list(f.decay);
  if (f.max_steps) rc.max_steps = f.max_steps;
  rc.augment = !f.no_augment;
  rc.include_3d = !f.no_3d;
  if (!f.checkpoint.empty()) rc.checkpoint = fs::path(f.checkpoint);
  require(rc.epochs >= 1 && rc.batch >= 1, "--epochs and --batch must be positive");
  return rc;
}

void run_pool(const fs::path& root, std::size_t k, std::size_t stride, const std::string& modalities) {
  require(k >= 1, "--k must be positive");
  if (stride == 0) stride = k;
  const auto wanted = parse_modalities(modalities);
  std::size_t written = 0, clips = 0;
  for (const auto& rec : dataset::scan_catalog(root)) {
    if (std::find(wanted.begin(), wanted.end(), rec.modality) == wanted.end()) continue;
    const Clip clip = dataset::load_clip(root, rec);
    const fs::path dyn = root / rec.path / "dyn";
    fs::create_directories(dyn);
    for (std::size_t start = 0; start < clip.frames.size(); start += stride) {
      write_png(dyn / dataset::frame_name(start), rankpool::dynamic_image(clip, k, start));
      ++written;
    }
    ++clips;
  }
  std::cout << "pooled " << clips << " clips into " << written << " dynamic images\n";
}

void print_counts(const std::array<dataset::Manifest, 3>& s) {
  for (dataset::Split sp : dataset::kAllSplits) {
    const auto c = dataset::count(s[static_cast<std::size_t>(sp)]);
    std::cout << to_string(sp) << ": real=" << c.real << " fake=" << c.fake << " total=" << c.total() << '\n';
  }
}

int dispatch(int argc, char** argv) {
  CLI::App app{"psmmlab: multi-modal face anti-spoofing with rank-pooled dynamic images"};
  app.footer(kFooter);
  app.require_subcommand(1);

  dataset::SynthSpec synth;
  fs::path synth_root;
  auto* synth_cmd = app.add_subcommand("synth", "generate a class-separable synthetic dataset");
  synth_cmd->add_option("--root", synth_root, "output dataset root")->required();
  synth_cmd->add_option("--subjects", synth.subjects_per_ethnicity, "2D subjects per ethnicity")->capture_default_str();
  synth_cmd->add_option("--frames", synth.frames_per_clip, "frames per clip")->capture_default_str();
  synth_cmd->add_option("--side", synth.side, "frame side in pixels")->capture_default_str();
  synth_cmd->add_option("--mask3d", synth.mask3d_subjects, "3D mask subjects")->capture_default_str();
  synth_cmd->add_option("--silica", synth.silica_subjects, "silica gel mask subjects")->capture_default_str();
  synth_cmd->add_option("--seed", synth.seed)->capture_default_str();

  fs::path pool_root;
  std::size_t pool_k = 7, pool_stride = 0;
  std::string pool_mods = "color,depth,ir";
  auto* pool_cmd = app.add_subcommand("pool", "write dynamic images to <clip>/dyn/");
  pool_cmd->add_option("--root", pool_root)->required();
  pool_cmd->add_option("--k", pool_k, "window length")->capture_default_str();
  pool_cmd->add_option("--stride", pool_stride, "window stride (default K)");
  pool_cmd->add_option("--modalities", pool_mods)->capture_default_str();

  RunFlags split_flags;
  bool compare = false;
  auto* split_cmd = app.add_subcommand("split", "write train/valid/test manifests for a sub-protocol");
  split_cmd->add_option("--root", split_flags.rc.root)->required();
  split_cmd->add_option("--protocol", split_flags.rc.protocol)->capture_default_str();
  split_cmd->add_option("--protocol-table", split_flags.protocol_table);
  split_cmd->add_option("--out", split_flags.rc.out, "manifest directory")->capture_default_str();
  split_cmd->add_flag("--no-3d", split_flags.no_3d, "keep 3D attacks out of the test split");
  split_cmd->add_flag("--compare", compare, "compare built-in split sizes with the published counts");

  RunFlags train_flags, eval_flags;
  auto* train_cmd = app.add_subcommand("train", "train a network on one sub-protocol");
  add_run_flags(train_cmd, train_flags, true);
  auto* eval_cmd = app.add_subcommand("eval", "score a split and report APCER/BPCER/ACER");
  add_run_flags(eval_cmd, eval_flags, false);

  std::vector<fs::path> report_files;
  double report_thr = 0.5;
  bool report_worst = false;
  fs::path report_out;
  auto* report_cmd = app.add_subcommand("report", "aggregate sub-protocol reports into one table");
  report_cmd->add_option("files", report_files, "report.txt files or score files")->required();
  report_cmd->add_option("--threshold", report_thr, "threshold for score files")->capture_default_str();
  report_cmd->add_flag("--worst-pai", report_worst);
  report_cmd->add_option("--out", report_out, "also write key=value table here");

  std::string gc_variant = "psmm", gc_preset = "toy";
  std::size_t gc_probes = 100;
  std::uint64_t gc_seed = 0;
  double gc_tol = 1e-4;
  auto* gc_cmd = app.add_subcommand("gradcheck", "finite-difference check of the training loss");
  gc_cmd->add_option("--variant", gc_variant)->capture_default_str();
  gc_cmd->add_option("--preset", gc_preset)->capture_default_str();
  gc_cmd->add_option("--probes", gc_probes, "parameters probed")->capture_default_str();
  gc_cmd->add_option("--seed", gc_seed)->capture_default_str();
  gc_cmd->add_option("--tol", gc_tol, "maximum relative error")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  if (*synth_cmd) {
    dataset::generate_synthetic(synth_root, synth);
    std::cout << "wrote " << dataset::synth_clip_count(synth) << " clips under " << synth_root.string() << '\n';
  } else if (*pool_cmd) {
    run_pool(pool_root, pool_k, pool_stride, pool_mods);
  } else if (*split_cmd) {
    training::RunConfig rc = split_flags.rc;
    if (!split_flags.protocol_table.empty()) rc.protocol_table = split_flags.protocol_table;
    rc.include_3d = !split_flags.no_3d;
    const auto catalog = dataset::scan_catalog(rc.root);
    if (compare) {
      for (const auto& c : dataset::compare_with_reported(catalog))
        std::cout << c.protocol << ' ' << to_string(c.split) << " derived=" << c.derived.real << '/' << c.derived.fake
                  << " published=" << c.reported.real << '/' << c.reported.fake
                  << (c.derivable ? (c.matches() ? " ok" : " MISMATCH") : " not-derivable: " + c.note) << '\n';
      return 0;
    }
    if (catalog.empty()) throw InputError("no clips found under " + rc.root.string());
    const auto splits = dataset::protocol_split(catalog, training::resolve_protocol(rc));
    dataset::save_manifests(rc.out, splits);
    print_counts(splits);
  } else if (*train_cmd) {
    training::run_train(finish(train_flags), &std::cout);
  } else if (*eval_cmd) {
    training::run_eval(finish(eval_flags), &std::cout);
  } else if (*report_cmd) {
    const auto table = training::run_report(report_files, report_thr, report_worst);
    metrics::write_table(std::cout, table);
    if (!report_out.empty()) {
      std::ofstream out(report_out);
      if (!out) throw InputError("cannot write " + report_out.string());
      metrics::write_table_kv(out, table);
    }
  } else if (*gc_cmd) {
    PSMMConfig cfg;
    cfg.variant = parse_variant(gc_variant);
    if (cfg.variant == Variant::sdnet) cfg.modalities = {Modality::color};
    cfg.trunk = SDNetConfig::make(parse_preset(gc_preset), cfg.modalities.front());
    Network net(cfg, gc_seed);
    std::mt19937_64 rng(split_seed(gc_seed, 7));
    std::normal_distribution<double> nd;
    Inputs in;
    for (Modality m : net.config().modalities) {
      const std::size_t s = cfg.trunk.input_side;
      in[m] = {Tensor({3, 3, s, s}), Tensor({3, 3, s, s})};
      for (double& x : in[m].static_img.data()) x = nd(rng);
      for (double& x : in[m].dynamic_img.data()) x = nd(rng);
    }
    const std::vector<double> labels = {1, 0, 1};
    auto loss = [&](bool with_backward) {
      Graph g(net.parameters(), Mode::train, false);
      const auto l = net.loss(g, net.forward(g, in), labels);
      if (with_backward) g.backward(l.total);
      return g.value(l.total)[0];
    };
    GradcheckOptions opt;
    opt.samples = gc_probes;
    opt.seed = gc_seed;
    const auto res = finite_difference_check(net.parameters(), loss, opt);
    std::printf("variant=%s probes=%zu max_rel_error=%.3e\n", to_string(cfg.variant).c_str(), res.probes.size(),
                res.max_rel_error);
    if (!(res.max_rel_error < gc_tol)) throw NumericalError("gradient check exceeded tolerance");
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return dispatch(argc, argv);
  } catch (const IncompatibleError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 4;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return 3;
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}

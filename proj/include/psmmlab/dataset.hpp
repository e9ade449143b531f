#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "psmmlab/image.hpp"
#include "psmmlab/parameters.hpp"
#include "psmmlab/psmm.hpp"

namespace psmmlab::dataset {

namespace fs = std::filesystem;

enum class Ethnicity { A, C, E };  // African, Central Asian, East Asian
inline constexpr std::array<Ethnicity, 3> kAllEthnicities = {Ethnicity::A, Ethnicity::C, Ethnicity::E};

inline std::string to_string(Ethnicity e) {
  switch (e) {
    case Ethnicity::A: return "A";
    case Ethnicity::C: return "C";
    case Ethnicity::E: return "E";
  }
  return "?";
}

inline std::optional<Ethnicity> try_parse_ethnicity(const std::string& s) {
  if (s == "A") return Ethnicity::A;
  if (s == "C") return Ethnicity::C;
  if (s == "E") return Ethnicity::E;
  return std::nullopt;
}

enum class Pai { real, print, replay, mask3d, silica };
inline constexpr std::array<Pai, 5> kAllPais = {Pai::real, Pai::print, Pai::replay, Pai::mask3d, Pai::silica};

inline std::string to_string(Pai p) {
  switch (p) {
    case Pai::real: return "real";
    case Pai::print: return "print";
    case Pai::replay: return "replay";
    case Pai::mask3d: return "mask3d";
    case Pai::silica: return "silica";
  }
  return "?";
}

inline std::optional<Pai> try_parse_pai(const std::string& s) {
  for (Pai p : kAllPais)
    if (to_string(p) == s) return p;
  return std::nullopt;
}

inline bool is_3d(Pai p) { return p == Pai::mask3d || p == Pai::silica; }

enum class Split { train, valid, test };
inline constexpr std::array<Split, 3> kAllSplits = {Split::train, Split::valid, Split::test};

inline std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::valid: return "valid";
    case Split::test: return "test";
  }
  return "?";
}

inline Split parse_split(const std::string& s) {
  for (Split x : kAllSplits)
    if (to_string(x) == s) return x;
  throw InputError("unknown split: " + s);
}

// Capture conditions by (PAI, sample index k), k starting at 1.
inline std::string lighting_tag(Pai pai, int k) {
  static const char* kSix[] = {"outdoor_sun", "outdoor_shade", "indoor_side", "indoor_front", "indoor_back", "indoor_regular"};
  static const char* kFour[] = {"indoor_side", "indoor_front", "indoor_back", "indoor_regular"};
  switch (pai) {
    case Pai::print: return k == 2 ? "outdoor" : "indoor";
    case Pai::mask3d: return kSix[(k - 1) % 6];
    case Pai::silica: return kFour[(k - 1) % 4];
    default: return "indoor";
  }
}

struct ClipRecord {
  int subject_id = 0;
  Ethnicity ethnicity = Ethnicity::A;
  Modality modality = Modality::color;
  Pai pai = Pai::real;
  int sample = 1;  // k in <pai>_<k>
  std::string lighting;
  std::string path;  // relative to the dataset root: <eth>_<subject>/<pai>_<k>/<modality>
  std::size_t frame_count = 0;

  bool bona_fide() const { return pai == Pai::real; }
  int label() const { return bona_fide() ? 1 : 0; }
  // Directory shared by all modalities of one capture.
  std::string sample_dir() const { return path.substr(0, path.rfind('/')); }
};

inline std::string subject_dir(Ethnicity e, int subject) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s_%04d", to_string(e).c_str(), subject);
  return buf;
}

inline std::string frame_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "frame_%04zu.png", i);
  return buf;
}

// ---------------------------------------------------------------------------
// Synthetic generator

struct SynthSpec {
  int subjects_per_ethnicity = 2;
  std::size_t frames_per_clip = 8;
  std::size_t side = 32;
  std::uint64_t seed = 0;
  int mask3d_subjects = 0;  // 3D attack subjects, ids after the 2D range
  int silica_subjects = 0;
};

inline constexpr int kMask3dSamples = 18;  // 3 wear styles x 6 lighting conditions
inline constexpr int kSilicaSamples = 8;   // 2 wear styles x 4 lighting conditions

struct SampleSlot {
  Pai pai;
  int k;
};

inline std::vector<SampleSlot> samples_for(Pai kind) {
  switch (kind) {
    case Pai::mask3d: {
      std::vector<SampleSlot> out;
      for (int k = 1; k <= kMask3dSamples; ++k) out.push_back({Pai::mask3d, k});
      return out;
    }
    case Pai::silica: {
      std::vector<SampleSlot> out;
      for (int k = 1; k <= kSilicaSamples; ++k) out.push_back({Pai::silica, k});
      return out;
    }
    default:
      // 2D subject: one bona fide, two prints (indoor/outdoor), one replay.
      return {{Pai::real, 1}, {Pai::print, 1}, {Pai::print, 2}, {Pai::replay, 1}};
  }
}

namespace detail {

struct Rng {
  std::mt19937_64 eng;
  explicit Rng(std::uint64_t s) : eng(s) {}
  double uni(double lo = 0.0, double hi = 1.0) { return std::uniform_real_distribution<double>(lo, hi)(eng); }
};

inline std::array<double, 3> skin_tone(Ethnicity e) {
  switch (e) {
    case Ethnicity::A: return {0.45, 0.31, 0.23};
    case Ethnicity::C: return {0.74, 0.57, 0.45};
    case Ethnicity::E: return {0.84, 0.69, 0.56};
  }
  return {0.5, 0.5, 0.5};
}

// Procedural frames with class-dependent structure:
//   real    smooth gradient that drifts over time, face-shaped depth
//   print   static blocky texture, flat depth
//   replay  fine stripes with frame-to-frame brightness flicker, dark IR
//   mask3d/silica  face-shaped depth with static or slowly varying texture
inline std::vector<Image> render_clip(Ethnicity eth, Pai pai, Modality mod, std::size_t frames, std::size_t side,
                                      std::uint64_t seed) {
  Rng rng(seed);
  const auto tone = skin_tone(eth);
  const double jitter = rng.uni(-0.05, 0.05);
  const double angle = rng.uni(0.0, 2.0 * std::numbers::pi);
  const double freq = rng.uni(0.8, 1.6);
  const double speed = rng.uni(0.6, 1.2) * (rng.uni() < 0.5 ? -1.0 : 1.0);
  const double phase0 = rng.uni(0.0, 2.0 * std::numbers::pi);
  const double stripe_period = rng.uni(2.0, 3.0);
  const double tilt = rng.uni(-0.2, 0.2);
  const std::size_t cell = 2 + static_cast<std::size_t>(rng.uni(0.0, 3.0));
  std::vector<double> texture(side * side);
  {
    std::vector<double> cells((side / cell + 1) * (side / cell + 1));
    for (auto& c : cells) c = rng.uni();
    for (std::size_t y = 0; y < side; ++y)
      for (std::size_t x = 0; x < side; ++x) texture[y * side + x] = cells[(y / cell) * (side / cell + 1) + x / cell];
  }

  std::vector<Image> out;
  out.reserve(frames);
  const double s = static_cast<double>(side);
  for (std::size_t f = 0; f < frames; ++f) {
    Image img(side, side, 3);
    const double t = static_cast<double>(f) / static_cast<double>(std::max<std::size_t>(frames, 2) - 1);
    const double flicker = (f % 2 == 0) ? 0.15 : -0.15;
    for (std::size_t y = 0; y < side; ++y)
      for (std::size_t x = 0; x < side; ++x) {
        const double u = (x + 0.5) / s - 0.5, v = (y + 0.5) / s - 0.5;
        const double r2 = (u * u) / 0.16 + (v * v) / 0.2;
        const double face = r2 < 1.0 ? 1.0 : 0.0;
        const double dome = face * (1.0 - r2);
        const double along = u * std::cos(angle) + v * std::sin(angle);
        const double moving = 0.5 + 0.5 * std::sin(2.0 * std::numbers::pi * freq * along + phase0 +
                                                   2.0 * std::numbers::pi * speed * t);
        const double stripes = 0.5 + 0.5 * std::sin(2.0 * std::numbers::pi * (x + 0.5 * y) / stripe_period);
        const double tex = texture[y * side + x];
        const double noise = rng.uni(-0.02, 0.02);
        std::array<double, 3> px{};
        switch (mod) {
          case Modality::color: {
            double shade = 0.0;
            switch (pai) {
              case Pai::real: shade = 0.7 + 0.3 * moving; break;
              case Pai::print: shade = 0.55 + 0.45 * tex; break;
              case Pai::replay: shade = 0.7 + 0.3 * stripes + flicker; break;
              case Pai::mask3d: shade = 0.6 + 0.3 * tex + 0.1 * dome; break;
              case Pai::silica: shade = 0.8 + 0.2 * dome + 0.05 * moving; break;
            }
            for (int c = 0; c < 3; ++c) px[c] = (tone[c] + jitter) * shade * (0.4 + 0.6 * face) + noise;
            break;
          }
          case Modality::depth: {
            double d = 0.0;
            switch (pai) {
              case Pai::real: d = 0.2 + 0.7 * dome + 0.05 * (moving - 0.5); break;
              case Pai::print: d = 0.35 + tilt * u; break;
              case Pai::replay: d = 0.3 + tilt * v; break;
              case Pai::mask3d:
              case Pai::silica: d = 0.2 + 0.65 * dome; break;
            }
            px.fill(d + noise);
            break;
          }
          case Modality::ir: {
            double ir = 0.0;
            switch (pai) {
              case Pai::real: ir = 0.25 + 0.55 * dome + 0.1 * moving; break;
              case Pai::print: ir = 0.3 + 0.3 * tex; break;
              case Pai::replay: ir = 0.08 + 0.05 * stripes + 0.3 * flicker * face; break;
              case Pai::mask3d: ir = 0.35 + 0.3 * dome + 0.15 * tex; break;
              case Pai::silica: ir = 0.3 + 0.45 * dome; break;
            }
            px.fill(ir + noise);
            break;
          }
        }
        for (int c = 0; c < 3; ++c) img.at(y, x, c) = std::clamp(px[c], 0.0, 1.0);
      }
    out.push_back(std::move(img));
  }
  return out;
}

inline std::uint64_t clip_seed(std::uint64_t seed, Ethnicity e, int subject, Pai pai, int k, Modality m) {
  std::uint64_t key = static_cast<std::uint64_t>(subject);
  key = key * 8 + static_cast<std::uint64_t>(e);
  key = key * 8 + static_cast<std::uint64_t>(pai);
  key = key * 32 + static_cast<std::uint64_t>(k);
  key = key * 4 + static_cast<std::uint64_t>(m);
  return split_seed(seed, key);
}

}  // namespace detail

struct SubjectEntry {
  Ethnicity ethnicity;
  int subject;
  Pai kind;  // real for 2D subjects, mask3d or silica for 3D subjects
};

// 2D subjects 1..n per ethnicity, then 3D subjects numbered after the 2D
// range, ethnicities assigned round-robin.
inline std::vector<SubjectEntry> synth_subjects(const SynthSpec& spec) {
  std::vector<SubjectEntry> out;
  for (Ethnicity e : kAllEthnicities)
    for (int s = 1; s <= spec.subjects_per_ethnicity; ++s) out.push_back({e, s, Pai::real});
  int next = std::max(spec.subjects_per_ethnicity, 500) + 1;
  for (int i = 0; i < spec.mask3d_subjects; ++i) out.push_back({kAllEthnicities[i % 3], next++, Pai::mask3d});
  for (int i = 0; i < spec.silica_subjects; ++i) out.push_back({kAllEthnicities[i % 3], next++, Pai::silica});
  return out;
}

// Clip directories the generator writes for `spec`: one per
// (subject, sample, modality).
inline std::size_t synth_clip_count(const SynthSpec& spec) {
  return 3 * (3 * static_cast<std::size_t>(spec.subjects_per_ethnicity) * 4 +
              static_cast<std::size_t>(spec.mask3d_subjects) * kMask3dSamples +
              static_cast<std::size_t>(spec.silica_subjects) * kSilicaSamples);
}

inline void generate_synthetic(const fs::path& root, const SynthSpec& spec) {
  require(spec.side >= 8, "synthetic side must be >= 8");
  require(spec.frames_per_clip >= 2, "synthetic clips need >= 2 frames");
  require(spec.subjects_per_ethnicity >= 0 && spec.mask3d_subjects >= 0 && spec.silica_subjects >= 0,
          "subject counts must be non-negative");
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec || !fs::is_directory(root)) throw InputError("cannot create dataset root: " + root.string());
  {
    const fs::path probe = root / ".psmmlab_write_probe";
    std::ofstream test(probe);
    if (!test) throw InputError("dataset root is not writable: " + root.string());
    test.close();
    fs::remove(probe);
  }
  for (const SubjectEntry& se : synth_subjects(spec))
    for (const SampleSlot& slot : samples_for(se.kind))
      for (Modality m : kAllModalities) {
        const fs::path dir = root / subject_dir(se.ethnicity, se.subject) /
                             (to_string(slot.pai) + "_" + std::to_string(slot.k)) / psmmlab::to_string(m);
        fs::create_directories(dir);
        const auto frames = detail::render_clip(se.ethnicity, slot.pai, m, spec.frames_per_clip, spec.side,
                                                detail::clip_seed(spec.seed, se.ethnicity, se.subject, slot.pai, slot.k, m));
        for (std::size_t f = 0; f < frames.size(); ++f) write_png(dir / frame_name(f), frames[f]);
      }
}

// ---------------------------------------------------------------------------
// Catalog

namespace detail {

inline bool parse_int(const std::string& s, int& out) {
  if (s.empty()) return false;
  const auto* end = s.data() + s.size();
  auto [p, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && p == end;
}

inline std::vector<fs::path> sorted_dirs(const fs::path& p) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(p))
    if (e.is_directory()) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

// Number of frame_%04d.png files; they must be numbered 0..n-1.
inline std::size_t count_frames(const fs::path& dir) {
  std::set<int> idx;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const std::string name = e.path().filename().string();
    int i = 0;
    if (name.size() == 14 && name.rfind("frame_", 0) == 0 && name.substr(10) == ".png" &&
        parse_int(name.substr(6, 4), i))
      idx.insert(i);
  }
  if (!idx.empty() && (*idx.begin() != 0 || *idx.rbegin() != static_cast<int>(idx.size()) - 1))
    throw InputError("non-contiguous frame numbering in " + dir.string());
  return idx.size();
}

}  // namespace detail

// One record per <eth>_<subject>/<pai>_<k>/<modality> directory, in sorted
// path order.
inline std::vector<ClipRecord> scan_catalog(const fs::path& root) {
  if (!fs::is_directory(root)) throw InputError("dataset root does not exist: " + root.string());
  std::vector<ClipRecord> out;
  for (const fs::path& sdir : detail::sorted_dirs(root)) {
    const std::string sname = sdir.filename().string();
    const auto us = sname.find('_');
    int subject = 0;
    std::optional<Ethnicity> eth;
    if (us != std::string::npos) eth = try_parse_ethnicity(sname.substr(0, us));
    if (!eth || !detail::parse_int(sname.substr(us + 1), subject) || subject < 1)
      throw InputError("malformed subject directory name: " + sdir.string());
    for (const fs::path& cdir : detail::sorted_dirs(sdir)) {
      const std::string cname = cdir.filename().string();
      const auto cus = cname.rfind('_');
      std::optional<Pai> pai;
      int k = 0;
      if (cus != std::string::npos) pai = try_parse_pai(cname.substr(0, cus));
      if (!pai || !detail::parse_int(cname.substr(cus + 1), k) || k < 1)
        throw InputError("malformed sample directory name: " + cdir.string());
      for (const fs::path& mdir : detail::sorted_dirs(cdir)) {
        Modality m;
        try {
          m = parse_modality(mdir.filename().string());
        } catch (const InputError&) {
          throw InputError("malformed modality directory name: " + mdir.string());
        }
        ClipRecord r;
        r.subject_id = subject;
        r.ethnicity = *eth;
        r.modality = m;
        r.pai = *pai;
        r.sample = k;
        r.lighting = lighting_tag(*pai, k);
        r.path = sname + "/" + cname + "/" + mdir.filename().string();
        r.frame_count = detail::count_frames(mdir);
        if (r.frame_count == 0) throw InputError("clip directory has no frames: " + mdir.string());
        if (r.frame_count < 2) throw InputError("clip shorter than 2 frames: " + mdir.string());
        out.push_back(std::move(r));
      }
    }
  }
  return out;
}

inline Clip load_clip(const fs::path& root, const ClipRecord& r) {
  Clip c;
  for (std::size_t i = 0; i < r.frame_count; ++i) c.frames.push_back(read_png(root / r.path / frame_name(i)));
  return c;
}

// ---------------------------------------------------------------------------
// Protocols

struct SplitFilter {
  std::set<Ethnicity> ethnicities;
  std::set<Modality> modalities;
  std::set<Pai> pais;  // includes real for the bona fide videos
  int subject_lo = 1, subject_hi = 500;

  bool matches(const ClipRecord& r) const {
    return ethnicities.contains(r.ethnicity) && modalities.contains(r.modality) && pais.contains(r.pai) &&
           r.subject_id >= subject_lo && r.subject_id <= subject_hi;
  }
};

struct ProtocolSpec {
  int protocol = 1;
  int sub = 1;
  std::array<SplitFilter, 3> splits;  // train, valid, test
  // 3D attack clips (any subject) join the test split when their ethnicity
  // and modality pass the test filter.
  bool include_3d_in_test = true;

  std::string id() const { return std::to_string(protocol) + "_" + std::to_string(sub); }
  const SplitFilter& filter(Split s) const { return splits[static_cast<std::size_t>(s)]; }
};

inline constexpr int kTrainLo = 1, kTrainHi = 200, kValidLo = 201, kValidHi = 300, kTestLo = 301, kTestHi = 500;

inline ProtocolSpec make_protocol(int protocol, int sub, std::set<Ethnicity> train_eth, std::set<Ethnicity> test_eth,
                                  std::set<Modality> train_mod, std::set<Modality> test_mod, std::set<Pai> train_pai,
                                  std::set<Pai> test_pai) {
  ProtocolSpec p;
  p.protocol = protocol;
  p.sub = sub;
  train_pai.insert(Pai::real);
  test_pai.insert(Pai::real);
  p.splits[0] = {train_eth, train_mod, train_pai, kTrainLo, kTrainHi};
  p.splits[1] = {train_eth, train_mod, train_pai, kValidLo, kValidHi};
  p.splits[2] = {test_eth, test_mod, test_pai, kTestLo, kTestHi};
  return p;
}

// The eleven built-in sub-protocols: cross-ethnicity (1), cross-PAI (2),
// cross-modality (3) and cross-ethnicity & PAI (4).
inline std::vector<ProtocolSpec> builtin_protocols() {
  using E = Ethnicity;
  using M = Modality;
  const std::set<E> all_e = {E::A, E::C, E::E};
  const std::set<M> all_m = {M::color, M::depth, M::ir};
  const std::set<Pai> p2d = {Pai::print, Pai::replay};
  const E eth[3] = {E::A, E::C, E::E};
  const M mod[3] = {M::color, M::depth, M::ir};
  std::vector<ProtocolSpec> out;
  for (int s = 0; s < 3; ++s) {
    std::set<E> rest = all_e;
    rest.erase(eth[s]);
    out.push_back(make_protocol(1, s + 1, {eth[s]}, rest, all_m, all_m, p2d, p2d));
  }
  out.push_back(make_protocol(2, 1, all_e, all_e, all_m, all_m, {Pai::print}, {Pai::replay}));
  out.push_back(make_protocol(2, 2, all_e, all_e, all_m, all_m, {Pai::replay}, {Pai::print}));
  for (int s = 0; s < 3; ++s) {
    std::set<M> rest = all_m;
    rest.erase(mod[s]);
    out.push_back(make_protocol(3, s + 1, all_e, all_e, {mod[s]}, rest, p2d, p2d));
  }
  for (int s = 0; s < 3; ++s) {
    std::set<E> rest = all_e;
    rest.erase(eth[s]);
    out.push_back(make_protocol(4, s + 1, {eth[s]}, rest, {mod[s]}, {mod[s]}, {Pai::replay}, {Pai::print}));
  }
  return out;
}

inline std::pair<int, int> parse_protocol_id(const std::string& id) {
  const auto us = id.find('_');
  int p = 0, s = 0;
  if (us == std::string::npos || !detail::parse_int(id.substr(0, us), p) || !detail::parse_int(id.substr(us + 1), s))
    throw InputError("protocol id must look like P_S, got '" + id + "'");
  return {p, s};
}

inline const ProtocolSpec& find_protocol(const std::vector<ProtocolSpec>& table, const std::string& id) {
  for (const auto& p : table)
    if (p.id() == id) return p;
  throw InputError("unknown protocol " + id);
}

namespace detail {
template <typename T, typename Parse>
std::set<T> parse_set(const std::string& csv, Parse parse, const std::string& what) {
  std::set<T> out;
  std::stringstream ss(csv);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    auto v = parse(tok);
    if (!v) throw InputError("unknown " + what + " '" + tok + "'");
    out.insert(*v);
  }
  if (out.empty()) throw InputError("empty " + what + " list");
  return out;
}

template <typename T>
std::string join_set(const std::set<T>& s) {
  std::string out;
  for (const T& v : s) out += (out.empty() ? "" : ",") + to_string(v);
  return out;
}
}  // namespace detail

// Text form, one split per line, '#' comments:
//   <P_S> <split> <ethnicities> <modalities> <pais> <lo>-<hi>
//   1_1 train A color,depth,ir real,print,replay 1-200
inline std::vector<ProtocolSpec> parse_protocol_table(std::istream& in) {
  std::map<std::string, ProtocolSpec> specs;
  std::map<std::string, std::set<Split>> seen;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto h = line.find('#'); h != std::string::npos) line.resize(h);
    std::istringstream ss(line);
    std::string id, split, eth, mod, pai, range;
    if (!(ss >> id)) continue;
    if (!(ss >> split >> eth >> mod >> pai >> range))
      throw InputError("protocol table line " + std::to_string(lineno) + ": expected 6 fields");
    const auto [p, s] = parse_protocol_id(id);
    const Split sp = parse_split(split);
    SplitFilter f;
    f.ethnicities = detail::parse_set<Ethnicity>(eth, try_parse_ethnicity, "ethnicity");
    f.modalities = detail::parse_set<Modality>(
        mod,
        [](const std::string& t) -> std::optional<Modality> {
          try {
            return parse_modality(t);
          } catch (const InputError&) {
            return std::nullopt;
          }
        },
        "modality");
    f.pais = detail::parse_set<Pai>(pai, try_parse_pai, "PAI");
    const auto dash = range.find('-');
    if (dash == std::string::npos || !detail::parse_int(range.substr(0, dash), f.subject_lo) ||
        !detail::parse_int(range.substr(dash + 1), f.subject_hi) || f.subject_lo > f.subject_hi)
      throw InputError("protocol table line " + std::to_string(lineno) + ": bad subject range '" + range + "'");
    auto& spec = specs[id];
    spec.protocol = p;
    spec.sub = s;
    spec.splits[static_cast<std::size_t>(sp)] = f;
    seen[id].insert(sp);
  }
  std::vector<ProtocolSpec> out;
  for (auto& [id, spec] : specs) {
    if (seen[id].size() != 3) throw InputError("protocol " + id + " must define train, valid and test");
    out.push_back(spec);
  }
  return out;
}

inline void write_protocol_table(std::ostream& out, const std::vector<ProtocolSpec>& table) {
  for (const auto& p : table)
    for (Split s : kAllSplits) {
      const SplitFilter& f = p.filter(s);
      out << p.id() << ' ' << to_string(s) << ' ' << detail::join_set(f.ethnicities) << ' '
          << detail::join_set(f.modalities) << ' ' << detail::join_set(f.pais) << ' ' << f.subject_lo << '-'
          << f.subject_hi << '\n';
    }
}

// ---------------------------------------------------------------------------
// Manifests

struct ManifestRow {
  std::string path;
  int label = 0;  // 1 = bona fide
  int subject = 0;
  Ethnicity ethnicity = Ethnicity::A;
  Modality modality = Modality::color;
  Pai pai = Pai::real;
  Split split = Split::train;
  std::size_t frame_count = 0;  // not serialized; filled from the catalog

  std::string sample_dir() const { return path.substr(0, path.rfind('/')); }
};

using Manifest = std::vector<ManifestRow>;

inline ManifestRow to_row(const ClipRecord& r, Split s) {
  return {r.path, r.label(), r.subject_id, r.ethnicity, r.modality, r.pai, s, r.frame_count};
}

struct SplitOptions {
  bool include_3d_in_test = true;
};

// Rows of one split, in catalog order; may be empty.
inline Manifest select(const std::vector<ClipRecord>& catalog, const ProtocolSpec& spec, Split s) {
  Manifest out;
  const SplitFilter& f = spec.filter(s);
  for (const ClipRecord& r : catalog) {
    bool take = f.matches(r);
    if (!take && s == Split::test && spec.include_3d_in_test && is_3d(r.pai))
      take = f.ethnicities.contains(r.ethnicity) && f.modalities.contains(r.modality);
    if (take) out.push_back(to_row(r, s));
  }
  return out;
}

// Train, valid and test manifests; every split must be non-empty.
inline std::array<Manifest, 3> protocol_split(const std::vector<ClipRecord>& catalog, const ProtocolSpec& spec) {
  std::array<Manifest, 3> out;
  for (Split s : kAllSplits) {
    out[static_cast<std::size_t>(s)] = select(catalog, spec, s);
    if (out[static_cast<std::size_t>(s)].empty())
      throw InputError("protocol " + spec.id() + ": " + to_string(s) + " split is empty");
  }
  return out;
}

inline void write_manifest(std::ostream& out, const Manifest& m) {
  for (const auto& r : m)
    out << r.path << ' ' << r.label << ' ' << r.subject << ' ' << to_string(r.ethnicity) << ' '
        << psmmlab::to_string(r.modality) << ' ' << to_string(r.pai) << ' ' << to_string(r.split) << '\n';
}

inline Manifest read_manifest(std::istream& in) {
  Manifest m;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ss(line);
    ManifestRow r;
    std::string eth, mod, pai, split;
    if (!(ss >> r.path >> r.label >> r.subject >> eth >> mod >> pai >> split))
      throw InputError("manifest line " + std::to_string(lineno) + ": expected 7 fields");
    auto e = try_parse_ethnicity(eth);
    auto p = try_parse_pai(pai);
    if (!e || !p) throw InputError("manifest line " + std::to_string(lineno) + ": bad ethnicity or PAI");
    r.ethnicity = *e;
    r.pai = *p;
    r.modality = parse_modality(mod);
    r.split = parse_split(split);
    m.push_back(std::move(r));
  }
  return m;
}

inline void save_manifests(const fs::path& dir, const std::array<Manifest, 3>& splits) {
  fs::create_directories(dir);
  for (Split s : kAllSplits) {
    std::ofstream out(dir / (to_string(s) + ".txt"));
    if (!out) throw InputError("cannot write manifest in " + dir.string());
    write_manifest(out, splits[static_cast<std::size_t>(s)]);
  }
}

// Restores frame counts on manifest rows from the catalog (manifests do not
// carry them).
inline void attach_frame_counts(Manifest& m, const std::vector<ClipRecord>& catalog) {
  std::map<std::string, std::size_t> counts;
  for (const auto& r : catalog) counts[r.path] = r.frame_count;
  for (auto& row : m) {
    auto it = counts.find(row.path);
    if (it == counts.end()) throw InputError("manifest row not in dataset: " + row.path);
    row.frame_count = it->second;
  }
}

struct SplitCounts {
  std::size_t real = 0, fake = 0;
  std::size_t total() const { return real + fake; }
  friend bool operator==(const SplitCounts&, const SplitCounts&) = default;
};

inline SplitCounts count(const Manifest& m) {
  SplitCounts c;
  for (const auto& r : m) (r.label ? c.real : c.fake)++;
  return c;
}

// Published video counts per (sub-protocol, split) for the 500-subject 2D
// subset, real / fake, as printed in the protocol table of the dataset
// release. Test fake counts there also include 3D attacks.
struct ReportedCounts {
  std::string protocol;
  Split split;
  SplitCounts counts;
};

inline std::vector<ReportedCounts> reported_counts() {
  std::vector<ReportedCounts> out;
  auto add3 = [&](int p, Split s, std::size_t real, std::size_t fake) {
    for (int k = 1; k <= 3; ++k) out.push_back({std::to_string(p) + "_" + std::to_string(k), s, {real, fake}});
  };
  add3(1, Split::train, 600, 1800);
  add3(1, Split::valid, 300, 900);
  add3(1, Split::test, 1200, 6600);
  out.push_back({"2_1", Split::train, {1800, 3600}});
  out.push_back({"2_2", Split::train, {1800, 1800}});
  out.push_back({"2_1", Split::valid, {900, 1800}});
  out.push_back({"2_2", Split::valid, {900, 900}});
  out.push_back({"2_1", Split::test, {1800, 4800}});
  out.push_back({"2_2", Split::test, {1800, 6600}});
  add3(3, Split::train, 600, 1800);
  add3(3, Split::valid, 300, 900);
  add3(3, Split::test, 1200, 5600);
  add3(4, Split::train, 600, 600);
  add3(4, Split::valid, 300, 300);
  add3(4, Split::test, 1200, 5400);
  return out;
}

struct CountCheck {
  std::string protocol;
  Split split = Split::train;
  SplitCounts derived, reported;
  bool derivable = true;  // false when the published figure cannot follow from the 2D subset
  std::string note;
  bool matches() const { return derived == reported; }
};

// Compares 2D-subset split sizes of the built-in protocols against the
// published table. Test-split attack counts there include 3D attacks, and the
// protocol-4 rows count three modality streams although a single modality is
// selected; both are reported as non-derivable instead of being matched.
inline std::vector<CountCheck> compare_with_reported(const std::vector<ClipRecord>& catalog) {
  std::vector<CountCheck> out;
  const auto table = builtin_protocols();
  for (const ReportedCounts& rep : reported_counts()) {
    ProtocolSpec spec = find_protocol(table, rep.protocol);
    spec.include_3d_in_test = false;
    CountCheck c;
    c.protocol = rep.protocol;
    c.split = rep.split;
    c.reported = rep.counts;
    c.derived = count(select(catalog, spec, rep.split));
    if (spec.protocol == 4) {
      c.derivable = false;
      c.note = "published protocol-4 counts are three times the single-modality derivation, plus 3D attacks on test";
    } else if (rep.split == Split::test && c.derived.real == c.reported.real) {
      c.derivable = c.derived.fake == c.reported.fake;
      if (!c.derivable) c.note = "published test attack count includes 3D attacks";
    } else if (!c.matches()) {
      c.note = "mismatch";
    }
    out.push_back(std::move(c));
  }
  return out;
}

}  // namespace psmmlab::dataset

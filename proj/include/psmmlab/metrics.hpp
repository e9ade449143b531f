#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <istream>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "psmmlab/error.hpp"

namespace psmmlab::metrics {

struct ScoredSample {
  double score = 0.0;  // bona fide likelihood
  int label = 0;       // 1 = bona fide, 0 = attack
  std::string pai;     // attack instrument, e.g. "print"
  std::string sub_protocol;
  std::string path;
};

struct ErrorRates {
  double apcer = 0.0, bpcer = 0.0, acer = 0.0;
};

struct ClassCounts {
  std::size_t bona = 0, attack = 0;
};

inline ClassCounts class_counts(const std::vector<ScoredSample>& s) {
  ClassCounts c;
  for (const auto& x : s) {
    if (!std::isfinite(x.score)) throw InputError("non-finite score for " + x.path);
    (x.label ? c.bona : c.attack)++;
  }
  if (c.bona == 0 || c.attack == 0) throw InputError("metrics need both bona fide and attack samples");
  return c;
}

inline double acer_from(double apcer, double bpcer) { return (apcer + bpcer) / 2.0; }

// An attack is accepted (an error) when score >= threshold; a bona fide sample
// is rejected when score < threshold. With worst_pai, APCER is the maximum
// over the attack instruments present instead of the pooled rate.
inline ErrorRates apcer_bpcer_acer(const std::vector<ScoredSample>& s, double threshold, bool worst_pai = false) {
  const ClassCounts c = class_counts(s);
  std::size_t accepted = 0, rejected = 0;
  std::map<std::string, std::pair<std::size_t, std::size_t>> per_pai;  // accepted, total
  for (const auto& x : s) {
    if (x.label) {
      rejected += x.score < threshold;
    } else {
      const bool acc = x.score >= threshold;
      accepted += acc;
      auto& [a, n] = per_pai[x.pai];
      a += acc;
      ++n;
    }
  }
  ErrorRates r;
  r.apcer = static_cast<double>(accepted) / static_cast<double>(c.attack);
  if (worst_pai) {
    r.apcer = 0.0;
    for (const auto& [_, an] : per_pai) r.apcer = std::max(r.apcer, static_cast<double>(an.first) / an.second);
  }
  r.bpcer = static_cast<double>(rejected) / static_cast<double>(c.bona);
  r.acer = acer_from(r.apcer, r.bpcer);
  return r;
}

struct RocPoint {
  double threshold = 0.0;
  double fpr = 0.0, tpr = 0.0;
  std::size_t false_accepts = 0, true_accepts = 0;
};

// One point per distinct score (accept when score >= threshold) plus +inf,
// ordered by decreasing threshold, i.e. nondecreasing FPR and TPR.
inline std::vector<RocPoint> roc(const std::vector<ScoredSample>& s) {
  const ClassCounts c = class_counts(s);
  std::vector<ScoredSample> sorted = s;
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.score > b.score; });
  std::vector<RocPoint> out;
  out.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0, 0, 0});
  std::size_t fa = 0, ta = 0;
  for (std::size_t i = 0; i < sorted.size();) {
    const double thr = sorted[i].score;
    for (; i < sorted.size() && sorted[i].score == thr; ++i) (sorted[i].label ? ta : fa)++;
    out.push_back({thr, static_cast<double>(fa) / c.attack, static_cast<double>(ta) / c.bona, fa, ta});
  }
  return out;
}

// Highest TPR among ROC thresholds whose FPR does not exceed the target
// (step function, no interpolation).
inline double tpr_at_fpr(const std::vector<RocPoint>& curve, double target) {
  if (!(target > 0.0 && target <= 1.0)) throw InputError("FPR target must lie in (0, 1]");
  double best = 0.0;
  for (const auto& p : curve)
    if (p.fpr <= target) best = std::max(best, p.tpr);
  return best;
}

struct RocResult {
  std::vector<RocPoint> curve;
  std::vector<double> targets, tpr;
};

inline RocResult roc_and_tpr_at_fpr(const std::vector<ScoredSample>& s, const std::vector<double>& targets) {
  RocResult r;
  r.curve = roc(s);
  r.targets = targets;
  for (double t : targets) r.tpr.push_back(tpr_at_fpr(r.curve, t));
  return r;
}

// Distinct score minimizing |FPR - FNR|; ties go to the lower threshold.
inline double eer_threshold(const std::vector<ScoredSample>& s) {
  const ClassCounts c = class_counts(s);
  std::vector<double> cand;
  for (const auto& x : s) cand.push_back(x.score);
  std::sort(cand.begin(), cand.end());
  cand.erase(std::unique(cand.begin(), cand.end()), cand.end());
  double best_thr = cand.front();
  long long best = std::numeric_limits<long long>::max();
  for (double thr : cand) {
    long long fa = 0, fr = 0;
    for (const auto& x : s) {
      if (x.label)
        fr += x.score < thr;
      else
        fa += x.score >= thr;
    }
    // |fa/attack - fr/bona| scaled by attack*bona to compare exactly.
    const long long diff = std::llabs(fa * static_cast<long long>(c.bona) - fr * static_cast<long long>(c.attack));
    if (diff < best) {
      best = diff;
      best_thr = thr;
    }
  }
  return best_thr;
}

struct MeanStd {
  double mean = 0.0, std = 0.0;
};

// Arithmetic mean and sample standard deviation (n - 1 denominator).
inline MeanStd aggregate_mean_std(const std::vector<double>& v) {
  if (v.size() < 2) throw InputError("aggregation needs at least two values");
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / static_cast<double>(v.size() - 1))};
}

// ---------------------------------------------------------------------------
// Score files: `path score label sub_protocol` per line.

// Attack instrument from a sample path such as "A_0301/print_2[/...]".
inline std::string pai_from_path(const std::string& path) {
  std::stringstream ss(path);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '/')) parts.push_back(part);
  if (parts.size() < 2) return {};
  const std::string& cap = parts[1];
  return cap.substr(0, cap.rfind('_'));
}

inline void write_scores(std::ostream& out, const std::vector<ScoredSample>& s) {
  char buf[64];
  for (const auto& x : s) {
    std::snprintf(buf, sizeof buf, "%.17g", x.score);
    out << x.path << ' ' << buf << ' ' << x.label << ' ' << x.sub_protocol << '\n';
  }
}

inline std::vector<ScoredSample> read_scores(std::istream& in) {
  std::vector<ScoredSample> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    ScoredSample x;
    if (!(ss >> x.path >> x.score >> x.label >> x.sub_protocol) || (x.label != 0 && x.label != 1))
      throw InputError("score file line " + std::to_string(lineno) + ": expected `path score label sub_protocol`");
    x.pai = x.label ? "real" : pai_from_path(x.path);
    out.push_back(std::move(x));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reports

struct EvalReport {
  std::string sub_protocol;
  double threshold = 0.0;
  ErrorRates rates;
  std::vector<double> fpr_targets, tpr;
  std::size_t bona = 0, attack = 0;
};

inline const std::vector<double>& default_fpr_targets() {
  static const std::vector<double> t = {1e-2, 1e-3, 1e-4};
  return t;
}

inline EvalReport evaluate(const std::vector<ScoredSample>& s, double threshold, bool worst_pai = false,
                           const std::vector<double>& targets = default_fpr_targets()) {
  EvalReport r;
  r.sub_protocol = s.empty() ? "" : s.front().sub_protocol;
  r.threshold = threshold;
  r.rates = apcer_bpcer_acer(s, threshold, worst_pai);
  const RocResult roc_res = roc_and_tpr_at_fpr(s, targets);
  r.fpr_targets = targets;
  r.tpr = roc_res.tpr;
  const ClassCounts c = class_counts(s);
  r.bona = c.bona;
  r.attack = c.attack;
  return r;
}

inline std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

inline void write_kv(std::ostream& out, const EvalReport& r) {
  out << "sub_protocol=" << r.sub_protocol << '\n'
      << "threshold=" << fmt(r.threshold) << '\n'
      << "apcer=" << fmt(r.rates.apcer) << '\n'
      << "bpcer=" << fmt(r.rates.bpcer) << '\n'
      << "acer=" << fmt(r.rates.acer) << '\n'
      << "bona_fide=" << r.bona << '\n'
      << "attacks=" << r.attack << '\n';
  for (std::size_t i = 0; i < r.fpr_targets.size(); ++i)
    out << "tpr@fpr=" << fmt(r.fpr_targets[i]) << ' ' << fmt(r.tpr[i]) << '\n';
}

inline std::map<std::string, std::string> read_kv(std::istream& in) {
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (line.empty() || line[0] == '#' || eq == std::string::npos) continue;
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

inline EvalReport report_from_kv(const std::map<std::string, std::string>& kv) {
  auto get = [&](const char* key) {
    auto it = kv.find(key);
    if (it == kv.end()) throw InputError(std::string("report lacks ") + key);
    return it->second;
  };
  auto num = [&](const char* key) {
    const std::string v = get(key);
    char* end = nullptr;
    const double d = std::strtod(v.c_str(), &end);
    if (end == v.c_str() || *end != '\0') throw InputError(std::string("report value for ") + key + " is not a number");
    return d;
  };
  EvalReport r;
  r.sub_protocol = get("sub_protocol");
  r.threshold = num("threshold");
  r.rates = {num("apcer"), num("bpcer"), num("acer")};
  return r;
}

// Per-sub-protocol rows plus an Avg±Std row (omitted, with a notice, for a
// single row). Values are percentages. Rows must share one protocol id.
struct AggregateTable {
  std::vector<EvalReport> rows;
  std::optional<MeanStd> apcer, bpcer, acer;
  std::string notice;
};

inline std::string protocol_of(const std::string& sub) { return sub.substr(0, sub.find('_')); }

inline AggregateTable aggregate(std::vector<EvalReport> rows) {
  if (rows.empty()) throw InputError("report needs at least one sub-protocol");
  for (const auto& r : rows)
    if (protocol_of(r.sub_protocol) != protocol_of(rows.front().sub_protocol))
      throw InputError("mixed protocol ids: " + rows.front().sub_protocol + " and " + r.sub_protocol);
  std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.sub_protocol < b.sub_protocol; });
  AggregateTable t;
  t.rows = std::move(rows);
  if (t.rows.size() < 2) {
    t.notice = "single sub-protocol: Avg+-Std row omitted";
    return t;
  }
  std::vector<double> a, b, c;
  for (const auto& r : t.rows) {
    a.push_back(100.0 * r.rates.apcer);
    b.push_back(100.0 * r.rates.bpcer);
    c.push_back(100.0 * r.rates.acer);
  }
  t.apcer = aggregate_mean_std(a);
  t.bpcer = aggregate_mean_std(b);
  t.acer = aggregate_mean_std(c);
  return t;
}

inline void write_table(std::ostream& out, const AggregateTable& t) {
  char buf[160];
  out << "Prot.    APCER(%)     BPCER(%)     ACER(%)\n";
  for (const auto& r : t.rows) {
    std::snprintf(buf, sizeof buf, "%-8s %-12.1f %-12.1f %-12.1f\n", r.sub_protocol.c_str(), 100 * r.rates.apcer,
                  100 * r.rates.bpcer, 100 * r.rates.acer);
    out << buf;
  }
  if (t.acer) {
    std::snprintf(buf, sizeof buf, "%-8s %4.1f+-%-6.1f %4.1f+-%-6.1f %4.1f+-%-6.1f\n", "Avg+-Std", t.apcer->mean,
                  t.apcer->std, t.bpcer->mean, t.bpcer->std, t.acer->mean, t.acer->std);
    out << buf;
  } else {
    out << "# " << t.notice << '\n';
  }
}

inline void write_table_kv(std::ostream& out, const AggregateTable& t) {
  for (const auto& r : t.rows) {
    out << r.sub_protocol << ".apcer=" << fmt(100 * r.rates.apcer) << '\n'
        << r.sub_protocol << ".bpcer=" << fmt(100 * r.rates.bpcer) << '\n'
        << r.sub_protocol << ".acer=" << fmt(100 * r.rates.acer) << '\n';
  }
  if (t.acer) {
    out << "avg.apcer=" << fmt(t.apcer->mean) << "\nstd.apcer=" << fmt(t.apcer->std) << '\n'
        << "avg.bpcer=" << fmt(t.bpcer->mean) << "\nstd.bpcer=" << fmt(t.bpcer->std) << '\n'
        << "avg.acer=" << fmt(t.acer->mean) << "\nstd.acer=" << fmt(t.acer->std) << '\n';
  }
}

}  // namespace psmmlab::metrics

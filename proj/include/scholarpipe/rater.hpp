#pragma once

// Validation math: stratified sample planning, precision/recall/F1, Cohen's
// kappa, Krippendorff's alpha (nominal), and coder/machine adjudication.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "json.hpp"
#include "scholarpipe/error.hpp"
#include "scholarpipe/io.hpp"
#include "scholarpipe/rng.hpp"
#include "scholarpipe/semclass.hpp"
#include "scholarpipe/text.hpp"

namespace scholarpipe::rater {

using semclass::MethodLabel;
using ordered_json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Sample planning

struct SamplePlan {
  std::uint64_t inflated_target = 0;
  std::vector<std::uint64_t> allocations;  // one per stratum, input order
};

inline std::uint64_t inflate_target(std::uint64_t target, double inflation) {
  // The epsilon absorbs binary representation error (825 * 1.105 is
  // 911.625 exactly, 100 * 1.1 is not quite 110).
  return static_cast<std::uint64_t>(std::floor(static_cast<double>(target) * (1.0 + inflation) + 1e-9));
}

/// Equal allocation across non-empty strata, capped at each stratum's frame
/// size, with the remainder going one each to the earliest strata.
inline SamplePlan plan_sample(const std::vector<std::uint64_t>& frame_sizes, std::uint64_t target, double inflation) {
  if (target == 0) throw Error(Errc::InvalidArgument, "target must be positive");
  if (inflation < 0) throw Error(Errc::InvalidArgument, "inflation must be non-negative");
  SamplePlan plan{inflate_target(target, inflation), std::vector<std::uint64_t>(frame_sizes.size(), 0)};
  std::uint64_t frame_total = 0;
  for (auto f : frame_sizes) frame_total += f;
  if (frame_total < plan.inflated_target)
    throw Error(Errc::FrameTooSmall, "frame of " + std::to_string(frame_total) + " cannot supply " +
                                         std::to_string(plan.inflated_target));

  std::vector<std::size_t> open;
  for (std::size_t i = 0; i < frame_sizes.size(); ++i)
    if (frame_sizes[i] > 0) open.push_back(i);
  std::uint64_t remaining = plan.inflated_target;

  // Water filling: strata too small for an equal share take everything.
  for (bool capped = true; capped && !open.empty();) {
    capped = false;
    const std::uint64_t share = remaining / open.size();
    std::vector<std::size_t> still_open;
    for (auto i : open) {
      if (frame_sizes[i] <= share) {
        plan.allocations[i] = frame_sizes[i];
        remaining -= frame_sizes[i];
        capped = true;
      } else {
        still_open.push_back(i);
      }
    }
    open = std::move(still_open);
  }
  if (!open.empty()) {
    const std::uint64_t base = remaining / open.size();
    std::uint64_t extra = remaining % open.size();
    for (auto i : open) {
      plan.allocations[i] = base + (extra > 0 ? 1 : 0);
      if (extra > 0) --extra;
    }
  }
  return plan;
}

struct FrameItem {
  std::string work_id;
  std::string stratum;
};

/// Draws the planned number of works from each stratum without
/// replacement. Strata are ordered by key; items keep frame order.
inline std::vector<FrameItem> draw_stratified_sample(const std::vector<FrameItem>& frame, std::uint64_t target,
                                                     double inflation, std::uint64_t seed,
                                                     SamplePlan* plan_out = nullptr) {
  std::map<std::string, std::vector<const FrameItem*>> strata;
  for (const auto& item : frame) strata[item.stratum].push_back(&item);
  std::vector<std::uint64_t> sizes;
  for (const auto& [_, items] : strata) sizes.push_back(items.size());
  auto plan = plan_sample(sizes, target, inflation);

  std::vector<FrameItem> out;
  std::size_t s = 0;
  for (auto& [key, items] : strata) {
    Rng rng(derive_seed(seed, key));
    auto pool = items;
    for (std::uint64_t k = 0; k < plan.allocations[s]; ++k) {
      auto j = k + rng.below(pool.size() - k);
      std::swap(pool[k], pool[j]);
      out.push_back(*pool[k]);
    }
    ++s;
  }
  if (plan_out) *plan_out = std::move(plan);
  return out;
}

// ---------------------------------------------------------------------------
// Confusion metrics

// Rows: prediction; columns: truth.
struct ConfusionTable {
  std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;

  std::uint64_t total() const { return tp + fp + fn + tn; }
};

inline double round1(double v) { return std::round(v * 10.0) / 10.0; }

/// Harmonic mean of precision and recall (both in percent).
inline double f1_from(double precision, double recall) {
  if (precision + recall == 0.0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

struct PrfReport {
  ConfusionTable table;
  std::optional<double> precision;  // percent, full precision
  std::optional<double> recall;
  std::optional<double> f1;

  ordered_json to_json() const {
    auto pct = [](const std::optional<double>& v) { return v ? ordered_json(round1(*v)) : ordered_json(nullptr); };
    return {{"tp", table.tp}, {"fp", table.fp}, {"fn", table.fn}, {"tn", table.tn},
            {"precision", pct(precision)}, {"recall", pct(recall)}, {"f1", pct(f1)}};
  }
};

inline PrfReport prf_from_table(const ConfusionTable& t) {
  PrfReport r{t, std::nullopt, std::nullopt, std::nullopt};
  if (t.tp + t.fp > 0) r.precision = 100.0 * static_cast<double>(t.tp) / static_cast<double>(t.tp + t.fp);
  if (t.tp + t.fn > 0) r.recall = 100.0 * static_cast<double>(t.tp) / static_cast<double>(t.tp + t.fn);
  if (r.precision && r.recall) r.f1 = f1_from(*r.precision, *r.recall);
  return r;
}

template <typename Label>
ConfusionTable confusion(const std::vector<Label>& pred, const std::vector<Label>& truth, const Label& positive) {
  if (pred.size() != truth.size()) throw Error(Errc::DimensionMismatch, "prediction/truth length mismatch");
  ConfusionTable t;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] == positive, g = truth[i] == positive;
    if (p && g) ++t.tp;
    else if (p) ++t.fp;
    else if (g) ++t.fn;
    else ++t.tn;
  }
  return t;
}

/// Precision, recall and F1 for one positive class. Undefined ratios are
/// reported as absent.
template <typename Label>
PrfReport prf(const std::vector<Label>& pred, const std::vector<Label>& truth, const Label& positive) {
  return prf_from_table(confusion(pred, truth, positive));
}

/// Cohen's kappa for a square agreement matrix (rows: rater A, cols: rater B).
inline double cohens_kappa(const std::vector<std::vector<double>>& m) {
  const std::size_t k = m.size();
  double n = 0, diag = 0;
  std::vector<double> rows(k, 0), cols(k, 0);
  for (std::size_t i = 0; i < k; ++i) {
    if (m[i].size() != k) throw Error(Errc::DimensionMismatch, "agreement matrix must be square");
    for (std::size_t j = 0; j < k; ++j) {
      n += m[i][j];
      rows[i] += m[i][j];
      cols[j] += m[i][j];
    }
    diag += m[i][i];
  }
  if (n <= 0) throw Error(Errc::InvalidArgument, "empty agreement table");
  const double po = diag / n;
  double pe = 0;
  for (std::size_t i = 0; i < k; ++i) pe += (rows[i] / n) * (cols[i] / n);
  if (pe == 1.0) return po == 1.0 ? 1.0 : 0.0;
  return (po - pe) / (1.0 - pe);
}

inline double cohens_kappa(const ConfusionTable& t) {
  return cohens_kappa({{static_cast<double>(t.tp), static_cast<double>(t.fp)},
                       {static_cast<double>(t.fn), static_cast<double>(t.tn)}});
}

/// Krippendorff's alpha for nominal data via the coincidence matrix. Rows of
/// `units` are works, columns coders; missing entries are nullopt. Units
/// with fewer than two values are not pairable and are skipped. A universe
/// with a single observed value yields 1.
inline double krippendorff_alpha(const std::vector<std::vector<std::optional<int>>>& units) {
  std::map<int, std::size_t> index;
  for (const auto& u : units)
    for (const auto& v : u)
      if (v) index.emplace(*v, 0);
  std::size_t k = 0;
  for (auto& [_, i] : index) i = k++;

  std::vector<std::vector<double>> o(k, std::vector<double>(k, 0.0));
  std::size_t pairable = 0;
  for (const auto& u : units) {
    std::vector<std::size_t> vals;
    for (const auto& v : u)
      if (v) vals.push_back(index[*v]);
    if (vals.size() < 2) continue;
    ++pairable;
    const double w = 1.0 / static_cast<double>(vals.size() - 1);
    for (std::size_t a = 0; a < vals.size(); ++a)
      for (std::size_t b = 0; b < vals.size(); ++b)
        if (a != b) o[vals[a]][vals[b]] += w;
  }
  if (pairable == 0) throw Error(Errc::InvalidArgument, "no unit has two or more values");

  std::vector<double> nc(k, 0.0);
  double n = 0;
  for (std::size_t c = 0; c < k; ++c)
    for (std::size_t d = 0; d < k; ++d) {
      nc[c] += o[c][d];
      n += o[c][d];
    }
  double observed = 0, expected = 0;
  for (std::size_t c = 0; c < k; ++c)
    for (std::size_t d = 0; d < k; ++d)
      if (c != d) {
        observed += o[c][d];
        expected += nc[c] * nc[d];
      }
  if (expected == 0.0) return 1.0;
  return 1.0 - (n - 1.0) * observed / expected;
}

// ---------------------------------------------------------------------------
// Coder labels and adjudication

inline constexpr std::string_view kAdjudicatedCoder = "ADJUDICATED";

struct CoderLabel {
  std::string work_id;
  std::string coder_id;
  bool q1_has_methods = false;
  bool q2_is_ai = false;  // meaningful iff q1_has_methods
};

inline MethodLabel label_from_answers(bool q1, bool q2) {
  if (!q1) return MethodLabel::NoMethods;
  return q2 ? MethodLabel::AIMethods : MethodLabel::NonAIMethods;
}

/// Reads the work_id,coder_id,q1,q2 CSV (0/1 answers, header required).
inline std::vector<CoderLabel> read_coder_labels(const std::filesystem::path& path) {
  io::LineReader reader(path);
  auto header = reader.next();
  if (!header) throw Error(Errc::MalformedRecord, path.string() + ": empty label file");
  auto cols = io::parse_csv_line(*header);
  auto col = [&](std::string_view name) {
    for (std::size_t i = 0; i < cols.size(); ++i)
      if (text::trim(cols[i]) == name) return i;
    throw Error(Errc::MalformedRecord, path.string() + ": missing column " + std::string(name));
  };
  const auto iw = col("work_id"), ic = col("coder_id"), i1 = col("q1"), i2 = col("q2");
  auto bit = [&](const std::string& v) {
    auto t = text::trim(v);
    if (t == "1") return true;
    if (t == "0" || t.empty()) return false;
    throw Error(Errc::MalformedRecord, path.string() + ": answers must be 0 or 1, got '" + std::string(t) + "'");
  };
  std::vector<CoderLabel> out;
  while (auto line = reader.next()) {
    if (text::trim(*line).empty()) continue;
    auto f = io::parse_csv_line(*line);
    if (f.size() < cols.size()) throw Error(Errc::MalformedRecord, path.string() + ": short row");
    out.push_back({std::string(text::trim(f[iw])), std::string(text::trim(f[ic])), bit(f[i1]), bit(f[i2])});
  }
  return out;
}

struct AdjudicatedWork {
  std::string work_id;
  std::array<CoderLabel, 3> coders;
  MethodLabel consensus = MethodLabel::NoMethods;
  std::optional<std::optional<MethodLabel>> machine;  // outer: seen by the machine; inner: absent = Unclassifiable
  bool flagged = false;  // consensus and machine disagree
  bool overridden = false;
  MethodLabel ground_truth = MethodLabel::NoMethods;
};

/// Step 1: majority of the three coders on Q1, and on "Q1 and Q2" for the
/// AI question. Step 2: works whose consensus disagrees with the machine are
/// flagged; a reviewed label (coder_id ADJUDICATED) overrides the consensus.
inline std::vector<AdjudicatedWork> adjudicate(const std::vector<CoderLabel>& labels,
                                               const std::unordered_map<std::string, std::optional<MethodLabel>>& machine) {
  std::map<std::string, std::vector<CoderLabel>> by_work;
  std::map<std::string, CoderLabel> overrides;
  for (const auto& l : labels) {
    if (l.coder_id == kAdjudicatedCoder) overrides[l.work_id] = l;
    else by_work[l.work_id].push_back(l);
  }
  for (const auto& [id, _] : overrides)
    if (!by_work.count(id)) throw Error(Errc::IncompleteTriplet, "override for unlabeled work " + id);

  std::vector<AdjudicatedWork> out;
  for (auto& [id, ls] : by_work) {
    std::set<std::string> coders;
    for (const auto& l : ls) coders.insert(l.coder_id);
    if (ls.size() != 3 || coders.size() != 3)
      throw Error(Errc::IncompleteTriplet, "work " + id + " has " + std::to_string(ls.size()) + " coder labels");
    AdjudicatedWork w;
    w.work_id = id;
    std::copy(ls.begin(), ls.end(), w.coders.begin());
    int q1 = 0, ai = 0;
    for (const auto& l : ls) {
      q1 += l.q1_has_methods;
      ai += l.q1_has_methods && l.q2_is_ai;
    }
    w.consensus = label_from_answers(q1 >= 2, ai >= 2);
    if (auto it = machine.find(id); it != machine.end()) w.machine = it->second;
    w.flagged = w.machine && *w.machine && **w.machine != w.consensus;
    w.ground_truth = w.consensus;
    if (auto it = overrides.find(id); it != overrides.end()) {
      w.ground_truth = label_from_answers(it->second.q1_has_methods, it->second.q2_is_ai);
      w.overridden = true;
    }
    out.push_back(std::move(w));
  }
  return out;
}

struct TaskReport {
  PrfReport prf;
  double kappa = 0.0;
  std::size_t n = 0;

  ordered_json to_json() const {
    auto j = prf.to_json();
    j["cohen_kappa"] = kappa;
    j["n"] = n;
    return j;
  }
};

struct AgreementReport {
  TaskReport methods_vs_consensus;
  TaskReport methods_vs_truth;
  std::optional<TaskReport> ai_vs_consensus;
  std::optional<TaskReport> ai_vs_truth;
  double alpha_q1 = 0.0;
  std::optional<double> alpha_q2;
  std::size_t flagged = 0;
  std::size_t overridden = 0;
  std::size_t without_machine_label = 0;

  ordered_json to_json() const {
    ordered_json j;
    j["methods_identification"] = {{"vs_coders", methods_vs_consensus.to_json()},
                                   {"vs_ground_truth", methods_vs_truth.to_json()}};
    j["ai_classification"] = {
        {"vs_coders", ai_vs_consensus ? ai_vs_consensus->to_json() : ordered_json(nullptr)},
        {"vs_ground_truth", ai_vs_truth ? ai_vs_truth->to_json() : ordered_json(nullptr)}};
    j["krippendorff_alpha"] = {{"q1", alpha_q1}, {"q2", alpha_q2 ? ordered_json(*alpha_q2) : ordered_json(nullptr)}};
    j["flagged_for_review"] = flagged;
    j["overridden"] = overridden;
    j["without_machine_label"] = without_machine_label;
    return j;
  }
};

namespace detail {

inline TaskReport task(const std::vector<bool>& pred, const std::vector<bool>& truth) {
  TaskReport r;
  r.prf = prf(pred, truth, true);
  r.n = pred.size();
  r.kappa = r.n ? cohens_kappa(r.prf.table) : 0.0;
  return r;
}

}  // namespace detail

/// Machine vs coders and vs ground truth for both questions. The AI
/// question is scored only on works whose reference label has methods.
inline AgreementReport evaluate(const std::vector<AdjudicatedWork>& works) {
  AgreementReport rep;
  std::vector<bool> p1c, t1c, p1g, t1g, p2c, t2c, p2g, t2g;
  std::vector<std::vector<std::optional<int>>> q1_units, q2_units;
  for (const auto& w : works) {
    rep.flagged += w.flagged;
    rep.overridden += w.overridden;
    std::vector<std::optional<int>> u1, u2;
    for (const auto& c : w.coders) {
      u1.push_back(c.q1_has_methods ? 1 : 0);
      u2.push_back(c.q1_has_methods ? std::optional<int>(c.q2_is_ai ? 1 : 0) : std::nullopt);
    }
    q1_units.push_back(std::move(u1));
    q2_units.push_back(std::move(u2));
    if (!w.machine || !*w.machine) {
      ++rep.without_machine_label;
      continue;
    }
    const auto m = **w.machine;
    const bool m_methods = m != MethodLabel::NoMethods, m_ai = m == MethodLabel::AIMethods;
    p1c.push_back(m_methods);
    t1c.push_back(w.consensus != MethodLabel::NoMethods);
    p1g.push_back(m_methods);
    t1g.push_back(w.ground_truth != MethodLabel::NoMethods);
    if (w.consensus != MethodLabel::NoMethods) {
      p2c.push_back(m_ai);
      t2c.push_back(w.consensus == MethodLabel::AIMethods);
    }
    if (w.ground_truth != MethodLabel::NoMethods) {
      p2g.push_back(m_ai);
      t2g.push_back(w.ground_truth == MethodLabel::AIMethods);
    }
  }
  rep.methods_vs_consensus = detail::task(p1c, t1c);
  rep.methods_vs_truth = detail::task(p1g, t1g);
  if (!p2c.empty()) rep.ai_vs_consensus = detail::task(p2c, t2c);
  if (!p2g.empty()) rep.ai_vs_truth = detail::task(p2g, t2g);
  if (!q1_units.empty()) rep.alpha_q1 = krippendorff_alpha(q1_units);
  try {
    rep.alpha_q2 = krippendorff_alpha(q2_units);
  } catch (const Error&) {
    rep.alpha_q2.reset();
  }
  return rep;
}

}  // namespace scholarpipe::rater

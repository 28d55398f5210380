#pragma once

// Descriptive indicators over classified works: yearly adoption/engagement
// series, growth timing, topic concentration, visibility, retractions and
// country aggregates.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "scholarpipe/corpus.hpp"
#include "scholarpipe/error.hpp"
#include "scholarpipe/io.hpp"
#include "scholarpipe/semclass.hpp"

namespace scholarpipe::indicators {

using semclass::MethodLabel;

inline constexpr std::string_view kMissingGroup = "NA";

/// One work joined with its classification and match flags.
struct LabeledWork {
  std::string work_id;
  int year = 0;
  std::string domain;
  std::string field;
  std::optional<std::string> topic;
  std::optional<MethodLabel> label;  // absent = Unclassifiable
  bool engaged_ai = false;
  std::uint32_t citations_3y = 0;
  bool retracted = false;
  std::optional<std::string> country;
  bool cites_cs = false;
  bool references_resolved = false;
  std::string work_type;
  std::string language;

  bool uses_method() const {
    return label && (*label == MethodLabel::AIMethods || *label == MethodLabel::NonAIMethods);
  }
};

inline nlohmann::ordered_json to_json(const LabeledWork& w) {
  nlohmann::ordered_json j;
  auto opt = [](const std::optional<std::string>& v) { return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr); };
  j["work_id"] = w.work_id;
  j["year"] = w.year;
  j["work_type"] = w.work_type;
  j["language"] = w.language;
  j["domain"] = w.domain;
  j["field"] = w.field;
  j["topic"] = opt(w.topic);
  j["label"] = semclass::label_or_unclassifiable(w.label);
  j["engaged_ai"] = w.engaged_ai;
  j["citations_3y"] = w.citations_3y;
  j["retracted"] = w.retracted;
  j["country"] = opt(w.country);
  j["cites_cs"] = w.cites_cs;
  j["references_resolved"] = w.references_resolved;
  return j;
}

inline LabeledWork labeled_work_from_json(const nlohmann::json& j) {
  auto opt = [&](const char* k) -> std::optional<std::string> {
    auto it = j.find(k);
    if (it == j.end() || it->is_null()) return std::nullopt;
    return it->get<std::string>();
  };
  LabeledWork w;
  w.work_id = j.at("work_id").get<std::string>();
  w.year = j.at("year").get<int>();
  w.work_type = j.value("work_type", "");
  w.language = j.value("language", "");
  w.domain = j.value("domain", std::string(kMissingGroup));
  w.field = j.value("field", std::string(kMissingGroup));
  w.topic = opt("topic");
  w.label = semclass::parse_label(j.at("label").get<std::string>());
  w.engaged_ai = j.value("engaged_ai", false);
  w.citations_3y = j.value("citations_3y", 0u);
  w.retracted = j.value("retracted", false);
  w.country = opt("country");
  w.cites_cs = j.value("cites_cs", false);
  w.references_resolved = j.value("references_resolved", false);
  return w;
}

enum class Level { Domain, Field };

inline const std::string& group_of(const LabeledWork& w, Level level) {
  return level == Level::Domain ? w.domain : w.field;
}

struct Cell {
  std::uint64_t numerator = 0;
  std::uint64_t denominator = 0;

  std::optional<double> value() const {
    if (denominator == 0) return std::nullopt;
    return 100.0 * static_cast<double>(numerator) / static_cast<double>(denominator);
  }
  bool operator==(const Cell&) const = default;
};

/// Yearly numerator/denominator counts per group; values are percentages.
class IndicatorSeries {
 public:
  IndicatorSeries() = default;
  explicit IndicatorSeries(std::string metric) : metric_(std::move(metric)) {}

  void add(const std::string& group, int year, std::uint64_t num, std::uint64_t den) {
    auto& c = cells_[group][year];
    c.numerator += num;
    c.denominator += den;
  }

  IndicatorSeries& merge(const IndicatorSeries& other) {
    for (const auto& [g, years] : other.cells_)
      for (const auto& [y, c] : years) add(g, y, c.numerator, c.denominator);
    return *this;
  }

  std::optional<double> value(const std::string& group, int year) const {
    auto g = cells_.find(group);
    if (g == cells_.end()) return std::nullopt;
    auto y = g->second.find(year);
    if (y == g->second.end()) return std::nullopt;
    return y->second.value();
  }

  // Defined points only.
  std::map<int, double> values(const std::string& group) const {
    std::map<int, double> out;
    if (auto g = cells_.find(group); g != cells_.end())
      for (const auto& [y, c] : g->second)
        if (auto v = c.value()) out[y] = *v;
    return out;
  }

  const std::string& metric() const { return metric_; }
  const std::map<std::string, std::map<int, Cell>>& cells() const { return cells_; }
  bool operator==(const IndicatorSeries& o) const { return cells_ == o.cells_; }

 private:
  std::string metric_;
  std::map<std::string, std::map<int, Cell>> cells_;
};

/// AI adoption: AIMethods over works using any method (AI + non-AI).
inline IndicatorSeries adoption_series(const std::vector<LabeledWork>& works, Level level) {
  IndicatorSeries s("adoption");
  for (const auto& w : works)
    if (w.uses_method()) s.add(group_of(w, level), w.year, *w.label == MethodLabel::AIMethods, 1);
  return s;
}

/// AI engagement: works whose abstract has an AI term, over the same
/// denominator as adoption.
inline IndicatorSeries engagement_series(const std::vector<LabeledWork>& works, Level level) {
  IndicatorSeries s("engagement");
  for (const auto& w : works)
    if (w.uses_method()) s.add(group_of(w, level), w.year, w.engaged_ai, 1);
  return s;
}

/// Share of classified works reporting any method.
inline IndicatorSeries method_share_series(const std::vector<LabeledWork>& works, Level level) {
  IndicatorSeries s("any_method");
  for (const auto& w : works)
    if (w.label) s.add(group_of(w, level), w.year, w.uses_method(), 1);
  return s;
}

/// Engagement minus adoption in percentage points, where both are defined.
/// May be negative.
inline std::map<std::string, std::map<int, double>> discussion_proxy(const IndicatorSeries& engagement,
                                                                     const IndicatorSeries& adoption) {
  std::map<std::string, std::map<int, double>> out;
  for (const auto& [g, years] : engagement.cells())
    for (const auto& [y, c] : years) {
      auto e = c.value();
      auto a = adoption.value(g, y);
      if (e && a) out[g][y] = *e - *a;
    }
  return out;
}

inline constexpr int kOnsetAfterYear = 2004;
inline constexpr int kOnsetRun = 5;

/// First year after 2004 followed by five consecutive increases. Every
/// year in the run must be present.
inline std::optional<int> growth_onset(const std::map<int, double>& values) {
  for (const auto& [y, _] : values) {
    if (y <= kOnsetAfterYear) continue;
    bool ok = true;
    for (int k = 1; k <= kOnsetRun && ok; ++k) {
      auto cur = values.find(y + k), prev = values.find(y + k - 1);
      ok = cur != values.end() && prev != values.end() && cur->second > prev->second;
    }
    if (ok) return y;
  }
  return std::nullopt;
}

struct GrowthMultiple {
  double ratio = 0.0;
  double annual_rate = 0.0;            // over y1 - y0 compounding periods
  double annual_rate_inclusive = 0.0;  // over y1 - y0 + 1 periods
};

inline GrowthMultiple growth_multiple(double v0, double v1, int y0, int y1) {
  if (v0 <= 0.0) throw Error(Errc::ZeroBase, "growth base value must be positive");
  if (y1 <= y0) throw Error(Errc::InvalidArgument, "growth needs y1 > y0");
  GrowthMultiple g;
  g.ratio = v1 / v0;
  g.annual_rate = std::pow(g.ratio, 1.0 / (y1 - y0)) - 1.0;
  g.annual_rate_inclusive = std::pow(g.ratio, 1.0 / (y1 - y0 + 1)) - 1.0;
  return g;
}

inline GrowthMultiple growth_multiple(const IndicatorSeries& s, const std::string& group, int y0, int y1) {
  auto v0 = s.value(group, y0), v1 = s.value(group, y1);
  if (!v0 || *v0 <= 0.0) throw Error(Errc::ZeroBase, "no positive value for " + group + " in " + std::to_string(y0));
  if (!v1) throw Error(Errc::InvalidArgument, "no value for " + group + " in " + std::to_string(y1));
  return growth_multiple(*v0, *v1, y0, y1);
}

using TopicDistribution = std::map<std::string, std::uint64_t>;

/// Percentage of works in the five most frequent topics. Ties at equal
/// counts are ordered by topic id.
inline double top5_share(const TopicDistribution& dist) {
  std::vector<std::pair<std::string, std::uint64_t>> v(dist.begin(), dist.end());
  std::uint64_t total = 0;
  for (const auto& [_, c] : v) total += c;
  if (total == 0) throw Error(Errc::InvalidArgument, "empty topic distribution");
  std::stable_sort(v.begin(), v.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  std::uint64_t top = 0;
  for (std::size_t i = 0; i < v.size() && i < 5; ++i) top += v[i].second;
  return 100.0 * static_cast<double>(top) / static_cast<double>(total);
}

/// Shannon entropy of the observed proportions divided by ln K, with K the
/// size of the group's topic universe.
inline double normalized_entropy(const TopicDistribution& dist, std::size_t universe) {
  if (universe < 2) throw Error(Errc::SingleTopicUniverse, "entropy needs at least two topics");
  std::uint64_t total = 0;
  std::size_t observed = 0;
  for (const auto& [_, c] : dist) {
    total += c;
    observed += c > 0;
  }
  if (total == 0) throw Error(Errc::InvalidArgument, "empty topic distribution");
  if (observed > universe) throw Error(Errc::InvalidArgument, "more observed topics than the universe holds");
  double h = 0;
  for (const auto& [_, c] : dist) {
    if (c == 0) continue;
    const double p = static_cast<double>(c) / static_cast<double>(total);
    h -= p * std::log(p);
  }
  return h / std::log(static_cast<double>(universe));
}

struct VisibilityFlags {
  bool cited_once = false;
  bool highly_cited = false;
};

inline constexpr std::uint32_t kHighlyCited = 7;

template <typename Work>
VisibilityFlags visibility_flags(const Work& w) {
  return {w.citations_3y >= 1, w.citations_3y >= kHighlyCited};
}

/// Retracted works per 1,000 publications.
inline double retraction_rate(std::uint64_t retracted, std::uint64_t publications) {
  if (publications == 0) throw Error(Errc::InvalidArgument, "retraction rate needs publications");
  return 1000.0 * static_cast<double>(retracted) / static_cast<double>(publications);
}

// ---------------------------------------------------------------------------
// Geography

inline constexpr std::uint64_t kMinPopulation = 1'000'000;
inline constexpr std::uint64_t kMinPublications = 100;

struct CountryAggregate {
  std::string country;
  std::uint64_t population = 0;
  std::uint64_t publications = 0;
  std::uint64_t ai_publications = 0;
  double rate_per_100k = 0.0;
  double pct_ai = 0.0;
};

struct CountryReport {
  std::vector<CountryAggregate> included;
  std::vector<CountryAggregate> excluded;  // below a threshold
  std::vector<std::string> missing_population;
  std::uint64_t excluded_works = 0;  // works of excluded or unknown-population countries
  std::uint64_t unattributed_works = 0;
};

/// Countries with at least one million people and 100 publications, by
/// first-author affiliation. Unclassifiable works are left out.
inline CountryReport country_stats(const std::vector<LabeledWork>& works,
                                   const std::map<std::string, std::uint64_t>& population) {
  std::map<std::string, CountryAggregate> agg;
  CountryReport rep;
  for (const auto& w : works) {
    if (!w.label) continue;
    if (!w.country) {
      ++rep.unattributed_works;
      continue;
    }
    auto& a = agg[*w.country];
    a.country = *w.country;
    ++a.publications;
    a.ai_publications += *w.label == MethodLabel::AIMethods;
  }
  for (auto& [code, a] : agg) {
    auto pop = population.find(code);
    if (pop == population.end()) {
      rep.missing_population.push_back(code);
      rep.excluded_works += a.publications;
      continue;
    }
    a.population = pop->second;
    a.rate_per_100k = a.population ? 100000.0 * static_cast<double>(a.ai_publications) / static_cast<double>(a.population) : 0.0;
    a.pct_ai = 100.0 * static_cast<double>(a.ai_publications) / static_cast<double>(a.publications);
    if (a.population >= kMinPopulation && a.publications >= kMinPublications) {
      rep.included.push_back(a);
    } else {
      rep.excluded.push_back(a);
      rep.excluded_works += a.publications;
    }
  }
  return rep;
}

/// country,population CSV with a header row.
inline std::map<std::string, std::uint64_t> read_population_table(const std::filesystem::path& path) {
  io::LineReader reader(path);
  auto header = reader.next();
  if (!header) throw Error(Errc::Config, path.string() + ": empty population table");
  std::map<std::string, std::uint64_t> out;
  while (auto line = reader.next()) {
    if (text::trim(*line).empty()) continue;
    auto f = io::parse_csv_line(*line);
    if (f.size() < 2) throw Error(Errc::Config, path.string() + ": short row");
    try {
      out[std::string(text::trim(f[0]))] = std::stoull(std::string(text::trim(f[1])));
    } catch (const std::exception&) {
      throw Error(Errc::Config, path.string() + ": bad population '" + f[1] + "'");
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Tidy output

struct TidyRow {
  std::string group;
  std::optional<int> year;
  std::string metric;
  std::uint64_t numerator = 0;
  std::uint64_t denominator = 0;
  std::optional<double> value;
};

inline void append_series(std::vector<TidyRow>& rows, const IndicatorSeries& s, const std::string& prefix) {
  for (const auto& [g, years] : s.cells())
    for (const auto& [y, c] : years)
      rows.push_back({prefix + g, y, s.metric(), c.numerator, c.denominator, c.value()});
}

inline std::string render_tidy_csv(const std::vector<TidyRow>& rows) {
  std::string out = "group,year,metric,numerator,denominator,value\n";
  for (const auto& r : rows) {
    out += io::csv_field(r.group) + "," + (r.year ? std::to_string(*r.year) : "") + "," + io::csv_field(r.metric) +
           "," + std::to_string(r.numerator) + "," + std::to_string(r.denominator) + "," +
           (r.value ? io::format_double(*r.value) : "") + "\n";
  }
  return out;
}

}  // namespace scholarpipe::indicators

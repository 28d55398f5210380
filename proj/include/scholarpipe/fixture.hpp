#pragma once

// Synthetic corpus with a planted label composition, for tests, the
// acceptance suite and demos. Everything is derived from one seed.

#include <algorithm>
#include <array>
#include <cstdio>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "scholarpipe/error.hpp"
#include "scholarpipe/io.hpp"
#include "scholarpipe/lexicon.hpp"
#include "scholarpipe/rng.hpp"
#include "scholarpipe/text.hpp"

namespace scholarpipe::fixture {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

inline constexpr std::string_view kFailMarker = "MOCK-UNPARSEABLE";

struct Composition {
  std::size_t ai = 120;
  std::size_t non_ai = 430;
  std::size_t no_methods = 440;
  std::size_t unclassifiable = 10;

  std::size_t total() const { return ai + non_ai + no_methods + unclassifiable; }
};

struct FixtureOptions {
  Composition composition;
  std::size_t rejected_per_reason = 5;
  std::size_t malformed_lines = 3;
  std::size_t fulltext_docs = 200;
  std::size_t fulltext_keyword_docs = 190;
  std::uint64_t seed = 20240101;
};

inline constexpr std::array<std::string_view, 8> kAiExamples = {
    "machine learning", "deep learning",   "random forest",        "neural network",
    "computer vision",  "naive bayes",     "supervised learning", "natural language processing"};
inline constexpr std::array<std::string_view, 8> kNonAiExamples = {
    "linear regression", "logistic regression", "anova",          "survival analysis",
    "poisson regression", "multilevel model",   "probit model",   "regression analysis"};

namespace detail {

inline constexpr std::string_view kSubjects[] = {"This study", "The present work", "Our report", "This article",
                                                 "The project", "This chapter"};
inline constexpr std::string_view kVerbs[] = {"examines", "describes", "documents", "considers", "explores",
                                              "revisits"};
inline constexpr std::string_view kTopics[] = {
    "coastal erosion", "urban housing",   "river sediment",  "school attendance", "soil nutrients",
    "bird migration",  "rural transport", "hospital staffing", "forest cover",    "energy prices",
    "crop yields",     "water quality",   "trade routes",    "museum visitors",   "wind patterns"};
inline constexpr std::string_view kPlaces[] = {"northern provinces", "several coastal towns", "three river basins",
                                               "a mountain valley",  "two island states",     "the capital region"};
inline constexpr std::string_view kTails[] = {
    "over two decades", "during the last century", "across seasons", "within local archives",
    "through field visits", "among older residents"};
inline constexpr std::string_view kClosers[] = {
    "Findings point to steady change and invite further inquiry",
    "The results inform ongoing planning debates in the area",
    "Implications for local communities are discussed at length",
    "These observations open new questions for future fieldwork",
    "Limitations of the available records are noted throughout"};

}  // namespace detail

/// Sentences built from a closed vocabulary that contains no dictionary
/// term. `verify_filler` checks this against the built-in dictionaries.
inline std::string filler_sentence(Rng& rng) {
  using namespace detail;
  auto pick = [&](const auto& arr) { return std::string(arr[rng.below(std::size(arr))]); };
  return pick(kSubjects) + " " + pick(kVerbs) + " " + pick(kTopics) + " in " + pick(kPlaces) + " " + pick(kTails) +
         ".";
}

inline std::string closer_sentence(Rng& rng) {
  return std::string(detail::kClosers[rng.below(std::size(detail::kClosers))]) + ".";
}

inline void verify_filler(const lexicon::Matcher& m) {
  using namespace detail;
  std::vector<std::string_view> all;
  all.insert(all.end(), std::begin(kSubjects), std::end(kSubjects));
  all.insert(all.end(), std::begin(kVerbs), std::end(kVerbs));
  all.insert(all.end(), std::begin(kTopics), std::end(kTopics));
  all.insert(all.end(), std::begin(kPlaces), std::end(kPlaces));
  all.insert(all.end(), std::begin(kTails), std::end(kTails));
  all.insert(all.end(), std::begin(kClosers), std::end(kClosers));
  std::string joined;
  for (auto s : all) joined += std::string(s) + " . ";
  if (!m.find_all(joined).empty()) throw Error(Errc::InvalidArgument, "fixture filler contains a dictionary term");
}

enum class Planted { AI, NonAI, NoMethods, Unclassifiable };

inline std::string_view planted_name(Planted p) {
  switch (p) {
    case Planted::AI: return "AIMethods";
    case Planted::NonAI: return "NonAIMethods";
    case Planted::NoMethods: return "NoMethods";
    case Planted::Unclassifiable: return "Unclassifiable";
  }
  return "?";
}

struct Taxon {
  std::string domain_id, domain_name;
  std::vector<std::pair<std::string, std::string>> fields;  // id, name
};

inline std::vector<Taxon> taxonomy_layout() {
  return {{"D1", "Physical Sciences", {{"F17", "Computer Science"}, {"F31", "Physics and Astronomy"}}},
          {"D2", "Life Sciences", {{"F11", "Agricultural and Biological Sciences"}, {"F13", "Biochemistry"}}},
          {"D3", "Health Sciences", {{"F27", "Medicine"}, {"F35", "Dentistry"}}},
          {"D4", "Social Sciences", {{"F33", "Social Sciences"}, {"F20", "Economics"}}}};
}

inline constexpr std::size_t kTopicsPerField = 10;

inline ordered_json taxonomy_json() {
  ordered_json doms = ordered_json::array();
  ordered_json topics = ordered_json::object();
  for (const auto& t : taxonomy_layout()) {
    ordered_json fields = ordered_json::array();
    for (const auto& [id, name] : t.fields) {
      fields.push_back({{"id", id}, {"name", name}});
      for (std::size_t k = 0; k < kTopicsPerField; ++k) topics[id + "-T" + std::to_string(k)] = id;
    }
    doms.push_back({{"id", t.domain_id}, {"name", t.domain_name}, {"fields", fields}});
  }
  return {{"domains", doms}, {"computer_science_field", "F17"}, {"topics", topics}};
}

// (country, population, works). Straddles both inclusion thresholds; XK has
// no population entry and the remainder carry no country.
struct CountryPlan {
  std::string_view code;
  std::uint64_t population;
  std::size_t works;
  bool in_table;
};

inline constexpr std::array<CountryPlan, 7> kCountries = {{{"US", 331'000'000, 400, true},
                                                           {"CN", 1'412'000'000, 250, true},
                                                           {"DE", 83'200'000, 150, true},
                                                           {"LU", 640'000, 110, true},
                                                           {"NZ", 5'100'000, 60, true},
                                                           {"XK", 1'800'000, 20, false},
                                                           {"", 0, 10, false}}};

inline std::vector<Planted> planted_labels(const Composition& c, std::uint64_t seed) {
  std::vector<Planted> v;
  v.insert(v.end(), c.ai, Planted::AI);
  v.insert(v.end(), c.non_ai, Planted::NonAI);
  v.insert(v.end(), c.no_methods, Planted::NoMethods);
  v.insert(v.end(), c.unclassifiable, Planted::Unclassifiable);
  Rng rng(derive_seed(seed, "labels"));
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
  return v;
}

inline std::string work_id(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "W%05zu", i);
  return buf;
}

struct GeneratedWork {
  ordered_json record;
  Planted planted;
};

inline std::string abstract_for(Planted p, Rng& rng) {
  std::vector<std::string> s;
  const std::size_t n = 3 + rng.below(2);
  for (std::size_t k = 0; k < n; ++k) s.push_back(filler_sentence(rng));
  const auto ai = std::string(kAiExamples[rng.below(kAiExamples.size())]);
  const auto nonai = std::string(kNonAiExamples[rng.below(kNonAiExamples.size())]);
  switch (p) {
    case Planted::AI: s.push_back("We applied a " + ai + " approach and compared it with a " + nonai + "."); break;
    case Planted::NonAI: s.push_back("We estimated a " + nonai + " on the collected records."); break;
    case Planted::Unclassifiable:
      s.push_back("We estimated a " + nonai + " " + std::string(kFailMarker) + " on the collected records.");
      break;
    case Planted::NoMethods: break;
  }
  s.push_back(closer_sentence(rng));
  return text::join(s, " ");
}

inline nlohmann::json invert(std::string_view abstract) {
  nlohmann::json inv = nlohmann::json::object();
  auto toks = text::split_whitespace(abstract);
  for (std::size_t i = 0; i < toks.size(); ++i) inv[toks[i]].push_back(i);
  return inv;
}

/// The 1,000 accepted works (with the default composition), in id order.
inline std::vector<GeneratedWork> generate_works(const FixtureOptions& opt) {
  const auto labels = planted_labels(opt.composition, opt.seed);
  const auto layout = taxonomy_layout();
  std::vector<std::pair<std::string, std::string>> fields;  // field, domain
  for (const auto& t : layout)
    for (const auto& [id, _] : t.fields) fields.emplace_back(id, t.domain_id);

  std::vector<std::string_view> countries;
  for (const auto& c : kCountries) countries.insert(countries.end(), c.works, c.code);
  {
    Rng rng(derive_seed(opt.seed, "countries"));
    for (std::size_t i = countries.size(); i > 1; --i) std::swap(countries[i - 1], countries[rng.below(i)]);
  }

  static constexpr std::string_view kTypes[] = {"article", "article", "article", "book",
                                                "book-chapter", "dissertation", "preprint"};
  static constexpr std::string_view kLangs[] = {"en", "en", "en", "de", "es", "fr", "id", "pt", "ca"};
  std::vector<GeneratedWork> out;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    Rng rng(derive_seed(opt.seed, "work-" + std::to_string(i)));
    const auto& [field, domain] = fields[i % fields.size()];
    ordered_json j;
    j["work_id"] = work_id(i);
    j["work_type"] = kTypes[rng.below(std::size(kTypes))];
    const int year = 2000 + static_cast<int>(rng.below(25));
    char date[16];
    std::snprintf(date, sizeof date, "%04d-%02d-%02d", year, 1 + static_cast<int>(rng.below(12)),
                  1 + static_cast<int>(rng.below(28)));
    j["pub_date"] = date;
    j["language"] = kLangs[rng.below(std::size(kLangs))];
    j["title"] = "Report " + std::to_string(i);
    const auto abstract = abstract_for(labels[i], rng);
    if (i % 4 == 0) j["abstract_text"] = abstract;
    else j["abstract_inverted_index"] = invert(abstract);
    j["domain_id"] = domain;
    j["field_id"] = field;
    j["topic_id"] = field + "-T" + std::to_string(rng.below(kTopicsPerField));
    ordered_json refs = ordered_json::array();
    for (std::size_t k = 0, n = rng.below(5); k < n; ++k)
      refs.push_back(rng.below(10) == 0 ? "X" + std::to_string(rng.below(1000)) : work_id(rng.below(labels.size())));
    j["referenced_ids"] = refs;
    j["citations_3y"] = rng.below(12);
    j["retracted"] = rng.below(60) == 0;
    j["first_author_country"] = countries[i % countries.size()].empty() ? ordered_json(nullptr) : ordered_json(countries[i % countries.size()]);
    out.push_back({std::move(j), labels[i]});
  }
  return out;
}

inline std::string rejected_lines(const FixtureOptions& opt) {
  std::string out;
  Rng rng(derive_seed(opt.seed, "rejected"));
  const std::string long_abstract = filler_sentence(rng) + " " + filler_sentence(rng) + " " + filler_sentence(rng) +
                                    " " + filler_sentence(rng) + " " + closer_sentence(rng);
  for (std::size_t k = 0; k < opt.rejected_per_reason; ++k) {
    ordered_json a{{"work_id", "R-TYPE-" + std::to_string(k)}, {"work_type", "dataset"}, {"pub_date", "2015-01-01"},
                   {"abstract_text", long_abstract}};
    ordered_json b{{"work_id", "R-DATE-" + std::to_string(k)}, {"work_type", "article"}, {"pub_date", "1950-06-01"},
                   {"abstract_text", long_abstract}};
    ordered_json c{{"work_id", "R-SHORT-" + std::to_string(k)}, {"work_type", "article"}, {"pub_date", "2015-01-01"},
                   {"abstract_text", "Too short."}};
    out += a.dump() + "\n" + b.dump() + "\n" + c.dump() + "\n";
  }
  for (std::size_t k = 0; k < opt.malformed_lines; ++k) out += "{\"work_id\": \"broken-" + std::to_string(k) + "\",\n";
  return out;
}

/// Full-text documents as plain text with title-case headings. The first
/// `keyword_docs` carry a methods-keyword heading; the rest do not.
inline std::string fulltext_lines(const FixtureOptions& opt) {
  static constexpr std::string_view kKeywordTitles[] = {"Materials and Methods", "2. Methods",
                                                        "Experimental Procedure", "METHODS"};
  static constexpr std::string_view kOtherTitles[] = {"Approach", "Study Design", "Data Sources", "Fieldwork"};
  std::string out;
  for (std::size_t d = 0; d < opt.fulltext_docs; ++d) {
    Rng rng(derive_seed(opt.seed, "doc-" + std::to_string(d)));
    auto para = [&] {
      std::string p;
      for (std::size_t k = 0; k < 3; ++k) p += filler_sentence(rng) + " ";
      return p + closer_sentence(rng);
    };
    std::string t = para() + "\n";
    t += "1. Introduction\n" + para() + "\n";
    if (d < opt.fulltext_keyword_docs)
      t += std::string(kKeywordTitles[d % std::size(kKeywordTitles)]) + "\n" + para() + "\n";
    else
      t += std::string(kOtherTitles[d % std::size(kOtherTitles)]) + "\n" + para() + "\n";
    t += "Results\n" + para() + "\nDiscussion\n" + para() + "\n";
    out += ordered_json{{"doc_id", "D" + std::to_string(d)}, {"text", t}}.dump() + "\n";
  }
  return out;
}

inline std::string population_csv() {
  std::string out = "country,population\n";
  for (const auto& c : kCountries)
    if (c.in_table) out += std::string(c.code) + "," + std::to_string(c.population) + "\n";
  return out;
}

struct FixturePaths {
  fs::path dir, corpus, taxonomy, population, fulltext, config;
};

/// Writes corpus.jsonl.gz, taxonomy.json, population.csv, fulltext.jsonl
/// and a mock-backend pipeline.conf into `dir`.
inline FixturePaths write_fixture(const fs::path& dir, const FixtureOptions& opt = {},
                                  std::string_view extra_config = {}) {
  fs::create_directories(dir);
  verify_filler(lexicon::Matcher::compile(lexicon::standard_dictionaries()));
  FixturePaths p{dir, dir / "corpus.jsonl.gz", dir / "taxonomy.json", dir / "population.csv", dir / "fulltext.jsonl",
                 dir / "pipeline.conf"};
  std::string corpus;
  for (const auto& w : generate_works(opt)) corpus += w.record.dump() + "\n";
  corpus += rejected_lines(opt);
  io::write_gzip(p.corpus, corpus);
  io::write_file_atomic(p.taxonomy, taxonomy_json().dump(2) + "\n");
  io::write_file_atomic(p.population, population_csv());
  io::write_file_atomic(p.fulltext, fulltext_lines(opt));
  std::string conf =
      "corpus = corpus.jsonl.gz\n"
      "taxonomy = taxonomy.json\n"
      "population = population.csv\n"
      "fulltext = fulltext.jsonl\n"
      "output = out\n"
      "seed = 7\n"
      "strategy = random\n"
      "workers = 4\n"
      "mock_backend = true\n"
      "mock_fail_marker = " +
      std::string(kFailMarker) + "\n";
  conf += extra_config;
  io::write_file_atomic(p.config, conf);
  return p;
}

}  // namespace scholarpipe::fixture

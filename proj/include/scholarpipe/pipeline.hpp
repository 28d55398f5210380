#pragma once

// Stage orchestration: flat key = value configuration, content-hashed
// manifest with cache skipping, per-stage error isolation.

#include <openssl/evp.h>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "scholarpipe/corpus.hpp"
#include "scholarpipe/error.hpp"
#include "scholarpipe/glm.hpp"
#include "scholarpipe/http_backend.hpp"
#include "scholarpipe/indicators.hpp"
#include "scholarpipe/io.hpp"
#include "scholarpipe/lexicon.hpp"
#include "scholarpipe/rater.hpp"
#include "scholarpipe/rng.hpp"
#include "scholarpipe/sectionx.hpp"
#include "scholarpipe/semclass.hpp"

namespace scholarpipe::pipeline {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitStage = 3;
inline constexpr int kExitBackend = 4;

inline std::string sha256_hex(std::string_view data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1)
    throw Error(Errc::SourceIO, "sha256 failed");
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned i = 0; i < len; ++i) {
    out += kHex[md[i] >> 4];
    out += kHex[md[i] & 15];
  }
  return out;
}

inline std::string sha256_file(const fs::path& p) { return sha256_hex(io::read_file(p)); }

enum class Stage { Ingest, Match, Classify, ExtractSections, Indicators, Fit, Geo, Report };

inline constexpr Stage kAllStages[] = {Stage::Ingest,     Stage::Match, Stage::Classify, Stage::ExtractSections,
                                       Stage::Indicators, Stage::Fit,   Stage::Geo,      Stage::Report};

inline std::string_view stage_name(Stage s) {
  switch (s) {
    case Stage::Ingest: return "ingest";
    case Stage::Match: return "match";
    case Stage::Classify: return "classify";
    case Stage::ExtractSections: return "extract-sections";
    case Stage::Indicators: return "indicators";
    case Stage::Fit: return "fit";
    case Stage::Geo: return "geo";
    case Stage::Report: return "report";
  }
  return "?";
}

inline Stage parse_stage(std::string_view s) {
  for (auto st : kAllStages)
    if (stage_name(st) == s) return st;
  throw Error(Errc::Config, "unknown stage '" + std::string(s) + "'");
}

inline std::vector<Stage> stage_dependencies(Stage s) {
  switch (s) {
    case Stage::Ingest:
    case Stage::ExtractSections: return {};
    case Stage::Match:
    case Stage::Classify: return {Stage::Ingest};
    case Stage::Indicators: return {Stage::Ingest, Stage::Match, Stage::Classify};
    case Stage::Fit:
    case Stage::Geo: return {Stage::Indicators};
    case Stage::Report:
      return {Stage::Ingest, Stage::Match, Stage::Classify, Stage::ExtractSections, Stage::Indicators, Stage::Fit,
              Stage::Geo};
  }
  return {};
}

// ---------------------------------------------------------------------------
// Configuration

struct PipelineConfig {
  fs::path corpus;
  std::optional<fs::path> taxonomy;
  std::optional<fs::path> population;
  std::optional<fs::path> fulltext;
  std::optional<fs::path> coder_labels;
  std::optional<fs::path> dict_ai, dict_linear, dict_other;
  std::optional<fs::path> prompt_stage1, prompt_stage2;
  std::vector<fs::path> models;
  fs::path output = "out";
  std::uint64_t seed = 0;
  semclass::StrategyKind strategy = semclass::StrategyKind::Baseline;
  std::size_t workers = 1;
  bool mock_backend = false;
  std::string mock_fail_marker = "MOCK-UNPARSEABLE";
  semclass::BackendConfig backend;
  std::map<Stage, bool> enabled;
  std::uint64_t validation_target = 825;
  double validation_inflation = 0.105;

  bool stage_enabled(Stage s) const {
    if (s == Stage::ExtractSections && !fulltext) return false;
    auto it = enabled.find(s);
    return it == enabled.end() || it->second;
  }

  static PipelineConfig parse(std::string_view content, const fs::path& base_dir, const std::string& origin = "config") {
    auto kv = glm::parse_key_values(content, origin);
    PipelineConfig c;
    auto path_of = [&](const std::string& v) {
      fs::path p(v);
      return p.is_absolute() ? p : base_dir / p;
    };
    auto as_bool = [&](const std::string& k, const std::string& v) {
      if (v == "true" || v == "1" || v == "yes") return true;
      if (v == "false" || v == "0" || v == "no") return false;
      throw Error(Errc::Config, origin + ": " + k + " must be true or false");
    };
    auto as_u64 = [&](const std::string& k, const std::string& v) -> std::uint64_t {
      try {
        if (v.empty() || !std::isdigit(static_cast<unsigned char>(v.front()))) throw std::invalid_argument(v);
        std::size_t used = 0;
        auto n = std::stoull(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return n;
      } catch (const std::exception&) {
        throw Error(Errc::Config, origin + ": " + k + " must be a non-negative integer");
      }
    };
    auto as_double = [&](const std::string& k, const std::string& v) {
      try {
        return std::stod(v);
      } catch (const std::exception&) {
        throw Error(Errc::Config, origin + ": " + k + " must be a number");
      }
    };
    for (const auto& [k, v] : kv) {
      if (k == "corpus") c.corpus = path_of(v);
      else if (k == "taxonomy") c.taxonomy = path_of(v);
      else if (k == "population") c.population = path_of(v);
      else if (k == "fulltext") c.fulltext = path_of(v);
      else if (k == "coder_labels") c.coder_labels = path_of(v);
      else if (k == "dictionary.ai") c.dict_ai = path_of(v);
      else if (k == "dictionary.linear") c.dict_linear = path_of(v);
      else if (k == "dictionary.other") c.dict_other = path_of(v);
      else if (k == "prompt.stage1") c.prompt_stage1 = path_of(v);
      else if (k == "prompt.stage2") c.prompt_stage2 = path_of(v);
      else if (k == "models") {
        for (const auto& m : glm::split_list(v)) c.models.push_back(path_of(m));
      } else if (k == "output") c.output = path_of(v);
      else if (k == "seed") c.seed = as_u64(k, v);
      else if (k == "strategy") {
        try {
          c.strategy = semclass::parse_strategy(v);
        } catch (const Error&) {
          throw Error(Errc::Config, origin + ": unknown strategy '" + v + "'");
        }
      } else if (k == "workers") c.workers = as_u64(k, v);
      else if (k == "mock_backend") c.mock_backend = as_bool(k, v);
      else if (k == "mock_fail_marker") c.mock_fail_marker = v;
      else if (k == "backend.endpoint") c.backend.endpoint = v;
      else if (k == "backend.model") c.backend.model = v;
      else if (k == "backend.token_env") c.backend.token_env = v;
      else if (k == "backend.max_in_flight") c.backend.max_in_flight = as_u64(k, v);
      else if (k == "backend.timeout_ms") c.backend.timeout = std::chrono::milliseconds(as_u64(k, v));
      else if (k == "backend.retry_budget") c.backend.retry_budget = static_cast<int>(as_u64(k, v));
      else if (k == "backend.temperature") c.backend.temperature = as_double(k, v);
      else if (k == "backend.max_tokens") c.backend.max_tokens = static_cast<int>(as_u64(k, v));
      else if (k == "backend.response_path") c.backend.response_path = v;
      else if (k == "validation.target") c.validation_target = as_u64(k, v);
      else if (k == "validation.inflation") c.validation_inflation = as_double(k, v);
      else if (k.rfind("stage.", 0) == 0) c.enabled[parse_stage(k.substr(6))] = as_bool(k, v);
      else throw Error(Errc::Config, origin + ": unknown key '" + k + "'");
    }
    if (c.corpus.empty()) throw Error(Errc::Config, origin + ": corpus is required");
    return c;
  }

  static PipelineConfig load(const fs::path& path) {
    if (!fs::exists(path)) throw Error(Errc::Config, "config file " + path.string() + " not found");
    auto c = parse(io::read_file(path), path.parent_path(), path.string());
    c.apply_env();
    return c;
  }

  void apply_env() {
    if (const char* e = std::getenv("SCHOLARPIPE_ENDPOINT"); e && *e) backend.endpoint = e;
  }

  void validate() const {
    auto need = [](const fs::path& p, std::string_view what) {
      if (!fs::exists(p)) throw Error(Errc::Config, std::string(what) + " " + p.string() + " does not exist");
    };
    auto maybe = [&](const std::optional<fs::path>& p, std::string_view what) {
      if (p) need(*p, what);
    };
    need(corpus, "corpus");
    maybe(taxonomy, "taxonomy");
    maybe(population, "population table");
    maybe(fulltext, "full-text file");
    maybe(coder_labels, "coder labels");
    maybe(dict_ai, "dictionary");
    maybe(dict_linear, "dictionary");
    maybe(dict_other, "dictionary");
    maybe(prompt_stage1, "prompt template");
    maybe(prompt_stage2, "prompt template");
    for (const auto& m : models) need(m, "model spec");
    if (prompt_stage1.has_value() != prompt_stage2.has_value())
      throw Error(Errc::Config, "prompt.stage1 and prompt.stage2 must be given together");
    if (workers == 0) throw Error(Errc::Config, "workers must be >= 1");
    if (stage_enabled(Stage::Geo) && !population) throw Error(Errc::Config, "geo stage needs a population table");
    if (!mock_backend && stage_enabled(Stage::Classify)) backend.validate();
  }
};

// ---------------------------------------------------------------------------
// Manifest

enum class StageStatus { Fresh, Skipped, Failed, Blocked, Disabled, Incomplete };

inline std::string_view status_name(StageStatus s) {
  switch (s) {
    case StageStatus::Fresh: return "fresh";
    case StageStatus::Skipped: return "skipped";
    case StageStatus::Failed: return "failed";
    case StageStatus::Blocked: return "blocked";
    case StageStatus::Disabled: return "disabled";
    case StageStatus::Incomplete: return "incomplete";
  }
  return "?";
}

inline StageStatus parse_status(std::string_view s) {
  for (auto st : {StageStatus::Fresh, StageStatus::Skipped, StageStatus::Failed, StageStatus::Blocked,
                  StageStatus::Disabled, StageStatus::Incomplete})
    if (status_name(st) == s) return st;
  throw Error(Errc::MalformedRecord, "unknown stage status '" + std::string(s) + "'");
}

struct StageRecord {
  Stage stage = Stage::Ingest;
  StageStatus status = StageStatus::Fresh;
  std::string input_hash;
  std::map<std::string, std::string> outputs;  // file name -> sha256
  std::string error;

  bool succeeded() const { return status == StageStatus::Fresh || status == StageStatus::Skipped; }
};

struct Manifest {
  std::map<Stage, StageRecord> stages;

  ordered_json to_json() const {
    ordered_json arr = ordered_json::array();
    for (auto s : kAllStages) {
      auto it = stages.find(s);
      if (it == stages.end()) continue;
      const auto& r = it->second;
      ordered_json j;
      j["stage"] = stage_name(s);
      j["status"] = status_name(r.status);
      j["input_hash"] = r.input_hash;
      j["outputs"] = r.outputs;
      if (!r.error.empty()) j["error"] = r.error;
      arr.push_back(std::move(j));
    }
    return {{"stages", arr}};
  }

  static Manifest load(const fs::path& path) {
    Manifest m;
    if (!fs::exists(path)) return m;
    auto j = nlohmann::json::parse(io::read_file(path), nullptr, false);
    if (j.is_discarded() || !j.contains("stages")) return m;  // treated as absent
    for (const auto& s : j["stages"]) {
      StageRecord r;
      r.stage = parse_stage(s.at("stage").get<std::string>());
      r.status = parse_status(s.at("status").get<std::string>());
      r.input_hash = s.value("input_hash", "");
      r.outputs = s.value("outputs", std::map<std::string, std::string>{});
      r.error = s.value("error", "");
      m.stages[r.stage] = std::move(r);
    }
    return m;
  }
};

// ---------------------------------------------------------------------------
// Stage bodies. Each returns its output files in memory; the runner writes
// them only when the stage as a whole succeeds.

struct StageOutput {
  std::map<std::string, std::string> files;
  bool incomplete = false;
  std::string note;
};

inline constexpr std::string_view kWorksFile = "works.jsonl";
inline constexpr std::string_view kMatchesFile = "matches.jsonl";
inline constexpr std::string_view kClassificationsFile = "classifications.jsonl";
inline constexpr std::string_view kLabeledFile = "labeled_works.jsonl";

inline std::string dump_json(const ordered_json& j) { return j.dump(2) + "\n"; }

inline std::vector<lexicon::ExpandedDictionary> load_dictionaries(const PipelineConfig& c) {
  using lexicon::DictionaryName;
  const auto rules = lexicon::ExpansionRuleSet::standard();
  auto one = [&](DictionaryName n, const std::optional<fs::path>& p) {
    return lexicon::expand_terms(p ? lexicon::Dictionary::load(n, *p) : lexicon::builtin_dictionary(n), rules);
  };
  return {one(DictionaryName::AiTerms, c.dict_ai), one(DictionaryName::LinearModelTerms, c.dict_linear),
          one(DictionaryName::OtherStatsTerms, c.dict_other)};
}

inline StageOutput stage_ingest(const PipelineConfig& c) {
  corpus::RecordStream stream(c.corpus);
  std::string works;
  std::set<std::string> seen;
  std::uint64_t duplicates = 0;
  while (auto w = stream.next()) {
    if (!seen.insert(w->work_id).second) {
      ++duplicates;
      continue;
    }
    works += corpus::to_json(*w).dump() + "\n";
  }
  auto stats = stream.stats().to_json();
  stats["duplicates"] = duplicates;
  stats["written"] = seen.size();
  return {{{std::string(kWorksFile), works}, {"ingest_stats.json", dump_json(stats)}}, false, {}};
}

inline StageOutput stage_match(const PipelineConfig& c) {
  const auto dicts = load_dictionaries(c);
  const auto matcher = lexicon::Matcher::compile(dicts);
  io::LineReader reader(c.output / kWorksFile);
  std::string out;
  std::uint64_t works = 0, engaged = 0, linear = 0, other = 0, hits = 0;
  while (auto line = reader.next()) {
    if (text::trim(*line).empty()) continue;
    auto w = corpus::parse_work_line(*line);
    auto r = lexicon::match_abstract(matcher, w);
    ++works;
    engaged += r.engaged_ai;
    linear += r.uses_linear_terms;
    other += r.uses_other_stats_terms;
    hits += r.hits.size();
    out += r.to_json().dump() + "\n";
  }
  ordered_json stats;
  stats["works"] = works;
  stats["engaged_ai"] = engaged;
  stats["uses_linear_terms"] = linear;
  stats["uses_other_stats_terms"] = other;
  stats["hits"] = hits;
  stats["patterns"] = matcher.pattern_count();
  ordered_json sizes;
  for (const auto& d : dicts)
    sizes[std::string(lexicon::dictionary_name(d.source.name))] = {{"source", d.source.terms.size()},
                                                              {"expanded", d.expanded_terms.size()}};
  stats["dictionaries"] = sizes;
  return {{{std::string(kMatchesFile), out}, {"match_stats.json", dump_json(stats)}}, false, {}};
}

inline std::unique_ptr<semclass::Backend> make_backend(const PipelineConfig& c) {
  if (c.mock_backend) {
    auto matcher = std::make_shared<const lexicon::Matcher>(lexicon::Matcher::compile(load_dictionaries(c)));
    return std::make_unique<semclass::MockBackend>(matcher, c.mock_fail_marker);
  }
  return std::make_unique<semclass::HttpBackend>(c.backend);
}

inline StageOutput stage_classify(const PipelineConfig& c, const std::string& input_hash, std::ostream* log) {
  auto backend = make_backend(c);
  semclass::PromptStrategy strategy;
  strategy.kind = c.strategy;
  strategy.seed = derive_seed(c.seed, "prompt-examples");
  semclass::CampaignOptions opts;
  opts.max_in_flight = c.mock_backend ? c.workers : std::min(c.workers, c.backend.max_in_flight);
  opts.classify.transport_retries = c.backend.retry_budget;
  if (c.prompt_stage1) opts.classify.templates = semclass::PromptTemplates::load(*c.prompt_stage1, *c.prompt_stage2);

  // Checkpoints are keyed by the stage inputs so changed inputs start over.
  const auto ckpt_dir = c.output / "checkpoints";
  const auto tag = std::string(semclass::strategy_name(c.strategy)) + "-" + input_hash.substr(0, 16);
  semclass::CheckpointStore store(ckpt_dir / ("classify-" + tag + ".jsonl"));
  semclass::AppendLog audit(ckpt_dir / ("audit-" + tag + ".jsonl"), false);
  opts.audit = &audit;

  io::LineReader reader(c.output / kWorksFile);
  semclass::WorkSource source = [&]() -> std::optional<corpus::WorkRecord> {
    while (auto line = reader.next())
      if (!text::trim(*line).empty()) return corpus::parse_work_line(*line);
    return std::nullopt;
  };
  auto stats = semclass::run_campaign(source, strategy, *backend, store, opts);
  if (log) *log << "classify: " << stats.to_json().dump() << "\n";

  auto results = store.results();
  ordered_json summary;
  summary["strategy"] = semclass::strategy_name(c.strategy);
  summary["backend"] = backend->describe();
  summary["labels"] = semclass::label_totals(results).to_json();
  summary["exhausted"] = stats.exhausted;
  StageOutput out{{{std::string(kClassificationsFile), semclass::render_results(results)},
                   {"classify_stats.json", dump_json(summary)}},
                  stats.exhausted > 0,
                  {}};
  if (out.incomplete) out.note = std::to_string(stats.exhausted) + " works exhausted the backend retry budget";
  return out;
}

inline StageOutput stage_sections(const PipelineConfig& c) {
  sectionx::HashEmbedder emb(64, derive_seed(c.seed, "sections"));
  io::LineReader reader(*c.fulltext);
  std::string out;
  std::uint64_t docs = 0, keyword = 0, fallback = 0, empty = 0;
  while (auto line = reader.next()) {
    if (text::trim(*line).empty()) continue;
    auto j = nlohmann::json::parse(*line, nullptr, false);
    if (j.is_discarded()) throw Error(Errc::MalformedRecord, "full-text line is not JSON");
    sectionx::Document doc;
    try {
      doc = j.contains("sections") ? sectionx::document_from_json(j)
                                   : sectionx::segment_sections(j.value("text", ""), j.value("doc_id", ""));
    } catch (const Error& e) {
      if (e.code() != Errc::EmptyDocument) throw;
      ++empty;
      continue;
    }
    auto m = sectionx::find_methods_section(doc, emb);
    ++docs;
    (m.strategy == sectionx::LocateStrategy::KeywordMatch ? keyword : fallback) += 1;
    ordered_json r;
    r["doc_id"] = doc.doc_id;
    r["section_index"] = m.index;
    r["title"] = doc.sections[m.index].title;
    r["strategy"] = sectionx::locate_strategy_name(m.strategy);
    r["similarity"] = m.similarity ? ordered_json(*m.similarity) : ordered_json(nullptr);
    out += r.dump() + "\n";
  }
  ordered_json s;
  s["documents"] = docs;
  s["empty_documents"] = empty;
  s["keyword_match"] = keyword;
  s["semantic_fallback"] = fallback;
  s["keyword_match_pct"] = docs ? 100.0 * static_cast<double>(keyword) / static_cast<double>(docs) : 0.0;
  return {{{"sections.jsonl", out}, {"sections_summary.json", dump_json(s)}}, false, {}};
}

inline std::vector<indicators::LabeledWork> read_labeled(const fs::path& p) {
  io::LineReader reader(p);
  std::vector<indicators::LabeledWork> out;
  while (auto line = reader.next())
    if (!text::trim(*line).empty()) out.push_back(indicators::labeled_work_from_json(nlohmann::json::parse(*line)));
  return out;
}

inline StageOutput stage_indicators(const PipelineConfig& c) {
  using namespace indicators;
  std::optional<corpus::Taxonomy> tax;
  if (c.taxonomy) tax = corpus::Taxonomy::load(*c.taxonomy);
  const std::string cs_field = tax ? tax->computer_science_field() : std::string();

  auto works = corpus::read_records(c.output / kWorksFile);
  std::unordered_map<std::string, bool> engaged;
  {
    io::LineReader r(c.output / kMatchesFile);
    while (auto line = r.next())
      if (!text::trim(*line).empty()) {
        auto j = nlohmann::json::parse(*line);
        engaged[j.at("work_id").get<std::string>()] = j.at("engaged_ai").get<bool>();
      }
  }
  std::unordered_map<std::string, std::optional<semclass::MethodLabel>> labels;
  for (const auto& r : semclass::read_results(c.output / kClassificationsFile)) labels[r.work_id] = r.label;

  std::unordered_map<std::string, std::string> field_of;
  for (const auto& w : works)
    if (w.field_id) field_of[w.work_id] = *w.field_id;
  corpus::FieldResolver resolver = [&](const std::string& id) -> std::optional<std::string> {
    auto it = field_of.find(id);
    if (it == field_of.end()) return std::nullopt;
    return it->second;
  };

  std::vector<LabeledWork> lw;
  std::uint64_t unlabeled = 0;
  std::string labeled_out;
  for (const auto& w : works) {
    auto l = labels.find(w.work_id);
    if (l == labels.end()) {
      ++unlabeled;
      continue;
    }
    LabeledWork x;
    x.work_id = w.work_id;
    x.year = w.pub_year;
    x.work_type = std::string(corpus::work_type_name(w.work_type));
    x.language = w.language;
    x.field = w.field_id.value_or(std::string(kMissingGroup));
    x.domain = w.domain_id ? *w.domain_id
                           : (tax && w.field_id ? tax->domain_of(*w.field_id).value_or(std::string(kMissingGroup))
                                                : std::string(kMissingGroup));
    x.topic = w.topic_id;
    x.label = l->second;
    x.engaged_ai = engaged.count(w.work_id) ? engaged[w.work_id] : false;
    x.citations_3y = w.citations_3y;
    x.retracted = w.retracted;
    x.country = w.first_author_country;
    auto flags = corpus::reference_flags(w, resolver, cs_field);
    x.cites_cs = !cs_field.empty() && flags.cites_cs;
    x.references_resolved = flags.resolved > 0;
    labeled_out += to_json(x).dump() + "\n";
    lw.push_back(std::move(x));
  }

  std::vector<TidyRow> rows;
  ordered_json onsets, growth;
  for (auto [level, prefix] : {std::pair{Level::Domain, "domain:"}, std::pair{Level::Field, "field:"}}) {
    auto adoption = adoption_series(lw, level);
    auto engagement = engagement_series(lw, level);
    append_series(rows, adoption, prefix);
    append_series(rows, engagement, prefix);
    append_series(rows, method_share_series(lw, level), prefix);
    for (const auto& [g, years] : discussion_proxy(engagement, adoption))
      for (const auto& [y, v] : years) rows.push_back({prefix + g, y, "discussion", 0, 0, v});
    for (const auto& [g, _] : adoption.cells()) {
      auto onset = growth_onset(adoption.values(g));
      onsets[prefix + g] = onset ? ordered_json(*onset) : ordered_json(nullptr);
      try {
        auto gm = growth_multiple(adoption, g, 2005, 2024);
        growth[prefix + g] = {{"ratio", gm.ratio},
                              {"annual_rate", gm.annual_rate},
                              {"annual_rate_inclusive", gm.annual_rate_inclusive}};
      } catch (const Error&) {
        growth[prefix + g] = nullptr;
      }
    }
  }

  // Per field and label: topic concentration, visibility, retractions, CS citations.
  std::map<std::pair<std::string, std::string>, std::vector<const LabeledWork*>> cells;
  for (const auto& w : lw) {
    if (!w.label) continue;
    cells[{w.field, std::string(semclass::label_name(*w.label))}].push_back(&w);
    cells[{w.field, "All"}].push_back(&w);
  }
  for (const auto& [key, ws] : cells) {
    const std::string group = "field:" + key.first + "|" + key.second;
    TopicDistribution topics;
    std::uint64_t once = 0, high = 0, retracted = 0, cs = 0, resolved = 0;
    for (const auto* w : ws) {
      if (w->topic) ++topics[*w->topic];
      auto v = visibility_flags(*w);
      once += v.cited_once;
      high += v.highly_cited;
      retracted += w->retracted;
      if (w->references_resolved) {
        ++resolved;
        cs += w->cites_cs;
      }
    }
    const std::uint64_t n = ws.size();
    auto pct = [](std::uint64_t a, std::uint64_t b) -> std::optional<double> {
      if (b == 0) return std::nullopt;
      return 100.0 * static_cast<double>(a) / static_cast<double>(b);
    };
    rows.push_back({group, std::nullopt, "cited_once", once, n, pct(once, n)});
    rows.push_back({group, std::nullopt, "highly_cited", high, n, pct(high, n)});
    rows.push_back({group, std::nullopt, "retractions_per_1000", retracted, n, retraction_rate(retracted, n)});
    rows.push_back({group, std::nullopt, "cites_cs", cs, resolved, pct(cs, resolved)});
    std::uint64_t with_topic = 0;
    for (const auto& [_, k] : topics) with_topic += k;
    if (with_topic > 0) {
      rows.push_back({group, std::nullopt, "top5_share", 0, with_topic, top5_share(topics)});
      const std::size_t universe = tax ? tax->topic_universe(key.first) : 0;
      std::optional<double> h;
      try {
        h = normalized_entropy(topics, universe);
      } catch (const Error&) {
      }
      rows.push_back({group, std::nullopt, "topic_entropy", topics.size(), universe, h});
    }
  }

  ordered_json summary;
  summary["labeled_works"] = lw.size();
  summary["works_without_label"] = unlabeled;
  summary["growth_onset"] = onsets;
  summary["growth_2005_2024"] = growth;
  return {{{std::string(kLabeledFile), labeled_out},
           {"indicators.csv", render_tidy_csv(rows)},
           {"indicators_summary.json", dump_json(summary)}},
          false,
          {}};
}

// Built-in model set used when the configuration names no model files.
inline std::vector<glm::ModelSpec> default_models() {
  auto m = [](std::string name, std::string response, glm::Scale scale) {
    glm::ModelSpec s;
    s.name = std::move(name);
    s.response = std::move(response);
    s.factors = {"publication_type", "year_bin", "language", "method_label"};
    s.scale = scale;
    return s;
  };
  return {m("cited_once", "cited_once", glm::Scale::Percentage),
          m("highly_cited", "highly_cited", glm::Scale::Percentage),
          m("cites_cs", "cites_cs", glm::Scale::Percentage),
          m("retractions", "retracted", glm::Scale::Per1000)};
}

inline double response_value(const indicators::LabeledWork& w, const std::string& response) {
  if (response == "cited_once") return w.citations_3y >= 1;
  if (response == "highly_cited") return w.citations_3y >= indicators::kHighlyCited;
  if (response == "cites_cs") return w.cites_cs;
  if (response == "retracted") return w.retracted;
  if (response == "citations_3y") return w.citations_3y;
  throw Error(Errc::Config, "unknown response '" + response + "'");
}

inline StageOutput stage_fit(const PipelineConfig& c) {
  auto works = read_labeled(c.output / kLabeledFile);
  std::vector<glm::ModelSpec> models;
  for (const auto& p : c.models) models.push_back(glm::load_model_spec(p));
  if (models.empty()) models = default_models();

  std::vector<glm::FitJob> jobs;
  std::vector<const glm::ModelSpec*> job_model;
  ordered_json excluded = ordered_json::object();
  for (const auto& m : models) {
    const auto spec = m.design();
    std::map<std::string, std::vector<glm::ModelRecord>> by_field;
    std::vector<glm::ModelRecord> pooled;
    std::uint64_t skipped = 0;
    for (const auto& w : works) {
      if (!w.label) {
        ++skipped;
        continue;
      }
      glm::ModelRecord r;
      try {
        r.levels["publication_type"] = glm::publication_type_level(w.work_type);
        r.levels["year_bin"] = glm::year_bin_level(w.year);
      } catch (const Error&) {
        ++skipped;
        continue;
      }
      r.levels["language"] = glm::language_level(w.language);
      r.levels["method_label"] = std::string(semclass::label_name(*w.label));
      r.y = response_value(w, m.response);
      by_field[w.field].push_back(r);
      pooled.push_back(std::move(r));
    }
    excluded[m.name] = skipped;
    if (m.per_field)
      for (auto& [field, recs] : by_field) {
        jobs.push_back({m.name, field, glm::encode_design(recs, spec)});
        job_model.push_back(&m);
      }
    jobs.push_back({m.name, "pooled", glm::encode_design(pooled, spec)});
    job_model.push_back(&m);
  }
  auto results = glm::fit_all(jobs, c.workers);

  std::string pred = "model,group,profile,scale,value\n";
  ordered_json fits = ordered_json::array();
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto& r = results[i];
    const auto& m = *job_model[i];
    ordered_json f;
    f["model"] = r.model;
    f["group"] = r.group;
    f["rows"] = jobs[i].design.X.rows();
    if (!r.fit) {
      f["error"] = r.error;
      fits.push_back(std::move(f));
      continue;
    }
    f["converged"] = r.fit->converged;
    f["iterations"] = r.fit->iterations;
    f["deviance"] = r.fit->deviance;
    f["dispersion"] = r.fit->dispersion;
    fits.push_back(std::move(f));
    const auto spec = m.design();
    for (const auto& level : glm::DesignSpec::method_label().levels) {
      const double v = glm::predict_adjusted(*r.fit, spec, {{"method_label", level}}, m.scale);
      pred += io::csv_field(r.model) + "," + io::csv_field(r.group) + "," + io::csv_field("method_label=" + level) +
              "," + std::string(glm::scale_name(m.scale)) + "," + io::format_double(v) + "\n";
    }
  }
  ordered_json meta;
  meta["grouping"] = "per-field models plus one pooled model";
  meta["excluded_rows"] = excluded;
  meta["fits"] = fits;
  return {{{"coefficients.csv", glm::render_coefficients_csv(results)},
           {"predictions.csv", pred},
           {"fit_metadata.json", dump_json(meta)}},
          false,
          {}};
}

inline StageOutput stage_geo(const PipelineConfig& c) {
  auto works = read_labeled(c.output / kLabeledFile);
  auto pop = indicators::read_population_table(*c.population);
  auto rep = indicators::country_stats(works, pop);
  std::string csv = "country,population,publications,ai_publications,rate_per_100k,pct_ai,included\n";
  auto row = [&](const indicators::CountryAggregate& a, bool inc) {
    csv += io::csv_field(a.country) + "," + std::to_string(a.population) + "," + std::to_string(a.publications) + "," +
           std::to_string(a.ai_publications) + "," + io::format_double(a.rate_per_100k) + "," +
           io::format_double(a.pct_ai) + "," + (inc ? "true" : "false") + "\n";
  };
  for (const auto& a : rep.included) row(a, true);
  for (const auto& a : rep.excluded) row(a, false);
  ordered_json s;
  s["included_countries"] = rep.included.size();
  s["excluded_countries"] = rep.excluded.size();
  s["missing_population"] = rep.missing_population;
  s["excluded_works"] = rep.excluded_works;
  s["unattributed_works"] = rep.unattributed_works;
  s["min_population"] = indicators::kMinPopulation;
  s["min_publications"] = indicators::kMinPublications;
  return {{{"countries.csv", csv}, {"geo_summary.json", dump_json(s)}}, false, {}};
}

inline StageOutput stage_report(const PipelineConfig& c) {
  ordered_json r;
  for (auto [key, file] : {std::pair{"ingest", "ingest_stats.json"}, std::pair{"match", "match_stats.json"},
                           std::pair{"classify", "classify_stats.json"},
                           std::pair{"extract_sections", "sections_summary.json"},
                           std::pair{"indicators", "indicators_summary.json"}, std::pair{"fit", "fit_metadata.json"},
                           std::pair{"geo", "geo_summary.json"}}) {
    auto p = c.output / file;
    r[key] = fs::exists(p) ? ordered_json::parse(io::read_file(p)) : ordered_json(nullptr);
  }
  return {{{"report.json", dump_json(r)}}, false, {}};
}

// ---------------------------------------------------------------------------
// Runner

struct RunResult {
  int exit_code = kExitOk;
  Manifest manifest;
};

class Pipeline {
 public:
  explicit Pipeline(PipelineConfig cfg, std::ostream* log = nullptr) : cfg_(std::move(cfg)), log_(log) {}

  const PipelineConfig& config() const { return cfg_; }
  fs::path manifest_path() const { return cfg_.output / "manifest.json"; }

  /// Runs the requested stages in pipeline order. Stages whose inputs hash
  /// to the recorded value and whose outputs are intact are skipped.
  RunResult run(const std::vector<Stage>& requested) {
    fs::create_directories(cfg_.output);
    RunResult res;
    res.manifest = Manifest::load(manifest_path());
    std::set<Stage> want(requested.begin(), requested.end());
    for (auto s : kAllStages) {
      if (!want.count(s)) continue;
      auto rec = run_stage(s, res.manifest);
      if (rec.status == StageStatus::Failed) res.exit_code = std::max(res.exit_code, kExitStage);
      if (rec.status == StageStatus::Incomplete) res.exit_code = kExitBackend;
      res.manifest.stages[s] = rec;
      io::write_file_atomic(manifest_path(), dump_json(res.manifest.to_json()));
      if (log_) *log_ << stage_name(s) << ": " << status_name(rec.status)
                      << (rec.error.empty() ? "" : " (" + rec.error + ")") << "\n";
    }
    return res;
  }

  RunResult run_all() { return run(std::vector<Stage>(std::begin(kAllStages), std::end(kAllStages))); }

  /// Hash over everything a stage reads: settings and input file contents.
  std::string input_hash(Stage s) const {
    std::string acc = "stage=" + std::string(stage_name(s)) + "\n";
    auto file = [&](const std::string& label, const fs::path& p) {
      if (!fs::exists(p)) throw Error(Errc::SourceIO, "missing input " + p.filename().string());
      acc += label + "=" + sha256_file(p) + "\n";
    };
    auto optfile = [&](const std::string& label, const std::optional<fs::path>& p) {
      if (p) file(label, *p);
      else acc += label + "=builtin\n";
    };
    auto out = [&](std::string_view name) { file(std::string(name), cfg_.output / name); };
    auto dicts = [&] {
      optfile("dict.ai", cfg_.dict_ai);
      optfile("dict.linear", cfg_.dict_linear);
      optfile("dict.other", cfg_.dict_other);
    };
    switch (s) {
      case Stage::Ingest: file("corpus", cfg_.corpus); break;
      case Stage::Match:
        out(kWorksFile);
        dicts();
        break;
      case Stage::Classify:
        out(kWorksFile);
        dicts();
        optfile("prompt.stage1", cfg_.prompt_stage1);
        optfile("prompt.stage2", cfg_.prompt_stage2);
        acc += "strategy=" + std::string(semclass::strategy_name(cfg_.strategy)) + "\n";
        acc += "seed=" + std::to_string(cfg_.seed) + "\n";
        acc += "mock=" + std::string(cfg_.mock_backend ? "true" : "false") + "\n";
        acc += "mock_fail_marker=" + cfg_.mock_fail_marker + "\n";
        if (!cfg_.mock_backend)
          acc += "backend=" + cfg_.backend.endpoint + "|" + cfg_.backend.model + "|" +
                 io::format_double(cfg_.backend.temperature) + "|" + std::to_string(cfg_.backend.max_tokens) + "\n";
        break;
      case Stage::ExtractSections:
        file("fulltext", *cfg_.fulltext);
        acc += "seed=" + std::to_string(cfg_.seed) + "\n";
        break;
      case Stage::Indicators:
        out(kWorksFile);
        out(kMatchesFile);
        out(kClassificationsFile);
        optfile("taxonomy", cfg_.taxonomy);
        break;
      case Stage::Fit:
        out(kLabeledFile);
        for (const auto& m : cfg_.models) file("model", m);
        break;
      case Stage::Geo:
        out(kLabeledFile);
        file("population", *cfg_.population);
        break;
      case Stage::Report:
        for (auto name : {"ingest_stats.json", "match_stats.json", "classify_stats.json", "sections_summary.json",
                          "indicators_summary.json", "fit_metadata.json", "geo_summary.json"})
          if (fs::exists(cfg_.output / name)) out(name);
        break;
    }
    return sha256_hex(acc);
  }

 private:
  StageRecord run_stage(Stage s, const Manifest& prev) {
    StageRecord rec;
    rec.stage = s;
    if (!cfg_.stage_enabled(s)) {
      rec.status = StageStatus::Disabled;
      return rec;
    }
    for (auto dep : stage_dependencies(s)) {
      // A dependency never run leaves the decision to input hashing.
      auto it = prev.stages.find(dep);
      if (it == prev.stages.end() || it->second.status == StageStatus::Disabled) continue;
      if (!it->second.succeeded()) {
        rec.status = StageStatus::Blocked;
        rec.error = "upstream stage " + std::string(stage_name(dep)) + " is " +
                    std::string(status_name(it->second.status));
        return rec;
      }
    }
    try {
      rec.input_hash = input_hash(s);
    } catch (const Error& e) {
      return fail(rec, e.code(), e.what());
    }
    if (auto it = prev.stages.find(s); it != prev.stages.end() && it->second.succeeded() &&
                                       it->second.input_hash == rec.input_hash && outputs_intact(it->second)) {
      rec.outputs = it->second.outputs;
      rec.status = StageStatus::Skipped;
      return rec;
    }
    StageOutput out;
    try {
      out = dispatch(s, rec.input_hash);
    } catch (const Error& e) {
      return fail(rec, e.code(), e.what());
    } catch (const nlohmann::json::exception& e) {
      return fail(rec, Errc::MalformedRecord, e.what());
    } catch (const std::exception& e) {
      return fail(rec, Errc::SourceIO, e.what());
    }
    for (const auto& [name, content] : out.files) {
      io::write_file_atomic(cfg_.output / name, content);
      rec.outputs[name] = sha256_hex(content);
    }
    fs::remove(error_path(s));
    if (out.incomplete) {
      rec.status = StageStatus::Incomplete;
      rec.error = out.note;
      write_error(s, Errc::BackendExhausted, out.note, kExitBackend);
    } else {
      rec.status = StageStatus::Fresh;
    }
    return rec;
  }

  StageOutput dispatch(Stage s, const std::string& hash) {
    switch (s) {
      case Stage::Ingest: return stage_ingest(cfg_);
      case Stage::Match: return stage_match(cfg_);
      case Stage::Classify: return stage_classify(cfg_, hash, log_);
      case Stage::ExtractSections: return stage_sections(cfg_);
      case Stage::Indicators: return stage_indicators(cfg_);
      case Stage::Fit: return stage_fit(cfg_);
      case Stage::Geo: return stage_geo(cfg_);
      case Stage::Report: return stage_report(cfg_);
    }
    throw Error(Errc::InvalidArgument, "bad stage");
  }

  bool outputs_intact(const StageRecord& r) const {
    for (const auto& [name, hash] : r.outputs) {
      auto p = cfg_.output / name;
      if (!fs::exists(p) || sha256_file(p) != hash) return false;
    }
    return true;
  }

  fs::path error_path(Stage s) const { return cfg_.output / "errors" / (std::string(stage_name(s)) + ".json"); }

  void write_error(Stage s, Errc code, const std::string& msg, int exit_code) const {
    fs::create_directories(cfg_.output / "errors");
    ordered_json j;
    j["stage"] = stage_name(s);
    j["code"] = errc_name(code);
    j["message"] = msg;
    j["exit_code"] = exit_code;
    io::write_file_atomic(error_path(s), dump_json(j));
  }

  StageRecord fail(StageRecord rec, Errc code, const std::string& msg) const {
    rec.status = StageStatus::Failed;
    rec.error = msg;
    rec.outputs.clear();
    write_error(rec.stage, code, msg, kExitStage);
    return rec;
  }

  PipelineConfig cfg_;
  std::ostream* log_;
};

// ---------------------------------------------------------------------------
// Validation (outside the stage chain)

/// With coder labels configured: agreement report against the machine
/// labels. Otherwise: a stratified sample plan by field over classified works.
inline ordered_json run_validate(const PipelineConfig& c) {
  const auto dir = c.output / "validation";
  fs::create_directories(dir);
  auto results = semclass::read_results(c.output / kClassificationsFile);
  if (c.coder_labels) {
    std::unordered_map<std::string, std::optional<semclass::MethodLabel>> machine;
    for (const auto& r : results) machine[r.work_id] = r.label;
    auto report = rater::evaluate(rater::adjudicate(rater::read_coder_labels(*c.coder_labels), machine)).to_json();
    io::write_file_atomic(dir / "agreement.json", dump_json(report));
    return report;
  }
  std::unordered_map<std::string, std::string> field_of;
  for (const auto& w : corpus::read_records(c.output / kWorksFile))
    field_of[w.work_id] = w.field_id.value_or(std::string(indicators::kMissingGroup));
  std::vector<rater::FrameItem> frame;
  for (const auto& r : results)
    if (r.label) frame.push_back({r.work_id, field_of.count(r.work_id) ? field_of[r.work_id] : "NA"});
  rater::SamplePlan plan;
  auto sample = rater::draw_stratified_sample(frame, c.validation_target, c.validation_inflation,
                                              derive_seed(c.seed, "validation-sample"), &plan);
  std::string csv = "work_id,stratum\n";
  for (const auto& s : sample) csv += io::csv_field(s.work_id) + "," + io::csv_field(s.stratum) + "\n";
  io::write_file_atomic(dir / "sample.csv", csv);
  ordered_json j;
  j["target"] = c.validation_target;
  j["inflation"] = c.validation_inflation;
  j["inflated_target"] = plan.inflated_target;
  j["strata"] = plan.allocations.size();
  j["allocations"] = plan.allocations;
  io::write_file_atomic(dir / "sample_plan.json", dump_json(j));
  return j;
}

}  // namespace scholarpipe::pipeline

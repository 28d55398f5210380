#pragma once

// Two-stage method classification: stage 1 extracts method sentences from an
// abstract, stage 2 lists the methods and answers whether any is AI-related.
// Prompts go through a pluggable Backend; MockBackend is a deterministic
// dictionary-driven stand-in for a model.

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <array>
#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <thread>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "json.hpp"
#include "scholarpipe/corpus.hpp"
#include "scholarpipe/error.hpp"
#include "scholarpipe/io.hpp"
#include "scholarpipe/lexicon.hpp"
#include "scholarpipe/rng.hpp"
#include "scholarpipe/text.hpp"

namespace scholarpipe::semclass {

using ordered_json = nlohmann::ordered_json;

enum class MethodLabel { NoMethods, NonAIMethods, AIMethods };

inline std::string_view label_name(MethodLabel l) {
  switch (l) {
    case MethodLabel::NoMethods: return "NoMethods";
    case MethodLabel::NonAIMethods: return "NonAIMethods";
    case MethodLabel::AIMethods: return "AIMethods";
  }
  return "";
}

inline constexpr std::string_view kUnclassifiable = "Unclassifiable";

inline std::optional<MethodLabel> parse_label(std::string_view s) {
  if (s == "NoMethods") return MethodLabel::NoMethods;
  if (s == "NonAIMethods") return MethodLabel::NonAIMethods;
  if (s == "AIMethods") return MethodLabel::AIMethods;
  if (s == kUnclassifiable) return std::nullopt;
  throw Error(Errc::MalformedRecord, "unknown label '" + std::string(s) + "'");
}

inline std::string_view label_or_unclassifiable(const std::optional<MethodLabel>& l) {
  return l ? label_name(*l) : kUnclassifiable;
}

// ---------------------------------------------------------------------------
// Prompt templates

inline constexpr std::string_view kStage1Marker = "**Paragraph:**";
inline constexpr std::string_view kStage2Marker = "**Sentences:**";

inline constexpr std::string_view kStage1Template =
    "The following text is an abstract of a scientific work. Extract, verbatim, the sentences about "
    "the methods used in the scientific work.\n"
    "\n"
    "Please don't answer with other text. Just provide the extracted sentences.\n"
    "\n"
    "**Paragraph:**\n"
    "\"{abstract of the scientific work}\"\n";

inline constexpr std::string_view kStage2Template =
    "The following sentences describe the research methods used in a scientific work.\n"
    "Is there any mention of artificial intelligence related methods in any of these sentences?\n"
    "Please provide a list of the scientific methods used in the scientific work.\n"
    "Provide the output in JSON format.\n"
    "\n"
    "**Sentences:**\n"
    "\"{paragraph}\"\n"
    "\n"
    "**Required JSON Structure:**\n"
    "- **Answer**: Answer only with Yes or No.\n"
    "- **Methods**: A comma-separated list of the scientific methods found in the abstract.\n"
    "\n"
    "**Example of the JSON Output:**\n"
    "\n"
    "{{\n"
    "\"Answer\": \"Yes\",\n"
    "\"Methods\": \"{Yes examples}\",\n"
    "}}\n"
    "\n"
    "**Example of the JSON Output:**\n"
    "{{\n"
    "\"Answer\": \"No\",\n"
    "\"Methods\": \"{No examples}\",\n"
    "}}\n"
    "\n"
    "Please strictly follow the JSON format shown in the examples and\n"
    "do not add any extra text outside of the JSON structure.\n";

struct PromptTemplates {
  std::string stage1{kStage1Template};
  std::string stage2{kStage2Template};

  static PromptTemplates load(const std::filesystem::path& stage1, const std::filesystem::path& stage2) {
    return {io::read_file(stage1), io::read_file(stage2)};
  }
};

/// Substitutes {name} placeholders; "{{" and "}}" produce literal braces.
inline std::string render_template(std::string_view tpl, const std::map<std::string, std::string>& values) {
  std::string out;
  out.reserve(tpl.size() + 256);
  for (std::size_t i = 0; i < tpl.size(); ++i) {
    char c = tpl[i];
    if (c == '{' && i + 1 < tpl.size() && tpl[i + 1] == '{') {
      out += '{';
      ++i;
    } else if (c == '}' && i + 1 < tpl.size() && tpl[i + 1] == '}') {
      out += '}';
      ++i;
    } else if (c == '{') {
      auto close = tpl.find('}', i);
      if (close == std::string_view::npos) throw Error(Errc::Config, "unterminated placeholder in template");
      std::string name(tpl.substr(i + 1, close - i - 1));
      auto it = values.find(name);
      if (it == values.end()) throw Error(Errc::Config, "unknown placeholder {" + name + "}");
      out += it->second;
      i = close;
    } else {
      out += c;
    }
  }
  return out;
}

// Text inserted between the template's quote marks gets '"' and '\'
// backslash-escaped so the payload can be recovered exactly.
inline std::string escape_quoted(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    out += c;
  }
  return out;
}

/// Recovers the quoted payload that follows `marker` in a built prompt.
inline std::optional<std::string> extract_quoted_after(std::string_view prompt, std::string_view marker) {
  auto pos = prompt.find(marker);
  if (pos == std::string_view::npos) return std::nullopt;
  pos = prompt.find('"', pos + marker.size());
  if (pos == std::string_view::npos) return std::nullopt;
  std::string out;
  for (std::size_t i = pos + 1; i < prompt.size(); ++i) {
    char c = prompt[i];
    if (c == '\\' && i + 1 < prompt.size()) {
      out += prompt[++i];
    } else if (c == '"') {
      return out;
    } else {
      out += c;
    }
  }
  return std::nullopt;
}

inline std::string build_stage1_prompt(std::string_view abstract, const PromptTemplates& t = {}) {
  if (text::trim(abstract).empty()) throw Error(Errc::InvalidArgument, "abstract is empty");
  return render_template(t.stage1, {{"abstract of the scientific work", escape_quoted(abstract)}});
}

// ---------------------------------------------------------------------------
// Prompting strategies

enum class StrategyKind { Baseline, FixedExamples, RandomExamples };

inline std::string_view strategy_name(StrategyKind k) {
  switch (k) {
    case StrategyKind::Baseline: return "baseline";
    case StrategyKind::FixedExamples: return "fixed";
    case StrategyKind::RandomExamples: return "random";
  }
  return "";
}

inline StrategyKind parse_strategy(std::string_view s) {
  if (s == "baseline") return StrategyKind::Baseline;
  if (s == "fixed") return StrategyKind::FixedExamples;
  if (s == "random") return StrategyKind::RandomExamples;
  throw Error(Errc::Config, "unknown strategy '" + std::string(s) + "'");
}

inline constexpr std::size_t kExamplesPerSide = 8;
inline constexpr std::string_view kBaselinePlaceholder = "method A, method B";

struct ExamplePools {
  std::vector<std::string> ai;
  std::vector<std::string> non_ai;
  std::vector<std::string> fixed_ai;
  std::vector<std::string> fixed_non_ai;

  /// Core dictionary terms; the non-AI side pools linear-model and other
  /// statistics terms.
  static ExamplePools standard() {
    using lexicon::DictionaryName;
    ExamplePools p;
    p.ai = lexicon::builtin_dictionary(DictionaryName::AiTerms).terms;
    p.non_ai = lexicon::builtin_dictionary(DictionaryName::LinearModelTerms).terms;
    auto other = lexicon::builtin_dictionary(DictionaryName::OtherStatsTerms).terms;
    p.non_ai.insert(p.non_ai.end(), other.begin(), other.end());
    p.fixed_ai = {"machine learning",  "deep learning",        "neural network",
                  "random forest",     "support vector machine", "natural language processing",
                  "reinforcement learning", "computer vision"};
    p.fixed_non_ai = {"linear regression", "logistic regression",        "anova",
                      "survival analysis", "cluster analysis",           "principal component analysis",
                      "network analysis",  "multilevel model"};
    return p;
  }
};

struct PromptStrategy {
  StrategyKind kind = StrategyKind::Baseline;
  std::uint64_t seed = 0;  // RandomExamples only; per-work seeds derive from it
  std::shared_ptr<const ExamplePools> pools = std::make_shared<const ExamplePools>(ExamplePools::standard());

  // Strategy with the seed specialised for one work.
  PromptStrategy for_work(std::string_view work_id) const {
    PromptStrategy s = *this;
    s.seed = derive_seed(seed, work_id);
    return s;
  }
};

struct ExampleTerms {
  std::vector<std::string> ai;
  std::vector<std::string> non_ai;
};

namespace detail {

inline std::vector<std::string> draw_without_replacement(const std::vector<std::string>& pool, std::size_t k,
                                                         Rng& rng) {
  std::vector<std::size_t> idx(pool.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::vector<std::string> out;
  for (std::size_t i = 0; i < k; ++i) {
    std::size_t j = i + static_cast<std::size_t>(rng.below(idx.size() - i));
    std::swap(idx[i], idx[j]);
    out.push_back(pool[idx[i]]);
  }
  return out;
}

}  // namespace detail

/// The 8 AI and 8 non-AI example terms the strategy puts in the prompt.
/// Empty for Baseline. Throws PoolTooSmall.
inline ExampleTerms example_terms(const PromptStrategy& s) {
  const auto& p = *s.pools;
  switch (s.kind) {
    case StrategyKind::Baseline:
      return {};
    case StrategyKind::FixedExamples:
      if (p.fixed_ai.size() < kExamplesPerSide || p.fixed_non_ai.size() < kExamplesPerSide)
        throw Error(Errc::PoolTooSmall, "fixed examples need 8 AI and 8 non-AI terms");
      return {{p.fixed_ai.begin(), p.fixed_ai.begin() + kExamplesPerSide},
              {p.fixed_non_ai.begin(), p.fixed_non_ai.begin() + kExamplesPerSide}};
    case StrategyKind::RandomExamples: {
      if (p.ai.size() < kExamplesPerSide || p.non_ai.size() < kExamplesPerSide)
        throw Error(Errc::PoolTooSmall, "random examples need pools of at least 8 terms");
      Rng rng(s.seed);
      auto ai = detail::draw_without_replacement(p.ai, kExamplesPerSide, rng);
      auto non_ai = detail::draw_without_replacement(p.non_ai, kExamplesPerSide, rng);
      return {std::move(ai), std::move(non_ai)};
    }
  }
  return {};
}

inline std::string build_stage2_prompt(std::string_view sentences, const PromptStrategy& strategy,
                                       const PromptTemplates& t = {}) {
  auto ex = example_terms(strategy);
  std::string yes = ex.ai.empty() ? std::string(kBaselinePlaceholder) : text::join(ex.ai, ", ");
  std::string no = ex.non_ai.empty() ? std::string(kBaselinePlaceholder) : text::join(ex.non_ai, ", ");
  return render_template(t.stage2, {{"paragraph", escape_quoted(sentences)}, {"Yes examples", yes}, {"No examples", no}});
}

// ---------------------------------------------------------------------------
// Stage-2 output parsing

enum class ParseStatus { Ok, Repaired, Failed, NotRun };

inline std::string_view parse_status_name(ParseStatus s) {
  switch (s) {
    case ParseStatus::Ok: return "Ok";
    case ParseStatus::Repaired: return "Repaired";
    case ParseStatus::Failed: return "Failed";
    case ParseStatus::NotRun: return "NotRun";
  }
  return "";
}

inline ParseStatus parse_parse_status(std::string_view s) {
  if (s == "Ok") return ParseStatus::Ok;
  if (s == "Repaired") return ParseStatus::Repaired;
  if (s == "Failed") return ParseStatus::Failed;
  if (s == "NotRun") return ParseStatus::NotRun;
  throw Error(Errc::MalformedRecord, "unknown parse status '" + std::string(s) + "'");
}

enum class Answer { Yes, No };

struct StageTwoResult {
  std::string work_id;
  std::optional<Answer> answer;  // absent iff status == Failed
  std::vector<std::string> methods;
  std::string raw_output;
  ParseStatus status = ParseStatus::Failed;
};

namespace detail {

inline bool is_null_method(std::string_view m) {
  auto l = text::to_lower(m);
  return l.empty() || l == "none" || l == "n/a" || l == "na" || l == "no methods";
}

inline std::vector<std::string> split_methods(std::string_view s) {
  std::vector<std::string> out;
  for (auto& piece : text::split(s, ',')) {
    auto t = std::string(text::trim(piece));
    if (!is_null_method(t)) out.push_back(std::move(t));
  }
  return out;
}

// Reads Answer/Methods from a parsed object; false when the shape is wrong.
inline bool interpret(const nlohmann::json& j, StageTwoResult& r) {
  if (!j.is_object()) return false;
  const nlohmann::json* answer = nullptr;
  const nlohmann::json* methods = nullptr;
  for (auto it = j.begin(); it != j.end(); ++it) {
    auto key = text::to_lower(it.key());
    if (key == "answer") answer = &it.value();
    if (key == "methods") methods = &it.value();
  }
  if (!answer || !answer->is_string()) return false;
  auto a = text::to_lower(text::trim(answer->get<std::string>()));
  while (!a.empty() && (a.back() == '.' || a.back() == '!')) a.pop_back();
  if (a == "yes") r.answer = Answer::Yes;
  else if (a == "no") r.answer = Answer::No;
  else return false;
  r.methods.clear();
  if (methods && methods->is_string()) {
    r.methods = split_methods(methods->get<std::string>());
  } else if (methods && methods->is_array()) {
    for (const auto& m : *methods)
      if (m.is_string() && !is_null_method(text::trim(m.get<std::string>())))
        r.methods.emplace_back(text::trim(m.get<std::string>()));
  } else if (methods && !methods->is_null()) {
    return false;
  }
  return true;
}

// First balanced {...} region, honouring JSON string quoting.
inline std::optional<std::string> first_balanced_object(std::string_view s) {
  auto start = s.find('{');
  if (start == std::string_view::npos) return std::nullopt;
  int depth = 0;
  bool in_string = false;
  for (std::size_t i = start; i < s.size(); ++i) {
    char c = s[i];
    if (in_string) {
      if (c == '\\') ++i;
      else if (c == '"') in_string = false;
    } else if (c == '"') {
      in_string = true;
    } else if (c == '{') {
      ++depth;
    } else if (c == '}' && --depth == 0) {
      return std::string(s.substr(start, i - start + 1));
    }
  }
  return std::nullopt;
}

inline std::string strip_trailing_commas(std::string_view s) {
  std::string out;
  bool in_string = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    char c = s[i];
    if (in_string) {
      out += c;
      if (c == '\\' && i + 1 < s.size()) out += s[++i];
      else if (c == '"') in_string = false;
      continue;
    }
    if (c == '"') in_string = true;
    if (c == ',') {
      std::size_t j = i + 1;
      while (j < s.size() && text::is_space(s[j])) ++j;
      if (j < s.size() && (s[j] == '}' || s[j] == ']')) continue;
    }
    out += c;
  }
  return out;
}

inline std::string strip_code_fences(std::string_view s) {
  std::string out;
  for (auto& line : text::split(s, '\n'))
    if (!text::trim(line).starts_with("```")) out += line + "\n";
  return out;
}

}  // namespace detail

/// Strict JSON parse first; then one repair pass (code fences, surrounding
/// prose, trailing commas, first balanced object). Never throws.
inline StageTwoResult parse_stage2_output(std::string_view raw) {
  StageTwoResult r;
  r.raw_output = std::string(raw);
  auto strict = nlohmann::json::parse(text::trim(raw), nullptr, false);
  if (!strict.is_discarded()) {
    if (detail::interpret(strict, r)) {
      r.status = ParseStatus::Ok;
      return r;
    }
  }
  auto candidate = detail::first_balanced_object(detail::strip_code_fences(raw));
  if (candidate) {
    auto repaired = nlohmann::json::parse(detail::strip_trailing_commas(*candidate), nullptr, false);
    if (!repaired.is_discarded() && detail::interpret(repaired, r)) {
      r.status = ParseStatus::Repaired;
      return r;
    }
  }
  r.answer.reset();
  r.methods.clear();
  r.status = ParseStatus::Failed;
  return r;
}

// ---------------------------------------------------------------------------
// Backends

// Transient transport failure; classify_work retries these.
class BackendError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Backend {
 public:
  virtual ~Backend() = default;
  // Must be safe to call from several threads at once.
  virtual std::string complete(const std::string& prompt) = 0;
  virtual ordered_json describe() const = 0;
};

/// Splits on ". " keeping each sentence's final period.
inline std::vector<std::string> split_sentences(std::string_view s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start < s.size()) {
    auto pos = s.find(". ", start);
    if (pos == std::string_view::npos) {
      out.emplace_back(s.substr(start));
      break;
    }
    out.emplace_back(s.substr(start, pos + 1 - start));
    start = pos + 2;
  }
  return out;
}

/// Deterministic stand-in for a model. Stage 1 keeps the sentences that
/// contain any dictionary term; stage 2 answers Yes iff one of them has an
/// AI term and lists the matched terms. Sentences containing `fail_marker`
/// get a non-JSON stage-2 reply.
class MockBackend : public Backend {
 public:
  explicit MockBackend(std::shared_ptr<const lexicon::Matcher> matcher, std::string fail_marker = {})
      : matcher_(std::move(matcher)), fail_marker_(std::move(fail_marker)) {}

  std::string complete(const std::string& prompt) override {
    if (auto sentences = extract_quoted_after(prompt, kStage2Marker)) return stage2(*sentences);
    if (auto abstract = extract_quoted_after(prompt, kStage1Marker)) return stage1(*abstract);
    return "";
  }

  ordered_json describe() const override {
    return {{"backend", "mock"}, {"patterns", matcher_->pattern_count()}, {"fail_marker", fail_marker_}};
  }

  std::string stage1(std::string_view abstract) const {
    std::vector<std::string> kept;
    for (auto& s : split_sentences(abstract))
      if (!matcher_->find_all(s).empty()) kept.push_back(std::move(s));
    return text::join(kept, " ");
  }

  std::string stage2(std::string_view sentences) const {
    if (!fail_marker_.empty() && sentences.find(fail_marker_) != std::string_view::npos)
      return "I cannot help with that";
    bool ai = false;
    std::vector<std::string> methods;
    std::unordered_set<std::string> seen;
    for (const auto& h : matcher_->find_all(sentences)) {
      ai |= h.dictionary == lexicon::DictionaryName::AiTerms;
      if (seen.insert(h.term).second) methods.push_back(h.term);
    }
    ordered_json j;
    j["Answer"] = ai ? "Yes" : "No";
    j["Methods"] = text::join(methods, ", ");
    return j.dump();
  }

 private:
  std::shared_ptr<const lexicon::Matcher> matcher_;
  std::string fail_marker_;
};

// ---------------------------------------------------------------------------
// Per-work classification

struct ClassificationResult {
  std::string work_id;
  StrategyKind strategy = StrategyKind::Baseline;
  std::optional<MethodLabel> label;  // absent = Unclassifiable
  std::vector<std::string> methods;
  ParseStatus parse_status = ParseStatus::NotRun;

  ordered_json to_json() const {
    ordered_json j;
    j["work_id"] = work_id;
    j["strategy"] = strategy_name(strategy);
    j["label"] = label_or_unclassifiable(label);
    j["methods"] = methods;
    j["parse_status"] = parse_status_name(parse_status);
    return j;
  }

  static ClassificationResult from_json(const nlohmann::json& j) {
    ClassificationResult r;
    r.work_id = j.at("work_id").get<std::string>();
    r.strategy = parse_strategy(j.at("strategy").get<std::string>());
    r.label = parse_label(j.at("label").get<std::string>());
    r.methods = j.at("methods").get<std::vector<std::string>>();
    r.parse_status = parse_parse_status(j.at("parse_status").get<std::string>());
    return r;
  }
};

struct ClassifyOptions {
  int transport_retries = 2;  // extra attempts after a BackendError
  int parse_retries = 1;      // identical-prompt retries after a Failed parse
  PromptTemplates templates;
};

struct ClassificationOutcome {
  ClassificationResult result;
  ordered_json audit;
};

/// Runs both stages for one work. Throws BackendExhausted when the transport
/// retry budget is spent.
inline ClassificationOutcome classify_work(const corpus::WorkRecord& work, const PromptStrategy& strategy,
                                           Backend& backend, const ClassifyOptions& opts = {}) {
  ClassificationOutcome out;
  auto& res = out.result;
  res.work_id = work.work_id;
  res.strategy = strategy.kind;
  auto& audit = out.audit;
  audit["work_id"] = work.work_id;
  audit["strategy"] = strategy_name(strategy.kind);
  audit["backend"] = backend.describe();
  auto flags = ordered_json::array();

  auto call = [&](const std::string& prompt) {
    for (int attempt = 0; attempt <= opts.transport_retries; ++attempt) {
      try {
        return backend.complete(prompt);
      } catch (const BackendError&) {
      }
    }
    throw Error(Errc::BackendExhausted, "work " + work.work_id);
  };

  const std::string stage1 = call(build_stage1_prompt(work.abstract_text, opts.templates));
  audit["stage1_output"] = stage1;
  const std::string sentences(text::trim(stage1));
  if (sentences.empty()) {
    res.label = MethodLabel::NoMethods;
    res.parse_status = ParseStatus::NotRun;
    audit["flags"] = flags;
    return out;
  }

  const auto per_work = strategy.for_work(work.work_id);
  if (strategy.kind == StrategyKind::RandomExamples) audit["example_seed"] = per_work.seed;
  const std::string prompt2 = build_stage2_prompt(sentences, per_work, opts.templates);
  StageTwoResult parsed;
  auto raw_outputs = ordered_json::array();
  for (int attempt = 0; attempt <= opts.parse_retries; ++attempt) {
    parsed = parse_stage2_output(call(prompt2));
    raw_outputs.push_back(parsed.raw_output);
    if (parsed.status != ParseStatus::Failed) break;
  }
  audit["stage2_outputs"] = raw_outputs;
  res.parse_status = parsed.status;
  if (parsed.status == ParseStatus::Failed) {
    flags.push_back("unclassifiable");
  } else if (*parsed.answer == Answer::Yes) {
    res.label = MethodLabel::AIMethods;
    res.methods = parsed.methods;
    if (parsed.methods.empty()) flags.push_back("yes_without_methods");
  } else {
    res.methods = parsed.methods;
    res.label = parsed.methods.empty() ? MethodLabel::NoMethods : MethodLabel::NonAIMethods;
  }
  audit["label"] = label_or_unclassifiable(res.label);
  audit["flags"] = flags;
  return out;
}

// ---------------------------------------------------------------------------
// Checkpointing and campaigns

/// Append-only line log. Each line goes out in one write() and is fsync'ed;
/// a torn final line from a crash is cut off when the log is reopened.
class AppendLog {
 public:
  explicit AppendLog(const std::filesystem::path& path, bool durable = true) : path_(path), durable_(durable) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    if (std::filesystem::exists(path)) {
      auto contents = io::read_file(path);
      auto keep = contents.rfind('\n');
      keep = keep == std::string::npos ? 0 : keep + 1;
      if (keep != contents.size()) std::filesystem::resize_file(path, keep);
      for (auto& line : text::split(std::string_view(contents).substr(0, keep), '\n'))
        if (!line.empty()) lines_.push_back(std::move(line));
    }
    fd_ = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
    if (fd_ < 0) throw Error(Errc::SourceIO, "cannot open " + path.string());
  }
  AppendLog(const AppendLog&) = delete;
  AppendLog& operator=(const AppendLog&) = delete;
  ~AppendLog() {
    if (fd_ >= 0) ::close(fd_);
  }

  void append(const std::string& line) {
    std::string buf = line + "\n";
    std::lock_guard lock(mu_);
    std::size_t done = 0;
    while (done < buf.size()) {
      auto n = ::write(fd_, buf.data() + done, buf.size() - done);
      if (n < 0) throw Error(Errc::SourceIO, "write failed on " + path_.string());
      done += static_cast<std::size_t>(n);
    }
    if (durable_ && ::fsync(fd_) != 0) throw Error(Errc::SourceIO, "fsync failed on " + path_.string());
    lines_.push_back(line);
  }

  // Lines present at open plus those appended since.
  std::vector<std::string> lines() const {
    std::lock_guard lock(mu_);
    return lines_;
  }

  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  bool durable_;
  int fd_ = -1;
  mutable std::mutex mu_;
  std::vector<std::string> lines_;
};

/// Completed classifications for one strategy, backed by an AppendLog.
class CheckpointStore {
 public:
  explicit CheckpointStore(const std::filesystem::path& path) : log_(path) {
    for (const auto& line : log_.lines()) {
      auto r = ClassificationResult::from_json(nlohmann::json::parse(line));
      done_.insert(r.work_id);
    }
  }

  bool contains(const std::string& work_id) const {
    std::lock_guard lock(mu_);
    return done_.count(work_id) > 0;
  }

  void record(const ClassificationResult& r) {
    {
      std::lock_guard lock(mu_);
      if (!done_.insert(r.work_id).second) return;
    }
    log_.append(r.to_json().dump());
  }

  std::vector<ClassificationResult> results() const {
    std::vector<ClassificationResult> out;
    for (const auto& line : log_.lines()) out.push_back(ClassificationResult::from_json(nlohmann::json::parse(line)));
    return out;
  }

  std::size_t size() const {
    std::lock_guard lock(mu_);
    return done_.size();
  }

 private:
  AppendLog log_;
  mutable std::mutex mu_;
  std::unordered_set<std::string> done_;
};

struct CampaignOptions {
  std::size_t max_in_flight = 1;
  ClassifyOptions classify;
  // Stops after this many new classifications; used to simulate a crash.
  std::optional<std::size_t> stop_after;
  AppendLog* audit = nullptr;
  std::size_t batch_size = 1024;
};

struct CampaignStats {
  std::uint64_t input = 0;
  std::uint64_t duplicates = 0;
  std::uint64_t already_done = 0;
  std::uint64_t classified = 0;
  std::uint64_t unclassifiable = 0;
  std::uint64_t exhausted = 0;
  bool stopped_early = false;

  ordered_json to_json() const {
    return {{"input", input},         {"duplicates", duplicates}, {"already_done", already_done},
            {"classified", classified}, {"unclassifiable", unclassifiable}, {"exhausted", exhausted},
            {"stopped_early", stopped_early}};
  }
};

using WorkSource = std::function<std::optional<corpus::WorkRecord>()>;

/// Classifies every work not yet in the checkpoint store, once per work_id.
/// Works whose backend calls are exhausted stay out of the store and are
/// picked up by the next run.
inline CampaignStats run_campaign(const WorkSource& source, const PromptStrategy& strategy, Backend& backend,
                                  CheckpointStore& store, const CampaignOptions& opts = {}) {
  CampaignStats stats;
  std::unordered_set<std::string> seen;
  std::atomic<std::size_t> started{0};
  std::mutex stats_mu;
  bool exhausted_source = false;

  while (!exhausted_source && !stats.stopped_early) {
    std::vector<corpus::WorkRecord> batch;
    while (batch.size() < opts.batch_size) {
      auto w = source();
      if (!w) {
        exhausted_source = true;
        break;
      }
      ++stats.input;
      if (!seen.insert(w->work_id).second) {
        ++stats.duplicates;
        continue;
      }
      if (store.contains(w->work_id)) {
        ++stats.already_done;
        continue;
      }
      batch.push_back(std::move(*w));
    }

    std::atomic<std::size_t> next{0};
    auto worker = [&] {
      for (;;) {
        auto i = next.fetch_add(1);
        if (i >= batch.size()) return;
        if (opts.stop_after && started.fetch_add(1) >= *opts.stop_after) {
          std::lock_guard lock(stats_mu);
          stats.stopped_early = true;
          return;
        }
        try {
          auto outcome = classify_work(batch[i], strategy, backend, opts.classify);
          store.record(outcome.result);
          if (opts.audit) opts.audit->append(outcome.audit.dump());
          std::lock_guard lock(stats_mu);
          ++stats.classified;
          if (!outcome.result.label) ++stats.unclassifiable;
        } catch (const Error& e) {
          if (e.code() != Errc::BackendExhausted) throw;
          std::lock_guard lock(stats_mu);
          ++stats.exhausted;
        }
      }
    };
    const std::size_t n_threads = std::max<std::size_t>(1, std::min(opts.max_in_flight, batch.size()));
    if (n_threads == 1) {
      worker();
    } else {
      std::vector<std::thread> pool;
      std::exception_ptr failure;
      std::mutex failure_mu;
      for (std::size_t t = 0; t < n_threads; ++t)
        pool.emplace_back([&] {
          try {
            worker();
          } catch (...) {
            std::lock_guard lock(failure_mu);
            if (!failure) failure = std::current_exception();
            next.store(batch.size());
          }
        });
      for (auto& th : pool) th.join();
      if (failure) std::rethrow_exception(failure);
    }
  }
  return stats;
}

inline CampaignStats run_campaign(const std::vector<corpus::WorkRecord>& works, const PromptStrategy& strategy,
                                  Backend& backend, CheckpointStore& store, const CampaignOptions& opts = {}) {
  std::size_t i = 0;
  WorkSource src = [&]() -> std::optional<corpus::WorkRecord> {
    if (i >= works.size()) return std::nullopt;
    return works[i++];
  };
  return run_campaign(src, strategy, backend, store, opts);
}

/// Canonical campaign output: one record per line, sorted by work_id.
inline std::string render_results(std::vector<ClassificationResult> results) {
  std::sort(results.begin(), results.end(),
            [](const auto& a, const auto& b) { return a.work_id < b.work_id; });
  std::string out;
  for (const auto& r : results) out += r.to_json().dump() + "\n";
  return out;
}

inline std::vector<ClassificationResult> read_results(const std::filesystem::path& path) {
  io::LineReader reader(path);
  std::vector<ClassificationResult> out;
  while (auto line = reader.next())
    if (!text::trim(*line).empty()) out.push_back(ClassificationResult::from_json(nlohmann::json::parse(*line)));
  return out;
}

struct LabelTotals {
  std::uint64_t no_methods = 0;
  std::uint64_t non_ai = 0;
  std::uint64_t ai = 0;
  std::uint64_t unclassifiable = 0;

  std::uint64_t total() const { return no_methods + non_ai + ai + unclassifiable; }

  ordered_json to_json() const {
    return {{"NoMethods", no_methods}, {"NonAIMethods", non_ai}, {"AIMethods", ai}, {"Unclassifiable", unclassifiable}};
  }
};

inline LabelTotals label_totals(const std::vector<ClassificationResult>& results) {
  LabelTotals t;
  for (const auto& r : results) {
    if (!r.label) ++t.unclassifiable;
    else if (*r.label == MethodLabel::NoMethods) ++t.no_methods;
    else if (*r.label == MethodLabel::NonAIMethods) ++t.non_ai;
    else ++t.ai;
  }
  return t;
}

/// 3x3 label cross-table between two strategies over their shared works.
/// Pairs involving an Unclassifiable result are counted aside.
struct CrossTable {
  std::array<std::array<std::uint64_t, 3>, 3> counts{};
  std::uint64_t with_unclassifiable = 0;
  std::uint64_t unmatched = 0;

  std::uint64_t total() const {
    std::uint64_t n = 0;
    for (const auto& row : counts)
      for (auto c : row) n += c;
    return n;
  }
  double disagreement_rate() const {
    auto n = total();
    if (n == 0) return 0.0;
    std::uint64_t diag = counts[0][0] + counts[1][1] + counts[2][2];
    return static_cast<double>(n - diag) / static_cast<double>(n);
  }

  ordered_json to_json() const {
    ordered_json j;
    j["labels"] = {"NoMethods", "NonAIMethods", "AIMethods"};
    j["counts"] = counts;
    j["with_unclassifiable"] = with_unclassifiable;
    j["unmatched"] = unmatched;
    j["disagreement_rate"] = disagreement_rate();
    return j;
  }
};

inline CrossTable cross_table(const std::vector<ClassificationResult>& a, const std::vector<ClassificationResult>& b) {
  std::unordered_map<std::string, const ClassificationResult*> by_id;
  for (const auto& r : b) by_id[r.work_id] = &r;
  CrossTable t;
  std::size_t matched = 0;
  for (const auto& r : a) {
    auto it = by_id.find(r.work_id);
    if (it == by_id.end()) {
      ++t.unmatched;
      continue;
    }
    ++matched;
    if (!r.label || !it->second->label) {
      ++t.with_unclassifiable;
      continue;
    }
    ++t.counts[static_cast<std::size_t>(*r.label)][static_cast<std::size_t>(*it->second->label)];
  }
  t.unmatched += b.size() - matched;
  return t;
}

}  // namespace scholarpipe::semclass

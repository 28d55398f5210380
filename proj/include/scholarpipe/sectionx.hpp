#pragma once

// Full-text methods-section location: segment a document into sections,
// match section titles against methods keywords, and fall back to embedding
// similarity when no title matches.

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "scholarpipe/error.hpp"
#include "scholarpipe/rng.hpp"
#include "scholarpipe/text.hpp"

namespace scholarpipe::sectionx {

struct Section {
  std::string title;
  std::string body;
};

struct Document {
  std::string doc_id;
  std::vector<Section> sections;
};

inline constexpr std::string_view kPreambleTitle = "PREAMBLE";
inline constexpr std::size_t kMaxHeadingChars = 120;

namespace detail {

inline bool is_minor_word(std::string_view w) {
  static constexpr std::string_view kMinor[] = {"a",  "an", "and", "as",  "at",  "by", "for", "from", "in",
                                                "of", "on", "or",  "the", "to",  "via", "vs", "with"};
  auto l = text::to_lower(w);
  for (auto m : kMinor)
    if (l == m) return true;
  return false;
}

}  // namespace detail

/// Heading heuristic for plain text: short, not ending in a period, and
/// either all caps or title case. Leading section numbers ("2.1") are
/// ignored for the case test.
inline bool looks_like_heading(std::string_view line) {
  line = text::trim(line);
  if (line.empty() || line.size() > kMaxHeadingChars) return false;
  if (line.back() == '.' || line.back() == ',' || line.back() == ';') return false;
  auto words = text::split_whitespace(line);
  std::size_t first = 0;
  while (first < words.size() && words[first].find_first_not_of("0123456789.IVXivx") == std::string::npos) ++first;
  if (first == words.size()) return false;

  bool has_letter = false, all_caps = true, title_case = true;
  for (std::size_t i = first; i < words.size(); ++i) {
    const auto& w = words[i];
    std::size_t k = 0;
    while (k < w.size() && !std::isalpha(static_cast<unsigned char>(w[k]))) ++k;
    if (k == w.size()) continue;
    has_letter = true;
    for (char c : w)
      if (std::islower(static_cast<unsigned char>(c))) all_caps = false;
    if (!std::isupper(static_cast<unsigned char>(w[k])) && !(i > first && detail::is_minor_word(w))) title_case = false;
  }
  return has_letter && (all_caps || title_case);
}

/// Splits plain text into sections at heading lines. Text before the first
/// heading becomes a PREAMBLE section. Throws EmptyDocument.
inline Document segment_sections(std::string_view fulltext, std::string doc_id = {}) {
  if (text::trim(fulltext).empty()) throw Error(Errc::EmptyDocument, "document " + doc_id + " is empty");
  Document doc{std::move(doc_id), {}};
  std::optional<Section> cur;
  std::string preamble;
  auto flush = [&] {
    if (cur) {
      cur->body = std::string(text::trim(cur->body));
      doc.sections.push_back(std::move(*cur));
      cur.reset();
    }
  };
  for (auto& line : text::split(fulltext, '\n')) {
    if (looks_like_heading(line)) {
      flush();
      cur = Section{std::string(text::trim(line)), {}};
    } else {
      auto& body = cur ? cur->body : preamble;
      body += line;
      body += '\n';
    }
  }
  flush();
  if (!text::trim(preamble).empty())
    doc.sections.insert(doc.sections.begin(), Section{std::string(kPreambleTitle), std::string(text::trim(preamble))});
  if (doc.sections.empty()) doc.sections.push_back({std::string(kPreambleTitle), std::string(text::trim(fulltext))});
  return doc;
}

/// Structured input: {"doc_id": ..., "sections": [{"title", "body"}]}.
inline Document document_from_json(const nlohmann::json& j) {
  Document doc;
  doc.doc_id = j.at("doc_id").get<std::string>();
  for (const auto& s : j.at("sections"))
    doc.sections.push_back({s.value("title", ""), s.value("body", "")});
  if (doc.sections.empty()) throw Error(Errc::EmptyDocument, "document " + doc.doc_id + " has no sections");
  return doc;
}

class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual std::vector<double> embed(std::string_view text) const = 0;
  virtual std::size_t dimension() const = 0;
};

/// Hash-seeded pseudo-random unit vectors. Equal texts map to equal
/// vectors on every platform.
class HashEmbedder : public Embedder {
 public:
  explicit HashEmbedder(std::size_t dim = 64, std::uint64_t salt = 0) : dim_(dim), salt_(salt) {
    if (dim == 0) throw Error(Errc::InvalidArgument, "embedding dimension must be positive");
  }

  std::vector<double> embed(std::string_view text) const override {
    std::uint64_t state = fnv1a64(text) ^ salt_;
    std::vector<double> v(dim_);
    double norm2 = 0;
    do {
      norm2 = 0;
      for (auto& x : v) {
        x = static_cast<double>(splitmix64(state) >> 11) * 0x1.0p-53 * 2.0 - 1.0;
        norm2 += x * x;
      }
    } while (norm2 == 0.0);
    const double inv = 1.0 / std::sqrt(norm2);
    for (auto& x : v) x *= inv;
    return v;
  }

  std::size_t dimension() const override { return dim_; }

 private:
  std::size_t dim_;
  std::uint64_t salt_;
};

inline double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw Error(Errc::DimensionMismatch, "vectors differ in dimension");
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) throw Error(Errc::ZeroVector, "cosine of a zero vector");
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

inline constexpr std::string_view kMethodKeywords[] = {"methods", "materials", "experimental", "procedure"};
inline constexpr std::string_view kDefaultMethodsQuery = "research methods materials and procedures used in this study";
inline constexpr std::size_t kEmbedTokenBudget = 512;

// First `budget` whitespace tokens; only what is embedded is truncated.
inline std::string truncate_tokens(std::string_view body, std::size_t budget = kEmbedTokenBudget) {
  auto toks = text::split_whitespace(body);
  if (toks.size() > budget) toks.resize(budget);
  return text::join(toks, " ");
}

enum class LocateStrategy { KeywordMatch, SemanticFallback };

inline std::string_view locate_strategy_name(LocateStrategy s) {
  return s == LocateStrategy::KeywordMatch ? "KeywordMatch" : "SemanticFallback";
}

struct MethodsSection {
  std::size_t index = 0;
  LocateStrategy strategy = LocateStrategy::KeywordMatch;
  std::optional<double> similarity;  // fallback only
};

inline bool title_has_method_keyword(std::string_view title) {
  auto l = text::to_lower(title);
  for (auto k : kMethodKeywords)
    if (l.find(k) != std::string::npos) return true;
  return false;
}

/// Keyword stage on titles (first match in document order), otherwise the
/// section whose body is most similar to the methods query; ties go to the
/// earlier section.
inline MethodsSection find_methods_section(const Document& doc, const Embedder& emb,
                                           std::string_view query = kDefaultMethodsQuery) {
  if (doc.sections.empty()) throw Error(Errc::EmptyDocument, "document " + doc.doc_id + " has no sections");
  for (std::size_t i = 0; i < doc.sections.size(); ++i)
    if (title_has_method_keyword(doc.sections[i].title)) return {i, LocateStrategy::KeywordMatch, std::nullopt};

  const auto q = emb.embed(query);
  MethodsSection best{0, LocateStrategy::SemanticFallback, std::nullopt};
  for (std::size_t i = 0; i < doc.sections.size(); ++i) {
    double s = cosine_similarity(q, emb.embed(truncate_tokens(doc.sections[i].body)));
    if (!best.similarity || s > *best.similarity) {
      best.index = i;
      best.similarity = s;
    }
  }
  return best;
}

}  // namespace scholarpipe::sectionx

#pragma once

// Dictionary handling and multi-pattern phrase matching over abstracts.

#include <algorithm>
#include <array>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <string_view>
#include <tuple>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "json.hpp"
#include "scholarpipe/builtin_dictionaries.hpp"
#include "scholarpipe/error.hpp"
#include "scholarpipe/io.hpp"
#include "scholarpipe/text.hpp"

namespace scholarpipe::lexicon {

enum class DictionaryName { AiTerms, LinearModelTerms, OtherStatsTerms };

inline std::string_view dictionary_name(DictionaryName d) {
  switch (d) {
    case DictionaryName::AiTerms: return "AiTerms";
    case DictionaryName::LinearModelTerms: return "LinearModelTerms";
    case DictionaryName::OtherStatsTerms: return "OtherStatsTerms";
  }
  return "";
}

struct Dictionary {
  DictionaryName name = DictionaryName::AiTerms;
  std::vector<std::string> terms;  // lower case, trimmed, unique, in source order

  static Dictionary make(DictionaryName name, const std::vector<std::string>& raw) {
    Dictionary d{name, {}};
    std::unordered_set<std::string> seen;
    for (const auto& r : raw) {
      auto t = text::to_lower(text::normalize_spaces(r));
      if (!t.empty() && seen.insert(t).second) d.terms.push_back(std::move(t));
    }
    if (d.terms.empty())
      throw Error(Errc::EmptyPattern, "dictionary " + std::string(dictionary_name(name)) + " has no terms");
    return d;
  }

  /// Parses the ";"-separated list format. Surrounding quotes and the final
  /// period of a pasted list are dropped.
  static Dictionary parse(DictionaryName name, std::string_view contents) {
    std::vector<std::string> raw;
    for (auto& piece : text::split(contents, ';')) {
      std::string_view t = text::trim(piece);
      while (!t.empty() && (t.front() == '"' || t.front() == '\''))
        t = text::trim(t.substr(1));
      while (!t.empty() && (t.back() == '"' || t.back() == '\'' || t.back() == '.'))
        t = text::trim(t.substr(0, t.size() - 1));
      if (!t.empty()) raw.emplace_back(t);
    }
    return make(name, raw);
  }

  static Dictionary load(DictionaryName name, const std::filesystem::path& path) {
    try {
      return parse(name, io::read_file(path));
    } catch (const Error& e) {
      if (e.code() == Errc::EmptyPattern)
        throw Error(Errc::EmptyPattern, path.string() + ": no terms");
      throw;
    }
  }

  // Appends terms from another list (e.g. translated names), keeping order.
  void merge(const Dictionary& other) {
    std::unordered_set<std::string> seen(terms.begin(), terms.end());
    for (const auto& t : other.terms)
      if (seen.insert(t).second) terms.push_back(t);
  }
};

inline Dictionary builtin_dictionary(DictionaryName name) {
  switch (name) {
    case DictionaryName::AiTerms: return Dictionary::parse(name, builtin::kAiTerms);
    case DictionaryName::LinearModelTerms: return Dictionary::parse(name, builtin::kLinearModelTerms);
    case DictionaryName::OtherStatsTerms: return Dictionary::parse(name, builtin::kOtherStatsTerms);
  }
  return {};
}

enum class TermOrigin { Source, Plural, Spelling, Variant };

inline std::string_view term_origin_name(TermOrigin o) {
  switch (o) {
    case TermOrigin::Source: return "source";
    case TermOrigin::Plural: return "plural";
    case TermOrigin::Spelling: return "spelling";
    case TermOrigin::Variant: return "variant";
  }
  return "";
}

struct ExpansionRuleSet {
  bool plurals = true;
  bool spelling = true;
  std::vector<std::pair<std::string, std::string>> variants;

  static ExpansionRuleSet standard() {
    ExpansionRuleSet rules;
    for (const auto& [a, b] : builtin::kNamingVariants) rules.variants.emplace_back(a, b);
    return rules;
  }
};

struct ExpandedDictionary {
  Dictionary source;
  std::vector<std::string> expanded_terms;
  std::map<std::string, TermOrigin> provenance;
};

namespace detail {

// (American, British) endings of the final token. Both directions apply.
inline constexpr std::pair<std::string_view, std::string_view> kSpellingSuffixes[] = {
    {"izations", "isations"}, {"ization", "isation"}, {"izing", "ising"}, {"izes", "ises"},
    {"ized", "ised"},         {"ize", "ise"},         {"yzing", "ysing"}, {"yzes", "yses"},
    {"yzed", "ysed"},         {"yze", "yse"},         {"elings", "ellings"}, {"eling", "elling"},
    {"eled", "elled"},        {"iors", "iours"},      {"ior", "iour"},    {"vors", "vours"},
    {"vor", "vour"},          {"lors", "lours"},      {"lor", "lour"},    {"mors", "mours"},
    {"mor", "mour"},          {"bors", "bours"},      {"bor", "bour"},
};

inline std::pair<std::string, std::string> split_last_token(const std::string& term) {
  auto pos = term.find_last_of(" -");
  if (pos == std::string::npos) return {"", term};
  return {term.substr(0, pos + 1), term.substr(pos + 1)};
}

inline std::string plural_of(const std::string& term) {
  auto [head, last] = split_last_token(term);
  const bool es = text::ends_with(last, "s") || text::ends_with(last, "x") || text::ends_with(last, "z") ||
                  text::ends_with(last, "ch") || text::ends_with(last, "sh");
  return head + last + (es ? "es" : "s");
}

inline std::vector<std::string> spelling_variants(const std::string& term) {
  auto [head, last] = split_last_token(term);
  std::vector<std::string> out;
  auto try_swap = [&](std::string_view from, std::string_view to) {
    // Short tokens such as "rise" or "wise" are not spelling variants.
    if (last.size() < 6 || !text::ends_with(last, from)) return false;
    out.push_back(head + last.substr(0, last.size() - from.size()) + std::string(to));
    return true;
  };
  for (const auto& [us, uk] : kSpellingSuffixes)
    if (try_swap(us, uk)) break;
  for (const auto& [us, uk] : kSpellingSuffixes)
    if (try_swap(uk, us)) break;
  return out;
}

}  // namespace detail

/// Adds plural forms of the final token, American/British alternations and
/// configured naming variants. Plurals are only derived from source and
/// variant terms, never from terms that are themselves listed plurals.
inline ExpandedDictionary expand_terms(const Dictionary& dict, const ExpansionRuleSet& rules) {
  ExpandedDictionary out{dict, {}, {}};
  auto add = [&](const std::string& t, TermOrigin origin) {
    if (out.provenance.emplace(t, origin).second) out.expanded_terms.push_back(t);
  };
  const std::unordered_set<std::string> listed(dict.terms.begin(), dict.terms.end());

  std::vector<std::pair<std::string, TermOrigin>> bases;
  for (const auto& t : dict.terms) bases.emplace_back(t, TermOrigin::Source);
  for (const auto& [a, b] : rules.variants) {
    auto la = text::to_lower(a), lb = text::to_lower(b);
    if (listed.count(la)) bases.emplace_back(lb, TermOrigin::Variant);
    if (listed.count(lb)) bases.emplace_back(la, TermOrigin::Variant);
  }

  for (const auto& [t, origin] : bases) add(t, origin);
  for (const auto& [t, origin] : bases) {
    std::vector<std::string> forms{t};
    if (rules.plurals) {
      const bool listed_plural = text::ends_with(t, "s") &&
                                 (listed.count(t.substr(0, t.size() - 1)) ||
                                  (text::ends_with(t, "es") && listed.count(t.substr(0, t.size() - 2))));
      if (!listed_plural) {
        forms.push_back(detail::plural_of(t));
        add(forms.back(), TermOrigin::Plural);
      }
    }
    if (rules.spelling)
      for (const auto& f : forms)
        for (auto& v : detail::spelling_variants(f)) add(v, TermOrigin::Spelling);
  }
  return out;
}

inline ExpandedDictionary expand_terms(const ExpandedDictionary& dict, const ExpansionRuleSet& rules) {
  ExpandedDictionary out = dict;
  auto again = expand_terms(dict.source, rules);
  for (const auto& t : again.expanded_terms)
    if (out.provenance.emplace(t, again.provenance.at(t)).second) out.expanded_terms.push_back(t);
  return out;
}

struct Hit {
  std::string term;
  DictionaryName dictionary = DictionaryName::AiTerms;
  std::size_t begin = 0;  // byte offsets into the scanned text
  std::size_t end = 0;

  auto tie() const { return std::tie(begin, end, term, dictionary); }
  bool operator<(const Hit& o) const { return tie() < o.tie(); }
  bool operator==(const Hit& o) const { return tie() == o.tie(); }
};

// Byte folding shared by patterns and text: ASCII lower case, '-' as ' '.
// It is one-to-one on positions, so spans map back to the original text.
inline char fold_byte(char c) { return c == '-' ? ' ' : text::lower_ascii(c); }

inline std::string fold(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = fold_byte(c);
  return out;
}

inline bool at_word_boundary(std::string_view text, std::size_t begin, std::size_t end) {
  const auto* p = reinterpret_cast<const unsigned char*>(text.data());
  return (begin == 0 || !text::is_word_byte(p[begin - 1])) &&
         (end == text.size() || !text::is_word_byte(p[end]));
}

/// Aho-Corasick automaton over folded phrases, compiled to a dense DFA on a
/// reduced alphabet. Immutable after construction.
class Matcher {
 public:
  static Matcher compile(const std::vector<ExpandedDictionary>& dicts) {
    if (dicts.empty()) throw Error(Errc::EmptyPattern, "no dictionaries to compile");
    Matcher m;
    std::unordered_map<std::string, std::size_t> index;
    for (const auto& d : dicts) {
      for (const auto& term : d.expanded_terms) {
        auto key = fold(text::normalize_spaces(term));
        if (text::trim(key).empty()) throw Error(Errc::EmptyPattern, "empty phrase in dictionary");
        auto [it, fresh] = index.emplace(key, m.patterns_.size());
        if (fresh) m.patterns_.push_back({key, {}});
        auto& owners = m.patterns_[it->second].owners;
        std::pair<DictionaryName, std::string> owner{d.source.name, term};
        if (std::find(owners.begin(), owners.end(), owner) == owners.end()) owners.push_back(owner);
      }
    }
    if (m.patterns_.empty()) throw Error(Errc::EmptyPattern, "no phrases to compile");
    m.build();
    return m;
  }

  static Matcher compile_terms(DictionaryName name, const std::vector<std::string>& terms) {
    ExpandedDictionary d;
    d.source = Dictionary::make(name, terms);
    d.expanded_terms = d.source.terms;
    return compile({d});
  }

  /// All occurrences of all phrases at word boundaries, sorted by span.
  /// `steps` receives the number of automaton transitions taken, which is
  /// always the text length.
  std::vector<Hit> find_all(std::string_view text, std::size_t* steps = nullptr) const {
    std::vector<Hit> hits;
    std::int32_t state = 0;
    std::size_t transitions = 0;
    for (std::size_t i = 0; i < text.size(); ++i) {
      const auto cls = class_of_[static_cast<unsigned char>(fold_byte(text[i]))];
      state = delta_[static_cast<std::size_t>(state) * classes_ + cls];
      ++transitions;
      for (auto pid : outputs_[static_cast<std::size_t>(state)]) {
        const auto& pat = patterns_[pid];
        const std::size_t end = i + 1, begin = end - pat.folded.size();
        if (!at_word_boundary(text, begin, end)) continue;
        for (const auto& [dict, term] : pat.owners) hits.push_back({term, dict, begin, end});
      }
    }
    if (steps) *steps = transitions;
    std::sort(hits.begin(), hits.end());
    return hits;
  }

  std::size_t pattern_count() const { return patterns_.size(); }
  std::size_t state_count() const { return outputs_.size(); }

 private:
  struct Pattern {
    std::string folded;
    std::vector<std::pair<DictionaryName, std::string>> owners;
  };

  void build() {
    class_of_.fill(0);
    classes_ = 1;
    for (const auto& p : patterns_)
      for (unsigned char c : p.folded)
        if (class_of_[c] == 0) class_of_[c] = static_cast<std::uint16_t>(classes_++);

    // Trie with -1 for missing edges.
    std::vector<std::int32_t> trie(classes_, -1);
    outputs_.assign(1, {});
    for (std::uint32_t pid = 0; pid < patterns_.size(); ++pid) {
      std::int32_t s = 0;
      for (unsigned char c : patterns_[pid].folded) {
        const auto idx = static_cast<std::size_t>(s) * classes_ + class_of_[c];
        if (trie[idx] < 0) {
          trie[idx] = static_cast<std::int32_t>(outputs_.size());
          outputs_.emplace_back();
          trie.resize(trie.size() + classes_, -1);
        }
        s = trie[idx];
      }
      outputs_[static_cast<std::size_t>(s)].push_back(pid);
    }

    // Breadth-first failure links, folded directly into a complete DFA.
    const std::size_t n = outputs_.size();
    delta_.assign(n * classes_, 0);
    std::vector<std::int32_t> fail(n, 0);
    std::deque<std::int32_t> queue;
    for (std::size_t c = 0; c < classes_; ++c) {
      auto t = trie[c];
      if (t > 0) {
        delta_[c] = t;
        queue.push_back(t);
      }
    }
    while (!queue.empty()) {
      auto s = queue.front();
      queue.pop_front();
      auto& out = outputs_[static_cast<std::size_t>(s)];
      const auto& inherited = outputs_[static_cast<std::size_t>(fail[static_cast<std::size_t>(s)])];
      out.insert(out.end(), inherited.begin(), inherited.end());
      for (std::size_t c = 0; c < classes_; ++c) {
        const auto idx = static_cast<std::size_t>(s) * classes_ + c;
        auto t = trie[idx];
        auto via_fail = delta_[static_cast<std::size_t>(fail[static_cast<std::size_t>(s)]) * classes_ + c];
        if (t >= 0) {
          delta_[idx] = t;
          fail[static_cast<std::size_t>(t)] = via_fail;
          queue.push_back(t);
        } else {
          delta_[idx] = via_fail;
        }
      }
    }
  }

  std::vector<Pattern> patterns_;
  std::array<std::uint16_t, 256> class_of_{};
  std::size_t classes_ = 1;
  std::vector<std::int32_t> delta_;
  std::vector<std::vector<std::uint32_t>> outputs_;
};

struct MatchResult {
  std::string work_id;
  std::vector<Hit> hits;
  bool engaged_ai = false;
  bool uses_linear_terms = false;
  bool uses_other_stats_terms = false;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["work_id"] = work_id;
    j["engaged_ai"] = engaged_ai;
    j["uses_linear_terms"] = uses_linear_terms;
    j["uses_other_stats_terms"] = uses_other_stats_terms;
    auto arr = nlohmann::ordered_json::array();
    for (const auto& h : hits)
      arr.push_back({{"term", h.term}, {"dictionary", dictionary_name(h.dictionary)}, {"begin", h.begin}, {"end", h.end}});
    j["hits"] = arr;
    return j;
  }
};

inline MatchResult match_text(const Matcher& m, std::string work_id, std::string_view abstract) {
  MatchResult r{std::move(work_id), m.find_all(abstract), false, false, false};
  for (const auto& h : r.hits) {
    r.engaged_ai |= h.dictionary == DictionaryName::AiTerms;
    r.uses_linear_terms |= h.dictionary == DictionaryName::LinearModelTerms;
    r.uses_other_stats_terms |= h.dictionary == DictionaryName::OtherStatsTerms;
  }
  return r;
}

// Engagement is decided on the whole abstract, not only on method sentences.
template <typename Work>
MatchResult match_abstract(const Matcher& m, const Work& work) {
  return match_text(m, work.work_id, work.abstract_text);
}

/// The three built-in dictionaries, expanded with the standard rules.
inline std::vector<ExpandedDictionary> standard_dictionaries() {
  const auto rules = ExpansionRuleSet::standard();
  std::vector<ExpandedDictionary> out;
  for (auto name : {DictionaryName::AiTerms, DictionaryName::LinearModelTerms, DictionaryName::OtherStatsTerms})
    out.push_back(expand_terms(builtin_dictionary(name), rules));
  return out;
}

}  // namespace scholarpipe::lexicon

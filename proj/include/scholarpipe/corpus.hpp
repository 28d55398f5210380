#pragma once

// Work records: parsing, filtering, abstract decoding and reference
// categorization for line-delimited scholarly metadata.

#include <algorithm>
#include <compare>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "json.hpp"
#include "scholarpipe/error.hpp"
#include "scholarpipe/io.hpp"
#include "scholarpipe/text.hpp"

namespace scholarpipe::corpus {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

enum class WorkType { Article, Book, BookChapter, Dissertation, Preprint, Other };

inline std::string_view work_type_name(WorkType t) {
  switch (t) {
    case WorkType::Article: return "article";
    case WorkType::Book: return "book";
    case WorkType::BookChapter: return "book-chapter";
    case WorkType::Dissertation: return "dissertation";
    case WorkType::Preprint: return "preprint";
    case WorkType::Other: return "other";
  }
  return "other";
}

inline WorkType parse_work_type(std::string_view s) {
  auto v = text::to_lower(text::trim(s));
  std::replace(v.begin(), v.end(), '_', '-');
  if (v == "article") return WorkType::Article;
  if (v == "book") return WorkType::Book;
  if (v == "book-chapter" || v == "bookchapter") return WorkType::BookChapter;
  if (v == "dissertation") return WorkType::Dissertation;
  if (v == "preprint") return WorkType::Preprint;
  return WorkType::Other;
}

struct Date {
  int year = 1970;
  int month = 1;
  int day = 1;

  auto operator<=>(const Date&) const = default;

  std::string iso() const {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d-%02d-%02d", year, month, day);
    return buf;
  }
};

inline bool is_leap(int y) { return (y % 4 == 0 && y % 100 != 0) || y % 400 == 0; }

inline int days_in_month(int y, int m) {
  static constexpr int kDays[] = {31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
  return m == 2 && is_leap(y) ? 29 : kDays[m - 1];
}

/// Parses YYYY-MM-DD, YYYY-MM or YYYY. Coarser precision is coerced to the
/// first day of the period. Throws MalformedRecord.
inline Date parse_date(std::string_view s) {
  s = text::trim(s);
  auto num = [&](std::string_view part) {
    if (part.empty()) throw Error(Errc::MalformedRecord, "bad date '" + std::string(s) + "'");
    int v = 0;
    for (char c : part) {
      if (c < '0' || c > '9') throw Error(Errc::MalformedRecord, "bad date '" + std::string(s) + "'");
      v = v * 10 + (c - '0');
    }
    return v;
  };
  auto parts = text::split(s, '-');
  if (parts.empty() || parts.size() > 3 || parts[0].size() != 4)
    throw Error(Errc::MalformedRecord, "bad date '" + std::string(s) + "'");
  Date d{num(parts[0]), 1, 1};
  if (parts.size() >= 2) d.month = num(parts[1]);
  if (parts.size() == 3) d.day = num(parts[2]);
  if (d.month < 1 || d.month > 12 || d.day < 1 || d.day > days_in_month(d.year, d.month))
    throw Error(Errc::MalformedRecord, "bad date '" + std::string(s) + "'");
  return d;
}

inline Date add_months(Date d, int months) {
  int total = d.year * 12 + (d.month - 1) + months;
  Date out{total / 12, total % 12 + 1, d.day};
  out.day = std::min(out.day, days_in_month(out.year, out.month));
  return out;
}

inline constexpr Date kEarliestDate{1960, 1, 1};
inline constexpr Date kLatestDate{2024, 12, 31};
inline constexpr std::size_t kMinAbstractChars = 200;
inline constexpr int kCitationWindowMonths = 36;

/// Citations whose date falls within 36 whole months of publication. A
/// citing date equal to the window end is included.
inline std::uint32_t citations_in_window(const Date& pub, const std::vector<Date>& citing) {
  const Date end = add_months(pub, kCitationWindowMonths);
  return static_cast<std::uint32_t>(
      std::count_if(citing.begin(), citing.end(), [&](const Date& c) { return c >= pub && c <= end; }));
}

struct WorkRecord {
  std::string work_id;
  WorkType work_type = WorkType::Article;
  Date pub_date;
  int pub_year = 1970;
  std::string language;  // ISO-639-1, lower case; empty when unknown
  std::string title;
  std::string abstract_text;
  std::optional<std::string> domain_id;
  std::optional<std::string> field_id;
  std::optional<std::string> subfield_id;
  std::optional<std::string> topic_id;
  std::vector<std::string> referenced_ids;
  std::uint32_t citations_3y = 0;
  bool retracted = false;
  std::optional<std::string> first_author_country;
};

// Inverted abstract: token -> positions. Kept as a list of pairs since JSON
// objects may repeat tokens in different casings.
using InvertedAbstract = std::vector<std::pair<std::string, std::vector<std::int64_t>>>;

/// Places each token at its positions and joins with single spaces. Missing
/// positions are skipped. Throws DuplicatePosition when two entries claim
/// the same slot.
inline std::string decode_inverted_abstract(const InvertedAbstract& inv) {
  std::vector<std::pair<std::int64_t, const std::string*>> slots;
  for (const auto& [token, positions] : inv)
    for (auto p : positions) {
      if (p < 0) throw Error(Errc::MalformedRecord, "negative position in inverted abstract");
      slots.emplace_back(p, &token);
    }
  std::sort(slots.begin(), slots.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  std::string out;
  for (std::size_t i = 0; i < slots.size(); ++i) {
    if (i > 0 && slots[i].first == slots[i - 1].first)
      throw Error(Errc::DuplicatePosition, "position " + std::to_string(slots[i].first) + " claimed twice");
    if (i) out += ' ';
    out += *slots[i].second;
  }
  return out;
}

inline InvertedAbstract inverted_abstract_from_json(const json& j) {
  if (!j.is_object()) throw Error(Errc::MalformedRecord, "inverted abstract is not an object");
  InvertedAbstract inv;
  inv.reserve(j.size());
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!it.value().is_array()) throw Error(Errc::MalformedRecord, "positions must be an array");
    std::vector<std::int64_t> positions;
    for (const auto& p : it.value()) {
      if (!p.is_number_integer()) throw Error(Errc::MalformedRecord, "position must be an integer");
      positions.push_back(p.get<std::int64_t>());
    }
    inv.emplace_back(it.key(), std::move(positions));
  }
  return inv;
}

enum class RejectReason { TypeExcluded, DateOutOfRange, AbstractTooShort };

inline std::string_view reject_reason_name(RejectReason r) {
  switch (r) {
    case RejectReason::TypeExcluded: return "TypeExcluded";
    case RejectReason::DateOutOfRange: return "DateOutOfRange";
    case RejectReason::AbstractTooShort: return "AbstractTooShort";
  }
  return "";
}

struct FilterOutcome {
  bool accepted = true;
  RejectReason reason = RejectReason::TypeExcluded;  // meaningful iff !accepted

  static FilterOutcome accept() { return {}; }
  static FilterOutcome reject(RejectReason r) { return {false, r}; }
  bool operator==(const FilterOutcome&) const = default;
};

/// Keeps articles, books, book chapters, dissertations and preprints dated
/// 1960-01-01..2024-12-31 (inclusive) with at least 200 characters of
/// abstract, counted in Unicode scalars.
inline FilterOutcome filter_work(const WorkRecord& rec) {
  if (rec.work_type == WorkType::Other) return FilterOutcome::reject(RejectReason::TypeExcluded);
  if (rec.pub_date < kEarliestDate || rec.pub_date > kLatestDate)
    return FilterOutcome::reject(RejectReason::DateOutOfRange);
  if (text::utf8_length(rec.abstract_text) < kMinAbstractChars)
    return FilterOutcome::reject(RejectReason::AbstractTooShort);
  return FilterOutcome::accept();
}

namespace detail {

inline std::optional<std::string> optional_string(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  if (it->is_string()) return it->get<std::string>();
  if (it->is_number_integer()) return std::to_string(it->get<long long>());
  throw Error(Errc::MalformedRecord, std::string("field '") + key + "' has wrong type");
}

inline json optional_json(const std::optional<std::string>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace detail

/// Builds a WorkRecord from one parsed input object. Throws MalformedRecord
/// when identity, type or date cannot be read.
inline WorkRecord parse_work(const json& j) {
  if (!j.is_object()) throw Error(Errc::MalformedRecord, "record is not an object");
  WorkRecord rec;
  auto id = detail::optional_string(j, "work_id");
  if (!id || id->empty()) throw Error(Errc::MalformedRecord, "missing work_id");
  rec.work_id = std::move(*id);

  auto type = j.find("work_type");
  if (type == j.end() || !type->is_string()) throw Error(Errc::MalformedRecord, "missing work_type");
  rec.work_type = parse_work_type(type->get<std::string>());

  if (auto date = detail::optional_string(j, "pub_date")) {
    rec.pub_date = parse_date(*date);
  } else if (auto year = j.find("pub_year"); year != j.end() && year->is_number_integer()) {
    rec.pub_date = Date{year->get<int>(), 1, 1};
  } else {
    throw Error(Errc::MalformedRecord, "missing pub_date");
  }
  rec.pub_year = rec.pub_date.year;

  rec.language = text::to_lower(detail::optional_string(j, "language").value_or(""));
  rec.title = detail::optional_string(j, "title").value_or("");
  if (auto inv = j.find("abstract_inverted_index"); inv != j.end() && !inv->is_null()) {
    rec.abstract_text = decode_inverted_abstract(inverted_abstract_from_json(*inv));
  } else {
    rec.abstract_text = detail::optional_string(j, "abstract_text").value_or("");
  }
  rec.domain_id = detail::optional_string(j, "domain_id");
  rec.field_id = detail::optional_string(j, "field_id");
  rec.subfield_id = detail::optional_string(j, "subfield_id");
  rec.topic_id = detail::optional_string(j, "topic_id");

  if (auto refs = j.find("referenced_ids"); refs != j.end() && !refs->is_null()) {
    if (!refs->is_array()) throw Error(Errc::MalformedRecord, "referenced_ids must be an array");
    std::unordered_set<std::string> seen;
    for (const auto& r : *refs) {
      if (!r.is_string()) throw Error(Errc::MalformedRecord, "referenced id must be a string");
      auto s = r.get<std::string>();
      if (seen.insert(s).second) rec.referenced_ids.push_back(std::move(s));
    }
  }

  if (auto dates = j.find("citing_dates"); dates != j.end() && dates->is_array()) {
    std::vector<Date> citing;
    for (const auto& d : *dates) citing.push_back(parse_date(d.get<std::string>()));
    rec.citations_3y = citations_in_window(rec.pub_date, citing);
  } else if (auto c = j.find("citations_3y"); c != j.end() && !c->is_null()) {
    if (!c->is_number_integer() || c->get<long long>() < 0)
      throw Error(Errc::MalformedRecord, "citations_3y must be a non-negative integer");
    rec.citations_3y = c->get<std::uint32_t>();
  }

  if (auto r = j.find("retracted"); r != j.end() && !r->is_null()) {
    if (r->is_boolean()) rec.retracted = r->get<bool>();
    else if (r->is_number_integer()) rec.retracted = r->get<int>() != 0;
    else throw Error(Errc::MalformedRecord, "retracted must be boolean");
  }
  if (auto c = detail::optional_string(j, "first_author_country")) {
    std::string code = *c;
    for (auto& ch : code) ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
    if (!code.empty()) rec.first_author_country = code;
  }
  return rec;
}

inline WorkRecord parse_work_line(std::string_view line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& e) {
    throw Error(Errc::MalformedRecord, e.what());
  }
  try {
    return parse_work(j);
  } catch (const json::exception& e) {
    throw Error(Errc::MalformedRecord, e.what());
  }
}

// Normalized output object: same schema as the input, abstract as plain text.
inline ordered_json to_json(const WorkRecord& r) {
  ordered_json j;
  j["work_id"] = r.work_id;
  j["work_type"] = work_type_name(r.work_type);
  j["pub_date"] = r.pub_date.iso();
  j["pub_year"] = r.pub_year;
  j["language"] = r.language;
  j["title"] = r.title;
  j["abstract_text"] = r.abstract_text;
  j["domain_id"] = detail::optional_json(r.domain_id);
  j["field_id"] = detail::optional_json(r.field_id);
  j["subfield_id"] = detail::optional_json(r.subfield_id);
  j["topic_id"] = detail::optional_json(r.topic_id);
  j["referenced_ids"] = r.referenced_ids;
  j["citations_3y"] = r.citations_3y;
  j["retracted"] = r.retracted;
  j["first_author_country"] = detail::optional_json(r.first_author_country);
  return j;
}

struct IngestStats {
  std::uint64_t lines = 0;
  std::uint64_t accepted = 0;
  std::uint64_t malformed = 0;
  std::map<RejectReason, std::uint64_t> rejected;

  std::uint64_t rejected_total() const {
    std::uint64_t n = 0;
    for (const auto& [_, c] : rejected) n += c;
    return n;
  }

  IngestStats& operator+=(const IngestStats& o) {
    lines += o.lines;
    accepted += o.accepted;
    malformed += o.malformed;
    for (const auto& [r, c] : o.rejected) rejected[r] += c;
    return *this;
  }

  ordered_json to_json() const {
    ordered_json j;
    j["lines"] = lines;
    j["accepted"] = accepted;
    j["malformed"] = malformed;
    ordered_json rej = ordered_json::object();
    for (auto r : {RejectReason::TypeExcluded, RejectReason::DateOutOfRange, RejectReason::AbstractTooShort}) {
      auto it = rejected.find(r);
      rej[std::string(reject_reason_name(r))] = it == rejected.end() ? 0 : it->second;
    }
    j["rejected"] = rej;
    return j;
  }
};

/// Lazily yields accepted records from a (possibly gzip-compressed)
/// line-delimited source. Malformed lines are counted and skipped.
class RecordStream {
 public:
  explicit RecordStream(const std::filesystem::path& path) : reader_(path) {}

  std::optional<WorkRecord> next() {
    while (auto line = reader_.next()) {
      ++stats_.lines;
      WorkRecord rec;
      try {
        if (text::trim(*line).empty()) throw Error(Errc::MalformedRecord, "blank line");
        rec = parse_work_line(*line);
      } catch (const Error& e) {
        if (e.code() != Errc::MalformedRecord && e.code() != Errc::DuplicatePosition) throw;
        ++stats_.malformed;
        continue;
      }
      auto verdict = filter_work(rec);
      if (!verdict.accepted) {
        ++stats_.rejected[verdict.reason];
        continue;
      }
      ++stats_.accepted;
      return rec;
    }
    return std::nullopt;
  }

  const IngestStats& stats() const { return stats_; }

 private:
  io::LineReader reader_;
  IngestStats stats_;
};

// Reads a normalized record file fully (records already filtered).
inline std::vector<WorkRecord> read_records(const std::filesystem::path& path) {
  io::LineReader reader(path);
  std::vector<WorkRecord> out;
  while (auto line = reader.next())
    if (!text::trim(*line).empty()) out.push_back(parse_work_line(*line));
  return out;
}

struct Domain {
  std::string id;
  std::string name;
  std::vector<std::string> fields;
};

/// Domain -> field hierarchy plus topic -> field assignments.
class Taxonomy {
 public:
  Taxonomy() = default;

  static Taxonomy from_json(const json& j) {
    Taxonomy t;
    for (const auto& d : j.at("domains")) {
      Domain dom{d.at("id").get<std::string>(), d.value("name", ""), {}};
      for (const auto& f : d.at("fields")) {
        auto fid = f.at("id").get<std::string>();
        if (t.field_domain_.count(fid))
          throw Error(Errc::Config, "field " + fid + " belongs to more than one domain");
        t.field_domain_[fid] = dom.id;
        t.field_name_[fid] = f.value("name", fid);
        dom.fields.push_back(fid);
      }
      t.domains_.push_back(std::move(dom));
    }
    t.cs_field_ = j.at("computer_science_field").get<std::string>();
    if (!t.field_domain_.count(t.cs_field_))
      throw Error(Errc::Config, "computer_science_field " + t.cs_field_ + " is not a known field");
    if (auto topics = j.find("topics"); topics != j.end()) {
      for (auto it = topics->begin(); it != topics->end(); ++it) {
        auto field = it.value().get<std::string>();
        if (!t.field_domain_.count(field))
          throw Error(Errc::Config, "topic " + it.key() + " maps to unknown field " + field);
        t.topic_field_[it.key()] = field;
        ++t.field_topic_count_[field];
      }
    }
    return t;
  }

  static Taxonomy load(const std::filesystem::path& path) {
    try {
      return from_json(json::parse(io::read_file(path)));
    } catch (const json::exception& e) {
      throw Error(Errc::Config, "taxonomy " + path.string() + ": " + e.what());
    }
  }

  const std::vector<Domain>& domains() const { return domains_; }
  const std::string& computer_science_field() const { return cs_field_; }
  std::size_t field_count() const { return field_domain_.size(); }

  std::optional<std::string> domain_of(const std::string& field) const {
    auto it = field_domain_.find(field);
    if (it == field_domain_.end()) return std::nullopt;
    return it->second;
  }
  std::optional<std::string> field_of_topic(const std::string& topic) const {
    auto it = topic_field_.find(topic);
    if (it == topic_field_.end()) return std::nullopt;
    return it->second;
  }
  std::string field_name(const std::string& field) const {
    auto it = field_name_.find(field);
    return it == field_name_.end() ? field : it->second;
  }
  // Number of topics assigned to a field (its topic universe).
  std::size_t topic_universe(const std::string& field) const {
    auto it = field_topic_count_.find(field);
    return it == field_topic_count_.end() ? 0 : it->second;
  }

 private:
  std::vector<Domain> domains_;
  std::map<std::string, std::string> field_domain_;
  std::map<std::string, std::string> field_name_;
  std::map<std::string, std::string> topic_field_;
  std::map<std::string, std::size_t> field_topic_count_;
  std::string cs_field_;
};

struct ReferenceFlags {
  bool cites_same_field = false;
  bool cites_cs = false;
  bool cites_other_excl_cs = false;
  std::size_t resolved = 0;
  std::size_t unresolved = 0;

  bool any() const { return cites_same_field || cites_cs || cites_other_excl_cs; }
};

using FieldResolver = std::function<std::optional<std::string>(const std::string&)>;

/// Categorizes a work's references by the field they resolve to. References
/// the resolver cannot place are skipped and counted.
inline ReferenceFlags reference_flags(const WorkRecord& work, const FieldResolver& resolver,
                                      const std::string& cs_field) {
  ReferenceFlags flags;
  const std::string own = work.field_id.value_or("");
  for (const auto& ref : work.referenced_ids) {
    auto field = resolver(ref);
    if (!field) {
      ++flags.unresolved;
      continue;
    }
    ++flags.resolved;
    if (!own.empty() && *field == own) flags.cites_same_field = true;
    if (*field == cs_field) flags.cites_cs = true;
    if (*field != own && *field != cs_field) flags.cites_other_excl_cs = true;
  }
  return flags;
}

}  // namespace scholarpipe::corpus

#include <map>

#include "scholarpipe/corpus.hpp"
#include "scholarpipe/rng.hpp"
#include "support.hpp"

using namespace scholarpipe;
using namespace scholarpipe::corpus;
using scholarpipe::testing::TempDir;

namespace {

// Test-side encoder: token -> positions in first-occurrence order.
InvertedAbstract invert(const std::string& text) {
  InvertedAbstract inv;
  std::map<std::string, std::size_t> slot;
  auto toks = text::split_whitespace(text);
  for (std::size_t i = 0; i < toks.size(); ++i) {
    auto [it, fresh] = slot.emplace(toks[i], inv.size());
    if (fresh) inv.push_back({toks[i], {}});
    inv[it->second].second.push_back(static_cast<std::int64_t>(i));
  }
  return inv;
}

std::string abstract_of(std::size_t chars) { return std::string(chars, 'a'); }

WorkRecord record(WorkType t, Date d, std::size_t chars) {
  WorkRecord r;
  r.work_id = "W1";
  r.work_type = t;
  r.pub_date = d;
  r.pub_year = d.year;
  r.abstract_text = abstract_of(chars);
  return r;
}

nlohmann::json line_json(const std::string& id, const std::string& date, std::size_t chars) {
  return {{"work_id", id}, {"work_type", "article"}, {"pub_date", date}, {"abstract_text", abstract_of(chars)}};
}

}  // namespace

TEST(Decode, WorkedExamples) {
  EXPECT_EQ(decode_inverted_abstract({}), "");
  EXPECT_EQ(decode_inverted_abstract({{"deep", {0}}, {"learning", {1}}}), "deep learning");
}

TEST(Decode, RepeatedTokensAndOrder) {
  EXPECT_EQ(decode_inverted_abstract({{"b", {1, 3}}, {"a", {0, 2}}}), "a b a b");
}

TEST(Decode, GapsAreSkipped) { EXPECT_EQ(decode_inverted_abstract({{"x", {0}}, {"y", {5}}}), "x y"); }

TEST(Decode, DuplicatePositionThrows) {
  EXPECT_ERRC(decode_inverted_abstract({{"a", {0}}, {"b", {0}}}), Errc::DuplicatePosition);
  EXPECT_ERRC(decode_inverted_abstract({{"a", {-1}}}), Errc::MalformedRecord);
}

TEST(Decode, RoundTripOracle) {
  Rng rng(99);
  const std::vector<std::string> vocab = {"the", "model", "data", "we", "deep-learning", "caf\xC3\xA9", "a", "of",
                                          "results", "(n=12)", "p<0.05", "and"};
  for (int t = 0; t < 1000; ++t) {
    std::vector<std::string> toks;
    for (std::size_t k = 0, n = rng.below(80); k < n; ++k) toks.push_back(vocab[rng.below(vocab.size())]);
    const auto text = text::join(toks, " ");
    ASSERT_EQ(decode_inverted_abstract(invert(text)), text);
  }
}

TEST(Decode, FromJson) {
  auto j = nlohmann::json::parse(R"({"Deep":[0],"learning":[1,3],"and":[2]})");
  EXPECT_EQ(decode_inverted_abstract(inverted_abstract_from_json(j)), "Deep learning and learning");
  EXPECT_ERRC(inverted_abstract_from_json(nlohmann::json::parse(R"({"a":3})")), Errc::MalformedRecord);
  EXPECT_ERRC(inverted_abstract_from_json(nlohmann::json::parse(R"({"a":["x"]})")), Errc::MalformedRecord);
}

TEST(Dates, ParseAndCompare) {
  EXPECT_EQ(parse_date("2010-05-01"), (Date{2010, 5, 1}));
  EXPECT_EQ(parse_date("2010"), (Date{2010, 1, 1}));
  EXPECT_EQ(parse_date("2010-05"), (Date{2010, 5, 1}));
  EXPECT_ERRC(parse_date("2010-13-01"), Errc::MalformedRecord);
  EXPECT_ERRC(parse_date("2010-02-30"), Errc::MalformedRecord);
  EXPECT_ERRC(parse_date("yesterday"), Errc::MalformedRecord);
  EXPECT_LT((Date{2010, 1, 31}), (Date{2010, 2, 1}));
  EXPECT_EQ((Date{2024, 2, 29}).iso(), "2024-02-29");
}

TEST(Dates, AddMonthsClampsDay) {
  EXPECT_EQ(add_months({2020, 1, 31}, 1), (Date{2020, 2, 29}));
  EXPECT_EQ(add_months({2021, 1, 31}, 1), (Date{2021, 2, 28}));
  EXPECT_EQ(add_months({2020, 11, 15}, 36), (Date{2023, 11, 15}));
}

TEST(Citations, WindowIsInclusiveAtEnd) {
  Date pub{2018, 3, 10};
  std::vector<Date> citing = {{2018, 3, 10}, {2021, 3, 10}, {2021, 3, 11}, {2017, 12, 1}, {2019, 6, 1}};
  EXPECT_EQ(citations_in_window(pub, citing), 3u);
}

TEST(Filter, WorkedExamples) {
  EXPECT_EQ(filter_work(record(WorkType::Article, {2010, 5, 1}, 199)),
            FilterOutcome::reject(RejectReason::AbstractTooShort));
  EXPECT_EQ(filter_work(record(WorkType::Article, {1959, 12, 31}, 500)),
            FilterOutcome::reject(RejectReason::DateOutOfRange));
  EXPECT_EQ(filter_work(record(WorkType::Dissertation, {2024, 12, 31}, 200)), FilterOutcome::accept());
  EXPECT_EQ(filter_work(record(WorkType::Article, {1960, 1, 1}, 200)), FilterOutcome::accept());
  EXPECT_EQ(filter_work(record(WorkType::Article, {2025, 1, 1}, 500)),
            FilterOutcome::reject(RejectReason::DateOutOfRange));
}

TEST(Filter, TypeCheckedFirst) {
  EXPECT_EQ(filter_work(record(WorkType::Other, {1900, 1, 1}, 10)), FilterOutcome::reject(RejectReason::TypeExcluded));
  EXPECT_EQ(parse_work_type("dataset"), WorkType::Other);
  EXPECT_EQ(parse_work_type("book-chapter"), WorkType::BookChapter);
}

TEST(Filter, CountsUnicodeScalars) {
  auto r = record(WorkType::Article, {2010, 1, 1}, 0);
  r.abstract_text.clear();
  for (int i = 0; i < 199; ++i) r.abstract_text += "\xC3\xA9";  // 398 bytes, 199 characters
  EXPECT_FALSE(filter_work(r).accepted);
  r.abstract_text += "x";
  EXPECT_TRUE(filter_work(r).accepted);
}

TEST(ParseWork, ReadsAllFields) {
  auto j = nlohmann::json::parse(R"({
    "work_id": "W9", "work_type": "preprint", "pub_date": "2019-07-04", "language": "EN",
    "title": "T", "abstract_inverted_index": {"hello": [0], "world": [1]},
    "domain_id": "D1", "field_id": 17, "topic_id": "T3",
    "referenced_ids": ["A", "B", "A"], "citing_dates": ["2019-08-01", "2023-01-01"],
    "retracted": 1, "first_author_country": "de"})");
  auto r = parse_work(j);
  EXPECT_EQ(r.work_id, "W9");
  EXPECT_EQ(r.work_type, WorkType::Preprint);
  EXPECT_EQ(r.pub_year, 2019);
  EXPECT_EQ(r.language, "en");
  EXPECT_EQ(r.abstract_text, "hello world");
  EXPECT_EQ(r.field_id, "17");
  EXPECT_EQ(r.referenced_ids, (std::vector<std::string>{"A", "B"}));
  EXPECT_EQ(r.citations_3y, 1u);
  EXPECT_TRUE(r.retracted);
  EXPECT_EQ(r.first_author_country, "DE");

  auto back = parse_work(nlohmann::json::parse(to_json(r).dump()));
  EXPECT_EQ(to_json(back), to_json(r));
}

TEST(ParseWork, MalformedInputs) {
  EXPECT_ERRC(parse_work_line("{not json"), Errc::MalformedRecord);
  EXPECT_ERRC(parse_work_line(R"({"work_type":"article","pub_date":"2010"})"), Errc::MalformedRecord);
  EXPECT_ERRC(parse_work_line(R"({"work_id":"x","pub_date":"2010"})"), Errc::MalformedRecord);
  EXPECT_ERRC(parse_work_line(R"({"work_id":"x","work_type":"article"})"), Errc::MalformedRecord);
  EXPECT_ERRC(parse_work_line(R"({"work_id":"x","work_type":"article","pub_date":"2010","citations_3y":-1})"),
              Errc::MalformedRecord);
}

TEST(Stream, CountsMalformedLines) {
  TempDir dir;
  std::string body;
  for (int i = 0; i < 100; ++i) {
    if (i % 14 == 3) body += "{\"broken\n";
    else body += line_json("W" + std::to_string(i), "2010-01-01", 300).dump() + "\n";
  }
  io::write_gzip(dir / "c.jsonl.gz", body);
  RecordStream s(dir / "c.jsonl.gz");
  std::size_t n = 0;
  while (s.next()) ++n;
  EXPECT_EQ(s.stats().malformed, 7u);
  EXPECT_EQ(n, 93u);
  EXPECT_EQ(s.stats().accepted, 93u);
  EXPECT_EQ(s.stats().lines, 100u);
}

TEST(Stream, EmptyAndAllRejected) {
  TempDir dir;
  io::write_gzip(dir / "empty.gz", "");
  RecordStream e(dir / "empty.gz");
  EXPECT_FALSE(e.next());
  EXPECT_EQ(e.stats().lines, 0u);
  EXPECT_EQ(e.stats().rejected_total(), 0u);

  std::string body;
  for (int i = 0; i < 12; ++i) body += line_json("W" + std::to_string(i), "1950-01-01", 300).dump() + "\n";
  io::write_file_atomic(dir / "old.jsonl", body);
  RecordStream s(dir / "old.jsonl");
  EXPECT_FALSE(s.next());
  EXPECT_EQ(s.stats().accepted, 0u);
  EXPECT_EQ(s.stats().rejected.at(RejectReason::DateOutOfRange), 12u);
}

TEST(Stream, UnreadableSource) { EXPECT_ERRC(RecordStream("/no/such/file.gz"), Errc::SourceIO); }

TEST(Stats, MergeIsAdditive) {
  IngestStats a, b;
  a.lines = 3;
  a.rejected[RejectReason::TypeExcluded] = 1;
  b.lines = 4;
  b.malformed = 2;
  b.rejected[RejectReason::TypeExcluded] = 2;
  a += b;
  EXPECT_EQ(a.lines, 7u);
  EXPECT_EQ(a.malformed, 2u);
  EXPECT_EQ(a.rejected_total(), 3u);
}

class References : public ::testing::Test {
 protected:
  std::map<std::string, std::string> fields = {{"cs1", "CS"}, {"cs2", "CS"}, {"bio1", "BIO"}, {"phy1", "PHY"}};
  FieldResolver resolver = [this](const std::string& id) -> std::optional<std::string> {
    auto it = fields.find(id);
    if (it == fields.end()) return std::nullopt;
    return it->second;
  };
  WorkRecord work(std::string field, std::vector<std::string> refs) {
    WorkRecord w;
    w.field_id = std::move(field);
    w.referenced_ids = std::move(refs);
    return w;
  }
};

TEST_F(References, WorkedExamples) {
  auto f = reference_flags(work("CS", {"cs1", "cs2"}), resolver, "CS");
  EXPECT_TRUE(f.cites_same_field);
  EXPECT_TRUE(f.cites_cs);
  EXPECT_FALSE(f.cites_other_excl_cs);

  f = reference_flags(work("BIO", {"cs1", "bio1"}), resolver, "CS");
  EXPECT_TRUE(f.cites_same_field);
  EXPECT_TRUE(f.cites_cs);
  EXPECT_FALSE(f.cites_other_excl_cs);

  f = reference_flags(work("BIO", {}), resolver, "CS");
  EXPECT_FALSE(f.any());
}

TEST_F(References, OtherFieldsAndUnresolved) {
  auto f = reference_flags(work("BIO", {"phy1", "missing", "cs1"}), resolver, "CS");
  EXPECT_FALSE(f.cites_same_field);
  EXPECT_TRUE(f.cites_cs);
  EXPECT_TRUE(f.cites_other_excl_cs);
  EXPECT_EQ(f.resolved, 2u);
  EXPECT_EQ(f.unresolved, 1u);
}

TEST(TaxonomyTest, LoadsHierarchy) {
  auto t = Taxonomy::from_json(nlohmann::json::parse(R"({
    "domains": [{"id": "D1", "name": "Phys", "fields": [{"id": "F1", "name": "CS"}, {"id": "F2"}]},
                {"id": "D2", "name": "Life", "fields": [{"id": "F3", "name": "Bio"}]}],
    "computer_science_field": "F1",
    "topics": {"T1": "F1", "T2": "F1", "T3": "F3"}})"));
  EXPECT_EQ(t.field_count(), 3u);
  EXPECT_EQ(t.domain_of("F3"), "D2");
  EXPECT_EQ(t.field_of_topic("T2"), "F1");
  EXPECT_EQ(t.topic_universe("F1"), 2u);
  EXPECT_EQ(t.topic_universe("F2"), 0u);
  EXPECT_EQ(t.field_name("F3"), "Bio");
  EXPECT_ERRC(Taxonomy::from_json(nlohmann::json::parse(
                  R"({"domains": [{"id": "D1", "fields": [{"id": "F1"}]}], "computer_science_field": "F9"})")),
              Errc::Config);
}

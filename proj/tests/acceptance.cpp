// Acceptance checks. One PASS/FAIL line per criterion; exit status is the
// number of failures.

#include <sys/wait.h>

#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>

#include "oracles.hpp"
#include "scholarpipe/corpus.hpp"
#include "scholarpipe/fixture.hpp"
#include "scholarpipe/glm.hpp"
#include "scholarpipe/indicators.hpp"
#include "scholarpipe/lexicon.hpp"
#include "scholarpipe/rater.hpp"
#include "scholarpipe/sectionx.hpp"

namespace fs = std::filesystem;
using namespace scholarpipe;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void check(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " [failed: " << what << "]";
    }
  }
};

class ScratchDir {
 public:
  ScratchDir() {
    std::random_device rd;
    path_ = fs::temp_directory_path() / ("scholarpipe-acc-" + std::to_string(rd()) + std::to_string(rd()));
    fs::create_directories(path_);
  }
  ~ScratchDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

std::string fmt(double v, int digits = 4) {
  std::ostringstream o;
  o.precision(digits);
  o << std::fixed << v;
  return o.str();
}

// ---------------------------------------------------------------------------

Outcome f1_consistency() {
  Outcome o;
  const double pairs[][3] = {{90.5, 99.1, 94.6}, {92.4, 99.6, 95.9}, {83.0, 96.2, 89.1}, {85.8, 97.9, 91.4}};
  for (const auto& p : pairs) {
    const double f1 = rater::f1_from(p[0], p[1]);
    o.detail << " F1(" << p[0] << "," << p[1] << ")=" << fmt(f1);
    o.check(std::fabs(rater::round1(f1) - p[2]) <= 0.05 + 1e-9, "expected " + fmt(p[2], 1));
  }
  return o;
}

Outcome sampling_arithmetic() {
  Outcome o;
  auto plan = rater::plan_sample(std::vector<std::uint64_t>(24, 2000), 825, 0.105);
  std::uint64_t sum = 0;
  bool in_range = true;
  for (auto a : plan.allocations) {
    sum += a;
    in_range &= a == 37 || a == 38;
  }
  o.detail << " inflated=" << plan.inflated_target << " strata=" << plan.allocations.size() << " sum=" << sum;
  o.check(plan.inflated_target == 911, "inflated target");
  o.check(plan.allocations.size() == 24 && sum == 911, "allocation total");
  o.check(in_range, "allocations are 37 or 38");
  return o;
}

Outcome matcher_equivalence() {
  Outcome o;
  const auto dicts = lexicon::standard_dictionaries();
  const auto m = lexicon::Matcher::compile(dicts);
  std::vector<oracle::Phrase> phrases;
  std::vector<std::string> terms;
  for (const auto& d : dicts)
    for (const auto& t : d.expanded_terms) {
      phrases.push_back({t, static_cast<int>(d.source.name)});
      terms.push_back(t);
    }
  auto as_naive = [](const std::vector<lexicon::Hit>& hits) {
    std::vector<oracle::NaiveHit> out;
    for (const auto& h : hits) out.push_back({h.term, static_cast<int>(h.dictionary), h.begin, h.end});
    return out;
  };
  std::vector<std::string> texts = {
      "deep learning", "Deep-Learning and deep  learning", "deeplearning deep learnings deep learning's",
      "convolutional neural networks outperform neural network baselines",
      "a logit-model; an ANOVA, two anovas (ANOVAs).", "Canova and anovae and xanova",
      "term frequency inverse document frequency and TF-IDF", "random forest-based, random-forests",
      "support vector machine\nsupport-vector-machine", "caf\xC3\xA9 machine learning\xC3\xA9 machine learning",
      "agent based modelling and agent-based modeling", "generalised linear models and generalized linear model", ""};
  const std::size_t curated = texts.size();
  Rng rng(31337);
  for (int i = 0; i < 10000; ++i) texts.push_back(oracle::fuzz_abstract(rng, terms));
  std::size_t mismatches = 0, hits = 0;
  for (const auto& t : texts) {
    auto got = as_naive(m.find_all(t));
    hits += got.size();
    if (got != oracle::naive_scan(phrases, t)) ++mismatches;
  }
  o.detail << " texts=" << texts.size() << " (curated " << curated << ") hits=" << hits << " mismatches=" << mismatches;
  o.check(mismatches == 0, "zero mismatches");
  o.check(hits > 0, "non-trivial corpus");
  return o;
}

std::map<std::string, std::string> snapshot(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    auto rel = fs::relative(e.path(), root).generic_string();
    if (rel.rfind("checkpoints/", 0) == 0) continue;
    out[rel] = io::read_file(e.path());
  }
  return out;
}

Outcome end_to_end_determinism() {
  Outcome o;
  ScratchDir a, b;
  std::map<std::string, std::string> outputs[2];
  int idx = 0;
  for (const auto* dir : {&a, &b}) {
    auto p = fixture::write_fixture(dir->path());
    const std::string cmd = std::string(SCHOLARPIPE_CLI) + " run-all --config " + p.config.string() + " 2>/dev/null";
    const int rc = std::system(cmd.c_str());
    o.check(WIFEXITED(rc) && WEXITSTATUS(rc) == 0, "run-all exit status");
    outputs[idx++] = snapshot(dir->path() / "out");
  }
  std::size_t differing = 0;
  for (const auto& [name, content] : outputs[0])
    if (!outputs[1].count(name) || outputs[1].at(name) != content) ++differing;
  o.detail << " files=" << outputs[0].size() << " differing=" << differing;
  o.check(outputs[0].size() == outputs[1].size() && differing == 0, "byte-identical outputs");

  const auto labels = nlohmann::json::parse(outputs[0]["classify_stats.json"])["labels"];
  o.detail << " labels=" << labels.dump();
  o.check(labels.value("AIMethods", 0) == 120 && labels.value("NonAIMethods", 0) == 430 &&
              labels.value("NoMethods", 0) == 440 && labels.value("Unclassifiable", 0) == 10,
          "planted composition 120/430/440/10");
  return o;
}

Outcome glm_correctness() {
  Outcome o;
  Rng rng(5);
  std::mt19937_64 eng(5);

  Eigen::VectorXd y(37);
  for (Eigen::Index i = 0; i < y.size(); ++i) y(i) = static_cast<double>(rng.below(25));
  y(0) += 1;
  const double b0 = glm::fit_quasipoisson(Eigen::MatrixXd::Ones(y.size(), 1), y).coefficients(0);
  o.detail << " |b0-ln(ybar)|=" << std::fabs(b0 - std::log(y.mean()));
  o.check(std::fabs(b0 - std::log(y.mean())) < 1e-10, "intercept-only");

  Eigen::MatrixXd X2(20, 2);
  Eigen::VectorXd y2(20);
  for (Eigen::Index i = 0; i < 20; ++i) {
    X2.row(i) << 1, i < 10 ? 0 : 1;
    y2(i) = static_cast<double>(std::poisson_distribution<int>(i < 10 ? 3.0 : 8.0)(eng));
  }
  const double slope = glm::fit_quasipoisson(X2, y2).coefficients(1);
  const double closed = std::log(y2.tail(10).mean() / y2.head(10).mean());
  o.detail << " |slope-ln(m1/m0)|=" << std::fabs(slope - closed);
  o.check(std::fabs(slope - closed) < 1e-8, "binary covariate slope");

  // 200 rows over the standard factors versus the Newton oracle.
  const auto spec = glm::DesignSpec::standard();
  std::vector<glm::ModelRecord> recs;
  for (int i = 0; i < 200; ++i) {
    glm::ModelRecord r;
    double eta = 0.3;
    for (const auto& f : spec.factors) {
      const auto k = rng.below(f.levels.size());
      r.levels[f.name] = f.levels[k];
      eta += 0.2 * static_cast<double>(k);
    }
    r.y = static_cast<double>(std::poisson_distribution<int>(std::exp(eta))(eng));
    recs.push_back(r);
  }
  auto d = glm::encode_design(recs, spec);
  oracle::Matrix Xo(200, std::vector<double>(16));
  std::vector<double> yo(200);
  for (Eigen::Index i = 0; i < 200; ++i) {
    for (Eigen::Index j = 0; j < 16; ++j) Xo[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = d.X(i, j);
    yo[static_cast<std::size_t>(i)] = d.y(i);
  }
  const auto ref = oracle::newton_poisson(Xo, yo);
  auto fit = glm::fit_quasipoisson(d);
  double worst = 0;
  for (std::size_t j = 0; j < 16; ++j) worst = std::max(worst, std::fabs(fit.coefficients(static_cast<Eigen::Index>(j)) - ref[j]));
  o.detail << " oracle_max_diff=" << worst;
  o.check(fit.converged && worst < 1e-6, "Newton oracle agreement");

  bool monotone = true;
  for (std::size_t k = 1; k < fit.deviance_trace.size(); ++k)
    monotone &= fit.deviance_trace[k] <= fit.deviance_trace[k - 1] + 1e-9;
  o.check(monotone, "deviance monotone");

  const Eigen::Index n = 10000;
  Eigen::MatrixXd X3(n, 2);
  Eigen::VectorXd y3(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double x = rng.uniform();
    X3.row(i) << 1, x;
    y3(i) = static_cast<double>(std::poisson_distribution<int>(std::exp(1.0 - 0.5 * x))(eng));
  }
  const double phi = glm::fit_quasipoisson(X3, y3).dispersion;
  o.detail << " phi=" << fmt(phi);
  o.check(std::fabs(phi - 1.0) < 0.1, "dispersion near one");
  return o;
}

Outcome agreement_metrics() {
  Outcome o;
  o.check(rater::cohens_kappa(rater::ConfusionTable{30, 0, 0, 70}) == 1.0, "kappa diagonal");
  o.check(rater::cohens_kappa({{20, 0, 0}, {0, 7, 0}, {0, 0, 3}}) == 1.0, "kappa 3x3 diagonal");
  o.check(rater::cohens_kappa(rater::ConfusionTable{25, 25, 25, 25}) == 0.0, "kappa independence");
  o.check(rater::cohens_kappa({{4, 2}, {6, 3}}) == 0.0, "kappa product table");
  const double k = rater::cohens_kappa(rater::ConfusionTable{45, 5, 15, 35});
  o.detail << " kappa=" << fmt(k, 12);
  o.check(std::fabs(k - 0.6) < 1e-12, "kappa 0.60");
  o.check(rater::krippendorff_alpha({{1, 1, 1}, {0, 0, 0}, {2, 2, std::nullopt}}) == 1.0, "alpha unanimous");
  const double a = rater::krippendorff_alpha({{0, 0}, {0, 1}, {1, 1}, {1, 0}});
  o.detail << " alpha_counterexample=" << fmt(a, 6);
  o.check(std::fabs(a - (-1.0 / 3.0)) < 1e-9, "alpha -1/3 on the counterexample");
  return o;
}

std::optional<int> onset_oracle(const std::map<int, double>& v) {
  for (const auto& [y, _] : v) {
    if (y <= indicators::kOnsetAfterYear) continue;
    bool ok = true;
    for (int k = y + 1; k <= y + 5 && ok; ++k) ok = v.count(k) && v.count(k - 1) && v.at(k) > v.at(k - 1);
    if (ok) return y;
  }
  return std::nullopt;
}

Outcome growth_mathematics() {
  Outcome o;
  const auto g = indicators::growth_multiple(1.25, 5.0, 2005, 2024);
  o.detail << " rate=" << fmt(100 * g.annual_rate) << "%";
  o.check(std::fabs(100 * g.annual_rate - 7.57) <= 0.01, "annual rate 7.57%");

  Rng rng(7);
  int correct = 0, dips = 0;
  for (int i = 0; i < 50; ++i) {
    const int planted = 2005 + static_cast<int>(rng.below(15));
    std::map<int, double> v;
    for (int y = 2000; y < planted; ++y) v[y] = 10.0 + (y % 2) + 0.01 * static_cast<double>(rng.below(50));
    // Every other series rises before the onset but dips every fourth year,
    // so no earlier stretch reaches five increases.
    if (i % 2 == 0) {
      for (int y = 2000; y < planted; ++y) v[y] = y % 4 == 0 ? 1.0 : static_cast<double>(y - 1990);
      ++dips;
    }
    v[planted] = 0.25;
    double cur = v[planted];
    for (int y = planted + 1; y <= 2024; ++y) {
      cur = y <= planted + 5 ? cur + 1.0 + static_cast<double>(rng.below(5)) : cur + static_cast<double>(rng.below(5)) - 2.0;
      v[y] = cur;
    }
    const auto got = indicators::growth_onset(v);
    if (got == std::optional<int>(planted) && got == onset_oracle(v)) ++correct;
  }
  o.detail << " onset_correct=" << correct << "/50 (dip cases " << dips << ")";
  o.check(correct == 50, "planted onsets");
  return o;
}

Outcome section_extraction() {
  Outcome o;
  const auto lines = text::split(fixture::fulltext_lines({}), '\n');
  sectionx::HashEmbedder e;
  std::size_t docs = 0, keyword = 0, fallback = 0, unstable = 0;
  for (const auto& l : lines) {
    if (text::trim(l).empty()) continue;
    auto j = nlohmann::json::parse(l);
    auto d = sectionx::segment_sections(j["text"].get<std::string>(), j["doc_id"].get<std::string>());
    auto a = sectionx::find_methods_section(d, e);
    auto b = sectionx::find_methods_section(d, sectionx::HashEmbedder{});
    ++docs;
    (a.strategy == sectionx::LocateStrategy::KeywordMatch ? keyword : fallback)++;
    if (a.index != b.index || a.similarity != b.similarity) ++unstable;
  }
  o.detail << " docs=" << docs << " keyword=" << keyword << " fallback=" << fallback << " unstable=" << unstable;
  o.check(docs == 200 && keyword == 190 && fallback == 10, "95/5 split");
  o.check(unstable == 0, "stable selection");
  return o;
}

Outcome inverted_round_trip() {
  Outcome o;
  Rng rng(9);
  std::size_t bad = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto t = oracle::random_normalized_text(rng);
    if (corpus::decode_inverted_abstract(oracle::invert(t)) != t) ++bad;
  }
  o.detail << " texts=1000 mismatches=" << bad;
  o.check(bad == 0, "exact round trip");
  return o;
}

Outcome geography_filter() {
  Outcome o;
  // (code, population, publications, in table)
  struct Plan {
    std::string code;
    std::uint64_t population;
    int publications;
    bool in_table;
  };
  const std::vector<Plan> plans = {{"AA", 1'000'000, 100, true}, {"BB", 999'999, 100, true},
                                   {"CC", 1'000'000, 99, true},  {"DD", 50'000'000, 400, true},
                                   {"EE", 999'999, 99, true},    {"FF", 0, 150, false}};
  std::vector<indicators::LabeledWork> works;
  std::map<std::string, std::uint64_t> pop;
  for (const auto& p : plans) {
    if (p.in_table) pop[p.code] = p.population;
    for (int i = 0; i < p.publications; ++i) {
      indicators::LabeledWork w;
      w.work_id = p.code + std::to_string(i);
      w.year = 2020;
      w.country = p.code;
      w.label = i % 10 == 0 ? semclass::MethodLabel::AIMethods : semclass::MethodLabel::NonAIMethods;
      works.push_back(w);
    }
  }
  indicators::LabeledWork stateless;
  stateless.work_id = "NOCOUNTRY";
  stateless.year = 2020;
  stateless.label = semclass::MethodLabel::AIMethods;
  works.push_back(stateless);
  auto rep = indicators::country_stats(works, pop);

  std::set<std::string> expect_in, got_in;
  std::uint64_t expect_excluded = 0;
  for (const auto& p : plans) {
    if (p.in_table && p.population >= 1'000'000 && p.publications >= 100) expect_in.insert(p.code);
    else expect_excluded += static_cast<std::uint64_t>(p.publications);
  }
  for (const auto& c : rep.included) got_in.insert(c.country);
  o.detail << " included=" << got_in.size() << " excluded_countries=" << rep.excluded.size()
           << " excluded_works=" << rep.excluded_works << " unattributed=" << rep.unattributed_works;
  o.check(got_in == expect_in, "inclusion rule");
  o.check(rep.excluded_works == expect_excluded, "excluded work count");
  o.check(rep.unattributed_works == 1, "unattributed count");
  return o;
}

}  // namespace

int main() {
  const std::pair<const char*, std::function<Outcome()>> criteria[] = {
      {"F1 consistency", f1_consistency},
      {"sampling arithmetic", sampling_arithmetic},
      {"matcher oracle equivalence", matcher_equivalence},
      {"end-to-end determinism", end_to_end_determinism},
      {"GLM correctness", glm_correctness},
      {"agreement metrics", agreement_metrics},
      {"growth mathematics", growth_mathematics},
      {"section extraction split", section_extraction},
      {"inverted-abstract round trip", inverted_round_trip},
      {"geography filter", geography_filter},
  };
  int failures = 0, n = 0;
  for (const auto& [name, run] : criteria) {
    ++n;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail << " [exception: " << e.what() << "]";
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failures += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " " << n << " " << name << " (" << fmt(secs, 2) << "s)"
              << o.detail.str() << std::endl;
  }
  std::cout << (n - failures) << "/" << n << " criteria passed" << std::endl;
  return failures;
}

#include <random>

#include "oracles.hpp"
#include "scholarpipe/glm.hpp"
#include "scholarpipe/rng.hpp"
#include "support.hpp"

using namespace scholarpipe;
using namespace scholarpipe::glm;
using scholarpipe::testing::TempDir;

namespace {

Eigen::MatrixXd to_eigen(const oracle::Matrix& m) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(m.size()), static_cast<Eigen::Index>(m[0].size()));
  for (std::size_t i = 0; i < m.size(); ++i)
    for (std::size_t j = 0; j < m[i].size(); ++j) out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = m[i][j];
  return out;
}

Eigen::VectorXd to_eigen(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

ModelRecord record(std::string pt, std::string yb, std::string lang, std::string ml, double y, double offset = 0) {
  return {{{"publication_type", pt}, {"year_bin", yb}, {"language", lang}, {"method_label", ml}}, y, offset};
}

// Random categorical records over the standard factors with Poisson responses.
std::vector<ModelRecord> random_records(std::uint64_t seed, std::size_t n, double base_rate) {
  Rng rng(seed);
  std::mt19937_64 eng(seed);
  const auto spec = DesignSpec::standard();
  std::vector<ModelRecord> out;
  for (std::size_t i = 0; i < n; ++i) {
    ModelRecord r;
    double eta = std::log(base_rate);
    for (const auto& f : spec.factors) {
      const auto k = rng.below(f.levels.size());
      r.levels[f.name] = f.levels[k];
      eta += 0.15 * static_cast<double>(k);
    }
    r.y = static_cast<double>(std::poisson_distribution<int>(std::exp(eta))(eng));
    out.push_back(r);
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Encoding

TEST(Encode, ReferenceRowAndColumnCount) {
  const auto spec = DesignSpec::standard();
  EXPECT_EQ(spec.column_count(), 16u);
  EXPECT_EQ(spec.column_names().size(), 16u);
  EXPECT_EQ(spec.column_names()[0], "(Intercept)");
  EXPECT_EQ(spec.column_names()[1], "publication_type=book");

  auto row = encode_row(record("article", "[2000,2005)", "English", "NoMethods", 0), spec);
  EXPECT_EQ(row.sum(), 1.0);
  EXPECT_EQ(row(0), 1.0);

  auto ai = encode_row(record("preprint", "[2020,2025]", "Other", "AIMethods", 0), spec);
  EXPECT_EQ(ai.sum(), 5.0);
  EXPECT_EQ(ai(3), 1.0);   // preprint
  EXPECT_EQ(ai(7), 1.0);   // [2020,2025]
  EXPECT_EQ(ai(13), 1.0);  // Other
  EXPECT_EQ(ai(15), 1.0);  // AIMethods
}

TEST(Encode, CatchAllAndUnknownLevels) {
  const auto spec = DesignSpec::standard();
  EXPECT_EQ(encode_row(record("article", "[2000,2005)", "Catalan", "NoMethods", 0), spec),
            encode_row(record("article", "[2000,2005)", "Other", "NoMethods", 0), spec));
  EXPECT_ERRC(encode_row(record("poster", "[2000,2005)", "English", "NoMethods", 0), spec), Errc::UnknownLevel);
  ModelRecord missing{{{"publication_type", "article"}}, 0, 0};
  EXPECT_ERRC(encode_row(missing, spec), Errc::UnknownLevel);

  EXPECT_EQ(language_level("ca"), "Other");
  EXPECT_EQ(language_level(" EN "), "English");
  EXPECT_EQ(language_level("Portuguese"), "Portuguese");
  EXPECT_EQ(year_bin_level(2004), "[2000,2005)");
  EXPECT_EQ(year_bin_level(2005), "[2005,2010)");
  EXPECT_EQ(year_bin_level(2025), "[2020,2025]");
  EXPECT_ERRC(year_bin_level(1999), Errc::UnknownLevel);
  EXPECT_EQ(publication_type_level("book-chapter"), "book");
  EXPECT_ERRC(publication_type_level("poster"), Errc::UnknownLevel);
}

// ---------------------------------------------------------------------------
// Fitting

TEST(Fit, InterceptOnlyIsLogMean) {
  Rng rng(1);
  for (int rep = 0; rep < 20; ++rep) {
    const Eigen::Index n = 5 + static_cast<Eigen::Index>(rng.below(50));
    Eigen::VectorXd y(n);
    for (Eigen::Index i = 0; i < n; ++i) y(i) = static_cast<double>(rng.below(30));
    y(0) += 1;
    auto fit = fit_quasipoisson(Eigen::MatrixXd::Ones(n, 1), y);
    EXPECT_TRUE(fit.converged);
    EXPECT_NEAR(fit.coefficients(0), std::log(y.mean()), 1e-10);
  }
}

TEST(Fit, BinaryCovariateSlopeIsLogRatio) {
  // 20 rows, ten per group.
  Eigen::MatrixXd X(20, 2);
  Eigen::VectorXd y(20);
  const double g0[] = {3, 0, 4, 2, 5, 1, 3, 2, 6, 4}, g1[] = {9, 7, 12, 8, 10, 6, 11, 9, 7, 13};
  for (int i = 0; i < 10; ++i) {
    X.row(i) << 1, 0;
    y(i) = g0[i];
    X.row(10 + i) << 1, 1;
    y(10 + i) = g1[i];
  }
  const double m0 = y.head(10).mean(), m1 = y.tail(10).mean();
  auto fit = fit_quasipoisson(X, y);
  EXPECT_NEAR(fit.coefficients(0), std::log(m0), 1e-8);
  EXPECT_NEAR(fit.coefficients(1), std::log(m1 / m0), 1e-8);
}

TEST(Fit, MatchesNewtonOracleOnRandomFixture) {
  for (std::uint64_t seed : {200u, 201u, 202u}) {
    auto recs = random_records(seed, 200, 2.0);
    auto d = encode_design(recs, DesignSpec::standard());
    oracle::Matrix X(200, std::vector<double>(16));
    std::vector<double> y(200);
    for (Eigen::Index i = 0; i < 200; ++i) {
      for (Eigen::Index j = 0; j < 16; ++j) X[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = d.X(i, j);
      y[static_cast<std::size_t>(i)] = d.y(i);
    }
    const auto ref = oracle::newton_poisson(X, y);
    auto fit = fit_quasipoisson(d);
    ASSERT_TRUE(fit.converged);
    EXPECT_EQ(fit.columns.size(), 16u);
    for (std::size_t j = 0; j < 16; ++j) EXPECT_NEAR(fit.coefficients(static_cast<Eigen::Index>(j)), ref[j], 1e-6) << j;
  }
}

TEST(Fit, DevianceNonIncreasingAndScoreEquations) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto d = encode_design(random_records(seed, 150, 0.7), DesignSpec::standard());
    auto fit = fit_quasipoisson(d);
    ASSERT_FALSE(fit.deviance_trace.empty());
    for (std::size_t k = 1; k < fit.deviance_trace.size(); ++k)
      EXPECT_LE(fit.deviance_trace[k], fit.deviance_trace[k - 1] + 1e-9) << seed << " step " << k;
    const Eigen::VectorXd mu = (d.X * fit.coefficients).array().exp().matrix();
    const Eigen::VectorXd score = d.X.transpose() * (d.y - mu);
    EXPECT_LT(score.cwiseAbs().maxCoeff(), 1e-6 * 150) << seed;
  }
}

TEST(Fit, GradientMatchesFiniteDifferences) {
  Rng rng(3);
  oracle::Matrix X;
  std::vector<double> y;
  for (int i = 0; i < 30; ++i) {
    X.push_back({1.0, rng.uniform(), static_cast<double>(rng.below(2))});
    y.push_back(static_cast<double>(rng.below(8)));
  }
  auto fit = fit_quasipoisson(to_eigen(X), to_eigen(y));
  std::vector<double> beta(fit.coefficients.data(), fit.coefficients.data() + 3);
  const double h = 1e-5;
  for (std::size_t j = 0; j < 3; ++j) {
    auto up = beta, down = beta;
    up[j] += h;
    down[j] -= h;
    const double fd = (oracle::poisson_loglik(X, y, up) - oracle::poisson_loglik(X, y, down)) / (2 * h);
    EXPECT_NEAR(fd, 0.0, 1e-5) << j;
  }
  // Away from the optimum the analytic score matches the finite difference.
  auto moved = beta;
  moved[1] += 0.3;
  double analytic = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double eta = X[i][0] * moved[0] + X[i][1] * moved[1] + X[i][2] * moved[2];
    analytic += (y[i] - std::exp(eta)) * X[i][1];
  }
  auto up = moved, down = moved;
  up[1] += h;
  down[1] -= h;
  EXPECT_NEAR((oracle::poisson_loglik(X, y, up) - oracle::poisson_loglik(X, y, down)) / (2 * h), analytic, 1e-5);
}

TEST(Fit, DispersionNearOneForTruePoisson) {
  std::mt19937_64 eng(10000);
  Rng rng(10000);
  const Eigen::Index n = 10000;
  Eigen::MatrixXd X(n, 3);
  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double a = static_cast<double>(rng.below(2)), b = rng.uniform();
    X.row(i) << 1, a, b;
    y(i) = std::poisson_distribution<int>(std::exp(0.5 + 0.4 * a - 0.8 * b))(eng);
  }
  auto fit = fit_quasipoisson(X, y);
  EXPECT_LT(std::fabs(fit.dispersion - 1.0), 0.1);
  EXPECT_NEAR(fit.coefficients(1), 0.4, 0.06);
  EXPECT_NEAR(fit.coefficients(2), -0.8, 0.1);
  // Covariance scales with the dispersion.
  const Eigen::VectorXd mu = (X * fit.coefficients).array().exp().matrix();
  const Eigen::MatrixXd info = X.transpose() * mu.asDiagonal() * X;
  EXPECT_NEAR(fit.covariance(1, 1), fit.dispersion * info.inverse()(1, 1), 1e-12);
}

TEST(Fit, OverdispersedDataRaisesDispersionNotCoefficients) {
  Eigen::MatrixXd X = Eigen::MatrixXd::Ones(8, 1);
  Eigen::VectorXd y(8);
  y << 0, 20, 1, 18, 0, 25, 2, 14;
  auto fit = fit_quasipoisson(X, y);
  EXPECT_NEAR(fit.coefficients(0), std::log(10.0), 1e-10);
  EXPECT_GT(fit.dispersion, 5.0);
}

TEST(Fit, ReferenceLevelInvariance) {
  auto recs = random_records(42, 300, 1.5);
  auto spec = DesignSpec::standard();
  auto fit = fit_quasipoisson(encode_design(recs, spec));
  // Re-encode with method_label reference AIMethods and language reference Other.
  auto alt = spec;
  alt.factors[3].levels = {"AIMethods", "NoMethods", "NonAIMethods"};
  alt.factors[2].levels = {"Other", "English", "German", "Spanish", "French", "Indonesian", "Portuguese"};
  auto fit2 = fit_quasipoisson(encode_design(recs, alt));
  const Eigen::VectorXd mu1 = (encode_design(recs, spec).X * fit.coefficients).array().exp().matrix();
  const Eigen::VectorXd mu2 = (encode_design(recs, alt).X * fit2.coefficients).array().exp().matrix();
  EXPECT_LT(((mu1 - mu2).array() / mu1.array()).abs().maxCoeff(), 1e-8);
  const std::map<std::string, std::string> profile = {{"method_label", "AIMethods"}, {"language", "German"}};
  EXPECT_NEAR(predict_adjusted(fit, spec, profile, Scale::Response), predict_adjusted(fit2, alt, profile, Scale::Response),
              1e-8);
}

TEST(Fit, Errors) {
  Eigen::MatrixXd X(4, 3);
  X << 1, 0, 0, 1, 1, 1, 1, 0, 0, 1, 1, 1;  // column 3 duplicates column 2
  Eigen::VectorXd y(4);
  y << 1, 2, 3, 4;
  EXPECT_ERRC(fit_quasipoisson(X, y), Errc::RankDeficient);
  EXPECT_ERRC(fit_quasipoisson(Eigen::MatrixXd::Ones(4, 1), Eigen::VectorXd::Ones(3)), Errc::DimensionMismatch);
  EXPECT_ERRC(fit_quasipoisson(Eigen::MatrixXd::Ones(4, 1), y, Eigen::VectorXd::Zero(2)), Errc::DimensionMismatch);
  EXPECT_ERRC(fit_quasipoisson(Eigen::MatrixXd::Ones(4, 1), Eigen::VectorXd::Zero(4)), Errc::InvalidArgument);
  Eigen::VectorXd neg = y;
  neg(0) = -1;
  EXPECT_ERRC(fit_quasipoisson(Eigen::MatrixXd::Ones(4, 1), neg), Errc::InvalidArgument);
  EXPECT_ERRC(fit_quasipoisson(Eigen::MatrixXd::Ones(1, 1), Eigen::VectorXd::Ones(1)), Errc::InvalidArgument);
}

TEST(Fit, IterationCapFlagsNotConverged) {
  auto d = encode_design(random_records(7, 200, 1.0), DesignSpec::standard());
  FitOptions opt;
  opt.max_iterations = 1;
  auto fit = fit_quasipoisson(d, opt);
  EXPECT_FALSE(fit.converged);
  EXPECT_EQ(fit.iterations, 1);
}

// ---------------------------------------------------------------------------
// Prediction

TEST(Predict, ReferenceAndShiftedProfiles) {
  auto spec = DesignSpec::standard();
  auto fit = fit_quasipoisson(encode_design(random_records(9, 400, 3.0), spec));
  const double ref = predict_adjusted(fit, spec, {}, Scale::Response);
  EXPECT_DOUBLE_EQ(ref, std::exp(fit.coefficients(0)));
  EXPECT_NEAR(predict_adjusted(fit, spec, {{"method_label", "AIMethods"}}, Scale::Response),
              ref * std::exp(fit.coefficients(15)), 1e-12 * ref);
  EXPECT_DOUBLE_EQ(predict_adjusted(fit, spec, {}, Scale::Per1000), 1000 * ref);
  EXPECT_DOUBLE_EQ(predict_adjusted(fit, spec, {}, Scale::Percentage), 100 * ref);
  EXPECT_ERRC(predict_adjusted(fit, spec, {{"method_label", "Maybe"}}, Scale::Response), Errc::UnknownLevel);
  EXPECT_ERRC(predict_adjusted(fit, spec, {{"color", "red"}}, Scale::Response), Errc::UnknownLevel);
}

TEST(Predict, RecoversPlantedRatePerThousand) {
  // Cells of publications with log-exposure offsets; AI-label works retract
  // at 0.92 per 1,000, others at 0.44.
  std::mt19937_64 eng(92);
  Rng rng(92);
  DesignSpec spec{"retracted", {DesignSpec::publication_type(), DesignSpec::method_label()}};
  std::vector<ModelRecord> recs;
  for (int i = 0; i < 600; ++i) {
    const auto& pt = DesignSpec::publication_type().levels[rng.below(4)];
    const auto& ml = DesignSpec::method_label().levels[rng.below(3)];
    const double pubs = 2000 + static_cast<double>(rng.below(3000));
    const double rate = (ml == "AIMethods" ? 0.92 : 0.44) / 1000.0 * (pt == "preprint" ? 1.3 : 1.0);
    recs.push_back({{{"publication_type", pt}, {"method_label", ml}},
                    static_cast<double>(std::poisson_distribution<int>(pubs * rate)(eng)),
                    std::log(pubs)});
  }
  auto fit = fit_quasipoisson(encode_design(recs, spec));
  const double ai = predict_adjusted(fit, spec, {{"method_label", "AIMethods"}}, Scale::Per1000);
  const double non = predict_adjusted(fit, spec, {{"method_label", "NonAIMethods"}}, Scale::Per1000);
  EXPECT_NEAR(ai, 0.92, 0.05 * 0.92);
  EXPECT_NEAR(non, 0.44, 0.05 * 0.44);
}

// ---------------------------------------------------------------------------
// Model specs and batch output

TEST(ModelSpecFile, Parsing) {
  auto m = parse_model_spec("# comment\nresponse = cited_once\nfactors = year_bin, method_label\nscale = percentage\n"
                            "per_field = false\n",
                            "visibility");
  EXPECT_EQ(m.name, "visibility");
  EXPECT_EQ(m.response, "cited_once");
  EXPECT_EQ(m.factors, (std::vector<std::string>{"year_bin", "method_label"}));
  EXPECT_EQ(m.scale, Scale::Percentage);
  EXPECT_FALSE(m.per_field);
  EXPECT_EQ(m.design().column_count(), 1u + 4u + 2u);

  auto d = parse_model_spec("response = retracted", "r");
  EXPECT_EQ(d.factors.size(), 4u);
  EXPECT_TRUE(d.per_field);
  EXPECT_EQ(d.scale, Scale::Response);

  EXPECT_ERRC(parse_model_spec("factors = year_bin", "x"), Errc::Config);
  EXPECT_ERRC(parse_model_spec("response = y\nfactors = colour", "x"), Errc::Config);
  EXPECT_ERRC(parse_model_spec("response = y\nscale = log", "x"), Errc::Config);
  EXPECT_ERRC(parse_model_spec("response y", "x"), Errc::Config);

  TempDir dir;
  io::write_file_atomic(dir / "cs.model", "response = cites_cs\n");
  EXPECT_EQ(load_model_spec(dir / "cs.model").name, "cs");
}

TEST(Batch, FitAllKeepsOrderAndReportsErrors) {
  std::vector<FitJob> jobs;
  for (int g = 0; g < 12; ++g)
    jobs.push_back({"m", "G" + std::to_string(g), encode_design(random_records(100 + g, 120, 1.0), DesignSpec::standard())});
  Design bad{Eigen::MatrixXd::Ones(3, 1), Eigen::VectorXd::Zero(3), Eigen::VectorXd::Zero(3), {"(Intercept)"}};
  jobs.push_back({"m", "empty", bad});

  auto serial = fit_all(jobs, 1);
  auto parallel = fit_all(jobs, 4);
  ASSERT_EQ(parallel.size(), jobs.size());
  for (std::size_t i = 0; i < jobs.size(); ++i) EXPECT_EQ(parallel[i].group, jobs[i].group);
  EXPECT_FALSE(parallel.back().fit);
  EXPECT_FALSE(parallel.back().error.empty());
  const auto csv = render_coefficients_csv(parallel);
  EXPECT_EQ(csv, render_coefficients_csv(serial));
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "model,group,term,estimate,std_error,dispersion,converged");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + 12 * 16 + 1);
  EXPECT_NE(csv.find("m,G0,(Intercept),"), std::string::npos);
  EXPECT_NE(csv.find("m,empty,,,,,error: "), std::string::npos);
}

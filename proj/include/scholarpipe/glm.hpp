#pragma once

// Quasi-Poisson regression with log link, fitted by iteratively reweighted
// least squares, plus the categorical design encoding used for adjusted
// predictions.

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include "scholarpipe/error.hpp"
#include "scholarpipe/io.hpp"
#include "scholarpipe/text.hpp"

namespace scholarpipe::glm {

struct Factor {
  std::string name;
  std::vector<std::string> levels;  // first is the reference
  std::optional<std::string> catch_all;

  std::optional<std::size_t> index_of(std::string_view level) const {
    for (std::size_t i = 0; i < levels.size(); ++i)
      if (levels[i] == level) return i;
    return std::nullopt;
  }
};

struct DesignSpec {
  std::string response;
  std::vector<Factor> factors;

  static const Factor& publication_type() {
    static const Factor f{"publication_type", {"article", "book", "dissertation", "preprint"}, std::nullopt};
    return f;
  }
  static const Factor& year_bin() {
    static const Factor f{
        "year_bin", {"[2000,2005)", "[2005,2010)", "[2010,2015)", "[2015,2020)", "[2020,2025]"}, std::nullopt};
    return f;
  }
  static const Factor& language() {
    static const Factor f{
        "language", {"English", "German", "Spanish", "French", "Indonesian", "Portuguese", "Other"}, "Other"};
    return f;
  }
  static const Factor& method_label() {
    static const Factor f{"method_label", {"NoMethods", "NonAIMethods", "AIMethods"}, std::nullopt};
    return f;
  }
  static const Factor* known_factor(std::string_view name) {
    for (const Factor* f : {&publication_type(), &year_bin(), &language(), &method_label()})
      if (f->name == name) return f;
    return nullptr;
  }

  static DesignSpec standard(std::string response = "response") {
    return {std::move(response), {publication_type(), year_bin(), language(), method_label()}};
  }

  std::size_t column_count() const {
    std::size_t n = 1;
    for (const auto& f : factors) n += f.levels.size() - 1;
    return n;
  }

  std::vector<std::string> column_names() const {
    std::vector<std::string> out{"(Intercept)"};
    for (const auto& f : factors)
      for (std::size_t i = 1; i < f.levels.size(); ++i) out.push_back(f.name + "=" + f.levels[i]);
    return out;
  }
};

/// ISO 639-1 codes or English names onto the language factor; anything
/// else is Other.
inline std::string language_level(std::string_view code) {
  static const std::map<std::string, std::string, std::less<>> kMap = {
      {"en", "English"},    {"english", "English"},       {"de", "German"},  {"german", "German"},
      {"es", "Spanish"},    {"spanish", "Spanish"},       {"fr", "French"},  {"french", "French"},
      {"id", "Indonesian"}, {"indonesian", "Indonesian"}, {"pt", "Portuguese"}, {"portuguese", "Portuguese"}};
  auto it = kMap.find(text::to_lower(text::trim(code)));
  return it == kMap.end() ? "Other" : it->second;
}

/// Five-year bins from 2000; the last bin is closed at 2025.
inline std::string year_bin_level(int year) {
  if (year < 2000 || year > 2025) throw Error(Errc::UnknownLevel, "year " + std::to_string(year) + " outside bins");
  static constexpr const char* kBins[] = {"[2000,2005)", "[2005,2010)", "[2010,2015)", "[2015,2020)", "[2020,2025]"};
  return kBins[std::min((year - 2000) / 5, 4)];
}

inline std::string publication_type_level(std::string_view work_type) {
  if (work_type == "article") return "article";
  if (work_type == "book" || work_type == "book-chapter") return "book";
  if (work_type == "dissertation") return "dissertation";
  if (work_type == "preprint") return "preprint";
  throw Error(Errc::UnknownLevel, "publication type '" + std::string(work_type) + "'");
}

struct ModelRecord {
  std::map<std::string, std::string> levels;  // factor name -> level
  double y = 0.0;
  double offset = 0.0;
};

struct Design {
  Eigen::MatrixXd X;
  Eigen::VectorXd y;
  Eigen::VectorXd offset;
  std::vector<std::string> columns;
};

inline Eigen::RowVectorXd encode_row(const ModelRecord& r, const DesignSpec& spec) {
  Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(static_cast<Eigen::Index>(spec.column_count()));
  row(0) = 1.0;
  Eigen::Index col = 1;
  for (const auto& f : spec.factors) {
    auto it = r.levels.find(f.name);
    if (it == r.levels.end()) throw Error(Errc::UnknownLevel, "record has no level for " + f.name);
    auto idx = f.index_of(it->second);
    if (!idx && f.catch_all) idx = f.index_of(*f.catch_all);
    if (!idx) throw Error(Errc::UnknownLevel, f.name + " has no level '" + it->second + "'");
    if (*idx > 0) row(col + static_cast<Eigen::Index>(*idx) - 1) = 1.0;
    col += static_cast<Eigen::Index>(f.levels.size()) - 1;
  }
  return row;
}

inline Design encode_design(const std::vector<ModelRecord>& records, const DesignSpec& spec) {
  const auto p = static_cast<Eigen::Index>(spec.column_count());
  const auto n = static_cast<Eigen::Index>(records.size());
  Design d{Eigen::MatrixXd(n, p), Eigen::VectorXd(n), Eigen::VectorXd(n), spec.column_names()};
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& r = records[static_cast<std::size_t>(i)];
    d.X.row(i) = encode_row(r, spec);
    d.y(i) = r.y;
    d.offset(i) = r.offset;
  }
  return d;
}

struct FitOptions {
  double tolerance = 1e-8;
  int max_iterations = 100;
  int max_halvings = 30;
};

struct QuasiPoissonFit {
  Eigen::VectorXd coefficients;
  double dispersion = 0.0;
  Eigen::MatrixXd covariance;
  bool converged = false;
  int iterations = 0;
  double deviance = 0.0;
  std::vector<double> deviance_trace;  // after each iteration
  std::vector<std::string> columns;
  std::size_t n = 0;

  Eigen::VectorXd std_errors() const { return covariance.diagonal().cwiseSqrt(); }
};

inline double poisson_deviance(const Eigen::VectorXd& y, const Eigen::VectorXd& mu) {
  double d = 0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    d += y(i) > 0 ? y(i) * std::log(y(i) / mu(i)) - (y(i) - mu(i)) : mu(i);
  }
  return 2.0 * d;
}

namespace detail {

inline Eigen::VectorXd mean_of(const Eigen::MatrixXd& X, const Eigen::VectorXd& beta, const Eigen::VectorXd& offset) {
  return (X * beta + offset).array().exp().matrix();
}

inline Eigen::VectorXd wls(const Eigen::MatrixXd& X, const Eigen::VectorXd& w, const Eigen::VectorXd& z) {
  const Eigen::VectorXd s = w.cwiseSqrt();
  Eigen::MatrixXd Xw = s.asDiagonal() * X;
  Eigen::VectorXd zw = s.cwiseProduct(z);
  return Xw.colPivHouseholderQr().solve(zw);
}

}  // namespace detail

/// IRLS for the Poisson mean with log link. Coefficients are the Poisson
/// maximum-likelihood solution; the Pearson dispersion scales the covariance.
/// A step that raises the deviance is halved until it does not. A fit that
/// hits the iteration cap is returned with converged = false.
inline QuasiPoissonFit fit_quasipoisson(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                        std::optional<Eigen::VectorXd> offset = std::nullopt,
                                        const FitOptions& opt = {}) {
  const auto n = X.rows(), p = X.cols();
  if (y.size() != n) throw Error(Errc::DimensionMismatch, "response length differs from design rows");
  if (offset && offset->size() != n) throw Error(Errc::DimensionMismatch, "offset length differs from design rows");
  if (n <= p) throw Error(Errc::InvalidArgument, "need more rows than columns");
  if ((y.array() < 0).any() || !y.allFinite()) throw Error(Errc::InvalidArgument, "response must be finite and >= 0");
  if (y.sum() <= 0) throw Error(Errc::InvalidArgument, "response is all zero");
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> rank_qr(X);
  if (rank_qr.rank() < p) throw Error(Errc::RankDeficient, "design has rank " + std::to_string(rank_qr.rank()) +
                                                               " < " + std::to_string(p));
  const Eigen::VectorXd off = offset ? *offset : Eigen::VectorXd::Zero(n);

  QuasiPoissonFit fit;
  fit.n = static_cast<std::size_t>(n);

  // Start from mu = y + 0.1, the usual Poisson initialisation.
  Eigen::VectorXd mu = (y.array() + 0.1).matrix();
  Eigen::VectorXd eta = mu.array().log().matrix();
  Eigen::VectorXd beta = detail::wls(X, mu, eta - off + (y - mu).cwiseQuotient(mu));
  mu = detail::mean_of(X, beta, off);
  double dev = poisson_deviance(y, mu);
  fit.deviance_trace.push_back(dev);

  for (int it = 1; it <= opt.max_iterations; ++it) {
    eta = X * beta + off;
    const Eigen::VectorXd z = eta - off + (y - mu).cwiseQuotient(mu);
    Eigen::VectorXd next = detail::wls(X, mu, z);
    Eigen::VectorXd next_mu = detail::mean_of(X, next, off);
    double next_dev = poisson_deviance(y, next_mu);
    // Rises at rounding level are not treated as divergence; halving there
    // would stall the quadratic convergence.
    const double slack = 1e-12 * (1.0 + std::fabs(dev));
    for (int h = 0; h < opt.max_halvings && !(next_dev <= dev + slack); ++h) {
      next = 0.5 * (beta + next);
      next_mu = detail::mean_of(X, next, off);
      next_dev = poisson_deviance(y, next_mu);
    }
    if (!(next_dev <= dev + slack)) {  // no descent possible: keep the current iterate
      next = beta;
      next_mu = mu;
      next_dev = dev;
    }
    const double delta = (next - beta).cwiseAbs().maxCoeff();
    beta = std::move(next);
    mu = std::move(next_mu);
    dev = next_dev;
    fit.deviance_trace.push_back(dev);
    fit.iterations = it;
    if (delta < opt.tolerance) {
      fit.converged = true;
      break;
    }
  }

  fit.coefficients = beta;
  fit.deviance = std::max(0.0, dev);
  double pearson = 0;
  for (Eigen::Index i = 0; i < n; ++i) pearson += (y(i) - mu(i)) * (y(i) - mu(i)) / mu(i);
  fit.dispersion = pearson / static_cast<double>(n - p);
  const Eigen::MatrixXd info = X.transpose() * mu.asDiagonal() * X;
  fit.covariance = fit.dispersion * info.ldlt().solve(Eigen::MatrixXd::Identity(p, p));
  return fit;
}

inline QuasiPoissonFit fit_quasipoisson(const Design& d, const FitOptions& opt = {}) {
  auto fit = fit_quasipoisson(d.X, d.y, d.offset, opt);
  fit.columns = d.columns;
  return fit;
}

enum class Scale { Response, Per1000, Percentage };

inline std::string_view scale_name(Scale s) {
  switch (s) {
    case Scale::Response: return "response";
    case Scale::Per1000: return "per-1000";
    case Scale::Percentage: return "percentage";
  }
  return "?";
}

inline Scale parse_scale(std::string_view s) {
  if (s == "response") return Scale::Response;
  if (s == "per-1000") return Scale::Per1000;
  if (s == "percentage") return Scale::Percentage;
  throw Error(Errc::Config, "unknown scale '" + std::string(s) + "'");
}

/// exp(x'beta) for a profile of factor levels. Factors missing from the
/// profile take their reference level.
inline double predict_adjusted(const QuasiPoissonFit& fit, const DesignSpec& spec,
                               const std::map<std::string, std::string>& profile, Scale scale) {
  ModelRecord r;
  for (const auto& f : spec.factors) {
    auto it = profile.find(f.name);
    r.levels[f.name] = it == profile.end() ? f.levels.front() : it->second;
  }
  for (const auto& [name, _] : profile)
    if (std::none_of(spec.factors.begin(), spec.factors.end(), [&](const Factor& f) { return f.name == name; }))
      throw Error(Errc::UnknownLevel, "profile names unknown factor " + name);
  const Eigen::RowVectorXd row = encode_row(r, spec);
  if (row.size() != fit.coefficients.size()) throw Error(Errc::DimensionMismatch, "profile does not match the fit");
  const double v = std::exp(row.dot(fit.coefficients));
  switch (scale) {
    case Scale::Response: return v;
    case Scale::Per1000: return 1000.0 * v;
    case Scale::Percentage: return 100.0 * v;
  }
  return v;
}

// ---------------------------------------------------------------------------
// Model specification files

/// key = value lines:
///   response = cited_once
///   factors = publication_type, year_bin, language, method_label
///   scale = percentage
///   per_field = true
struct ModelSpec {
  std::string name;
  std::string response;
  std::vector<std::string> factors;
  Scale scale = Scale::Response;
  bool per_field = true;

  DesignSpec design() const {
    DesignSpec d{response, {}};
    for (const auto& f : factors) {
      const Factor* known = DesignSpec::known_factor(f);
      if (!known) throw Error(Errc::Config, "model " + name + ": unknown factor " + f);
      d.factors.push_back(*known);
    }
    return d;
  }
};

inline std::map<std::string, std::string> parse_key_values(std::string_view content, const std::string& origin) {
  std::map<std::string, std::string> kv;
  int lineno = 0;
  for (auto& raw : text::split(content, '\n')) {
    ++lineno;
    auto line = text::trim(raw);
    if (line.empty() || line.front() == '#') continue;
    auto eq = line.find('=');
    if (eq == std::string_view::npos)
      throw Error(Errc::Config, origin + ":" + std::to_string(lineno) + ": expected key = value");
    kv[std::string(text::trim(line.substr(0, eq)))] = std::string(text::trim(line.substr(eq + 1)));
  }
  return kv;
}

inline std::vector<std::string> split_list(std::string_view s) {
  std::vector<std::string> out;
  for (auto& p : text::split(s, ','))
    if (auto t = text::trim(p); !t.empty()) out.emplace_back(t);
  return out;
}

inline ModelSpec parse_model_spec(std::string_view content, std::string name) {
  auto kv = parse_key_values(content, name);
  ModelSpec m;
  m.name = std::move(name);
  if (!kv.count("response")) throw Error(Errc::Config, "model " + m.name + " has no response");
  m.response = kv["response"];
  m.factors = kv.count("factors") ? split_list(kv["factors"])
                                  : std::vector<std::string>{"publication_type", "year_bin", "language", "method_label"};
  if (kv.count("scale")) m.scale = parse_scale(kv["scale"]);
  if (kv.count("per_field")) m.per_field = kv["per_field"] == "true" || kv["per_field"] == "1";
  m.design();  // validates factor names
  return m;
}

inline ModelSpec load_model_spec(const std::filesystem::path& path) {
  return parse_model_spec(io::read_file(path), path.stem().string());
}

// ---------------------------------------------------------------------------
// Batch fitting and output

struct FitJob {
  std::string model;
  std::string group;
  Design design;
};

struct FitResult {
  std::string model;
  std::string group;
  std::optional<QuasiPoissonFit> fit;
  std::string error;  // set when the fit was not possible
};

/// Independent fits spread over a worker pool; results keep job order.
inline std::vector<FitResult> fit_all(const std::vector<FitJob>& jobs, std::size_t workers, const FitOptions& opt = {}) {
  std::vector<FitResult> out(jobs.size());
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < jobs.size();) {
      out[i].model = jobs[i].model;
      out[i].group = jobs[i].group;
      try {
        out[i].fit = fit_quasipoisson(jobs[i].design, opt);
      } catch (const Error& e) {
        out[i].error = e.what();
      }
    }
  };
  workers = std::clamp<std::size_t>(workers, 1, std::max<std::size_t>(1, jobs.size()));
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  return out;
}

inline std::string render_coefficients_csv(const std::vector<FitResult>& results) {
  std::string out = "model,group,term,estimate,std_error,dispersion,converged\n";
  for (const auto& r : results) {
    if (!r.fit) {
      out += io::csv_field(r.model) + "," + io::csv_field(r.group) + ",,,,," + io::csv_field("error: " + r.error) + "\n";
      continue;
    }
    const auto se = r.fit->std_errors();
    for (Eigen::Index j = 0; j < r.fit->coefficients.size(); ++j) {
      out += io::csv_field(r.model) + "," + io::csv_field(r.group) + "," +
             io::csv_field(r.fit->columns.at(static_cast<std::size_t>(j))) + "," +
             io::format_double(r.fit->coefficients(j)) + "," + io::format_double(se(j)) + "," +
             io::format_double(r.fit->dispersion) + "," + (r.fit->converged ? "true" : "false") + "\n";
    }
  }
  return out;
}

}  // namespace scholarpipe::glm

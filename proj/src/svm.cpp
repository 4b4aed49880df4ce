#include "ovadet/svm.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include <Eigen/Core>

#include "ovadet/errors.hpp"

namespace ovadet {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kModelFormat = 1;
constexpr char kSvmMagic[8] = {'O', 'V', 'S', 'V', 'M', '0', '0', '1'};
constexpr double kTau = 1e-12;
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

using RowMatrixD = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Dual coordinate descent for one binary C-SVC problem over a precomputed Gram matrix,
/// using second-order working-set selection. Returns alpha and rho (f(x) = sum a_i y_i K - rho).
struct BinarySolution {
  std::vector<double> alpha;
  double rho = 0.0;
};

BinarySolution solve_binary(const RowMatrixD& K, std::span<const signed char> y, double C, double eps) {
  const auto n = static_cast<int>(y.size());
  std::vector<double> alpha(static_cast<std::size_t>(n), 0.0);
  std::vector<double> G(static_cast<std::size_t>(n), -1.0);
  auto upper = [&](int t) { return alpha[static_cast<std::size_t>(t)] >= C; };
  auto lower = [&](int t) { return alpha[static_cast<std::size_t>(t)] <= 0.0; };
  auto Q = [&](int i, int j) { return static_cast<double>(y[static_cast<std::size_t>(i)] * y[static_cast<std::size_t>(j)]) * K(i, j); };

  const long long max_iter = std::max<long long>(10000000LL, 100LL * n);
  for (long long iter = 0; iter < max_iter; ++iter) {
    double gmax = kNegInf;
    int i = -1;
    for (int t = 0; t < n; ++t) {
      const double g = G[static_cast<std::size_t>(t)];
      if (y[static_cast<std::size_t>(t)] == 1) {
        if (!upper(t) && -g >= gmax) { gmax = -g; i = t; }
      } else {
        if (!lower(t) && g >= gmax) { gmax = g; i = t; }
      }
    }
    if (i < 0) break;
    double gmax2 = kNegInf;
    double best_obj = std::numeric_limits<double>::infinity();
    int j = -1;
    for (int t = 0; t < n; ++t) {
      const double g = G[static_cast<std::size_t>(t)];
      double diff = 0.0;
      if (y[static_cast<std::size_t>(t)] == 1) {
        if (lower(t)) continue;
        diff = gmax + g;
        gmax2 = std::max(gmax2, g);
      } else {
        if (upper(t)) continue;
        diff = gmax - g;
        gmax2 = std::max(gmax2, -g);
      }
      if (diff > 0.0) {
        double quad = K(i, i) + K(t, t) - 2.0 * K(i, t);
        if (quad <= 0.0) quad = kTau;
        const double obj = -(diff * diff) / quad;
        if (obj <= best_obj) { best_obj = obj; j = t; }
      }
    }
    if (gmax + gmax2 < eps || j < 0) break;

    const auto si = static_cast<std::size_t>(i);
    const auto sj = static_cast<std::size_t>(j);
    const double old_i = alpha[si];
    const double old_j = alpha[sj];
    if (y[si] != y[sj]) {
      double quad = K(i, i) + K(j, j) + 2.0 * Q(i, j);
      if (quad <= 0.0) quad = kTau;
      const double delta = (-G[si] - G[sj]) / quad;
      const double diff = alpha[si] - alpha[sj];
      alpha[si] += delta;
      alpha[sj] += delta;
      if (diff > 0.0) {
        if (alpha[sj] < 0.0) { alpha[sj] = 0.0; alpha[si] = diff; }
      } else {
        if (alpha[si] < 0.0) { alpha[si] = 0.0; alpha[sj] = -diff; }
      }
      if (diff > 0.0) {
        if (alpha[si] > C) { alpha[si] = C; alpha[sj] = C - diff; }
      } else {
        if (alpha[sj] > C) { alpha[sj] = C; alpha[si] = C + diff; }
      }
    } else {
      double quad = K(i, i) + K(j, j) - 2.0 * Q(i, j);
      if (quad <= 0.0) quad = kTau;
      const double delta = (G[si] - G[sj]) / quad;
      const double sum = alpha[si] + alpha[sj];
      alpha[si] -= delta;
      alpha[sj] += delta;
      if (sum > C) {
        if (alpha[si] > C) { alpha[si] = C; alpha[sj] = sum - C; }
      } else {
        if (alpha[sj] < 0.0) { alpha[sj] = 0.0; alpha[si] = sum; }
      }
      if (sum > C) {
        if (alpha[sj] > C) { alpha[sj] = C; alpha[si] = sum - C; }
      } else {
        if (alpha[si] < 0.0) { alpha[si] = 0.0; alpha[sj] = sum; }
      }
    }
    const double di = alpha[si] - old_i;
    const double dj = alpha[sj] - old_j;
    for (int t = 0; t < n; ++t) G[static_cast<std::size_t>(t)] += Q(i, t) * di + Q(j, t) * dj;
  }

  double ub = std::numeric_limits<double>::infinity();
  double lb = kNegInf;
  double sum_free = 0.0;
  int n_free = 0;
  for (int t = 0; t < n; ++t) {
    const double yg = y[static_cast<std::size_t>(t)] * G[static_cast<std::size_t>(t)];
    if (upper(t)) {
      if (y[static_cast<std::size_t>(t)] == -1) ub = std::min(ub, yg); else lb = std::max(lb, yg);
    } else if (lower(t)) {
      if (y[static_cast<std::size_t>(t)] == 1) ub = std::min(ub, yg); else lb = std::max(lb, yg);
    } else {
      ++n_free;
      sum_free += yg;
    }
  }
  const double rho = n_free > 0 ? sum_free / n_free : (ub + lb) / 2.0;
  return {std::move(alpha), rho};
}

RowMatrixD to_matrix(std::span<const FeatureVector> xs) {
  RowMatrixD X(static_cast<Eigen::Index>(xs.size()), kFeatureDim);
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const auto v = xs[i].values();
    for (int d = 0; d < kFeatureDim; ++d) X(static_cast<Eigen::Index>(i), d) = v[static_cast<std::size_t>(d)];
  }
  return X;
}

// Shared by training and model loading so reloaded models reproduce predictions bit for bit.
double squared_norm(std::span<const float> v) {
  double acc = 0.0;
  for (float x : v) acc += static_cast<double>(x) * x;
  return acc;
}

double kernel_from_parts(const std::string& kernel, double gamma, double dot, double na, double nb) {
  if (kernel == "linear") return dot;
  return std::exp(-gamma * std::max(0.0, na + nb - 2.0 * dot));
}

// log of the calibrated positive-class probability, computed without overflow.
double log_platt(double margin, double a, double b) {
  const double z = margin * a + b;
  return z >= 0.0 ? -(z + std::log1p(std::exp(-z))) : -std::log1p(std::exp(z));
}

ClassScores normalize_log_probs(const std::array<double, kNumClasses>& logp) {
  double peak = kNegInf;
  for (double v : logp) peak = std::max(peak, v);
  ClassScores::Values p{};
  double sum = 0.0;
  for (std::size_t c = 0; c < p.size(); ++c) {
    p[c] = std::isfinite(logp[c]) ? std::exp(logp[c] - peak) : 0.0;
    sum += p[c];
  }
  for (double& v : p) v /= sum;
  return ClassScores::checked(p);
}

}  // namespace

void SvmConfig::validate() const {
  if (!(C > 0.0) || !std::isfinite(C)) throw ConfigError("svm.C must be > 0");
  if (kernel != "rbf" && kernel != "linear") throw ConfigError("svm.kernel must be 'rbf' or 'linear'");
  if (gamma_policy != "scale" && gamma_policy != "fixed") throw ConfigError("svm.gamma_policy must be 'scale' or 'fixed'");
  if (gamma_policy == "fixed" && !(gamma > 0.0)) throw ConfigError("svm.gamma must be > 0 with gamma_policy 'fixed'");
  if (calibration != "platt") throw ConfigError("svm.calibration must be 'platt'");
  if (train_on != "gt" && train_on != "pred") throw ConfigError("svm.train_on must be 'gt' or 'pred'");
  if (!(tolerance > 0.0)) throw ConfigError("svm.tolerance must be > 0");
  if (extractor_id.empty()) throw ConfigError("svm.extractor_id is empty");
}

void to_json(json& j, const SvmConfig& c) {
  j = json{{"C", c.C},
           {"kernel", c.kernel},
           {"gamma_policy", c.gamma_policy},
           {"gamma", c.gamma},
           {"calibration", c.calibration},
           {"train_on", c.train_on},
           {"extractor_id", c.extractor_id},
           {"extractor_seed", c.extractor_seed},
           {"tolerance", c.tolerance}};
}

void from_json(const json& j, SvmConfig& c) {
  static const char* known[] = {"C", "kernel", "gamma_policy", "gamma", "calibration",
                                "train_on", "extractor_id", "extractor_seed", "tolerance"};
  for (const auto& [key, _] : j.items()) {
    if (std::find_if(std::begin(known), std::end(known), [&](const char* k) { return key == k; }) == std::end(known)) {
      throw ConfigError("unknown svm config key '" + key + "'");
    }
  }
  SvmConfig d;
  d.C = j.value("C", d.C);
  d.kernel = j.value("kernel", d.kernel);
  d.gamma_policy = j.value("gamma_policy", d.gamma_policy);
  d.gamma = j.value("gamma", d.gamma);
  d.calibration = j.value("calibration", d.calibration);
  d.train_on = j.value("train_on", d.train_on);
  d.extractor_id = j.value("extractor_id", d.extractor_id);
  d.extractor_seed = j.value("extractor_seed", d.extractor_seed);
  d.tolerance = j.value("tolerance", d.tolerance);
  c = d;
}

std::pair<double, double> fit_platt(std::span<const double> margins, const std::vector<bool>& positive) {
  double n_pos = 0.0;
  for (bool p : positive) n_pos += p ? 1.0 : 0.0;
  const double n_neg = static_cast<double>(positive.size()) - n_pos;
  const double hi = (n_pos + 1.0) / (n_pos + 2.0);
  const double lo = 1.0 / (n_neg + 2.0);
  const std::size_t n = margins.size();
  std::vector<double> t(n);
  for (std::size_t i = 0; i < n; ++i) t[i] = positive[i] ? hi : lo;

  auto objective = [&](double a, double b) {
    double f = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double z = margins[i] * a + b;
      f += z >= 0.0 ? t[i] * z + std::log1p(std::exp(-z)) : (t[i] - 1.0) * z + std::log1p(std::exp(z));
    }
    return f;
  };

  double a = 0.0;
  double b = std::log((n_neg + 1.0) / (n_pos + 1.0));
  double fval = objective(a, b);
  constexpr double kSigma = 1e-12;
  for (int iter = 0; iter < 100; ++iter) {
    double h11 = kSigma, h22 = kSigma, h21 = 0.0, g1 = 0.0, g2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double z = margins[i] * a + b;
      double p = 0.0, q = 0.0;
      if (z >= 0.0) {
        p = std::exp(-z) / (1.0 + std::exp(-z));
        q = 1.0 / (1.0 + std::exp(-z));
      } else {
        p = 1.0 / (1.0 + std::exp(z));
        q = std::exp(z) / (1.0 + std::exp(z));
      }
      const double d2 = p * q;
      h11 += margins[i] * margins[i] * d2;
      h22 += d2;
      h21 += margins[i] * d2;
      const double d1 = t[i] - p;
      g1 += margins[i] * d1;
      g2 += d1;
    }
    if (std::abs(g1) < 1e-5 && std::abs(g2) < 1e-5) break;
    const double det = h11 * h22 - h21 * h21;
    const double da = -(h22 * g1 - h21 * g2) / det;
    const double db = -(-h21 * g1 + h11 * g2) / det;
    const double gd = g1 * da + g2 * db;
    double step = 1.0;
    while (step >= 1e-10) {
      const double na = a + step * da;
      const double nb = b + step * db;
      const double nf = objective(na, nb);
      if (nf < fval + 1e-4 * step * gd) {
        a = na;
        b = nb;
        fval = nf;
        break;
      }
      step /= 2.0;
    }
    if (step < 1e-10) break;
  }
  return {a, b};
}

std::array<double, kNumClasses> SvmModel::margins(std::span<const float> x) const {
  if (x.size() != dim_) {
    throw ContractError("feature dimension " + std::to_string(x.size()) + " != model dimension " + std::to_string(dim_));
  }
  const std::size_t n_sv = support_count();
  Eigen::VectorXd xv(static_cast<Eigen::Index>(dim_));
  for (std::size_t d = 0; d < dim_; ++d) xv(static_cast<Eigen::Index>(d)) = x[d];
  const double nx = xv.squaredNorm();

  std::array<double, kNumClasses> f{};
  for (std::size_t c = 0; c < f.size(); ++c) f[c] = present_[c] ? -rho_[c] : kNegInf;
  for (std::size_t s = 0; s < n_sv; ++s) {
    Eigen::Map<const Eigen::VectorXf> sv(support_.data() + s * dim_, static_cast<Eigen::Index>(dim_));
    const double dot = sv.cast<double>().dot(xv);
    const double k = kernel_from_parts(kernel_, gamma_, dot, sq_norms_[s], nx);
    for (std::size_t c = 0; c < f.size(); ++c) {
      if (present_[c]) f[c] += coef_[s * kNumClasses + c] * k;
    }
  }
  return f;
}

SvmModel train_svm(std::span<const FeatureVector> features, std::span<const CategoryId> labels, const SvmConfig& config,
                   std::span<const FeatureVector> holdout_features, std::span<const CategoryId> holdout_labels) {
  config.validate();
  if (features.size() != labels.size()) throw ContractError("features and labels differ in length");
  if (holdout_features.size() != holdout_labels.size()) throw ContractError("holdout features and labels differ in length");
  for (std::size_t i = 0; i < features.size(); ++i) {
    if (!features[i].finite()) throw ContractError("non-finite feature at training index " + std::to_string(i));
  }
  for (std::size_t i = 0; i < holdout_features.size(); ++i) {
    if (!holdout_features[i].finite()) throw ContractError("non-finite feature at holdout index " + std::to_string(i));
  }
  std::array<bool, kNumClasses> present{};
  for (auto l : labels) present[static_cast<std::size_t>(l.value())] = true;
  if (std::count(present.begin(), present.end(), true) < 2) {
    throw ContractError("SVM training needs at least two classes");
  }

  const RowMatrixD X = to_matrix(features);
  const auto n = static_cast<Eigen::Index>(features.size());
  Eigen::VectorXd norms(n);
  for (Eigen::Index i = 0; i < n; ++i) norms(i) = squared_norm(features[static_cast<std::size_t>(i)].values());

  double gamma = config.gamma;
  if (config.gamma_policy == "scale") {
    const double mean = X.mean();
    const double var = (X.array() - mean).square().mean();
    gamma = var > 0.0 ? 1.0 / (kFeatureDim * var) : 1.0;
  }

  RowMatrixD K = X * X.transpose();
  if (config.kernel == "rbf") {
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < n; ++j) K(i, j) = kernel_from_parts("rbf", gamma, K(i, j), norms(i), norms(j));
    }
  }

  std::vector<std::vector<double>> coef_by_class(kNumClasses);
  SvmModel model;
  model.dim_ = kFeatureDim;
  model.kernel_ = config.kernel;
  model.gamma_ = gamma;
  model.C_ = config.C;
  model.present_ = present;
  model.extractor_id_ = config.extractor_id;
  model.extractor_seed_ = config.extractor_seed;
  model.categories_.assign(category_names().begin(), category_names().end());

  std::vector<signed char> y(static_cast<std::size_t>(n));
  std::vector<bool> is_sv(static_cast<std::size_t>(n), false);
  for (int c = 0; c < kNumClasses; ++c) {
    if (!present[static_cast<std::size_t>(c)]) continue;
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = labels[i].value() == c ? 1 : -1;
    auto sol = solve_binary(K, y, config.C, config.tolerance);
    auto& coef = coef_by_class[static_cast<std::size_t>(c)];
    coef.resize(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) {
      coef[i] = sol.alpha[i] * y[i];
      if (sol.alpha[i] > 0.0) is_sv[i] = true;
    }
    model.rho_[static_cast<std::size_t>(c)] = sol.rho;
  }

  for (std::size_t i = 0; i < is_sv.size(); ++i) {
    if (!is_sv[i]) continue;
    const auto v = features[i].values();
    model.support_.insert(model.support_.end(), v.begin(), v.end());
    model.sq_norms_.push_back(norms(static_cast<Eigen::Index>(i)));
    for (int c = 0; c < kNumClasses; ++c) {
      const auto& coef = coef_by_class[static_cast<std::size_t>(c)];
      model.coef_.push_back(coef.empty() ? 0.0 : coef[i]);
    }
  }

  // Calibration on the holdout when every trained class has a positive there; otherwise on
  // the training margins.
  bool holdout_usable = !holdout_features.empty();
  std::array<bool, kNumClasses> holdout_has{};
  for (auto l : holdout_labels) holdout_has[static_cast<std::size_t>(l.value())] = true;
  for (int c = 0; c < kNumClasses; ++c) {
    if (present[static_cast<std::size_t>(c)] && !holdout_has[static_cast<std::size_t>(c)]) holdout_usable = false;
  }
  const auto cal_x = holdout_usable ? holdout_features : features;
  const auto cal_y = holdout_usable ? holdout_labels : labels;
  model.calibration_source_ = holdout_usable ? "holdout" : "training";

  std::vector<std::array<double, kNumClasses>> cal_margins;
  cal_margins.reserve(cal_x.size());
  for (const auto& f : cal_x) cal_margins.push_back(model.margins(f.values()));
  for (int c = 0; c < kNumClasses; ++c) {
    const auto sc = static_cast<std::size_t>(c);
    if (!present[sc]) continue;
    std::vector<double> m(cal_x.size());
    std::vector<bool> pos(cal_x.size());
    for (std::size_t i = 0; i < cal_x.size(); ++i) {
      m[i] = cal_margins[i][sc];
      pos[i] = cal_y[i].value() == c;
    }
    auto [a, b] = fit_platt(m, pos);
    // Enforce a probability that increases with the margin.
    if (!(a < 0.0)) {
      a = -1.0;
      b = 0.0;
    }
    model.platt_a_[sc] = a;
    model.platt_b_[sc] = b;
  }

  auto accuracy = [&](std::span<const FeatureVector> xs, std::span<const CategoryId> ys) {
    if (xs.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::size_t hit = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) hit += classify(model, xs[i]).argmax() == ys[i] ? 1 : 0;
    return static_cast<double>(hit) / static_cast<double>(xs.size());
  };
  model.train_accuracy_ = accuracy(features, labels);
  model.holdout_accuracy_ = accuracy(holdout_features, holdout_labels);
  return model;
}

ClassScores classify(const SvmModel& model, const FeatureVector& feat) {
  if (!feat.finite()) throw ContractError("cannot classify a non-finite feature vector");
  const auto f = model.margins(feat.values());
  std::array<double, kNumClasses> logp{};
  for (std::size_t c = 0; c < logp.size(); ++c) {
    logp[c] = model.present_[c] ? log_platt(f[c], model.platt_a_[c], model.platt_b_[c]) : kNegInf;
  }
  return normalize_log_probs(logp);
}

void SvmModel::save(const fs::path& path, const json& extra) const {
  json header{{"format_version", kModelFormat},
                    {"kind", "svm"},
                    {"multiclass", "one_vs_rest"},
                    {"kernel", kernel_},
                    {"gamma", gamma_},
                    {"C", C_},
                    {"dim", dim_},
                    {"support_count", support_count()},
                    {"rho", rho_},
                    {"present", present_},
                    {"platt_a", platt_a_},
                    {"platt_b", platt_b_},
                    {"calibration", "platt"},
                    {"calibration_source", calibration_source_},
                    {"extractor_id", extractor_id_},
                    {"extractor_seed", extractor_seed_},
                    {"categories", categories_},
                    {"train_accuracy", train_accuracy_},
                    {"holdout_accuracy", std::isfinite(holdout_accuracy_) ? json(holdout_accuracy_) : json(nullptr)}};
  for (const auto& [k, v] : extra.items()) {
    if (!header.contains(k)) header[k] = v;
  }
  const std::string text = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write SVM model " + path.string());
  const auto len = static_cast<std::uint64_t>(text.size());
  out.write(kSvmMagic, sizeof kSvmMagic);
  out.write(reinterpret_cast<const char*>(&len), sizeof len);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  out.write(reinterpret_cast<const char*>(support_.data()), static_cast<std::streamsize>(support_.size() * sizeof(float)));
  out.write(reinterpret_cast<const char*>(coef_.data()), static_cast<std::streamsize>(coef_.size() * sizeof(double)));
  if (!out) throw IoError("short write on SVM model " + path.string());
}

SvmModel SvmModel::load(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open SVM model " + path.string());
  char magic[sizeof kSvmMagic];
  std::uint64_t len = 0;
  in.read(magic, sizeof magic);
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!in || std::memcmp(magic, kSvmMagic, sizeof magic) != 0) throw SchemaError(path.string() + " is not an SVM model");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  SvmModel m;
  try {
    const json h = json::parse(text);
    if (h.at("format_version").get<int>() != kModelFormat) throw SchemaError("unsupported SVM model format version");
    m.kernel_ = h.at("kernel").get<std::string>();
    m.gamma_ = h.at("gamma").get<double>();
    m.C_ = h.at("C").get<double>();
    m.dim_ = h.at("dim").get<std::size_t>();
    const auto n_sv = h.at("support_count").get<std::size_t>();
    m.rho_ = h.at("rho").get<std::array<double, kNumClasses>>();
    m.present_ = h.at("present").get<std::array<bool, kNumClasses>>();
    m.platt_a_ = h.at("platt_a").get<std::array<double, kNumClasses>>();
    m.platt_b_ = h.at("platt_b").get<std::array<double, kNumClasses>>();
    m.calibration_source_ = h.at("calibration_source").get<std::string>();
    m.extractor_id_ = h.at("extractor_id").get<std::string>();
    m.extractor_seed_ = h.at("extractor_seed").get<std::uint64_t>();
    m.categories_ = h.at("categories").get<std::vector<std::string>>();
    m.train_accuracy_ = h.at("train_accuracy").get<double>();
    const auto& ha = h.at("holdout_accuracy");
    m.holdout_accuracy_ = ha.is_null() ? std::numeric_limits<double>::quiet_NaN() : ha.get<double>();
    m.support_.resize(n_sv * m.dim_);
    m.coef_.resize(n_sv * kNumClasses);
  } catch (const json::exception& e) {
    throw SchemaError("malformed SVM model header in " + path.string() + ": " + e.what());
  }
  in.read(reinterpret_cast<char*>(m.support_.data()), static_cast<std::streamsize>(m.support_.size() * sizeof(float)));
  in.read(reinterpret_cast<char*>(m.coef_.data()), static_cast<std::streamsize>(m.coef_.size() * sizeof(double)));
  if (!in) throw SchemaError("truncated SVM model " + path.string());
  const std::size_t n_sv = m.support_count();
  m.sq_norms_.resize(n_sv);
  for (std::size_t s = 0; s < n_sv; ++s) {
    m.sq_norms_[s] = squared_norm(std::span<const float>(m.support_).subspan(s * m.dim_, m.dim_));
  }
  return m;
}

}  // namespace ovadet

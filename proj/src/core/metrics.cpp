#include "adaptable/metrics.hpp"

#include "adaptable/errors.hpp"
#include "adaptable/nn.hpp"
#include "adaptable/random.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace adaptable::metrics {

ClassificationScores classification_metrics(std::span<const ClassIndex> predictions,
                                            std::span<const ClassIndex> labels, int num_classes) {
  require(!labels.empty(), ErrorCode::kInvalidArgument, "classification metrics on empty input");
  require(predictions.size() == labels.size(), ErrorCode::kDimension,
          "predictions and labels differ in length");
  require(num_classes >= 1, ErrorCode::kInvalidArgument, "num_classes must be >= 1");
  const auto C = static_cast<size_t>(num_classes);
  std::vector<double> tp(C, 0), fp(C, 0), fn(C, 0), support(C, 0), predicted(C, 0);
  size_t correct = 0;
  for (size_t i = 0; i < labels.size(); ++i) {
    const auto y = labels[i];
    const auto p = predictions[i];
    require(y >= 0 && y < num_classes && p >= 0 && p < num_classes, ErrorCode::kInvalidArgument,
            "class index out of range");
    support[static_cast<size_t>(y)] += 1;
    predicted[static_cast<size_t>(p)] += 1;
    if (y == p) {
      tp[static_cast<size_t>(y)] += 1;
      ++correct;
    } else {
      fp[static_cast<size_t>(p)] += 1;
      fn[static_cast<size_t>(y)] += 1;
    }
  }
  double recall_sum = 0.0, f1_sum = 0.0;
  int recall_classes = 0, f1_classes = 0;
  for (size_t c = 0; c < C; ++c) {
    if (support[c] > 0) {
      recall_sum += tp[c] / support[c];
      ++recall_classes;
    } else if (predicted[c] > 0) {
      ++recall_classes;  // recall 0
    }
    if (support[c] > 0 || predicted[c] > 0) {
      f1_sum += 2 * tp[c] / (2 * tp[c] + fp[c] + fn[c]);
      ++f1_classes;
    }
  }
  ClassificationScores s;
  s.balanced_accuracy = recall_sum / recall_classes;
  s.macro_f1 = f1_sum / f1_classes;
  s.accuracy = static_cast<double>(correct) / static_cast<double>(labels.size());
  return s;
}

nlohmann::json ReliabilityReport::to_json() const {
  nlohmann::json jb = nlohmann::json::array();
  for (const auto& b : bins) {
    jb.push_back({{"lower", b.lower}, {"upper", b.upper}, {"mean_confidence", b.mean_confidence},
                  {"accuracy", b.accuracy}, {"count", b.count}});
  }
  return {{"ece", ece}, {"num_bins", bins.size()}, {"bins", jb}};
}

ReliabilityReport expected_calibration_error(std::span<const double> confidences,
                                             std::span<const std::uint8_t> correct, int num_bins) {
  require(confidences.size() == correct.size(), ErrorCode::kDimension,
          "confidences and correctness differ in length");
  require(num_bins >= 1, ErrorCode::kInvalidArgument, "num_bins must be >= 1");
  const auto B = static_cast<size_t>(num_bins);
  ReliabilityReport report;
  report.bins.resize(B);
  std::vector<double> conf_sum(B, 0.0), acc_sum(B, 0.0);
  for (size_t i = 0; i < confidences.size(); ++i) {
    const double c = confidences[i];
    require(c >= 0.0 && c <= 1.0, ErrorCode::kInvalidArgument, "confidence outside [0, 1]");
    const size_t b = std::min(B - 1, static_cast<size_t>(std::floor(c * static_cast<double>(B))));
    conf_sum[b] += c;
    acc_sum[b] += correct[i] ? 1.0 : 0.0;
    report.bins[b].count += 1;
  }
  const auto n = static_cast<double>(confidences.size());
  for (size_t b = 0; b < B; ++b) {
    auto& bin = report.bins[b];
    bin.lower = static_cast<double>(b) / static_cast<double>(B);
    bin.upper = static_cast<double>(b + 1) / static_cast<double>(B);
    if (bin.count == 0) continue;
    const auto cnt = static_cast<double>(bin.count);
    bin.mean_confidence = conf_sum[b] / cnt;
    bin.accuracy = acc_sum[b] / cnt;
    report.ece += (cnt / n) * std::abs(bin.accuracy - bin.mean_confidence);
  }
  return report;
}

ReliabilityReport reliability_from_probabilities(const Matrix& probabilities,
                                                 std::span<const ClassIndex> labels, int num_bins) {
  require(static_cast<size_t>(probabilities.rows()) == labels.size(), ErrorCode::kDimension,
          "probability rows != labels");
  std::vector<double> conf(labels.size());
  std::vector<std::uint8_t> ok(labels.size());
  for (Eigen::Index i = 0; i < probabilities.rows(); ++i) {
    Eigen::Index arg = 0;
    conf[static_cast<size_t>(i)] = std::clamp(probabilities.row(i).maxCoeff(&arg), 0.0, 1.0);
    ok[static_cast<size_t>(i)] = arg == labels[static_cast<size_t>(i)];
  }
  return expected_calibration_error(conf, ok, num_bins);
}

double js_divergence(std::span<const double> p, std::span<const double> q) {
  require(p.size() == q.size() && !p.empty(), ErrorCode::kDimension, "js: size mismatch");
  double a = 0.0, b = 0.0;
  for (size_t j = 0; j < p.size(); ++j) {
    const double m = 0.5 * (p[j] + q[j]);
    if (p[j] > 0) a += p[j] * std::log(p[j] / m);
    if (q[j] > 0) b += q[j] * std::log(q[j] / m);
  }
  // Summing the two halves in a fixed order keeps js(p,q) == js(q,p) bitwise.
  return std::max(0.0, 0.5 * std::min(a, b) + 0.5 * std::max(a, b));
}

double js_divergence(const Vector& p, const Vector& q) {
  return js_divergence(std::span<const double>(p.data(), static_cast<size_t>(p.size())),
                       std::span<const double>(q.data(), static_cast<size_t>(q.size())));
}

namespace {

Matrix pooled(const Matrix& a, const Matrix& b) {
  require(a.cols() == b.cols(), ErrorCode::kDimension, "mmd: samples differ in width");
  Matrix z(a.rows() + b.rows(), a.cols());
  z << a, b;
  return z;
}

Matrix squared_distances(const Matrix& z) {
  const Vector sq = z.rowwise().squaredNorm();
  Matrix d = (-2.0 * z * z.transpose()).eval();
  d.colwise() += sq;
  d.rowwise() += sq.transpose();
  return d.cwiseMax(0.0);
}

double median_offdiag(const Matrix& d2) {
  std::vector<double> vals;
  const auto n = d2.rows();
  vals.reserve(static_cast<size_t>(n * (n - 1) / 2));
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) vals.push_back(d2(i, j));
  }
  if (vals.empty()) return 1.0;
  const auto mid = vals.begin() + static_cast<std::ptrdiff_t>(vals.size() / 2);
  std::nth_element(vals.begin(), mid, vals.end());
  double med = *mid;
  if (vals.size() % 2 == 0) {
    med = 0.5 * (med + *std::max_element(vals.begin(), mid));
  }
  return med > 0 ? med : 1.0;
}

// Unbiased MMD^2 from a pooled kernel matrix and a group assignment.
double mmd_from_kernel(const Matrix& k, std::span<const size_t> a_idx, std::span<const size_t> b_idx) {
  const auto m = static_cast<double>(a_idx.size());
  const auto n = static_cast<double>(b_idx.size());
  double kaa = 0.0, kbb = 0.0, kab = 0.0;
  for (size_t i = 0; i < a_idx.size(); ++i) {
    for (size_t j = 0; j < a_idx.size(); ++j) {
      if (i != j) kaa += k(static_cast<Eigen::Index>(a_idx[i]), static_cast<Eigen::Index>(a_idx[j]));
    }
    for (size_t j = 0; j < b_idx.size(); ++j) {
      kab += k(static_cast<Eigen::Index>(a_idx[i]), static_cast<Eigen::Index>(b_idx[j]));
    }
  }
  for (size_t i = 0; i < b_idx.size(); ++i) {
    for (size_t j = 0; j < b_idx.size(); ++j) {
      if (i != j) kbb += k(static_cast<Eigen::Index>(b_idx[i]), static_cast<Eigen::Index>(b_idx[j]));
    }
  }
  const double v = kaa / (m * (m - 1)) + kbb / (n * (n - 1)) - 2.0 * kab / (m * n);
  return std::max(0.0, v);
}

}  // namespace

double median_heuristic_bandwidth(const Matrix& a, const Matrix& b) {
  return std::sqrt(median_offdiag(squared_distances(pooled(a, b))));
}

double mmd_rbf(const Matrix& a, const Matrix& b, std::optional<double> bandwidth) {
  require(a.rows() >= 2 && b.rows() >= 2, ErrorCode::kInvalidArgument,
          "mmd needs at least two rows per sample");
  const Matrix z = pooled(a, b);
  const Matrix d2 = squared_distances(z);
  const double s2 = bandwidth ? (*bandwidth) * (*bandwidth) : median_offdiag(d2);
  require(s2 > 0, ErrorCode::kInvalidArgument, "mmd bandwidth must be > 0");
  const Matrix k = (-d2.array() / (2.0 * s2)).exp().matrix();
  std::vector<size_t> ai(static_cast<size_t>(a.rows())), bi(static_cast<size_t>(b.rows()));
  std::iota(ai.begin(), ai.end(), size_t{0});
  std::iota(bi.begin(), bi.end(), static_cast<size_t>(a.rows()));
  return mmd_from_kernel(k, ai, bi);
}

PermutationTestResult mmd_permutation_test(const Matrix& a, const Matrix& b, int permutations,
                                           std::uint64_t seed, double quantile) {
  require(permutations >= 1, ErrorCode::kInvalidArgument, "permutations must be >= 1");
  require(a.rows() >= 2 && b.rows() >= 2, ErrorCode::kInvalidArgument,
          "mmd needs at least two rows per sample");
  const Matrix z = pooled(a, b);
  const Matrix d2 = squared_distances(z);
  const double s2 = median_offdiag(d2);
  const Matrix k = (-d2.array() / (2.0 * s2)).exp().matrix();
  const auto m = static_cast<size_t>(a.rows());
  std::vector<size_t> idx(static_cast<size_t>(z.rows()));
  std::iota(idx.begin(), idx.end(), size_t{0});

  PermutationTestResult r;
  r.statistic = mmd_from_kernel(k, std::span(idx).first(m), std::span(idx).subspan(m));
  Rng rng(seed);
  std::vector<double> null(static_cast<size_t>(permutations));
  size_t at_least = 0;
  for (auto& v : null) {
    std::shuffle(idx.begin(), idx.end(), rng);
    v = mmd_from_kernel(k, std::span(idx).first(m), std::span(idx).subspan(m));
    if (v >= r.statistic) ++at_least;
  }
  std::sort(null.begin(), null.end());
  const auto qi = std::min(null.size() - 1,
                           static_cast<size_t>(std::ceil(quantile * static_cast<double>(null.size()))) - 1);
  r.null_quantile = null[qi];
  r.p_value = static_cast<double>(at_least + 1) / static_cast<double>(permutations + 1);
  r.reject = r.statistic > r.null_quantile;
  return r;
}

namespace {

std::vector<double> average_ranks(std::span<const double> x) {
  std::vector<size_t> order(x.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(x.size());
  size_t i = 0;
  while (i < order.size()) {
    size_t j = i;
    while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double spearman_correlation(std::span<const double> x, std::span<const double> y) {
  require(x.size() == y.size() && x.size() >= 2, ErrorCode::kInvalidArgument,
          "spearman needs two equal-length samples of size >= 2");
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0 || syy == 0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

MeanStderr mean_and_stderr(std::span<const double> values) {
  MeanStderr r;
  if (values.empty()) return r;
  const double n = static_cast<double>(values.size());
  r.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  if (values.size() >= 2) {
    double ss = 0.0;
    for (double v : values) ss += (v - r.mean) * (v - r.mean);
    r.stderr_ = std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
  }
  return r;
}

// ---------------------------------------------------------------------------
// Error-gap bound

nlohmann::json BoundReport::to_json() const {
  return {{"lhs", lhs}, {"source_error", source_error}, {"adapted_target_error", adapted_target_error},
          {"k1", k1}, {"k2", k2}, {"bse", bse}, {"delta_ce", delta_ce}, {"l1_term", l1_term},
          {"rhs", rhs}, {"bound_holds", bound_holds}};
}

namespace {

void require_simplex(const Vector& v, const char* what) {
  require(v.size() >= 1 && (v.array() >= 0).all() && std::abs(v.sum() - 1.0) <= 1e-9,
          ErrorCode::kInvalidArgument, std::string(what) + " is not a probability vector");
}

// P(Yhat = i | Y = y) for a stochastic classifier whose class probabilities
// softmax(logits[x]) are reweighted by `weights` and renormalized.
Matrix confusion(const Matrix& conditional, const Matrix& logits, const Vector& weights) {
  const auto C = conditional.rows();
  const auto m = conditional.cols();
  Matrix per_input(m, C);
  for (Eigen::Index x = 0; x < m; ++x) {
    RowVector p = nn::softmax(logits.row(x));
    p = p.cwiseProduct(weights.transpose());
    per_input.row(x) = p / std::max(p.sum(), kClampEps);
  }
  return conditional * per_input;  // C x C, rows = true class
}

}  // namespace

BoundReport theorem_bound_check(const DiscreteGlsInstance& inst) {
  const auto C = inst.source_conditional.rows();
  const auto m = inst.source_conditional.cols();
  require(C >= 2 && C <= 4, ErrorCode::kInvalidArgument, "bound check needs 2 <= C <= 4");
  require(m >= 1 && m <= 12, ErrorCode::kInvalidArgument, "bound check needs 1 <= |X| <= 12");
  require(inst.target_conditional.rows() == C && inst.target_conditional.cols() == m,
          ErrorCode::kDimension, "target conditional shape mismatch");
  require((inst.source_conditional - inst.target_conditional).cwiseAbs().maxCoeff() <= 1e-12,
          ErrorCode::kInvalidArgument,
          "instance violates generalized label shift: P(x|y) differs across domains");
  for (Eigen::Index y = 0; y < C; ++y) {
    const Vector row = inst.source_conditional.row(y).transpose();
    require_simplex(row, "P(x|y) row");
  }
  require(inst.source_prior.size() == C && inst.target_prior.size() == C &&
              inst.online_estimate.size() == C,
          ErrorCode::kDimension, "prior length != C");
  require_simplex(inst.source_prior, "source prior");
  require_simplex(inst.target_prior, "target prior");
  require_simplex(inst.online_estimate, "online estimate");
  require((inst.source_prior.array() > 0).all() && (inst.target_prior.array() > 0).all(),
          ErrorCode::kInvalidArgument, "priors must be strictly positive");
  require(inst.source_logits.rows() == m && inst.source_logits.cols() == C &&
              inst.target_logits.rows() == m && inst.target_logits.cols() == C,
          ErrorCode::kDimension, "logit table shape mismatch");

  const Vector unit = Vector::Ones(C);
  const Vector adapt_weights = inst.online_estimate.cwiseQuotient(inst.source_prior);
  const Matrix ms = confusion(inst.source_conditional, inst.source_logits, unit);
  const Matrix mt = confusion(inst.target_conditional, inst.target_logits, unit);
  const Matrix mo = confusion(inst.target_conditional, inst.target_logits, adapt_weights);

  BoundReport r;
  for (Eigen::Index y = 0; y < C; ++y) {
    r.source_error += inst.source_prior(y) * (1.0 - ms(y, y));
    r.adapted_target_error += inst.target_prior(y) * (1.0 - mo(y, y));
    r.bse = std::max(r.bse, 1.0 - ms(y, y));
    for (Eigen::Index i = 0; i < C; ++i) {
      if (i != y) r.delta_ce = std::max(r.delta_ce, std::abs(ms(y, i) - mt(y, i)));
    }
  }
  r.lhs = std::abs(r.source_error - r.adapted_target_error);
  const double c = static_cast<double>(C);
  r.k1 = c * (c - 1) * (c - 1) * inst.target_prior.maxCoeff();
  r.k2 = (c - 1) + (c - 1) * (c - 1) / inst.source_prior.minCoeff();
  r.l1_term = (Vector::Ones(C) - inst.online_estimate.cwiseQuotient(inst.target_prior)).cwiseAbs().sum();
  r.rhs = r.k1 * r.l1_term * r.bse + r.k2 * r.delta_ce;
  r.bound_holds = r.lhs <= r.rhs + 1e-9;
  return r;
}

DiscreteGlsInstance random_gls_instance(std::uint64_t seed, const GlsInstanceOptions& opt) {
  Rng rng(seed);
  std::uniform_int_distribution<int> cdist(opt.min_classes, opt.max_classes);
  std::uniform_int_distribution<int> mdist(opt.min_inputs, opt.max_inputs);
  const int C = cdist(rng);
  const int m = mdist(rng);
  DiscreteGlsInstance inst;
  inst.source_conditional.resize(C, m);
  for (int y = 0; y < C; ++y) {
    inst.source_conditional.row(y) = sample_dirichlet(rng, Vector::Ones(m)).transpose();
  }
  inst.target_conditional = inst.source_conditional;
  inst.source_prior = sample_dirichlet(rng, Vector::Ones(C));
  inst.target_prior = sample_dirichlet(rng, Vector::Ones(C));
  inst.online_estimate = sample_dirichlet(rng, Vector::Ones(C));
  std::normal_distribution<double> logit(0.0, opt.logit_scale);
  inst.source_logits.resize(m, C);
  for (int x = 0; x < m; ++x) {
    for (int c = 0; c < C; ++c) inst.source_logits(x, c) = logit(rng);
  }
  std::uniform_real_distribution<double> pert_scale(0.0, opt.max_domain_perturbation);
  std::normal_distribution<double> unit(0.0, 1.0);
  const double s = pert_scale(rng);
  inst.target_logits = inst.source_logits;
  for (int x = 0; x < m; ++x) {
    for (int c = 0; c < C; ++c) inst.target_logits(x, c) += s * unit(rng);
  }
  return inst;
}

}  // namespace adaptable::metrics

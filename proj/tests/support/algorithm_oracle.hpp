#pragma once

// Straight-line reference for one batch of the label distribution handler,
// written from the algorithm listing with plain std containers. It shares no
// code with the library on purpose.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

namespace oracle {

using Row = std::vector<double>;
using Rows = std::vector<Row>;

struct Output {
  Rows p_bar;
  std::vector<double> delta;
  std::vector<double> t_tilde;
  Row p_t;
  Row p_oe_next;
};

inline Row softmax_scaled(const Row& z, double t) {
  double m = z[0] / t;
  for (double v : z) m = std::max(m, v / t);
  Row e(z.size());
  double s = 0.0;
  for (std::size_t j = 0; j < z.size(); ++j) {
    e[j] = std::exp(z[j] / t - m);
    s += e[j];
  }
  for (double& v : e) v /= s;
  return e;
}

inline Row normalize(Row v) {
  double s = 0.0;
  for (double x : v) s += x;
  for (double& x : v) x /= s;
  return v;
}

inline double interpolated_quantile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double h = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = static_cast<std::size_t>(std::ceil(h));
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

// `temps` are the stage-one temperatures T_i.
inline Output run_batch(const Rows& logits, const std::vector<double>& temps, const Row& p_s,
                        const Row& p_oe, double alpha, double q_low, double q_high) {
  const std::size_t n = logits.size();
  const std::size_t c = p_s.size();
  const double eps = 1e-12;

  const double rho = *std::max_element(p_s.begin(), p_s.end()) / *std::min_element(p_s.begin(), p_s.end());
  const double big_t = 1.5 * rho / (rho - 1.0 + 1e-6);

  Output out;
  Rows p_de(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Row p = softmax_scaled(logits[i], 1.0);
    std::size_t j1 = 0;
    for (std::size_t j = 1; j < c; ++j)
      if (p[j] > p[j1]) j1 = j;
    std::size_t j2 = j1 == 0 ? 1 : 0;
    for (std::size_t j = 0; j < c; ++j)
      if (j != j1 && p[j] > p[j2]) j2 = j;
    const Row pc = softmax_scaled(logits[i], temps[i]);
    out.delta.push_back(1.0 / std::max(pc[j1] - pc[j2], eps));

    Row r(c);
    for (std::size_t j = 0; j < c; ++j) r[j] = p[j] / std::max(p_s[j], eps);
    p_de[i] = normalize(r);
  }

  out.p_t.assign(c, 0.0);
  for (std::size_t j = 0; j < c; ++j) {
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += p_de[i][j];
    mean /= static_cast<double>(n);
    out.p_t[j] = (1.0 - alpha) * mean + alpha * p_oe[j];
  }

  const double hi = interpolated_quantile(out.delta, q_high);
  const double lo = interpolated_quantile(out.delta, q_low);
  for (std::size_t i = 0; i < n; ++i) {
    double tt = 1.0;
    if (out.delta[i] >= hi) {
      tt = big_t;
    } else if (out.delta[i] <= lo) {
      tt = 1.0 / big_t;
    }
    out.t_tilde.push_back(tt);
    const Row pt = softmax_scaled(logits[i], tt);
    Row aligned(c);
    for (std::size_t j = 0; j < c; ++j) aligned[j] = pt[j] * out.p_t[j] / std::max(p_s[j], eps);
    aligned = normalize(aligned);
    Row bar(c);
    for (std::size_t j = 0; j < c; ++j) bar[j] = (pt[j] + aligned[j]) / 2.0;
    out.p_bar.push_back(bar);
  }

  out.p_oe_next.assign(c, 0.0);
  for (std::size_t j = 0; j < c; ++j) {
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += out.p_bar[i][j];
    mean /= static_cast<double>(n);
    out.p_oe_next[j] = (1.0 - alpha) * mean + alpha * p_oe[j];
  }
  return out;
}

}  // namespace oracle

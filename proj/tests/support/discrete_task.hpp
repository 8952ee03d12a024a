#pragma once

// Finite label-shift task: exact class conditionals P(x|y) over a small
// input alphabet, shared by both domains, with different label priors.

#include "adaptable/label_handler.hpp"
#include "adaptable/random.hpp"

#include <cstdint>

namespace adaptable::testing {

struct DiscreteTask {
  Matrix conditional;  // C x m
  Vector source_prior;
  Vector target_prior;
};

inline DiscreteTask random_discrete_task(std::uint64_t seed) {
  Rng rng(seed);
  const int c = 2 + static_cast<int>(rng() % 3);
  const int m = 2 + static_cast<int>(rng() % 11);
  DiscreteTask t;
  t.conditional.resize(c, m);
  for (int y = 0; y < c; ++y) t.conditional.row(y) = sample_dirichlet(rng, Vector::Ones(m)).transpose();
  t.source_prior = sample_dirichlet(rng, Vector::Ones(c)).cwiseMax(1e-3);
  t.source_prior /= t.source_prior.sum();
  t.target_prior = sample_dirichlet(rng, Vector::Ones(c)).cwiseMax(1e-3);
  t.target_prior /= t.target_prior.sum();
  return t;
}

struct RuleScores {
  double source_rule = 0.0;   // argmax of the exact source posterior
  double aligned_rule = 0.0;  // argmax after alignment with the oracle target prior
};

// Balanced accuracy of both deterministic rules by exact enumeration.
inline RuleScores enumerate_balanced_accuracy(const DiscreteTask& t) {
  const auto c = t.conditional.rows();
  Vector recall_src = Vector::Zero(c), recall_aln = Vector::Zero(c);
  for (Eigen::Index x = 0; x < t.conditional.cols(); ++x) {
    RowVector post = t.conditional.col(x).transpose().cwiseProduct(t.source_prior.transpose());
    post /= post.sum();
    const ClassIndex src = handler::argmax(post);
    const ClassIndex aln =
        handler::argmax(handler::align_distribution_baseline(post, t.target_prior, t.source_prior));
    recall_src(src) += t.conditional(src, x);
    recall_aln(aln) += t.conditional(aln, x);
  }
  return {recall_src.mean(), recall_aln.mean()};
}

}  // namespace adaptable::testing

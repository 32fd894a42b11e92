#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "plumage/estimator.hpp"
#include "plumage/sampler.hpp"
#include "test_util.hpp"

using namespace plumage;

namespace {

/// Random inclusion-probability vector with sum exactly k (up to rounding):
/// proportional weights, then iterative capping at 1.
Vector random_probabilities(Index n, Index k, Rng& rng) {
  Vector w(n);
  for (Index i = 0; i < n; ++i) w[i] = rng.uniform01() < 0.2 ? 0.0 : rng.uniform01_open_closed();
  if ((w.array() > 0).count() < k) w.setOnes();
  Vector p = Vector::Zero(n);
  std::vector<bool> capped(static_cast<std::size_t>(n), false);
  for (int iter = 0; iter < 100; ++iter) {
    double free_mass = static_cast<double>(k);
    double free_weight = 0.0;
    for (Index i = 0; i < n; ++i) {
      if (capped[static_cast<std::size_t>(i)]) free_mass -= 1.0;
      else free_weight += w[i];
    }
    bool changed = false;
    for (Index i = 0; i < n; ++i) {
      if (capped[static_cast<std::size_t>(i)]) {
        p[i] = 1.0;
        continue;
      }
      p[i] = free_mass * w[i] / free_weight;
      if (p[i] > 1.0) {
        capped[static_cast<std::size_t>(i)] = true;
        changed = true;
      }
    }
    if (!changed) break;
  }
  return p;
}

Vector random_sigma(Index d, Rng& rng) {
  Vector s(d);
  for (Index i = 0; i < d; ++i) s[i] = std::exp(3.0 * rng.normal());
  std::sort(s.data(), s.data() + d, std::greater<>());
  return s;
}

}  // namespace

TEST(SamplingProbabilities, HandExample) {
  const auto plan = compute_sampling_probabilities(Vector{{4, 2, 1, 1}}, 2);
  EXPECT_EQ(plan.r_star, 1);
  const Vector expected{{1.0, 0.5, 0.25, 0.25}};
  EXPECT_LT((plan.p - expected).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_EQ(plan.k, 2);
}

TEST(SamplingProbabilities, FullRankIsDeterministic) {
  const auto plan = compute_sampling_probabilities(Vector{{1, 1, 1, 1}}, 4);
  EXPECT_EQ(plan.r_star, 4);
  EXPECT_EQ(plan.p, Vector::Ones(4));
}

TEST(SamplingProbabilities, ClippedZeroTail) {
  const auto plan = compute_sampling_probabilities(Vector{{5, 0, 0}}, 1, 1e-12);
  EXPECT_EQ(plan.r_star, 1);
  EXPECT_EQ(plan.p, (Vector{{1, 0, 0}}));
}

TEST(SamplingProbabilities, RankDeficientBelowTarget) {
  // Two nonzero directions but k = 3: a zero direction fills the last slot.
  const auto plan = compute_sampling_probabilities(Vector{{3, 1, 0, 0}}, 3);
  EXPECT_EQ(plan.r_star, 3);
  EXPECT_EQ(plan.p, (Vector{{1, 1, 1, 0}}));
}

TEST(SamplingProbabilities, ZeroTailWithSlackGetsZeroProbability) {
  const auto plan = compute_sampling_probabilities(Vector{{3, 2, 1, 0, 0}}, 2);
  EXPECT_NEAR(plan.p.sum(), 2.0, 1e-12);
  EXPECT_EQ(plan.p[3], 0.0);
  EXPECT_EQ(plan.p[4], 0.0);
  EXPECT_GT(plan.p[2], 0.0);
}

TEST(SamplingProbabilities, Errors) {
  EXPECT_THROW(compute_sampling_probabilities(Vector{{3, 2}}, 3), NumericError);
  EXPECT_THROW(compute_sampling_probabilities(Vector{{3, 2}}, 0), NumericError);
  EXPECT_THROW(compute_sampling_probabilities(Vector{{1, 2}}, 1), NumericError);
  EXPECT_THROW(compute_sampling_probabilities(Vector{{2, -1}}, 1), NumericError);
}

TEST(SamplingProbabilities, PropertiesOnRandomSpectra) {
  Rng rng(123);
  for (int trial = 0; trial < 500; ++trial) {
    const Index d = 1 + static_cast<Index>(rng.below(40));
    const Index k = 1 + static_cast<Index>(rng.below(static_cast<std::uint64_t>(d)));
    Vector sigma = random_sigma(d, rng);
    if (trial % 5 == 0) sigma.tail(d / 3).setZero();
    const auto plan = compute_sampling_probabilities(sigma, k);

    EXPECT_NEAR(plan.p.sum(), static_cast<double>(k), 1e-9) << "trial " << trial;
    for (Index i = 0; i < d; ++i) {
      EXPECT_GE(plan.p[i], 0.0);
      EXPECT_LE(plan.p[i], 1.0);
      if (i < plan.r_star) {
        EXPECT_EQ(plan.p[i], 1.0);
      }
      if (sigma[i] > 0.0 && (sigma.array() > 0).count() > k) {
        EXPECT_GT(plan.p[i], 0.0);
      }
      if (i > 0) {
        EXPECT_GE(plan.p[i - 1], plan.p[i]);
      }
    }
    // r* never decreases as k grows.
    if (k < d) {
      const auto next = compute_sampling_probabilities(sigma, k + 1);
      EXPECT_GE(next.r_star, plan.r_star);
    }
  }
}

TEST(SampleIndices, AllDeterministic) {
  Rng rng(1);
  for (int i = 0; i < 100; ++i) {
    auto idx = sample_indices(Vector{{1, 1}}, 2, rng);
    std::sort(idx.begin(), idx.end());
    EXPECT_EQ(idx, (std::vector<Index>{0, 1}));
  }
}

TEST(SampleIndices, ArmTrace) {
  // cumsum [0.5, 1.0, 1.5, 2.0], delta = 1, arms at 0.3 and 1.3.
  const auto idx = systematic_sample(Vector{{0.5, 0.5, 0.5, 0.5}}, 2, {0, 1, 2, 3}, 0.3);
  EXPECT_EQ(idx, (std::vector<Index>{0, 2}));
}

TEST(SampleIndices, ArmOnBoundaryTakesFirstCoveringIndex) {
  const auto idx = systematic_sample(Vector{{0.5, 0.5, 0.5, 0.5}}, 2, {0, 1, 2, 3}, 0.5);
  EXPECT_EQ(idx, (std::vector<Index>{0, 2}));
}

TEST(SampleIndices, RejectsBadMass) {
  Rng rng(2);
  EXPECT_THROW(sample_indices(Vector{{0.5, 0.4}}, 1, rng), NumericError);
  EXPECT_THROW(sample_indices(Vector{{1.5, 0.5}}, 2, rng), NumericError);
  EXPECT_THROW(sample_indices(Vector{{0.5, 0.5}}, 3, rng), NumericError);
}

TEST(SampleIndices, MixedMarginals) {
  Rng rng(77);
  const Vector p{{1.0, 0.5, 0.5}};
  const long n = 100000;
  Vector counts = Vector::Zero(3);
  for (long t = 0; t < n; ++t) {
    const auto idx = sample_indices(p, 2, rng);
    ASSERT_EQ(idx.size(), 2u);
    for (auto i : idx) counts[i] += 1;
  }
  EXPECT_EQ(counts[0], static_cast<double>(n));
  EXPECT_NEAR(counts[1] / n, 0.5, 0.01);
  EXPECT_NEAR(counts[2] / n, 0.5, 0.01);
}

TEST(SampleIndices, ExactKDistinctOnRandomVectors) {
  Rng rng(2024);
  for (int trial = 0; trial < 300; ++trial) {
    const Index n = 1 + static_cast<Index>(rng.below(30));
    const Index k = 1 + static_cast<Index>(rng.below(static_cast<std::uint64_t>(n)));
    const Vector p = random_probabilities(n, k, rng);
    for (int draw = 0; draw < 50; ++draw) {
      const auto idx = sample_indices(p, k, rng);
      ASSERT_EQ(static_cast<Index>(idx.size()), k);
      const std::set<Index> uniq(idx.begin(), idx.end());
      ASSERT_EQ(static_cast<Index>(uniq.size()), k);
      for (auto i : idx) {
        ASSERT_GE(i, 0);
        ASSERT_LT(i, n);
        ASSERT_GT(p[i], 0.0);
      }
      for (Index i = 0; i < n; ++i) {
        if (p[i] == 1.0) {
          ASSERT_TRUE(uniq.count(i));
        }
      }
    }
  }
}

TEST(SampleIndices, MarginalsWithinFourSigma) {
  Rng rng(99);
  const Index n = 12, k = 5;
  const Vector p = random_probabilities(n, k, rng);
  const long trials = 100000;
  Vector freq = Vector::Zero(n);
  for (long t = 0; t < trials; ++t)
    for (auto i : sample_indices(p, k, rng)) freq[i] += 1.0;
  freq /= static_cast<double>(trials);
  for (Index i = 0; i < n; ++i) {
    const double tol = 4.0 * std::sqrt(p[i] * (1 - p[i]) / trials);
    EXPECT_LE(std::abs(freq[i] - p[i]), tol + 1e-12) << "index " << i << " p=" << p[i];
  }
}

TEST(SampleProjections, FullRankSpansEverything) {
  Rng rng(4);
  Eigen::HouseholderQR<Matrix> qr(testutil::random_matrix(5, 5, rng));
  const Matrix q = qr.householderQ();
  const auto decomp = svd(q);
  const auto plan = compute_sampling_probabilities(decomp.sigma, 5);
  const auto proj = sample_projections(decomp, plan, 5, Side::left, rng);
  EXPECT_LT((proj.basis * proj.basis.transpose() - Matrix::Identity(5, 5)).norm(), 1e-8);
  EXPECT_EQ(proj.d_scale, Vector::Ones(5));
}

TEST(SampleProjections, RankOneTakesLeadingDirection) {
  Rng rng(6);
  const Vector u = testutil::random_matrix(6, 1, rng).col(0).normalized();
  const Vector v = testutil::random_matrix(9, 1, rng).col(0).normalized();
  const Matrix g = 3.0 * u * v.transpose();
  const auto decomp = svd(g);
  const auto plan = compute_sampling_probabilities(decomp.sigma, 1);
  const auto proj = sample_projections(decomp, plan, 1, Side::left, rng);
  EXPECT_EQ(proj.indices, (std::vector<Index>{0}));
  EXPECT_EQ(proj.d_scale[0], 1.0);
  EXPECT_NEAR(std::abs(proj.basis.col(0).dot(u)), 1.0, 1e-12);
  Index arg = 0;
  proj.basis.col(0).cwiseAbs().maxCoeff(&arg);
  EXPECT_GT(proj.basis(arg, 0), 0.0);
}

TEST(SampleProjections, SecondIndexFrequencies) {
  Rng rng(8);
  SingularDecomposition decomp{Matrix::Identity(4, 4), Vector{{4, 2, 1, 1}}, Matrix::Identity(4, 4)};
  const auto plan = compute_sampling_probabilities(decomp.sigma, 2);
  const long n = 100000;
  Vector counts = Vector::Zero(4);
  for (long t = 0; t < n; ++t) {
    const auto proj = sample_projections(decomp, plan, 2, Side::left, rng);
    ASSERT_EQ(proj.indices[0], 0);
    counts[proj.indices[1]] += 1.0;
    ASSERT_EQ(proj.d_scale[1], plan.p[proj.indices[1]]);
    ASSERT_LT(orthonormality_defect(proj.basis), 1e-8);
  }
  EXPECT_EQ(counts[0], 0.0);
  EXPECT_NEAR(counts[1] / n, 0.5, 0.01);
  EXPECT_NEAR(counts[2] / n, 0.25, 0.01);
  EXPECT_NEAR(counts[3] / n, 0.25, 0.01);
}

TEST(SampleProjections, RightSideUsesV) {
  Rng rng(10);
  const Matrix g = testutil::random_matrix(9, 4, rng);
  const auto decomp = svd(g);
  const auto plan = compute_sampling_probabilities(decomp.sigma, 2);
  const auto proj = sample_projections(decomp, plan, 2, Side::right, rng);
  EXPECT_EQ(proj.basis.rows(), 4);
  for (Index j = 0; j < 2; ++j) EXPECT_EQ(proj.basis.col(j), decomp.V.col(proj.indices[static_cast<std::size_t>(j)]));
}

TEST(SampleProjections, ChooseSide) {
  EXPECT_EQ(choose_side(4, 6), Side::left);
  EXPECT_EQ(choose_side(5, 5), Side::left);
  EXPECT_EQ(choose_side(6, 4), Side::right);
}

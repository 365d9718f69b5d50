#include <gtest/gtest.h>

#include <Eigen/Dense>

#include "dualkg/metrics.hpp"
#include "dualkg/random.hpp"
#include "test_util.hpp"

namespace dualkg {
namespace {

using Idx = std::vector<std::size_t>;

TEST(HitsAt1, Examples) {
  const std::vector<double> p{0.7, 0.2, 0.1};
  EXPECT_EQ(hits_at_1(p, Idx{0}), 1);
  EXPECT_EQ(hits_at_1(p, Idx{1, 2}), 0);
  EXPECT_EQ(hits_at_1(std::vector<double>{0.5, 0.5, 0}, Idx{1}), 0);
  EXPECT_EQ(hits_at_1(std::vector<double>{0.5, 0.5, 0}, Idx{0}), 1);
  EXPECT_THROW(hits_at_1(p, Idx{}), std::invalid_argument);
}

TEST(HitsAt1, InvariantUnderPositiveRescaling) {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> p(6);
    for (double& v : p) v = rng.uniform(0, 1);
    std::vector<double> scaled(p);
    const double c = rng.uniform(0.01, 100);
    for (double& v : scaled) v *= c;
    const Idx answers{rng.below(6)};
    EXPECT_EQ(hits_at_1(p, answers), hits_at_1(scaled, answers));
  }
}

TEST(F1, Examples) {
  EXPECT_DOUBLE_EQ(f1_score(Idx{1, 2}, Idx{1, 2}), 1.0);
  EXPECT_DOUBLE_EQ(f1_score(Idx{0}, Idx{1, 2}), 0.0);
  EXPECT_DOUBLE_EQ(f1_score(Idx{0, 1}, Idx{1, 2}), 0.5);
  EXPECT_DOUBLE_EQ(f1_score(Idx{}, Idx{1}), 0.0);
  // P = 1/3, R = 1/2
  EXPECT_DOUBLE_EQ(f1_score(Idx{0, 1, 3}, Idx{1, 2}), 0.4);
  EXPECT_THROW(f1_score(Idx{1}, Idx{}), std::invalid_argument);
}

TEST(F1, SymmetricUnderRelabeling) {
  const std::size_t perm[] = {4, 2, 0, 1, 3};
  Rng rng(5);
  for (int trial = 0; trial < 30; ++trial) {
    Idx pred, gold;
    for (std::size_t e = 0; e < 5; ++e) {
      if (rng.bernoulli(0.5)) pred.push_back(e);
      if (rng.bernoulli(0.5) || (e == 4 && gold.empty())) gold.push_back(e);
    }
    Idx pred2, gold2;
    for (std::size_t e : pred) pred2.push_back(perm[e]);
    for (std::size_t e : gold) gold2.push_back(perm[e]);
    std::sort(pred2.begin(), pred2.end());
    std::sort(gold2.begin(), gold2.end());
    EXPECT_DOUBLE_EQ(f1_score(pred, gold), f1_score(pred2, gold2));
  }
}

TEST(SelectAnswers, Examples) {
  EXPECT_EQ(select_answers(std::vector<double>{0.6, 0.35, 0.05}, 0.5), (Idx{0, 1}));
  EXPECT_EQ(select_answers(std::vector<double>{0.2, 0.5, 0.3}, 1.0), (Idx{1}));
  EXPECT_EQ(select_answers(std::vector<double>{0.25, 0.25, 0.25, 0.25}, 0.1), (Idx{0, 1, 2, 3}));
  EXPECT_THROW(select_answers(std::vector<double>{1.0}, 0.0), std::invalid_argument);
  EXPECT_THROW(select_answers(std::vector<double>{1.0}, 1.5), std::invalid_argument);
}

// Two facts A->B and B->C with r = e_t - e_h. Only the first has |r|^2 = d;
// the second has |r|^2 = 2d and scores 2.
TEST(TransE, ConstructedEmbeddingsScoreOne) {
  const Tensor e = Tensor::matrix({{0, 0, 0, 0}, {1, 1, 1, 1}, {1, -1, 1, 3}});
  const Tensor r = Tensor::matrix({{1, 1, 1, 1}, {0, -2, 0, 2}});
  const Idx head{0, 1}, tail{1, 2}, node{0, 1};
  const double s0 = transe_score(e, r, Idx{0}, Idx{1}, Idx{0});
  EXPECT_NEAR(s0, 1.0, 1e-12);
  EXPECT_NEAR(transe_score(e, r, head, tail, node), (1.0 + 2.0) / 2.0, 1e-12);
  EXPECT_EQ(transe_score(e, Tensor(Shape{2, 4}), head, tail, node), 0.0);
}

TEST(TransE, RandomUnitNormConstructionScoresOne) {
  Rng rng(41);
  const std::size_t d = 16, n = 9, f = 20;
  Tensor e = testing::random_tensor({n, d}, rng, -2, 2);
  Idx head, tail, node;
  std::vector<double> rel;
  for (std::size_t i = 0; i < f; ++i) {
    const std::size_t h = rng.below(n);
    std::size_t t = rng.below(n - 1);
    if (t >= h) ++t;
    // Rescale the tail so e_t - e_h has squared norm exactly d.
    double norm2 = 0.0;
    for (std::size_t j = 0; j < d; ++j) norm2 += std::pow(e.at(t, j) - e.at(h, j), 2);
    const double c = std::sqrt(static_cast<double>(d) / norm2);
    Tensor moved_tail(Shape{d});
    for (std::size_t j = 0; j < d; ++j) moved_tail[j] = e.at(h, j) + c * (e.at(t, j) - e.at(h, j));
    // Each fact gets its own fresh tail entity and its own relation row.
    std::vector<double> grown(e.values());
    grown.insert(grown.end(), moved_tail.values().begin(), moved_tail.values().end());
    e = Tensor(Shape{e.rows() + 1, d}, grown);
    head.push_back(h);
    tail.push_back(e.rows() - 1);
    node.push_back(i);
    for (std::size_t j = 0; j < d; ++j) rel.push_back(moved_tail[j] - e.at(h, j));
  }
  EXPECT_NEAR(transe_score(e, Tensor(Shape{f, d}, rel), head, tail, node), 1.0, 1e-9);
}

TEST(TransE, RotationInvariantAndNonnegative) {
  Rng rng(8);
  const std::size_t d = 6;
  const Tensor e = testing::random_tensor({5, d}, rng);
  const Tensor r = testing::random_tensor({3, d}, rng);
  const Idx head{0, 1, 2, 3}, tail{1, 2, 4, 0}, node{0, 1, 2, 0};

  Eigen::MatrixXd m(d, d);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-1, 1);
  const Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(m).householderQ();
  auto rotate = [&](const Tensor& t) {
    Tensor out(t.shape());
    for (std::size_t i = 0; i < t.rows(); ++i)
      for (std::size_t j = 0; j < d; ++j)
        for (std::size_t k = 0; k < d; ++k) out.at(i, j) += t.at(i, k) * q(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j));
    return out;
  };
  const double before = transe_score(e, r, head, tail, node);
  EXPECT_GE(before, 0.0);
  EXPECT_NEAR(transe_score(rotate(e), rotate(r), head, tail, node), before, 1e-12);
}

TEST(TransE, RejectsMismatchedInputs) {
  const Tensor e(Shape{2, 3}), r(Shape{1, 4});
  EXPECT_THROW(transe_score(e, r, Idx{0}, Idx{1}, Idx{0}), ShapeError);
  EXPECT_THROW(transe_score(e, Tensor(Shape{1, 3}), Idx{0}, Idx{1, 0}, Idx{0}), std::invalid_argument);
}

std::vector<QuestionResult> fixture(std::vector<std::size_t> relation_counts) {
  const std::vector<double> f1{0.0, 0.2, 0.4, 0.6, 0.8, 1.0, 0.3, 0.5};
  std::vector<QuestionResult> out;
  for (std::size_t i = 0; i < relation_counts.size(); ++i) {
    QuestionResult q;
    q.id = "q" + std::to_string(i);
    q.relation_count = relation_counts[i];
    q.fact_count = 2 * relation_counts[i];
    q.entity_count = 4;
    q.f1 = f1[i % f1.size()];
    q.transe = static_cast<double>(i);
    out.push_back(q);
  }
  return out;
}

TEST(QuantileReport, HandComputedGroupMeans) {
  // Sorted by key: q1 q5 | q2 q3 | q7 q0 | q6 q4
  const auto results = fixture({5, 1, 3, 3, 8, 2, 7, 4});
  const auto groups = quantile_report(results, GroupKey::kRelationCount);
  ASSERT_EQ(groups.size(), 4u);
  const double means[] = {0.6, 0.5, 0.25, 0.55};
  const double lo[] = {1, 3, 4, 7}, hi[] = {2, 3, 5, 8};
  const double transe[] = {3.0, 2.5, 3.5, 5.0};
  for (std::size_t g = 0; g < 4; ++g) {
    EXPECT_EQ(groups[g].size, 2u);
    EXPECT_NEAR(groups[g].mean_f1, means[g], 1e-15);
    EXPECT_EQ(groups[g].key_min, lo[g]);
    EXPECT_EQ(groups[g].key_max, hi[g]);
    EXPECT_DOUBLE_EQ(groups[g].mean_transe, transe[g]);
  }
  // Ratio keys divide by the entity count.
  const auto ratio = quantile_report(results, GroupKey::kFactEntityRatio);
  EXPECT_DOUBLE_EQ(ratio[0].key_min, 0.5);
  EXPECT_DOUBLE_EQ(ratio[3].key_max, 4.0);
}

TEST(QuantileReport, ConstantKeyKeepsQuestionOrder) {
  const auto groups = quantile_report(fixture({3, 3, 3, 3, 3, 3, 3, 3}), GroupKey::kFactCount);
  const double means[] = {0.1, 0.5, 0.9, 0.4};
  for (std::size_t g = 0; g < 4; ++g) EXPECT_NEAR(groups[g].mean_f1, means[g], 1e-15);
}

TEST(QuantileReport, GroupSizesDifferByAtMostOne) {
  for (std::size_t n = 4; n < 40; ++n) {
    std::vector<std::size_t> keys(n);
    for (std::size_t i = 0; i < n; ++i) keys[i] = (i * 7) % 5;
    const auto groups = quantile_report(fixture(keys), GroupKey::kRelationEntityRatio);
    std::size_t total = 0, lo = n, hi = 0;
    for (const auto& g : groups) {
      total += g.size;
      lo = std::min(lo, g.size);
      hi = std::max(hi, g.size);
    }
    EXPECT_EQ(total, n);
    EXPECT_LE(hi - lo, 1u);
  }
  EXPECT_THROW(quantile_report(fixture({1, 2, 3}), GroupKey::kFactCount), std::invalid_argument);
}

TEST(QuantileReport, TableListsFourGroups) {
  const auto groups = quantile_report(fixture({5, 1, 3, 3, 8, 2, 7, 4}), GroupKey::kRelationCount);
  const std::string table = format_quantile_table(groups, GroupKey::kRelationCount);
  EXPECT_NE(table.find(to_string(GroupKey::kRelationCount)), std::string::npos);
  EXPECT_GE(std::count(table.begin(), table.end(), '\n'), 5);
}

TEST(Summarize, MeansOverQuestions) {
  std::vector<QuestionResult> r(2);
  r[0].hits = 1;
  r[0].f1 = 0.5;
  r[0].transe = 2;
  r[1].f1 = 1.0;
  const EvalSummary s = summarize(r);
  EXPECT_EQ(s.questions, 2u);
  EXPECT_DOUBLE_EQ(s.hits_at_1, 0.5);
  EXPECT_DOUBLE_EQ(s.f1, 0.75);
  EXPECT_DOUBLE_EQ(s.transe, 1.0);
}

}  // namespace
}  // namespace dualkg

#include <gtest/gtest.h>

#include <cmath>

#include "dualkg/autodiff.hpp"
#include "test_util.hpp"

namespace dualkg {
namespace {

using ad::Tape;
using ad::Var;
using testing::max_relative_error;
using testing::probe_gradient;
using testing::random_tensor;

TEST(Tensor, ConstructionAndAccess) {
  Tensor m = Tensor::matrix({{1, 2, 3}, {4, 5, 6}});
  EXPECT_EQ(m.shape(), (Shape{2, 3}));
  EXPECT_EQ(m.at(1, 2), 6.0);
  EXPECT_EQ(m.row(1).values(), (std::vector<double>{4, 5, 6}));
  EXPECT_THROW(Tensor(Shape{2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
  EXPECT_THROW(m.item(), ShapeError);
  EXPECT_EQ(Tensor::scalar(2.5).item(), 2.5);
  EXPECT_EQ(m.reshaped({3, 2}).at(2, 1), 6.0);
  EXPECT_THROW(m.reshaped({4, 2}), ShapeError);
}

TEST(Tensor, AccumulateChecksShape) {
  Tensor a(Shape{2}, 1.0);
  a.accumulate(Tensor::vector({2, 3}));
  EXPECT_EQ(a.values(), (std::vector<double>{3, 4}));
  EXPECT_THROW(a.accumulate(Tensor(Shape{3})), ShapeError);
}

TEST(Tensor, CheckFinite) {
  Tensor a = Tensor::vector({1.0, std::nan("")});
  EXPECT_THROW(a.check_finite("probe"), NumericError);
  EXPECT_NO_THROW(Tensor::vector({1.0}).check_finite("probe"));
}

TEST(Autodiff, SimpleOpExamples) {
  Tape tape;
  EXPECT_EQ(ad::softmax(tape.constant(Tensor::vector({3.7})), 0).value(), Tensor::vector({1.0}));
  Var m = tape.constant(Tensor::matrix({{1, 2}, {3, 4}}));
  const Tensor product = ad::matmul(m, tape.constant(Tensor::matrix({{1, 0}, {0, 1}}))).value();
  EXPECT_EQ(product, m.value());
  const Tensor uniform = ad::softmax(tape.constant(Tensor::vector({0, 0, 0})), 0).value();
  for (double v : uniform.data()) EXPECT_DOUBLE_EQ(v, 1.0 / 3.0);
}

TEST(Autodiff, SumAndSquareGradients) {
  Tape tape;
  Var w = tape.variable(Tensor::vector({0.3, -2, 5}));
  tape.backward(ad::sum_all(w));
  EXPECT_EQ(tape.grad(w), Tensor::vector({1, 1, 1}));
  Tape tape2;
  Var v = tape2.variable(Tensor::vector({1, 2}));
  tape2.backward(ad::sum_all(v * v));
  EXPECT_EQ(tape2.grad(v), Tensor::vector({2, 4}));
}

TEST(Autodiff, MatmulAddBackwardMatchesHandDerivation) {
  // L = sum(x W + b): dL/dW[i][j] = sum_r x[r][i], dL/db = rows, dL/dx = rowsum(W).
  Tape tape;
  Var x = tape.variable(Tensor::matrix({{1, 2}, {3, 4}}));
  Var w = tape.variable(Tensor::matrix({{0.5, -1, 2}, {1, 0, -0.5}}));
  Var b = tape.variable(Tensor::vector({0.1, 0.2, 0.3}));
  Var loss = ad::sum_all(ad::matmul(x, w) + b);
  tape.backward(loss);
  EXPECT_EQ(tape.grad(w), Tensor::matrix({{4, 4, 4}, {6, 6, 6}}));
  EXPECT_EQ(tape.grad(b), Tensor::vector({2, 2, 2}));
  EXPECT_EQ(tape.grad(x), Tensor::matrix({{1.5, 0.5}, {1.5, 0.5}}));
}

TEST(Autodiff, ReusedNodeAccumulatesGradient) {
  // L = x * x + x at x = 3: dL/dx = 2x + 1 = 7.
  Tape tape;
  Var x = tape.variable(Tensor::vector({3}));
  tape.backward(ad::sum_all(x * x + x));
  EXPECT_DOUBLE_EQ(tape.grad(x)[0], 7.0);
}

TEST(Autodiff, BackwardRejectsNonScalarAndUntrackedLoss) {
  Tape tape;
  Var x = tape.variable(Tensor::vector({1, 2}));
  EXPECT_THROW(tape.backward(x), ShapeError);
  Var c = tape.constant(Tensor::scalar(1.0));
  EXPECT_THROW(tape.backward(c), std::logic_error);
}

TEST(Autodiff, ShapeErrorsNameTheOp) {
  Tape tape;
  Var a = tape.variable(Tensor(Shape{2, 3}));
  Var b = tape.variable(Tensor(Shape{2, 3}));
  try {
    ad::matmul(a, b);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("matmul"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("[2, 3]"), std::string::npos);
  }
  EXPECT_THROW(ad::add(a, tape.variable(Tensor(Shape{3, 2}))), ShapeError);
}

TEST(Autodiff, SoftmaxKnownValues) {
  Tape tape;
  Var p = ad::softmax(tape.constant(Tensor::vector({0, std::log(2.0), std::log(4.0)})), 0);
  EXPECT_NEAR(p.value()[0], 1.0 / 7.0, 1e-15);
  EXPECT_NEAR(p.value()[1], 2.0 / 7.0, 1e-15);
  EXPECT_NEAR(p.value()[2], 4.0 / 7.0, 1e-15);
  // Large logits stay finite.
  Var q = ad::softmax(tape.constant(Tensor::vector({1000, 1000})), 0);
  EXPECT_DOUBLE_EQ(q.value()[0], 0.5);
}

TEST(Autodiff, MaskedSoftmaxZeroesMaskedEntries) {
  Tape tape;
  Tensor mask = Tensor::matrix({{1, 0, 1}, {0, 1, 0}});
  Var x = tape.variable(Tensor::matrix({{0, 5, 0}, {1, 2, 3}}));
  Var p = ad::masked_softmax(x, mask);
  EXPECT_EQ(p.value().at(0, 1), 0.0);
  EXPECT_DOUBLE_EQ(p.value().at(0, 0), 0.5);
  EXPECT_DOUBLE_EQ(p.value().at(1, 1), 1.0);
  tape.backward(ad::sum_all(ad::mul(p, tape.constant(Tensor::matrix({{1, 2, 3}, {4, 5, 6}})))));
  EXPECT_EQ(tape.grad(x).at(0, 1), 0.0);
  EXPECT_EQ(tape.grad(x).at(1, 0), 0.0);
  EXPECT_THROW(ad::masked_softmax(x, Tensor::matrix({{1, 0, 0}, {0, 0, 0}})), std::invalid_argument);
}

TEST(Autodiff, InferenceTapeStoresNoClosures) {
  Tape tape(Tape::Options{.track_gradients = false});
  Var x = tape.variable(Tensor::vector({1, 2}));
  Var y = ad::sum_all(ad::exp(x));
  EXPECT_NEAR(y.value().item(), std::exp(1.0) + std::exp(2.0), 1e-12);
  EXPECT_THROW(tape.backward(y), std::logic_error);
}

TEST(Autodiff, VerifyFiniteFlagsNaN) {
  Tape tape(Tape::Options{.track_gradients = true, .verify_finite = true});
  Var x = tape.variable(Tensor::vector({-1.0}));
  EXPECT_THROW(ad::log(x), NumericError);
}

// Finite-difference oracle for every primitive, rel <= 1e-6.
struct OpCase {
  const char* name;
  Shape shape;
  testing::UnaryGraph graph;
  double lo = -1.0;
  double hi = 1.0;
};

class PrimitiveGradient : public ::testing::TestWithParam<OpCase> {};

TEST_P(PrimitiveGradient, MatchesCentralDifferences) {
  const OpCase& c = GetParam();
  Rng rng(5);
  const Tensor x = random_tensor(c.shape, rng, c.lo, c.hi);
  const auto r = probe_gradient(c.graph, x);
  EXPECT_LE(max_relative_error(r.analytic, r.numeric), 1e-6) << c.name;
}

Tensor fixed(Shape shape, std::uint64_t seed) {
  Rng rng(seed);
  return random_tensor(std::move(shape), rng);
}

std::vector<OpCase> primitive_cases() {
  const Tensor w = fixed({3, 4}, 1);
  const Tensor bias = fixed({3}, 2);
  const Tensor rowv = fixed({3}, 3);
  const Tensor other = fixed({2, 3}, 4);
  const Tensor scale = fixed({2}, 6);
  const Tensor mask = Tensor::matrix({{1, 0, 1}, {0, 1, 1}});
  return {
      {"matmul_left", {2, 3}, [w](Tape& t, Var x) { return ad::matmul(x, t.constant(w)); }},
      {"matmul_right", {3, 4}, [other](Tape& t, Var x) { return ad::matmul(t.constant(other), x); }},
      {"matmul_vector", {3}, [w](Tape& t, Var x) { return ad::matmul(x, t.constant(w)); }},
      {"matvec", {3}, [other](Tape& t, Var x) { return ad::matmul(t.constant(other), x); }},
      {"transpose", {2, 3}, [](Tape&, Var x) { return ad::transpose(x); }},
      {"add_same", {2, 3}, [other](Tape& t, Var x) { return ad::add(t.constant(other), x); }},
      {"add_bias", {3}, [other](Tape& t, Var x) { return ad::add(t.constant(other), x); }},
      {"sub", {2, 3}, [other](Tape& t, Var x) { return ad::sub(t.constant(other), x); }},
      {"mul_same", {2, 3}, [other](Tape& t, Var x) { return ad::mul(x, t.constant(other)); }},
      {"mul_row", {3}, [other](Tape& t, Var x) { return ad::mul(t.constant(other), x); }},
      {"mul_self", {2, 3}, [](Tape&, Var x) { return ad::mul(x, x); }},
      {"scale_rows_a", {2, 3}, [scale](Tape& t, Var x) { return ad::scale_rows(x, t.constant(scale)); }},
      {"scale_rows_s", {2}, [other](Tape& t, Var x) { return ad::scale_rows(t.constant(other), x); }},
      {"neg", {2, 3}, [](Tape&, Var x) { return ad::neg(x); }},
      {"add_scalar", {3}, [](Tape&, Var x) { return ad::add_scalar(x, 2.5); }},
      {"mul_scalar", {3}, [](Tape&, Var x) { return ad::mul_scalar(x, -1.5); }},
      {"pow_scalar", {3}, [](Tape&, Var x) { return ad::pow_scalar(x, 2.0); }},
      {"pow_fractional", {3}, [](Tape&, Var x) { return ad::pow_scalar(x, 1.5); }, 0.2, 2.0},
      {"exp", {2, 3}, [](Tape&, Var x) { return ad::exp(x); }},
      {"log", {2, 3}, [](Tape&, Var x) { return ad::log(x); }, 0.2, 2.0},
      {"sigmoid", {2, 3}, [](Tape&, Var x) { return ad::sigmoid(x); }, -4.0, 4.0},
      {"tanh", {2, 3}, [](Tape&, Var x) { return ad::tanh(x); }},
      {"relu", {2, 3}, [](Tape&, Var x) { return ad::relu(x); }},
      {"concat0", {2, 3}, [other](Tape& t, Var x) { return ad::concat({x, t.constant(other), x}, 0); }},
      {"concat1", {2, 3}, [other](Tape& t, Var x) { return ad::concat({t.constant(other), x}, 1); }},
      {"concat_vec", {3}, [rowv](Tape& t, Var x) { return ad::concat({x, t.constant(rowv)}, 0); }},
      {"sum0", {2, 3}, [](Tape&, Var x) { return ad::sum(x, 0); }},
      {"sum1", {2, 3}, [](Tape&, Var x) { return ad::sum(x, 1); }},
      {"mean0", {2, 3}, [](Tape&, Var x) { return ad::mean(x, 0); }},
      {"mean1", {2, 3}, [](Tape&, Var x) { return ad::mean(x, 1); }},
      {"sum_all", {2, 3}, [](Tape&, Var x) { return ad::sum_all(x); }},
      {"mean_all", {2, 3}, [](Tape&, Var x) { return ad::mean_all(x); }},
      {"softmax_vec", {4}, [](Tape&, Var x) { return ad::softmax(x, 0); }},
      {"softmax_rows", {2, 3}, [](Tape&, Var x) { return ad::softmax(x, 1); }},
      {"softmax_cols", {2, 3}, [](Tape&, Var x) { return ad::softmax(x, 0); }},
      {"masked_softmax", {2, 3}, [mask](Tape&, Var x) { return ad::masked_softmax(x, mask); }},
      {"row_select", {3, 2}, [](Tape&, Var x) {
         const std::size_t idx[] = {2, 0, 2};
         return ad::row_select(x, idx);
       }},
      {"row_select_vec", {3}, [](Tape&, Var x) {
         const std::size_t idx[] = {1, 1};
         return ad::row_select(x, idx);
       }},
      {"scatter_add", {3, 2}, [](Tape&, Var x) {
         const std::size_t idx[] = {1, 0, 1};
         return ad::scatter_add(x, idx, 3);
       }},
      {"reshape", {2, 3}, [](Tape&, Var x) { return ad::reshape(x, {3, 2}); }},
  };
}

INSTANTIATE_TEST_SUITE_P(AllOps, PrimitiveGradient, ::testing::ValuesIn(primitive_cases()),
                         [](const ::testing::TestParamInfo<OpCase>& info) { return std::string(info.param.name); });

}  // namespace
}  // namespace dualkg

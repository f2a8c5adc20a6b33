#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "pnnunet/adam.hpp"
#include "pnnunet/ops.hpp"
#include "pnnunet/selftest/gradcheck.hpp"

using namespace pnn;
using selftest::LossBuilder;

namespace {

Tensor<double> random_tensor(Shape shape, Rng& rng, double lo = -1, double hi = 1) {
  Tensor<double> t(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

Tensor<double> from_values(Shape shape, std::vector<double> values) {
  return Tensor<double>(std::move(shape), Eigen::Map<Eigen::ArrayXd>(values.data(), static_cast<Index>(values.size())));
}

double dot(const Tensor<double>& a, const Tensor<double>& b) { return (a.array() * b.array()).sum(); }

// Gradient of <op(x), y> with respect to x, i.e. the adjoint applied to y.
template <typename Op>
Tensor<double> adjoint_apply(const Tensor<double>& x, const Tensor<double>& y, Op op) {
  Parameter<double> px(x.shape(), 1);
  px.value = x;
  Tape<double> tape;
  Var out = op(tape, tape.parameter(px));
  tape.backward(weighted_sum(tape, out, y));
  return px.grad;
}

}  // namespace

TEST(Conv2d, OneByOneKernelByHand) {
  Tape<double> tape;
  Var x = tape.constant(from_values({1, 1, 2, 2}, {1, 2, 3, 4}));
  Var w = tape.constant(from_values({1, 1, 1, 1}, {2}));
  Var b = tape.constant(from_values({1}, {1}));
  const Tensor<double>& y = tape.value(conv2d(tape, x, w, b, 1, 0));
  ASSERT_EQ(y.shape(), (Shape{1, 1, 2, 2}));
  EXPECT_DOUBLE_EQ(y[0], 3);
  EXPECT_DOUBLE_EQ(y[1], 5);
  EXPECT_DOUBLE_EQ(y[2], 7);
  EXPECT_DOUBLE_EQ(y[3], 9);
}

TEST(Conv2d, CenterKernelIsIdentity) {
  Rng rng(3);
  Tensor<double> input = random_tensor({2, 1, 5, 7}, rng);
  Tensor<double> kernel({1, 1, 3, 3});
  kernel.at(0, 0, 1, 1) = 1;
  Tape<double> tape;
  Var y = conv2d(tape, tape.constant(input), tape.constant(kernel), tape.constant(Tensor<double>({1})), 1, 1);
  EXPECT_EQ(tape.value(y).shape(), input.shape());
  EXPECT_TRUE(tape.value(y).array().isApprox(input.array(), 0.0));
}

TEST(Conv2d, ShapeArithmetic) {
  Tape<float> tape;
  Var x = tape.constant(Tensor<float>({1, 1, 64, 64}));
  Var w = tape.constant(Tensor<float>({64, 1, 3, 3}));
  Var b = tape.constant(Tensor<float>({64}));
  EXPECT_EQ(tape.value(conv2d(tape, x, w, b, 1, 1)).shape(), (Shape{1, 64, 64, 64}));
  EXPECT_EQ(tape.value(conv2d(tape, x, w, b, 2, 1)).shape(), (Shape{1, 64, 32, 32}));
  EXPECT_EQ(tape.value(conv2d(tape, x, w, b, 1, 0)).shape(), (Shape{1, 64, 62, 62}));
}

TEST(Conv2d, Errors) {
  Tape<double> tape;
  Var x = tape.constant(Tensor<double>({1, 2, 4, 4}));
  Var w = tape.constant(Tensor<double>({3, 1, 3, 3}));
  Var b = tape.constant(Tensor<double>({3}));
  EXPECT_THROW(conv2d(tape, x, w, b, 1, 1), ShapeError);
  Var w2 = tape.constant(Tensor<double>({3, 2, 3, 3}));
  EXPECT_THROW(conv2d(tape, x, w2, b, 0, 1), ConfigError);
  Var tiny = tape.constant(Tensor<double>({1, 2, 1, 1}));
  EXPECT_THROW(conv2d(tape, tiny, w2, b, 1, 0), ShapeError);
}

TEST(ConvTranspose2d, SingleValueScatter) {
  Tape<double> tape;
  Var x = tape.constant(from_values({1, 1, 1, 1}, {2.5}));
  Var w = tape.constant(Tensor<double>::constant({1, 1, 2, 2}, 1.0));
  Var b = tape.constant(Tensor<double>({1}));
  const Tensor<double>& y = tape.value(conv_transpose2d(tape, x, w, b, 2));
  ASSERT_EQ(y.shape(), (Shape{1, 1, 2, 2}));
  for (Index i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(y[i], 2.5);
}

TEST(ConvTranspose2d, ShapeAndZeroInput) {
  Tape<float> tape;
  Var x = tape.constant(Tensor<float>({1, 1024, 4, 4}));
  Var w = tape.constant(Tensor<float>::constant({1024, 512, 2, 2}, 0.5f));
  Var b = tape.constant(Tensor<float>::constant({512}, 0.25f));
  const Tensor<float>& y = tape.value(conv_transpose2d(tape, x, w, b, 2));
  EXPECT_EQ(y.shape(), (Shape{1, 512, 8, 8}));
  EXPECT_TRUE((y.array() == 0.25f).all());
}

TEST(ConvTranspose2d, RejectsUnsupportedGeometry) {
  Tape<double> tape;
  Var x = tape.constant(Tensor<double>({1, 1, 2, 2}));
  Var b = tape.constant(Tensor<double>({1}));
  EXPECT_THROW(conv_transpose2d(tape, x, tape.constant(Tensor<double>({1, 1, 3, 3})), b, 2), ConfigError);
  EXPECT_THROW(conv_transpose2d(tape, x, tape.constant(Tensor<double>({1, 1, 2, 2})), b, 1), ConfigError);
}

TEST(MaxPool, WindowMaxAndShape) {
  Tape<double> tape;
  Var x = tape.constant(from_values({1, 1, 2, 2}, {1, 2, 3, 4}));
  EXPECT_DOUBLE_EQ(tape.value(maxpool2d(tape, x))[0], 4);
  Var big = tape.constant(Tensor<double>({1, 64, 64, 64}));
  EXPECT_EQ(tape.value(maxpool2d(tape, big)).shape(), (Shape{1, 64, 32, 32}));
  Var odd = tape.constant(Tensor<double>({1, 1, 3, 4}));
  EXPECT_THROW(maxpool2d(tape, odd), ShapeError);
}

TEST(MaxPool, TiesRouteToFirstElement) {
  Parameter<double> p({1, 2, 4, 4}, 1);
  p.value = Tensor<double>::constant({1, 2, 4, 4}, 7.0);
  Tape<double> tape;
  Var y = maxpool2d(tape, tape.parameter(p));
  EXPECT_TRUE((tape.value(y).array() == 7.0).all());
  tape.backward(sum(tape, y));
  for (Index c = 0; c < 2; ++c)
    for (Index y0 = 0; y0 < 4; y0 += 2)
      for (Index x0 = 0; x0 < 4; x0 += 2) {
        EXPECT_EQ(p.grad.at(0, c, y0, x0), 1.0);
        EXPECT_EQ(p.grad.at(0, c, y0 + 1, x0) + p.grad.at(0, c, y0, x0 + 1) + p.grad.at(0, c, y0 + 1, x0 + 1), 0.0);
      }
}

TEST(LeakyRelu, Values) {
  Tape<double> tape;
  const Tensor<double>& y = tape.value(leaky_relu(tape, tape.constant(from_values({3}, {5, -2, 0})), 0.01));
  EXPECT_DOUBLE_EQ(y[0], 5);
  EXPECT_DOUBLE_EQ(y[1], -0.02);
  EXPECT_DOUBLE_EQ(y[2], 0);
  EXPECT_THROW(leaky_relu(tape, tape.constant(from_values({1}, {1})), 1.0), ConfigError);
}

TEST(Concat, LayoutAndEmptyOperand) {
  Rng rng(5);
  Tensor<double> a = random_tensor({2, 3, 4, 4}, rng), b = random_tensor({2, 2, 4, 4}, rng);
  Tape<double> tape;
  const Tensor<double>& y = tape.value(concat_channels(tape, tape.constant(a), tape.constant(b)));
  ASSERT_EQ(y.shape(), (Shape{2, 5, 4, 4}));
  for (Index n = 0; n < 2; ++n)
    for (Index k = 0; k < 2; ++k)
      for (Index i = 0; i < 4; ++i)
        for (Index j = 0; j < 4; ++j) EXPECT_EQ(y.at(n, 3 + k, i, j), b.at(n, k, i, j));
  const Tensor<double>& same = tape.value(concat_channels(tape, tape.constant(a), tape.constant(Tensor<double>({2, 0, 4, 4}))));
  EXPECT_TRUE(same.array().isApprox(a.array(), 0.0));
  EXPECT_EQ(tape.value(concat_channels(tape, tape.constant(Tensor<double>({1, 512, 8, 8})),
                                       tape.constant(Tensor<double>({1, 512, 8, 8}))))
                .shape(),
            (Shape{1, 1024, 8, 8}));
  EXPECT_THROW(concat_channels(tape, tape.constant(a), tape.constant(Tensor<double>({2, 2, 4, 2}))), ShapeError);
}

TEST(SoftmaxCrossEntropy, UniformAndSaturated) {
  Tape<double> tape;
  LabelBatch labels(1, 2, 2);
  labels.at(0, 0, 1) = 2;
  labels.at(0, 1, 0) = 1;
  Var uniform = tape.constant(Tensor<double>::constant({1, 3, 2, 2}, 0.3));
  EXPECT_NEAR(tape.value(softmax_cross_entropy(tape, uniform, labels, 3))[0], std::log(3.0), 1e-12);

  Tensor<double> sharp({1, 3, 2, 2});
  for (Index y = 0; y < 2; ++y)
    for (Index x = 0; x < 2; ++x) sharp.at(0, labels.at(0, y, x), y, x) = 1000;
  EXPECT_NEAR(tape.value(softmax_cross_entropy(tape, tape.constant(sharp), labels, 3))[0], 0.0, 1e-12);
}

TEST(SoftmaxCrossEntropy, LabelErrors) {
  Tape<double> tape;
  Var logits = tape.constant(Tensor<double>({1, 3, 2, 2}));
  LabelBatch bad(1, 2, 2);
  bad.at(0, 1, 1) = 3;
  EXPECT_THROW(softmax_cross_entropy(tape, logits, bad, 3), LabelError);
  bad.at(0, 1, 1) = -1;
  EXPECT_THROW(softmax_cross_entropy(tape, logits, bad, 3), LabelError);
  EXPECT_THROW(softmax_cross_entropy(tape, logits, LabelBatch(1, 2, 2), 2), ShapeError);
}

TEST(SoftmaxCrossEntropy, GradientMatchesFiniteDifferences) {
  Rng rng(11);
  ParameterStore<double> store;
  store.add("logits", {1, 3, 2, 2}, 1);
  selftest::randomize(store, rng, -2, 2);
  LabelBatch labels(1, 2, 2);
  for (int& l : labels.labels) l = static_cast<int>(rng.below(3));
  LossBuilder loss = [&](Tape<double>& t, ParameterStore<double>& s) {
    return softmax_cross_entropy(t, t.parameter(s.at("logits")), labels, 3);
  };
  EXPECT_LT(selftest::elementwise_check(store, loss).rel_error, 1e-4);
}

TEST(Softmax, SimplexProperty) {
  Rng rng(2);
  Tape<double> tape;
  const Tensor<double>& p = tape.value(softmax(tape, tape.constant(random_tensor({2, 3, 5, 5}, rng, -30, 30))));
  for (Index n = 0; n < 2; ++n)
    for (Index y = 0; y < 5; ++y)
      for (Index x = 0; x < 5; ++x) {
        double total = 0;
        for (Index c = 0; c < 3; ++c) {
          EXPECT_GE(p.at(n, c, y, x), 0.0);
          EXPECT_LE(p.at(n, c, y, x), 1.0);
          total += p.at(n, c, y, x);
        }
        EXPECT_NEAR(total, 1.0, 1e-6);
      }
}

TEST(Backward, SumGivesOnes) {
  Parameter<double> p({2, 3}, 1);
  Tape<double> tape;
  tape.backward(sum(tape, tape.parameter(p)));
  EXPECT_TRUE((p.grad.array() == 1.0).all());
}

TEST(Backward, ConvBiasGradientCountsPositions) {
  Rng rng(9);
  ParameterStore<double> store;
  store.add("w", {4, 2, 3, 3}, 18);
  store.add("b", {4}, 1);
  selftest::randomize(store, rng);
  Tensor<double> x = random_tensor({3, 2, 6, 5}, rng);
  Tape<double> tape;
  Var y = conv2d(tape, tape.constant(x), tape.parameter(store.at("w")), tape.parameter(store.at("b")), 1, 0);
  tape.backward(sum(tape, y));
  // 3 samples x 4 x 3 output positions per channel.
  for (Index o = 0; o < 4; ++o) EXPECT_DOUBLE_EQ(store.at("b").grad[o], 36.0);
}

TEST(Backward, UnreachableParameterStaysZeroAndErrors) {
  Parameter<double> used({2}, 1), unused({2}, 1);
  unused.grad.array().setConstant(0);
  Tape<double> tape;
  Var u = tape.parameter(used);
  tape.parameter(unused);
  tape.backward(sum(tape, u));
  EXPECT_TRUE((unused.grad.array() == 0).all());
  EXPECT_THROW(tape.backward(Var{}), TapeError);

  Tape<double> other;
  Var c = other.constant(Tensor<double>({1}));
  EXPECT_THROW(tape.backward(c), TapeError);
  EXPECT_THROW(other.backward(c), TapeError);
}

TEST(Backward, EveryPrimitiveMatchesFiniteDifferences) {
  Rng rng(21);
  ParameterStore<double> store;
  store.add("x", {2, 2, 4, 4}, 1);
  store.add("w", {3, 2, 3, 3}, 18);
  store.add("b", {3}, 1);
  store.add("wt", {3, 2, 2, 2}, 12);
  store.add("bt", {2}, 1);
  store.add("s", {2, 2, 4, 4}, 1);
  selftest::randomize(store, rng);
  Tensor<double> proj = random_tensor({2, 3, 8, 8}, rng);
  LabelBatch labels(2, 8, 8);
  for (int& l : labels.labels) l = static_cast<int>(rng.below(3));
  Tensor<double> ref = random_tensor({2, 2, 4, 4}, rng);
  Tensor<double> proj_conv = random_tensor({2, 3, 4, 4}, rng), head_w = random_tensor({3, 2, 1, 1}, rng);
  Tensor<double> proj_pool = random_tensor({2, 2, 2, 2}, rng), proj_cat = random_tensor({2, 4, 4, 4}, rng);

  auto P = [](Tape<double>& t, ParameterStore<double>& s, const char* n) { return t.parameter(s.at(n)); };
  std::vector<std::pair<std::string, LossBuilder>> cases = {
      {"conv2d", [&](Tape<double>& t, ParameterStore<double>& s) {
         return weighted_sum(t, conv2d(t, P(t, s, "x"), P(t, s, "w"), P(t, s, "b"), 1, 1),
                             proj_conv);
       }},
      {"conv2d_stride2", [&](Tape<double>& t, ParameterStore<double>& s) {
         return sum(t, conv2d(t, P(t, s, "x"), P(t, s, "w"), P(t, s, "b"), 2, 1));
       }},
      {"conv_transpose2d", [&](Tape<double>& t, ParameterStore<double>& s) {
         Var up = conv_transpose2d(t, conv2d(t, P(t, s, "x"), P(t, s, "w"), P(t, s, "b"), 1, 1), P(t, s, "wt"),
                                   P(t, s, "bt"), 2);
         Var head = conv2d(t, up, t.constant(head_w),
                           t.constant(Tensor<double>({3})), 1, 0);
         return weighted_sum(t, head, proj);
       }},
      {"maxpool_leaky", [&](Tape<double>& t, ParameterStore<double>& s) {
         return weighted_sum(t, leaky_relu(t, maxpool2d(t, P(t, s, "x")), 0.01),
                             proj_pool);
       }},
      {"concat", [&](Tape<double>& t, ParameterStore<double>& s) {
         return weighted_sum(t, concat_channels(t, P(t, s, "x"), P(t, s, "s")),
                             proj_cat);
       }},
      {"softmax_vote_nll", [&](Tape<double>& t, ParameterStore<double>& s) {
         Var a = softmax(t, conv2d(t, P(t, s, "x"), P(t, s, "w"), P(t, s, "b"), 1, 1));
         Var b = softmax(t, conv2d(t, P(t, s, "s"), P(t, s, "w"), P(t, s, "b"), 1, 1));
         std::vector<Var> members{a, b};
         LabelBatch small(2, 4, 4);
         for (std::size_t i = 0; i < small.labels.size(); ++i) small.labels[i] = labels.labels[i];
         return nll_from_probs(t, mean_of<double>(t, members), small);
       }},
      {"mse_add_scaled", [&](Tape<double>& t, ParameterStore<double>& s) {
         Var e = mse(t, P(t, s, "x"), ref);
         return add_scaled(t, sum(t, P(t, s, "s")), e, 0.7);
       }},
  };
  for (auto& [name, loss] : cases) {
    const auto r = selftest::elementwise_check(store, loss);
    EXPECT_LT(r.rel_error, 1e-4) << name << " analytic " << r.analytic << " numeric " << r.numeric;
  }
}

TEST(Adjoint, LinearPrimitivesSatisfyInnerProductIdentity) {
  Rng rng(77);
  Tensor<double> w = random_tensor({3, 2, 3, 3}, rng);
  Tensor<double> zero3({3}), zero2({2});
  auto conv = [&](Tape<double>& t, Var x) { return conv2d(t, x, t.constant(w), t.constant(zero3), 1, 1); };
  Tensor<double> x = random_tensor({2, 2, 5, 6}, rng), y = random_tensor({2, 3, 5, 6}, rng);
  Tape<double> t1;
  const double lhs = dot(t1.value(conv(t1, t1.constant(x))), y);
  EXPECT_NEAR(lhs, dot(x, adjoint_apply(x, y, conv)), 1e-9);

  Tensor<double> wt = random_tensor({3, 2, 2, 2}, rng);
  auto up = [&](Tape<double>& t, Var v) { return conv_transpose2d(t, v, t.constant(wt), t.constant(zero2), 2); };
  Tensor<double> xs = random_tensor({2, 3, 3, 4}, rng), ys = random_tensor({2, 2, 6, 8}, rng);
  Tape<double> t2;
  const double lhs2 = dot(t2.value(up(t2, t2.constant(xs))), ys);
  EXPECT_NEAR(lhs2, dot(xs, adjoint_apply(xs, ys, up)), 1e-9);

  // The transposed convolution is the adjoint of conv2d with the same kernel.
  Tape<double> t3;
  const Tensor<double>& down = t3.value(conv2d(t3, t3.constant(ys), t3.constant(wt), t3.constant(zero3), 2, 0));
  EXPECT_NEAR(lhs2, dot(xs, down), 1e-9);

  // With an empty first operand concat is linear in the second.
  Tensor<double> zb({2, 0, 5, 6});
  auto cat0 = [&](Tape<double>& t, Var v) { return concat_channels(t, t.constant(zb), v); };
  Tensor<double> cy2 = random_tensor({2, 2, 5, 6}, rng);
  Tape<double> t5;
  EXPECT_NEAR(dot(t5.value(cat0(t5, t5.constant(x))), cy2), dot(x, adjoint_apply(x, cy2, cat0)), 1e-9);
}

TEST(Determinism, ForwardIsBitIdentical) {
  Rng rng(8);
  Tensor<double> x = random_tensor({2, 2, 8, 8}, rng), w = random_tensor({4, 2, 3, 3}, rng);
  auto run = [&] {
    Tape<double> t;
    Var y = conv2d(t, t.constant(x), t.constant(w), t.constant(Tensor<double>({4})), 1, 1);
    return t.value(softmax(t, maxpool2d(t, leaky_relu(t, y, 0.01))));
  };
  EXPECT_TRUE((run().array() == run().array()).all());
}

TEST(Adam, ZeroGradientLeavesParameters) {
  ParameterStore<double> store;
  store.add("a", {3}, 1).value.array() << 1, -2, 3;
  Adam<double> opt;
  opt.step(store);
  EXPECT_EQ(store.at("a").value[1], -2);
  EXPECT_EQ(opt.steps(), 1);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  ParameterStore<double> store;
  auto& p = store.add("a", {2}, 1);
  p.value.array() << 0.5, 0.5;
  p.grad.array() << 1, -3;
  Adam<double> opt({0.1, 0.9, 0.999, 1e-8});
  opt.step(store);
  // Bias-corrected moments equal g and g^2 after one step: update = lr * g / (|g| + eps).
  EXPECT_NEAR(p.value[0], 0.5 - 0.1, 1e-7);
  EXPECT_NEAR(p.value[1], 0.5 + 0.1, 1e-7);
  EXPECT_TRUE((opt.second_moment("a").array() >= 0).all());
}

TEST(Adam, RejectsNonFiniteGradient) {
  ParameterStore<double> store;
  auto& p = store.add("a", {1}, 1);
  p.grad[0] = std::nan("");
  Adam<double> opt;
  EXPECT_THROW(opt.step(store), NumericError);
  EXPECT_EQ(p.value[0], 0.0);
  EXPECT_THROW(Adam<double>({0.0}), ConfigError);
}

TEST(SoftDice, ValuesAndGradient) {
  LabelBatch labels(1, 2, 2);
  labels.labels = {0, 1, 2, 1};
  Tensor<double> onehot({1, 3, 2, 2});
  for (Index p = 0; p < 4; ++p) onehot.at(0, labels.labels[static_cast<std::size_t>(p)], p / 2, p % 2) = 1;
  Tape<double> tape;
  EXPECT_NEAR(tape.value(soft_dice_loss(tape, tape.constant(onehot), labels))[0], 0.0, 1e-15);
  // Uniform probabilities: class 1 has I = 2/3, U = 4/3 + 2; class 2 has I = 1/3, U = 4/3 + 1.
  Tensor<double> uniform = Tensor<double>::constant({1, 3, 2, 2}, 1.0 / 3);
  const double d1 = (4.0 / 3 + 1) / (10.0 / 3 + 1), d2 = (2.0 / 3 + 1) / (7.0 / 3 + 1);
  EXPECT_NEAR(tape.value(soft_dice_loss(tape, tape.constant(uniform), labels))[0], 1 - (d1 + d2) / 2, 1e-15);

  Rng rng(91);
  ParameterStore<double> store;
  store.add("z", {2, 3, 4, 4}, 1);
  selftest::randomize(store, rng, -2, 2);
  LabelBatch targets(2, 4, 4);
  for (int& l : targets.labels) l = static_cast<int>(rng.below(3));
  const auto r = selftest::elementwise_check(store, [&](Tape<double>& t, ParameterStore<double>& s) {
    return soft_dice_loss(t, softmax(t, t.parameter(s.at("z"))), targets);
  });
  EXPECT_LT(r.rel_error, 1e-4) << r.analytic << " vs " << r.numeric;
}

#include <gtest/gtest.h>

#include <cmath>

#include "glori/glori.hpp"
#include "gradient_suite.hpp"

using namespace glori;

namespace {

Tensor mat(std::size_t r, std::size_t c, std::vector<double> v) { return Tensor({r, c}, std::move(v)); }

}  // namespace

TEST(Matmul, Examples) {
  Tape t;
  Var x = t.constant(mat(2, 3, {1, 2, 3, 4, 5, 6}));
  EXPECT_EQ(matmul(t.constant(mat(2, 2, {1, 0, 0, 1})), x).value(), x.value());
  EXPECT_EQ(matmul(t.constant(mat(2, 2, {1, 2, 3, 4})), t.constant(mat(2, 1, {1, 1}))).value(),
            mat(2, 1, {3, 7}));
  Var z = matmul(t.constant(Tensor({2, 3})), t.constant(mat(3, 4, std::vector<double>(12, 5.0))));
  EXPECT_EQ(z.value(), Tensor({2, 4}));
}

TEST(Matmul, ShapeMismatchThrows) {
  Tape t;
  EXPECT_THROW(matmul(t.constant(Tensor({2, 3})), t.constant(Tensor({2, 3}))), ShapeError);
}

TEST(Linear, Examples) {
  Tape t;
  Var x = t.constant(mat(2, 2, {0.5, -1, 2, 3}));
  EXPECT_EQ(linear(x, t.constant(mat(2, 2, {1, 0, 0, 1})), t.constant(Tensor({2}))).value(), x.value());
  Var y = linear(t.constant(Tensor({3, 2})), t.constant(mat(2, 2, {4, 5, 6, 7})),
                 t.constant(Tensor({2}, {1, 2})));
  EXPECT_EQ(y.value(), mat(3, 2, {1, 2, 1, 2, 1, 2}));
  Var w = linear(t.constant(mat(1, 2, {1, 1})), t.constant(mat(2, 2, {1, 0, 0, 1})),
                 t.constant(Tensor({2}, {1, 1})));
  EXPECT_EQ(w.value(), mat(1, 2, {2, 2}));
}

TEST(Activations, Examples) {
  Tape t;
  EXPECT_EQ(relu(t.constant(Tensor({3}, {-1, 0, 2}))).value(), Tensor({3}, {0, 0, 2}));
  EXPECT_EQ(tanh(t.constant(Tensor({1}, {0.0}))).value()[0], 0.0);
  EXPECT_EQ(exp(t.constant(Tensor({1}, {0.0}))).value()[0], 1.0);
  EXPECT_NEAR(exp(tanh(t.constant(Tensor({1}, {40.0})))).value()[0], 2.718281828, 1e-9);
}

TEST(Activations, ExpOverflowIsNumericError) {
  Tape t;
  EXPECT_THROW(exp(t.constant(Tensor({1}, {800.0}))), NumericError);
}

TEST(Softmax, Examples) {
  Tape t;
  Var s = softmax_with_temperature(t.constant(mat(1, 3, {0, 0, 0})), t.constant(Tensor({1}, 1.0)));
  for (double v : s.value().data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
  Var s2 = softmax_with_temperature(t.constant(mat(1, 2, {std::log(2.0), 0})),
                                    t.constant(Tensor({1}, 0.5)));
  EXPECT_NEAR(s2.value()[0], 0.8, 1e-12);
  EXPECT_NEAR(s2.value()[1], 0.2, 1e-12);
  Var s3 = softmax_with_temperature(t.constant(mat(1, 3, {0.1, 0.3, 0.2})),
                                    t.constant(Tensor({1}, 1e-4)));
  EXPECT_NEAR(s3.value()[1], 1.0, 1e-12);
}

TEST(Softmax, RowsSumToOneAndLargeLogitsAreStable) {
  Tape t;
  Var s = softmax_with_temperature(t.constant(mat(2, 3, {1000, 999, 998, -5, 7, 0.5})),
                                   t.constant(Tensor({2}, {0.4, 2.5})));
  for (std::size_t r = 0; r < 2; ++r) {
    double sum = 0.0;
    for (std::size_t c = 0; c < 3; ++c) sum += s.value().at(r, c);
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
}

TEST(Softmax, NonPositiveTemperatureThrows) {
  Tape t;
  EXPECT_THROW(softmax_with_temperature(t.constant(mat(1, 2, {0, 1})), t.constant(Tensor({1}, 0.0))),
               NumericError);
}

TEST(LayerNorm, Examples) {
  Tape t;
  Var ones = t.constant(Tensor({2}, 1.0));
  Var zeros = t.constant(Tensor({2}, 0.0));
  EXPECT_EQ(layer_norm(t.constant(mat(1, 2, {3, 3})), ones, zeros).value(), mat(1, 2, {0, 0}));
  Var y = layer_norm(t.constant(mat(1, 2, {1, -1})), ones, zeros, 1e-300);
  EXPECT_NEAR(y.value()[0], 1.0, 1e-12);
  EXPECT_NEAR(y.value()[1], -1.0, 1e-12);
  EXPECT_EQ(layer_norm(t.constant(mat(1, 2, {7, 7})), ones, t.constant(Tensor({2}, 5.0))).value(),
            mat(1, 2, {5, 5}));
}

TEST(Pooling, Examples) {
  Tape t;
  Var c = t.constant(Tensor({4, 4, 2}, 3.5));
  EXPECT_EQ(avg_pool2d(c, 2).value(), Tensor({2, 2, 2}, 3.5));
  EXPECT_EQ(avg_pool2d(t.constant(Tensor({2, 2, 1}, {1, 2, 3, 4})), 2).value()[0], 2.5);
  Var x = t.constant(gradsuite::random_tensor({4, 6, 3}, *std::make_unique<std::mt19937_64>(5)));
  EXPECT_EQ(avg_pool2d(x, 1).value(), x.value());
  EXPECT_EQ(upsample_nearest(x, 1).value(), x.value());
  EXPECT_EQ(upsample_nearest(t.constant(Tensor({1, 1, 1}, 9.0)), 3).value(), Tensor({3, 3, 1}, 9.0));
  Var rt = avg_pool2d(upsample_nearest(x, 3), 3);
  for (std::size_t i = 0; i < x.value().size(); ++i) EXPECT_NEAR(rt.value()[i], x.value()[i], 1e-15);
  EXPECT_THROW(avg_pool2d(t.constant(Tensor({3, 4, 1})), 2), ShapeError);
}

TEST(Concat, Examples) {
  Tape t;
  Var a = t.constant(Tensor({2}, {1, 2}));
  EXPECT_EQ(concat({a}, 0).value(), a.value());
  EXPECT_EQ(concat({a, t.constant(Tensor({1}, {3}))}, 0).value(), Tensor({3}, {1, 2, 3}));
  EXPECT_EQ(concat({t.constant(Tensor({2, 3})), t.constant(Tensor({2, 5}))}, 1).shape(), (Shape{2, 8}));
  EXPECT_THROW(concat({t.constant(Tensor({2, 3})), t.constant(Tensor({3, 3}))}, 1), ShapeError);
}

TEST(Bce, Examples) {
  Tape t;
  auto bce = [&](double z, double y) {
    return bce_with_logits(t.constant(Tensor({1}, z)), t.constant(Tensor({1}, y))).value().item();
  };
  EXPECT_NEAR(bce(0, 1), 0.693147, 1e-6);
  EXPECT_NEAR(bce(50, 1), 0.0, 1e-20);
  EXPECT_NEAR(bce(1, 0), 1.313262, 1e-6);
  EXPECT_TRUE(std::isfinite(bce(-800, 1)));
  EXPECT_THROW(bce(0, 0.5), UsageError);
}

TEST(Backward, Examples) {
  Tape t;
  Var x = t.leaf(Tensor({1}, 3.0).set_requires_grad(true));
  t.backward(sum(mul(x, x)));
  EXPECT_EQ(t.grad(x)[0], 6.0);
  Tape t2;
  Var y = t2.leaf(Tensor({1}, 3.0).set_requires_grad(true));
  t2.backward(sum(t2.constant(Tensor({1}, 4.0))));
  EXPECT_EQ(t2.grad(y)[0], 0.0);
}

TEST(Backward, NonScalarLossThrows) {
  Tape t;
  Var x = t.leaf(Tensor({2}, 1.0).set_requires_grad(true));
  EXPECT_THROW(t.backward(x), ShapeError);
}

TEST(Backward, VarsFromAnotherTapeAreRejected) {
  Tape a, b;
  Var x = a.constant(Tensor({1, 1}, 1.0));
  Var y = b.constant(Tensor({1, 1}, 1.0));
  EXPECT_THROW(matmul(x, y), UsageError);
}

TEST(GradCheck, LinearIsExactAndSoftmaxComposite) {
  std::mt19937_64 rng(7);
  const Tensor x = gradsuite::random_tensor({3, 4}, rng);
  const Tensor w = gradsuite::random_tensor({4, 2}, rng);
  const Tensor b = gradsuite::random_tensor({2}, rng);
  const double lin = grad_check([](Tape&, std::span<const Var> v) { return sum(linear(v[0], v[1], v[2])); },
                                {x, w, b});
  EXPECT_LT(lin, 1e-10);
  Tensor tau({3}, {0.5, 1.0, 2.0});
  const double sm = grad_check(
      [](Tape& t, std::span<const Var> v) {
        Var s = softmax_with_temperature(matmul(v[0], v[1]), v[2]);
        return sum(mul(s, t.constant(Tensor({3, 2}, {1, -2, 3, 0.5, -1, 2}))));
      },
      {x, w, tau});
  EXPECT_LT(sm, 1e-6);
}

TEST(GradCheck, EveryOpMatchesCentralDifferences) {
  for (const auto& c : gradsuite::op_cases()) {
    EXPECT_LT(gradsuite::check_case(c, 11), 1e-4) << c.op << " " << gradsuite::shapes_str(c.inputs);
  }
}

TEST(GradCheck, FullGLoRILoss) {
  for (const auto& cfg : gradsuite::loss_configs()) {
    EXPECT_LT(gradsuite::check_glori_loss(cfg), 1e-4) << "heads " << cfg.heads;
  }
}

TEST(Rng, SubstreamsAreDeterministicAndDistinct) {
  Engine a = substream(1, "x", 0), b = substream(1, "x", 0), c = substream(1, "x", 1), d = substream(2, "x", 0);
  const auto va = a();
  EXPECT_EQ(va, b());
  EXPECT_NE(va, c());
  EXPECT_NE(va, d());
}

TEST(Params, DuplicateNameThrows) {
  ParamSet p;
  p.add("w", Tensor({1}));
  EXPECT_THROW(p.add("w", Tensor({1})), UsageError);
  EXPECT_THROW(p["missing"], UsageError);
}

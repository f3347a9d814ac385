// Copyright 2026 The bella Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "bella/numcore/checkpoint.hpp"
#include "bella/numcore/gemm.hpp"
#include "bella/numcore/gradcheck.hpp"
#include "bella/numcore/ops.hpp"
#include "bella/numcore/optim.hpp"
#include "bella/numcore/rng.hpp"
#include "bella/trainer/gradsuite.hpp"

namespace bella::numcore {
namespace {

using F = Tensor<float>;
using D = Tensor<double>;

TEST(Tensor, RejectsZeroDimensionsAndLengthMismatch) {
  EXPECT_THROW(F({2, 0}, {}), ShapeError);
  EXPECT_THROW(F({2, 2}, {1, 2, 3}), ShapeError);
  EXPECT_THROW(F({3}, {1, 2, 3}).item(), ShapeError);
}

TEST(Ops, ShapeMismatchRaises) {
  Tape<float> t;
  EXPECT_THROW(add(t, F({2}, {1, 2}), F({3}, {1, 2, 3})), ShapeError);
  EXPECT_THROW(linear(t, F({1, 3}, {1, 2, 3}), F({2, 2}, {1, 2, 3, 4})), ShapeError);
  EXPECT_THROW(conv2d(t, F({1, 2, 2}, {1, 2, 3, 4}), F({1, 2, 1, 1}, {1, 1}), F({1}, {0}), 1, 0), ShapeError);
}

TEST(Conv2d, IdentityKernel) {
  Tape<float> t(false);
  auto y = conv2d(t, F({1, 1, 1}, {5}), F({1, 1, 1, 1}, {1}), F({1}, {0}), 1, 0);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 1}));
  EXPECT_EQ(y[0], 5.0f);
}

TEST(Conv2d, ZeroInputPassesBias) {
  Tape<float> t(false);
  SplitMix64 rng(3);
  std::vector<float> k(2 * 3 * 3);
  for (auto& v : k) v = static_cast<float>(rng.uniform(-1, 1));
  auto y = conv2d(t, F::zeros({1, 4, 4}), F({2, 1, 3, 3}, k), F({2}, {0.25f, -1.5f}), 1, 1);
  ASSERT_EQ(y.shape(), (Shape{2, 4, 4}));
  for (std::size_t i = 0; i < 16; ++i) {
    EXPECT_EQ(y[i], 0.25f);
    EXPECT_EQ(y[16 + i], -1.5f);
  }
}

TEST(Conv2d, HandCrossCorrelation) {
  Tape<float> t(false);
  auto y = conv2d(t, F({1, 2, 2}, {1, 2, 3, 4}), F({1, 1, 2, 2}, {1, 0, 0, 1}), F({1}, {0}), 1, 0);
  EXPECT_THROW(conv2d(t, F({1, 2, 2}, {1, 2, 3, 4}), F({1, 1, 2, 2}, {1, 0, 0, 1}), F({1}, {0}), 0, 0),
               ShapeError);
  ASSERT_EQ(y.size(), 1u);
  EXPECT_EQ(y[0], 5.0f);
}

TEST(Conv2d, OutputSizeFormula) {
  Tape<float> t(false);
  auto y = conv2d(t, F::zeros({1, 9, 32, 32}), F::zeros({16, 9, 3, 3}), F::zeros({16}), 2, 1);
  EXPECT_EQ(y.shape(), (Shape{1, 16, 16, 16}));
  auto z = conv2d(t, F::zeros({3, 7, 6}), F::zeros({2, 3, 3, 3}), F::zeros({2}), 2, 0);
  EXPECT_EQ(z.shape(), (Shape{2, 3, 2}));
}

TEST(LayerNorm, ConstantRowIsZero) {
  Tape<float> t(false);
  auto y = layer_norm(t, F({3}, {2.5f, 2.5f, 2.5f}), F::full({3}, 1), F::zeros({3}), 1e-5f);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(y[i], 0.0f);
}

TEST(LayerNorm, HandComputation) {
  Tape<double> t(false);
  auto y = layer_norm(t, D({2}, {-1, 1}), D::full({2}, 1), D::zeros({2}), 1e-12);
  EXPECT_NEAR(y[0], -1.0, 1e-9);
  EXPECT_NEAR(y[1], 1.0, 1e-9);
}

TEST(LayerNorm, ZeroGammaGivesBeta) {
  Tape<float> t(false);
  auto y = layer_norm(t, F({2, 3}, {1, 5, -2, 0, 3, 9}), F::zeros({3}), F({3}, {0.5f, -1, 2}), 1e-5f);
  for (std::size_t r = 0; r < 2; ++r) {
    EXPECT_EQ(y[r * 3 + 0], 0.5f);
    EXPECT_EQ(y[r * 3 + 1], -1.0f);
    EXPECT_EQ(y[r * 3 + 2], 2.0f);
  }
}

TEST(CrossEntropy, UniformLogitsGiveLogV) {
  Tape<double> t(false);
  auto l = cross_entropy(t, D::zeros({1, 8}), {3});
  EXPECT_NEAR(l.item(), std::log(8.0), 1e-12);
}

TEST(CrossEntropy, NearOneHot) {
  Tape<double> t(false);
  EXPECT_NEAR(softmax_cross_entropy(t, D({2}, {100, 0}), 0).item(), 0.0, 1e-12);
}

TEST(CrossEntropy, HandSoftmax) {
  Tape<double> t(false);
  EXPECT_NEAR(softmax_cross_entropy(t, D({2}, {1, 2}), 0).item(), std::log(1 + std::exp(1.0)), 1e-12);
  EXPECT_NEAR(std::log(1 + std::exp(1.0)), 1.3133, 1e-4);
  EXPECT_THROW(cross_entropy(t, D::zeros({1, 4}), {4}), std::out_of_range);
}

TEST(Autodiff, BilinearForm) {
  Tape<double> t;
  D x({3}, {1, -2, 3}, true), y({3}, {4, 5, -6}, true);
  auto f = sum(t, mul(t, x, y));
  t.backward(f);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(x.grad()[i], y[i]);
    EXPECT_EQ(y.grad()[i], x[i]);
  }
}

TEST(Autodiff, HandChainRule) {
  Tape<double> t;
  D w1({1}, {2}, true), w2({1}, {3}, true), x({1}, {5});
  auto f = sum(t, mul(t, w2, mul(t, w1, x)));
  EXPECT_EQ(f.item(), 30.0);
  t.backward(f);
  EXPECT_EQ(w1.grad()[0], 15.0);
  EXPECT_EQ(w2.grad()[0], 10.0);
  EXPECT_FALSE(x.has_grad());
}

TEST(Autodiff, FrozenParameterGetsNoGradient) {
  Tape<float> t;
  F w({2, 2}, {1, 2, 3, 4}, false), b({2}, {0, 0}, true);
  auto y = sum(t, linear(t, F({1, 2}, {1, 1}), w, b));
  t.backward(y);
  EXPECT_FALSE(w.has_grad());
  EXPECT_TRUE(b.has_grad());
}

TEST(Autodiff, NoTapeRecordingWhenDisabled) {
  Tape<float> t(false);
  F w({2}, {1, 2}, true);
  auto y = sum(t, mul(t, w, w));
  EXPECT_EQ(t.size(), 0u);
  EXPECT_FALSE(y.requires_grad());
}

TEST(AdamW, FirstStepMagnitudeIsLearningRate) {
  F p({3}, {1, -2, 0.5f}, true);
  AdamW<float> opt;
  opt.add_group("g", {{"p", p}}, {1e-3, 0.0, 0.9, 0.999, 1e-8});
  auto g = p.grad_buffer();
  g[0] = 0.3f, g[1] = -7.0f, g[2] = 1e-3f;
  opt.step();
  EXPECT_NEAR(p[0], 1 - 1e-3, 1e-6);
  EXPECT_NEAR(p[1], -2 + 1e-3, 1e-6);
  EXPECT_NEAR(p[2], 0.5 - 1e-3, 1e-6);
  EXPECT_FALSE(p.has_grad());
}

TEST(AdamW, ZeroGradientNoDecayLeavesParameter) {
  F p({2}, {1.5f, -3}, true);
  AdamW<float> opt;
  opt.add_group("g", {{"p", p}}, {1e-2, 0.0, 0.9, 0.999, 1e-8});
  for (int i = 0; i < 5; ++i) opt.step();
  EXPECT_EQ(p[0], 1.5f);
  EXPECT_EQ(p[1], -3.0f);
}

TEST(AdamW, DecoupledDecayScalesParameter) {
  D p({1}, {2.0}, true);
  AdamW<double> opt;
  opt.add_group("g", {{"p", p}}, {0.1, 0.5, 0.9, 0.999, 1e-8});
  for (int i = 0; i < 3; ++i) opt.step();
  EXPECT_NEAR(p[0], 2.0 * std::pow(1 - 0.1 * 0.5, 3), 1e-12);
}

TEST(AdamW, RejectsFrozenAndDuplicateParameters) {
  AdamW<float> opt;
  F frozen({1}, {1}, false), live({1}, {1}, true);
  EXPECT_THROW(opt.add_group("g", {{"f", frozen}}, {}), std::invalid_argument);
  opt.add_group("g", {{"a", live}}, {});
  EXPECT_THROW(opt.add_group("h", {{"a", live}}, {}), std::invalid_argument);
  EXPECT_EQ(opt.parameter_names(), (std::set<std::string>{"a"}));
}

TEST(GradCheck, QuadraticIsExact) {
  SplitMix64 rng(11);
  std::vector<double> v(20);
  for (auto& x : v) x = rng.uniform(-1, 1);
  D x({20}, v);
  const auto r = grad_check([&](Tape<double>& t) { return sum(t, mul(t, x, x)); }, {x});
  EXPECT_LT(r.max_relative_error, 1e-6);
  EXPECT_EQ(r.elements, 20u);
}

TEST(GradCheck, LinearCrossEntropyComposite) {
  SplitMix64 rng(12);
  auto rnd = [&](Shape s) {
    std::vector<double> v(shape_numel(s));
    for (auto& x : v) x = rng.uniform(-1, 1);
    return D(s, v);
  };
  auto x = rnd({4, 6}), w = rnd({5, 6}), b = rnd({5});
  const auto r = grad_check([&](Tape<double>& t) { return cross_entropy(t, linear(t, x, w, b), {0, 4, 2, 2}); },
                            {x, w, b});
  EXPECT_LT(r.max_relative_error, 1e-4);
}

TEST(GradCheck, ConstantObjective) {
  D x({3}, {1, 2, 3});
  const auto r = grad_check([](Tape<double>&) { return D({1}, {4.0}); }, {x});
  EXPECT_EQ(r.max_abs_analytic, 0.0);
  EXPECT_EQ(r.max_relative_error, 0.0);
}

TEST(GradCheck, EveryOperatorAcrossSeedsAndShapes) {
  trainer::GradSuiteConfig cfg;
  const auto rows = trainer::run_gradcheck_suite(cfg);
  EXPECT_EQ(rows.size(), trainer::gradcheck_ops().size());
  for (const auto& r : rows) {
    EXPECT_TRUE(r.passed) << r.op << " " << r.max_relative_error;
    EXPECT_GE(r.seeds, 10);
    EXPECT_GE(r.shapes, 3);
  }
}

TEST(Gemm, MatchesNaiveProduct) {
  SplitMix64 rng(5);
  const std::size_t m = 7, n = 5, k = 9;
  std::vector<float> a(m * k), b(k * n), c(m * n, 1.0f);
  for (auto& v : a) v = static_cast<float>(rng.uniform(-1, 1));
  for (auto& v : b) v = static_cast<float>(rng.uniform(-1, 1));
  gemm::nn(a.data(), b.data(), c.data(), m, n, k, true);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double ref = 1.0;
      for (std::size_t p = 0; p < k; ++p) ref += double(a[i * k + p]) * b[p * n + j];
      EXPECT_NEAR(c[i * n + j], ref, 1e-5);
    }
}

TEST(Rng, DeterministicAndInRange) {
  SplitMix64 a(42), b(42);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next(), b.next());
  SplitMix64 c(1);
  for (int i = 0; i < 1000; ++i) {
    const double u = c.uniform();
    EXPECT_GE(u, 0.0);
    EXPECT_LT(u, 1.0);
    EXPECT_LT(c.below(7), 7u);
  }
  EXPECT_NE(SplitMix64::derive(1, 2), SplitMix64::derive(1, 3));
}

TEST(Checkpoint, RoundTripIsBitExact) {
  TensorMap m;
  m["a/x"] = F({2, 3}, {1, -2, 3.5f, 0, 1e-30f, -0.0f});
  m["b"] = F({1}, {7});
  const auto bytes = encode_checkpoint(m);
  const auto back = decode_checkpoint(bytes);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(encode_checkpoint(back), bytes);
  EXPECT_EQ(checksum(back), checksum(m));
  EXPECT_EQ(with_prefix(m, "a/").size(), 1u);
  const auto path = std::filesystem::temp_directory_path() / "bella_ckpt_test.bin";
  save_checkpoint(path, m);
  EXPECT_EQ(checksum(load_checkpoint(path)), checksum(m));
  std::filesystem::remove(path);
}

TEST(Checkpoint, RejectsCorruptInput) {
  TensorMap m;
  m["a"] = F({2}, {1, 2});
  auto bytes = encode_checkpoint(m);
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(decode_checkpoint(bad_magic), CheckpointError);
  bytes.pop_back();
  EXPECT_THROW(decode_checkpoint(bytes), CheckpointError);
}

}  // namespace
}  // namespace bella::numcore

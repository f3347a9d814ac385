// Copyright 2026 The bella Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <span>

#include "bella/bevenc/bevenc.hpp"
#include "bella/lm/lm.hpp"
#include "bella/numcore/gradcheck.hpp"
#include "bella/projector/projector.hpp"

namespace bella::projector {
namespace {

using scenesim::Actor;
using scenesim::ActorClass;
using scenesim::Scene;
using scenesim::Status;

constexpr Variant kVariants[] = {Variant::kLinear, Variant::kShallowConv, Variant::kDeepConv};

Scene car_at(double x, double y) {
  Scene s;
  Actor a;
  a.cls = ActorClass::kCar;
  a.x = x;
  a.y = y;
  a.status = Status::kParked;
  s.actors = {a};
  return s;
}

Tensor<float> grid_of(const Scene& s) { return bevenc::encode_scene(s, bevenc::FrozenEncoderParams::canonical()); }

TEST(Project, OutputIsOneByD) {
  for (auto v : kVariants) {
    const auto p = ProjectorParams<float>::init({v, 128}, 3);
    Tape<float> tape(false);
    const auto e = project(tape, grid_of(car_at(10, 0)), p);
    EXPECT_EQ(e.shape(), (numcore::Shape{1, 128})) << variant_name(v);
    for (float x : e.values()) EXPECT_TRUE(std::isfinite(x));
  }
}

TEST(Project, BatchedInputGivesOneRowPerGrid) {
  const auto p = ProjectorParams<float>::init({Variant::kDeepConv, 32}, 3);
  const auto a = grid_of(car_at(10, 0)), b = grid_of(car_at(-10, 0));
  std::vector<float> both(a.values().begin(), a.values().end());
  both.insert(both.end(), b.values().begin(), b.values().end());
  Tape<float> tape(false);
  const auto e = project(tape, Tensor<float>({2, 32, 32, 9}, both), p);
  const auto ea = project(tape, a, p);
  EXPECT_EQ(e.shape(), (numcore::Shape{2, 32}));
  for (std::size_t i = 0; i < 32; ++i) EXPECT_NEAR(e.values()[i], ea.values()[i], 1e-5);
}

TEST(Project, NormalizedOutputStatistics) {
  const auto moments = [](std::span<const double> x) {
    double mean = 0, var = 0;
    for (double v : x) mean += v;
    mean /= x.size();
    for (double v : x) var += (v - mean) * (v - mean);
    return std::pair{mean, var / x.size()};
  };
  for (auto v : kVariants) {
    const auto p = ProjectorParams<double>::init({v, 64}, 5);
    Tape<double> tape(false);
    ProjectorTrace<double> trace;
    const auto e = project(tape, grid_of(car_at(12, 3)).cast<double>(), p, &trace);
    const auto [mean, var] = moments(e.values());
    const double pre_var = moments(trace.pre_norm.values()).second;
    EXPECT_LT(std::abs(mean), 1e-6) << variant_name(v);
    // Unit variance up to the epsilon in the denominator.
    EXPECT_NEAR(var, pre_var / (pre_var + kNormEpsilon), 1e-4) << variant_name(v);
    EXPECT_GT(pre_var, 0.0) << variant_name(v);
  }
}

TEST(Project, QuadrantChangeMovesTheEmbedding) {
  for (auto v : kVariants) {
    const auto p = ProjectorParams<float>::init({v, 128}, 7);
    Tape<float> tape(false);
    const auto a = project(tape, grid_of(car_at(10, 0)), p);
    const auto b = project(tape, grid_of(car_at(0, 10)), p);
    double dist = 0;
    for (std::size_t i = 0; i < a.size(); ++i) dist += std::pow(a.values()[i] - b.values()[i], 2);
    EXPECT_GT(dist, 0.0) << variant_name(v);
  }
}

TEST(Project, RejectsWrongInputShape) {
  const auto p = ProjectorParams<float>::init({Variant::kLinear, 16}, 1);
  Tape<float> tape(false);
  EXPECT_THROW(project(tape, Tensor<float>::zeros({16, 16, 9}), p), ShapeError);
}

TEST(CountParams, LinearVariantByHand) {
  // 32*32*9*128 weights + 128 bias + 2*128 norm.
  EXPECT_EQ(ProjectorParams<float>::init({Variant::kLinear, 128}, 1).count_params(), 1180032u);
}

TEST(CountParams, ConvStacksGrowWithDepth) {
  const auto deep = ProjectorParams<float>::init({Variant::kDeepConv, 128}, 1);
  const auto shallow = ProjectorParams<float>::init({Variant::kShallowConv, 128}, 1);
  EXPECT_GT(deep.conv_param_count(), shallow.conv_param_count());
  EXPECT_GT(shallow.conv_param_count(), 0u);
  EXPECT_EQ(ProjectorParams<float>::init({Variant::kLinear, 128}, 1).conv_param_count(), 0u);
}

TEST(CountParams, MatchesNamedTensors) {
  for (auto v : kVariants) {
    const auto p = ProjectorParams<float>::init({v, 128}, 1);
    std::size_t n = 0;
    for (const auto& [name, t] : p.named()) {
      EXPECT_EQ(name.rfind("projector/", 0), 0u);
      EXPECT_TRUE(t.requires_grad()) << name;
      n += t.size();
    }
    EXPECT_EQ(n, p.count_params());
  }
}

TEST(Params, LoadRejectsShapeMismatch) {
  auto p = ProjectorParams<float>::init({Variant::kShallowConv, 16}, 1);
  auto other = ProjectorParams<float>::init({Variant::kShallowConv, 32}, 1).named();
  EXPECT_THROW(p.load(other), std::invalid_argument);
  const auto q = ProjectorParams<float>::init({Variant::kShallowConv, 16}, 2);
  p.load(q.named());
  EXPECT_EQ(p.fc1_w.values()[0], q.fc1_w.values()[0]);
}

TEST(Params, InitIsDeterministic) {
  const auto a = ProjectorParams<float>::init({Variant::kDeepConv, 32}, 9);
  const auto b = ProjectorParams<float>::init({Variant::kDeepConv, 32}, 9);
  for (const auto& [name, t] : a.named()) {
    const auto& u = b.named().at(name);
    EXPECT_TRUE(std::equal(t.values().begin(), t.values().end(), u.values().begin())) << name;
  }
}

TEST(GradientFlow, EveryTensorReceivesGradientAfterOneStep) {
  lm::LMConfig cfg;
  cfg.vocab = 12;
  cfg.d = 16;
  cfg.layers = 1;
  cfg.heads = 2;
  cfg.ff = 32;
  cfg.max_len = 16;
  const auto base = lm::MicroLMParams<float>::init(cfg, 4);
  const auto prompt = lm::assemble_prompt(lm::Stage::kPretrain, {}, {5, 6, 7}, 4, cfg.max_len);
  for (auto v : kVariants) {
    const auto p = ProjectorParams<float>::init({v, 16}, 11);
    Tape<float> tape;
    const auto e = project(tape, grid_of(car_at(10, 2)), p);
    const auto loss = lm::sequence_loss(tape, {&prompt}, e, base, static_cast<const lm::LoraAdapter<float>*>(nullptr));
    tape.backward(loss);
    for (const auto& [name, t] : p.named()) {
      ASSERT_TRUE(t.has_grad()) << variant_name(v) << " " << name;
      bool nonzero = false;
      for (float g : t.grad()) nonzero |= g != 0.0f;
      EXPECT_TRUE(nonzero) << variant_name(v) << " " << name;
    }
  }
}

TEST(GradCheck, ProjectCompositeInDoublePrecision) {
  const auto grid = grid_of(car_at(9, -4)).cast<double>();
  for (auto v : kVariants) {
    const auto p = ProjectorParams<double>::init({v, 8}, 13);
    std::vector<Tensor<double>> params;
    for (const auto& [name, t] : p.named()) params.push_back(t);
    SplitMix64 rng(1);
    std::vector<double> w(8);
    for (auto& x : w) x = rng.uniform(-1, 1);
    const Tensor<double> weights({1, 8}, w);
    auto f = [&](Tape<double>& tape) { return numcore::sum(tape, numcore::mul(tape, project(tape, grid, p), weights)); };
    numcore::GradCheckOptions opt;
    opt.max_per_tensor = 12;
    const auto r = numcore::grad_check(f, params, opt);
    EXPECT_LT(r.max_relative_error, 1e-4) << variant_name(v);
  }
}

}  // namespace
}  // namespace bella::projector

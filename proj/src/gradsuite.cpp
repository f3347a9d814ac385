// Copyright 2026 The bella Authors
// SPDX-License-Identifier: Apache-2.0

#include "bella/trainer/gradsuite.hpp"

#include <algorithm>
#include <functional>
#include <memory>
#include <map>
#include <stdexcept>

#include "bella/lm/lm.hpp"
#include "bella/numcore/gradcheck.hpp"
#include "bella/numcore/ops.hpp"
#include "bella/numcore/rng.hpp"
#include "bella/projector/projector.hpp"

namespace bella::trainer {

namespace {

using numcore::Shape;
using numcore::Tape;
using numcore::Tensor;
using D = Tensor<double>;

constexpr int kShapes = 3;

D random(SplitMix64& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(numcore::shape_numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return D(std::move(shape), std::move(v));
}

/// Reduces an output to a scalar through fixed random weights, so that every
/// output element carries a distinct upstream gradient.
D contract(Tape<double>& tape, const D& y, const D& weights) {
  return numcore::sum(tape, numcore::mul(tape, y, weights));
}

struct Case {
  std::function<D(Tape<double>&)> f;
  std::vector<D> params;
  numcore::GradCheckOptions options;
};

using CaseBuilder = std::function<Case(SplitMix64&, int shape, const GradSuiteConfig&)>;

/// Builds a case for an elementwise-or-shaped unary op y = op(x).
template <typename Op>
Case unary(SplitMix64& rng, const Shape& shape, const Shape& out_shape, Op op, double lo = -1.0, double hi = 1.0) {
  auto x = random(rng, shape, lo, hi);
  auto w = random(rng, out_shape);
  return {[=](Tape<double>& t) { return contract(t, op(t, x), w); }, {x}, {}};
}

const Shape kElementwise[kShapes] = {{7}, {3, 5}, {2, 3, 4}};

std::vector<std::pair<std::string, CaseBuilder>> builders() {
  std::vector<std::pair<std::string, CaseBuilder>> out;
  out.push_back({"add", [](SplitMix64& rng, int s, const GradSuiteConfig&) {
                   auto a = random(rng, kElementwise[s]), b = random(rng, kElementwise[s]);
                   auto w = random(rng, kElementwise[s]);
                   return Case{[=](Tape<double>& t) { return contract(t, numcore::add(t, a, b), w); }, {a, b}, {}};
                 }});
  out.push_back({"mul", [](SplitMix64& rng, int s, const GradSuiteConfig&) {
                   auto a = random(rng, kElementwise[s]), b = random(rng, kElementwise[s]);
                   auto w = random(rng, kElementwise[s]);
                   return Case{[=](Tape<double>& t) { return contract(t, numcore::mul(t, a, b), w); }, {a, b}, {}};
                 }});
  out.push_back({"scale", [](SplitMix64& rng, int s, const GradSuiteConfig&) {
                   const double k = rng.uniform(-2, 2);
                   return unary(rng, kElementwise[s], kElementwise[s],
                                [k](Tape<double>& t, const D& x) { return numcore::scale(t, x, k); });
                 }});
  out.push_back({"sum", [](SplitMix64& rng, int s, const GradSuiteConfig&) {
                   auto x = random(rng, kElementwise[s]);
                   return Case{[=](Tape<double>& t) { return numcore::sum(t, numcore::mul(t, x, x)); }, {x}, {}};
                 }});
  out.push_back({"tanh", [](SplitMix64& rng, int s, const GradSuiteConfig&) {
                   return unary(rng, kElementwise[s], kElementwise[s],
                                [](Tape<double>& t, const D& x) { return numcore::tanh(t, x); }, -2.0, 2.0);
                 }});
  out.push_back({"gelu", [](SplitMix64& rng, int s, const GradSuiteConfig&) {
                   return unary(rng, kElementwise[s], kElementwise[s],
                                [](Tape<double>& t, const D& x) { return numcore::gelu(t, x); }, -3.0, 3.0);
                 }});
  out.push_back({"reshape", [](SplitMix64& rng, int s, const GradSuiteConfig&) {
                   const Shape in = kElementwise[s];
                   const Shape to = {numcore::shape_numel(in)};
                   return unary(rng, in, to, [to](Tape<double>& t, const D& x) { return numcore::reshape(t, x, to); });
                 }});
  out.push_back({"linear", [](SplitMix64& rng, int s, const GradSuiteConfig&) {
                   const std::size_t dims[kShapes][3] = {{1, 3, 2}, {4, 5, 3}, {3, 8, 6}};  // rows, in, out
                   const auto* d = dims[s];
                   auto x = random(rng, {d[0], d[1]}), w = random(rng, {d[2], d[1]}), b = random(rng, {d[2]});
                   auto g = random(rng, {d[0], d[2]});
                   return Case{[=](Tape<double>& t) { return contract(t, numcore::linear(t, x, w, b), g); },
                               {x, w, b},
                               {}};
                 }});
  out.push_back({"linear_nobias", [](SplitMix64& rng, int s, const GradSuiteConfig&) {
                   const std::size_t dims[kShapes][3] = {{2, 2, 3}, {5, 4, 4}, {1, 7, 5}};
                   const auto* d = dims[s];
                   auto x = random(rng, {d[0], d[1]}), w = random(rng, {d[2], d[1]});
                   auto g = random(rng, {d[0], d[2]});
                   return Case{[=](Tape<double>& t) { return contract(t, numcore::linear(t, x, w), g); }, {x, w}, {}};
                 }});
  out.push_back({"layer_norm", [](SplitMix64& rng, int s, const GradSuiteConfig&) {
                   const Shape shapes[kShapes] = {{4}, {3, 6}, {2, 2, 5}};
                   const Shape sh = shapes[s];
                   const std::size_t d = sh.back();
                   auto x = random(rng, sh, -2, 2), g = random(rng, {d}, 0.5, 1.5), b = random(rng, {d});
                   auto w = random(rng, sh);
                   return Case{[=](Tape<double>& t) { return contract(t, numcore::layer_norm(t, x, g, b, 1e-5), w); },
                               {x, g, b},
                               {}};
                 }});
  out.push_back({"conv2d", [](SplitMix64& rng, int s, const GradSuiteConfig&) {
                   // input shape, cout, k, stride, pad
                   struct Geo {
                     Shape in;
                     std::size_t cout, k, stride, pad;
                   };
                   const Geo geos[kShapes] = {{{2, 5, 5}, 3, 3, 1, 1}, {{2, 3, 7, 6}, 4, 3, 2, 1}, {{1, 2, 6, 6}, 2, 1, 2, 0}};
                   const auto& g = geos[s];
                   const std::size_t cin = g.in[g.in.size() - 3];
                   auto x = random(rng, g.in), k = random(rng, {g.cout, cin, g.k, g.k}), b = random(rng, {g.cout});
                   Tape<double> probe(false);
                   auto w = random(rng, numcore::conv2d(probe, x, k, b, g.stride, g.pad).shape());
                   return Case{[=](Tape<double>& t) { return contract(t, numcore::conv2d(t, x, k, b, g.stride, g.pad), w); },
                               {x, k, b},
                               {}};
                 }});
  out.push_back({"adaptive_avg_pool2d", [](SplitMix64& rng, int s, const GradSuiteConfig&) {
                   struct Geo {
                     Shape in;
                     std::size_t oh, ow;
                   };
                   const Geo geos[kShapes] = {{{2, 8, 8}, 4, 4}, {{2, 3, 7, 5}, 3, 2}, {{1, 1, 6, 6}, 4, 4}};
                   const auto& g = geos[s];
                   Shape out = g.in;
                   out[out.size() - 2] = g.oh;
                   out[out.size() - 1] = g.ow;
                   return unary(rng, g.in, out, [g](Tape<double>& t, const D& x) {
                     return numcore::adaptive_avg_pool2d(t, x, g.oh, g.ow);
                   });
                 }});
  out.push_back({"embedding", [](SplitMix64& rng, int s, const GradSuiteConfig&) {
                   const std::vector<int> ids[kShapes] = {{0, 2}, {1, 1, 3, 0}, {4, 2, 2, 5, 0, 1}};
                   const std::size_t vocab = s + 4, d = 3 + s;
                   auto table = random(rng, {vocab + 2, d});
                   auto w = random(rng, {ids[s].size(), d});
                   const auto id = ids[s];
                   return Case{[=](Tape<double>& t) { return contract(t, numcore::embedding(t, table, id), w); },
                               {table},
                               {}};
                 }});
  out.push_back({"scatter_rows", [](SplitMix64& rng, int s, const GradSuiteConfig&) {
                   const std::vector<std::size_t> rows[kShapes] = {{1}, {0, 3}, {4, 1, 2}};
                   const std::size_t r = 5, d = 2 + s;
                   auto base = random(rng, {r, d}), src = random(rng, {rows[s].size(), d});
                   auto w = random(rng, {r, d});
                   const auto rs = rows[s];
                   return Case{[=](Tape<double>& t) { return contract(t, numcore::scatter_rows(t, base, rs, src), w); },
                               {base, src},
                               {}};
                 }});
  out.push_back({"gather_rows", [](SplitMix64& rng, int s, const GradSuiteConfig&) {
                   const std::vector<std::size_t> rows[kShapes] = {{0}, {2, 2, 1}, {3, 0, 4, 1}};
                   const std::size_t d = 2 + s;
                   auto x = random(rng, {5, d});
                   auto w = random(rng, {rows[s].size(), d});
                   const auto rs = rows[s];
                   return Case{[=](Tape<double>& t) { return contract(t, numcore::gather_rows(t, x, rs), w); }, {x}, {}};
                 }});
  out.push_back({"causal_attention", [](SplitMix64& rng, int s, const GradSuiteConfig&) {
                   const std::vector<numcore::Segment> segs[kShapes] = {
                       {{0, 4}}, {{0, 3}, {3, 2}}, {{0, 1}, {1, 4}, {5, 3}}};
                   const std::size_t heads[kShapes] = {1, 2, 3};
                   const std::size_t d[kShapes] = {4, 6, 6};
                   std::size_t rows = 0;
                   for (const auto& sg : segs[s]) rows += sg.length;
                   auto q = random(rng, {rows, d[s]}), k = random(rng, {rows, d[s]}), v = random(rng, {rows, d[s]});
                   auto w = random(rng, {rows, d[s]});
                   const auto sg = segs[s];
                   const std::size_t h = heads[s];
                   return Case{
                       [=](Tape<double>& t) { return contract(t, numcore::causal_attention(t, q, k, v, sg, h), w); },
                       {q, k, v},
                       {}};
                 }});
  out.push_back({"cross_entropy", [](SplitMix64& rng, int s, const GradSuiteConfig&) {
                   const std::size_t rows = 1 + 2 * s, vocab = 3 + 2 * s;
                   auto logits = random(rng, {rows, vocab}, -3, 3);
                   std::vector<int> targets(rows);
                   for (auto& t : targets) t = static_cast<int>(rng.below(vocab));
                   return Case{[=](Tape<double>& t) { return numcore::cross_entropy(t, logits, targets); }, {logits}, {}};
                 }});
  out.push_back({"softmax_cross_entropy", [](SplitMix64& rng, int s, const GradSuiteConfig&) {
                   const std::size_t vocab = 2 + 3 * s;
                   auto logits = random(rng, {vocab}, -3, 3);
                   const int target = static_cast<int>(rng.below(vocab));
                   return Case{[=](Tape<double>& t) { return numcore::softmax_cross_entropy(t, logits, target); },
                               {logits},
                               {}};
                 }});
  out.push_back({"lora_linear", [](SplitMix64& rng, int s, const GradSuiteConfig&) {
                   const std::size_t dims[kShapes][4] = {{2, 4, 3, 1}, {3, 6, 5, 2}, {4, 8, 8, 4}};  // rows, in, out, r
                   const auto* d = dims[s];
                   auto x = random(rng, {d[0], d[1]}), w = random(rng, {d[2], d[1]}), b = random(rng, {d[2]});
                   lm::LoraPair<double> pair{random(rng, {d[3], d[1]}), random(rng, {d[2], d[3]})};
                   auto g = random(rng, {d[0], d[2]});
                   const double scaling = 16.0 / d[3];
                   return Case{[=](Tape<double>& t) {
                                 return contract(t, lm::detail::adapted_linear(t, x, w, b, &pair, scaling), g);
                               },
                               {x, w, b, pair.a, pair.b},
                               {}};
                 }});
  out.push_back({"projector_lm", [](SplitMix64& rng, int s, const GradSuiteConfig& cfg) {
                   const projector::Variant variants[kShapes] = {projector::Variant::kLinear,
                                                                 projector::Variant::kShallowConv,
                                                                 projector::Variant::kDeepConv};
                   lm::LMConfig lc;
                   lc.vocab = 16;
                   lc.d = 8;
                   lc.layers = 2;
                   lc.heads = 2;
                   lc.ff = 16;
                   lc.max_len = 16;
                   auto proj = projector::ProjectorParams<double>::init({variants[s], lc.d}, rng.next());
                   auto base = lm::MicroLMParams<double>::init(lc, rng.next());
                   auto lora = lm::LoraAdapter<double>::init(lc, lm::LoraConfig{2, 4.0}, rng.next());
                   // Non-zero B so that every adapter factor receives gradient.
                   for (auto& [name, t] : lora.named())
                     if (name.back() == 'B')
                       for (auto& v : t.mutable_values()) v = rng.uniform(-0.5, 0.5);
                   auto grids = random(rng, {2, projector::kInputSize, projector::kInputSize, projector::kInputChannels});
                   auto words = [&](std::size_t n) {
                     std::vector<int> w(n);
                     for (auto& x : w) x = 5 + static_cast<int>(rng.below(lc.vocab - 5));
                     return w;
                   };
                   auto a0 = std::make_shared<lm::PromptAssembly>(
                       lm::assemble_prompt(lm::Stage::kFinetune, words(3), words(2), 4, lc.max_len));
                   auto a1 = std::make_shared<lm::PromptAssembly>(
                       lm::assemble_prompt(lm::Stage::kPretrain, {}, words(4), 4, lc.max_len));
                   Case c;
                   for (const auto& [n, t] : proj.named()) c.params.push_back(t);
                   for (const auto& [n, t] : base.named()) c.params.push_back(t);
                   for (const auto& [n, t] : lora.named()) c.params.push_back(t);
                   c.f = [=](Tape<double>& t) {
                     auto ebev = projector::project(t, grids, proj);
                     return lm::sequence_loss(t, {a0.get(), a1.get()}, ebev, base, &lora);
                   };
                   c.options.max_per_tensor = cfg.composite_probes;
                   c.options.sample_seed = rng.next();
                   return c;
                 }});
  return out;
}

std::uint64_t name_salt(const std::string& name) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : name) h = (h ^ static_cast<unsigned char>(c)) * 0x100000001b3ULL;
  return h;
}

}  // namespace

std::vector<std::string> gradcheck_ops() {
  std::vector<std::string> names;
  for (const auto& [n, b] : builders()) names.push_back(n);
  return names;
}

std::vector<GradCheckRow> run_gradcheck_suite(const GradSuiteConfig& config, const std::vector<std::string>& ops) {
  if (config.seeds < 1) throw std::invalid_argument("gradcheck: seeds must be >= 1");
  const auto all = builders();
  for (const auto& name : ops) {
    bool known = false;
    for (const auto& [n, b] : all) known = known || n == name;
    if (!known) throw std::invalid_argument("gradcheck: unknown operator '" + name + "'");
  }
  std::vector<GradCheckRow> rows;
  for (const auto& [name, build] : all) {
    if (!ops.empty() && std::find(ops.begin(), ops.end(), name) == ops.end()) continue;
    GradCheckRow row;
    row.op = name;
    row.seeds = config.seeds;
    row.shapes = std::min(config.seeds, kShapes);
    for (int seed = 0; seed < config.seeds; ++seed) {
      SplitMix64 rng(SplitMix64::derive(config.base_seed, name_salt(name) ^ static_cast<std::uint64_t>(seed)));
      auto c = build(rng, seed % kShapes, config);
      c.options.h = config.h;
      const auto r = numcore::grad_check(c.f, c.params, c.options);
      row.max_relative_error = std::max(row.max_relative_error, r.max_relative_error);
      row.elements += r.elements;
    }
    row.passed = row.max_relative_error < config.tolerance;
    rows.push_back(row);
  }
  return rows;
}

}  // namespace bella::trainer

// Copyright 2026 The bella Authors
// SPDX-License-Identifier: Apache-2.0
//
// Acceptance runner. Prints one PASS/FAIL line per criterion of the selected
// group:
//   fast      1 gradients, 2 freeze, 3 LoRA, 4 placeholder, 5 oracle,
//             9 metric goldens, 10 determinism
//   ablation  6 pretraining ablation, 7 projector ablation
//   e2e       8 learning sanity, 11 end-to-end budget
// Criteria 6 and 7 are directional measurements on a toy benchmark; their
// FAIL lines are reported but only fail the process under --strict.

#include <CLI11.hpp>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <set>
#include <sstream>
#include <sys/wait.h>

#include "bella/cli/config.hpp"
#include "bella/evalmetrics/metrics.hpp"
#include "bella/langdata/dataset.hpp"
#include "bella/lm/lm.hpp"
#include "bella/numcore/checkpoint.hpp"
#include "bella/numcore/ops.hpp"
#include "bella/trainer/gradsuite.hpp"
#include "bella/trainer/trainer.hpp"

namespace fs = std::filesystem;
using namespace bella;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

bool g_failed = false;
bool g_strict = false;
const std::set<int> kReported = {6, 7};

void report(int id, const std::string& name, const Outcome& o) {
  std::cout << (o.pass ? "PASS" : "FAIL") << "  " << id << ". " << name << ": " << o.detail << std::endl;
  if (!o.pass && (g_strict || !kReported.count(id))) g_failed = true;
}

template <typename F>
void criterion(int id, const std::string& name, F&& f) {
  try {
    report(id, name, f());
  } catch (const std::exception& e) {
    report(id, name, {false, std::string("error: ") + e.what()});
  }
}

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

std::string fmt(double v, int precision = 3) {
  std::ostringstream s;
  s.precision(precision);
  s << v;
  return s.str();
}

std::string binary() {
  if (const char* b = std::getenv("BELLA_BINARY")) return b;
  return BELLA_BINARY;
}

// Runs the CLI; stdout and stderr go to `log`.
int bella_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = "\"" + binary() + "\" " + args + " >>\"" + log.string() + "\" 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

void require_cli(const std::string& args, const fs::path& log) {
  const int rc = bella_cli(args, log);
  if (rc != 0) throw std::runtime_error("bella " + args + " exited " + std::to_string(rc) + " (see " + log.string() + ")");
}

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + p.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

fs::path fresh_dir(const fs::path& p) {
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// A small pipeline for the contract checks that do not need the full corpus.
struct Tiny {
  langdata::Corpus corpus;
  trainer::TrainConfig cfg;

  Tiny() {
    langdata::CorpusConfig cc;
    cc.episodes = 20;
    cc.test_episodes = 4;
    corpus = langdata::build_corpus(cc);
    cfg.lm.d = 32;
    cfg.lm.layers = 2;
    cfg.lm.heads = 4;
    cfg.lm.ff = 64;
    cfg.lora = {4, 8.0};
    cfg.epochs = 2;
    cfg.batch_size = 8;
    cfg.lm_warmup_epochs = 1;
  }
};

// ---------------------------------------------------------------------------
// fast group

Outcome gradients() {
  const auto t0 = Clock::now();
  trainer::GradSuiteConfig cfg;
  cfg.seeds = 10;
  const auto rows = trainer::run_gradcheck_suite(cfg);
  const double secs = seconds_since(t0);
  double worst = 0;
  std::string worst_op;
  bool ok = true;
  for (const auto& r : rows) {
    ok = ok && r.passed && r.seeds >= 10;
    if (r.max_relative_error >= worst) worst = r.max_relative_error, worst_op = r.op;
  }
  ok = ok && worst < 1e-4 && secs < 60.0;
  return {ok, std::to_string(rows.size()) + " operators x 10 seeds x 3 shapes, max rel err " + fmt(worst) + " (" +
                  worst_op + "), " + fmt(secs) + " s"};
}

Outcome freeze(const Tiny& t) {
  const auto base = trainer::warmup_lm(t.cfg, t.corpus);
  const auto lm_before = numcore::checksum(trainer::base_lm_checkpoint(base, t.corpus.vocab));
  const auto s1 = trainer::pretrain(t.cfg, t.corpus, base);
  const auto s2 = trainer::finetune(t.cfg, t.corpus, base, &s1.proj);
  bool ok = !s1.lora.has_value() && s2.lora.has_value();
  for (const auto* log : {&s1.log, &s2.log}) {
    ok = ok && log->checksums.at("bevenc/before") == log->checksums.at("bevenc/after");
    ok = ok && log->checksums.at("lm/before") == log->checksums.at("lm/after");
    for (const auto& ev : log->steps) ok = ok && ev.grad_norms.at("lm_base") == 0.0;
  }
  ok = ok && numcore::checksum(trainer::base_lm_checkpoint(base, t.corpus.vocab)) == lm_before;
  // Stage 1 changes only projector tensors: its checkpoint differs from one
  // holding another projector exactly on "projector/" keys.
  trainer::Model before{t.corpus.vocab, bevenc::FrozenEncoderParams::canonical(), base,
                        projector::ProjectorParams<float>::init({t.cfg.variant, t.cfg.lm.d}, 0), std::nullopt};
  trainer::Model after = before;
  after.proj = s1.proj;
  const auto a = trainer::model_checkpoint(before), b = trainer::model_checkpoint(after);
  std::size_t changed = 0, outside = 0;
  for (const auto& [name, tensor] : a) {
    const auto& u = b.at(name);
    if (!std::equal(tensor.values().begin(), tensor.values().end(), u.values().begin(), u.values().end())) {
      ++changed;
      if (name.rfind("projector/", 0) != 0) ++outside;
    }
  }
  ok = ok && changed > 0 && outside == 0;
  return {ok, "bevenc and base-LM checksums equal before/after both stages; stage 1 changed " +
                  std::to_string(changed) + " tensors, " + std::to_string(outside) + " outside projector/"};
}

lm::PromptAssembly random_prompt(SplitMix64& rng, std::size_t vocab, std::size_t max_len) {
  auto ids = [&](std::size_t n) {
    std::vector<int> v(n);
    for (auto& x : v) x = static_cast<int>(5 + rng.below(vocab - 5));
    return v;
  };
  const auto q = ids(2 + rng.below(12));
  return lm::assemble_prompt(lm::Stage::kFinetune, q, ids(1 + rng.below(4)), 4, max_len);
}

numcore::Tensor<float> random_row(SplitMix64& rng, std::size_t d) {
  std::vector<float> v(d);
  for (auto& x : v) x = static_cast<float>(rng.normal());
  return numcore::Tensor<float>({1, d}, v);
}

std::vector<float> logits(const lm::PromptAssembly& p, const numcore::Tensor<float>& e,
                          const lm::MicroLMParams<float>& m, const lm::LoraAdapter<float>* lora) {
  numcore::Tape<float> tape(false);
  const auto out = lm::forward(tape, {&p}, e, m, lora);
  return {out.values().begin(), out.values().end()};
}

lm::LMConfig default_lm() {
  lm::LMConfig c;
  c.vocab = langdata::Vocab::standard().size();
  return c;
}

Outcome lora_identity() {
  const auto c = default_lm();
  const auto m = lm::MicroLMParams<float>::init(c, 3);
  const auto zero = lm::LoraAdapter<float>::init(c, {}, 4);
  SplitMix64 rng(5);
  bool identical = true;
  for (int i = 0; i < 10; ++i) {
    const auto p = random_prompt(rng, c.vocab, c.max_len);
    const auto e = random_row(rng, c.d);
    identical = identical && logits(p, e, m, &zero) == logits(p, e, m, nullptr);
  }
  auto trained = zero;
  for (auto& sites : trained.layers)
    for (auto& pair : sites)
      for (auto& x : pair.b.mutable_values()) x = static_cast<float>(rng.uniform(-0.05, 0.05));
  const auto merged = lm::merge_lora(m, trained);
  double worst = 0;
  bool differs = false;
  for (int i = 0; i < 10; ++i) {
    const auto p = random_prompt(rng, c.vocab, c.max_len);
    const auto e = random_row(rng, c.d);
    const auto a = logits(p, e, m, &trained), b = logits(p, e, merged, nullptr), base = logits(p, e, m, nullptr);
    for (std::size_t k = 0; k < a.size(); ++k) worst = std::max(worst, double(std::abs(a[k] - b[k])));
    differs = differs || a != base;
  }
  return {identical && differs && worst < 1e-4, std::string("B=0 bit-exact on 10 prompts: ") +
                                                    (identical ? "yes" : "no") + "; merged max |dlogit| " + fmt(worst)};
}

Outcome placeholder() {
  const auto c = default_lm();
  const auto m = lm::MicroLMParams<float>::init(c, 8);
  auto lora = lm::LoraAdapter<float>::init(c, {}, 9);
  SplitMix64 rng(10);
  for (auto& sites : lora.layers)
    for (auto& pair : sites)
      for (auto& x : pair.b.mutable_values()) x = static_cast<float>(rng.uniform(-0.05, 0.05));
  int one_placeholder = 0, rows_exact = 0, causal = 0;
  const std::size_t v = c.vocab;
  for (int i = 0; i < 100; ++i) {
    auto p = random_prompt(rng, v, c.max_len);
    one_placeholder += std::count(p.ids.begin(), p.ids.end(), lm::kPlaceholder) == 1;
    const auto e = random_row(rng, c.d);
    numcore::Tape<float> tape(false);
    lm::ForwardTrace<float> trace;
    const auto out = lm::forward(tape, {&p}, e, m, &lora, nullptr, &trace);
    bool exact = true;
    for (std::size_t j = 0; j < c.d; ++j)
      exact = exact && trace.embedded.values()[lm::kPlaceholderPosition * c.d + j] ==
                           e.values()[j] + m.pos_emb.values()[lm::kPlaceholderPosition * c.d + j];
    rows_exact += exact;
    const std::vector<float> before(out.values().begin(), out.values().end());
    const std::size_t t = 1 + rng.below(p.length() - 2);
    p.ids[t + 1] = p.ids[t + 1] == 5 ? 6 : 5;
    const auto after = logits(p, e, m, &lora);
    bool ok = true, later = false;
    for (std::size_t k = 0; k < (t + 1) * v; ++k) ok = ok && before[k] == after[k];
    for (std::size_t k = (t + 1) * v; k < after.size(); ++k) later = later || before[k] != after[k];
    causal += ok && later;
  }
  return {one_placeholder == 100 && rows_exact == 100 && causal == 100,
          "single placeholder " + std::to_string(one_placeholder) + "/100, row = E_BEV + pos " +
              std::to_string(rows_exact) + "/100, causality " + std::to_string(causal) + "/100"};
}

Outcome oracle_closure() {
  langdata::CorpusConfig cc;
  cc.episodes = 50;
  cc.test_episodes = 10;
  const auto corpus = langdata::build_corpus(cc);
  std::vector<trainer::Prediction> preds;
  for (const auto& r : corpus.qa)
    preds.push_back({r.item, scenesim::oracle_answer(corpus.scene(r.item.episode_id, r.item.frame_index), r.item)});
  const auto rep = trainer::score(preds);
  bool ok = rep.per_category.size() == 6 && rep.overall.accuracy == 100.0;
  std::string detail;
  for (const auto& [c, row] : rep.per_category) {
    ok = ok && row.accuracy == 100.0;
    detail += std::string(detail.empty() ? "" : ", ") + std::string(scenesim::category_name(c)) + " " + fmt(row.accuracy, 4);
  }
  return {ok, std::to_string(preds.size()) + " items on 50 episodes: " + detail};
}

Outcome metric_goldens() {
  using namespace evalmetrics;
  const auto [m, total] = clipped_ngram_counts(tokenize("the the the the"), {tokenize("the cat")}, 1);
  const double p1 = static_cast<double>(m) / total;
  const double rl = rouge_l(tokenize("the cat sat"), tokenize("the cat sat on the mat"));
  const std::vector<std::vector<Tokens>> corpus = {{tokenize("a b c d e")}, {tokenize("f g h i j")}};
  const double cd = CiderScorer(corpus).score(tokenize("a b c d e"), corpus[0]);
  const std::size_t v = langdata::Vocab::standard().size();
  numcore::Tape<double> tape(false);
  const double ce = numcore::cross_entropy(tape, numcore::Tensor<double>::zeros({4, v}), {5, 6, 7, 8}).item();
  const double e1 = std::abs(p1 - 0.25), e2 = std::abs(rl - 2.0 / 3.0), e3 = std::abs(cd - 10.0),
               e4 = std::abs(ce - std::log(double(v)));
  const double worst = std::max({e1, e2, e3, e4});
  return {worst <= 1e-9, "BLEU p1 " + fmt(p1, 10) + ", ROUGE-L " + fmt(rl, 10) + ", CIDEr " + fmt(cd, 10) +
                             ", uniform CE " + fmt(ce, 10) + " (ln|V| " + fmt(std::log(double(v)), 10) +
                             "), max error " + fmt(worst)};
}

Outcome determinism(const fs::path& work) {
  const auto log = work / "determinism.log";
  fs::remove(log);
  for (const char* run : {"a", "b"}) {
    const auto d = fresh_dir(work / run);
    require_cli("gen --out \"" + (d / "data").string() + "\"", log);
    require_cli("gen --episodes 20 --test-episodes 4 --out \"" + (d / "small").string() + "\"", log);
    const std::string common = " --data \"" + (d / "small").string() +
                               "\" --epochs 2 --set train.lm_warmup_epochs=1 --set model.layers=2 --force";
    require_cli("pretrain" + common + " --out \"" + (d / "pre").string() + "\"", log);
    require_cli("finetune" + common + " --stage1 \"" + (d / "pre/stage1.ckpt").string() + "\" --base-lm \"" +
                    (d / "pre/base_lm.ckpt").string() + "\" --out \"" + (d / "fin").string() + "\"",
                log);
    require_cli("eval --data \"" + (d / "small").string() + "\" --checkpoint \"" + (d / "fin/model.ckpt").string() +
                    "\" --out \"" + (d / "ev").string() + "\" --force",
                log);
  }
  std::vector<std::string> compared, differing;
  for (const char* f : {"data/scenes.jsonl", "data/pretrain.jsonl", "data/qa.jsonl", "data/vocab.json",
                        "pre/base_lm.ckpt", "pre/stage1.ckpt", "fin/model.ckpt", "ev/predictions.jsonl",
                        "ev/report.json"}) {
    compared.push_back(f);
    if (read_bytes(work / "a" / f) != read_bytes(work / "b" / f)) differing.push_back(f);
  }
  std::string detail = std::to_string(compared.size()) + " artifacts of gen (250 episodes) and a 20-episode "
                       "warm-up/pretrain/finetune/eval run compared byte-wise";
  for (const auto& f : differing) detail += "; differs: " + f;
  return {differing.empty(), detail};
}

// ---------------------------------------------------------------------------
// ablation group

Outcome pretraining_ablation(const trainer::AblationReport& rep) {
  const auto& none = rep.row("No Pretraining");
  const auto& full = rep.row("Full Model");
  int positive = 0;
  std::string per_seed;
  for (std::size_t i = 0; i < rep.seeds.size(); ++i) {
    const double d = full.overall_per_seed[i] - none.overall_per_seed[i];
    positive += d > 0;
    per_seed += (i ? ", " : "") + fmt(d, 3);
  }
  const double delta = full.accuracy.at("overall") - none.accuracy.at("overall");
  return {delta >= 5.0 && positive == static_cast<int>(rep.seeds.size()) && rep.seeds.size() >= 3,
          "Full Model " + fmt(full.accuracy.at("overall"), 4) + " vs No Pretraining " +
              fmt(none.accuracy.at("overall"), 4) + " (delta " + fmt(delta, 3) + ", per seed " + per_seed + ")"};
}

Outcome projector_ablation(const trainer::AblationReport& rep) {
  const double lin = rep.row("Linear").accuracy.at("overall");
  const double conv = rep.row("Conv.").accuracy.at("overall");
  const double deep = rep.row("Deeper Conv.").accuracy.at("overall");
  return {deep >= conv && conv >= lin && deep - lin >= 3.0,
          "Deeper Conv. " + fmt(deep, 4) + ", Conv. " + fmt(conv, 4) + ", Linear " + fmt(lin, 4) + " (deep - linear " +
              fmt(deep - lin, 3) + ")"};
}

void run_ablations(const fs::path& work) {
  const cli::RunConfig rc;
  const auto corpus = langdata::build_corpus(rc.corpus());
  const auto cfg = rc.train();
  const auto seeds = rc.ablation_seeds();
  std::ofstream progress(work / "ablation_progress.log");
  const auto t0 = Clock::now();
  const auto base = trainer::warmup_lm(cfg, corpus);
  trainer::AblationMemo memo;
  std::optional<trainer::AblationReport> pre, proj;
  criterion(6, "pretraining ablation", [&] {
    pre = trainer::run_ablation(trainer::AblationKind::kPretraining, cfg, corpus, seeds, &base, &memo, &progress);
    std::cout << pre->to_table();
    return pretraining_ablation(*pre);
  });
  criterion(7, "projector ablation", [&] {
    proj = trainer::run_ablation(trainer::AblationKind::kProjector, cfg, corpus, seeds, &base, &memo, &progress);
    std::cout << proj->to_table();
    return projector_ablation(*proj);
  });
  std::cout << "ablation wall time " << fmt(seconds_since(t0), 4) << " s (" << seeds.size() << " seeds)" << std::endl;
  if (pre) std::ofstream(work / "ablation_pretraining.json") << pre->to_json();
  if (proj) std::ofstream(work / "ablation_projector.json") << proj->to_json();
}

// ---------------------------------------------------------------------------
// e2e group

void run_e2e(const fs::path& work) {
  const auto log = work / "e2e.log";
  fs::remove(log);
  const auto data = work / "data", pre = work / "pre", fin = work / "fin", ev = work / "ev";
  double wall = -1;
  std::string failure;
  const auto t0 = Clock::now();
  try {
    require_cli("gen --out \"" + data.string() + "\" --force", log);
    require_cli("pretrain --data \"" + data.string() + "\" --out \"" + pre.string() + "\" --force", log);
    require_cli("finetune --data \"" + data.string() + "\" --stage1 \"" + (pre / "stage1.ckpt").string() +
                    "\" --base-lm \"" + (pre / "base_lm.ckpt").string() + "\" --out \"" + fin.string() + "\" --force",
                log);
    require_cli("eval --data \"" + data.string() + "\" --checkpoint \"" + (fin / "model.ckpt").string() +
                    "\" --out \"" + ev.string() + "\" --force",
                log);
    wall = seconds_since(t0);
  } catch (const std::exception& e) {
    failure = e.what();
  }

  criterion(8, "learning sanity", [&]() -> Outcome {
    if (!failure.empty()) throw std::runtime_error(failure);
    std::ifstream in(pre / "train_log.jsonl");
    std::string line, last;
    while (std::getline(in, line)) last = line;
    const auto summary = nlohmann::json::parse(last);
    const auto losses = summary.at("epoch_mean_loss").get<std::vector<double>>();
    const double ratio = losses.back() / losses.front();
    std::size_t first_below = 0;
    for (std::size_t i = 0; i < losses.size() && !first_below; ++i)
      if (losses[i] < 0.5 * losses.front()) first_below = i + 1;

    const auto corpus = langdata::read_corpus(data);
    const auto base = trainer::base_lm_from_checkpoint(numcore::load_checkpoint(pre / "base_lm.ckpt"), corpus.vocab);
    trainer::TrainConfig cfg = cli::RunConfig().train();
    cfg.lm.vocab = corpus.vocab.size();
    const auto& rec = *std::find_if(corpus.qa.begin(), corpus.qa.end(), [](const auto& r) {
      return r.split == langdata::kTest && r.item.category == scenesim::Category::kBehavior;
    });
    const auto mem = trainer::memorize(cfg, base, corpus.vocab, corpus.scene(rec.item.episode_id, rec.item.frame_index),
                                       rec.item.question, rec.item.gold_answer, 200, 10);
    const bool ok = losses.size() <= 10 && first_below > 0 && mem.steps >= 1 && mem.steps <= 200;
    return {ok, "stage-1 epoch loss " + fmt(losses.front(), 4) + " -> " + fmt(losses.back(), 4) + " (" +
                    fmt(100 * ratio, 3) + "%, below 50% at epoch " + std::to_string(first_below) +
                    "); memorized \"" + rec.item.gold_answer + "\" at step " + std::to_string(mem.steps)};
  });
  criterion(11, "end-to-end budget", [&]() -> Outcome {
    if (!failure.empty()) throw std::runtime_error(failure);
    return {wall < 600.0, "gen -> pretrain -> finetune -> eval in " + fmt(wall, 4) + " s (limit 600 s)"};
  });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria runner"};
  std::string group = "fast";
  std::string work = "acceptance_work";
  app.add_option("--group", group, "fast | ablation | e2e | all")->check(CLI::IsMember({"fast", "ablation", "e2e", "all"}));
  app.add_option("--work", work, "scratch directory");
  app.add_flag("--strict", g_strict, "directional criteria also fail the process");
  CLI11_PARSE(app, argc, argv);

  const fs::path dir = fs::absolute(work) / group;
  fs::create_directories(dir);
  const bool all = group == "all";
  if (all || group == "fast") {
    const Tiny tiny;
    criterion(1, "gradient correctness", gradients);
    criterion(2, "freeze contract", [&] { return freeze(tiny); });
    criterion(3, "LoRA identity and merge", lora_identity);
    criterion(4, "placeholder mechanics", placeholder);
    criterion(5, "oracle loop closure", oracle_closure);
    criterion(9, "metric goldens", metric_goldens);
    criterion(10, "determinism", [&] { return determinism(dir); });
  }
  if (all || group == "ablation") run_ablations(dir);
  if (all || group == "e2e") run_e2e(dir);
  return g_failed ? 1 : 0;
}

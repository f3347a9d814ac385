// Copyright 2026 The bella Authors
// SPDX-License-Identifier: Apache-2.0

#include "bella/cli/commands.hpp"

#include <CLI11.hpp>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>

#include "bella/cli/config.hpp"
#include "bella/langdata/dataset.hpp"
#include "bella/numcore/checkpoint.hpp"
#include "bella/scenesim/oracle.hpp"
#include "bella/trainer/gradsuite.hpp"
#include "bella/trainer/trainer.hpp"

namespace bella::cli {

namespace fs = std::filesystem;

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Options shared by every command.
struct Common {
  std::string config_file;
  std::vector<std::string> sets;
  std::string out;
  bool force = false;
};

/// Command-specific flags that map onto config keys; empty means unset.
struct Flags {
  std::map<std::string, std::string> values;  // config path -> text
  std::string kind;
  std::string predictions;
  std::string scene;
  std::string question;
  std::vector<std::string> ops;
  int gradcheck_seeds = 10;
  bool ablate_pretraining = false;
};

void add_common(CLI::App* sub, Common& c, bool with_out) {
  sub->add_option("--config", c.config_file, "JSON config file");
  sub->add_option("--set", c.sets, "override a config key, section.key=value (repeatable)");
  if (with_out) {
    sub->add_option("--out", c.out, "output directory (default: a run-stamped directory under paths.runs_dir)");
    sub->add_flag("--force", c.force, "allow writing into a non-empty output directory");
  }
}

void add_key(CLI::App* sub, Flags& f, const std::string& flag, const std::string& path, const std::string& help) {
  sub->add_option_function<std::string>(
      flag, [&f, path](const std::string& v) { f.values[path] = v; }, help + " (" + path + ")");
}

struct Parsed {
  std::string command;
  Common common;
  Flags flags;
};

struct AppHolder {
  CLI::App app{"bella: BEV-conditioned question answering on synthetic driving scenes", "bella"};
  Parsed p;

  AppHolder() {
    app.require_subcommand(0, 1);
    app.set_help_all_flag("--help-all", "help for every command");
    auto* gen = app.add_subcommand("gen", "generate the scene, description and QA corpus");
    add_common(gen, p.common, true);
    add_key(gen, p.flags, "--seed", "data.seed", "corpus seed");
    add_key(gen, p.flags, "--episodes", "data.episodes", "episode count");
    add_key(gen, p.flags, "--test-episodes", "data.test_episodes", "test episodes");

    auto* pre = app.add_subcommand("pretrain", "stage 1: train the projector on frame descriptions");
    add_common(pre, p.common, true);
    add_key(pre, p.flags, "--data", "paths.data_dir", "corpus directory");
    add_key(pre, p.flags, "--base-lm", "paths.base_lm", "base LM checkpoint");
    add_key(pre, p.flags, "--seed", "train.seed", "training seed");
    add_key(pre, p.flags, "--epochs", "train.epochs", "epochs");
    add_key(pre, p.flags, "--variant", "model.variant", "projector variant");

    auto* fin = app.add_subcommand("finetune", "stage 2: train projector and LoRA adapters on QA");
    add_common(fin, p.common, true);
    add_key(fin, p.flags, "--data", "paths.data_dir", "corpus directory");
    add_key(fin, p.flags, "--stage1", "paths.stage1", "stage-1 checkpoint");
    add_key(fin, p.flags, "--base-lm", "paths.base_lm", "base LM checkpoint");
    add_key(fin, p.flags, "--seed", "train.seed", "training seed");
    add_key(fin, p.flags, "--epochs", "train.epochs", "epochs");
    add_key(fin, p.flags, "--variant", "model.variant", "projector variant");
    fin->add_flag("--ablate-pretraining", p.flags.ablate_pretraining,
                  "start from a fresh projector (train.ablate_pretraining)");

    auto* ev = app.add_subcommand("eval", "score a checkpoint or a predictions file");
    add_common(ev, p.common, true);
    add_key(ev, p.flags, "--data", "paths.data_dir", "corpus directory");
    add_key(ev, p.flags, "--checkpoint", "paths.checkpoint", "model checkpoint");
    add_key(ev, p.flags, "--split", "eval.split", "split to score");
    ev->add_option("--predictions", p.flags.predictions,
                   "JSON lines with category, prediction and answer; replaces --checkpoint");

    auto* ask = app.add_subcommand("ask", "answer one question about one scene");
    add_common(ask, p.common, false);
    add_key(ask, p.flags, "--checkpoint", "paths.checkpoint", "model checkpoint");
    ask->add_option("--scene", p.flags.scene, "scene JSON file")->required();
    ask->add_option("--question", p.flags.question, "question text")->required();

    auto* gc = app.add_subcommand("gradcheck", "central-difference checks of every operator");
    add_common(gc, p.common, false);
    gc->add_option("--seeds", p.flags.gradcheck_seeds, "seeds per operator")->capture_default_str();
    gc->add_option("--op", p.flags.ops, "restrict to these operators (repeatable)");

    auto* ab = app.add_subcommand("ablate", "pretraining and projector ablations");
    add_common(ab, p.common, true);
    add_key(ab, p.flags, "--data", "paths.data_dir", "corpus directory");
    add_key(ab, p.flags, "--base-lm", "paths.base_lm", "base LM checkpoint");
    add_key(ab, p.flags, "--kind", "eval.ablation_kind", "pretraining | projector | both");
    add_key(ab, p.flags, "--seeds", "eval.ablation_seeds", "seed list, e.g. [1,2,3]");
    add_key(ab, p.flags, "--epochs", "train.epochs", "epochs per stage");

    app.footer("\n" + config_help());
  }
};

// ---------------------------------------------------------------------------

std::string json_error(const std::string& kind, const std::string& message, int code) {
  return Json{{"error", kind}, {"message", message}, {"exit_code", code}}.dump();
}

RunConfig resolve_config(const Parsed& p, std::ostream& err) {
  RunConfig cfg = p.common.config_file.empty() ? RunConfig() : RunConfig::from_file(p.common.config_file);
  cfg.apply_env();
  for (const auto& s : p.common.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects section.key=value, got '" + s + "'");
    cfg.set_text(s.substr(0, eq), s.substr(eq + 1), "flag");
  }
  for (const auto& [path, text] : p.flags.values) cfg.set_text(path, text, "flag");
  if (p.flags.ablate_pretraining) cfg.set("train.ablate_pretraining", true, "flag");
  for (const auto& o : cfg.overrides())
    err << "config: " << o.path << " " << o.from.dump() << " -> " << o.to.dump() << " (" << o.source << ")\n";
  return cfg;
}

bool non_empty_dir(const fs::path& p) { return fs::exists(p) && (!fs::is_directory(p) || !fs::is_empty(p)); }

std::string utc_stamp() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y%m%dT%H%M%SZ", &tm);
  return buf;
}

fs::path prepare_out(const Parsed& p, const RunConfig& cfg, const fs::path& fallback) {
  fs::path dir;
  if (!p.common.out.empty()) {
    dir = p.common.out;
    if (non_empty_dir(dir) && !p.common.force)
      throw UsageError("output directory " + dir.string() + " is not empty; pass --force to write into it");
  } else if (!fallback.empty()) {
    dir = fallback;
    if (non_empty_dir(dir) && !p.common.force)
      throw UsageError("output directory " + dir.string() + " is not empty; pass --force to write into it");
  } else {
    const fs::path runs = cfg.get("paths.runs_dir").get<std::string>();
    const std::string base = p.command + "-" + utc_stamp() + "-s" + cfg.get("train.seed").dump();
    dir = runs / base;
    for (int i = 2; fs::exists(dir); ++i) dir = runs / (base + "-" + std::to_string(i));
  }
  fs::create_directories(dir);
  return dir;
}

void write_text(const fs::path& file, const std::string& text) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + file.string());
  out << text;
}

void echo_config(const fs::path& dir, const RunConfig& cfg) {
  write_text(dir / "config.json", cfg.document().dump(2) + "\n");
  Json o = Json::array();
  for (const auto& x : cfg.overrides()) o.push_back({{"key", x.path}, {"from", x.from}, {"to", x.to}, {"source", x.source}});
  write_text(dir / "overrides.json", o.dump(2) + "\n");
}

fs::path require_checkpoint(const RunConfig& cfg, const std::string& key, const std::string& what) {
  const std::string path = cfg.get(key).get<std::string>();
  if (path.empty()) throw MissingCheckpoint(what + " checkpoint not given (" + key + ")");
  if (!fs::is_regular_file(path)) throw MissingCheckpoint(what + " checkpoint " + path + " does not exist");
  return path;
}

langdata::Corpus load_corpus(const RunConfig& cfg) {
  const fs::path dir = cfg.get("paths.data_dir").get<std::string>();
  if (!fs::is_directory(dir)) throw std::runtime_error("corpus directory " + dir.string() + " does not exist");
  return langdata::read_corpus(dir);
}

/// Loads paths.base_lm when set, otherwise warms up a fresh base LM and
/// stores it in `dir`.
lm::MicroLMParams<float> obtain_base_lm(const RunConfig& cfg, const trainer::TrainConfig& tc,
                                        const langdata::Corpus& corpus, const fs::path& dir, std::ostream& err) {
  if (!cfg.get("paths.base_lm").get<std::string>().empty()) {
    const auto path = require_checkpoint(cfg, "paths.base_lm", "base LM");
    return trainer::base_lm_from_checkpoint(numcore::load_checkpoint(path), corpus.vocab);
  }
  err << "warming up the base LM (" << tc.lm_warmup_epochs << " epochs)\n" << std::flush;
  trainer::TrainLog log;
  auto lm = trainer::warmup_lm(tc, corpus, &log);
  numcore::save_checkpoint(dir / "base_lm.ckpt", trainer::base_lm_checkpoint(lm, corpus.vocab));
  log.write_jsonl(dir / "warmup_log.jsonl");
  return lm;
}

std::string losses(const std::vector<double>& v) {
  Json j = Json::array();
  for (double x : v) j.push_back(std::round(x * 1e4) / 1e4);
  return j.dump();
}

// ---------------------------------------------------------------------------
// Commands

int cmd_gen(const Parsed& p, const RunConfig& cfg, std::ostream& out) {
  const auto cc = cfg.corpus();
  const fs::path dir = prepare_out(p, cfg, cfg.get("paths.data_dir").get<std::string>());
  const auto corpus = langdata::build_corpus(cc);
  langdata::write_corpus(corpus, dir);
  echo_config(dir, cfg);
  Json counts = Json::object();
  for (const auto& [c, n] : langdata::category_counts(corpus.qa)) counts[std::string(scenesim::category_name(c))] = n;
  out << Json{{"out", dir.string()},
              {"episodes", corpus.episodes.size()},
              {"descriptions", corpus.pretrain.size()},
              {"qa", corpus.qa.size()},
              {"per_category", counts}}
             .dump()
      << '\n';
  return kExitOk;
}

int cmd_pretrain(const Parsed& p, const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  const auto tc = cfg.train();
  const auto corpus = load_corpus(cfg);
  const fs::path dir = prepare_out(p, cfg, {});
  echo_config(dir, cfg);
  for (const auto& w : tc.warnings()) err << "warning: " << w << '\n';
  auto base = obtain_base_lm(cfg, tc, corpus, dir, err);
  auto r = trainer::pretrain(tc, corpus, base);
  r.log.write_jsonl(dir / "train_log.jsonl");
  trainer::Model m{corpus.vocab, bevenc::FrozenEncoderParams::canonical(), base, r.proj, std::nullopt};
  numcore::save_checkpoint(dir / "stage1.ckpt", trainer::model_checkpoint(m));
  out << Json{{"out", dir.string()},
              {"checkpoint", (dir / "stage1.ckpt").string()},
              {"epoch_mean_loss", Json::parse(losses(r.log.epoch_mean_loss))},
              {"best_epoch", r.log.best_epoch},
              {"wall_seconds", r.log.wall_seconds}}
             .dump()
      << '\n';
  return kExitOk;
}

int cmd_finetune(const Parsed& p, const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  const auto tc = cfg.train();
  const auto corpus = load_corpus(cfg);
  std::optional<trainer::Model> stage1;
  if (!tc.ablate_pretraining) {
    const auto path = require_checkpoint(cfg, "paths.stage1", "stage-1");
    stage1 = trainer::model_from_checkpoint(numcore::load_checkpoint(path), corpus.vocab);
    if (stage1->proj.config.variant != tc.variant)
      throw ConfigError("model.variant is " + std::string(projector::variant_name(tc.variant)) +
                        " but the stage-1 checkpoint holds " +
                        std::string(projector::variant_name(stage1->proj.config.variant)));
  }
  const fs::path dir = prepare_out(p, cfg, {});
  echo_config(dir, cfg);
  for (const auto& w : tc.warnings()) err << "warning: " << w << '\n';
  auto base = stage1 ? stage1->lm : obtain_base_lm(cfg, tc, corpus, dir, err);
  auto r = trainer::finetune(tc, corpus, base, stage1 ? &stage1->proj : nullptr);
  r.log.write_jsonl(dir / "train_log.jsonl");
  trainer::Model m{corpus.vocab, bevenc::FrozenEncoderParams::canonical(), base, r.proj, r.lora};
  numcore::save_checkpoint(dir / "model.ckpt", trainer::model_checkpoint(m));
  out << Json{{"out", dir.string()},
              {"checkpoint", (dir / "model.ckpt").string()},
              {"epoch_mean_loss", Json::parse(losses(r.log.epoch_mean_loss))},
              {"best_epoch", r.log.best_epoch},
              {"wall_seconds", r.log.wall_seconds}}
             .dump()
      << '\n';
  return kExitOk;
}

std::vector<trainer::Prediction> read_predictions(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw std::runtime_error("cannot read predictions file " + file.string());
  std::vector<trainer::Prediction> out;
  std::string line;
  for (int n = 1; std::getline(in, line); ++n) {
    if (line.empty()) continue;
    try {
      const auto j = Json::parse(line);
      trainer::Prediction p;
      const auto cat = scenesim::parse_category(j.at("category").get<std::string>());
      if (!cat) throw std::invalid_argument("unknown category");
      p.item.category = *cat;
      p.item.gold_answer = j.at("answer").get<std::string>();
      p.item.question = j.value("question", "");
      p.item.episode_id = j.value("episode_id", 0);
      p.item.frame_index = j.value("frame_index", 0);
      p.prediction = j.at("prediction").get<std::string>();
      out.push_back(std::move(p));
    } catch (const std::exception& e) {
      throw std::runtime_error(file.string() + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

int cmd_eval(const Parsed& p, const RunConfig& cfg, std::ostream& out) {
  std::vector<trainer::Prediction> preds;
  if (!p.flags.predictions.empty()) {
    preds = read_predictions(p.flags.predictions);
  } else {
    const auto path = require_checkpoint(cfg, "paths.checkpoint", "model");
    const auto corpus = load_corpus(cfg);
    const auto model = trainer::model_from_checkpoint(numcore::load_checkpoint(path), corpus.vocab);
    preds = trainer::predict(model, corpus, cfg.get("eval.split").get<std::string>(),
                             cfg.get("eval.max_new_tokens").get<int>());
  }
  const fs::path dir = prepare_out(p, cfg, {});
  echo_config(dir, cfg);
  std::ostringstream lines;
  for (const auto& x : preds)
    lines << Json{{"episode_id", x.item.episode_id},
                  {"frame_index", x.item.frame_index},
                  {"category", scenesim::category_name(x.item.category)},
                  {"question", x.item.question},
                  {"prediction", x.prediction},
                  {"answer", x.item.gold_answer}}
                 .dump()
          << '\n';
  write_text(dir / "predictions.jsonl", lines.str());
  const auto report = trainer::score(preds);
  write_text(dir / "report.json", report.to_json() + "\n");
  write_text(dir / "report.txt", report.to_table());
  out << report.to_table() << "out: " << dir.string() << '\n';
  return kExitOk;
}

int cmd_ask(const Parsed& p, const RunConfig& cfg, std::ostream& out) {
  const auto path = require_checkpoint(cfg, "paths.checkpoint", "model");
  std::ifstream in(p.flags.scene);
  if (!in) throw std::runtime_error("cannot read scene file " + p.flags.scene);
  std::stringstream buf;
  buf << in.rdbuf();
  const auto scene = langdata::scene_from_json(buf.str());
  langdata::Vocab vocab = langdata::Vocab::standard();
  const fs::path vocab_file = fs::path(cfg.get("paths.data_dir").get<std::string>()) / "vocab.json";
  if (fs::is_regular_file(vocab_file)) vocab = langdata::read_vocab(vocab_file);
  const auto model = trainer::model_from_checkpoint(numcore::load_checkpoint(path), vocab);
  out << trainer::answer(model, scene, p.flags.question, cfg.get("eval.max_new_tokens").get<int>()) << '\n';
  return kExitOk;
}

int cmd_gradcheck(const Parsed& p, std::ostream& out, std::ostream& err) {
  trainer::GradSuiteConfig gc;
  gc.seeds = p.flags.gradcheck_seeds;
  if (gc.seeds < 1) throw UsageError("--seeds must be >= 1");
  std::vector<trainer::GradCheckRow> rows;
  try {
    rows = trainer::run_gradcheck_suite(gc, p.flags.ops);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  std::vector<std::string> failed;
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%-24s max_rel_err %.3e  seeds %d  shapes %d  elements %zu  %s\n", r.op.c_str(),
                  r.max_relative_error, r.seeds, r.shapes, r.elements, r.passed ? "ok" : "FAIL");
    out << buf;
    if (!r.passed) failed.push_back(r.op);
  }
  if (!failed.empty()) {
    std::string names;
    for (const auto& f : failed) names += (names.empty() ? "" : ", ") + f;
    err << json_error("runtime", "gradient check above 1e-4 for: " + names, kExitRuntime) << '\n';
    return kExitRuntime;
  }
  return kExitOk;
}

int cmd_ablate(const Parsed& p, const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  const auto tc = cfg.train();
  const auto seeds = cfg.ablation_seeds();
  const auto kind = cfg.get("eval.ablation_kind").get<std::string>();
  if (kind != "pretraining" && kind != "projector" && kind != "both")
    throw ConfigError("eval.ablation_kind must be pretraining, projector or both");
  const auto corpus = load_corpus(cfg);
  const fs::path dir = prepare_out(p, cfg, {});
  echo_config(dir, cfg);
  const auto base = obtain_base_lm(cfg, tc, corpus, dir, err);
  trainer::AblationMemo memo;
  auto run_one = [&](trainer::AblationKind k, const std::string& name) {
    const auto rep = trainer::run_ablation(k, tc, corpus, seeds, &base, &memo, &err);
    write_text(dir / ("ablation_" + name + ".json"), rep.to_json() + "\n");
    write_text(dir / ("ablation_" + name + ".txt"), rep.to_table());
    out << rep.to_table() << '\n';
  };
  if (kind != "projector") run_one(trainer::AblationKind::kPretraining, "pretraining");
  if (kind != "pretraining") run_one(trainer::AblationKind::kProjector, "projector");
  out << "out: " << dir.string() << '\n';
  return kExitOk;
}

}  // namespace

std::string help_text() {
  AppHolder h;
  return h.app.help();
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  AppHolder h;
  try {
    h.app.parse(std::vector<std::string>(args.rbegin(), args.rend()));
  } catch (const CLI::CallForHelp&) {
    out << h.app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << h.app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    // Subcommand help arrives as CallForHelp raised from the subcommand.
    err << json_error("usage", e.what(), kExitSchema) << '\n';
    return kExitSchema;
  }
  if (h.app.get_subcommands().empty()) {
    out << h.app.help();
    return kExitSchema;
  }
  h.p.command = h.app.get_subcommands().front()->get_name();
  const auto& p = h.p;
  try {
    if (p.command == "gradcheck") return cmd_gradcheck(p, out, err);
    const RunConfig cfg = resolve_config(p, err);
    if (p.command == "gen") return cmd_gen(p, cfg, out);
    if (p.command == "pretrain") return cmd_pretrain(p, cfg, out, err);
    if (p.command == "finetune") return cmd_finetune(p, cfg, out, err);
    if (p.command == "eval") return cmd_eval(p, cfg, out);
    if (p.command == "ask") return cmd_ask(p, cfg, out);
    if (p.command == "ablate") return cmd_ablate(p, cfg, out, err);
    throw UsageError("unknown command " + p.command);
  } catch (const ConfigError& e) {
    err << json_error("schema", e.what(), kExitSchema) << '\n';
    return kExitSchema;
  } catch (const UsageError& e) {
    err << json_error("usage", e.what(), kExitSchema) << '\n';
    return kExitSchema;
  } catch (const MissingCheckpoint& e) {
    err << json_error("missing_checkpoint", e.what(), kExitMissingCheckpoint) << '\n';
    return kExitMissingCheckpoint;
  } catch (const std::exception& e) {
    err << json_error("runtime", e.what(), kExitRuntime) << '\n';
    return kExitRuntime;
  }
}

}  // namespace bella::cli

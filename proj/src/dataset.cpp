// Copyright 2026 The bella Authors
// SPDX-License-Identifier: Apache-2.0

#include "bella/langdata/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <json.hpp>
#include <sstream>
#include <stdexcept>

#include "bella/numcore/rng.hpp"

namespace bella::langdata {

using json = nlohmann::ordered_json;
using scenesim::Actor;
using scenesim::Episode;
using scenesim::QAItem;
using scenesim::Scene;

namespace {

// Salts for the per-frame generators derived from an episode seed.
constexpr std::uint64_t kDescribeSalt = 0x1000;
constexpr std::uint64_t kQaSalt = 0x2000;
constexpr std::uint64_t kPickSalt = 0x3000;

json actor_json(const Actor& a) {
  return {{"id", a.id},     {"class", scenesim::class_name(a.cls)}, {"x", a.x}, {"y", a.y}, {"vx", a.vx},
          {"vy", a.vy},     {"status", scenesim::status_name(a.status)}};
}

json scene_json(const Scene& s) {
  json actors = json::array();
  for (const auto& a : s.actors) actors.push_back(actor_json(a));
  return {{"frame_index", s.frame_index}, {"ego_speed", s.ego_speed}, {"actors", std::move(actors)}};
}

Actor actor_from(const json& j) {
  Actor a;
  a.id = j.at("id").get<int>();
  const auto cls = scenesim::parse_class(j.at("class").get<std::string>());
  const auto st = scenesim::parse_status(j.at("status").get<std::string>());
  if (!cls) throw std::runtime_error("unknown actor class " + j.at("class").dump());
  if (!st) throw std::runtime_error("unknown actor status " + j.at("status").dump());
  a.cls = *cls;
  a.status = *st;
  a.x = j.at("x").get<double>();
  a.y = j.at("y").get<double>();
  a.vx = j.at("vx").get<double>();
  a.vy = j.at("vy").get<double>();
  return a;
}

Scene scene_from(const json& j) {
  Scene s;
  s.frame_index = j.at("frame_index").get<int>();
  s.ego_speed = j.at("ego_speed").get<double>();
  for (const auto& a : j.at("actors")) s.actors.push_back(actor_from(a));
  return s;
}

template <typename F>
void for_each_line(const std::filesystem::path& file, F&& f) {
  std::ifstream in(file);
  if (!in) throw std::runtime_error("cannot open " + file.string());
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      f(json::parse(line));
    } catch (const std::exception& e) {
      throw std::runtime_error(file.filename().string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

void write_lines(const std::filesystem::path& file, const std::vector<json>& lines) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + file.string());
  for (const auto& l : lines) out << l.dump() << '\n';
}

std::string split_of(int episode_id, const CorpusConfig& cfg) {
  return episode_id >= cfg.episodes - cfg.test_episodes ? std::string(kTest) : std::string(kTrain);
}

}  // namespace

const Scene& Corpus::scene(int episode_id, int frame_index) const {
  for (const auto& e : episodes)
    if (e.episode_id == episode_id)
      for (const auto& s : e.scenes)
        if (s.frame_index == frame_index) return s;
  throw std::out_of_range("no scene for episode " + std::to_string(episode_id) + " frame " +
                          std::to_string(frame_index));
}

std::uint64_t episode_seed(std::uint64_t corpus_seed, int episode_id) {
  return SplitMix64::derive(corpus_seed, static_cast<std::uint64_t>(episode_id));
}

Corpus build_corpus(const CorpusConfig& cfg) {
  if (cfg.episodes < 0 || cfg.test_episodes < 0 || cfg.test_episodes > cfg.episodes)
    throw std::invalid_argument("corpus: need 0 <= test_episodes <= episodes");
  if (cfg.qa_per_frame < 0) throw std::invalid_argument("corpus: qa_per_frame must be >= 0");
  Corpus c;
  for (int id = 0; id < cfg.episodes; ++id) {
    const auto seed = episode_seed(cfg.seed, id);
    auto ep = scenesim::gen_episode(seed, cfg.generator, id);
    const auto split = split_of(id, cfg);
    for (const auto& s : subsample(ep)) {
      const auto f = static_cast<std::uint64_t>(s.frame_index);
      c.pretrain.push_back({id, s.frame_index, describe(s, SplitMix64::derive(seed, kDescribeSalt + f)), split});
      auto items = make_qa(s, SplitMix64::derive(seed, kQaSalt + f), 1, id);
      SplitMix64 pick(SplitMix64::derive(seed, kPickSalt + f));
      pick.shuffle(items.begin(), items.end());
      const auto keep = std::min<std::size_t>(items.size(), static_cast<std::size_t>(cfg.qa_per_frame));
      items.resize(keep);
      std::stable_sort(items.begin(), items.end(),
                       [](const QAItem& a, const QAItem& b) { return a.category < b.category; });
      for (auto& it : items) c.qa.push_back({std::move(it), split});
    }
    c.episodes.push_back(std::move(ep));
  }
  return c;
}

void write_corpus(const Corpus& c, const std::filesystem::path& dir) {
  std::vector<json> lines;
  for (const auto& e : c.episodes) {
    json scenes = json::array();
    for (const auto& s : e.scenes) scenes.push_back(scene_json(s));
    lines.push_back({{"episode_id", e.episode_id}, {"seed", e.seed}, {"scenes", std::move(scenes)}});
  }
  write_lines(dir / "scenes.jsonl", lines);

  lines.clear();
  for (const auto& d : c.pretrain)
    lines.push_back({{"episode_id", d.episode_id},
                     {"frame_index", d.frame_index},
                     {"description", d.description},
                     {"split", d.split}});
  write_lines(dir / "pretrain.jsonl", lines);

  lines.clear();
  for (const auto& r : c.qa)
    lines.push_back({{"episode_id", r.item.episode_id},
                     {"frame_index", r.item.frame_index},
                     {"category", scenesim::category_name(r.item.category)},
                     {"question", r.item.question},
                     {"answer", r.item.gold_answer},
                     {"split", r.split}});
  write_lines(dir / "qa.jsonl", lines);

  std::ofstream out(dir / "vocab.json", std::ios::binary);
  if (!out) throw std::runtime_error("cannot write vocab.json");
  out << json(c.vocab.tokens()).dump() << '\n';
}

std::vector<Episode> read_scenes(const std::filesystem::path& file) {
  std::vector<Episode> out;
  for_each_line(file, [&](const json& j) {
    Episode e;
    e.episode_id = j.at("episode_id").get<int>();
    e.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& s : j.at("scenes")) e.scenes.push_back(scene_from(s));
    out.push_back(std::move(e));
  });
  return out;
}

std::vector<DescriptionSample> read_pretrain(const std::filesystem::path& file) {
  std::vector<DescriptionSample> out;
  for_each_line(file, [&](const json& j) {
    out.push_back({j.at("episode_id").get<int>(), j.at("frame_index").get<int>(),
                   j.at("description").get<std::string>(), j.value("split", std::string(kTrain))});
  });
  return out;
}

std::vector<QARecord> read_qa(const std::filesystem::path& file) {
  std::vector<QARecord> out;
  for_each_line(file, [&](const json& j) {
    const auto cat = scenesim::parse_category(j.at("category").get<std::string>());
    if (!cat) throw std::runtime_error("unknown category " + j.at("category").dump());
    QAItem it{j.at("episode_id").get<int>(), j.at("frame_index").get<int>(), *cat,
              j.at("question").get<std::string>(), j.at("answer").get<std::string>()};
    out.push_back({std::move(it), j.value("split", std::string(kTrain))});
  });
  return out;
}

Vocab read_vocab(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw std::runtime_error("cannot open " + file.string());
  return Vocab::from_tokens(json::parse(in).get<std::vector<std::string>>());
}

Corpus read_corpus(const std::filesystem::path& dir) {
  Corpus c;
  c.episodes = read_scenes(dir / "scenes.jsonl");
  c.pretrain = read_pretrain(dir / "pretrain.jsonl");
  c.qa = read_qa(dir / "qa.jsonl");
  c.vocab = read_vocab(dir / "vocab.json");
  return c;
}

std::string scene_to_json(const Scene& scene) { return scene_json(scene).dump(); }

Scene scene_from_json(const std::string& text) { return scene_from(json::parse(text)); }

std::map<scenesim::Category, int> category_counts(const std::vector<QARecord>& qa) {
  std::map<scenesim::Category, int> out;
  for (auto c : scenesim::kAllCategories) out[c] = 0;
  for (const auto& r : qa) ++out[r.item.category];
  return out;
}

}  // namespace bella::langdata

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "doctest.h"
#include "driftfield/common.hpp"
#include "driftfield/corpus.hpp"
#include "driftfield/pipeline.hpp"
#include "driftfield/randix.hpp"

using namespace driftfield;
using namespace driftfield::pipeline;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const char* const kTopics[4][12] = {
    {"dog", "cat", "horse", "cow", "sheep", "goat", "pig", "rabbit", "mouse", "wolf", "fox", "bear"},
    {"bread", "cheese", "butter", "apple", "banana", "orange", "grape", "rice", "soup", "salad", "pasta", "cake"},
    {"car", "truck", "bus", "train", "bicycle", "boat", "ship", "plane", "taxi", "tractor", "van", "wagon"},
    {"hammer", "saw", "drill", "wrench", "chisel", "knife", "axe", "shovel", "rake", "pliers", "screwdriver", "ladder"},
};

// Fresh directory under the system temp dir, removed on scope exit.
struct Workspace {
  fs::path dir;
  explicit Workspace(const std::string& name) : dir(fs::temp_directory_path() / ("driftfield-pipe-" + name)) {
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  ~Workspace() { fs::remove_all(dir); }
};

void write_text(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// Topic documents with strictly increasing timestamps.
void write_topic_corpus(const fs::path& path, std::size_t docs, std::uint64_t seed) {
  Rng rng(seed);
  std::ofstream out(path);
  for (std::size_t i = 0; i < docs; ++i) {
    const auto topic = rng.below(4);
    std::string text;
    for (int w = 0; w < 15; ++w) {
      const auto t = rng.uniform() < 0.85 ? topic : rng.below(4);
      text += std::string(kTopics[t][rng.below(12)]) + (w % 5 == 4 ? ". " : " ");
    }
    out << json{{"id", "doc" + std::to_string(i)}, {"time", 1000000000 + 3600 * static_cast<std::int64_t>(i)},
                {"text", text}}
                .dump()
        << '\n';
  }
}

json small_config(const std::string& output_dir = "out") {
  return json{{"input", "corpus.jsonl"},
              {"n_periods", 3},
              {"max_timestamp", 1500000000},
              {"min_df", 2},
              {"dimension", 64},
              {"nonzeros", 6},
              {"grid_rows", 4},
              {"grid_cols", 5},
              {"train", {{"epochs", 6}, {"lr_start", 1.0}, {"lr_end", 0.5}}},
              {"continuation", {{"epochs", 3}, {"radius_start", 2.0}, {"lr_start", 0.5}, {"lr_end", 0.5}}},
              {"wordnet_dir", DRIFTFIELD_WORDNET_DIR},
              {"baseline_samples", 1000},
              {"thresholds", {2, 3, 5}},
              {"output_dir", output_dir}};
}

PipelineConfig config_in(const Workspace& ws, json j = small_config()) {
  return PipelineConfig::from_json(j, ws.dir);
}

json manifest_of(const PipelineConfig& c) { return json::parse(read_text(c.output_path() / "manifest.json")); }

// Relative path -> bytes for every file under `root` except timing.json.
std::map<std::string, std::string> snapshot(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file() || e.path().filename() == "timing.json") continue;
    files[fs::relative(e.path(), root).string()] = read_text(e.path());
  }
  return files;
}

int cli(const std::string& args) {
  const std::string cmd = std::string(DRIFTFIELD_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("config: unknown keys, wrong types and invalid values are rejected") {
  auto j = small_config();
  j["dimensions"] = 64;
  CHECK_THROWS_AS(PipelineConfig::from_json(j), ConfigError);
  j = small_config();
  j["dimension"] = "64";
  CHECK_THROWS_AS(PipelineConfig::from_json(j), ConfigError);
  j = small_config();
  j["n_periods"] = -3;
  CHECK_THROWS_AS(PipelineConfig::from_json(j), ConfigError);
  j = small_config();
  j["train"]["epoch"] = 3;
  CHECK_THROWS_AS(PipelineConfig::from_json(j), ConfigError);

  const std::pair<const char*, json> invalid[] = {
      {"nonzeros", 7},       {"nonzeros", 0},        {"grid_rows", 1},          {"cluster_size", 1},
      {"alphas", {0.05, 1}}, {"thresholds", {1}},    {"baseline_samples", 999}, {"test_mode", "chi"},
      {"format", "xml"},     {"training_mode", "x"}, {"n_periods", 0},
  };
  for (const auto& [key, value] : invalid) {
    j = small_config();
    j[key] = value;
    INFO(key);
    CHECK_THROWS_AS(PipelineConfig::from_json(j), ConfigError);
  }
  // Continuation may not start above the initial run's final learning rate.
  j = small_config();
  j["continuation"]["lr_start"] = 0.6;
  CHECK_THROWS_AS(PipelineConfig::from_json(j), ConfigError);
}

TEST_CASE("config: hash covers results only; paths resolve against the config directory") {
  const auto a = PipelineConfig::from_json(small_config());
  auto j = small_config("elsewhere");
  j["workers"] = 3;
  const auto b = PipelineConfig::from_json(j);
  CHECK(a.hash() == b.hash());
  j["dimension"] = 32;
  CHECK(PipelineConfig::from_json(j).hash() != a.hash());
  CHECK(a.canonical().at("train").at("epochs") == 6);
  CHECK(a.test_mode == "empirical");

  const auto c = PipelineConfig::from_json(small_config(), "/data/run");
  CHECK(c.resolve("corpus.jsonl") == fs::path("/data/run/corpus.jsonl"));
  CHECK(c.resolve("/abs/x") == fs::path("/abs/x"));

  Workspace ws("cfgfile");
  write_text(ws.dir / "c.json", small_config().dump());
  CHECK(PipelineConfig::load(ws.dir / "c.json").output_path() == ws.dir / "out");
  write_text(ws.dir / "bad.json", "{ not json");
  CHECK_THROWS_AS(PipelineConfig::load(ws.dir / "bad.json"), ConfigError);
  CHECK_THROWS_AS(PipelineConfig::load(ws.dir / "missing.json"), ConfigError);
}

TEST_CASE("ingest: period split, degenerate records and stable artifacts") {
  Workspace ws("ingest");
  std::string lines;
  for (int i = 0; i < 9; ++i) {
    lines += json{{"id", "r" + std::to_string(i)}, {"time", 1000 + i}, {"text", "dog cat and the horse"}}.dump() + "\n";
  }
  lines += json{{"id", "zero"}, {"time", 0}, {"text", "dog cat"}}.dump() + "\n";
  lines += json{{"id", "future"}, {"time", 2000000000}, {"text", "dog cat"}}.dump() + "\n";
  lines += json{{"id", "r3"}, {"time", 5}, {"text", "duplicate id"}}.dump() + "\n";
  lines += "{\"id\": 1}\n";
  write_text(ws.dir / "corpus.jsonl", lines);
  const auto config = config_in(ws);
  cmd_ingest(config);

  const auto m = manifest_of(config);
  const auto& stage = m.at("stages").at("ingest");
  CHECK(stage.at("parsed") == 11);
  CHECK(stage.at("dropped_count") == 2);
  CHECK(stage.at("duplicates") == 1);
  CHECK(stage.at("skipped") == 1);
  REQUIRE(stage.at("periods").size() == 3);
  for (std::size_t p = 0; p < 3; ++p) {
    CHECK(stage.at("periods")[p].at("index") == p);
    CHECK(stage.at("periods")[p].at("documents") == 3);
    CHECK(stage.at("periods")[p].at("terms") == 3);  // dog, cat, horse; "and"/"the" are stopwords
  }
  CHECK(stage.at("periods")[2].at("end_timestamp") == 1008);

  std::ifstream vocab_in(config.output_path() / vocab_artifact(0));
  const auto vocab = corpus::read_vocabulary(vocab_in);
  CHECK(vocab.terms == std::vector<std::string>{"cat", "dog", "horse"});
  std::ifstream matrix_in(config.output_path() / matrix_artifact(0));
  std::string hash;
  const auto matrix = corpus::read_matrix(matrix_in, &hash);
  CHECK(hash == config.hash());
  CHECK(matrix.n_docs == 3);
  // Every term occurs in every document: idf = ln(3/3) = 0.
  for (double w : matrix.weights) CHECK(w == 0.0);

  const auto first = snapshot(config.output_path());
  cmd_ingest(config);
  CHECK(snapshot(config.output_path()) == first);
  for (const auto& [rel, sum] : manifest_of(config).at("stages").at("ingest").at("outputs").items()) {
    CHECK(checksum_file(config.output_path() / rel) == sum.get<std::string>());
  }
}

TEST_CASE("full run: artifacts, manifest bookkeeping and continued training") {
  Workspace ws("full");
  write_topic_corpus(ws.dir / "corpus.jsonl", 600, 1);
  const auto config = config_in(ws);
  cmd_run(config);
  const auto m = manifest_of(config);
  CHECK(m.at("config_hash") == config.hash());
  CHECK(m.at("seeds").at("global_seed") == 42);
  for (const char* stage : {"ingest", "embed", "train", "evaluate", "drift"}) {
    INFO(stage);
    REQUIRE(m.at("stages").contains(stage));
    for (const auto& [rel, sum] : m.at("stages").at(stage).at("outputs").items()) {
      CHECK(checksum_file(config.output_path() / rel) == sum.get<std::string>());
    }
  }
  CHECK(m.dump().find("seconds") == std::string::npos);
  CHECK(fs::exists(config.output_path() / "timing.json"));

  const auto& train = m.at("stages").at("train").at("periods");
  REQUIRE(train.size() == 3);
  CHECK(train[0].at("epoch") == 6);
  CHECK(train[1].at("epoch") == 9);
  CHECK(train[2].at("epoch") == 12);
  CHECK_FALSE(train[0].at("continued").get<bool>());
  CHECK(train[1].at("continued").get<bool>());
  for (const auto& p : train) CHECK(p.at("quantization_error_after") < p.at("quantization_error_before"));

  // Embed artifacts equal a direct library computation.
  std::ifstream vocab_in(config.output_path() / vocab_artifact(1));
  const auto vocab = corpus::read_vocabulary(vocab_in);
  std::ifstream matrix_in(config.output_path() / matrix_artifact(1));
  const auto matrix = corpus::read_matrix(matrix_in);
  const auto direct = randix::build_term_space(matrix, vocab.terms, 42, 64, 6, 1);
  std::ifstream space_in(config.output_path() / space_artifact(1), std::ios::binary);
  const auto stored = randix::read_term_space(space_in);
  CHECK(stored.terms == direct.terms);
  CHECK(stored.vectors == direct.vectors);

  const auto report = json::parse(read_text(config.output_path() / "evaluate/report.json"));
  CHECK(report.at("test_mode") == "empirical");
  REQUIRE(report.at("periods").size() == 3);
  for (const auto& p : report.at("periods")) {
    CHECK(p.at("cells").size() == 9);
    CHECK(p.at("baseline").at("sigma0") > 0.0);
  }
  // Topic neurons should beat random clusters.
  const auto& cell = report.at("periods")[0].at("cells")[0];
  CHECK(cell.at("rate").get<double>() > cell.at("alpha").get<double>());

  const auto comparisons = read_text(config.output_path() / "drift/comparisons.csv");
  CHECK(std::count(comparisons.begin(), comparisons.end(), '\n') == 1 + 2 * 9);
  const auto& drift = m.at("stages").at("drift").at("periods");
  REQUIRE(drift.size() == 2);
  CHECK(drift[0].at("before") == 0);
  CHECK(drift[1].at("after") == 2);
}

TEST_CASE("reproducibility: reruns and worker counts give identical bytes") {
  Workspace ws("repro");
  write_topic_corpus(ws.dir / "corpus.jsonl", 400, 2);
  auto j = small_config("one");
  j["workers"] = 1;
  const auto one = config_in(ws, j);
  j["output_dir"] = "four";
  j["workers"] = 4;
  const auto four = config_in(ws, j);
  cmd_run(one);
  cmd_run(four);
  const auto a = snapshot(one.output_path());
  CHECK(a == snapshot(four.output_path()));
  fs::remove_all(one.output_path());
  cmd_run(one);
  CHECK(snapshot(one.output_path()) == a);
}

TEST_CASE("stage isolation: missing, tampered and stale inputs") {
  Workspace ws("isolation");
  write_topic_corpus(ws.dir / "corpus.jsonl", 300, 3);
  const auto config = config_in(ws);
  CHECK_THROWS_AS(cmd_embed(config), DataError);
  cmd_ingest(config);
  cmd_embed(config);
  CHECK_THROWS_AS(cmd_evaluate(config), DataError);

  {
    std::fstream f(config.output_path() / space_artifact(1), std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(-1, std::ios::end);
    f.put('\x7f');
  }
  try {
    cmd_train(config);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("driftfield embed") != std::string::npos);
  }
  cmd_embed(config);
  cmd_train(config);

  // A full rerun of an earlier stage invalidates every later stage.
  cmd_ingest(config);
  const auto m = manifest_of(config);
  CHECK(m.at("stages").contains("ingest"));
  CHECK_FALSE(m.at("stages").contains("embed"));
  CHECK_FALSE(m.at("stages").contains("train"));
}

TEST_CASE("period reruns merge; mismatched seeds block drift") {
  Workspace ws("period");
  write_topic_corpus(ws.dir / "corpus.jsonl", 300, 4);
  const auto config = config_in(ws);
  cmd_run(config);
  const auto before = snapshot(config.output_path());

  RunOptions only1;
  only1.period = 1;
  cmd_embed(config, only1);
  CHECK(snapshot(config.output_path()) == before);
  CHECK(manifest_of(config).at("stages").at("embed").at("periods").size() == 3);

  auto j = small_config();
  j["global_seed"] = 43;
  const auto reseeded = config_in(ws, j);
  cmd_embed(reseeded, only1);
  const auto m = manifest_of(config);
  CHECK_FALSE(m.at("stages").at("embed").at("comparable").get<bool>());
  CHECK(m.at("stages").at("embed").at("periods")[1].at("global_seed") == 43);
  CHECK_THROWS_AS(cmd_drift(config), ConfigError);

  RunOptions bad;
  bad.period = 3;
  CHECK_THROWS_AS(cmd_embed(config, bad), ConfigError);
  bad.period = 0;
  CHECK_THROWS_AS(cmd_drift(config, bad), ConfigError);
}

TEST_CASE("single period: no continuation and no drift") {
  Workspace ws("single");
  write_topic_corpus(ws.dir / "corpus.jsonl", 200, 5);
  auto j = small_config();
  j["n_periods"] = 1;
  const auto config = config_in(ws, j);
  cmd_run(config);
  const auto m = manifest_of(config);
  CHECK_FALSE(m.at("stages").contains("drift"));
  CHECK(m.at("stages").at("train").at("periods")[0].at("epoch") == 6);
  CHECK_THROWS_AS(cmd_drift(config), ConfigError);
}

TEST_CASE("output lock excludes concurrent runs") {
  Workspace ws("lock");
  write_topic_corpus(ws.dir / "corpus.jsonl", 100, 6);
  const auto config = config_in(ws);
  {
    OutputLock held(config.output_path());
    CHECK_THROWS_AS(cmd_ingest(config), ConfigError);
    CHECK_THROWS_AS(OutputLock(config.output_path()), ConfigError);
  }
  cmd_ingest(config);
  CHECK_FALSE(fs::exists(config.output_path() / ".driftfield.lock"));
}

TEST_CASE("cli: exit codes") {
  Workspace ws("cli");
  write_topic_corpus(ws.dir / "corpus.jsonl", 300, 7);
  const auto cfg = (ws.dir / "config.json").string();
  write_text(cfg, small_config().dump(2));
  CHECK(cli("--version") == 0);
  CHECK(cli("") == 1);
  CHECK(cli("run") == 1);
  CHECK(cli("run -c " + cfg) == 0);
  CHECK(cli("drift -c " + cfg + " --period 2") == 0);
  CHECK(cli("ingest -c " + cfg + " --period 1") == 1);

  auto j = small_config();
  j["colour"] = "blue";
  write_text(ws.dir / "unknown.json", j.dump());
  CHECK(cli("run -c " + (ws.dir / "unknown.json").string()) == 1);
  j = small_config("fresh");
  j["input"] = "absent.jsonl";
  write_text(ws.dir / "absent.json", j.dump());
  CHECK(cli("ingest -c " + (ws.dir / "absent.json").string()) == 2);
  CHECK(cli("evaluate -c " + (ws.dir / "absent.json").string()) == 2);
}

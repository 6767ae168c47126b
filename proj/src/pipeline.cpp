#include "driftfield/pipeline.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>

#include "driftfield/common.hpp"
#include "driftfield/randix.hpp"
#include "driftfield/wordnet.hpp"

namespace driftfield::pipeline {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr const char* kManifestName = "manifest.json";
constexpr const char* kTimingName = "timing.json";
constexpr const char* kLockName = ".driftfield.lock";
const std::vector<std::string> kStages = {"ingest", "embed", "train", "evaluate", "drift"};

// Consumes keys of one JSON object; anything left over is a typo.
class KeyReader {
 public:
  KeyReader(const json& obj, std::string where) : obj_(obj), where_(std::move(where)) {
    if (!obj_.is_object()) throw ConfigError(where_ + " must be a JSON object");
  }

  const json* take(const std::string& key) {
    const auto it = obj_.find(key);
    if (it == obj_.end()) return nullptr;
    used_.insert(key);
    return &*it;
  }

  template <typename T>
  void read(const std::string& key, T& out) {
    const json* v = take(key);
    if (!v) return;
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!v->is_boolean()) throw ConfigError("");
      } else if constexpr (std::is_integral_v<T>) {
        if (!v->is_number_integer()) throw ConfigError("");
        if constexpr (std::is_unsigned_v<T>) {
          if (!v->is_number_unsigned() && v->get<std::int64_t>() < 0) throw ConfigError("");
        }
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!v->is_number()) throw ConfigError("");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v->is_string()) throw ConfigError("");
      }
      out = v->get<T>();
    } catch (const std::exception&) {
      throw ConfigError(where_ + ": key '" + key + "' has the wrong type");
    }
  }

  void finish() const {
    for (const auto& [key, value] : obj_.items()) {
      if (!used_.contains(key)) throw ConfigError(where_ + ": unknown key '" + key + "'");
    }
  }

  const std::string& where() const { return where_; }

 private:
  const json& obj_;
  std::string where_;
  std::set<std::string> used_;
};

ScheduleConfig read_schedule(const json& j, ScheduleConfig schedule, const std::string& where) {
  KeyReader r(j, where);
  r.read("epochs", schedule.epochs);
  if (const json* rs = r.take("radius_start")) {
    if (rs->is_null()) {
      schedule.radius_start.reset();
    } else if (rs->is_number()) {
      schedule.radius_start = rs->get<double>();
    } else {
      throw ConfigError(where + ": key 'radius_start' has the wrong type");
    }
  }
  r.read("radius_end", schedule.radius_end);
  r.read("lr_start", schedule.lr_start);
  r.read("lr_end", schedule.lr_end);
  r.finish();
  return schedule;
}

json schedule_json(const ScheduleConfig& s) {
  return json{{"epochs", s.epochs},
              {"radius_start", s.radius_start ? json(*s.radius_start) : json(nullptr)},
              {"radius_end", s.radius_end},
              {"lr_start", s.lr_start},
              {"lr_end", s.lr_end}};
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const fs::path& path, const std::string& bytes) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("I/O error writing " + path.string());
}

template <typename Writer>
void write_artifact(Manifest& manifest, const std::string& stage, const std::string& relative, Writer&& writer) {
  std::ostringstream buf(std::ios::binary);
  writer(buf);
  write_file(manifest.output_dir() / relative, buf.str());
  manifest.record_output(stage, relative);
}

class Logger {
 public:
  explicit Logger(const RunOptions& options) : options_(options) {}
  void info(const std::string& msg) const {
    if (options_.log && options_.verbose) *options_.log << "[driftfield] " << msg << '\n';
  }
  void warn(const std::string& msg) const {
    if (options_.log) *options_.log << "[driftfield] warning: " << msg << '\n';
  }

 private:
  const RunOptions& options_;
};

// Starts (or restarts) a stage entry. A full run replaces the stage and
// invalidates every later stage; a single-period run merges into it.
json& begin_stage(Manifest& manifest, const PipelineConfig& config, const std::string& name, bool partial) {
  auto& stages = manifest.root()["stages"];
  if (!partial) {
    bool later = false;
    for (const auto& s : kStages) {
      if (s == name) later = true;
      if (later) stages.erase(s);
    }
  }
  auto& stage = manifest.stage(name);
  stage["config_hash"] = config.hash();
  if (!stage.contains("outputs")) stage["outputs"] = json::object();
  if (!stage.contains("periods")) stage["periods"] = json::array();
  manifest.root()["config_hash"] = config.hash();
  manifest.root()["config"] = config.canonical();
  manifest.root()["seeds"] = {{"global_seed", config.global_seed},
                              {"som_seed", config.som_seed},
                              {"baseline_seed", config.baseline_seed}};
  return stage;
}

void upsert_period(json& stage, std::size_t index, json entry) {
  entry["index"] = index;
  auto& periods = stage["periods"];
  for (auto& p : periods) {
    if (p.at("index").get<std::size_t>() == index) {
      p = std::move(entry);
      return;
    }
  }
  auto it = periods.begin();
  while (it != periods.end() && it->at("index").get<std::size_t>() < index) ++it;
  periods.insert(it, std::move(entry));
}

const json* find_period(const json* stage, std::size_t index) {
  if (!stage || !stage->contains("periods")) return nullptr;
  for (const auto& p : stage->at("periods")) {
    if (p.at("index").get<std::size_t>() == index) return &p;
  }
  return nullptr;
}

std::size_t period_count(const Manifest& manifest) {
  const json* ingest = manifest.find_stage("ingest");
  if (!ingest) throw DataError("no ingest results in the manifest; run `driftfield ingest` first");
  return ingest->at("periods").size();
}

std::vector<std::size_t> selected_periods(const Manifest& manifest, const RunOptions& options) {
  const std::size_t n = period_count(manifest);
  if (options.period) {
    if (*options.period >= n) {
      throw ConfigError("--period " + std::to_string(*options.period) + " out of range (" + std::to_string(n) +
                        " periods)");
    }
    return {*options.period};
  }
  std::vector<std::size_t> all(n);
  for (std::size_t i = 0; i < n; ++i) all[i] = i;
  return all;
}

template <typename Reader>
auto read_artifact(const Manifest& manifest, const std::string& stage, const std::string& relative, Reader&& reader) {
  const fs::path path = manifest.require(stage, relative);
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return reader(in);
}

void record_timing(const PipelineConfig& config, const std::string& command, double seconds) {
  const fs::path path = config.output_path() / kTimingName;
  json timing = json::object();
  if (fs::exists(path)) {
    timing = json::parse(read_file(path), nullptr, false);
    if (timing.is_discarded() || !timing.is_object()) timing = json::object();
  }
  timing[command] = seconds;
  write_file(path, timing.dump(2) + "\n");
}

class StageTimer {
 public:
  StageTimer(const PipelineConfig& config, std::string command)
      : config_(config), command_(std::move(command)), start_(std::chrono::steady_clock::now()) {}
  void done() const {
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    record_timing(config_, command_, s);
  }

 private:
  const PipelineConfig& config_;
  std::string command_;
  std::chrono::steady_clock::time_point start_;
};

std::set<std::string> stopword_set(const PipelineConfig& config) {
  std::set<std::string> words;
  if (config.stopwords == "default") words = corpus::default_stopwords();
  words.insert(config.extra_stopwords.begin(), config.extra_stopwords.end());
  return words;
}

json baseline_json(const stats::Baseline& b) {
  return json{{"mu0", b.mu0},
              {"sigma0", b.sigma0},
              {"sample_count", b.sample_count},
              {"cluster_size", b.cluster_size},
              {"population", b.population},
              {"skewness", b.skewness},
              {"excess_kurtosis", b.excess_kurtosis}};
}

randix::TermSpace load_map_input(const Manifest& manifest, const PipelineConfig& config, std::size_t period) {
  auto space = read_artifact(manifest, "embed", space_artifact(period),
                             [](std::istream& in) { return randix::read_term_space(in); });
  return config.normalize_vectors ? randix::normalized(space) : space;
}

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

}  // namespace

// ---------------------------------------------------------------- config

esom::TrainingSchedule ScheduleConfig::resolve(std::size_t rows, std::size_t cols) const {
  esom::TrainingSchedule s;
  s.epochs = epochs;
  s.radius_start = radius_start ? *radius_start : static_cast<double>(std::min(rows, cols)) / 2.0;
  s.radius_end = radius_end;
  s.lr_start = lr_start;
  s.lr_end = lr_end;
  return s;
}

PipelineConfig PipelineConfig::from_json(const json& j, const fs::path& base_dir) {
  PipelineConfig c;
  c.base_dir = base_dir;
  KeyReader r(j, "config");
  if (const json* in = r.take("input")) {
    if (in->is_string()) {
      c.inputs = {in->get<std::string>()};
    } else if (in->is_array() && std::all_of(in->begin(), in->end(), [](const json& x) { return x.is_string(); })) {
      c.inputs = in->get<std::vector<std::string>>();
    } else {
      throw ConfigError("config: key 'input' must be a path or a list of paths");
    }
  }
  r.read("format", c.format);
  r.read("n_periods", c.n_periods);
  r.read("cumulative", c.cumulative);
  r.read("min_df", c.min_df);
  r.read("min_token_length", c.min_token_length);
  r.read("stopwords", c.stopwords);
  if (const json* extra = r.take("extra_stopwords")) {
    if (!extra->is_array()) throw ConfigError("config: key 'extra_stopwords' must be a list of strings");
    for (const auto& w : *extra) {
      if (!w.is_string()) throw ConfigError("config: key 'extra_stopwords' must be a list of strings");
      c.extra_stopwords.push_back(w.get<std::string>());
    }
  }
  if (const json* mt = r.take("max_timestamp")) {
    if (mt->is_null()) {
      c.max_timestamp.reset();
    } else if (mt->is_number_integer()) {
      c.max_timestamp = mt->get<std::int64_t>();
    } else {
      throw ConfigError("config: key 'max_timestamp' must be an integer or null");
    }
  }
  r.read("dimension", c.dimension);
  r.read("nonzeros", c.nonzeros);
  r.read("global_seed", c.global_seed);
  r.read("grid_rows", c.grid_rows);
  r.read("grid_cols", c.grid_cols);
  r.read("som_seed", c.som_seed);
  r.read("training_mode", c.training_mode);
  r.read("normalize_vectors", c.normalize_vectors);
  if (const json* t = r.take("train")) c.train = read_schedule(*t, c.train, "config.train");
  if (const json* t = r.take("continuation")) c.continuation = read_schedule(*t, c.continuation, "config.continuation");
  r.read("wordnet_dir", c.wordnet_dir);
  r.read("cluster_size", c.cluster_size);
  r.read("baseline_samples", c.baseline_samples);
  r.read("baseline_seed", c.baseline_seed);
  r.read("baseline_mode", c.baseline_mode);
  r.read("test_mode", c.test_mode);
  if (const json* a = r.take("alphas")) {
    if (!a->is_array() || a->empty()) throw ConfigError("config: key 'alphas' must be a non-empty list of numbers");
    c.alphas.clear();
    for (const auto& x : *a) {
      if (!x.is_number()) throw ConfigError("config: key 'alphas' must be a non-empty list of numbers");
      c.alphas.push_back(x.get<double>());
    }
  }
  if (const json* t = r.take("thresholds")) {
    if (!t->is_array() || t->empty()) throw ConfigError("config: key 'thresholds' must be a non-empty list");
    c.thresholds.clear();
    for (const auto& x : *t) {
      if (!x.is_number_integer() || x.get<std::int64_t>() < 1) {
        throw ConfigError("config: key 'thresholds' must hold positive integers");
      }
      c.thresholds.push_back(x.get<std::size_t>());
    }
  }
  r.read("skew_warning", c.skew_warning);
  r.read("workers", c.workers);
  r.read("output_dir", c.output_dir);
  r.finish();
  c.validate();
  return c;
}

PipelineConfig PipelineConfig::load(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  const json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ConfigError("config file " + path.string() + " is not valid JSON");
  return from_json(j, path.has_parent_path() ? path.parent_path() : fs::path("."));
}

void PipelineConfig::validate() const {
  if (inputs.empty()) throw ConfigError("config: no input file given");
  corpus::parse_format(format);
  if (n_periods < 1) throw ConfigError("config: n_periods must be at least 1");
  if (min_df < 1) throw ConfigError("config: min_df must be at least 1");
  if (min_token_length < 1) throw ConfigError("config: min_token_length must be at least 1");
  if (stopwords != "default" && stopwords != "none") throw ConfigError("config: stopwords must be 'default' or 'none'");
  if (nonzeros < 2 || nonzeros % 2 != 0 || nonzeros > dimension) {
    throw ConfigError("config: nonzeros must be even, at least 2 and at most dimension");
  }
  if (grid_rows < 2 || grid_cols < 2) throw ConfigError("config: grid needs at least 2 rows and 2 columns");
  esom::parse_training_mode(training_mode);
  train.resolve(grid_rows, grid_cols).validate();
  continuation.resolve(grid_rows, grid_cols).validate();
  const auto first = train.resolve(grid_rows, grid_cols);
  const auto next = continuation.resolve(grid_rows, grid_cols);
  if (next.lr_start > first.lr_at(first.epochs == 0 ? 0 : first.epochs - 1) + 1e-12) {
    throw ConfigError("config: continuation lr_start must not exceed the initial schedule's final learning rate");
  }
  if (cluster_size < 2) throw ConfigError("config: cluster_size must be at least 2");
  if (baseline_samples < 1000) throw ConfigError("config: baseline_samples must be at least 1000");
  stats::parse_baseline_mode(baseline_mode);
  stats::parse_test_mode(test_mode);
  for (double a : alphas) {
    if (!(a > 0.0 && a < 1.0)) throw ConfigError("config: every alpha must lie in (0, 1)");
  }
  for (auto t : thresholds) {
    if (t < 2) throw ConfigError("config: thresholds must be at least 2");
  }
}

json PipelineConfig::canonical() const {
  return json{{"input", inputs},
              {"format", format},
              {"n_periods", n_periods},
              {"cumulative", cumulative},
              {"min_df", min_df},
              {"min_token_length", min_token_length},
              {"stopwords", stopwords},
              {"extra_stopwords", extra_stopwords},
              {"max_timestamp", max_timestamp ? json(*max_timestamp) : json(nullptr)},
              {"dimension", dimension},
              {"nonzeros", nonzeros},
              {"global_seed", global_seed},
              {"grid_rows", grid_rows},
              {"grid_cols", grid_cols},
              {"som_seed", som_seed},
              {"training_mode", training_mode},
              {"normalize_vectors", normalize_vectors},
              {"train", schedule_json(train)},
              {"continuation", schedule_json(continuation)},
              {"wordnet_dir", wordnet_dir},
              {"cluster_size", cluster_size},
              {"baseline_samples", baseline_samples},
              {"baseline_seed", baseline_seed},
              {"baseline_mode", baseline_mode},
              {"test_mode", test_mode},
              {"alphas", alphas},
              {"thresholds", thresholds},
              {"skew_warning", skew_warning}};
}

std::string PipelineConfig::hash() const { return hex64(fnv1a64(canonical().dump())); }

fs::path PipelineConfig::resolve(const std::string& path) const {
  const fs::path p(path);
  return p.is_absolute() ? p : base_dir / p;
}

// ---------------------------------------------------------------- manifest

std::string checksum_file(const fs::path& path) { return hex64(fnv1a64(read_file(path))); }

Manifest::Manifest(fs::path output_dir) : dir_(std::move(output_dir)) {
  doc_ = json{{"tool", "driftfield"}, {"version", DRIFTFIELD_VERSION}, {"stages", json::object()}};
}

Manifest Manifest::load(const fs::path& output_dir) {
  Manifest m(output_dir);
  const fs::path path = output_dir / kManifestName;
  if (!fs::exists(path)) return m;
  json doc = json::parse(read_file(path), nullptr, false);
  if (doc.is_discarded() || !doc.is_object()) throw DataError("corrupt manifest " + path.string());
  m.doc_ = std::move(doc);
  if (!m.doc_.contains("stages")) m.doc_["stages"] = json::object();
  return m;
}

void Manifest::save() const { write_file(dir_ / kManifestName, doc_.dump(2) + "\n"); }

json& Manifest::stage(const std::string& name) { return doc_["stages"][name]; }

const json* Manifest::find_stage(const std::string& name) const {
  const auto& stages = doc_.at("stages");
  const auto it = stages.find(name);
  return it == stages.end() ? nullptr : &*it;
}

void Manifest::record_output(const std::string& stage_name, const std::string& relative) {
  stage(stage_name)["outputs"][relative] = checksum_file(dir_ / relative);
}

fs::path Manifest::require(const std::string& stage_name, const std::string& relative) const {
  const json* s = find_stage(stage_name);
  if (!s || !s->contains("outputs") || !s->at("outputs").contains(relative)) {
    throw DataError("artifact " + relative + " is not declared by stage '" + stage_name + "'; run `driftfield " +
                    stage_name + "` first");
  }
  const fs::path path = dir_ / relative;
  if (!fs::exists(path)) {
    throw DataError("artifact " + path.string() + " is missing; rerun `driftfield " + stage_name + "`");
  }
  if (checksum_file(path) != s->at("outputs").at(relative).get<std::string>()) {
    throw DataError("artifact " + path.string() + " does not match its manifest checksum; rerun `driftfield " +
                    stage_name + "`");
  }
  return path;
}

OutputLock::OutputLock(const fs::path& output_dir) : path_(output_dir / kLockName) {
  fs::create_directories(output_dir);
  const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  if (fd < 0) {
    throw ConfigError("output directory " + output_dir.string() + " is locked by another run (remove " +
                      path_.string() + " if that run is gone)");
  }
  const std::string pid = std::to_string(::getpid()) + "\n";
  [[maybe_unused]] const auto written = ::write(fd, pid.data(), pid.size());
  ::close(fd);
}

OutputLock::~OutputLock() {
  std::error_code ec;
  fs::remove(path_, ec);
}

// ---------------------------------------------------------------- artifacts

std::string vocab_artifact(std::size_t p) { return "ingest/period_" + std::to_string(p) + ".vocab.tsv"; }
std::string matrix_artifact(std::size_t p) { return "ingest/period_" + std::to_string(p) + ".tfidf.txt"; }
std::string space_artifact(std::size_t p) { return "embed/period_" + std::to_string(p) + ".space.bin"; }
std::string grid_artifact(std::size_t p) { return "train/period_" + std::to_string(p) + ".som.bin"; }
std::string bmu_artifact(std::size_t p) { return "train/period_" + std::to_string(p) + ".bmu.csv"; }
std::string umatrix_artifact(std::size_t p) { return "train/period_" + std::to_string(p) + ".umatrix.csv"; }
std::string report_csv_artifact(std::size_t p) { return "evaluate/period_" + std::to_string(p) + ".report.csv"; }
std::string neurons_artifact(std::size_t p) { return "evaluate/period_" + std::to_string(p) + ".neurons.csv"; }
std::string drift_artifact(std::size_t a, std::size_t b) {
  return "drift/drift_" + std::to_string(a) + "_" + std::to_string(b) + ".csv";
}

json report_to_json(const stats::PeriodReport& report) {
  json cells = json::array();
  for (const auto& c : report.cells) {
    cells.push_back(json{{"threshold", c.threshold},
                         {"alpha", c.alpha},
                         {"testable", c.testable},
                         {"rejected", c.rejected},
                         {"rate", optional_json(c.rate)},
                         {"binomial_p", optional_json(c.binomial_p)}});
  }
  return json{{"period", report.period}, {"cells", cells}};
}

// ---------------------------------------------------------------- commands

void cmd_ingest(const PipelineConfig& config, const RunOptions& options) {
  const Logger log(options);
  OutputLock lock(config.output_path());
  StageTimer timer(config, "ingest");
  Manifest manifest = Manifest::load(config.output_path());
  json& stage = begin_stage(manifest, config, "ingest", false);

  const auto format = corpus::parse_format(config.format);
  std::vector<corpus::Document> docs;
  std::size_t skipped = 0, duplicates = 0;
  std::set<std::string> ids;
  json inputs = json::object();
  for (const auto& input : config.inputs) {
    const fs::path path = config.resolve(input);
    auto parsed = corpus::parse_review_file(path.string(), format);
    inputs[input] = checksum_file(path);
    skipped += parsed.skipped;
    duplicates += parsed.duplicates;
    for (auto& d : parsed.documents) {
      if (!ids.insert(d.id).second) {
        ++duplicates;
        continue;
      }
      docs.push_back(std::move(d));
    }
    log.info("parsed " + path.string());
  }
  const std::size_t parsed_count = docs.size();
  const std::int64_t now = config.max_timestamp ? *config.max_timestamp : corpus::current_unix_time();
  auto filtered = corpus::filter_degenerate(std::move(docs), now);
  if (filtered.documents.empty()) throw DataError("no documents left after filtering degenerate timestamps");
  auto periods = corpus::split_periods(std::move(filtered.documents), config.n_periods, config.cumulative);

  stage["inputs"] = inputs;
  stage["parsed"] = parsed_count;
  stage["skipped"] = skipped;
  stage["duplicates"] = duplicates;
  stage["dropped_count"] = filtered.dropped;

  const auto stopwords = stopword_set(config);
  const corpus::TokenizerOptions tok{config.min_token_length};
  for (const auto& period : periods) {
    const auto vocab = corpus::build_vocabulary(period, config.min_df, stopwords, tok);
    const auto matrix = corpus::build_tfidf(period, vocab, tok, config.workers);
    write_artifact(manifest, "ingest", vocab_artifact(period.index),
                   [&](std::ostream& out) { corpus::write_vocabulary(out, vocab); });
    write_artifact(manifest, "ingest", matrix_artifact(period.index),
                   [&](std::ostream& out) { corpus::write_matrix(out, matrix, config.hash()); });
    upsert_period(stage, period.index,
                  json{{"documents", period.documents.size()},
                       {"end_timestamp", period.end_timestamp},
                       {"terms", vocab.size()},
                       {"nnz", matrix.nnz()},
                       {"density", matrix.density()}});
    log.info("period " + std::to_string(period.index) + ": " + std::to_string(period.documents.size()) +
             " documents, " + std::to_string(vocab.size()) + " terms, TFIDF density " +
             fmt(100.0 * matrix.density()) + "%");
  }
  manifest.save();
  timer.done();
}

void cmd_embed(const PipelineConfig& config, const RunOptions& options) {
  const Logger log(options);
  OutputLock lock(config.output_path());
  StageTimer timer(config, "embed");
  Manifest manifest = Manifest::load(config.output_path());
  const auto periods = selected_periods(manifest, options);
  json& stage = begin_stage(manifest, config, "embed", options.period.has_value());

  for (auto p : periods) {
    const auto vocab =
        read_artifact(manifest, "ingest", vocab_artifact(p), [](std::istream& in) { return corpus::read_vocabulary(in); });
    const auto matrix =
        read_artifact(manifest, "ingest", matrix_artifact(p), [](std::istream& in) { return corpus::read_matrix(in); });
    randix::BuildReport report;
    const auto space = randix::build_term_space(matrix, vocab.terms, config.global_seed, config.dimension,
                                                config.nonzeros, static_cast<std::uint32_t>(p), config.workers, &report);
    for (const auto& t : report.dropped_terms) log.warn("period " + std::to_string(p) + ": term '" + t + "' has a zero context vector and was dropped");
    write_artifact(manifest, "embed", space_artifact(p),
                   [&](std::ostream& out) { randix::write_term_space(out, space); });
    upsert_period(stage, p,
                  json{{"global_seed", config.global_seed},
                       {"dimension", config.dimension},
                       {"nonzeros", config.nonzeros},
                       {"terms", space.size()},
                       {"dropped_terms", report.dropped_terms.size()}});
    log.info("period " + std::to_string(p) + ": embedded " + std::to_string(space.size()) + " terms");
  }
  std::set<std::uint64_t> seeds;
  for (const auto& entry : stage["periods"]) seeds.insert(entry.at("global_seed").get<std::uint64_t>());
  stage["comparable"] = seeds.size() <= 1;
  if (seeds.size() > 1) log.warn("term spaces were indexed with different seeds; drift metrics are disabled");
  manifest.save();
  timer.done();
}

void cmd_train(const PipelineConfig& config, const RunOptions& options) {
  const Logger log(options);
  OutputLock lock(config.output_path());
  StageTimer timer(config, "train");
  Manifest manifest = Manifest::load(config.output_path());
  const auto periods = selected_periods(manifest, options);
  json& stage = begin_stage(manifest, config, "train", options.period.has_value());

  const esom::TrainOptions train_options{esom::parse_training_mode(config.training_mode), config.workers};
  const auto first_schedule = config.train.resolve(config.grid_rows, config.grid_cols);
  const auto next_schedule = config.continuation.resolve(config.grid_rows, config.grid_cols);

  std::optional<esom::SomGrid> previous;
  for (auto p : periods) {
    const auto space =
        load_map_input(manifest, config, p);
    esom::SomGrid grid;
    double initial_qe = 0.0;
    if (p == 0) {
      grid = esom::init_grid(config.grid_rows, config.grid_cols, space, config.som_seed);
      initial_qe = esom::quantization_error(grid, space, config.workers);
      grid = esom::train(std::move(grid), space, first_schedule, train_options);
    } else {
      if (!previous) {
        previous = read_artifact(manifest, "train", grid_artifact(p - 1),
                                 [](std::istream& in) { return esom::read_grid(in); });
      }
      grid = std::move(*previous);
      initial_qe = esom::quantization_error(grid, space, config.workers);
      grid = esom::continue_train(std::move(grid), space, next_schedule, train_options);
    }
    const auto winners = esom::bmus(grid, space, config.workers);
    const double final_qe = esom::quantization_error(grid, space, config.workers);
    std::set<std::size_t> occupied(winners.begin(), winners.end());

    write_artifact(manifest, "train", grid_artifact(p), [&](std::ostream& out) { esom::write_grid(out, grid); });
    write_artifact(manifest, "train", bmu_artifact(p),
                   [&](std::ostream& out) { esom::write_assignments_csv(out, grid, space, winners); });
    write_artifact(manifest, "train", umatrix_artifact(p),
                   [&](std::ostream& out) { esom::write_umatrix_csv(out, grid, esom::umatrix(grid)); });
    upsert_period(stage, p,
                  json{{"epoch", grid.epoch},
                       {"continued", p != 0},
                       {"quantization_error_before", initial_qe},
                       {"quantization_error_after", final_qe},
                       {"occupied_nodes", occupied.size()},
                       {"mean_occupancy", static_cast<double>(space.size()) / static_cast<double>(occupied.size())}});
    log.info("period " + std::to_string(p) + ": trained to epoch " + std::to_string(grid.epoch) +
             ", quantization error " + fmt(initial_qe) + " -> " + fmt(final_qe));
    previous = std::move(grid);
  }
  manifest.save();
  timer.done();
}

void cmd_evaluate(const PipelineConfig& config, const RunOptions& options) {
  const Logger log(options);
  OutputLock lock(config.output_path());
  StageTimer timer(config, "evaluate");
  Manifest manifest = Manifest::load(config.output_path());
  const auto periods = selected_periods(manifest, options);
  json& stage = begin_stage(manifest, config, "evaluate", options.period.has_value());

  const fs::path wn_dir =
      config.wordnet_dir.empty() ? wordnet::Taxonomy::locate("") : config.resolve(config.wordnet_dir);
  const auto tax = wordnet::Taxonomy::load(wn_dir);
  log.info("loaded WordNet from " + wn_dir.string());
  const auto test_mode = stats::parse_test_mode(config.test_mode);

  for (auto p : periods) {
    const auto space =
        load_map_input(manifest, config, p);
    const auto grid =
        read_artifact(manifest, "train", grid_artifact(p), [](std::istream& in) { return esom::read_grid(in); });

    stats::BaselineOptions bopt;
    bopt.cluster_size = config.cluster_size;
    bopt.n_samples = config.baseline_samples;
    bopt.seed = config.baseline_seed + p;
    bopt.mode = stats::parse_baseline_mode(config.baseline_mode);
    bopt.workers = config.workers;
    const auto baseline = stats::fit_baseline(space.terms, tax, bopt);
    if (std::abs(baseline.skewness) > config.skew_warning) {
      log.warn("period " + std::to_string(p) + ": baseline skewness " + fmt(baseline.skewness) +
               " exceeds the normality warning threshold " + fmt(config.skew_warning));
    }

    const auto clusters = esom::assign_clusters(grid, space, config.workers);
    std::vector<wordnet::PairwiseSummary> summaries(clusters.size());
    parallel_for(clusters.size(), config.workers,
                 [&](std::size_t i) { summaries[i] = wordnet::mean_pairwise_similarity(clusters[i].terms, tax); });

    std::vector<stats::ConsistencyResult> results;
    for (std::size_t i = 0; i < clusters.size(); ++i) {
      for (double alpha : config.alphas) {
        auto r = stats::consistency_test(summaries[i], baseline, alpha, test_mode);
        r.node = clusters[i].node;
        r.cluster_size = clusters[i].size();
        results.push_back(r);
      }
    }
    const auto report = stats::rejection_rates(results, config.thresholds, config.alphas, static_cast<std::uint32_t>(p));

    write_artifact(manifest, "evaluate", report_csv_artifact(p),
                   [&](std::ostream& out) { stats::write_report_csv(out, report); });
    write_artifact(manifest, "evaluate", neurons_artifact(p), [&](std::ostream& out) {
      out << "row,col,size,resolved,mean_similarity,statistic,p_value";
      for (double a : config.alphas) out << ",rejected_" << fmt(a);
      out << '\n';
      for (std::size_t i = 0; i < clusters.size(); ++i) {
        const auto& first = results[i * config.alphas.size()];
        out << clusters[i].node.row << ',' << clusters[i].node.col << ',' << clusters[i].size() << ',' << first.n
            << ',';
        if (first.testable) {
          out << fmt(first.mean_similarity) << ',' << fmt(first.statistic) << ',' << fmt(first.p_value);
        } else {
          out << ",,";
        }
        for (std::size_t a = 0; a < config.alphas.size(); ++a) {
          const auto& r = results[i * config.alphas.size() + a];
          out << ',' << (r.testable ? (r.rejected ? "1" : "0") : "");
        }
        out << '\n';
      }
    });
    std::size_t testable = 0;
    for (std::size_t i = 0; i < clusters.size(); ++i) testable += results[i * config.alphas.size()].testable ? 1 : 0;
    json entry = report_to_json(report);
    entry.erase("period");
    entry["terms"] = space.size();
    entry["clusters"] = clusters.size();
    entry["testable_clusters"] = testable;
    entry["baseline"] = baseline_json(baseline);
    upsert_period(stage, p, entry);
    log.info("period " + std::to_string(p) + ": " + std::to_string(testable) + " testable neurons, baseline mu0=" +
             fmt(baseline.mu0) + " sigma0=" + fmt(baseline.sigma0));
  }

  json report{{"tool", "driftfield"},
              {"version", DRIFTFIELD_VERSION},
              {"config_hash", config.hash()},
              {"seeds", manifest.root()["seeds"]},
              {"test_mode", config.test_mode},
              {"alphas", config.alphas},
              {"thresholds", config.thresholds},
              {"periods", json::array()}};
  for (const auto& entry : stage["periods"]) {
    json period = entry;
    period["period"] = entry.at("index");
    period.erase("index");
    report["periods"].push_back(period);
  }
  write_artifact(manifest, "evaluate", "evaluate/report.json",
                 [&](std::ostream& out) { out << report.dump(2) << '\n'; });
  manifest.save();
  timer.done();
}

void cmd_drift(const PipelineConfig& config, const RunOptions& options) {
  const Logger log(options);
  OutputLock lock(config.output_path());
  StageTimer timer(config, "drift");
  Manifest manifest = Manifest::load(config.output_path());
  const std::size_t n = period_count(manifest);
  if (n < 2) throw ConfigError("drift needs at least 2 periods");
  std::vector<std::size_t> afters;
  if (options.period) {
    if (*options.period == 0 || *options.period >= n) {
      throw ConfigError("--period for drift selects the later period of a pair and must lie in [1, " +
                        std::to_string(n - 1) + "]");
    }
    afters = {*options.period};
  } else {
    for (std::size_t p = 1; p < n; ++p) afters.push_back(p);
  }
  const json* evaluate = manifest.find_stage("evaluate");
  const json* embed = manifest.find_stage("embed");
  if (embed && embed->contains("comparable") && !embed->at("comparable").get<bool>()) {
    throw ConfigError("term spaces were built with different seeds and are not comparable; rerun `driftfield embed`");
  }
  json& stage = begin_stage(manifest, config, "drift", options.period.has_value());

  auto load_report = [&](std::size_t p) {
    const json* entry = find_period(evaluate, p);
    if (!entry) throw DataError("period " + std::to_string(p) + " has not been evaluated; run `driftfield evaluate`");
    stats::PeriodReport r;
    r.period = static_cast<std::uint32_t>(p);
    r.thresholds = config.thresholds;
    r.alphas = config.alphas;
    for (const auto& c : entry->at("cells")) {
      stats::RateCell cell;
      cell.threshold = c.at("threshold").get<std::size_t>();
      cell.alpha = c.at("alpha").get<double>();
      cell.testable = c.at("testable").get<std::size_t>();
      cell.rejected = c.at("rejected").get<std::size_t>();
      r.cells.push_back(cell);
    }
    return r;
  };

  if (!stage.contains("comparisons")) stage["comparisons"] = json::array();
  for (auto b : afters) {
    const std::size_t a = b - 1;
    // Evaluation reports are read from the declared report artifact so stale results are caught.
    manifest.require("evaluate", "evaluate/report.json");
    const auto rows = stats::compare_periods(load_report(a), load_report(b));

    const auto space_a =
        load_map_input(manifest, config, a);
    const auto space_b =
        load_map_input(manifest, config, b);
    const auto grid_a =
        read_artifact(manifest, "train", grid_artifact(a), [](std::istream& in) { return esom::read_grid(in); });
    const auto grid_b =
        read_artifact(manifest, "train", grid_artifact(b), [](std::istream& in) { return esom::read_grid(in); });
    const auto records =
        stats::rank_by_cosine_distance(stats::drift_metrics(space_a, space_b, grid_a, grid_b, config.workers));
    write_artifact(manifest, "drift", drift_artifact(a, b),
                   [&](std::ostream& out) { stats::write_drift_csv(out, records); });

    std::size_t shared = 0;
    double total_distance = 0.0, total_displacement = 0.0;
    json top = json::array();
    for (const auto& r : records) {
      if (!r.cosine_distance) continue;
      ++shared;
      total_distance += *r.cosine_distance;
      total_displacement += *r.displacement;
      if (top.size() < 20) top.push_back(json{{"term", r.term}, {"cosine_distance", *r.cosine_distance}, {"displacement", *r.displacement}});
    }
    json comparisons = json::array();
    for (const auto& row : rows) {
      comparisons.push_back(json{{"threshold", row.threshold}, {"alpha", row.alpha}, {"p_value", optional_json(row.p_value)}});
    }
    upsert_period(stage, b,
                  json{{"before", a},
                       {"after", b},
                       {"shared_terms", shared},
                       {"only_before", std::count_if(records.begin(), records.end(), [](const auto& r) { return r.present_before && !r.present_after; })},
                       {"only_after", std::count_if(records.begin(), records.end(), [](const auto& r) { return !r.present_before && r.present_after; })},
                       {"mean_cosine_distance", shared ? total_distance / static_cast<double>(shared) : 0.0},
                       {"mean_displacement", shared ? total_displacement / static_cast<double>(shared) : 0.0},
                       {"top_drift", top},
                       {"comparisons", comparisons}});
    log.info("periods " + std::to_string(a) + "->" + std::to_string(b) + ": " + std::to_string(shared) +
             " shared terms");
  }
  stage.erase("comparisons");

  std::vector<stats::ProportionComparison> all_rows;
  for (const auto& entry : stage["periods"]) {
    for (const auto& c : entry.at("comparisons")) {
      stats::ProportionComparison row;
      row.period_before = entry.at("before").get<std::uint32_t>();
      row.period_after = entry.at("after").get<std::uint32_t>();
      row.threshold = c.at("threshold").get<std::size_t>();
      row.alpha = c.at("alpha").get<double>();
      if (!c.at("p_value").is_null()) row.p_value = c.at("p_value").get<double>();
      all_rows.push_back(row);
    }
  }
  write_artifact(manifest, "drift", "drift/comparisons.csv",
                 [&](std::ostream& out) { stats::write_comparisons_csv(out, all_rows); });
  json report{{"tool", "driftfield"},
              {"version", DRIFTFIELD_VERSION},
              {"config_hash", config.hash()},
              {"seeds", manifest.root()["seeds"]},
              {"pairs", stage["periods"]}};
  write_artifact(manifest, "drift", "drift/report.json", [&](std::ostream& out) { out << report.dump(2) << '\n'; });
  manifest.save();
  timer.done();
}

void cmd_run(const PipelineConfig& config, const RunOptions& options) {
  RunOptions all = options;
  all.period.reset();
  cmd_ingest(config, all);
  cmd_embed(config, all);
  cmd_train(config, all);
  cmd_evaluate(config, all);
  if (config.n_periods >= 2) cmd_drift(config, all);
}

}  // namespace driftfield::pipeline

#pragma once

// Stage orchestration for the driftfield CLI: configuration, run manifest,
// and the ingest / embed / train / evaluate / drift commands.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"

#include "driftfield/corpus.hpp"
#include "driftfield/esom.hpp"
#include "driftfield/stats.hpp"

namespace driftfield::pipeline {

struct ScheduleConfig {
  std::size_t epochs = 10;
  std::optional<double> radius_start;  // empty: min(rows, cols) / 2
  double radius_end = 1.0;
  double lr_start = 0.1;
  double lr_end = 0.01;

  esom::TrainingSchedule resolve(std::size_t rows, std::size_t cols) const;
};

struct PipelineConfig {
  std::vector<std::string> inputs;
  std::string format = "jsonl";
  std::size_t n_periods = 3;
  bool cumulative = false;
  std::uint32_t min_df = 5;
  std::size_t min_token_length = 2;
  std::string stopwords = "default";  // "default" or "none"
  std::vector<std::string> extra_stopwords;
  std::optional<std::int64_t> max_timestamp;  // empty: wall clock at ingestion

  std::size_t dimension = 500;
  std::size_t nonzeros = 10;
  std::uint64_t global_seed = 42;

  std::size_t grid_rows = 50;
  std::size_t grid_cols = 80;
  std::uint64_t som_seed = 7;
  std::string training_mode = "batch";
  bool normalize_vectors = true;  // map unit-length term vectors
  ScheduleConfig train{};
  ScheduleConfig continuation{5, 3.0, 1.0, 0.01, 0.01};

  std::string wordnet_dir;  // empty: $WNHOME
  std::size_t cluster_size = 5;
  std::size_t baseline_samples = 5000;
  std::uint64_t baseline_seed = 11;
  std::string baseline_mode = "resample";
  std::string test_mode = "empirical";
  std::vector<double> alphas{0.05, 0.1, 0.2};
  std::vector<std::size_t> thresholds{3, 5, 10};
  double skew_warning = 0.5;

  unsigned workers = 0;  // 0: hardware concurrency; never affects results
  std::string output_dir = "driftfield-out";

  // Directory that relative paths are resolved against (the config file's).
  std::filesystem::path base_dir = ".";

  // Throws ConfigError on unknown keys, wrong types or invalid values.
  static PipelineConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = ".");
  static PipelineConfig load(const std::filesystem::path& path);

  // Every result-affecting setting with defaults filled in. Excludes
  // output_dir and workers, which never change results.
  nlohmann::json canonical() const;
  std::string hash() const;

  std::filesystem::path resolve(const std::string& path) const;
  std::filesystem::path output_path() const { return resolve(output_dir); }
  void validate() const;
};

struct RunOptions {
  std::optional<std::size_t> period;
  bool verbose = false;
  std::ostream* log = nullptr;  // progress and warnings; nullptr silences them
};

// Manifest at <output_dir>/manifest.json. Artifact paths are relative to the
// output directory and mapped to FNV-1a 64 checksums of their bytes.
class Manifest {
 public:
  explicit Manifest(std::filesystem::path output_dir);

  static Manifest load(const std::filesystem::path& output_dir);
  void save() const;

  nlohmann::json& stage(const std::string& name);
  const nlohmann::json* find_stage(const std::string& name) const;
  nlohmann::json& root() { return doc_; }
  const nlohmann::json& root() const { return doc_; }

  // Records the checksum of an artifact that was just written.
  void record_output(const std::string& stage, const std::string& relative);
  // Fails with DataError unless `relative` is a declared output of `stage`
  // and the file on disk still matches its checksum.
  std::filesystem::path require(const std::string& stage, const std::string& relative) const;

  const std::filesystem::path& output_dir() const { return dir_; }

 private:
  std::filesystem::path dir_;
  nlohmann::json doc_;
};

std::string checksum_file(const std::filesystem::path& path);

// Exclusive lock on the output directory; throws ConfigError if already held.
class OutputLock {
 public:
  explicit OutputLock(const std::filesystem::path& output_dir);
  ~OutputLock();
  OutputLock(const OutputLock&) = delete;
  OutputLock& operator=(const OutputLock&) = delete;

 private:
  std::filesystem::path path_;
};

void cmd_ingest(const PipelineConfig& config, const RunOptions& options = {});
void cmd_embed(const PipelineConfig& config, const RunOptions& options = {});
void cmd_train(const PipelineConfig& config, const RunOptions& options = {});
void cmd_evaluate(const PipelineConfig& config, const RunOptions& options = {});
void cmd_drift(const PipelineConfig& config, const RunOptions& options = {});
void cmd_run(const PipelineConfig& config, const RunOptions& options = {});

// Artifact names, relative to the output directory.
std::string vocab_artifact(std::size_t period);
std::string matrix_artifact(std::size_t period);
std::string space_artifact(std::size_t period);
std::string grid_artifact(std::size_t period);
std::string bmu_artifact(std::size_t period);
std::string umatrix_artifact(std::size_t period);
std::string report_csv_artifact(std::size_t period);
std::string neurons_artifact(std::size_t period);
std::string drift_artifact(std::size_t before, std::size_t after);

nlohmann::json report_to_json(const stats::PeriodReport& report);

}  // namespace driftfield::pipeline

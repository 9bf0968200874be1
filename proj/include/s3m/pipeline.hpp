#pragma once

// End-to-end orchestration: configuration, training, embedding, evaluation,
// figure-data reports and stimulus validation.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "s3m/probe.hpp"

namespace s3m {

enum class SpaceSelection { raw, probe, both };
enum class PoolingSelection { word, phoneme };

struct EvaluationToggles {
  bool morphology = true;
  bool allomorphy = true;
  bool false_friends = true;
  bool forced_choice = true;
  bool same_word = true;
  bool layer_sweep = true;
  bool regression = true;
  bool pca = true;
};

struct PipelineConfig {
  /// Relative paths resolve against this (the config file's directory).
  std::filesystem::path base_dir;

  std::filesystem::path train_manifest;
  std::filesystem::path validation_manifest;
  std::filesystem::path selection_manifest;
  std::filesystem::path evaluation_manifest;
  std::filesystem::path out = "out";
  /// Defaults to <out>/probes.
  std::filesystem::path probe_dir;
  std::filesystem::path data_dir;
  std::filesystem::path lexicon;
  std::filesystem::path frequencies;

  std::vector<int> layers{8};
  int analysis_layer = 8;
  int max_layer = 12;
  SpaceSelection space = SpaceSelection::both;
  PoolingSelection pooling = PoolingSelection::word;

  std::uint64_t seed = 0;
  int jobs = 1;

  TrainConfig train;
  std::size_t search_budget = 0;
  SearchSpace search;
  std::size_t map_queries = 2000;

  int samples = 20;
  bool cap_samples = true;
  bool baseline = true;
  std::size_t max_trials_per_cell = 0;
  int forced_choice_draws = 1000;
  int pca_components = 2;
  int pca_samples_per_pair = 5;
  double outcome_scale = 1000.0;
  EvaluationToggles evaluations;

  /// Strict schema: unknown keys and wrong types are ConfigErrors.
  static PipelineConfig from_json_text(std::string_view text, const std::filesystem::path& base_dir);
  static PipelineConfig read(const std::filesystem::path& path);

  /// Canonical form with every field spelled out. `out` and `jobs` are left
  /// out since they do not influence results.
  std::string canonical_json() const;

  std::filesystem::path resolve(const std::filesystem::path& p) const;
  std::filesystem::path out_dir() const { return resolve(out); }
  std::filesystem::path probes_dir() const;
  std::filesystem::path data_path(const std::string& name) const;
  std::filesystem::path probe_path(int layer) const;

  /// Range checks; ConfigError on failure.
  void validate() const;
};

struct ConfigOverrides {
  std::optional<std::uint64_t> seed;
  std::optional<int> layer;
  std::optional<std::string> space;
  std::optional<int> jobs;
  std::optional<std::filesystem::path> out;
};

/// Flags win over file values. A layer override sets both the trained layers
/// and the analysis layer.
void apply_overrides(PipelineConfig& config, const ConfigOverrides& overrides);

/// Exclusive lock on an output directory, released on destruction.
class OutputLock {
 public:
  explicit OutputLock(const std::filesystem::path& out_dir);
  ~OutputLock();
  OutputLock(const OutputLock&) = delete;
  OutputLock& operator=(const OutputLock&) = delete;

 private:
  std::filesystem::path path_;
};

/// Hex SHA-256 of a byte string / file.
std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

/// One probe per configured layer, written to probe_path(layer), with a JSON
/// Lines training log next to it.
void cmd_train(const PipelineConfig& config, std::ostream& log);

/// Stores for the analysis layer under <out>/stores.
void cmd_embed(const PipelineConfig& config, std::ostream& log);

struct EvaluateStatus {
  std::vector<std::string> failures;
  bool ok() const { return failures.empty(); }
};

/// Runs every enabled evaluation into <out>/results and writes
/// <out>/summary.json. Individual evaluation failures are recorded and
/// reported in the status rather than aborting the run.
EvaluateStatus cmd_evaluate(const PipelineConfig& config, std::ostream& log);

/// Figure-data CSVs under <out>/report. DataError listing the missing inputs
/// when none of them exist.
std::vector<std::string> cmd_report(const PipelineConfig& config, std::ostream& log);

/// Problems found in the shipped or configured stimulus materials.
std::vector<std::string> validate_stimuli(const PipelineConfig& config, std::ostream& log);

}  // namespace s3m

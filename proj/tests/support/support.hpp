#pragma once

// Shared helpers for the unit and acceptance tests: temporary directories,
// synthetic generators with planted structure, brute-force oracles and an
// on-disk fixture corpus for end-to-end runs.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "s3m/analogy.hpp"
#include "s3m/embeddings.hpp"
#include "s3m/probe.hpp"
#include "s3m/random.hpp"
#include "s3m/stimuli.hpp"

namespace s3m::testing {

class TempDir {
 public:
  explicit TempDir(const std::string& prefix = "s3m-test");
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

double gaussian(Rng& rng);
Vec gaussian_vector(Rng& rng, int dim, double sigma = 1.0);

/// Store of base/inflected word types: base tokens are the type vector plus
/// noise, inflected tokens add the offset of their inflection. Pairs
/// alternate NNS and VBZ; allomorphs cycle z, s, Iz.
struct PlantedGeometry {
  int pairs = 100;
  int tokens_per_type = 5;
  int dim = 32;
  double offset_norm = 3.0;
  /// Per-coordinate noise sigma as a fraction of the offset norm.
  double noise_fraction = 0.05;
  /// One offset for every inflection when true, otherwise one per inflection.
  bool shared_offset = true;
  std::uint64_t seed = 1;
};

struct PlantedStore {
  EmbeddingStore store;
  std::vector<InflectionPair> pairs;
  std::vector<Vec> offsets;
};

PlantedStore make_planted_store(const PlantedGeometry& g);

/// Store from explicit (word, vector) rows; refs are ("u", row index).
EmbeddingStore store_from_rows(const std::vector<std::pair<std::string, Vec>>& rows,
                               const std::string& space = "raw-layer-0");

/// Pair with placeholder transcriptions, enough for the analogy code.
InflectionPair make_pair(const std::string& base, const std::string& inflected, Inflection inflection,
                         Allomorph allomorph = Allomorph::z);

/// Frame pools where each word type lives near a point of its own random
/// low-dimensional subspace of a signal block, buried under large nuisance
/// variance in the remaining coordinates.
struct PlantedClusters {
  int types = 12;
  int tokens_per_type = 20;
  int frames_per_token = 4;
  int signal_dims = 12;
  int nuisance_dims = 36;
  int subspace_dims = 3;
  double spread = 0.25;
  double nuisance_sigma = 4.0;
  std::uint64_t seed = 3;
};

struct ClusterSplits {
  FramePool train;
  FramePool validation;
  FramePool test;
};

ClusterSplits make_planted_clusters(const PlantedClusters& c);

/// Rank by full sort: average distance of every row to the predicted vectors
/// computed row by row, stable sort by distance, position of the first row of
/// the target word.
std::size_t brute_force_rank(const EmbeddingStore& store, const Mat& predicted, const std::string& target);

/// Two-sample Kolmogorov-Smirnov statistic and asymptotic p-value.
struct KsResult {
  double statistic = 0.0;
  double p = 1.0;
};
KsResult ks_two_sample(std::vector<double> a, std::vector<double> b);

/// Synthetic corpus on disk: activations for several layers, an alignment
/// manifest, four disjoint split manifests, a frequency table and a config.
/// Word types are drawn from the shipped curated lists so the stimulus
/// selection finds real pairs.
struct FixtureOptions {
  int dim = 24;
  int layers = 3;
  int analysis_layer = 1;
  int out_dim = 8;
  int train_tokens = 4;
  int heldout_tokens = 2;
  int eval_tokens = 4;
  int frames_per_phone = 2;
  int max_epochs = 6;
  std::uint64_t seed = 11;
};

struct Fixture {
  std::filesystem::path root;
  std::filesystem::path config;
};

Fixture write_fixture(const std::filesystem::path& root, const FixtureOptions& options = {});

/// Every regular file below `root`, relative, sorted.
std::vector<std::string> list_tree(const std::filesystem::path& root);
std::string read_bytes(const std::filesystem::path& path);

}  // namespace s3m::testing

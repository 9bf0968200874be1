#pragma once

// Linear word probe: frame projection, contrastive cosine-distance hinge loss,
// triple sampling, AdamW training with early stopping, retrieval mAP and
// hyperparameter selection.

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "s3m/corpus_io.hpp"
#include "s3m/random.hpp"

namespace s3m {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using WeightMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct TrainConfig {
  double learning_rate = 0.00108;
  double weight_decay = 0.00607;
  double margin = 0.37590;
  int out_dim = 32;
  int batch_size = 256;
  int max_epochs = 50;
  int patience = 5;
  std::uint64_t seed = 0;
  int triples_per_anchor = 1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  /// Validation triples drawn once per run; 0 means one per validation anchor.
  int validation_triples = 0;

  /// Throws ConfigError unless every field is in range.
  void validate() const;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double validation_loss = 0.0;
  std::optional<double> map;
};

struct ProbeMetadata {
  std::uint64_t seed = 0;
  int epochs_run = 0;
  int best_epoch = 0;
  double final_validation_loss = 0.0;
  TrainConfig config;
  std::vector<EpochRecord> history;
};

struct ProbeParams {
  WeightMatrix weights;  // out_dim x in_dim
  int layer = 0;
  double margin = 0.37590;
  ProbeMetadata metadata;

  int in_dim() const { return static_cast<int>(weights.cols()); }
  int out_dim() const { return static_cast<int>(weights.rows()); }

  /// Entries finite, out_dim < in_dim, margin in (0, 2).
  void validate() const;
};

inline constexpr std::uint16_t kProbeFormatVersion = 1;

std::string encode_probe(const ProbeParams& p);
ProbeParams decode_probe(std::string_view bytes, const std::string& context = "probe");
void write_probe_file(const std::filesystem::path& path, const ProbeParams& p);
ProbeParams read_probe_file(const std::filesystem::path& path);

/// z = W x, accumulated in double.
Vec project_frame(const ProbeParams& params, std::span<const float> x);
Vec project_frame(const Mat& weights, const Vec& x);

/// 1 - cosine similarity; NumericError on a zero-norm argument.
double cosine_distance(const Vec& a, const Vec& b);

/// max(0, m + d(a, p) - d(a, n)) with d the cosine distance.
double hinge_loss(const Vec& anchor, const Vec& positive, const Vec& negative, double margin);

struct TripleFrames {
  Vec anchor;
  Vec positive;
  Vec negative;
};

/// Loss of one raw-frame triple under weights W; adds dL/dW into `grad` when
/// the hinge is active (strictly positive), leaves it untouched otherwise.
double hinge_loss_and_gradient(const Mat& weights, const TripleFrames& t, double margin, Mat* grad);

/// Frames of a corpus split, grouped by token and word type.
class FramePool {
 public:
  struct Token {
    int type = 0;
    std::size_t begin = 0;  // row range in frames()
    std::size_t end = 0;
  };

  /// Appends one token's frames under the given word type.
  void add_token(const std::string& word, const FrameMatrix& frames);
  void add_token(const std::string& word, const Eigen::Ref<const FrameMatrix>& frames);

  Eigen::Map<const FrameMatrix> frames() const {
    return {data_.data(), static_cast<Eigen::Index>(frame_count()), static_cast<Eigen::Index>(dim_)};
  }
  const std::vector<Token>& tokens() const { return tokens_; }
  const std::vector<std::string>& type_names() const { return type_names_; }
  /// Token indices per type id.
  const std::vector<std::vector<std::size_t>>& tokens_of_type() const { return tokens_of_type_; }
  std::size_t frame_count() const { return frame_type_.size(); }
  std::size_t dim() const { return dim_; }
  int type_of_frame(std::size_t frame) const { return frame_type_[frame]; }
  std::size_t token_of_frame(std::size_t frame) const { return frame_token_[frame]; }

  /// Frames whose type has at least two tokens.
  std::vector<std::size_t> anchor_frames() const;

 private:
  std::vector<float> data_;
  std::size_t dim_ = 0;
  std::unordered_map<std::string, int> type_ids_;
  std::vector<Token> tokens_;
  std::vector<std::string> type_names_;
  std::vector<std::vector<std::size_t>> tokens_of_type_;
  std::vector<int> frame_type_;
  std::vector<std::size_t> frame_token_;
};

struct FrameTriple {
  std::size_t anchor = 0;
  std::size_t positive = 0;
  std::size_t negative = 0;
  friend bool operator==(const FrameTriple&, const FrameTriple&) = default;
};

/// For each anchor draws `per_anchor` triples: positive token uniform over the
/// other tokens of the anchor's type, positive frame uniform within it;
/// negative frame uniform over frames of other types.
std::vector<FrameTriple> sample_triples_for_anchors(const FramePool& pool, std::span<const std::size_t> anchors,
                                                    int per_anchor, Rng& rng);

/// `count` triples with anchors drawn uniformly from the eligible frames.
std::vector<FrameTriple> sample_contrastive_batch(const FramePool& pool, std::size_t count, Rng& rng);

struct MapResult {
  double map = 0.0;
  std::size_t queries = 0;
  std::size_t skipped = 0;  // queries without any relevant frame
};

/// Retrieval mAP over frame vectors (rows). Relevant = same type, different
/// token; frames of the query's own token are left out of its ranking.
/// Similarity ties keep row order.
MapResult mean_average_precision(const Mat& vectors, std::span<const int> types, std::span<const std::size_t> tokens);

/// Projects the pool through the probe and scores retrieval mAP; a non-zero
/// `max_queries` scores an evenly spaced subset of query frames.
MapResult probe_map(const ProbeParams& params, const FramePool& pool, std::size_t max_queries = 0);
MapResult probe_map(const Mat& weights, const FramePool& pool, std::size_t max_queries = 0);

/// Uniform(+-sqrt(6 / (in + out))) initialisation.
Mat init_weights(int out_dim, int in_dim, Rng& rng);

/// AdamW state for one weight matrix. Weight decay is applied to the
/// parameters directly (p *= 1 - lr * wd) before the moment update.
class AdamW {
 public:
  AdamW(Eigen::Index rows, Eigen::Index cols, const TrainConfig& config);
  void step(Mat& params, const Mat& grad);
  int steps() const { return t_; }

 private:
  Mat m_;
  Mat v_;
  int t_ = 0;
  double lr_, wd_, b1_, b2_, eps_;
};

double mean_triple_loss(const Mat& weights, const FramePool& pool, std::span<const FrameTriple> triples,
                        double margin, Mat* grad = nullptr);

struct TrainResult {
  ProbeParams params;
  double initial_validation_loss = 0.0;
};

/// Trains on `train` with early stopping on `validation` (the two must come
/// from disjoint utterances; the caller owns that split). Returns the best
/// validation-loss parameters. Throws NumericError on a non-finite loss.
TrainResult train_probe(const FramePool& train, const FramePool& validation, const TrainConfig& config,
                        int layer = 0, const Mat* initial_weights = nullptr,
                        const std::function<void(const EpochRecord&)>& on_epoch = {});

struct SearchCandidate {
  TrainConfig config;
  ProbeParams params;
  double selection_map = 0.0;
  double validation_loss = 0.0;
};

struct SearchResult {
  std::size_t best = 0;
  std::vector<SearchCandidate> candidates;

  const SearchCandidate& winner() const { return candidates.at(best); }
};

/// Log-uniform ranges for random search.
struct SearchSpace {
  double lr_min = 1e-4, lr_max = 1e-2;
  double wd_min = 1e-4, wd_max = 1e-1;
  double margin_min = 0.1, margin_max = 1.0;
  std::vector<int> out_dims{16, 32, 64};
};

std::vector<TrainConfig> sample_search_space(const SearchSpace& space, const TrainConfig& base, std::size_t budget,
                                             Rng& rng);

/// Trains every candidate and picks the highest selection-set mAP; ties go to
/// the lower validation loss, then the lower candidate index. Candidates run
/// on up to `jobs` threads; results do not depend on the thread count.
SearchResult hyperparameter_search(std::span<const TrainConfig> space, const FramePool& train,
                                   const FramePool& validation, const FramePool& selection, int layer = 0,
                                   int jobs = 1, std::size_t max_map_queries = 0);

}  // namespace s3m

#pragma once

// Vector-offset analogies over an embedding store: prediction, averaged
// cosine-distance ranking, random baseline, transfer matrices, false friends,
// forced choice, same-word bound and layer sweeps.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "s3m/embeddings.hpp"
#include "s3m/random.hpp"
#include "s3m/stimuli.hpp"

namespace s3m {

/// The stores an analogy reads from. Word mode uses one store for every term.
/// Phoneme mode ranks against final-phoneme embeddings and takes the
/// subtracted term of a source pair from the constancy point of the same
/// inflected token: d = f_f(b) - f_c(b) + f_f(c).
class AnalogyContext {
 public:
  explicit AnalogyContext(const EmbeddingStore& store);
  AnalogyContext(const EmbeddingStore& final_store, const EmbeddingStore& constancy_store);

  const EmbeddingStore& store() const { return *store_; }
  bool phoneme_mode() const { return constancy_ != nullptr; }
  const EmbeddingStore* constancy_store() const { return constancy_; }

  /// Rows of `word` usable as the inflected term of a source pair (in phoneme
  /// mode, only tokens that also have a constancy embedding).
  std::vector<std::size_t> source_rows(std::string_view word) const;
  /// Constancy-store row for a final-store row (phoneme mode only).
  std::size_t constancy_row(std::size_t final_row) const;

 private:
  const EmbeddingStore* store_;
  const EmbeddingStore* constancy_ = nullptr;
  std::map<std::size_t, std::size_t> constancy_of_;
};

/// Rows feeding one predicted vector: store[b] - minus[a] + store[c], where
/// `minus` is the store itself in word mode and the constancy store in
/// phoneme mode.
struct TokenTriple {
  std::size_t a = 0;
  std::size_t b = 0;
  std::size_t c = 0;
  friend bool operator==(const TokenTriple&, const TokenTriple&) = default;
};

struct AnalogyConfig {
  /// Token triples per analogy.
  int samples = 20;
  /// Cap `samples` at the number of distinct token triples.
  bool cap_samples = true;
  std::uint64_t seed = 0;
  int jobs = 1;
  bool with_baseline = false;
  /// 0 keeps every (source, target) combination; otherwise a seeded subset
  /// of this size per transfer-matrix cell.
  std::size_t max_trials_per_cell = 0;
};

int effective_samples(const AnalogyConfig& config, std::size_t combinations);

/// Draws S triples uniformly and independently from a x b x c (word mode), or
/// from b x c with a = constancy row of b (phoneme mode).
std::vector<TokenTriple> draw_token_triples(const AnalogyContext& ctx, std::string_view a, std::string_view b,
                                            std::string_view c, const AnalogyConfig& config, Rng& rng);

/// One predicted vector per triple (rows), in double.
Mat predict_vectors(const AnalogyContext& ctx, std::span<const TokenTriple> triples);

/// Mean cosine distance of every store row to the predicted vectors.
/// NumericError if a predicted vector is zero.
std::vector<double> averaged_distances(const EmbeddingStore& store, const Mat& predicted, int jobs = 1);

struct RankResult {
  std::size_t rank = 0;
  double distance = 0.0;
  std::size_t best_row = 0;
};

/// Rank of the closest target row among all rows not in `excluded`: the
/// number of candidate rows strictly closer, ties resolved by row index.
/// `excluded` must be sorted.
RankResult rank_rows(std::span<const double> distances, std::span<const std::size_t> targets,
                     std::span<const std::size_t> excluded = {});

/// DataError when the target word has no rows.
RankResult rank_target(const EmbeddingStore& store, const Mat& predicted, std::string_view target_word,
                       int jobs = 1);

struct BaselineDraw {
  std::string a;
  std::string b;
  RankResult result;
};

/// Replaces (a, b) with a uniformly drawn pair of distinct word types and
/// ranks the target d from c as usual.
BaselineDraw random_baseline(const AnalogyContext& ctx, std::string_view c, std::string_view d,
                             const AnalogyConfig& config, Rng& rng);

struct AnalogyOutcome {
  std::string experiment;
  std::string source;  // a:b
  std::string target;  // c:d
  Inflection inflection_from = Inflection::NNS;
  Inflection inflection_to = Inflection::NNS;
  Allomorph allomorph_from = Allomorph::z;
  Allomorph allomorph_to = Allomorph::z;
  std::string cell_from;
  std::string cell_to;
  std::size_t rank = 0;
  double distance = 0.0;
  int samples = 0;
  std::uint64_t seed = 0;
  std::optional<std::size_t> baseline_rank;
};

/// Seed of one trial, derived from the experiment label and the pair keys so
/// that it does not depend on evaluation order.
std::uint64_t trial_seed(std::uint64_t root, std::string_view experiment, const InflectionPair& source,
                         const InflectionPair& target);

AnalogyOutcome run_trial(const AnalogyContext& ctx, const InflectionPair& source, const InflectionPair& target,
                         const AnalogyConfig& config, std::string_view experiment = "analogy");

/// Category label of a pair, or nullopt to leave it out.
using CategoryFn = std::function<std::optional<std::string>(const InflectionPair&)>;

std::optional<std::string> morphology_category(const InflectionPair& p);  // "NNS" / "VBZ"
std::optional<std::string> allomorph_category(const InflectionPair& p);   // "NNS-z", ...

struct TransferCell {
  std::string from;
  std::string to;
  std::size_t trials = 0;
  std::size_t targets = 0;
  std::optional<double> mean;
  std::optional<double> median;
  /// Standard error of the mean over per-target-pair means.
  std::optional<double> se;
  std::optional<double> baseline_mean;
};

struct TransferMatrix {
  std::vector<std::string> labels;
  std::vector<TransferCell> cells;  // row-major, labels x labels

  const TransferCell& at(std::string_view from, std::string_view to) const;
};

struct TransferResult {
  TransferMatrix matrix;
  std::vector<AnalogyOutcome> outcomes;
  std::vector<std::string> skipped;
};

/// Every (source, target) combination with distinct pairs, both categorised,
/// grouped into cells. Pairs with a missing term in the store are skipped.
TransferResult transfer_matrix(const AnalogyContext& ctx, std::span<const InflectionPair> pairs,
                               const CategoryFn& category, const std::vector<std::string>& labels,
                               const AnalogyConfig& config, std::string_view experiment);

struct FalseFriendPanel {
  Inflection inflection = Inflection::NNS;
  TransferResult result;
};

/// One 2x2 panel per inflection: real pairs of that inflection against the
/// false-friend pairs (labels "NNS" and "NNS-FF", ...).
std::vector<FalseFriendPanel> false_friend_eval(const AnalogyContext& ctx, std::span<const InflectionPair> real,
                                                std::span<const InflectionPair> false_friends,
                                                const AnalogyConfig& config);

struct ForcedChoiceDraw {
  std::size_t source = 0;  // index into the source pairs
  TokenTriple rows;
};

struct ForcedChoiceConfig {
  int draws = 1000;
  /// Enumerate every (source pair, token triple) instead of sampling; each
  /// source pair carries equal weight.
  bool exhaustive = false;
  std::uint64_t seed = 0;
};

struct TripleOutcome {
  std::string key;
  std::size_t draws = 0;
  double consistent_weight = 0.0;
  double preference = 0.0;
};

struct ForcedChoiceResult {
  std::vector<TripleOutcome> triples;
  std::vector<std::string> skipped;
  /// (preference, fraction of triples with preference <= it), ascending.
  std::vector<std::pair<double, double>> cdf;
};

/// Nearest-token choice between the two candidate row sets for one predicted
/// vector; true when the consistent set wins. Equal distances go to the lower
/// row index.
bool prefers_consistent(const EmbeddingStore& store, const Vec& predicted,
                        std::span<const std::size_t> consistent_rows, std::span<const std::size_t> inconsistent_rows);

/// Rows of every orthographic variant in a homophone group, ascending.
std::vector<std::size_t> group_rows(const EmbeddingStore& store, std::span<const std::string> words);

ForcedChoiceResult forced_choice(const AnalogyContext& ctx, std::span<const InflectionPair> sources,
                                 std::span<const ForcedChoiceTriple> triples, const ForcedChoiceConfig& config);

std::vector<std::pair<double, double>> preference_cdf(std::span<const double> preferences);

struct SameWordOutcome {
  std::string pair;
  Inflection inflection = Inflection::NNS;
  std::size_t rank = 0;
};

struct SameWordResult {
  std::vector<SameWordOutcome> outcomes;
  std::map<std::string, double> mean_rank;  // by inflection
  std::vector<std::string> skipped;
};

/// Splits the tokens of each base and inflected type into disjoint source and
/// target halves; predicts y_src - x_src + x_tgt and ranks the nearest
/// target-half token of y among all rows except y's source half.
SameWordResult same_word_eval(const EmbeddingStore& store, std::span<const InflectionPair> pairs,
                              const AnalogyConfig& config);

struct SweepPoint {
  int layer = 0;
  std::string space;
  std::string cell;  // "all" or "from->to"
  std::optional<double> mean_rank;
  std::size_t trials = 0;
};

/// Builds the store for a (layer, space) pair; returns nullopt for a missing
/// layer, which leaves a gap in the series.
using StoreProvider = std::function<std::optional<EmbeddingStore>(int layer, SpaceKind space)>;

std::vector<SweepPoint> layer_sweep(std::span<const int> layers, std::span<const SpaceKind> spaces,
                                    const StoreProvider& provider, std::span<const InflectionPair> pairs,
                                    const AnalogyConfig& config, std::vector<std::string>* log = nullptr);

void write_outcomes_jsonl(const std::filesystem::path& path, std::span<const AnalogyOutcome> outcomes);
void write_transfer_csv(const std::filesystem::path& path, const TransferMatrix& matrix);
void write_forced_choice_csv(const std::filesystem::path& triples_path, const std::filesystem::path& cdf_path,
                             const ForcedChoiceResult& result);

}  // namespace s3m

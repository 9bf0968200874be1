#pragma once

// Token embeddings: mean pooling over word or phoneme spans, the embedding
// store and its file format, and PCA of store geometry.

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "s3m/corpus_io.hpp"
#include "s3m/probe.hpp"
#include "s3m/random.hpp"
#include "s3m/stimuli.hpp"

namespace s3m {

using EmbeddingMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class SpaceKind { raw, probe };
enum class PoolingKind { word, phoneme_final, phoneme_constancy };

/// "raw-layer-8" / "probe-layer-8".
struct SpaceTag {
  SpaceKind kind = SpaceKind::raw;
  int layer = 0;

  std::string str() const;
  static SpaceTag parse(std::string_view s);
  friend bool operator==(const SpaceTag&, const SpaceTag&) = default;
};

/// "word", "phoneme:final", "phoneme:constancy".
std::string_view to_string(PoolingKind p);
PoolingKind parse_pooling(std::string_view s);

struct TokenRef {
  std::string utterance_id;
  int token_index = 0;
  friend bool operator==(const TokenRef&, const TokenRef&) = default;
  friend auto operator<=>(const TokenRef&, const TokenRef&) = default;
};

struct TokenEmbedding {
  TokenRef ref;
  std::string word;
  std::string space;
  /// "word" or "phoneme:<label>@<position>".
  std::string pooling;
  Vec vector;
};

/// Mean of the frames in `range`, accumulated in double. DataError when the
/// range is empty or runs past the matrix.
Vec pool_frames(const Eigen::Ref<const FrameMatrix>& frames, FrameRange range);

/// Word-level mean pooling; with a probe the pooled vector is projected (the
/// two orders agree since both maps are linear).
TokenEmbedding pool_word(const ActivationMatrix& activations, const WordToken& token,
                         const ProbeParams* probe = nullptr);

/// Index of the pooled phoneme in the token's transcription: the last phoneme
/// for `phoneme_final`, position |base| - 1 for `phoneme_constancy`. Throws
/// DataError when the alignment has no phonemes or `base` is not a proper
/// prefix of the token's labels.
std::size_t phoneme_position(const WordToken& token, PoolingKind which, const PhonForm* base = nullptr);

TokenEmbedding pool_phoneme(const ActivationMatrix& activations, const WordToken& token, PoolingKind which,
                            const PhonForm* base = nullptr, const ProbeParams* probe = nullptr);

struct StoreRow {
  TokenRef ref;
  std::string word;
  std::string phone;  // empty for word pooling
  int position = -1;
  friend bool operator==(const StoreRow&, const StoreRow&) = default;
};

/// Immutable matrix of token embeddings in one (space, pooling) configuration.
class EmbeddingStore {
 public:
  EmbeddingStore() = default;
  /// Throws DataError on a row/metadata count mismatch, a non-finite entry or
  /// a zero row.
  EmbeddingStore(std::string space, std::string pooling, EmbeddingMatrix vectors, std::vector<StoreRow> rows);

  const std::string& space() const { return space_; }
  const std::string& pooling() const { return pooling_; }
  const EmbeddingMatrix& vectors() const { return vectors_; }
  const std::vector<StoreRow>& rows() const { return rows_; }
  std::size_t size() const { return rows_.size(); }
  std::size_t dim() const { return static_cast<std::size_t>(vectors_.cols()); }
  const std::vector<double>& inverse_norms() const { return inverse_norms_; }

  /// Row indices of a word type, ascending; empty when absent.
  std::span<const std::size_t> rows_of(std::string_view word) const;
  bool contains(std::string_view word) const { return !rows_of(word).empty(); }
  /// Word types in lexicographic order.
  std::vector<std::string> words() const;

  friend bool operator==(const EmbeddingStore& a, const EmbeddingStore& b);

 private:
  std::string space_;
  std::string pooling_;
  EmbeddingMatrix vectors_;
  std::vector<StoreRow> rows_;
  std::vector<double> inverse_norms_;
  std::map<std::string, std::vector<std::size_t>, std::less<>> by_word_;
};

inline constexpr std::uint16_t kStoreFormatVersion = 1;

std::string encode_store(const EmbeddingStore& store);
EmbeddingStore decode_store(std::string_view bytes, const std::string& context = "store");
void write_store_file(const std::filesystem::path& path, const EmbeddingStore& store);
EmbeddingStore read_store_file(const std::filesystem::path& path);

using ActivationLoader = std::function<ActivationMatrix(const std::string& utterance_id)>;

struct StoreSpec {
  SpaceTag space;
  PoolingKind pooling = PoolingKind::word;
  const ProbeParams* probe = nullptr;
  /// Inflected word -> base transcription; required for constancy pooling,
  /// which only covers tokens listed here.
  const Lexicon* constancy_bases = nullptr;
  int jobs = 1;
};

struct StoreLog {
  std::size_t considered = 0;
  std::vector<std::string> skipped;
};

/// One row per usable token, ordered by (utterance_id, token_index). Tokens
/// that fail to pool are skipped and logged. Each utterance is loaded once.
EmbeddingStore build_store(std::span<const WordToken> tokens, const ActivationLoader& load, const StoreSpec& spec,
                           StoreLog* log = nullptr);

struct PcaBasis {
  Eigen::VectorXd mean;
  Mat components;  // dim x k, orthonormal columns
  Eigen::VectorXd eigenvalues;
  Eigen::VectorXd explained_ratio;
  std::vector<std::string> warnings;
};

/// Top-k eigenvectors of the covariance of all store rows, eigenvalues
/// non-increasing. With fewer than k non-zero eigenvalues the available
/// components are returned together with a warning.
PcaBasis pca_fit(const EmbeddingStore& store, int k);
PcaBasis pca_fit(const Mat& rows, int k);

struct PairDifference {
  std::string pair;
  std::size_t base_row = 0;
  std::size_t inflected_row = 0;
  Eigen::VectorXd coords;
};

struct PcaReport {
  PcaBasis basis;
  std::vector<PairDifference> differences;
  Eigen::VectorXd mean_direction;
};

/// Projects sampled token differences b - a of each pair onto the basis.
PcaReport pca_project(const EmbeddingStore& store, int k, std::span<const InflectionPair> pairs,
                      int samples_per_pair, Rng& rng);

}  // namespace s3m

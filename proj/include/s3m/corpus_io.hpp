#pragma once

// On-disk formats for frame activations, word alignments, frequency tables and
// run manifests, plus the mapping from aligned time spans to frame indices.

#include <Eigen/Core>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace s3m {

using FrameMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Microseconds = std::chrono::microseconds;

inline constexpr std::uint16_t kActivationFormatVersion = 1;

/// Frame activations of one utterance at one layer (frames x dim).
struct ActivationMatrix {
  std::string utterance_id;
  std::uint16_t layer = 0;
  Microseconds hop{20000};
  FrameMatrix frames;

  std::size_t frame_count() const { return static_cast<std::size_t>(frames.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(frames.cols()); }
  double hop_ms() const { return static_cast<double>(hop.count()) / 1000.0; }

  friend bool operator==(const ActivationMatrix& a, const ActivationMatrix& b);
};

std::string encode_activation(const ActivationMatrix& m);
ActivationMatrix decode_activation(std::string_view bytes, const std::string& context = "activation");

ActivationMatrix read_activation_file(const std::filesystem::path& path);
void write_activation_file(const std::filesystem::path& path, const ActivationMatrix& m);

struct PhonemeSpan {
  std::string label;
  double onset_s = 0.0;
  double offset_s = 0.0;
};

struct WordToken {
  std::string utterance_id;
  int token_index = 0;
  std::string word;  // lowercased
  std::string pos_tag;
  double onset_s = 0.0;
  double offset_s = 0.0;
  std::vector<PhonemeSpan> phonemes;
};

/// Throws DataError unless onset < offset and the phoneme spans are ordered,
/// non-overlapping and contained in the word span.
void validate_token(const WordToken& token);

/// Half-open range of frame indices.
struct FrameRange {
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t size() const { return end > begin ? end - begin : 0; }
  bool empty() const { return end <= begin; }
  bool contains(const FrameRange& inner) const {
    return inner.empty() || (inner.begin >= begin && inner.end <= end);
  }
  friend bool operator==(const FrameRange&, const FrameRange&) = default;
};

struct TokenFrames {
  FrameRange word;
  std::vector<FrameRange> phonemes;
  bool usable = false;
};

/// Seconds to integer microseconds (nearest). All span arithmetic runs on this
/// grid so boundary decisions are exact.
std::int64_t to_microseconds(double seconds);

/// Frame t belongs to [onset, offset) iff its centre (t + 0.5) * hop lies in it.
FrameRange frames_in_span(double onset_s, double offset_s, Microseconds hop);

TokenFrames assign_frames(const WordToken& token, Microseconds hop);

/// Clips a range to the frames actually present in an activation matrix.
FrameRange clip(FrameRange r, std::size_t frame_count);

// Alignment manifest: JSON Lines, one WordToken per line.
WordToken parse_word_token(std::string_view json_line);
std::string format_word_token(const WordToken& token);

/// Reads and validates every token; rejects overlapping word spans within an
/// utterance and duplicate (utterance_id, token_index) keys.
std::vector<WordToken> read_alignment_manifest(const std::filesystem::path& path);
void write_alignment_manifest(const std::filesystem::path& path, const std::vector<WordToken>& tokens);

/// Tokens grouped by utterance, each group sorted by token_index.
std::map<std::string, std::vector<WordToken>> group_by_utterance(const std::vector<WordToken>& tokens);

std::string to_lower(std::string_view s);

/// word -> log10 frequency. Absent words are an explicit miss.
class FrequencyTable {
 public:
  static FrequencyTable read(const std::filesystem::path& path);
  static FrequencyTable parse(std::string_view tsv);

  void set(std::string_view word, double log10_frequency);
  std::optional<double> lookup(std::string_view word) const;
  std::size_t size() const { return entries_.size(); }

 private:
  std::unordered_map<std::string, double> entries_;
};

struct ManifestUtterance {
  std::string utterance_id;
  /// May contain the placeholder "{layer}", substituted per layer.
  std::string activation_path;
  std::size_t alignment_count = 0;
};

struct RunManifest {
  std::string split;
  int layer = 0;
  std::string alignments;
  std::vector<ManifestUtterance> utterances;
  std::filesystem::path base_dir;  // relative paths resolve against this

  std::filesystem::path activation_path(const ManifestUtterance& u, int layer_override = -1) const;
  std::filesystem::path alignments_path() const;
};

/// Parses the manifest and checks that utterance ids are unique and every
/// referenced file exists for the manifest's own layer.
RunManifest read_run_manifest(const std::filesystem::path& path);
void write_run_manifest(const std::filesystem::path& path, const RunManifest& manifest);

/// Deep check: every activation file parses, carries the declared utterance id,
/// all hops agree, and alignment counts match. Returns the common hop.
Microseconds validate_run_manifest(const RunManifest& manifest, int layer = -1);

}  // namespace s3m

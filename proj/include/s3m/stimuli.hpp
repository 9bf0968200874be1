#pragma once

// Stimulus materials: phoneme features, word-final allomorph classification,
// POS-unambiguous noun/verb selection, base/inflected pairing, false friends
// and forced-choice triples.

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "s3m/corpus_io.hpp"

namespace s3m {

enum class Allomorph { z, s, Iz, none };
enum class Consistency { consistent, inconsistent, not_applicable };
enum class Inflection { NNS, VBZ, FF };

std::string_view to_string(Allomorph a);
std::string_view to_string(Consistency c);
std::string_view to_string(Inflection i);
Allomorph parse_allomorph(std::string_view s);
Inflection parse_inflection(std::string_view s);

struct PhonemeFeatures {
  bool voiced = false;
  bool sibilant = false;
};

/// Phoneme label -> (voiced, sibilant). Labels are matched after upper-casing
/// and stripping ARPAbet stress digits.
class FeatureInventory {
 public:
  static FeatureInventory read(const std::filesystem::path& path);
  static FeatureInventory parse(std::string_view tsv);

  static std::string normalize(std::string_view label);

  bool contains(std::string_view label) const;
  /// Throws DataError for labels outside the inventory.
  const PhonemeFeatures& at(std::string_view label) const;
  std::size_t size() const { return features_.size(); }

 private:
  std::map<std::string, PhonemeFeatures, std::less<>> features_;
};

/// Ordered, normalized phoneme labels.
struct PhonForm {
  std::vector<std::string> phones;

  /// Parses whitespace-separated labels and checks each against the inventory.
  static PhonForm parse(std::string_view text, const FeatureInventory& inventory);
  static PhonForm from_labels(std::span<const std::string> labels, const FeatureInventory& inventory);

  std::string str() const;
  bool empty() const { return phones.empty(); }
  bool is_proper_prefix_of(const PhonForm& other) const;
  friend bool operator==(const PhonForm&, const PhonForm&) = default;
  friend auto operator<=>(const PhonForm&, const PhonForm&) = default;
};

struct AllomorphClass {
  Allomorph allomorph = Allomorph::none;
  Consistency consistency = Consistency::not_applicable;
  friend bool operator==(const AllomorphClass&, const AllomorphClass&) = default;
};

/// Reduced vowels that can carry the [Iz] allomorph.
bool is_i_class_vowel(std::string_view phone);

/// Detects a word-final [z], [s] or [Iz] and whether it agrees with the
/// voicing/sibilance of the preceding sound:
///   [z] after voiced non-sibilants, [s] after voiceless non-sibilants,
///   [Iz] after sibilants.
/// A final reduced vowel + /z/ reads as [Iz] only when a sibilant precedes the
/// vowel; otherwise it is [z] after a voiced vowel.
AllomorphClass classify_allomorph(const PhonForm& form, const FeatureInventory& inventory);

/// Suffix phones appended by an allomorph ({Z}, {S}, {IH Z}).
std::vector<std::string> suffix_phones(Allomorph a);

struct WordForm {
  std::string word;
  PhonForm form;
};

struct InflectionPair {
  WordForm base;
  WordForm inflected;
  Inflection inflection = Inflection::NNS;
  Allomorph allomorph = Allomorph::z;

  std::string key() const { return base.word + ":" + inflected.word; }
};

/// Length of the suffix separating base from inflected, or nullopt when the
/// inflected form is not base + one of the allomorph suffixes.
std::optional<std::size_t> suffix_length(const PhonForm& base, const PhonForm& inflected);

/// Inflected minus its suffix equals base, and the declared allomorph matches
/// classify_allomorph on the inflected form.
bool pair_is_well_formed(const InflectionPair& pair, const FeatureInventory& inventory);

struct ChoiceCandidate {
  std::vector<std::string> words;  // homophone group of orthographic variants
  std::string ipa;
  PhonForm form;
};

struct ForcedChoiceTriple {
  ChoiceCandidate base;
  ChoiceCandidate consistent;
  ChoiceCandidate inconsistent;

  std::string key() const { return base.words.empty() ? std::string{} : base.words.front(); }
};

/// Returns human-readable problems; empty when the triple satisfies its
/// invariants (base is a prefix of both candidates, consistent candidate obeys
/// the constraints, inconsistent candidate violates them).
std::vector<std::string> check_triple(const ForcedChoiceTriple& t, const FeatureInventory& inventory);

enum class PosEvidence { noun, verb, other };

/// Collapses fine-grained tags to noun/verb evidence by prefix.
struct PosPolicy {
  std::vector<std::string> noun_prefixes{"NN", "NOUN"};
  std::vector<std::string> verb_prefixes{"VB", "VERB"};

  PosEvidence classify(std::string_view tag) const;
};

struct ExcludedPair {
  std::string base;
  std::string inflected;
  std::string reason;
};

/// Manually curated lists. `nouns`/`verbs`, when present, restrict which base
/// types may head a pair.
struct Curation {
  std::optional<std::set<std::string>> nouns;
  std::optional<std::set<std::string>> verbs;
  std::set<std::string> exclude_types;
  std::vector<ExcludedPair> exclude_pairs;

  static Curation read(const std::filesystem::path& path);
  bool pair_excluded(std::string_view base, std::string_view inflected) const;
};

struct Selection {
  std::set<std::string> nouns;
  std::set<std::string> verbs;
  std::vector<std::string> warnings;
};

/// A type is an unambiguous noun iff it has noun evidence and no verb evidence
/// (symmetrically for verbs); curated exclusions are then removed.
Selection select_unambiguous(std::span<const WordToken> tokens, const PosPolicy& policy, const Curation& curation);

using Lexicon = std::map<std::string, PhonForm, std::less<>>;

/// Most frequent transcription per word type across aligned tokens (ties go to
/// the lexicographically smallest form). Tokens whose labels fall outside the
/// inventory are ignored.
Lexicon derive_lexicon(std::span<const WordToken> tokens, const FeatureInventory& inventory);

/// TSV: word TAB space-separated phones.
Lexicon read_lexicon(const std::filesystem::path& path, const FeatureInventory& inventory);

struct PairLog {
  std::vector<std::string> skipped;
};

/// Pairs each selected base with selected types of the same category whose
/// transcription is base + allomorph suffix.
std::vector<InflectionPair> build_pairs(const Selection& selection, const Lexicon& lexicon,
                                        const Curation& curation, const FeatureInventory& inventory,
                                        PairLog* log = nullptr);

/// False-friend pairs (inflection FF); allomorph taken from classification.
std::vector<InflectionPair> read_false_friends(const std::filesystem::path& path, const FeatureInventory& inventory);
std::vector<ForcedChoiceTriple> read_forced_choice(const std::filesystem::path& path,
                                                   const FeatureInventory& inventory);

/// Directory holding the shipped data files (features, curated lists).
std::filesystem::path default_data_dir();

}  // namespace s3m

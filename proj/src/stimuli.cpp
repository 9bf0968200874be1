#include "s3m/stimuli.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "binary_io.hpp"
#include "json.hpp"
#include "s3m/error.hpp"

#ifndef S3M_DATA_DIR
#define S3M_DATA_DIR "data"
#endif

namespace s3m {

using nlohmann::json;
namespace fs = std::filesystem;

std::string_view to_string(Allomorph a) {
  switch (a) {
    case Allomorph::z: return "z";
    case Allomorph::s: return "s";
    case Allomorph::Iz: return "Iz";
    case Allomorph::none: return "none";
  }
  return "?";
}

std::string_view to_string(Consistency c) {
  switch (c) {
    case Consistency::consistent: return "consistent";
    case Consistency::inconsistent: return "inconsistent";
    case Consistency::not_applicable: return "n/a";
  }
  return "?";
}

std::string_view to_string(Inflection i) {
  switch (i) {
    case Inflection::NNS: return "NNS";
    case Inflection::VBZ: return "VBZ";
    case Inflection::FF: return "FF";
  }
  return "?";
}

Allomorph parse_allomorph(std::string_view s) {
  if (s == "z") return Allomorph::z;
  if (s == "s") return Allomorph::s;
  if (s == "Iz") return Allomorph::Iz;
  if (s == "none") return Allomorph::none;
  throw FormatError("unknown allomorph '" + std::string(s) + "'");
}

Inflection parse_inflection(std::string_view s) {
  if (s == "NNS") return Inflection::NNS;
  if (s == "VBZ") return Inflection::VBZ;
  if (s == "FF") return Inflection::FF;
  throw FormatError("unknown inflection '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------

FeatureInventory FeatureInventory::read(const fs::path& path) { return parse(detail::read_file_bytes(path)); }

FeatureInventory FeatureInventory::parse(std::string_view tsv) {
  FeatureInventory inv;
  std::istringstream in{std::string(tsv)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::istringstream fields(line);
    std::string label;
    int voiced = -1;
    int sibilant = -1;
    if (!(fields >> label >> voiced >> sibilant) || voiced < 0 || voiced > 1 || sibilant < 0 || sibilant > 1) {
      throw FormatError("feature inventory line " + std::to_string(lineno) + ": expected label, 0/1, 0/1");
    }
    inv.features_[normalize(label)] = {voiced == 1, sibilant == 1};
  }
  if (inv.features_.empty()) throw FormatError("feature inventory is empty");
  return inv;
}

std::string FeatureInventory::normalize(std::string_view label) {
  std::string out;
  out.reserve(label.size());
  for (unsigned char c : label) {
    if (std::isdigit(c)) continue;  // ARPAbet stress markers
    out.push_back(static_cast<char>(std::toupper(c)));
  }
  return out;
}

bool FeatureInventory::contains(std::string_view label) const { return features_.count(normalize(label)) > 0; }

const PhonemeFeatures& FeatureInventory::at(std::string_view label) const {
  auto it = features_.find(normalize(label));
  if (it == features_.end()) throw DataError("phoneme '" + std::string(label) + "' not in feature inventory");
  return it->second;
}

PhonForm PhonForm::parse(std::string_view text, const FeatureInventory& inventory) {
  std::istringstream in{std::string(text)};
  std::vector<std::string> labels;
  for (std::string l; in >> l;) labels.push_back(l);
  return from_labels(labels, inventory);
}

PhonForm PhonForm::from_labels(std::span<const std::string> labels, const FeatureInventory& inventory) {
  PhonForm f;
  f.phones.reserve(labels.size());
  for (const auto& l : labels) {
    inventory.at(l);
    f.phones.push_back(FeatureInventory::normalize(l));
  }
  return f;
}

std::string PhonForm::str() const {
  std::string out;
  for (const auto& p : phones) {
    if (!out.empty()) out += ' ';
    out += p;
  }
  return out;
}

bool PhonForm::is_proper_prefix_of(const PhonForm& other) const {
  return phones.size() < other.phones.size() && std::equal(phones.begin(), phones.end(), other.phones.begin());
}

bool is_i_class_vowel(std::string_view phone) {
  const auto p = FeatureInventory::normalize(phone);
  return p == "IH" || p == "IX" || p == "AH" || p == "AX";
}

AllomorphClass classify_allomorph(const PhonForm& form, const FeatureInventory& inventory) {
  if (form.empty()) throw DataError("cannot classify an empty phonemic form");
  for (const auto& p : form.phones) inventory.at(p);

  const auto& ph = form.phones;
  const std::size_t n = ph.size();
  const auto& last = ph[n - 1];
  if (last != "Z" && last != "S") return {};

  if (last == "Z" && n >= 3 && is_i_class_vowel(ph[n - 2]) && inventory.at(ph[n - 3]).sibilant) {
    return {Allomorph::Iz, Consistency::consistent};
  }
  const Allomorph a = last == "Z" ? Allomorph::z : Allomorph::s;
  if (n == 1) return {a, Consistency::not_applicable};
  const auto& prev = inventory.at(ph[n - 2]);
  const bool ok = !prev.sibilant && (a == Allomorph::z ? prev.voiced : !prev.voiced);
  return {a, ok ? Consistency::consistent : Consistency::inconsistent};
}

std::vector<std::string> suffix_phones(Allomorph a) {
  switch (a) {
    case Allomorph::z: return {"Z"};
    case Allomorph::s: return {"S"};
    case Allomorph::Iz: return {"IH", "Z"};
    case Allomorph::none: return {};
  }
  return {};
}

std::optional<std::size_t> suffix_length(const PhonForm& base, const PhonForm& inflected) {
  if (!base.is_proper_prefix_of(inflected)) return std::nullopt;
  const std::size_t extra = inflected.phones.size() - base.phones.size();
  const auto& tail = inflected.phones;
  if (extra == 1 && (tail.back() == "Z" || tail.back() == "S")) return 1;
  if (extra == 2 && tail.back() == "Z" && is_i_class_vowel(tail[tail.size() - 2])) return 2;
  return std::nullopt;
}

bool pair_is_well_formed(const InflectionPair& pair, const FeatureInventory& inventory) {
  auto len = suffix_length(pair.base.form, pair.inflected.form);
  if (!len) return false;
  const Allomorph from_suffix =
      *len == 2 ? Allomorph::Iz : (pair.inflected.form.phones.back() == "Z" ? Allomorph::z : Allomorph::s);
  return from_suffix == pair.allomorph && classify_allomorph(pair.inflected.form, inventory).allomorph == pair.allomorph;
}

std::vector<std::string> check_triple(const ForcedChoiceTriple& t, const FeatureInventory& inventory) {
  std::vector<std::string> problems;
  const auto name = t.key();
  if (!t.base.form.is_proper_prefix_of(t.consistent.form)) problems.push_back(name + ": base not a prefix of consistent form");
  if (!t.base.form.is_proper_prefix_of(t.inconsistent.form)) {
    problems.push_back(name + ": base not a prefix of inconsistent form");
  }
  auto c = classify_allomorph(t.consistent.form, inventory);
  if (c.consistency != Consistency::consistent) {
    problems.push_back(name + ": consistent candidate classified " + std::string(to_string(c.consistency)));
  }
  auto i = classify_allomorph(t.inconsistent.form, inventory);
  if (i.consistency != Consistency::inconsistent) {
    problems.push_back(name + ": inconsistent candidate classified " + std::string(to_string(i.consistency)));
  }
  return problems;
}

// ---------------------------------------------------------------------------

PosEvidence PosPolicy::classify(std::string_view tag) const {
  auto starts = [&](const std::vector<std::string>& prefixes) {
    return std::any_of(prefixes.begin(), prefixes.end(), [&](const std::string& p) { return tag.starts_with(p); });
  };
  if (starts(noun_prefixes)) return PosEvidence::noun;
  if (starts(verb_prefixes)) return PosEvidence::verb;
  return PosEvidence::other;
}

Curation Curation::read(const fs::path& path) {
  json j;
  try {
    j = json::parse(detail::read_file_bytes(path));
  } catch (const json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  Curation c;
  auto word_set = [](const json& arr) {
    std::set<std::string> out;
    for (const auto& w : arr) out.insert(to_lower(w.get<std::string>()));
    return out;
  };
  try {
    if (j.contains("nouns")) c.nouns = word_set(j.at("nouns"));
    if (j.contains("verbs")) c.verbs = word_set(j.at("verbs"));
    if (j.contains("exclude_types")) c.exclude_types = word_set(j.at("exclude_types"));
    if (j.contains("exclude_pairs")) {
      for (const auto& p : j.at("exclude_pairs")) {
        c.exclude_pairs.push_back({to_lower(p.at("base").get<std::string>()),
                                   to_lower(p.at("inflected").get<std::string>()), p.value("reason", std::string{})});
      }
    }
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  return c;
}

bool Curation::pair_excluded(std::string_view base, std::string_view inflected) const {
  return std::any_of(exclude_pairs.begin(), exclude_pairs.end(),
                     [&](const ExcludedPair& p) { return p.base == base && p.inflected == inflected; });
}

Selection select_unambiguous(std::span<const WordToken> tokens, const PosPolicy& policy, const Curation& curation) {
  Selection sel;
  if (tokens.empty()) {
    sel.warnings.push_back("empty corpus: no stimuli selected");
    return sel;
  }
  struct Counts {
    std::size_t noun = 0;
    std::size_t verb = 0;
  };
  std::map<std::string, Counts> counts;
  for (const auto& t : tokens) {
    auto& c = counts[t.word];
    switch (policy.classify(t.pos_tag)) {
      case PosEvidence::noun: ++c.noun; break;
      case PosEvidence::verb: ++c.verb; break;
      case PosEvidence::other: break;
    }
  }
  for (const auto& [word, c] : counts) {
    if (curation.exclude_types.count(word)) continue;
    if (c.noun > 0 && c.verb == 0) sel.nouns.insert(word);
    if (c.verb > 0 && c.noun == 0) sel.verbs.insert(word);
  }
  return sel;
}

Lexicon derive_lexicon(std::span<const WordToken> tokens, const FeatureInventory& inventory) {
  std::map<std::string, std::map<PhonForm, std::size_t>> votes;
  for (const auto& t : tokens) {
    if (t.phonemes.empty()) continue;
    std::vector<std::string> labels;
    labels.reserve(t.phonemes.size());
    for (const auto& p : t.phonemes) labels.push_back(p.label);
    PhonForm form;
    try {
      form = PhonForm::from_labels(labels, inventory);
    } catch (const DataError&) {
      continue;  // unknown labels (noise markers etc.) do not vote
    }
    ++votes[t.word][form];
  }
  Lexicon lex;
  for (const auto& [word, forms] : votes) {
    const PhonForm* best = nullptr;
    std::size_t best_n = 0;
    for (const auto& [form, n] : forms) {
      if (n > best_n) {  // map order makes ties resolve to the smallest form
        best = &form;
        best_n = n;
      }
    }
    lex.emplace(word, *best);
  }
  return lex;
}

Lexicon read_lexicon(const fs::path& path, const FeatureInventory& inventory) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open lexicon " + path.string());
  Lexicon lex;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos) throw FormatError(path.string() + ":" + std::to_string(lineno) + ": no TAB");
    try {
      lex.insert_or_assign(to_lower(line.substr(0, tab)), PhonForm::parse(line.substr(tab + 1), inventory));
    } catch (const DataError& e) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return lex;
}

std::vector<InflectionPair> build_pairs(const Selection& selection, const Lexicon& lexicon, const Curation& curation,
                                        const FeatureInventory& inventory, PairLog* log) {
  auto skip = [&](std::string msg) {
    if (log) log->skipped.push_back(std::move(msg));
  };
  std::vector<InflectionPair> pairs;

  auto run = [&](const std::set<std::string>& types, const std::optional<std::set<std::string>>& allow,
                 Inflection inflection) {
    // transcription -> types of this category carrying it
    std::map<std::vector<std::string>, std::vector<std::string>> by_form;
    for (const auto& w : types) {
      if (auto it = lexicon.find(w); it != lexicon.end()) by_form[it->second.phones].push_back(w);
    }
    for (const auto& base : types) {
      if (allow && !allow->count(base)) continue;
      auto bit = lexicon.find(base);
      if (bit == lexicon.end()) {
        skip(base + ": no phonemic transcription");
        continue;
      }
      const PhonForm& bform = bit->second;
      bool found = false;
      for (const std::vector<std::string>& suffix :
           {std::vector<std::string>{"Z"}, {"S"}, {"IH", "Z"}, {"AH", "Z"}, {"IX", "Z"}, {"AX", "Z"}}) {
        auto target = bform.phones;
        target.insert(target.end(), suffix.begin(), suffix.end());
        auto hit = by_form.find(target);
        if (hit == by_form.end()) continue;
        for (const auto& infl : hit->second) {
          if (infl == base) continue;
          // orthographic sanity: inflected spelling extends the base stem
          const std::size_t stem = base.size() > 1 ? base.size() - 1 : base.size();
          if (infl.compare(0, stem, base, 0, stem) != 0) continue;
          if (curation.pair_excluded(base, infl)) {
            skip(base + " -> " + infl + ": curated exclusion");
            continue;
          }
          InflectionPair p{{base, bform}, {infl, lexicon.find(infl)->second}, inflection, Allomorph::none};
          p.allomorph = classify_allomorph(p.inflected.form, inventory).allomorph;
          if (!pair_is_well_formed(p, inventory)) {
            skip(base + " -> " + infl + ": suffix does not match a regular allomorph");
            continue;
          }
          pairs.push_back(std::move(p));
          found = true;
        }
      }
      if (!found && (!allow || allow->count(base))) {
        // Only worth logging for curated bases; most selected types are not bases.
        if (allow) skip(base + ": no inflected form among selected types");
      }
    }
  };
  run(selection.nouns, curation.nouns, Inflection::NNS);
  run(selection.verbs, curation.verbs, Inflection::VBZ);
  std::sort(pairs.begin(), pairs.end(), [](const InflectionPair& a, const InflectionPair& b) {
    return std::tie(a.inflection, a.base.word, a.inflected.word) < std::tie(b.inflection, b.base.word, b.inflected.word);
  });
  return pairs;
}

std::vector<InflectionPair> read_false_friends(const fs::path& path, const FeatureInventory& inventory) {
  json j;
  try {
    j = json::parse(detail::read_file_bytes(path));
  } catch (const json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  std::vector<InflectionPair> out;
  for (const auto& p : j.at("pairs")) {
    InflectionPair pair;
    pair.base = {to_lower(p.at("base").at("word").get<std::string>()),
                 PhonForm::parse(p.at("base").at("phones").get<std::string>(), inventory)};
    pair.inflected = {to_lower(p.at("inflected").at("word").get<std::string>()),
                      PhonForm::parse(p.at("inflected").at("phones").get<std::string>(), inventory)};
    pair.inflection = Inflection::FF;
    pair.allomorph = classify_allomorph(pair.inflected.form, inventory).allomorph;
    out.push_back(std::move(pair));
  }
  return out;
}

std::vector<ForcedChoiceTriple> read_forced_choice(const fs::path& path, const FeatureInventory& inventory) {
  json j;
  try {
    j = json::parse(detail::read_file_bytes(path));
  } catch (const json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  auto candidate = [&](const json& c) {
    ChoiceCandidate out;
    for (const auto& w : c.at("words")) out.words.push_back(to_lower(w.get<std::string>()));
    out.ipa = c.value("ipa", std::string{});
    out.form = PhonForm::parse(c.at("phones").get<std::string>(), inventory);
    return out;
  };
  std::vector<ForcedChoiceTriple> out;
  for (const auto& t : j.at("triples")) {
    out.push_back({candidate(t.at("base")), candidate(t.at("consistent")), candidate(t.at("inconsistent"))});
  }
  return out;
}

fs::path default_data_dir() {
  if (const char* env = std::getenv("S3M_DATA_DIR"); env && *env) return env;
  return S3M_DATA_DIR;
}

}  // namespace s3m

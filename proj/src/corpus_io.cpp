#include "s3m/corpus_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "binary_io.hpp"
#include "json.hpp"
#include "s3m/error.hpp"

namespace s3m {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr std::string_view kActivationMagic = "S3MA";

std::int64_t ceil_div(std::int64_t num, std::int64_t den) {
  // den > 0
  std::int64_t q = num / den;
  if (num % den != 0 && num > 0) ++q;
  return q;
}

}  // namespace

bool operator==(const ActivationMatrix& a, const ActivationMatrix& b) {
  if (a.utterance_id != b.utterance_id || a.layer != b.layer || a.hop != b.hop ||
      a.frames.rows() != b.frames.rows() || a.frames.cols() != b.frames.cols()) {
    return false;
  }
  // Bitwise comparison: the format promises exact round trips.
  return std::memcmp(a.frames.data(), b.frames.data(), sizeof(float) * a.frames.size()) == 0;
}

std::string encode_activation(const ActivationMatrix& m) {
  if (m.frames.cols() <= 0) throw DataError("activation dim must be positive");
  if (m.hop.count() <= 0 || m.hop.count() > 0xffffffffLL) throw DataError("activation hop out of range");
  if (!m.frames.allFinite()) throw DataError("activation '" + m.utterance_id + "' has non-finite values");
  detail::ByteWriter w;
  w.bytes(kActivationMagic);
  w.uint<std::uint16_t>(kActivationFormatVersion);
  w.uint<std::uint16_t>(m.layer);
  w.uint<std::uint32_t>(static_cast<std::uint32_t>(m.frames.cols()));
  w.uint<std::uint32_t>(static_cast<std::uint32_t>(m.frames.rows()));
  w.uint<std::uint32_t>(static_cast<std::uint32_t>(m.hop.count()));
  w.short_string(m.utterance_id);
  w.floats({m.frames.data(), static_cast<std::size_t>(m.frames.size())});
  return w.data();
}

ActivationMatrix decode_activation(std::string_view bytes, const std::string& context) {
  detail::ByteReader r(bytes, context);
  if (bytes.size() < kActivationMagic.size() || r.bytes(kActivationMagic.size()) != kActivationMagic) {
    throw FormatError(context + ": bad magic (expected S3MA)");
  }
  auto version = r.uint<std::uint16_t>();
  if (version != kActivationFormatVersion) {
    throw FormatError(context + ": unsupported version " + std::to_string(version));
  }
  ActivationMatrix m;
  m.layer = r.uint<std::uint16_t>();
  auto dim = r.uint<std::uint32_t>();
  auto frames = r.uint<std::uint32_t>();
  auto hop = r.uint<std::uint32_t>();
  if (dim == 0) throw FormatError(context + ": zero dim");
  if (hop == 0) throw FormatError(context + ": zero hop");
  m.hop = Microseconds(hop);
  m.utterance_id = r.short_string();
  const std::uint64_t count = std::uint64_t{dim} * frames;
  if (count * sizeof(float) > r.remaining()) {
    throw CorruptionError(context + ": payload truncated (" + std::to_string(frames) + "x" + std::to_string(dim) +
                          " floats declared, " + std::to_string(r.remaining()) + " bytes present)");
  }
  m.frames.resize(frames, dim);
  r.floats({m.frames.data(), static_cast<std::size_t>(count)});
  if (r.remaining() != 0) throw FormatError(context + ": trailing bytes after payload");
  if (!m.frames.allFinite()) throw DataError(context + ": non-finite activation values");
  return m;
}

ActivationMatrix read_activation_file(const fs::path& path) {
  return decode_activation(detail::read_file_bytes(path), path.string());
}

void write_activation_file(const fs::path& path, const ActivationMatrix& m) {
  detail::write_file_atomic(path, encode_activation(m));
}

void validate_token(const WordToken& t) {
  auto where = [&] { return t.utterance_id + "#" + std::to_string(t.token_index) + " '" + t.word + "'"; };
  if (!std::isfinite(t.onset_s) || !std::isfinite(t.offset_s) || !(t.onset_s < t.offset_s)) {
    throw DataError(where() + ": onset must precede offset");
  }
  const auto on = to_microseconds(t.onset_s);
  const auto off = to_microseconds(t.offset_s);
  std::int64_t cursor = on;
  for (const auto& p : t.phonemes) {
    const auto pon = to_microseconds(p.onset_s);
    const auto poff = to_microseconds(p.offset_s);
    if (!(pon < poff)) throw DataError(where() + ": phoneme '" + p.label + "' has empty span");
    if (pon < cursor) throw DataError(where() + ": phoneme spans overlap or are out of order");
    if (poff > off) throw DataError(where() + ": phoneme '" + p.label + "' extends past word offset");
    cursor = poff;
  }
}

std::int64_t to_microseconds(double seconds) { return std::llround(seconds * 1e6); }

FrameRange frames_in_span(double onset_s, double offset_s, Microseconds hop) {
  if (hop.count() <= 0) throw DataError("hop must be positive");
  const std::int64_t h = hop.count();
  const std::int64_t on2 = 2 * to_microseconds(onset_s);
  const std::int64_t off2 = 2 * to_microseconds(offset_s);
  // smallest t >= 0 with (2t + 1) h >= bound
  auto first_at_or_after = [&](std::int64_t bound2) {
    return std::max<std::int64_t>(0, ceil_div(bound2 - h, 2 * h));
  };
  const auto begin = first_at_or_after(on2);
  const auto end = first_at_or_after(off2);
  if (end <= begin) return {static_cast<std::size_t>(begin), static_cast<std::size_t>(begin)};
  return {static_cast<std::size_t>(begin), static_cast<std::size_t>(end)};
}

TokenFrames assign_frames(const WordToken& token, Microseconds hop) {
  TokenFrames out;
  out.word = frames_in_span(token.onset_s, token.offset_s, hop);
  out.phonemes.reserve(token.phonemes.size());
  for (const auto& p : token.phonemes) out.phonemes.push_back(frames_in_span(p.onset_s, p.offset_s, hop));
  out.usable = !out.word.empty();
  return out;
}

FrameRange clip(FrameRange r, std::size_t frame_count) {
  r.end = std::min(r.end, frame_count);
  r.begin = std::min(r.begin, r.end);
  return r;
}

std::string to_lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
  return out;
}

WordToken parse_word_token(std::string_view line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("alignment record is not valid JSON: ") + e.what());
  }
  try {
    WordToken t;
    t.utterance_id = j.at("utterance_id").get<std::string>();
    t.token_index = j.at("token_index").get<int>();
    t.word = to_lower(j.at("word").get<std::string>());
    t.pos_tag = j.at("pos_tag").get<std::string>();
    t.onset_s = j.at("onset_s").get<double>();
    t.offset_s = j.at("offset_s").get<double>();
    if (j.contains("phonemes")) {
      for (const auto& p : j.at("phonemes")) {
        t.phonemes.push_back({p.at("label").get<std::string>(), p.at("onset_s").get<double>(),
                              p.at("offset_s").get<double>()});
      }
    }
    return t;
  } catch (const json::exception& e) {
    throw FormatError(std::string("alignment record missing or mistyped field: ") + e.what());
  }
}

std::string format_word_token(const WordToken& t) {
  json phon = json::array();
  for (const auto& p : t.phonemes) {
    phon.push_back({{"label", p.label}, {"onset_s", p.onset_s}, {"offset_s", p.offset_s}});
  }
  json j = {{"utterance_id", t.utterance_id}, {"token_index", t.token_index}, {"word", t.word},
            {"pos_tag", t.pos_tag},           {"onset_s", t.onset_s},         {"offset_s", t.offset_s},
            {"phonemes", phon}};
  return j.dump();
}

std::vector<WordToken> read_alignment_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open alignment manifest " + path.string());
  std::vector<WordToken> tokens;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      tokens.push_back(parse_word_token(line));
      validate_token(tokens.back());
    } catch (const Error& e) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  // Word spans within an utterance must be disjoint so each frame belongs to at
  // most one token.
  for (const auto& [utt, group] : group_by_utterance(tokens)) {
    for (std::size_t i = 1; i < group.size(); ++i) {
      if (group[i].token_index == group[i - 1].token_index) {
        throw DataError(path.string() + ": duplicate token " + utt + "#" + std::to_string(group[i].token_index));
      }
    }
    std::vector<const WordToken*> by_time;
    for (const auto& t : group) by_time.push_back(&t);
    std::sort(by_time.begin(), by_time.end(),
              [](const WordToken* a, const WordToken* b) { return a->onset_s < b->onset_s; });
    for (std::size_t i = 1; i < by_time.size(); ++i) {
      if (to_microseconds(by_time[i]->onset_s) < to_microseconds(by_time[i - 1]->offset_s)) {
        throw DataError(path.string() + ": overlapping word spans in utterance " + utt + " (tokens " +
                        std::to_string(by_time[i - 1]->token_index) + ", " +
                        std::to_string(by_time[i]->token_index) + ")");
      }
    }
  }
  return tokens;
}

void write_alignment_manifest(const fs::path& path, const std::vector<WordToken>& tokens) {
  std::string out;
  for (const auto& t : tokens) {
    out += format_word_token(t);
    out += '\n';
  }
  detail::write_file_atomic(path, out);
}

std::map<std::string, std::vector<WordToken>> group_by_utterance(const std::vector<WordToken>& tokens) {
  std::map<std::string, std::vector<WordToken>> out;
  for (const auto& t : tokens) out[t.utterance_id].push_back(t);
  for (auto& [_, group] : out) {
    std::stable_sort(group.begin(), group.end(),
                     [](const WordToken& a, const WordToken& b) { return a.token_index < b.token_index; });
  }
  return out;
}

FrequencyTable FrequencyTable::read(const fs::path& path) {
  return parse(detail::read_file_bytes(path));
}

FrequencyTable FrequencyTable::parse(std::string_view tsv) {
  FrequencyTable table;
  std::istringstream in{std::string(tsv)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos) throw FormatError("frequency table line " + std::to_string(lineno) + ": no TAB");
    double value = 0.0;
    try {
      std::size_t used = 0;
      value = std::stod(line.substr(tab + 1), &used);
    } catch (const std::exception&) {
      throw FormatError("frequency table line " + std::to_string(lineno) + ": bad number");
    }
    if (!std::isfinite(value)) throw DataError("frequency table line " + std::to_string(lineno) + ": non-finite");
    table.set(line.substr(0, tab), value);
  }
  return table;
}

void FrequencyTable::set(std::string_view word, double log10_frequency) {
  entries_[to_lower(word)] = log10_frequency;
}

std::optional<double> FrequencyTable::lookup(std::string_view word) const {
  auto it = entries_.find(to_lower(word));
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

fs::path RunManifest::activation_path(const ManifestUtterance& u, int layer_override) const {
  std::string p = u.activation_path;
  const int l = layer_override >= 0 ? layer_override : layer;
  for (auto pos = p.find("{layer}"); pos != std::string::npos; pos = p.find("{layer}")) {
    p.replace(pos, 7, std::to_string(l));
  }
  fs::path path(p);
  return path.is_absolute() ? path : base_dir / path;
}

fs::path RunManifest::alignments_path() const {
  fs::path path(alignments);
  return path.is_absolute() ? path : base_dir / path;
}

RunManifest read_run_manifest(const fs::path& path) {
  json j;
  try {
    j = json::parse(detail::read_file_bytes(path));
  } catch (const json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  RunManifest m;
  m.base_dir = path.parent_path();
  try {
    m.split = j.at("split").get<std::string>();
    m.layer = j.at("layer").get<int>();
    m.alignments = j.at("alignments").get<std::string>();
    for (const auto& u : j.at("utterances")) {
      m.utterances.push_back({u.at("utterance_id").get<std::string>(), u.at("activation").get<std::string>(),
                              u.value("alignment_count", std::size_t{0})});
    }
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  std::set<std::string> seen;
  for (const auto& u : m.utterances) {
    if (!seen.insert(u.utterance_id).second) throw DataError(path.string() + ": duplicate utterance " + u.utterance_id);
    if (!fs::exists(m.activation_path(u))) {
      throw DataError(path.string() + ": missing activation file " + m.activation_path(u).string());
    }
  }
  if (!fs::exists(m.alignments_path())) {
    throw DataError(path.string() + ": missing alignment manifest " + m.alignments_path().string());
  }
  return m;
}

void write_run_manifest(const fs::path& path, const RunManifest& m) {
  json utts = json::array();
  for (const auto& u : m.utterances) {
    utts.push_back({{"utterance_id", u.utterance_id}, {"activation", u.activation_path},
                    {"alignment_count", u.alignment_count}});
  }
  json j = {{"split", m.split}, {"layer", m.layer}, {"alignments", m.alignments}, {"utterances", utts}};
  detail::write_file_atomic(path, j.dump(1) + "\n");
}

Microseconds validate_run_manifest(const RunManifest& m, int layer) {
  std::optional<Microseconds> hop;
  std::map<std::string, std::size_t> counts;
  for (const auto& t : read_alignment_manifest(m.alignments_path())) ++counts[t.utterance_id];
  for (const auto& u : m.utterances) {
    auto act = read_activation_file(m.activation_path(u, layer));
    if (act.utterance_id != u.utterance_id) {
      throw DataError("activation file for " + u.utterance_id + " carries id " + act.utterance_id);
    }
    if (hop && *hop != act.hop) throw DataError("hop differs across activation files in one run");
    hop = act.hop;
    if (u.alignment_count != 0 && counts[u.utterance_id] != u.alignment_count) {
      throw DataError("utterance " + u.utterance_id + ": manifest declares " + std::to_string(u.alignment_count) +
                      " alignment records, found " + std::to_string(counts[u.utterance_id]));
    }
  }
  return hop.value_or(Microseconds{0});
}

}  // namespace s3m

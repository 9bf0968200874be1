#include "s3m/pipeline.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <ostream>
#include <set>
#include <sstream>

#include "binary_io.hpp"
#include "json.hpp"
#include "s3m/analogy.hpp"
#include "s3m/embeddings.hpp"
#include "s3m/error.hpp"
#include "s3m/stats.hpp"
#include "s3m/stimuli.hpp"
#include "text_util.hpp"

namespace s3m {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// configuration

namespace {

class ObjectReader {
 public:
  ObjectReader(const json& j, std::string context) : j_(j), context_(std::move(context)) {
    if (!j_.is_object()) throw ConfigError(context_ + ": expected an object");
  }

  ~ObjectReader() noexcept(false) {
    if (std::uncaught_exceptions() > 0) return;
    for (const auto& [k, _] : j_.items()) {
      if (!seen_.contains(k)) throw ConfigError(context_ + ": unknown key '" + k + "'");
    }
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key);
  }

  template <typename T>
  void get(const std::string& key, T& out) {
    if (!has(key)) return;
    const json& v = j_.at(key);
    const std::string where = context_ + "." + key;
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError(where + ": expected a boolean");
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw ConfigError(where + ": expected an integer");
      if (std::is_unsigned_v<T> && v.get<long long>() < 0 && !v.is_number_unsigned()) {
        throw ConfigError(where + ": expected a non-negative integer");
      }
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError(where + ": expected a number");
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigError(where + ": expected a string");
    }
    try {
      out = v.get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(where + ": " + e.what());
    }
  }

  void path(const std::string& key, fs::path& out) {
    std::string s;
    get(key, s);
    if (has(key)) out = s;
  }

  const json* object(const std::string& key) {
    if (!has(key)) return nullptr;
    return &j_.at(key);
  }

  const std::string& context() const { return context_; }

 private:
  const json& j_;
  std::string context_;
  std::set<std::string> seen_;
};

void read_range(ObjectReader& r, const std::string& key, double& lo, double& hi) {
  const json* v = r.object(key);
  if (!v) return;
  if (!v->is_array() || v->size() != 2 || !v->at(0).is_number() || !v->at(1).is_number()) {
    throw ConfigError(r.context() + "." + key + ": expected [min, max]");
  }
  lo = v->at(0).get<double>();
  hi = v->at(1).get<double>();
}

SpaceSelection parse_space_selection(const std::string& s) {
  if (s == "raw") return SpaceSelection::raw;
  if (s == "probe") return SpaceSelection::probe;
  if (s == "both") return SpaceSelection::both;
  throw ConfigError("space must be raw, probe or both (got '" + s + "')");
}

std::string_view to_string(SpaceSelection s) {
  switch (s) {
    case SpaceSelection::raw: return "raw";
    case SpaceSelection::probe: return "probe";
    case SpaceSelection::both: return "both";
  }
  return "both";
}

}  // namespace

PipelineConfig PipelineConfig::from_json_text(std::string_view text, const fs::path& base_dir) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  PipelineConfig c;
  c.base_dir = base_dir;
  bool analysis_layer_set = false;
  {
    ObjectReader r(j, "config");
    if (const json* m = r.object("manifests")) {
      ObjectReader mr(*m, "config.manifests");
      mr.path("train", c.train_manifest);
      mr.path("validation", c.validation_manifest);
      mr.path("selection", c.selection_manifest);
      mr.path("evaluation", c.evaluation_manifest);
    }
    r.path("out", c.out);
    r.path("probe_dir", c.probe_dir);
    r.path("data_dir", c.data_dir);
    r.path("lexicon", c.lexicon);
    r.path("frequencies", c.frequencies);
    r.get("layers", c.layers);
    analysis_layer_set = r.has("analysis_layer");
    r.get("analysis_layer", c.analysis_layer);
    r.get("max_layer", c.max_layer);
    if (r.has("space")) {
      std::string s;
      r.get("space", s);
      c.space = parse_space_selection(s);
    }
    if (r.has("pooling")) {
      std::string s;
      r.get("pooling", s);
      if (s == "word") {
        c.pooling = PoolingSelection::word;
      } else if (s == "phoneme") {
        c.pooling = PoolingSelection::phoneme;
      } else {
        throw ConfigError("pooling must be word or phoneme (got '" + s + "')");
      }
    }
    r.get("seed", c.seed);
    r.get("jobs", c.jobs);
    if (const json* t = r.object("train")) {
      ObjectReader tr(*t, "config.train");
      tr.get("learning_rate", c.train.learning_rate);
      tr.get("weight_decay", c.train.weight_decay);
      tr.get("margin", c.train.margin);
      tr.get("out_dim", c.train.out_dim);
      tr.get("batch_size", c.train.batch_size);
      tr.get("max_epochs", c.train.max_epochs);
      tr.get("patience", c.train.patience);
      tr.get("triples_per_anchor", c.train.triples_per_anchor);
      tr.get("validation_triples", c.train.validation_triples);
      tr.get("beta1", c.train.beta1);
      tr.get("beta2", c.train.beta2);
      tr.get("epsilon", c.train.epsilon);
    }
    if (const json* s = r.object("search")) {
      ObjectReader sr(*s, "config.search");
      sr.get("budget", c.search_budget);
      read_range(sr, "learning_rate", c.search.lr_min, c.search.lr_max);
      read_range(sr, "weight_decay", c.search.wd_min, c.search.wd_max);
      read_range(sr, "margin", c.search.margin_min, c.search.margin_max);
      sr.get("out_dims", c.search.out_dims);
      sr.get("map_queries", c.map_queries);
    }
    if (const json* a = r.object("analogy")) {
      ObjectReader ar(*a, "config.analogy");
      ar.get("samples", c.samples);
      ar.get("cap_samples", c.cap_samples);
      ar.get("baseline", c.baseline);
      ar.get("max_trials_per_cell", c.max_trials_per_cell);
    }
    if (const json* f = r.object("forced_choice")) {
      ObjectReader fr(*f, "config.forced_choice");
      fr.get("draws", c.forced_choice_draws);
    }
    if (const json* p = r.object("pca")) {
      ObjectReader pr(*p, "config.pca");
      pr.get("components", c.pca_components);
      pr.get("samples_per_pair", c.pca_samples_per_pair);
    }
    if (const json* g = r.object("regression")) {
      ObjectReader gr(*g, "config.regression");
      gr.get("outcome_scale", c.outcome_scale);
    }
    if (const json* e = r.object("evaluations")) {
      ObjectReader er(*e, "config.evaluations");
      er.get("morphology", c.evaluations.morphology);
      er.get("allomorphy", c.evaluations.allomorphy);
      er.get("false_friends", c.evaluations.false_friends);
      er.get("forced_choice", c.evaluations.forced_choice);
      er.get("same_word", c.evaluations.same_word);
      er.get("layer_sweep", c.evaluations.layer_sweep);
      er.get("regression", c.evaluations.regression);
      er.get("pca", c.evaluations.pca);
    }
  }
  if (!analysis_layer_set && !c.layers.empty()) c.analysis_layer = c.layers.front();
  c.validate();
  return c;
}

PipelineConfig PipelineConfig::read(const fs::path& path) {
  if (!fs::exists(path)) throw ConfigError("config file not found: " + path.string());
  return from_json_text(detail::read_file_bytes(path), fs::absolute(path).lexically_normal().parent_path());
}

std::string PipelineConfig::canonical_json() const {
  const auto& t = train;
  json j = {
      {"manifests",
       {{"train", train_manifest.generic_string()},
        {"validation", validation_manifest.generic_string()},
        {"selection", selection_manifest.generic_string()},
        {"evaluation", evaluation_manifest.generic_string()}}},
      {"probe_dir", probe_dir.generic_string()},
      {"data_dir", data_dir.generic_string()},
      {"lexicon", lexicon.generic_string()},
      {"frequencies", frequencies.generic_string()},
      {"layers", layers},
      {"analysis_layer", analysis_layer},
      {"max_layer", max_layer},
      {"space", to_string(space)},
      {"pooling", pooling == PoolingSelection::word ? "word" : "phoneme"},
      {"seed", seed},
      {"train",
       {{"learning_rate", t.learning_rate}, {"weight_decay", t.weight_decay}, {"margin", t.margin},
        {"out_dim", t.out_dim}, {"batch_size", t.batch_size}, {"max_epochs", t.max_epochs},
        {"patience", t.patience}, {"triples_per_anchor", t.triples_per_anchor},
        {"validation_triples", t.validation_triples}, {"beta1", t.beta1}, {"beta2", t.beta2},
        {"epsilon", t.epsilon}}},
      {"search",
       {{"budget", search_budget},
        {"learning_rate", {search.lr_min, search.lr_max}},
        {"weight_decay", {search.wd_min, search.wd_max}},
        {"margin", {search.margin_min, search.margin_max}},
        {"out_dims", search.out_dims},
        {"map_queries", map_queries}}},
      {"analogy",
       {{"samples", samples}, {"cap_samples", cap_samples}, {"baseline", baseline},
        {"max_trials_per_cell", max_trials_per_cell}}},
      {"forced_choice", {{"draws", forced_choice_draws}}},
      {"pca", {{"components", pca_components}, {"samples_per_pair", pca_samples_per_pair}}},
      {"regression", {{"outcome_scale", outcome_scale}}},
      {"evaluations",
       {{"morphology", evaluations.morphology}, {"allomorphy", evaluations.allomorphy},
        {"false_friends", evaluations.false_friends}, {"forced_choice", evaluations.forced_choice},
        {"same_word", evaluations.same_word}, {"layer_sweep", evaluations.layer_sweep},
        {"regression", evaluations.regression}, {"pca", evaluations.pca}}}};
  return j.dump();
}

fs::path PipelineConfig::resolve(const fs::path& p) const {
  if (p.empty() || p.is_absolute()) return p;
  return base_dir / p;
}

fs::path PipelineConfig::probes_dir() const { return probe_dir.empty() ? out_dir() / "probes" : resolve(probe_dir); }

fs::path PipelineConfig::data_path(const std::string& name) const {
  return (data_dir.empty() ? default_data_dir() : resolve(data_dir)) / name;
}

fs::path PipelineConfig::probe_path(int layer) const {
  return probes_dir() / ("probe-layer-" + std::to_string(layer) + ".s3mp");
}

void PipelineConfig::validate() const {
  train.validate();
  if (layers.empty()) throw ConfigError("at least one layer is required");
  for (int l : layers) {
    if (l < 0 || l > max_layer) {
      throw ConfigError("layer " + std::to_string(l) + " outside 0.." + std::to_string(max_layer));
    }
  }
  if (analysis_layer < 0 || analysis_layer > max_layer) throw ConfigError("analysis_layer outside the model depth");
  if (jobs < 1) throw ConfigError("jobs must be >= 1");
  if (samples < 1) throw ConfigError("analogy.samples must be >= 1");
  if (forced_choice_draws < 1) throw ConfigError("forced_choice.draws must be >= 1");
  if (pca_components < 1 || pca_samples_per_pair < 1) throw ConfigError("pca settings must be positive");
  if (!(outcome_scale > 0.0)) throw ConfigError("regression.outcome_scale must be positive");
  if (!(search.lr_min > 0 && search.lr_min <= search.lr_max && search.wd_min > 0 && search.wd_min <= search.wd_max &&
        search.margin_min > 0 && search.margin_min <= search.margin_max && search.margin_max < 2)) {
    throw ConfigError("invalid search ranges");
  }
  if (space != SpaceSelection::raw && std::find(layers.begin(), layers.end(), analysis_layer) == layers.end()) {
    throw ConfigError("analysis_layer " + std::to_string(analysis_layer) + " has no trained probe in layers");
  }
  for (const auto& p : {train_manifest, validation_manifest, selection_manifest, evaluation_manifest, lexicon,
                        frequencies, data_dir}) {
    if (!p.empty() && !fs::exists(resolve(p))) throw ConfigError("path does not exist: " + resolve(p).string());
  }
}

void apply_overrides(PipelineConfig& config, const ConfigOverrides& o) {
  if (o.seed) config.seed = *o.seed;
  if (o.layer) {
    config.layers = {*o.layer};
    config.analysis_layer = *o.layer;
  }
  if (o.space) config.space = parse_space_selection(*o.space);
  if (o.jobs) config.jobs = *o.jobs;
  if (o.out) config.out = *o.out;
  config.validate();
}

// ---------------------------------------------------------------------------
// lock, digests, provenance

OutputLock::OutputLock(const fs::path& out_dir) : path_(out_dir / ".s3m.lock") {
  fs::create_directories(out_dir);
  std::FILE* f = std::fopen(path_.c_str(), "wx");
  if (f == nullptr) {
    path_.clear();
    throw Error("output directory " + out_dir.string() + " is locked by another run (remove .s3m.lock if stale)");
  }
  std::fclose(f);
}

OutputLock::~OutputLock() {
  if (path_.empty()) return;
  std::error_code ec;
  fs::remove(path_, ec);
}

namespace {

struct DigestCtx {
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx{EVP_MD_CTX_new(), &EVP_MD_CTX_free};
  DigestCtx() {
    if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) throw Error("SHA-256 initialisation failed");
  }
  void update(const void* data, std::size_t n) {
    if (EVP_DigestUpdate(ctx.get(), data, n) != 1) throw Error("SHA-256 update failed");
  }
  std::string hex() {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_DigestFinal_ex(ctx.get(), md, &len) != 1) throw Error("SHA-256 finalisation failed");
    static constexpr char kHex[] = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
      out += kHex[md[i] >> 4];
      out += kHex[md[i] & 15];
    }
    return out;
  }
};

}  // namespace

std::string sha256_hex(std::string_view bytes) {
  DigestCtx d;
  d.update(bytes.data(), bytes.size());
  return d.hex();
}

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  DigestCtx d;
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    d.update(buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  return d.hex();
}

namespace {

class Provenance {
 public:
  explicit Provenance(const PipelineConfig& c) : config_(c) {}

  void input(const fs::path& p) {
    if (p.empty()) return;
    inputs_.insert(p);
  }
  void seed(const std::string& label, std::uint64_t value) { seeds_[label] = value; }

  void write(const std::string& command) const {
    json inputs = json::array();
    for (const auto& p : inputs_) {
      inputs.push_back({{"path", display(p)}, {"sha256", sha256_file(p)}});
    }
    const std::string canonical = config_.canonical_json();
    json j = {{"command", command},
              {"config_sha256", sha256_hex(canonical)},
              {"config", json::parse(canonical)},
              {"root_seed", config_.seed},
              {"stage_seeds", seeds_},
              {"inputs", inputs}};
    const auto dir = config_.out_dir() / "provenance";
    fs::create_directories(dir);
    detail::write_file_atomic(dir / (command + ".json"), j.dump(1) + "\n");
  }

 private:
  std::string display(const fs::path& p) const {
    const auto data = config_.data_path("");
    auto rel = p.lexically_relative(config_.out_dir());
    if (!rel.empty() && *rel.begin() != "..") return "<out>/" + rel.generic_string();
    rel = p.lexically_relative(config_.base_dir);
    if (!config_.base_dir.empty() && !rel.empty() && *rel.begin() != "..") return rel.generic_string();
    rel = p.lexically_relative(data);
    if (!rel.empty() && *rel.begin() != "..") return "<data>/" + rel.generic_string();
    return p.generic_string();
  }

  const PipelineConfig& config_;
  std::set<fs::path> inputs_;
  std::map<std::string, std::uint64_t> seeds_;
};

// ---------------------------------------------------------------------------
// corpus and stimuli loading

struct Corpus {
  RunManifest manifest;
  std::vector<WordToken> tokens;
};

Corpus load_corpus(const PipelineConfig& cfg, const fs::path& manifest_path, const char* role) {
  if (manifest_path.empty()) throw ConfigError(std::string("no ") + role + " manifest configured");
  const auto path = cfg.resolve(manifest_path);
  if (!fs::exists(path)) throw ConfigError(std::string(role) + " manifest not found: " + path.string());
  Corpus c;
  c.manifest = read_run_manifest(path);
  std::set<std::string> ids;
  for (const auto& u : c.manifest.utterances) ids.insert(u.utterance_id);
  for (auto& t : read_alignment_manifest(c.manifest.alignments_path())) {
    if (ids.contains(t.utterance_id)) c.tokens.push_back(std::move(t));
  }
  return c;
}

void record_corpus(Provenance& prov, const PipelineConfig& cfg, const fs::path& manifest_path, const Corpus& c,
                   int layer) {
  prov.input(cfg.resolve(manifest_path));
  prov.input(c.manifest.alignments_path());
  for (const auto& u : c.manifest.utterances) prov.input(c.manifest.activation_path(u, layer));
}

ActivationLoader loader_for(const RunManifest& m, int layer) {
  std::map<std::string, fs::path> paths;
  for (const auto& u : m.utterances) paths[u.utterance_id] = m.activation_path(u, layer);
  return [paths = std::move(paths), layer](const std::string& id) {
    auto it = paths.find(id);
    if (it == paths.end()) throw DataError("utterance " + id + " is not in the run manifest");
    auto act = read_activation_file(it->second);
    if (act.utterance_id != id) throw DataError(it->second.string() + " carries utterance id " + act.utterance_id);
    if (act.layer != layer) {
      throw DataError(it->second.string() + " holds layer " + std::to_string(act.layer) + ", expected " +
                      std::to_string(layer));
    }
    return act;
  };
}

bool layer_available(const RunManifest& m, int layer) {
  return std::all_of(m.utterances.begin(), m.utterances.end(),
                     [&](const ManifestUtterance& u) { return fs::exists(m.activation_path(u, layer)); });
}

FramePool frame_pool(const Corpus& c, int layer) {
  FramePool pool;
  const auto load = loader_for(c.manifest, layer);
  for (const auto& [utt, tokens] : group_by_utterance(c.tokens)) {
    const auto act = load(utt);
    for (const auto& t : tokens) {
      const auto range = clip(assign_frames(t, act.hop).word, act.frame_count());
      if (range.empty()) continue;
      pool.add_token(t.word, Eigen::Ref<const FrameMatrix>(act.frames.middleRows(static_cast<Eigen::Index>(range.begin),
                                                   static_cast<Eigen::Index>(range.size()))));
    }
  }
  return pool;
}

struct Stimuli {
  FeatureInventory inventory;
  Curation curation;
  Selection selection;
  Lexicon lexicon;
  std::vector<InflectionPair> pairs;
  std::vector<InflectionPair> false_friends;
  std::vector<ForcedChoiceTriple> triples;
  PairLog pair_log;
};

Stimuli load_stimuli(const PipelineConfig& cfg, const std::vector<WordToken>& tokens, Provenance* prov) {
  Stimuli s;
  const auto features = cfg.data_path("phoneme_features.tsv");
  const auto curation = cfg.data_path("curation.json");
  const auto ff = cfg.data_path("false_friends.json");
  const auto fc = cfg.data_path("forced_choice.json");
  s.inventory = FeatureInventory::read(features);
  s.curation = Curation::read(curation);
  s.selection = select_unambiguous(tokens, PosPolicy{}, s.curation);
  if (!cfg.lexicon.empty()) {
    s.lexicon = read_lexicon(cfg.resolve(cfg.lexicon), s.inventory);
  } else {
    s.lexicon = derive_lexicon(tokens, s.inventory);
  }
  s.pairs = build_pairs(s.selection, s.lexicon, s.curation, s.inventory, &s.pair_log);
  s.false_friends = read_false_friends(ff, s.inventory);
  s.triples = read_forced_choice(fc, s.inventory);
  if (prov) {
    for (const auto& p : {features, curation, ff, fc}) prov->input(p);
    if (!cfg.lexicon.empty()) prov->input(cfg.resolve(cfg.lexicon));
  }
  return s;
}

std::vector<SpaceKind> selected_spaces(const PipelineConfig& cfg) {
  switch (cfg.space) {
    case SpaceSelection::raw: return {SpaceKind::raw};
    case SpaceSelection::probe: return {SpaceKind::probe};
    case SpaceSelection::both: return {SpaceKind::raw, SpaceKind::probe};
  }
  return {};
}

std::string store_name(const SpaceTag& space, PoolingKind pooling) {
  std::string p(to_string(pooling));
  std::replace(p.begin(), p.end(), ':', '-');
  return space.str() + "-" + p;
}

void write_lines(const fs::path& path, const std::vector<std::string>& lines) {
  std::string text;
  for (const auto& l : lines) text += l + "\n";
  detail::write_file_atomic(path, text);
}

struct Embedder {
  const PipelineConfig& cfg;
  const Corpus& corpus;
  const Stimuli& stimuli;
  Provenance* prov = nullptr;
  std::map<int, ProbeParams> probes;

  const ProbeParams& probe(int layer) {
    auto it = probes.find(layer);
    if (it != probes.end()) return it->second;
    const auto path = cfg.probe_path(layer);
    if (!fs::exists(path)) throw DataError("no probe for layer " + std::to_string(layer) + " at " + path.string());
    if (prov) prov->input(path);
    return probes.emplace(layer, read_probe_file(path)).first->second;
  }

  Lexicon constancy_bases() const {
    Lexicon bases;
    for (const auto* list : {&stimuli.pairs, &stimuli.false_friends}) {
      for (const auto& p : *list) bases.emplace(p.inflected.word, p.base.form);
    }
    return bases;
  }

  EmbeddingStore build(int layer, SpaceKind kind, PoolingKind pooling, StoreLog* log) {
    const Lexicon bases = constancy_bases();
    StoreSpec spec;
    spec.space = {kind, layer};
    spec.pooling = pooling;
    spec.probe = kind == SpaceKind::probe ? &probe(layer) : nullptr;
    spec.constancy_bases = &bases;
    spec.jobs = cfg.jobs;
    return build_store(corpus.tokens, loader_for(corpus.manifest, layer), spec, log);
  }

  /// Loads a previously written store or builds and writes it.
  EmbeddingStore obtain(int layer, SpaceKind kind, PoolingKind pooling, std::ostream& log) {
    const SpaceTag tag{kind, layer};
    const auto dir = cfg.out_dir() / "stores";
    const auto path = dir / (store_name(tag, pooling) + ".s3me");
    if (kind == SpaceKind::probe) probe(layer);
    if (fs::exists(path)) {
      auto store = read_store_file(path);
      if (store.space() == tag.str() && store.pooling() == to_string(pooling)) return store;
    }
    StoreLog slog;
    auto store = build(layer, kind, pooling, &slog);
    fs::create_directories(dir);
    write_store_file(path, store);
    write_lines(dir / (store_name(tag, pooling) + ".skipped.txt"), slog.skipped);
    log << "store " << path.filename().string() << ": " << store.size() << " rows, " << slog.skipped.size()
        << " skipped\n";
    return store;
  }
};

}  // namespace

// ---------------------------------------------------------------------------
// train

void cmd_train(const PipelineConfig& cfg, std::ostream& log) {
  OutputLock lock(cfg.out_dir());
  Provenance prov(cfg);
  const auto train = load_corpus(cfg, cfg.train_manifest, "train");
  const auto validation = load_corpus(cfg, cfg.validation_manifest, "validation");
  std::set<std::string> train_ids;
  for (const auto& u : train.manifest.utterances) train_ids.insert(u.utterance_id);
  for (const auto& u : validation.manifest.utterances) {
    if (train_ids.contains(u.utterance_id)) {
      throw ConfigError("utterance " + u.utterance_id + " is in both the train and validation splits");
    }
  }
  std::optional<Corpus> selection;
  if (cfg.search_budget > 0) selection = load_corpus(cfg, cfg.selection_manifest, "selection");

  fs::create_directories(cfg.probes_dir());
  std::vector<std::string> failed;
  for (int layer : cfg.layers) {
    try {
      record_corpus(prov, cfg, cfg.train_manifest, train, layer);
      record_corpus(prov, cfg, cfg.validation_manifest, validation, layer);
      const auto train_pool = frame_pool(train, layer);
      const auto val_pool = frame_pool(validation, layer);
      TrainConfig tc = cfg.train;
      tc.seed = derive_seed(cfg.seed, "train|layer-" + std::to_string(layer));
      prov.seed("train|layer-" + std::to_string(layer), tc.seed);
      std::string history;
      ProbeParams params;
      if (selection) {
        record_corpus(prov, cfg, cfg.selection_manifest, *selection, layer);
        const auto sel_pool = frame_pool(*selection, layer);
        const auto search_seed = derive_seed(cfg.seed, "search|layer-" + std::to_string(layer));
        prov.seed("search|layer-" + std::to_string(layer), search_seed);
        Rng rng(search_seed);
        std::vector<TrainConfig> space{tc};
        for (auto& c : sample_search_space(cfg.search, tc, cfg.search_budget - 1, rng)) space.push_back(c);
        const auto result =
            hyperparameter_search(space, train_pool, val_pool, sel_pool, layer, cfg.jobs, cfg.map_queries);
        for (std::size_t i = 0; i < result.candidates.size(); ++i) {
          const auto& c = result.candidates[i];
          history += json{{"candidate", i},
                          {"learning_rate", c.config.learning_rate},
                          {"weight_decay", c.config.weight_decay},
                          {"margin", c.config.margin},
                          {"out_dim", c.config.out_dim},
                          {"selection_map", c.selection_map},
                          {"validation_loss", c.validation_loss},
                          {"selected", i == result.best}}
                         .dump() +
                     "\n";
        }
        params = result.winner().params;
      } else {
        auto on_epoch = [&](const EpochRecord& e) {
          json j = {{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"validation_loss", e.validation_loss}};
          if (e.map) j["map"] = *e.map;
          history += j.dump() + "\n";
        };
        params = train_probe(train_pool, val_pool, tc, layer, nullptr, on_epoch).params;
      }
      write_probe_file(cfg.probe_path(layer), params);
      detail::write_file_atomic(cfg.probes_dir() / ("train-layer-" + std::to_string(layer) + ".jsonl"), history);
      log << "layer " << layer << ": " << params.metadata.epochs_run << " epochs, validation loss "
          << detail::format_number(params.metadata.final_validation_loss) << "\n";
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      log << "layer " << layer << " failed: " << e.what() << "\n";
      failed.push_back(std::to_string(layer));
    }
  }
  prov.write("train");
  if (!failed.empty()) {
    std::string list;
    for (const auto& l : failed) list += (list.empty() ? "" : ", ") + l;
    throw Error("training failed for layer(s) " + list);
  }
}

// ---------------------------------------------------------------------------
// embed

namespace {

std::vector<PoolingKind> poolings(const PipelineConfig& cfg) {
  if (cfg.pooling == PoolingSelection::word) return {PoolingKind::word};
  return {PoolingKind::phoneme_final, PoolingKind::phoneme_constancy};
}

}  // namespace

void cmd_embed(const PipelineConfig& cfg, std::ostream& log) {
  OutputLock lock(cfg.out_dir());
  Provenance prov(cfg);
  const auto corpus = load_corpus(cfg, cfg.evaluation_manifest, "evaluation");
  record_corpus(prov, cfg, cfg.evaluation_manifest, corpus, cfg.analysis_layer);
  const auto stimuli = load_stimuli(cfg, corpus.tokens, &prov);
  Embedder embedder{cfg, corpus, stimuli, &prov, {}};
  const auto dir = cfg.out_dir() / "stores";
  fs::create_directories(dir);
  for (auto kind : selected_spaces(cfg)) {
    for (auto pooling : poolings(cfg)) {
      StoreLog slog;
      const SpaceTag tag{kind, cfg.analysis_layer};
      const auto store = embedder.build(cfg.analysis_layer, kind, pooling, &slog);
      write_store_file(dir / (store_name(tag, pooling) + ".s3me"), store);
      write_lines(dir / (store_name(tag, pooling) + ".skipped.txt"), slog.skipped);
      log << store_name(tag, pooling) << ": " << store.size() << " rows, " << slog.skipped.size() << " skipped\n";
    }
  }
  prov.write("embed");
}

// ---------------------------------------------------------------------------
// evaluate

namespace {

json cell_json(const TransferMatrix& m) {
  json j = json::object();
  for (const auto& c : m.cells) {
    j[c.from + "->" + c.to] = c.mean ? json(*c.mean) : json(nullptr);
  }
  return j;
}

json morphology_headline(const TransferMatrix& m) {
  json j = {{"cells", cell_json(m)}};
  double diag = 0.0, off = 0.0, base = 0.0;
  std::size_t nd = 0, no = 0, nb = 0;
  for (const auto& c : m.cells) {
    if (c.mean) {
      (c.from == c.to ? diag : off) += *c.mean;
      ++(c.from == c.to ? nd : no);
    }
    if (c.baseline_mean) {
      base += *c.baseline_mean * static_cast<double>(c.trials);
      nb += c.trials;
    }
  }
  if (nd) j["diagonal_mean"] = diag / static_cast<double>(nd);
  if (nd && no) j["mismatch_penalty"] = off / static_cast<double>(no) - diag / static_cast<double>(nd);
  if (nb) j["baseline_mean"] = base / static_cast<double>(nb);
  return j;
}

std::vector<double> ranks_where(const std::vector<AnalogyOutcome>& outcomes,
                                const std::function<bool(const AnalogyOutcome&)>& keep, bool per_pair) {
  std::vector<double> out;
  if (!per_pair) {
    for (const auto& o : outcomes) {
      if (keep(o)) out.push_back(static_cast<double>(o.rank));
    }
    return out;
  }
  std::map<std::string, std::pair<double, std::size_t>> by_target;
  for (const auto& o : outcomes) {
    if (!keep(o)) continue;
    auto& acc = by_target[o.target];
    acc.first += static_cast<double>(o.rank);
    acc.second += 1;
  }
  for (const auto& [_, acc] : by_target) out.push_back(acc.first / static_cast<double>(acc.second));
  return out;
}

}  // namespace

EvaluateStatus cmd_evaluate(const PipelineConfig& cfg, std::ostream& log) {
  OutputLock lock(cfg.out_dir());
  Provenance prov(cfg);
  EvaluateStatus status;
  const auto& ev = cfg.evaluations;
  const auto results = cfg.out_dir() / "results";
  fs::create_directories(results);
  json summary = {{"analysis_layer", cfg.analysis_layer},
                  {"seed", cfg.seed},
                  {"evaluations",
                   {{"morphology", ev.morphology}, {"allomorphy", ev.allomorphy},
                    {"false_friends", ev.false_friends}, {"forced_choice", ev.forced_choice},
                    {"same_word", ev.same_word}, {"layer_sweep", ev.layer_sweep},
                    {"regression", ev.regression}, {"pca", ev.pca}}},
                  {"spaces", json::object()}};

  auto step = [&](const std::string& name, const std::function<void()>& fn) {
    try {
      fn();
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      log << name << " failed: " << e.what() << "\n";
      status.failures.push_back(name + ": " + e.what());
    }
  };

  const bool any_store_eval = ev.morphology || ev.allomorphy || ev.false_friends || ev.forced_choice ||
                              ev.same_word || ev.regression || ev.pca;
  const bool any = any_store_eval || ev.layer_sweep;
  std::optional<Corpus> corpus;
  std::optional<Stimuli> stimuli;
  if (any) {
    corpus = load_corpus(cfg, cfg.evaluation_manifest, "evaluation");
    record_corpus(prov, cfg, cfg.evaluation_manifest, *corpus, cfg.analysis_layer);
    stimuli = load_stimuli(cfg, corpus->tokens, &prov);
    summary["stimuli"] = {{"nouns", stimuli->selection.nouns.size()},
                          {"verbs", stimuli->selection.verbs.size()},
                          {"pairs", stimuli->pairs.size()},
                          {"false_friends", stimuli->false_friends.size()},
                          {"forced_choice_triples", stimuli->triples.size()}};
    write_lines(results / "pairs_skipped.txt", stimuli->pair_log.skipped);
  }

  std::optional<FrequencyTable> freqs;
  if (ev.regression && !cfg.frequencies.empty()) {
    freqs = FrequencyTable::read(cfg.resolve(cfg.frequencies));
    prov.input(cfg.resolve(cfg.frequencies));
  }

  std::map<std::string, std::vector<AnalogyOutcome>> morph_by_space;
  if (any_store_eval) {
    Embedder embedder{cfg, *corpus, *stimuli, &prov, {}};
    for (auto kind : selected_spaces(cfg)) {
      const SpaceTag tag{kind, cfg.analysis_layer};
      const std::string space = tag.str();
      const auto dir = results / space;
      json headline = json::object();
      std::optional<EmbeddingStore> main_store, constancy_store;
      step(space + "/stores", [&] {
        if (cfg.pooling == PoolingSelection::word) {
          main_store = embedder.obtain(cfg.analysis_layer, kind, PoolingKind::word, log);
        } else {
          main_store = embedder.obtain(cfg.analysis_layer, kind, PoolingKind::phoneme_final, log);
          constancy_store = embedder.obtain(cfg.analysis_layer, kind, PoolingKind::phoneme_constancy, log);
        }
      });
      if (!main_store) continue;
      const AnalogyContext ctx =
          constancy_store ? AnalogyContext(*main_store, *constancy_store) : AnalogyContext(*main_store);
      AnalogyConfig ac;
      ac.samples = cfg.samples;
      ac.cap_samples = cfg.cap_samples;
      ac.with_baseline = cfg.baseline;
      ac.max_trials_per_cell = cfg.max_trials_per_cell;
      ac.jobs = cfg.jobs;
      ac.seed = derive_seed(cfg.seed, "evaluate|" + space);
      prov.seed("evaluate|" + space, ac.seed);

      if (ev.morphology || ev.regression) {
        step(space + "/morphology", [&] {
          auto r = transfer_matrix(ctx, stimuli->pairs, morphology_category, {"NNS", "VBZ"}, ac, "morphology");
          fs::create_directories(dir / "morphology");
          write_outcomes_jsonl(dir / "morphology" / "outcomes.jsonl", r.outcomes);
          write_transfer_csv(dir / "morphology" / "matrix.csv", r.matrix);
          write_lines(dir / "morphology" / "skipped.txt", r.skipped);
          headline["morphology"] = morphology_headline(r.matrix);
          morph_by_space[space] = std::move(r.outcomes);
        });
      }
      if (ev.allomorphy) {
        step(space + "/allomorphy", [&] {
          const std::vector<std::string> labels{"NNS-z", "NNS-s", "NNS-Iz", "VBZ-z", "VBZ-s", "VBZ-Iz"};
          auto r = transfer_matrix(ctx, stimuli->pairs, allomorph_category, labels, ac, "allomorphy");
          fs::create_directories(dir / "allomorphy");
          write_outcomes_jsonl(dir / "allomorphy" / "outcomes.jsonl", r.outcomes);
          write_transfer_csv(dir / "allomorphy" / "matrix.csv", r.matrix);
          headline["allomorphy"] = {{"cells", cell_json(r.matrix)}};
        });
      }
      if (ev.false_friends) {
        step(space + "/false_friends", [&] {
          auto panels = false_friend_eval(ctx, stimuli->pairs, stimuli->false_friends, ac);
          fs::create_directories(dir / "false_friends");
          json h = json::object();
          for (const auto& p : panels) {
            const std::string name(to_string(p.inflection));
            write_outcomes_jsonl(dir / "false_friends" / (name + "_outcomes.jsonl"), p.result.outcomes);
            write_transfer_csv(dir / "false_friends" / (name + "_matrix.csv"), p.result.matrix);
            h[name] = cell_json(p.result.matrix);
          }
          headline["false_friends"] = h;
        });
      }
      if (ev.forced_choice) {
        step(space + "/forced_choice", [&] {
          ForcedChoiceConfig fc;
          fc.draws = cfg.forced_choice_draws;
          fc.seed = derive_seed(cfg.seed, "forced-choice|" + space);
          prov.seed("forced-choice|" + space, fc.seed);
          auto r = forced_choice(ctx, stimuli->pairs, stimuli->triples, fc);
          fs::create_directories(dir / "forced_choice");
          write_forced_choice_csv(dir / "forced_choice" / "triples.csv", dir / "forced_choice" / "cdf.csv", r);
          write_lines(dir / "forced_choice" / "skipped.txt", r.skipped);
          std::size_t half = 0, one = 0;
          double sum = 0.0;
          for (const auto& t : r.triples) {
            half += t.preference >= 0.5 ? 1 : 0;
            one += t.preference == 1.0 ? 1 : 0;
            sum += t.preference;
          }
          json h = {{"triples", r.triples.size()}, {"skipped", r.skipped.size()}};
          if (!r.triples.empty()) {
            const double n = static_cast<double>(r.triples.size());
            h["mean_preference"] = sum / n;
            h["fraction_at_least_half"] = static_cast<double>(half) / n;
            h["fraction_at_one"] = static_cast<double>(one) / n;
          }
          headline["forced_choice"] = h;
        });
      }
      if (ev.same_word && !constancy_store) {
        step(space + "/same_word", [&] {
          AnalogyConfig sc = ac;
          sc.seed = derive_seed(cfg.seed, "same-word|" + space);
          prov.seed("same-word|" + space, sc.seed);
          auto r = same_word_eval(*main_store, stimuli->pairs, sc);
          fs::create_directories(dir / "same_word");
          std::string text = "pair,inflection,rank\n";
          for (const auto& o : r.outcomes) {
            text += detail::csv_field(o.pair) + "," + std::string(to_string(o.inflection)) + "," +
                    std::to_string(o.rank) + "\n";
          }
          detail::write_file_atomic(dir / "same_word" / "outcomes.csv", text);
          std::string means = "inflection,mean_rank\n";
          json h = json::object();
          for (const auto& [k, v] : r.mean_rank) {
            means += k + "," + detail::format_number(v) + "\n";
            h[k] = v;
          }
          detail::write_file_atomic(dir / "same_word" / "means.csv", means);
          headline["same_word"] = h;
        });
      }
      if (ev.pca) {
        step(space + "/pca", [&] {
          const auto seed = derive_seed(cfg.seed, "pca|" + space);
          prov.seed("pca|" + space, seed);
          Rng rng(seed);
          const auto report = pca_project(*main_store, cfg.pca_components, stimuli->pairs,
                                          cfg.pca_samples_per_pair, rng);
          fs::create_directories(dir / "pca");
          const auto k = report.basis.components.cols();
          std::string text = "pair,base_row,inflected_row";
          for (Eigen::Index c = 0; c < k; ++c) text += ",pc" + std::to_string(c + 1);
          text += "\n";
          for (const auto& d : report.differences) {
            text += detail::csv_field(d.pair) + "," + std::to_string(d.base_row) + "," +
                    std::to_string(d.inflected_row);
            for (Eigen::Index c = 0; c < k; ++c) text += "," + detail::format_number(d.coords(c));
            text += "\n";
          }
          detail::write_file_atomic(dir / "pca" / "differences.csv", text);
          auto vec = [](const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
          json components = json::array();
          for (Eigen::Index c = 0; c < k; ++c) components.push_back(vec(report.basis.components.col(c)));
          json basis = {{"eigenvalues", vec(report.basis.eigenvalues)},
                        {"explained_variance_ratio", vec(report.basis.explained_ratio)},
                        {"mean_direction", vec(report.mean_direction)},
                        {"components", components},
                        {"warnings", report.basis.warnings}};
          detail::write_file_atomic(dir / "pca" / "basis.json", basis.dump(1) + "\n");
          headline["pca"] = {{"explained_variance_ratio", vec(report.basis.explained_ratio)}};
        });
      }
      summary["spaces"][space] = headline;
    }
  }

  if (ev.regression) {
    step("regression", [&] {
      if (!freqs) throw DataError("regression needs a frequency table (config key 'frequencies')");
      const auto dir = results / "regression";
      fs::create_directories(dir);
      std::map<std::string, std::map<std::string, RegressionFit>> fits;  // variant -> space -> fit
      json h = json::object();
      for (const auto& [space, outcomes] : morph_by_space) {
        std::vector<TrialRow> rows;
        std::size_t missing = 0;
        for (const auto& o : outcomes) {
          const auto from = o.source.substr(o.source.find(':') + 1);
          const auto to = o.target.substr(o.target.find(':') + 1);
          auto ff = freqs->lookup(from);
          auto tf = freqs->lookup(to);
          if (!ff || !tf) {
            ++missing;
            continue;
          }
          rows.push_back({static_cast<double>(o.rank), o.allomorph_from, o.allomorph_to, o.inflection_from,
                          o.inflection_to, *ff, *tf});
        }
        h[space] = {{"rows", rows.size()}, {"dropped_missing_frequency", missing}};
        for (auto coding : {AllomorphCoding::full, AllomorphCoding::binary_s}) {
          for (bool scaled : {true, false}) {
            std::vector<TrialRow> r = rows;
            if (scaled) {
              for (auto& x : r) x.outcome /= cfg.outcome_scale;
            }
            const std::string variant =
                std::string(coding == AllomorphCoding::full ? "full" : "binary") + (scaled ? "_scaled" : "_raw");
            auto design = build_design(r, coding);
            fits[variant][space] = fit_ols(design);
            h[space]["dropped_terms_" + variant] = design.dropped;
          }
        }
      }
      for (const auto& [variant, by_space] : fits) {
        std::vector<NamedFit> named;
        for (const auto& [space, fit] : by_space) named.push_back({space, &fit});
        write_fit_csv(dir / ("fit_" + variant + ".csv"), named);
      }
      const auto& binary = fits["binary_scaled"];
      if (binary.size() == 2) {
        const auto& a = binary.begin()->second;
        const auto& b = std::next(binary.begin())->second;
        write_interaction_csv(dir / "interaction_strength.csv", binary.begin()->first,
                              std::next(binary.begin())->first, compare_interactions(a, b));
      } else if (binary.size() == 1) {
        const auto& a = binary.begin()->second;
        std::vector<StrengthComparison> rows;
        for (const auto& s : interaction_strength(a)) rows.push_back({s.term, s.strength, 0.0, s.strength});
        write_interaction_csv(dir / "interaction_strength.csv", binary.begin()->first, "none", rows);
      }
      // Welch tests, per trial and per target pair
      std::string text = "test,grouping,group_a,group_b,n_a,n_b,t,df,p,infinite\n";
      auto add = [&](const std::string& test, const std::string& a_name, const std::string& b_name,
                     const std::vector<double>& a, const std::vector<double>& b, const std::string& grouping) {
        if (a.size() < 2 || b.size() < 2) return;
        try {
          const auto w = welch_t(a, b);
          text += test + "," + grouping + "," + a_name + "," + b_name + "," + std::to_string(a.size()) + "," +
                  std::to_string(b.size()) + "," + detail::format_number(w.t) + "," + detail::format_number(w.df) +
                  "," + detail::format_number(w.p) + "," + (w.infinite ? "true" : "false") + "\n";
        } catch (const DataError&) {
        }
      };
      auto within = [](Inflection i) {
        return [i](const AnalogyOutcome& o) { return o.inflection_from == i && o.inflection_to == i; };
      };
      auto all = [](const AnalogyOutcome&) { return true; };
      for (bool per_pair : {false, true}) {
        const std::string grouping = per_pair ? "per_pair" : "per_trial";
        for (const auto& [space, outcomes] : morph_by_space) {
          add("noun_vs_verb|" + space, "NNS->NNS", "VBZ->VBZ", ranks_where(outcomes, within(Inflection::NNS), per_pair),
              ranks_where(outcomes, within(Inflection::VBZ), per_pair), grouping);
        }
        if (morph_by_space.size() == 2) {
          const auto& [sa, oa] = *morph_by_space.begin();
          const auto& [sb, ob] = *std::next(morph_by_space.begin());
          add("space_comparison", sa, sb, ranks_where(oa, all, per_pair), ranks_where(ob, all, per_pair), grouping);
        }
      }
      detail::write_file_atomic(dir / "ttests.csv", text);
      summary["regression"] = h;
    });
  }

  if (ev.layer_sweep) {
    step("layer_sweep", [&] {
      AnalogyConfig ac;
      ac.samples = cfg.samples;
      ac.cap_samples = cfg.cap_samples;
      ac.max_trials_per_cell = cfg.max_trials_per_cell;
      ac.jobs = cfg.jobs;
      ac.seed = derive_seed(cfg.seed, "layer-sweep");
      prov.seed("layer-sweep", ac.seed);
      Embedder embedder{cfg, *corpus, *stimuli, &prov, {}};
      std::vector<std::string> gaps;
      StoreProvider provider = [&](int layer, SpaceKind kind) -> std::optional<EmbeddingStore> {
        if (!layer_available(corpus->manifest, layer)) return std::nullopt;
        if (kind == SpaceKind::probe && !fs::exists(cfg.probe_path(layer))) return std::nullopt;
        for (const auto& u : corpus->manifest.utterances) prov.input(corpus->manifest.activation_path(u, layer));
        return embedder.build(layer, kind, PoolingKind::word, nullptr);
      };
      const auto spaces = selected_spaces(cfg);
      const auto points = layer_sweep(cfg.layers, spaces, provider, stimuli->pairs, ac, &gaps);
      const auto dir = results / "layer_sweep";
      fs::create_directories(dir);
      std::string text = "layer,space,cell,mean_rank,trials\n";
      for (const auto& p : points) {
        text += std::to_string(p.layer) + "," + p.space + "," + detail::csv_field(p.cell) + "," +
                detail::format_number(p.mean_rank) + "," + std::to_string(p.trials) + "\n";
      }
      detail::write_file_atomic(dir / "series.csv", text);
      write_lines(dir / "gaps.txt", gaps);
      for (const auto& g : gaps) log << "layer sweep gap: " << g << "\n";
    });
  }

  summary["failures"] = status.failures;
  detail::write_file_atomic(cfg.out_dir() / "summary.json", summary.dump(1) + "\n");
  prov.write("evaluate");
  return status;
}

// ---------------------------------------------------------------------------
// report

namespace {

/// Appends the rows of a CSV under extra leading columns; the header is taken
/// from the first file.
void append_csv(std::string& out, bool& header_written, const fs::path& path,
                const std::vector<std::pair<std::string, std::string>>& extra) {
  std::istringstream in(detail::read_file_bytes(path));
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::string prefix_h, prefix_v;
    for (const auto& [k, v] : extra) {
      prefix_h += k + ",";
      prefix_v += detail::csv_field(v) + ",";
    }
    if (first) {
      first = false;
      if (!header_written) {
        out += prefix_h + line + "\n";
        header_written = true;
      }
      continue;
    }
    out += prefix_v + line + "\n";
  }
}

}  // namespace

std::vector<std::string> cmd_report(const PipelineConfig& cfg, std::ostream& log) {
  OutputLock lock(cfg.out_dir());
  const auto results = cfg.out_dir() / "results";
  std::vector<std::string> spaces;
  if (fs::exists(results)) {
    for (const auto& e : fs::directory_iterator(results)) {
      const auto name = e.path().filename().string();
      if (e.is_directory() && name.find("-layer-") != std::string::npos) spaces.push_back(name);
    }
  }
  std::sort(spaces.begin(), spaces.end());

  struct Source {
    fs::path path;
    std::vector<std::pair<std::string, std::string>> extra;
  };
  struct Figure {
    std::string file;
    std::vector<Source> sources;
    std::vector<std::string> expected;
  };
  std::vector<Figure> figures;
  auto per_space = [&](const std::string& file, const std::string& rel, const std::string& panel = {}) {
    Figure f{file, {}, {}};
    for (const auto& s : spaces) {
      std::vector<std::pair<std::string, std::string>> extra{{"space", s}};
      if (!panel.empty()) extra.emplace_back("panel", panel);
      f.sources.push_back({results / s / rel, extra});
    }
    if (spaces.empty()) f.expected.push_back("results/<space>/" + rel);
    return f;
  };
  figures.push_back({"fig1_layer_sweep.csv", {{results / "layer_sweep" / "series.csv", {}}}, {}});
  figures.push_back(per_space("fig2_pca.csv", "pca/differences.csv"));
  figures.push_back(per_space("fig3_morphology.csv", "morphology/matrix.csv"));
  figures.push_back(per_space("fig4_allomorphy.csv", "allomorphy/matrix.csv"));
  {
    Figure f = per_space("fig5_false_friends.csv", "false_friends/NNS_matrix.csv", "NNS");
    Figure v = per_space("fig5_false_friends.csv", "false_friends/VBZ_matrix.csv", "VBZ");
    for (auto& s : v.sources) f.sources.push_back(std::move(s));
    figures.push_back(std::move(f));
  }
  figures.push_back(per_space("fig6_forced_choice_cdf.csv", "forced_choice/cdf.csv"));
  figures.push_back({"fig7_interaction_strength.csv", {{results / "regression" / "interaction_strength.csv", {}}}, {}});

  std::vector<std::string> written, missing;
  const auto dir = cfg.out_dir() / "report";
  for (auto& f : figures) {
    std::string text;
    bool header = false;
    for (const auto& s : f.sources) {
      if (fs::exists(s.path)) {
        append_csv(text, header, s.path, s.extra);
      } else {
        missing.push_back(s.path.lexically_relative(cfg.out_dir()).generic_string());
      }
    }
    for (const auto& e : f.expected) missing.push_back(e);
    if (!header) continue;
    fs::create_directories(dir);
    detail::write_file_atomic(dir / f.file, text);
    written.push_back(f.file);
  }
  if (written.empty()) {
    std::string list;
    for (const auto& m : missing) list += "\n  " + m;
    throw DataError("no evaluation results to report; missing:" + list);
  }
  for (const auto& m : missing) log << "report: missing " << m << "\n";
  for (const auto& w : written) log << "report: wrote " << w << "\n";
  return written;
}

// ---------------------------------------------------------------------------
// validate-stimuli

std::vector<std::string> validate_stimuli(const PipelineConfig& cfg, std::ostream& log) {
  std::vector<std::string> problems;
  const auto inventory = FeatureInventory::read(cfg.data_path("phoneme_features.tsv"));
  const auto curation = Curation::read(cfg.data_path("curation.json"));
  log << "feature inventory: " << inventory.size() << " phonemes\n";
  if (curation.nouns) log << "curated nouns: " << curation.nouns->size() << "\n";
  if (curation.verbs) log << "curated verbs: " << curation.verbs->size() << "\n";

  const auto triples = read_forced_choice(cfg.data_path("forced_choice.json"), inventory);
  for (const auto& t : triples) {
    for (const auto& p : check_triple(t, inventory)) problems.push_back("forced choice " + t.key() + ": " + p);
  }
  log << "forced-choice triples: " << triples.size() << "\n";

  const auto ff = read_false_friends(cfg.data_path("false_friends.json"), inventory);
  for (const auto& p : ff) {
    const auto cls = classify_allomorph(p.inflected.form, inventory);
    if (cls.consistency != Consistency::consistent) {
      problems.push_back("false friend " + p.key() + ": final sibilant does not obey the distributional rules");
    }
    if (!suffix_length(p.base.form, p.inflected.form)) {
      problems.push_back("false friend " + p.key() + ": inflected form is not base + sibilant suffix");
    }
  }
  log << "false-friend pairs: " << ff.size() << "\n";

  if (!cfg.evaluation_manifest.empty()) {
    const auto corpus = load_corpus(cfg, cfg.evaluation_manifest, "evaluation");
    const auto s = load_stimuli(cfg, corpus.tokens, nullptr);
    for (const auto& w : s.selection.warnings) log << "warning: " << w << "\n";
    log << "unambiguous nouns: " << s.selection.nouns.size() << ", verbs: " << s.selection.verbs.size() << "\n";
    log << "inflection pairs: " << s.pairs.size() << " (" << s.pair_log.skipped.size() << " skipped)\n";
    for (const auto& p : s.pairs) {
      if (!pair_is_well_formed(p, inventory)) problems.push_back("pair " + p.key() + " is malformed");
    }
  }
  for (const auto& p : problems) log << "problem: " << p << "\n";
  return problems;
}

}  // namespace s3m

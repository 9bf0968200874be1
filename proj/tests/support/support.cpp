#include "support.hpp"

#include <Eigen/QR>
#include <algorithm>
#include <atomic>
#include <cstdio>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include "json.hpp"
#include "s3m/corpus_io.hpp"
#include "s3m/error.hpp"

namespace s3m::testing {

namespace fs = std::filesystem;

TempDir::TempDir(const std::string& prefix) {
  static std::atomic<int> counter{0};
  std::random_device rd;
  for (int attempt = 0; attempt < 100; ++attempt) {
    auto p = fs::temp_directory_path() /
             (prefix + "-" + std::to_string(rd()) + "-" + std::to_string(counter.fetch_add(1)));
    if (fs::create_directory(p)) {
      path_ = p;
      return;
    }
  }
  throw Error("could not create a temporary directory");
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

double gaussian(Rng& rng) {
  // Box-Muller on the raw engine so draws do not depend on the library's
  // distribution implementation.
  constexpr double kTwoPi = 6.283185307179586;
  const double u1 = (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53;
  const double u2 = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(kTwoPi * u2);
}

Vec gaussian_vector(Rng& rng, int dim, double sigma) {
  Vec v(dim);
  for (int i = 0; i < dim; ++i) v(i) = sigma * gaussian(rng);
  return v;
}

EmbeddingStore store_from_rows(const std::vector<std::pair<std::string, Vec>>& rows, const std::string& space) {
  const auto dim = rows.empty() ? 0 : rows.front().second.size();
  EmbeddingMatrix m(static_cast<Eigen::Index>(rows.size()), dim);
  std::vector<StoreRow> meta;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    m.row(static_cast<Eigen::Index>(i)) = rows[i].second.cast<float>().transpose();
    meta.push_back({{"u", static_cast<int>(i)}, rows[i].first, "", -1});
  }
  return EmbeddingStore(space, "word", std::move(m), std::move(meta));
}

InflectionPair make_pair(const std::string& base, const std::string& inflected, Inflection inflection,
                         Allomorph allomorph) {
  InflectionPair p;
  p.base.word = base;
  p.inflected.word = inflected;
  p.base.form.phones = {"B"};
  p.inflected.form.phones = {"B", "Z"};
  p.inflection = inflection;
  p.allomorph = allomorph;
  return p;
}

PlantedStore make_planted_store(const PlantedGeometry& g) {
  Rng rng(g.seed);
  PlantedStore out;
  auto random_offset = [&] {
    Vec v = gaussian_vector(rng, g.dim);
    return Vec(v * (g.offset_norm / v.norm()));
  };
  out.offsets.push_back(random_offset());
  out.offsets.push_back(g.shared_offset ? out.offsets.front() : random_offset());
  const double sigma = g.noise_fraction * g.offset_norm;
  const Allomorph cycle[] = {Allomorph::z, Allomorph::s, Allomorph::Iz};

  std::vector<std::pair<std::string, Vec>> rows;
  for (int i = 0; i < g.pairs; ++i) {
    const Inflection infl = i % 2 == 0 ? Inflection::NNS : Inflection::VBZ;
    const std::string base = "w" + std::to_string(i);
    const std::string inflected = base + (infl == Inflection::NNS ? "-nns" : "-vbz");
    const Vec type = gaussian_vector(rng, g.dim);
    const Vec& offset = out.offsets[infl == Inflection::NNS ? 0 : 1];
    for (int t = 0; t < g.tokens_per_type; ++t) rows.emplace_back(base, type + gaussian_vector(rng, g.dim, sigma));
    for (int t = 0; t < g.tokens_per_type; ++t) {
      rows.emplace_back(inflected, type + offset + gaussian_vector(rng, g.dim, sigma));
    }
    out.pairs.push_back(make_pair(base, inflected, infl, cycle[(i / 2) % 3]));
  }
  out.store = store_from_rows(rows);
  return out;
}

ClusterSplits make_planted_clusters(const PlantedClusters& c) {
  Rng rng(c.seed);
  const int dim = c.signal_dims + c.nuisance_dims;
  struct Type {
    Mat basis;  // signal_dims x subspace_dims, orthonormal columns
    Vec centre;
  };
  std::vector<Type> types;
  for (int t = 0; t < c.types; ++t) {
    Mat g(c.signal_dims, c.subspace_dims);
    for (int i = 0; i < g.rows(); ++i) {
      for (int j = 0; j < g.cols(); ++j) g(i, j) = gaussian(rng);
    }
    Eigen::HouseholderQR<Mat> qr(g);
    Mat q = qr.householderQ() * Mat::Identity(c.signal_dims, c.subspace_dims);
    Vec centre = Vec::Ones(c.subspace_dims);
    types.push_back({q, centre});
  }
  auto fill = [&](FramePool& pool, int tokens) {
    for (int t = 0; t < c.types; ++t) {
      for (int k = 0; k < tokens; ++k) {
        FrameMatrix frames(c.frames_per_token, dim);
        for (int f = 0; f < c.frames_per_token; ++f) {
          Vec coeff = types[t].centre + gaussian_vector(rng, c.subspace_dims, c.spread);
          Vec signal = types[t].basis * coeff;
          for (int i = 0; i < c.signal_dims; ++i) frames(f, i) = static_cast<float>(signal(i));
          for (int i = c.signal_dims; i < dim; ++i) {
            frames(f, i) = static_cast<float>(c.nuisance_sigma * gaussian(rng));
          }
        }
        pool.add_token("type" + std::to_string(t), frames);
      }
    }
  };
  ClusterSplits s;
  fill(s.train, c.tokens_per_type);
  fill(s.validation, c.tokens_per_type);
  fill(s.test, c.tokens_per_type);
  return s;
}

std::size_t brute_force_rank(const EmbeddingStore& store, const Mat& predicted, const std::string& target) {
  const auto& v = store.vectors();
  std::vector<std::pair<double, std::size_t>> order;
  for (Eigen::Index r = 0; r < v.rows(); ++r) {
    double total = 0.0;
    for (Eigen::Index s = 0; s < predicted.rows(); ++s) {
      double dot = 0.0, nr = 0.0, np = 0.0;
      for (Eigen::Index k = 0; k < v.cols(); ++k) {
        const double x = v(r, k);
        const double y = predicted(s, k);
        dot += x * y;
        nr += x * x;
        np += y * y;
      }
      total += 1.0 - dot / (std::sqrt(nr) * std::sqrt(np));
    }
    order.emplace_back(total / static_cast<double>(predicted.rows()), static_cast<std::size_t>(r));
  }
  std::stable_sort(order.begin(), order.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (store.rows()[order[i].second].word == target) return i;
  }
  throw DataError("target not in store");
}

KsResult ks_two_sample(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double x = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= x) ++i;
    while (j < b.size() && b[j] <= x) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
  }
  const double ne = na * nb / (na + nb);
  const double lambda = (std::sqrt(ne) + 0.12 + 0.11 / std::sqrt(ne)) * d;
  double p = 0.0;
  for (int k = 1; k <= 100; ++k) {
    const double term = 2.0 * ((k % 2) ? 1.0 : -1.0) * std::exp(-2.0 * k * k * lambda * lambda);
    p += term;
    if (std::abs(term) < 1e-12) break;
  }
  if (lambda < 1e-3) p = 1.0;
  return {d, std::clamp(p, 0.0, 1.0)};
}

// ---------------------------------------------------------------------------
// fixture corpus

namespace {

struct FixtureWord {
  const char* word;
  const char* tag;
  const char* phones;
};

struct FixtureGroup {
  FixtureWord base;
  std::vector<FixtureWord> derived;
  int offset;  // 0 NNS, 1 VBZ, 2 false friend, 3 unrelated
};

const std::vector<FixtureGroup>& fixture_groups() {
  static const std::vector<FixtureGroup> groups = {
      {{"angel", "NN", "EY N JH AH L"}, {{"angels", "NNS", "EY N JH AH L Z"}}, 0},
      {{"ape", "NN", "EY P"}, {{"apes", "NNS", "EY P S"}}, 0},
      {{"age", "NN", "EY JH"}, {{"ages", "NNS", "EY JH IH Z"}}, 0},
      {{"actor", "NN", "AE K T ER"}, {{"actors", "NNS", "AE K T ER Z"}}, 0},
      {{"agent", "NN", "EY JH AH N T"}, {{"agents", "NNS", "EY JH AH N T S"}}, 0},
      {{"ash", "NN", "AE SH"}, {{"ashes", "NNS", "AE SH IH Z"}}, 0},
      {{"animal", "NN", "AE N AH M AH L"}, {{"animals", "NNS", "AE N AH M AH L Z"}}, 0},
      {{"artist", "NN", "AA R T AH S T"}, {{"artists", "NNS", "AA R T AH S T S"}}, 0},
      {{"allow", "VB", "AH L AW"}, {{"allows", "VBZ", "AH L AW Z"}}, 1},
      {{"exist", "VB", "IH G Z IH S T"}, {{"exists", "VBZ", "IH G Z IH S T S"}}, 1},
      {{"possess", "VB", "P AH Z EH S"}, {{"possesses", "VBZ", "P AH Z EH S IH Z"}}, 1},
      {{"own", "VB", "OW N"}, {{"owns", "VBZ", "OW N Z"}}, 1},
      {{"sit", "VB", "S IH T"}, {{"sits", "VBZ", "S IH T S"}}, 1},
      {{"arise", "VB", "ER AY Z"}, {{"arises", "VBZ", "ER AY Z IH Z"}}, 1},
      {{"tell", "VB", "T EH L"}, {{"tells", "VBZ", "T EH L Z"}}, 1},
      {{"take", "VB", "T EY K"}, {{"takes", "VBZ", "T EY K S"}}, 1},
      {{"backward", "RB", "B AE K W ER D"}, {{"backwards", "RB", "B AE K W ER D Z"}}, 2},
      {{"beside", "IN", "B IH S AY D"}, {{"besides", "IN", "B IH S AY D Z"}}, 2},
      {{"the", "DT", "DH IY"}, {{"these", "DT", "DH IY Z"}}, 2},
      {{"though", "IN", "DH OW"}, {{"those", "DT", "DH OW Z"}}, 2},
      {{"bay", "NN", "B EY"}, {{"bays", "NNS", "B EY Z"}, {"base", "NN", "B EY S"}}, 0},
      {{"den", "NN", "D EH N"}, {{"dens", "NNS", "D EH N Z"}, {"dense", "JJ", "D EH N S"}}, 0},
      {{"flee", "VB", "F L IY"}, {{"flees", "VBZ", "F L IY Z"}, {"fleece", "NN", "F L IY S"}}, 1},
  };
  return groups;
}

std::vector<std::string> split_words(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

}  // namespace

Fixture write_fixture(const fs::path& root, const FixtureOptions& o) {
  fs::create_directories(root);
  Rng rng(o.seed);
  const double hop_s = 0.02;

  struct TypeInfo {
    std::string word, tag;
    std::vector<std::string> phones;
    Vec vector;
  };
  std::vector<TypeInfo> types;
  std::vector<Vec> offsets;
  for (int i = 0; i < 3; ++i) {
    Vec v = gaussian_vector(rng, o.dim);
    offsets.push_back(v * (1.5 / v.norm()));
  }
  for (const auto& g : fixture_groups()) {
    const Vec base = gaussian_vector(rng, o.dim);
    types.push_back({g.base.word, g.base.tag, split_words(g.base.phones), base});
    for (std::size_t k = 0; k < g.derived.size(); ++k) {
      const auto& d = g.derived[k];
      // A second derived form stands for the inconsistent forced-choice
      // candidate and is unrelated to the base.
      Vec v = k == 0 ? Vec(base + offsets[static_cast<std::size_t>(g.offset)]) : gaussian_vector(rng, o.dim);
      types.push_back({d.word, d.tag, split_words(d.phones), v});
    }
  }

  std::vector<WordToken> all_tokens;
  struct Split {
    std::string name;
    int tokens;
    std::vector<std::string> utterances;
  };
  std::vector<Split> splits = {{"train", o.train_tokens, {}},
                               {"validation", o.heldout_tokens, {}},
                               {"selection", o.heldout_tokens, {}},
                               {"evaluation", o.eval_tokens, {}}};
  constexpr std::size_t kTokensPerUtterance = 6;

  for (auto& split : splits) {
    std::vector<std::size_t> sequence;
    for (std::size_t t = 0; t < types.size(); ++t) {
      for (int k = 0; k < split.tokens; ++k) sequence.push_back(t);
    }
    shuffle_in_place(rng, sequence);
    for (std::size_t start = 0, n = 0; start < sequence.size(); start += kTokensPerUtterance, ++n) {
      const std::size_t end = std::min(sequence.size(), start + kTokensPerUtterance);
      char id[64];
      std::snprintf(id, sizeof id, "%s-%03zu", split.name.c_str(), n);
      split.utterances.push_back(id);

      std::vector<std::size_t> frame_type;  // type per frame, npos for a gap frame
      std::vector<WordToken> tokens;
      std::size_t frame = 1;  // leading silence frame
      frame_type.push_back(static_cast<std::size_t>(-1));
      for (std::size_t i = start; i < end; ++i) {
        const auto& type = types[sequence[i]];
        WordToken tok;
        tok.utterance_id = id;
        tok.token_index = static_cast<int>(i - start);
        tok.word = type.word;
        tok.pos_tag = type.tag;
        tok.onset_s = static_cast<double>(frame) * hop_s;
        for (const auto& ph : type.phones) {
          const double on = static_cast<double>(frame) * hop_s;
          frame += static_cast<std::size_t>(o.frames_per_phone);
          tok.phonemes.push_back({ph, on, static_cast<double>(frame) * hop_s});
          for (int f = 0; f < o.frames_per_phone; ++f) frame_type.push_back(sequence[i]);
        }
        tok.offset_s = static_cast<double>(frame) * hop_s;
        tokens.push_back(tok);
      }
      frame_type.push_back(static_cast<std::size_t>(-1));

      for (int layer = 0; layer < o.layers; ++layer) {
        ActivationMatrix act;
        act.utterance_id = id;
        act.layer = static_cast<std::uint16_t>(layer);
        act.frames.resize(static_cast<Eigen::Index>(frame_type.size()), o.dim);
        const double sigma = 0.1 * (1.0 + layer);
        for (std::size_t f = 0; f < frame_type.size(); ++f) {
          Vec v = gaussian_vector(rng, o.dim, sigma);
          if (frame_type[f] != static_cast<std::size_t>(-1)) v += types[frame_type[f]].vector;
          act.frames.row(static_cast<Eigen::Index>(f)) = v.cast<float>().transpose();
        }
        const auto path = root / "act" / ("layer" + std::to_string(layer)) / (std::string(id) + ".s3ma");
        fs::create_directories(path.parent_path());
        write_activation_file(path, act);
      }
      for (auto& t : tokens) all_tokens.push_back(std::move(t));
    }
  }
  write_alignment_manifest(root / "alignments.jsonl", all_tokens);

  std::map<std::string, std::size_t> counts;
  for (const auto& t : all_tokens) ++counts[t.utterance_id];
  for (const auto& split : splits) {
    RunManifest m;
    m.split = split.name;
    m.layer = o.analysis_layer;
    m.alignments = "alignments.jsonl";
    for (const auto& id : split.utterances) {
      m.utterances.push_back({id, "act/layer{layer}/" + id + ".s3ma", counts[id]});
    }
    write_run_manifest(root / (split.name + ".json"), m);
  }

  std::ofstream freq(root / "frequencies.tsv");
  for (const auto& t : types) {
    freq << t.word << '\t' << (1.0 + static_cast<double>(uniform_index(rng, 4000)) / 1000.0) << '\n';
  }
  freq.close();

  std::vector<int> layers;
  for (int l = 0; l < o.layers; ++l) layers.push_back(l);
  nlohmann::json cfg = {
      {"manifests",
       {{"train", "train.json"},
        {"validation", "validation.json"},
        {"selection", "selection.json"},
        {"evaluation", "evaluation.json"}}},
      {"frequencies", "frequencies.tsv"},
      {"layers", layers},
      {"analysis_layer", o.analysis_layer},
      {"seed", o.seed},
      {"train",
       {{"out_dim", o.out_dim},
        {"max_epochs", o.max_epochs},
        {"batch_size", 64},
        {"patience", 3},
        {"learning_rate", 0.01},
        {"weight_decay", 0.001}}},
      {"analogy", {{"samples", 5}}},
      {"forced_choice", {{"draws", 50}}},
      {"pca", {{"components", 2}, {"samples_per_pair", 2}}}};
  std::ofstream(root / "config.json") << cfg.dump(1) << '\n';
  return {root, root / "config.json"};
}

std::vector<std::string> list_tree(const fs::path& root) {
  std::vector<std::string> out;
  if (!fs::exists(root)) return out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) out.push_back(e.path().lexically_relative(root).generic_string());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::string read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace s3m::testing

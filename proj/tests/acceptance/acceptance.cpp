// Acceptance checks P1-P10. Prints one PASS/FAIL line per criterion and exits
// non-zero if any fails.

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>

#include "s3m/analogy.hpp"
#include "s3m/corpus_io.hpp"
#include "s3m/embeddings.hpp"
#include "s3m/error.hpp"
#include "s3m/probe.hpp"
#include "s3m/stats.hpp"
#include "s3m/stimuli.hpp"
#include "support.hpp"

using namespace s3m;
using testing::gaussian;
using testing::gaussian_vector;
namespace fs = std::filesystem;

namespace {

// Tolerances.
constexpr double kP1SharedMaxCellMean = 2.0;
constexpr double kP1GapFactor = 5.0;
constexpr double kP1MaxSeconds = 30.0;
constexpr int kP2Trials = 100;
constexpr int kP2MaxRows = 1000;
constexpr double kP3FdStep = 1e-4;
constexpr double kP3RelTol = 1e-4;
constexpr double kP3KinkGuard = 1e-3;
constexpr int kP3Triples = 200;
constexpr double kP4MinMap = 0.9;
constexpr double kP4MinRatio = 3.0;
constexpr double kP4MaxSeconds = 300.0;
constexpr double kP6Tol = 1e-12;
constexpr int kP7Rows = 10000;
constexpr double kP7MaxSe = 3.0;
constexpr std::size_t kP7BinaryTerms = 18;
constexpr int kP9RoundTrips = 100;
constexpr int kP10Trials = 50;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

const FeatureInventory& inventory() {
  static const auto inv = FeatureInventory::read(default_data_dir() / "phoneme_features.tsv");
  return inv;
}

Vec row_of(const EmbeddingStore& s, std::size_t r) {
  return s.vectors().row(static_cast<Eigen::Index>(r)).cast<double>().transpose();
}

// ---------------------------------------------------------------------------

Outcome p1() {
  std::ostringstream d;
  bool ok = true;
  AnalogyConfig cfg;
  cfg.samples = 20;
  const std::vector<std::string> labels{"NNS", "VBZ"};

  testing::PlantedGeometry shared;
  const auto a = testing::make_planted_store(shared);
  auto t0 = Clock::now();
  const auto ra = transfer_matrix(AnalogyContext(a.store), a.pairs, morphology_category, labels, cfg, "p1");
  const double ta = seconds_since(t0);
  double worst = 0.0;
  for (const auto& c : ra.matrix.cells) worst = std::max(worst, c.mean.value_or(1e300));
  ok = ok && worst <= kP1SharedMaxCellMean && ta < kP1MaxSeconds;
  d << "shared max cell mean " << worst << " (" << ta << " s)";

  testing::PlantedGeometry distinct;
  distinct.shared_offset = false;
  const auto b = testing::make_planted_store(distinct);
  t0 = Clock::now();
  const auto rb = transfer_matrix(AnalogyContext(b.store), b.pairs, morphology_category, labels, cfg, "p1");
  const double tb = seconds_since(t0);
  const double diag = (*rb.matrix.at("NNS", "NNS").mean + *rb.matrix.at("VBZ", "VBZ").mean) / 2;
  const double off = (*rb.matrix.at("NNS", "VBZ").mean + *rb.matrix.at("VBZ", "NNS").mean) / 2;
  ok = ok && off > diag && off >= kP1GapFactor * diag && tb < kP1MaxSeconds;
  d << "; distinct diag " << diag << " off " << off << " (" << tb << " s)";
  return {ok, d.str()};
}

Outcome p2() {
  Rng rng(2002);
  int mismatches = 0;
  for (int trial = 0; trial < kP2Trials; ++trial) {
    const int rows = 2 + static_cast<int>(uniform_index(rng, kP2MaxRows - 1));
    const int dim = 2 + static_cast<int>(uniform_index(rng, 30));
    const int words = 1 + rows / 5;
    std::vector<std::pair<std::string, Vec>> data;
    for (int r = 0; r < rows; ++r) {
      const std::string w = "w" + std::to_string(uniform_index(rng, static_cast<std::size_t>(words)));
      if (r > 0 && uniform_index(rng, 5) == 0) {
        data.emplace_back(w, data[uniform_index(rng, data.size())].second);  // duplicate vector: ties
      } else {
        data.emplace_back(w, gaussian_vector(rng, dim));
      }
    }
    const auto store = testing::store_from_rows(data);
    Mat predicted(1 + static_cast<int>(uniform_index(rng, 20)), dim);
    for (int i = 0; i < predicted.rows(); ++i) predicted.row(i) = gaussian_vector(rng, dim).transpose();
    const auto& target = store.rows()[uniform_index(rng, store.size())].word;
    if (rank_target(store, predicted, target).rank != testing::brute_force_rank(store, predicted, target)) {
      ++mismatches;
    }
  }
  return {mismatches == 0, std::to_string(mismatches) + " mismatches in " + std::to_string(kP2Trials) + " trials"};
}

Outcome p3() {
  Rng rng(3003);
  int active = 0, inactive = 0, failures = 0;
  double worst = 0.0;
  while (active + inactive < kP3Triples) {
    const int out = 3 + static_cast<int>(uniform_index(rng, 6));
    const int in = out + 1 + static_cast<int>(uniform_index(rng, 20));
    Mat w(out, in);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = gaussian(rng);
    TripleFrames t{gaussian_vector(rng, in), gaussian_vector(rng, in), gaussian_vector(rng, in)};
    // alternate margins so both sides of the hinge are exercised
    const double margin = (active + inactive) % 2 ? 1.5 : 0.02;
    const Vec za = w * t.anchor, zp = w * t.positive, zn = w * t.negative;
    const double arg = margin + cosine_distance(za, zp) - cosine_distance(za, zn);
    if (std::abs(arg) < kP3KinkGuard) continue;
    Mat grad = Mat::Zero(out, in);
    hinge_loss_and_gradient(w, t, margin, &grad);
    Mat fd(out, in);
    for (int i = 0; i < out; ++i) {
      for (int j = 0; j < in; ++j) {
        Mat wp = w, wm = w;
        wp(i, j) += kP3FdStep;
        wm(i, j) -= kP3FdStep;
        fd(i, j) = (hinge_loss_and_gradient(wp, t, margin, nullptr) - hinge_loss_and_gradient(wm, t, margin, nullptr)) /
                   (2 * kP3FdStep);
      }
    }
    if (arg > 0) {
      ++active;
      const double rel = (grad - fd).norm() / std::max(grad.norm(), 1e-300);
      worst = std::max(worst, rel);
      if (!(rel <= kP3RelTol)) ++failures;
    } else {
      ++inactive;
      if (!grad.isZero(0.0)) ++failures;
    }
  }
  std::ostringstream d;
  d << active << " active, " << inactive << " inactive, worst relative error " << worst << ", " << failures
    << " failures";
  return {failures == 0 && active > 0 && inactive > 0, d.str()};
}

Outcome p4() {
  const auto t0 = Clock::now();
  testing::PlantedClusters pc;
  const auto splits = testing::make_planted_clusters(pc);
  TrainConfig c;
  c.out_dim = 8;
  c.learning_rate = 0.01;
  c.weight_decay = 0.001;
  c.batch_size = 128;
  c.max_epochs = 60;
  c.patience = 10;
  c.triples_per_anchor = 4;
  c.seed = 4004;
  const auto r = train_probe(splits.train, splits.validation, c);
  Rng init_rng(derive_seed(c.seed, "init"));
  const Mat init = init_weights(c.out_dim, static_cast<int>(splits.train.dim()), init_rng);
  const double trained_map = probe_map(r.params, splits.test).map;
  const double init_map = probe_map(init, splits.test).map;
  const double secs = seconds_since(t0);
  std::ostringstream d;
  d << "trained mAP " << trained_map << ", initial mAP " << init_map << ", " << secs << " s";
  return {trained_map >= kP4MinMap && trained_map >= kP4MinRatio * init_map && secs < kP4MaxSeconds, d.str()};
}

Outcome p5() {
  int correct = 0, total = 0;
  std::string wrong;
  for (const auto& t : read_forced_choice(default_data_dir() / "forced_choice.json", inventory())) {
    const auto c = classify_allomorph(t.consistent.form, inventory());
    const auto n = classify_allomorph(t.inconsistent.form, inventory());
    const bool c_ok = c == AllomorphClass{Allomorph::z, Consistency::consistent};
    const bool n_ok = n == AllomorphClass{Allomorph::s, Consistency::inconsistent};
    correct += c_ok + n_ok;
    total += 2;
    if (!c_ok) wrong += " " + t.consistent.words.front();
    if (!n_ok) wrong += " " + t.inconsistent.words.front();
  }
  const std::pair<const char*, Allomorph> exemplars[] = {
      {"D AO T ER Z", Allomorph::z}, {"L IH P S", Allomorph::s},     {"CH IY Z IH Z", Allomorph::Iz},
      {"G IH V Z", Allomorph::z},    {"IH G Z IH S T S", Allomorph::s}, {"P L IY Z IH Z", Allomorph::Iz}};
  for (const auto& [phones, allo] : exemplars) {
    const bool ok = classify_allomorph(PhonForm::parse(phones, inventory()), inventory()) ==
                    AllomorphClass{allo, Consistency::consistent};
    correct += ok;
    ++total;
    if (!ok) wrong += std::string(" /") + phones + "/";
  }
  return {correct == total && total == 76,
          std::to_string(correct) + "/" + std::to_string(total) + " classified as labelled" + wrong};
}

Outcome p6() {
  Rng rng(6006);
  int failures = 0;
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<std::pair<std::string, Vec>> rows;
    const int dim = 2 + static_cast<int>(uniform_index(rng, 4));
    auto add = [&](const std::string& w) {
      const int n = 1 + static_cast<int>(uniform_index(rng, 3));
      for (int k = 0; k < n; ++k) rows.emplace_back(w, gaussian_vector(rng, dim));
    };
    for (const char* w : {"a1", "b1", "a2", "b2", "a3", "b3", "c", "cons", "cons2", "inc"}) add(w);
    const auto store = testing::store_from_rows(rows);
    const std::vector<InflectionPair> sources{testing::make_pair("a1", "b1", Inflection::NNS),
                                              testing::make_pair("a2", "b2", Inflection::VBZ),
                                              testing::make_pair("a3", "b3", Inflection::NNS)};
    ForcedChoiceTriple t;
    t.base.words = {"c"};
    t.consistent.words = {"cons", "cons2"};
    t.inconsistent.words = {"inc"};
    ForcedChoiceConfig cfg;
    cfg.exhaustive = true;
    const AnalogyContext ctx(store);
    const auto r = forced_choice(ctx, sources, std::span<const ForcedChoiceTriple>(&t, 1), cfg);

    // independent enumeration: nearest candidate token by full scan
    auto consistent_wins = [&](const Vec& d) {
      double best = 0.0;
      std::size_t best_row = 0;
      bool found = false;
      for (std::size_t row = 0; row < store.size(); ++row) {
        const auto& w = store.rows()[row].word;
        if (w != "cons" && w != "cons2" && w != "inc") continue;
        const Vec x = row_of(store, row);
        const double dist = 1.0 - x.dot(d) / (x.norm() * d.norm());
        if (!found || dist < best) {
          best = dist;
          best_row = row;
          found = true;
        }
      }
      return store.rows()[best_row].word != "inc";
    };
    double expected = 0.0;
    for (const auto& p : sources) {
      double hits = 0, n = 0;
      for (auto a : store.rows_of(p.base.word)) {
        for (auto b : store.rows_of(p.inflected.word)) {
          for (auto c : store.rows_of("c")) {
            hits += consistent_wins(row_of(store, b) - row_of(store, a) + row_of(store, c));
            n += 1;
          }
        }
      }
      expected += hits / n;
    }
    expected /= static_cast<double>(sources.size());
    ForcedChoiceTriple swapped{t.base, t.inconsistent, t.consistent};
    const auto rs = forced_choice(ctx, sources, std::span<const ForcedChoiceTriple>(&swapped, 1), cfg);
    const double e1 = std::abs(r.triples.at(0).preference - expected);
    const double e2 = std::abs(rs.triples.at(0).preference - (1.0 - r.triples.at(0).preference));
    worst = std::max({worst, e1, e2});
    if (!(e1 <= kP6Tol && e2 <= kP6Tol)) ++failures;
  }
  std::ostringstream d;
  d << "20 stores, worst deviation " << worst << ", " << failures << " failures";
  return {failures == 0, d.str()};
}

Outcome p7() {
  Rng rng(7007);
  const Allomorph allo[] = {Allomorph::z, Allomorph::s, Allomorph::Iz};
  const Inflection infl[] = {Inflection::NNS, Inflection::VBZ};
  std::vector<TrialRow> rows(kP7Rows);
  for (int i = 0; i < kP7Rows; ++i) {
    auto& r = rows[static_cast<std::size_t>(i)];
    r.inflection_from = infl[uniform_index(rng, 2)];
    r.inflection_to = infl[uniform_index(rng, 2)];
    r.allomorph_from = allo[uniform_index(rng, 3)];
    r.allomorph_to = allo[uniform_index(rng, 3)];
    r.from_freq = gaussian(rng);
    r.to_freq = gaussian(rng);
  }
  const auto shape = build_design(rows, AllomorphCoding::full);
  Eigen::VectorXd beta(shape.x.cols());
  for (Eigen::Index j = 0; j < beta.size(); ++j) beta(j) = 0.5 * gaussian(rng);
  for (int i = 0; i < kP7Rows; ++i) rows[static_cast<std::size_t>(i)].outcome = shape.x.row(i).dot(beta) + gaussian(rng);
  const auto fit = fit_ols(build_design(rows, AllomorphCoding::full));
  int outside = 0;
  double worst = 0.0;
  for (Eigen::Index j = 0; j < beta.size(); ++j) {
    const double z = std::abs(fit.coefficients(j) - beta(j)) / fit.standard_errors(j);
    worst = std::max(worst, z);
    if (!(z <= kP7MaxSe)) ++outside;
  }
  std::vector<TrialRow> balanced;
  for (int i = 0; i < 36 * 4; ++i) {
    TrialRow r;
    r.inflection_from = infl[i % 2];
    r.inflection_to = infl[(i / 2) % 2];
    r.allomorph_from = allo[(i / 4) % 3];
    r.allomorph_to = allo[(i / 12) % 3];
    r.from_freq = gaussian(rng);
    r.to_freq = gaussian(rng);
    balanced.push_back(r);
  }
  const auto binary = build_design(balanced, AllomorphCoding::binary_s);
  std::ostringstream d;
  d << fit.terms.size() << " terms, worst |error|/SE " << worst << ", " << outside << " outside; binary design "
    << binary.terms.size() << " terms";
  return {outside == 0 && binary.terms.size() == kP7BinaryTerms && fit.terms.size() == 38, d.str()};
}

int run(const std::string& cmd) {
  const int status = std::system((cmd + " >/dev/null 2>&1").c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Outcome p8() {
  testing::TempDir dir("s3m-acceptance");
  testing::FixtureOptions o;
  o.layers = 2;
  o.analysis_layer = 1;
  const auto fx = testing::write_fixture(dir.path() / "corpus", o);
  const std::string cli = std::string("'") + S3M_CLI_PATH + "' --config '" + fx.config.string() + "'";
  std::vector<fs::path> outs{dir.path() / "run1", dir.path() / "run2"};
  for (std::size_t k = 0; k < outs.size(); ++k) {
    const std::string base = cli + " --out '" + outs[k].string() + "'" + (k == 1 ? " --jobs 2" : "");
    for (const char* sub : {"train", "embed", "evaluate", "report"}) {
      const int code = run(base + " " + sub);
      if (code != 0) return {false, std::string(sub) + " exited with " + std::to_string(code)};
    }
  }
  const auto a = testing::list_tree(outs[0]);
  const auto b = testing::list_tree(outs[1]);
  if (a != b) return {false, "file lists differ (" + std::to_string(a.size()) + " vs " + std::to_string(b.size()) + ")"};
  std::size_t differing = 0;
  std::string first;
  for (const auto& f : a) {
    if (testing::read_bytes(outs[0] / f) != testing::read_bytes(outs[1] / f)) {
      if (differing++ == 0) first = f;
    }
  }
  return {differing == 0 && !a.empty(),
          std::to_string(a.size()) + " files, " + std::to_string(differing) + " differ" +
              (first.empty() ? "" : " (first: " + first + ")")};
}

Outcome p9() {
  Rng rng(9009);
  testing::TempDir dir;
  int failures = 0;
  auto rand_float = [&] { return static_cast<float>(gaussian(rng) * 100.0); };
  for (int i = 0; i < kP9RoundTrips; ++i) {
    ActivationMatrix m;
    m.utterance_id = "u" + std::to_string(rng());
    m.layer = static_cast<std::uint16_t>(uniform_index(rng, 25));
    m.frames.resize(static_cast<Eigen::Index>(uniform_index(rng, 50)), 1 + static_cast<Eigen::Index>(uniform_index(rng, 64)));
    for (Eigen::Index k = 0; k < m.frames.size(); ++k) m.frames.data()[k] = rand_float();
    write_activation_file(dir / "a.s3ma", m);
    const auto back = read_activation_file(dir / "a.s3ma");
    if (!(back == m) ||
        std::memcmp(back.frames.data(), m.frames.data(), sizeof(float) * static_cast<std::size_t>(m.frames.size())) != 0) {
      ++failures;
    }
  }
  for (int i = 0; i < kP9RoundTrips; ++i) {
    ProbeParams p;
    const int in = 2 + static_cast<int>(uniform_index(rng, 60));
    p.weights.resize(1 + static_cast<int>(uniform_index(rng, static_cast<std::size_t>(in - 1))), in);
    for (Eigen::Index k = 0; k < p.weights.size(); ++k) p.weights.data()[k] = rand_float();
    p.layer = static_cast<int>(uniform_index(rng, 25));
    p.margin = 0.01 + 1.9 * static_cast<double>(uniform_index(rng, 1000)) / 1000.0;
    p.metadata.seed = rng();
    write_probe_file(dir / "p.s3mp", p);
    const auto back = read_probe_file(dir / "p.s3mp");
    if (back.weights.rows() != p.weights.rows() || back.weights.cols() != p.weights.cols() ||
        std::memcmp(back.weights.data(), p.weights.data(), sizeof(float) * static_cast<std::size_t>(p.weights.size())) != 0 ||
        back.layer != p.layer || back.margin != p.margin || back.metadata.seed != p.metadata.seed) {
      ++failures;
    }
  }
  for (int i = 0; i < kP9RoundTrips; ++i) {
    const int rows = 1 + static_cast<int>(uniform_index(rng, 40));
    const int dim = 1 + static_cast<int>(uniform_index(rng, 48));
    EmbeddingMatrix v(rows, dim);
    std::vector<StoreRow> meta;
    for (int r = 0; r < rows; ++r) {
      for (int c = 0; c < dim; ++c) v(r, c) = rand_float();
      meta.push_back({{"utt" + std::to_string(uniform_index(rng, 9)), r}, "w" + std::to_string(uniform_index(rng, 5)),
                      r % 2 ? "Z" : "", r % 2 ? static_cast<int>(uniform_index(rng, 6)) : -1});
    }
    const EmbeddingStore s("probe-layer-" + std::to_string(uniform_index(rng, 25)), "word", v, meta);
    write_store_file(dir / "s.s3me", s);
    const auto back = read_store_file(dir / "s.s3me");
    if (!(back == s) ||
        std::memcmp(back.vectors().data(), v.data(), sizeof(float) * static_cast<std::size_t>(v.size())) != 0) {
      ++failures;
    }
  }
  return {failures == 0, std::to_string(3 * kP9RoundTrips) + " round-trips, " + std::to_string(failures) + " failures"};
}

Outcome p10() {
  Rng rng(10010);
  int failures = 0;
  for (int trial = 0; trial < kP10Trials; ++trial) {
    std::vector<std::pair<std::string, Vec>> rows, scaled;
    std::vector<InflectionPair> pairs;
    const int dim = 2 + static_cast<int>(uniform_index(rng, 16));
    const double factor = std::exp(4.0 * gaussian(rng));
    for (int p = 0; p < 6; ++p) {
      for (const std::string w : {"b" + std::to_string(p), "i" + std::to_string(p)}) {
        for (int k = 0; k < 3; ++k) {
          const Vec v = gaussian_vector(rng, dim);
          rows.emplace_back(w, v);
          scaled.emplace_back(w, factor * v);
        }
      }
      pairs.push_back(testing::make_pair("b" + std::to_string(p), "i" + std::to_string(p), Inflection::NNS));
    }
    const auto a = testing::store_from_rows(rows);
    const auto b = testing::store_from_rows(scaled);
    AnalogyConfig cfg;
    cfg.samples = 4;
    cfg.seed = rng();
    const auto src = pairs[uniform_index(rng, 3)];
    const auto tgt = pairs[3 + uniform_index(rng, 3)];
    if (run_trial(AnalogyContext(a), src, tgt, cfg).rank != run_trial(AnalogyContext(b), src, tgt, cfg).rank) {
      ++failures;
    }
  }
  return {failures == 0, std::to_string(kP10Trials) + " trials, " + std::to_string(failures) + " rank changes"};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> checks = {
      {"P1", p1}, {"P2", p2}, {"P3", p3}, {"P4", p4}, {"P5", p5},
      {"P6", p6}, {"P7", p7}, {"P8", p8}, {"P9", p9}, {"P10", p10}};
  int failed = 0;
  for (const auto& [name, fn] : checks) {
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::cout << name << ' ' << (o.pass ? "PASS" : "FAIL") << "  " << o.detail << std::endl;
    failed += o.pass ? 0 : 1;
  }
  return failed == 0 ? 0 : 1;
}

#include <doctest.h>

#include <cmath>
#include <cstring>
#include <map>
#include <set>

#include "s3m/error.hpp"
#include "s3m/probe.hpp"
#include "support.hpp"

using namespace s3m;
using testing::gaussian;
using testing::gaussian_vector;

namespace {

Mat random_matrix(Rng& rng, int rows, int cols) {
  Mat m(rows, cols);
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) m(i, j) = gaussian(rng);
  }
  return m;
}

ProbeParams params_from(const Mat& w) {
  ProbeParams p;
  p.weights = w.cast<float>();
  return p;
}

double cos_dist_oracle(const Vec& a, const Vec& b) {
  double dot = 0, na = 0, nb = 0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    dot += a(i) * b(i);
    na += a(i) * a(i);
    nb += b(i) * b(i);
  }
  return 1.0 - dot / std::sqrt(na * nb);
}

FramePool toy_pool(const std::vector<std::pair<std::string, int>>& tokens, int frames_per_token, int dim,
                   Rng& rng) {
  FramePool pool;
  for (const auto& [word, count] : tokens) {
    for (int k = 0; k < count; ++k) {
      FrameMatrix f(frames_per_token, dim);
      for (int i = 0; i < f.size(); ++i) f.data()[i] = static_cast<float>(gaussian(rng));
      pool.add_token(word, f);
    }
  }
  return pool;
}

}  // namespace

TEST_CASE("project_frame with a selector matrix") {
  Mat w = Mat::Zero(3, 7);
  for (int i = 0; i < 3; ++i) w(i, i) = 1.0;
  const auto p = params_from(w);
  std::vector<float> x = {0.5f, -2.0f, 3.25f, 9.0f, 1.0f, 7.0f, -1.0f};
  const Vec z = project_frame(p, x);
  REQUIRE(z.size() == 3);
  CHECK(z(0) == 0.5);
  CHECK(z(1) == -2.0);
  CHECK(z(2) == 3.25);
  std::vector<float> zero(7, 0.0f);
  CHECK(project_frame(p, zero).isZero());
}

TEST_CASE("project_frame matches a scalar loop and is linear") {
  Rng rng(2);
  for (int round = 0; round < 20; ++round) {
    const Mat w = random_matrix(rng, 8, 40);
    const Vec x = gaussian_vector(rng, 40);
    const Vec y = gaussian_vector(rng, 40);
    const Vec z = project_frame(w, x);
    for (int i = 0; i < 8; ++i) {
      double acc = 0.0;
      for (int j = 0; j < 40; ++j) acc += w(i, j) * x(j);
      CHECK(std::abs(z(i) - acc) <= 1e-6 * std::max(1.0, std::abs(acc)));
    }
    const double a = gaussian(rng), b = gaussian(rng);
    const Vec lhs = project_frame(w, Vec(a * x + b * y));
    const Vec rhs = a * project_frame(w, x) + b * project_frame(w, y);
    CHECK((lhs - rhs).norm() <= 1e-6 * rhs.norm());
  }
  CHECK_THROWS(project_frame(Mat::Zero(2, 3), Vec::Zero(4)));
}

TEST_CASE("hinge loss examples") {
  const double m = 0.5;
  Vec a(2), p(2), n(2);
  a << 1, 0;
  p << 1, 1;
  p /= std::sqrt(2.0);
  n << 0, 1;
  CHECK(cosine_distance(a, p) == doctest::Approx(1.0 - std::sqrt(2.0) / 2.0).epsilon(1e-12));
  CHECK(cosine_distance(a, n) == doctest::Approx(1.0));
  CHECK(hinge_loss(a, p, n, m) == 0.0);

  // equal distances leave the margin
  CHECK(hinge_loss(a, n, n, 0.3) == doctest::Approx(0.3));
  // d(a,p) = 0 and d(a,n) = m exactly: boundary
  Vec n2(2);
  n2 << 0.5, std::sqrt(0.75);  // cos = 0.5, distance 0.5
  CHECK(hinge_loss(a, a, n2, 0.5) == doctest::Approx(0.0).epsilon(1e-12));

  CHECK_THROWS_AS(hinge_loss(Vec::Zero(2), p, n, m), NumericError);
}

TEST_CASE("hinge loss is non-negative and zero beyond the margin") {
  Rng rng(4);
  for (int i = 0; i < 1000; ++i) {
    const Vec a = gaussian_vector(rng, 5), p = gaussian_vector(rng, 5), n = gaussian_vector(rng, 5);
    const double m = 0.05 + 1.9 * (static_cast<double>(uniform_index(rng, 1000)) / 1000.0);
    const double loss = hinge_loss(a, p, n, m);
    CHECK(loss >= 0.0);
    const double dp = cos_dist_oracle(a, p), dn = cos_dist_oracle(a, n);
    if (dn >= dp + m) CHECK(loss == 0.0);
    CHECK(loss == doctest::Approx(std::max(0.0, m + dp - dn)).epsilon(1e-12));
    // scale invariance of every argument
    CHECK(hinge_loss(3.0 * a, 0.5 * p, 7.0 * n, m) == doctest::Approx(loss).epsilon(1e-12));
  }
}

TEST_CASE("hinge gradient matches central differences") {
  Rng rng(8);
  const double h = 1e-4;
  int active = 0, inactive = 0;
  while (active + inactive < 100) {
    const Mat w = random_matrix(rng, 4, 9);
    TripleFrames t{gaussian_vector(rng, 9), gaussian_vector(rng, 9), gaussian_vector(rng, 9)};
    const double m = inactive < 30 && active >= 70 ? 0.01 : 0.6;
    const Vec za = w * t.anchor, zp = w * t.positive, zn = w * t.negative;
    const double arg = m + cos_dist_oracle(za, zp) - cos_dist_oracle(za, zn);
    if (std::abs(arg) < 1e-3) continue;  // finite differences straddle the kink
    Mat grad = Mat::Zero(4, 9);
    hinge_loss_and_gradient(w, t, m, &grad);
    Mat fd(4, 9);
    for (int i = 0; i < 4; ++i) {
      for (int j = 0; j < 9; ++j) {
        Mat wp = w, wm = w;
        wp(i, j) += h;
        wm(i, j) -= h;
        fd(i, j) = (hinge_loss_and_gradient(wp, t, m, nullptr) - hinge_loss_and_gradient(wm, t, m, nullptr)) / (2 * h);
      }
    }
    if (arg > 0) {
      ++active;
      CHECK((grad - fd).norm() <= 1e-4 * grad.norm());
    } else {
      ++inactive;
      CHECK(grad.isZero(0.0));
      CHECK(fd.isZero(0.0));
    }
  }
  CHECK(active > 0);
  CHECK(inactive > 0);
}

TEST_CASE("contrastive sampling structure") {
  Rng data(1);
  const auto pool = toy_pool({{"cat", 2}, {"dog", 1}}, 3, 4, data);
  Rng rng(99);
  const auto triples = sample_contrastive_batch(pool, 500, rng);
  REQUIRE(triples.size() == 500);
  for (const auto& t : triples) {
    CHECK(pool.type_names()[pool.type_of_frame(t.anchor)] == "cat");
    CHECK(pool.type_of_frame(t.positive) == pool.type_of_frame(t.anchor));
    CHECK(pool.token_of_frame(t.positive) != pool.token_of_frame(t.anchor));
    CHECK(pool.type_names()[pool.type_of_frame(t.negative)] == "dog");
  }
  Rng again(99);
  CHECK(sample_contrastive_batch(pool, 500, again) == triples);
}

TEST_CASE("positive-pair marginal is uniform over eligible token pairs") {
  Rng data(2);
  const auto pool = toy_pool({{"a", 3}, {"b", 3}, {"c", 3}}, 2, 3, data);
  Rng rng(7);
  const std::size_t draws = 100000;
  const auto triples = sample_contrastive_batch(pool, draws, rng);
  std::map<std::pair<std::size_t, std::size_t>, double> counts;
  for (const auto& t : triples) counts[{pool.token_of_frame(t.anchor), pool.token_of_frame(t.positive)}] += 1;
  // 3 types x 6 ordered token pairs
  REQUIRE(counts.size() == 18);
  const double expected = static_cast<double>(draws) / 18.0;
  double chi2 = 0.0;
  for (const auto& [_, c] : counts) chi2 += (c - expected) * (c - expected) / expected;
  // chi-square, 17 degrees of freedom, 0.999 quantile
  CHECK(chi2 < 40.79);
}

TEST_CASE("sampling needs a type with two tokens") {
  Rng data(3);
  const auto pool = toy_pool({{"a", 1}, {"b", 1}}, 2, 3, data);
  Rng rng(1);
  CHECK(pool.anchor_frames().empty());
  CHECK_THROWS(sample_contrastive_batch(pool, 10, rng));
}

TEST_CASE("decoupled weight decay with zero gradient") {
  TrainConfig c;
  c.learning_rate = 0.01;
  c.weight_decay = 0.2;
  AdamW opt(3, 4, c);
  Rng rng(5);
  Mat p = random_matrix(rng, 3, 4);
  const Mat before = p;
  opt.step(p, Mat::Zero(3, 4));
  CHECK((p - before * (1.0 - 0.01 * 0.2)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("learning rate zero leaves the parameters untouched") {
  testing::PlantedClusters pc;
  pc.types = 4;
  pc.tokens_per_type = 3;
  const auto s = testing::make_planted_clusters(pc);
  TrainConfig c;
  c.learning_rate = 0.0;
  c.out_dim = 4;
  c.max_epochs = 3;
  c.batch_size = 16;
  Rng rng(1);
  const Mat init = init_weights(4, static_cast<int>(s.train.dim()), rng);
  for (double wd : {0.0, 0.1}) {
    c.weight_decay = wd;
    const auto r = train_probe(s.train, s.validation, c, 0, &init);
    CHECK((r.params.weights.cast<double>() - init).cwiseAbs().maxCoeff() <= 1e-7);
  }
}

TEST_CASE("init weights stay within the uniform bound") {
  Rng rng(3);
  const Mat w = init_weights(32, 768, rng);
  const double bound = std::sqrt(6.0 / (768 + 32));
  CHECK(w.cwiseAbs().maxCoeff() <= bound);
  CHECK(w.cwiseAbs().maxCoeff() > 0.9 * bound);
}

TEST_CASE("training on planted clusters lowers validation loss and is reproducible") {
  testing::PlantedClusters pc;
  pc.types = 6;
  const auto s = testing::make_planted_clusters(pc);
  TrainConfig c;
  c.out_dim = 6;
  c.max_epochs = 15;
  c.batch_size = 32;
  c.learning_rate = 0.01;
  c.seed = 21;
  std::vector<EpochRecord> log;
  const auto r = train_probe(s.train, s.validation, c, 3, nullptr, [&](const EpochRecord& e) { log.push_back(e); });
  CHECK(r.params.metadata.final_validation_loss < r.initial_validation_loss);
  CHECK(r.params.layer == 3);
  CHECK_FALSE(log.empty());
  const auto again = train_probe(s.train, s.validation, c, 3);
  CHECK(encode_probe(again.params) == encode_probe(r.params));
}

TEST_CASE("mean average precision") {
  SUBCASE("identical frames per type, orthogonal types") {
    Mat v(6, 3);
    v << 1, 0, 0, 1, 0, 0, 0, 1, 0, 0, 1, 0, 0, 0, 1, 0, 0, 1;
    const int types[] = {0, 0, 1, 1, 2, 2};
    const std::size_t tokens[] = {0, 1, 2, 3, 4, 5};
    const auto r = mean_average_precision(v, types, tokens);
    CHECK(r.map == 1.0);
    CHECK(r.queries == 6);
  }
  SUBCASE("relevant frame ranked second") {
    Mat v(3, 2);
    v << 1, 0, 0, 1, 1, 1;
    const int types[] = {0, 0, 1};
    const std::size_t tokens[] = {0, 1, 2};
    const auto r = mean_average_precision(v, types, tokens);
    // both type-0 queries see the type-1 frame first: AP = 1/2 each
    CHECK(r.map == doctest::Approx(0.5));
    CHECK(r.queries == 2);
    CHECK(r.skipped == 1);
  }
  SUBCASE("frames of the query's own token are left out") {
    Mat v(4, 2);
    v << 1, 0, 1, 0.01, 0, 1, 1, 0.02;
    const int types[] = {0, 0, 1, 0};
    const std::size_t tokens[] = {0, 0, 1, 2};
    const auto r = mean_average_precision(v, types, tokens);
    CHECK(r.map == doctest::Approx(1.0));
  }
}

TEST_CASE("shuffled labels score at the permutation null") {
  Rng rng(12);
  const int n = 120;
  Mat v(n, 6);
  for (int i = 0; i < n; ++i) v.row(i) = gaussian_vector(rng, 6).transpose();
  std::vector<int> types(n);
  std::vector<std::size_t> tokens(n);
  for (int i = 0; i < n; ++i) {
    types[i] = i % 6;
    tokens[i] = static_cast<std::size_t>(i);
  }
  shuffle_in_place(rng, types);
  const double observed = mean_average_precision(v, types, tokens).map;
  std::vector<double> null;
  for (int k = 0; k < 60; ++k) {
    auto t = types;
    shuffle_in_place(rng, t);
    null.push_back(mean_average_precision(v, t, tokens).map);
  }
  double mean = 0, var = 0;
  for (double x : null) mean += x;
  mean /= static_cast<double>(null.size());
  for (double x : null) var += (x - mean) * (x - mean);
  const double sd = std::sqrt(var / static_cast<double>(null.size() - 1));
  CHECK(std::abs(observed - mean) <= 3 * sd);
  // roughly the class prior
  CHECK(mean == doctest::Approx(1.0 / 6.0).epsilon(0.5));
}

TEST_CASE("probe file round-trip and errors") {
  Rng rng(6);
  testing::TempDir dir;
  for (int i = 0; i < 20; ++i) {
    ProbeParams p = params_from(random_matrix(rng, 3 + static_cast<int>(uniform_index(rng, 5)), 10));
    p.layer = static_cast<int>(uniform_index(rng, 12));
    p.margin = 0.1 + 0.01 * static_cast<double>(uniform_index(rng, 100));
    p.metadata.seed = rng();
    p.metadata.epochs_run = 4;
    p.metadata.final_validation_loss = 0.123456789;
    write_probe_file(dir / "p.s3mp", p);
    const auto back = read_probe_file(dir / "p.s3mp");
    CHECK(std::memcmp(back.weights.data(), p.weights.data(), sizeof(float) * p.weights.size()) == 0);
    CHECK(back.margin == p.margin);
    CHECK(back.layer == p.layer);
    CHECK(back.metadata.seed == p.metadata.seed);
    CHECK(back.metadata.final_validation_loss == p.metadata.final_validation_loss);
    CHECK(encode_probe(back) == encode_probe(p));
  }
  auto bytes = encode_probe(params_from(random_matrix(rng, 2, 4)));
  CHECK(bytes.substr(0, 4) == "S3MP");
  auto bad = bytes;
  bad[1] = 'Q';
  CHECK_THROWS_AS(decode_probe(bad), FormatError);
  CHECK_THROWS_AS(decode_probe(bytes.substr(0, 20)), CorruptionError);
}

TEST_CASE("probe params validation") {
  ProbeParams p = params_from(Mat::Ones(4, 3));
  CHECK_THROWS(p.validate());  // out_dim >= in_dim
  p = params_from(Mat::Ones(2, 3));
  p.margin = 2.0;
  CHECK_THROWS(p.validate());
  p.margin = 0.3;
  CHECK_NOTHROW(p.validate());
}

TEST_CASE("hyperparameter search") {
  testing::PlantedClusters pc;
  pc.types = 5;
  const auto s = testing::make_planted_clusters(pc);
  TrainConfig base;
  base.out_dim = 4;
  base.max_epochs = 6;
  base.batch_size = 32;
  base.learning_rate = 0.02;

  SUBCASE("default config is the reported optimum") {
    TrainConfig d;
    CHECK(d.learning_rate == 0.00108);
    CHECK(d.weight_decay == 0.00607);
    CHECK(d.margin == 0.37590);
    CHECK(d.out_dim == 32);
    SearchSpace space;
    CHECK((space.lr_min <= d.learning_rate && d.learning_rate <= space.lr_max));
    CHECK((space.wd_min <= d.weight_decay && d.weight_decay <= space.wd_max));
    CHECK((space.margin_min <= d.margin && d.margin <= space.margin_max));
    CHECK(std::find(space.out_dims.begin(), space.out_dims.end(), 32) != space.out_dims.end());
  }
  SUBCASE("single candidate") {
    const std::vector<TrainConfig> one{base};
    const auto r = hyperparameter_search(one, s.train, s.validation, s.test);
    CHECK(r.best == 0);
    CHECK(r.candidates.size() == 1);
  }
  SUBCASE("learning rate zero loses") {
    TrainConfig frozen = base;
    frozen.learning_rate = 0.0;
    const std::vector<TrainConfig> space{frozen, base};
    const auto r = hyperparameter_search(space, s.train, s.validation, s.test);
    CHECK(r.best == 1);
    CHECK(r.candidates[1].selection_map > r.candidates[0].selection_map);
    const auto parallel = hyperparameter_search(space, s.train, s.validation, s.test, 0, 2);
    CHECK(encode_probe(parallel.winner().params) == encode_probe(r.winner().params));
  }
  SUBCASE("empty space") {
    CHECK_THROWS(hyperparameter_search({}, s.train, s.validation, s.test));
  }
  SUBCASE("random search draws are reproducible and in range") {
    SearchSpace space;
    Rng a(4), b(4);
    const auto x = sample_search_space(space, base, 10, a);
    const auto y = sample_search_space(space, base, 10, b);
    REQUIRE(x.size() == 10);
    for (std::size_t i = 0; i < x.size(); ++i) {
      CHECK(x[i].learning_rate == y[i].learning_rate);
      CHECK(x[i].learning_rate >= space.lr_min);
      CHECK(x[i].learning_rate <= space.lr_max);
      CHECK(x[i].margin >= space.margin_min);
      CHECK(x[i].margin <= space.margin_max);
    }
  }
}

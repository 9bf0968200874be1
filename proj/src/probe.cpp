#include "s3m/probe.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <thread>

#include "binary_io.hpp"
#include "json.hpp"
#include "s3m/error.hpp"

namespace s3m {

using nlohmann::json;

namespace {

constexpr std::string_view kProbeMagic = "S3MP";

double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

json config_to_json(const TrainConfig& c) {
  return {{"learning_rate", c.learning_rate}, {"weight_decay", c.weight_decay}, {"margin", c.margin},
          {"out_dim", c.out_dim},             {"batch_size", c.batch_size},     {"max_epochs", c.max_epochs},
          {"patience", c.patience},           {"seed", c.seed},                 {"triples_per_anchor", c.triples_per_anchor},
          {"beta1", c.beta1},                 {"beta2", c.beta2},               {"epsilon", c.epsilon},
          {"validation_triples", c.validation_triples}};
}

TrainConfig config_from_json(const json& j) {
  TrainConfig c;
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.margin = j.value("margin", c.margin);
  c.out_dim = j.value("out_dim", c.out_dim);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.max_epochs = j.value("max_epochs", c.max_epochs);
  c.patience = j.value("patience", c.patience);
  c.seed = j.value("seed", c.seed);
  c.triples_per_anchor = j.value("triples_per_anchor", c.triples_per_anchor);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.epsilon = j.value("epsilon", c.epsilon);
  c.validation_triples = j.value("validation_triples", c.validation_triples);
  return c;
}

// d cos(u, v) / du
Vec cosine_grad(const Vec& u, const Vec& v, double nu, double nv, double cos) {
  return v / (nu * nv) - (cos / (nu * nu)) * u;
}

}  // namespace

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0) || !(weight_decay >= 0.0)) throw ConfigError("learning rate and weight decay must be >= 0");
  if (!(margin > 0.0 && margin < 2.0)) throw ConfigError("margin must lie in (0, 2)");
  if (out_dim <= 0 || batch_size <= 0 || max_epochs <= 0 || triples_per_anchor <= 0) {
    throw ConfigError("out_dim, batch_size, max_epochs and triples_per_anchor must be positive");
  }
  if (patience < 1) throw ConfigError("patience must be >= 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0 && epsilon > 0.0)) {
    throw ConfigError("invalid Adam moment constants");
  }
  if (validation_triples < 0) throw ConfigError("validation_triples must be >= 0");
}

void ProbeParams::validate() const {
  if (!weights.allFinite()) throw DataError("probe weights contain non-finite entries");
  if (weights.rows() <= 0 || weights.rows() >= weights.cols()) throw DataError("probe must reduce dimensionality");
  if (!(margin > 0.0 && margin < 2.0)) throw DataError("probe margin outside (0, 2)");
}

std::string encode_probe(const ProbeParams& p) {
  p.validate();
  detail::ByteWriter w;
  w.bytes(kProbeMagic);
  w.uint<std::uint16_t>(kProbeFormatVersion);
  w.uint<std::uint16_t>(static_cast<std::uint16_t>(p.layer));
  w.uint<std::uint32_t>(static_cast<std::uint32_t>(p.in_dim()));
  w.uint<std::uint32_t>(static_cast<std::uint32_t>(p.out_dim()));
  w.f64(p.margin);
  w.floats({p.weights.data(), static_cast<std::size_t>(p.weights.size())});
  json history = json::array();
  for (const auto& e : p.metadata.history) {
    json rec = {{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"validation_loss", e.validation_loss}};
    if (e.map) rec["map"] = *e.map;
    history.push_back(rec);
  }
  json meta = {{"seed", p.metadata.seed},
               {"epochs_run", p.metadata.epochs_run},
               {"best_epoch", p.metadata.best_epoch},
               {"final_validation_loss", p.metadata.final_validation_loss},
               {"config", config_to_json(p.metadata.config)},
               {"history", history}};
  const std::string trailer = meta.dump();
  w.uint<std::uint64_t>(trailer.size());
  w.bytes(trailer);
  return w.data();
}

ProbeParams decode_probe(std::string_view bytes, const std::string& context) {
  detail::ByteReader r(bytes, context);
  if (bytes.size() < 4 || r.bytes(4) != kProbeMagic) throw FormatError(context + ": bad magic (expected S3MP)");
  auto version = r.uint<std::uint16_t>();
  if (version != kProbeFormatVersion) throw FormatError(context + ": unsupported version " + std::to_string(version));
  ProbeParams p;
  p.layer = r.uint<std::uint16_t>();
  auto in = r.uint<std::uint32_t>();
  auto out = r.uint<std::uint32_t>();
  p.margin = r.f64();
  const std::uint64_t count = std::uint64_t{in} * out;
  if (count * sizeof(float) > r.remaining()) throw CorruptionError(context + ": weight matrix truncated");
  p.weights.resize(out, in);
  r.floats({p.weights.data(), static_cast<std::size_t>(count)});
  auto len = r.uint<std::uint64_t>();
  if (len > r.remaining()) throw CorruptionError(context + ": metadata trailer truncated");
  try {
    auto meta = json::parse(r.bytes(static_cast<std::size_t>(len)));
    p.metadata.seed = meta.value("seed", std::uint64_t{0});
    p.metadata.epochs_run = meta.value("epochs_run", 0);
    p.metadata.best_epoch = meta.value("best_epoch", 0);
    p.metadata.final_validation_loss = meta.value("final_validation_loss", 0.0);
    if (meta.contains("config")) p.metadata.config = config_from_json(meta.at("config"));
    for (const auto& e : meta.value("history", json::array())) {
      EpochRecord rec{e.at("epoch").get<int>(), e.at("train_loss").get<double>(),
                      e.at("validation_loss").get<double>(), std::nullopt};
      if (e.contains("map")) rec.map = e.at("map").get<double>();
      p.metadata.history.push_back(rec);
    }
  } catch (const json::exception& e) {
    throw FormatError(context + ": bad metadata trailer: " + e.what());
  }
  if (r.remaining() != 0) throw FormatError(context + ": trailing bytes");
  p.validate();
  return p;
}

void write_probe_file(const std::filesystem::path& path, const ProbeParams& p) {
  detail::write_file_atomic(path, encode_probe(p));
}

ProbeParams read_probe_file(const std::filesystem::path& path) {
  return decode_probe(detail::read_file_bytes(path), path.string());
}

Vec project_frame(const ProbeParams& params, std::span<const float> x) {
  if (static_cast<int>(x.size()) != params.in_dim()) {
    throw DataError("projection dimension mismatch: probe expects " + std::to_string(params.in_dim()) + ", got " +
                    std::to_string(x.size()));
  }
  Eigen::Map<const Eigen::VectorXf> xv(x.data(), static_cast<Eigen::Index>(x.size()));
  return params.weights.cast<double>() * xv.cast<double>();
}

Vec project_frame(const Mat& weights, const Vec& x) {
  if (weights.cols() != x.size()) throw DataError("projection dimension mismatch");
  return weights * x;
}

double cosine_distance(const Vec& a, const Vec& b) {
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 || nb == 0.0) throw NumericError("cosine distance undefined for a zero-norm vector");
  return 1.0 - a.dot(b) / (na * nb);
}

double hinge_loss(const Vec& anchor, const Vec& positive, const Vec& negative, double margin) {
  return std::max(0.0, margin + cosine_distance(anchor, positive) - cosine_distance(anchor, negative));
}

double hinge_loss_and_gradient(const Mat& W, const TripleFrames& t, double margin, Mat* grad) {
  const Vec za = W * t.anchor;
  const Vec zp = W * t.positive;
  const Vec zn = W * t.negative;
  const double na = za.norm(), np = zp.norm(), nn = zn.norm();
  if (na == 0.0 || np == 0.0 || nn == 0.0) throw NumericError("zero-norm projected frame in hinge loss");
  const double cap = za.dot(zp) / (na * np);
  const double can = za.dot(zn) / (na * nn);
  const double loss = margin + (1.0 - cap) - (1.0 - can);
  if (loss <= 0.0) return 0.0;
  if (grad) {
    const Vec ga = -cosine_grad(za, zp, na, np, cap) + cosine_grad(za, zn, na, nn, can);
    const Vec gp = -cosine_grad(zp, za, np, na, cap);
    const Vec gn = cosine_grad(zn, za, nn, na, can);
    grad->noalias() += ga * t.anchor.transpose();
    grad->noalias() += gp * t.positive.transpose();
    grad->noalias() += gn * t.negative.transpose();
  }
  return loss;
}

// ---------------------------------------------------------------------------

void FramePool::add_token(const std::string& word, const FrameMatrix& frames) {
  add_token(word, Eigen::Ref<const FrameMatrix>(frames));
}

void FramePool::add_token(const std::string& word, const Eigen::Ref<const FrameMatrix>& frames) {
  if (frames.rows() == 0) throw DataError("token '" + word + "' has no frames");
  if (dim_ == 0) dim_ = static_cast<std::size_t>(frames.cols());
  if (static_cast<std::size_t>(frames.cols()) != dim_) throw DataError("frame dim mismatch in pool");
  auto [it, inserted] = type_ids_.try_emplace(word, static_cast<int>(type_names_.size()));
  if (inserted) {
    type_names_.push_back(word);
    tokens_of_type_.emplace_back();
  }
  const int type = it->second;
  const std::size_t begin = frame_count();
  for (Eigen::Index r = 0; r < frames.rows(); ++r) {
    for (Eigen::Index c = 0; c < frames.cols(); ++c) data_.push_back(frames(r, c));
  }
  const std::size_t token_id = tokens_.size();
  const std::size_t end = begin + static_cast<std::size_t>(frames.rows());
  tokens_.push_back({type, begin, end});
  tokens_of_type_[static_cast<std::size_t>(type)].push_back(token_id);
  for (std::size_t f = begin; f < end; ++f) {
    frame_type_.push_back(type);
    frame_token_.push_back(token_id);
  }
}

std::vector<std::size_t> FramePool::anchor_frames() const {
  std::vector<std::size_t> out;
  for (std::size_t f = 0; f < frame_count(); ++f) {
    if (tokens_of_type_[frame_type_[f]].size() >= 2) out.push_back(f);
  }
  return out;
}

std::vector<FrameTriple> sample_triples_for_anchors(const FramePool& pool, std::span<const std::size_t> anchors,
                                                    int per_anchor, Rng& rng) {
  std::vector<FrameTriple> out;
  out.reserve(anchors.size() * static_cast<std::size_t>(per_anchor));
  const std::size_t n = pool.frame_count();
  for (std::size_t a : anchors) {
    const int type = pool.type_of_frame(a);
    const auto& same = pool.tokens_of_type()[type];
    if (same.size() < 2) throw DataError("anchor frame belongs to a single-token type");
    if (pool.tokens_of_type().size() < 2) throw DataError("negatives need a second word type");
    const std::size_t own = pool.token_of_frame(a);
    for (int k = 0; k < per_anchor; ++k) {
      // other token of the same type, uniformly
      std::size_t pick = uniform_index(rng, same.size() - 1);
      std::size_t tok = same[pick];
      if (tok == own) tok = same.back();
      const auto& t = pool.tokens()[tok];
      const std::size_t pos = t.begin + uniform_index(rng, t.end - t.begin);
      std::size_t neg;
      do {
        neg = uniform_index(rng, n);
      } while (pool.type_of_frame(neg) == type);
      out.push_back({a, pos, neg});
    }
  }
  return out;
}

std::vector<FrameTriple> sample_contrastive_batch(const FramePool& pool, std::size_t count, Rng& rng) {
  const auto eligible = pool.anchor_frames();
  if (eligible.empty()) throw DataError("no word type has two or more tokens");
  std::vector<std::size_t> anchors(count);
  for (auto& a : anchors) a = eligible[uniform_index(rng, eligible.size())];
  return sample_triples_for_anchors(pool, anchors, 1, rng);
}

// ---------------------------------------------------------------------------

namespace {

Mat unit_rows(const Mat& vectors) {
  Mat unit = vectors;
  for (Eigen::Index i = 0; i < unit.rows(); ++i) {
    const double norm = unit.row(i).norm();
    if (norm == 0.0) throw NumericError("zero-norm frame vector in mAP");
    unit.row(i) /= norm;
  }
  return unit;
}

MapResult map_for_queries(const Mat& unit, std::span<const int> types, std::span<const std::size_t> tokens,
                          std::span<const std::size_t> queries) {
  const auto n = static_cast<std::size_t>(unit.rows());
  MapResult result;
  double total = 0.0;
  std::vector<std::size_t> order;
  for (std::size_t q : queries) {
    order.clear();
    std::size_t relevant = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == q || tokens[j] == tokens[q]) continue;
      order.push_back(j);
      if (types[j] == types[q]) ++relevant;
    }
    if (relevant == 0) {
      ++result.skipped;
      continue;
    }
    const Vec sims = unit * unit.row(static_cast<Eigen::Index>(q)).transpose();
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return sims[static_cast<Eigen::Index>(a)] > sims[static_cast<Eigen::Index>(b)];
    });
    double ap = 0.0;
    std::size_t hits = 0;
    for (std::size_t k = 0; k < order.size() && hits < relevant; ++k) {
      if (types[order[k]] == types[q]) {
        ++hits;
        ap += static_cast<double>(hits) / static_cast<double>(k + 1);
      }
    }
    total += ap / static_cast<double>(relevant);
    ++result.queries;
  }
  result.map = result.queries ? total / static_cast<double>(result.queries) : 0.0;
  return result;
}

void require_two_labels(std::span<const int> types) {
  std::vector<int> distinct(types.begin(), types.end());
  std::sort(distinct.begin(), distinct.end());
  if (std::unique(distinct.begin(), distinct.end()) - distinct.begin() < 2) {
    throw DataError("mAP needs at least two labels");
  }
}

}  // namespace

MapResult mean_average_precision(const Mat& vectors, std::span<const int> types, std::span<const std::size_t> tokens) {
  const auto n = static_cast<std::size_t>(vectors.rows());
  if (types.size() != n || tokens.size() != n) throw DataError("mAP label count mismatch");
  require_two_labels(types);
  std::vector<std::size_t> queries(n);
  std::iota(queries.begin(), queries.end(), std::size_t{0});
  return map_for_queries(unit_rows(vectors), types, tokens, queries);
}

MapResult probe_map(const Mat& weights, const FramePool& pool, std::size_t max_queries) {
  const Mat projected = pool.frames().cast<double>() * weights.transpose();
  std::vector<int> types(pool.frame_count());
  std::vector<std::size_t> tokens(pool.frame_count());
  for (std::size_t f = 0; f < pool.frame_count(); ++f) {
    types[f] = pool.type_of_frame(f);
    tokens[f] = pool.token_of_frame(f);
  }
  if (max_queries == 0 || max_queries >= pool.frame_count()) return mean_average_precision(projected, types, tokens);
  require_two_labels(types);
  // evenly spaced query subset, full candidate set
  std::vector<std::size_t> queries(max_queries);
  const double stride = static_cast<double>(pool.frame_count()) / static_cast<double>(max_queries);
  for (std::size_t k = 0; k < max_queries; ++k) queries[k] = static_cast<std::size_t>(static_cast<double>(k) * stride);
  return map_for_queries(unit_rows(projected), types, tokens, queries);
}

MapResult probe_map(const ProbeParams& params, const FramePool& pool, std::size_t max_queries) {
  return probe_map(Mat(params.weights.cast<double>()), pool, max_queries);
}

Mat init_weights(int out_dim, int in_dim, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(in_dim + out_dim));
  Mat w(out_dim, in_dim);
  for (Eigen::Index i = 0; i < w.rows(); ++i) {
    for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = (2.0 * uniform01(rng) - 1.0) * bound;
  }
  return w;
}

AdamW::AdamW(Eigen::Index rows, Eigen::Index cols, const TrainConfig& c)
    : m_(Mat::Zero(rows, cols)),
      v_(Mat::Zero(rows, cols)),
      lr_(c.learning_rate),
      wd_(c.weight_decay),
      b1_(c.beta1),
      b2_(c.beta2),
      eps_(c.epsilon) {}

void AdamW::step(Mat& params, const Mat& grad) {
  params *= (1.0 - lr_ * wd_);
  ++t_;
  m_ = b1_ * m_ + (1.0 - b1_) * grad;
  v_ = b2_ * v_ + (1.0 - b2_) * grad.cwiseProduct(grad);
  const double c1 = 1.0 - std::pow(b1_, t_);
  const double c2 = 1.0 - std::pow(b2_, t_);
  params.array() -= lr_ * (m_.array() / c1) / ((v_.array() / c2).sqrt() + eps_);
}

double mean_triple_loss(const Mat& W, const FramePool& pool, std::span<const FrameTriple> triples, double margin,
                        Mat* grad) {
  if (triples.empty()) return 0.0;
  const auto b = static_cast<Eigen::Index>(triples.size());
  const auto in = static_cast<Eigen::Index>(pool.dim());
  // Columns: anchors, positives, negatives.
  Mat x(in, 3 * b);
  const auto frames = pool.frames();
  for (Eigen::Index i = 0; i < b; ++i) {
    const auto& t = triples[static_cast<std::size_t>(i)];
    x.col(i) = frames.row(static_cast<Eigen::Index>(t.anchor)).transpose().cast<double>();
    x.col(b + i) = frames.row(static_cast<Eigen::Index>(t.positive)).transpose().cast<double>();
    x.col(2 * b + i) = frames.row(static_cast<Eigen::Index>(t.negative)).transpose().cast<double>();
  }
  const Mat z = W * x;
  Mat dz;
  if (grad) dz = Mat::Zero(z.rows(), z.cols());
  double total = 0.0;
  for (Eigen::Index i = 0; i < b; ++i) {
    const Vec za = z.col(i), zp = z.col(b + i), zn = z.col(2 * b + i);
    const double na = za.norm(), np = zp.norm(), nn = zn.norm();
    if (na == 0.0 || np == 0.0 || nn == 0.0) throw NumericError("zero-norm projected frame in hinge loss");
    const double cap = za.dot(zp) / (na * np);
    const double can = za.dot(zn) / (na * nn);
    const double loss = margin - cap + can;
    if (loss <= 0.0) continue;
    total += loss;
    if (grad) {
      dz.col(i) = -cosine_grad(za, zp, na, np, cap) + cosine_grad(za, zn, na, nn, can);
      dz.col(b + i) = -cosine_grad(zp, za, np, na, cap);
      dz.col(2 * b + i) = cosine_grad(zn, za, nn, na, can);
    }
  }
  const double scale = 1.0 / static_cast<double>(b);
  if (grad) grad->noalias() += scale * dz * x.transpose();
  return total * scale;
}

TrainResult train_probe(const FramePool& train, const FramePool& validation, const TrainConfig& config, int layer,
                        const Mat* initial_weights, const std::function<void(const EpochRecord&)>& on_epoch) {
  config.validate();
  if (train.frame_count() == 0 || validation.frame_count() == 0) throw DataError("empty training or validation pool");
  if (train.dim() != validation.dim()) throw DataError("train/validation frame dims differ");
  const int in_dim = static_cast<int>(train.dim());
  if (config.out_dim >= in_dim) throw ConfigError("probe out_dim must be smaller than the frame dim");

  Mat w;
  if (initial_weights) {
    if (initial_weights->rows() != config.out_dim || initial_weights->cols() != in_dim) {
      throw ConfigError("initial weights have the wrong shape");
    }
    w = *initial_weights;
  } else {
    Rng init_rng(derive_seed(config.seed, "probe.init"));
    w = init_weights(config.out_dim, in_dim, init_rng);
  }

  const auto train_anchors = train.anchor_frames();
  if (train_anchors.empty()) throw DataError("training pool has no word type with two tokens");
  const auto val_anchors_all = validation.anchor_frames();
  if (val_anchors_all.empty()) throw DataError("validation pool has no word type with two tokens");

  Rng val_rng(derive_seed(config.seed, "probe.validation"));
  std::vector<FrameTriple> val_triples;
  if (config.validation_triples > 0) {
    std::vector<std::size_t> anchors(static_cast<std::size_t>(config.validation_triples));
    for (auto& a : anchors) a = val_anchors_all[uniform_index(val_rng, val_anchors_all.size())];
    val_triples = sample_triples_for_anchors(validation, anchors, 1, val_rng);
  } else {
    val_triples = sample_triples_for_anchors(validation, val_anchors_all, 1, val_rng);
  }

  auto val_loss = [&](const Mat& weights) {
    const double l = mean_triple_loss(weights, validation, val_triples, config.margin);
    if (!std::isfinite(l)) throw NumericError("validation loss diverged");
    return l;
  };

  TrainResult result;
  result.initial_validation_loss = val_loss(w);
  Mat best = w;
  double best_loss = result.initial_validation_loss;
  int best_epoch = 0;
  int stale = 0;
  AdamW opt(w.rows(), w.cols(), config);
  ProbeMetadata meta;
  meta.seed = config.seed;
  meta.config = config;

  Mat grad(w.rows(), w.cols());
  std::vector<std::size_t> order = train_anchors;
  int epoch = 0;
  for (epoch = 1; epoch <= config.max_epochs; ++epoch) {
    Rng rng(derive_seed(config.seed, "probe.epoch." + std::to_string(epoch)));
    shuffle_in_place(rng, order);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      std::span<const std::size_t> anchors(order.data() + start, stop - start);
      const auto triples = sample_triples_for_anchors(train, anchors, config.triples_per_anchor, rng);
      grad.setZero();
      const double loss = mean_triple_loss(w, train, triples, config.margin, &grad);
      if (!std::isfinite(loss) || !grad.allFinite()) {
        throw NumericError("training loss diverged at epoch " + std::to_string(epoch));
      }
      opt.step(w, grad);
      loss_sum += loss;
      ++batches;
    }
    if (!w.allFinite()) throw NumericError("probe weights diverged at epoch " + std::to_string(epoch));
    EpochRecord rec{epoch, loss_sum / static_cast<double>(std::max<std::size_t>(batches, 1)), val_loss(w), std::nullopt};
    meta.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (rec.validation_loss < best_loss) {
      best_loss = rec.validation_loss;
      best = w;
      best_epoch = epoch;
      stale = 0;
    } else if (++stale >= config.patience) {
      break;
    }
  }
  meta.epochs_run = std::min(epoch, config.max_epochs);
  meta.best_epoch = best_epoch;
  meta.final_validation_loss = best_loss;

  result.params.weights = best.cast<float>();
  result.params.layer = layer;
  result.params.margin = config.margin;
  result.params.metadata = std::move(meta);
  return result;
}

std::vector<TrainConfig> sample_search_space(const SearchSpace& space, const TrainConfig& base, std::size_t budget,
                                             Rng& rng) {
  auto log_uniform = [&](double lo, double hi) {
    return std::exp(std::log(lo) + uniform01(rng) * (std::log(hi) - std::log(lo)));
  };
  std::vector<TrainConfig> out;
  for (std::size_t i = 0; i < budget; ++i) {
    TrainConfig c = base;
    c.learning_rate = log_uniform(space.lr_min, space.lr_max);
    c.weight_decay = log_uniform(space.wd_min, space.wd_max);
    c.margin = space.margin_min + uniform01(rng) * (space.margin_max - space.margin_min);
    if (!space.out_dims.empty()) c.out_dim = space.out_dims[uniform_index(rng, space.out_dims.size())];
    out.push_back(c);
  }
  return out;
}

SearchResult hyperparameter_search(std::span<const TrainConfig> space, const FramePool& train,
                                   const FramePool& validation, const FramePool& selection, int layer, int jobs,
                                   std::size_t max_map_queries) {
  if (space.empty()) throw ConfigError("hyperparameter search space is empty");
  SearchResult result;
  result.candidates.resize(space.size());
  std::vector<std::exception_ptr> errors(space.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < space.size(); i = next++) {
      try {
        auto trained = train_probe(train, validation, space[i], layer);
        auto& c = result.candidates[i];
        c.config = space[i];
        c.validation_loss = trained.params.metadata.final_validation_loss;
        c.selection_map = probe_map(trained.params, selection, max_map_queries).map;
        c.params = std::move(trained.params);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const int threads = std::max(1, std::min<int>(jobs, static_cast<int>(space.size())));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  std::size_t best = 0;
  for (std::size_t i = 1; i < result.candidates.size(); ++i) {
    const auto& a = result.candidates[i];
    const auto& b = result.candidates[best];
    if (a.selection_map > b.selection_map ||
        (a.selection_map == b.selection_map && a.validation_loss < b.validation_loss)) {
      best = i;
    }
  }
  result.best = best;
  return result;
}

}  // namespace s3m

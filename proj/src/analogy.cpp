#include "s3m/analogy.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <thread>

#include "binary_io.hpp"
#include "json.hpp"
#include "parallel.hpp"
#include "s3m/error.hpp"
#include "text_util.hpp"

namespace s3m {

using nlohmann::json;

AnalogyContext::AnalogyContext(const EmbeddingStore& store) : store_(&store) {}

AnalogyContext::AnalogyContext(const EmbeddingStore& final_store, const EmbeddingStore& constancy_store)
    : store_(&final_store), constancy_(&constancy_store) {
  if (final_store.dim() != constancy_store.dim()) throw DataError("final and constancy stores differ in dimension");
  std::map<TokenRef, std::size_t> by_ref;
  for (std::size_t r = 0; r < constancy_store.size(); ++r) by_ref.emplace(constancy_store.rows()[r].ref, r);
  for (std::size_t r = 0; r < final_store.size(); ++r) {
    auto it = by_ref.find(final_store.rows()[r].ref);
    if (it != by_ref.end()) constancy_of_.emplace(r, it->second);
  }
}

std::vector<std::size_t> AnalogyContext::source_rows(std::string_view word) const {
  auto rows = store_->rows_of(word);
  if (!phoneme_mode()) return {rows.begin(), rows.end()};
  std::vector<std::size_t> out;
  for (auto r : rows) {
    if (constancy_of_.contains(r)) out.push_back(r);
  }
  return out;
}

std::size_t AnalogyContext::constancy_row(std::size_t final_row) const {
  auto it = constancy_of_.find(final_row);
  if (it == constancy_of_.end()) throw DataError("token has no constancy embedding");
  return it->second;
}

int effective_samples(const AnalogyConfig& config, std::size_t combinations) {
  if (config.samples < 1) throw ConfigError("analogy sample count must be >= 1");
  if (!config.cap_samples) return config.samples;
  return static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(config.samples), combinations));
}

std::vector<TokenTriple> draw_token_triples(const AnalogyContext& ctx, std::string_view a, std::string_view b,
                                            std::string_view c, const AnalogyConfig& config, Rng& rng) {
  const auto& store = ctx.store();
  const auto c_rows = store.rows_of(c);
  if (c_rows.empty()) throw DataError("no tokens of '" + std::string(c) + "'");
  std::vector<TokenTriple> out;
  if (ctx.phoneme_mode()) {
    const auto b_rows = ctx.source_rows(b);
    if (b_rows.empty()) throw DataError("no constancy tokens of '" + std::string(b) + "'");
    const int s = effective_samples(config, b_rows.size() * c_rows.size());
    for (int i = 0; i < s; ++i) {
      const std::size_t rb = b_rows[uniform_index(rng, b_rows.size())];
      const std::size_t rc = c_rows[uniform_index(rng, c_rows.size())];
      out.push_back({ctx.constancy_row(rb), rb, rc});
    }
    return out;
  }
  const auto a_rows = store.rows_of(a);
  const auto b_rows = store.rows_of(b);
  if (a_rows.empty()) throw DataError("no tokens of '" + std::string(a) + "'");
  if (b_rows.empty()) throw DataError("no tokens of '" + std::string(b) + "'");
  const int s = effective_samples(config, a_rows.size() * b_rows.size() * c_rows.size());
  for (int i = 0; i < s; ++i) {
    const std::size_t ra = a_rows[uniform_index(rng, a_rows.size())];
    const std::size_t rb = b_rows[uniform_index(rng, b_rows.size())];
    const std::size_t rc = c_rows[uniform_index(rng, c_rows.size())];
    out.push_back({ra, rb, rc});
  }
  return out;
}

Mat predict_vectors(const AnalogyContext& ctx, std::span<const TokenTriple> triples) {
  const auto& v = ctx.store().vectors();
  const auto& minus = ctx.phoneme_mode() ? ctx.constancy_store()->vectors() : v;
  Mat out(static_cast<Eigen::Index>(triples.size()), v.cols());
  for (std::size_t i = 0; i < triples.size(); ++i) {
    const auto& t = triples[i];
    out.row(static_cast<Eigen::Index>(i)) = v.row(static_cast<Eigen::Index>(t.b)).cast<double>() -
                                            minus.row(static_cast<Eigen::Index>(t.a)).cast<double>() +
                                            v.row(static_cast<Eigen::Index>(t.c)).cast<double>();
  }
  return out;
}

std::vector<double> averaged_distances(const EmbeddingStore& store, const Mat& predicted, int jobs) {
  if (predicted.rows() == 0) throw DataError("no predicted vectors");
  if (static_cast<std::size_t>(predicted.cols()) != store.dim()) throw DataError("predicted vector dimension mismatch");
  // mean_i cos(x, p_i) = x . u / |x| with u the mean of the unit predictions
  Eigen::VectorXd u = Eigen::VectorXd::Zero(predicted.cols());
  for (Eigen::Index i = 0; i < predicted.rows(); ++i) {
    const double n = predicted.row(i).norm();
    if (n == 0.0) throw NumericError("predicted vector has zero norm");
    u += predicted.row(i).transpose() / n;
  }
  u /= static_cast<double>(predicted.rows());

  const std::size_t n = store.size();
  const auto dim = static_cast<std::size_t>(store.dim());
  const float* data = store.vectors().data();
  const double* uu = u.data();
  const auto& inv = store.inverse_norms();
  std::vector<double> out(n);
  constexpr std::size_t kBlock = 8192;
  const std::size_t blocks = (n + kBlock - 1) / kBlock;
  detail::parallel_for(blocks, jobs, [&](std::size_t blk) {
    const std::size_t end = std::min(n, (blk + 1) * kBlock);
    for (std::size_t r = blk * kBlock; r < end; ++r) {
      const float* row = data + r * dim;
      double dot = 0.0;
      for (std::size_t c = 0; c < dim; ++c) dot += static_cast<double>(row[c]) * uu[c];
      out[r] = 1.0 - dot * inv[r];
    }
  });
  return out;
}

RankResult rank_rows(std::span<const double> distances, std::span<const std::size_t> targets,
                     std::span<const std::size_t> excluded) {
  auto is_excluded = [&](std::size_t r) { return std::binary_search(excluded.begin(), excluded.end(), r); };
  bool found = false;
  RankResult best;
  for (auto t : targets) {
    if (t >= distances.size()) throw DataError("target row out of range");
    if (is_excluded(t)) continue;
    const double d = distances[t];
    if (!found || d < best.distance || (d == best.distance && t < best.best_row)) {
      best.distance = d;
      best.best_row = t;
      found = true;
    }
  }
  if (!found) throw DataError("no candidate target rows");
  std::size_t rank = 0;
  auto ex = excluded.begin();
  for (std::size_t r = 0; r < distances.size(); ++r) {
    while (ex != excluded.end() && *ex < r) ++ex;
    if (ex != excluded.end() && *ex == r) continue;
    const double d = distances[r];
    if (d < best.distance || (d == best.distance && r < best.best_row)) ++rank;
  }
  best.rank = rank;
  return best;
}

RankResult rank_target(const EmbeddingStore& store, const Mat& predicted, std::string_view target_word, int jobs) {
  const auto targets = store.rows_of(target_word);
  if (targets.empty()) throw DataError("target '" + std::string(target_word) + "' is absent from the store");
  const auto dist = averaged_distances(store, predicted, jobs);
  return rank_rows(dist, targets);
}

BaselineDraw random_baseline(const AnalogyContext& ctx, std::string_view c, std::string_view d,
                             const AnalogyConfig& config, Rng& rng) {
  const auto words = ctx.store().words();
  std::vector<std::string> b_candidates;
  if (ctx.phoneme_mode()) {
    for (const auto& w : words) {
      if (!ctx.source_rows(w).empty()) b_candidates.push_back(w);
    }
  } else {
    b_candidates = words;
  }
  if (words.size() < 2 || b_candidates.empty()) throw DataError("random baseline needs at least two word types");
  BaselineDraw draw;
  draw.b = b_candidates[uniform_index(rng, b_candidates.size())];
  // a uniform over the remaining types
  const auto b_pos = std::lower_bound(words.begin(), words.end(), draw.b) - words.begin();
  auto ai = uniform_index(rng, words.size() - 1);
  if (static_cast<std::ptrdiff_t>(ai) >= b_pos) ++ai;
  draw.a = words[ai];
  const auto triples = draw_token_triples(ctx, draw.a, draw.b, c, config, rng);
  draw.result = rank_target(ctx.store(), predict_vectors(ctx, triples), d, 1);
  return draw;
}

std::uint64_t trial_seed(std::uint64_t root, std::string_view experiment, const InflectionPair& source,
                         const InflectionPair& target) {
  return derive_seed(root, std::string(experiment) + "|" + source.key() + "|" + target.key());
}

AnalogyOutcome run_trial(const AnalogyContext& ctx, const InflectionPair& source, const InflectionPair& target,
                         const AnalogyConfig& config, std::string_view experiment) {
  AnalogyOutcome o;
  o.experiment = experiment;
  o.source = source.key();
  o.target = target.key();
  o.inflection_from = source.inflection;
  o.inflection_to = target.inflection;
  o.allomorph_from = source.allomorph;
  o.allomorph_to = target.allomorph;
  o.seed = trial_seed(config.seed, experiment, source, target);
  Rng rng(o.seed);
  const auto triples = draw_token_triples(ctx, source.base.word, source.inflected.word, target.base.word, config, rng);
  o.samples = static_cast<int>(triples.size());
  const auto result = rank_target(ctx.store(), predict_vectors(ctx, triples), target.inflected.word, 1);
  o.rank = result.rank;
  o.distance = result.distance;
  if (config.with_baseline) {
    Rng brng(derive_seed(o.seed, "baseline"));
    o.baseline_rank = random_baseline(ctx, target.base.word, target.inflected.word, config, brng).result.rank;
  }
  return o;
}

std::optional<std::string> morphology_category(const InflectionPair& p) {
  if (p.inflection == Inflection::FF) return std::nullopt;
  return std::string(to_string(p.inflection));
}

std::optional<std::string> allomorph_category(const InflectionPair& p) {
  if (p.inflection == Inflection::FF || p.allomorph == Allomorph::none) return std::nullopt;
  return std::string(to_string(p.inflection)) + "-" + std::string(to_string(p.allomorph));
}

const TransferCell& TransferMatrix::at(std::string_view from, std::string_view to) const {
  for (const auto& c : cells) {
    if (c.from == from && c.to == to) return c;
  }
  throw DataError("no transfer cell " + std::string(from) + "->" + std::string(to));
}

namespace {

bool pair_available(const AnalogyContext& ctx, const InflectionPair& p) {
  const auto& s = ctx.store();
  return s.contains(p.base.word) && s.contains(p.inflected.word) && !ctx.source_rows(p.inflected.word).empty();
}

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

void summarise_cell(TransferCell& cell, std::span<const AnalogyOutcome* const> outcomes) {
  cell.trials = outcomes.size();
  if (outcomes.empty()) return;
  std::vector<double> ranks;
  std::map<std::string, std::pair<double, std::size_t>> by_target;
  double baseline = 0.0;
  bool have_baseline = true;
  for (const auto* o : outcomes) {
    const double r = static_cast<double>(o->rank);
    ranks.push_back(r);
    auto& acc = by_target[o->target];
    acc.first += r;
    acc.second += 1;
    if (o->baseline_rank) {
      baseline += static_cast<double>(*o->baseline_rank);
    } else {
      have_baseline = false;
    }
  }
  cell.mean = std::accumulate(ranks.begin(), ranks.end(), 0.0) / static_cast<double>(ranks.size());
  cell.median = median_of(ranks);
  if (have_baseline) cell.baseline_mean = baseline / static_cast<double>(outcomes.size());
  cell.targets = by_target.size();
  if (by_target.size() >= 2) {
    std::vector<double> means;
    for (const auto& [_, acc] : by_target) means.push_back(acc.first / static_cast<double>(acc.second));
    const double m = std::accumulate(means.begin(), means.end(), 0.0) / static_cast<double>(means.size());
    double ss = 0.0;
    for (double x : means) ss += (x - m) * (x - m);
    const double sd = std::sqrt(ss / static_cast<double>(means.size() - 1));
    cell.se = sd / std::sqrt(static_cast<double>(means.size()));
  }
}

}  // namespace

TransferResult transfer_matrix(const AnalogyContext& ctx, std::span<const InflectionPair> pairs,
                               const CategoryFn& category, const std::vector<std::string>& labels,
                               const AnalogyConfig& config, std::string_view experiment) {
  TransferResult out;
  out.matrix.labels = labels;
  auto label_index = [&](const std::string& l) -> std::optional<std::size_t> {
    auto it = std::find(labels.begin(), labels.end(), l);
    if (it == labels.end()) return std::nullopt;
    return static_cast<std::size_t>(it - labels.begin());
  };

  std::vector<std::pair<const InflectionPair*, std::size_t>> usable;
  for (const auto& p : pairs) {
    auto cat = category(p);
    if (!cat) continue;
    auto li = label_index(*cat);
    if (!li) {
      out.skipped.push_back(p.key() + ": category " + *cat + " not in the matrix");
      continue;
    }
    if (!pair_available(ctx, p)) {
      out.skipped.push_back(p.key() + ": missing tokens in store");
      continue;
    }
    usable.emplace_back(&p, *li);
  }

  const std::size_t L = labels.size();
  std::vector<std::vector<std::pair<std::size_t, std::size_t>>> cell_trials(L * L);
  for (std::size_t i = 0; i < usable.size(); ++i) {
    for (std::size_t j = 0; j < usable.size(); ++j) {
      if (usable[i].first->key() == usable[j].first->key()) continue;
      cell_trials[usable[i].second * L + usable[j].second].emplace_back(i, j);
    }
  }
  std::vector<std::pair<std::size_t, std::size_t>> trials;
  std::vector<std::size_t> trial_cell;
  for (std::size_t k = 0; k < cell_trials.size(); ++k) {
    auto& list = cell_trials[k];
    if (config.max_trials_per_cell > 0 && list.size() > config.max_trials_per_cell) {
      Rng rng(derive_seed(config.seed, std::string(experiment) + "|cell|" + labels[k / L] + "->" + labels[k % L]));
      shuffle_in_place(rng, list);
      list.resize(config.max_trials_per_cell);
      std::sort(list.begin(), list.end());
    }
    for (const auto& t : list) {
      trials.push_back(t);
      trial_cell.push_back(k);
    }
  }

  out.outcomes.resize(trials.size());
  AnalogyConfig inner = config;
  inner.jobs = 1;
  detail::parallel_for(trials.size(), config.jobs, [&](std::size_t t) {
    const auto& src = *usable[trials[t].first].first;
    const auto& tgt = *usable[trials[t].second].first;
    auto o = run_trial(ctx, src, tgt, inner, experiment);
    o.cell_from = labels[trial_cell[t] / L];
    o.cell_to = labels[trial_cell[t] % L];
    out.outcomes[t] = std::move(o);
  });

  for (std::size_t k = 0; k < L * L; ++k) {
    TransferCell cell;
    cell.from = labels[k / L];
    cell.to = labels[k % L];
    std::vector<const AnalogyOutcome*> members;
    for (std::size_t t = 0; t < trials.size(); ++t) {
      if (trial_cell[t] == k) members.push_back(&out.outcomes[t]);
    }
    summarise_cell(cell, members);
    out.matrix.cells.push_back(std::move(cell));
  }
  return out;
}

std::vector<FalseFriendPanel> false_friend_eval(const AnalogyContext& ctx, std::span<const InflectionPair> real,
                                                std::span<const InflectionPair> false_friends,
                                                const AnalogyConfig& config) {
  std::vector<FalseFriendPanel> panels;
  for (Inflection inf : {Inflection::NNS, Inflection::VBZ}) {
    const std::string real_label(to_string(inf));
    const std::string ff_label = real_label + "-FF";
    std::vector<InflectionPair> pairs;
    for (const auto& p : real) {
      if (p.inflection == inf) pairs.push_back(p);
    }
    for (const auto& p : false_friends) pairs.push_back(p);
    CategoryFn category = [&](const InflectionPair& p) -> std::optional<std::string> {
      return p.inflection == Inflection::FF ? ff_label : real_label;
    };
    panels.push_back({inf, transfer_matrix(ctx, pairs, category, {real_label, ff_label}, config,
                                           "false-friends-" + real_label)});
  }
  return panels;
}

bool prefers_consistent(const EmbeddingStore& store, const Vec& predicted,
                        std::span<const std::size_t> consistent_rows, std::span<const std::size_t> inconsistent_rows) {
  const double pn = predicted.norm();
  if (pn == 0.0) throw NumericError("predicted vector has zero norm");
  const auto& v = store.vectors();
  const auto& inv = store.inverse_norms();
  auto nearest = [&](std::span<const std::size_t> rows) {
    std::pair<double, std::size_t> best{0.0, 0};
    bool first = true;
    for (auto r : rows) {
      const double d = 1.0 - v.row(static_cast<Eigen::Index>(r)).cast<double>().dot(predicted) * inv[r] / pn;
      if (first || d < best.first || (d == best.first && r < best.second)) best = {d, r};
      first = false;
    }
    return best;
  };
  if (consistent_rows.empty() || inconsistent_rows.empty()) throw DataError("forced choice needs both candidates");
  return nearest(consistent_rows) < nearest(inconsistent_rows);
}

std::vector<std::size_t> group_rows(const EmbeddingStore& store, std::span<const std::string> words) {
  std::vector<std::size_t> rows;
  for (const auto& w : words) {
    auto r = store.rows_of(w);
    rows.insert(rows.end(), r.begin(), r.end());
  }
  std::sort(rows.begin(), rows.end());
  rows.erase(std::unique(rows.begin(), rows.end()), rows.end());
  return rows;
}

std::vector<std::pair<double, double>> preference_cdf(std::span<const double> preferences) {
  std::vector<double> v(preferences.begin(), preferences.end());
  std::sort(v.begin(), v.end());
  std::vector<std::pair<double, double>> out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i + 1 < v.size() && v[i + 1] == v[i]) continue;
    out.emplace_back(v[i], static_cast<double>(i + 1) / static_cast<double>(v.size()));
  }
  return out;
}

ForcedChoiceResult forced_choice(const AnalogyContext& ctx, std::span<const InflectionPair> sources,
                                 std::span<const ForcedChoiceTriple> triples, const ForcedChoiceConfig& config) {
  const auto& store = ctx.store();
  struct Source {
    std::vector<std::size_t> a, b;
  };
  std::vector<Source> usable;
  for (const auto& p : sources) {
    if (!pair_available(ctx, p)) continue;
    auto a = store.rows_of(p.base.word);
    usable.push_back({{a.begin(), a.end()}, ctx.source_rows(p.inflected.word)});
  }
  ForcedChoiceResult out;
  if (usable.empty()) throw DataError("forced choice has no usable source pairs");
  if (!config.exhaustive && config.draws < 1) throw ConfigError("forced choice needs at least one draw");

  std::vector<double> preferences;
  for (const auto& t : triples) {
    const auto c = group_rows(store, t.base.words);
    const auto cons = group_rows(store, t.consistent.words);
    const auto inc = group_rows(store, t.inconsistent.words);
    if (c.empty() || cons.empty() || inc.empty()) {
      out.skipped.push_back(t.key() + ": missing candidate tokens");
      continue;
    }
    auto choose = [&](std::size_t ra, std::size_t rb, std::size_t rc) {
      const TokenTriple tt{ctx.phoneme_mode() ? ctx.constancy_row(rb) : ra, rb, rc};
      const Mat p = predict_vectors(ctx, std::span<const TokenTriple>(&tt, 1));
      return prefers_consistent(store, p.row(0).transpose(), cons, inc);
    };
    TripleOutcome o;
    o.key = t.key();
    if (config.exhaustive) {
      for (const auto& s : usable) {
        const std::vector<std::size_t> a_rows = ctx.phoneme_mode() ? std::vector<std::size_t>{0} : s.a;
        std::size_t hits = 0, combos = 0;
        for (auto ra : a_rows) {
          for (auto rb : s.b) {
            for (auto rc : c) {
              hits += choose(ra, rb, rc) ? 1 : 0;
              ++combos;
            }
          }
        }
        o.draws += combos;
        o.consistent_weight += static_cast<double>(hits) / static_cast<double>(combos);
      }
      o.preference = o.consistent_weight / static_cast<double>(usable.size());
    } else {
      Rng rng(derive_seed(config.seed, "forced-choice|" + t.key()));
      for (int i = 0; i < config.draws; ++i) {
        const auto& s = usable[uniform_index(rng, usable.size())];
        const std::size_t ra = ctx.phoneme_mode() ? 0 : s.a[uniform_index(rng, s.a.size())];
        const std::size_t rb = s.b[uniform_index(rng, s.b.size())];
        const std::size_t rc = c[uniform_index(rng, c.size())];
        if (choose(ra, rb, rc)) o.consistent_weight += 1.0;
      }
      o.draws = static_cast<std::size_t>(config.draws);
      o.preference = o.consistent_weight / static_cast<double>(config.draws);
    }
    preferences.push_back(o.preference);
    out.triples.push_back(std::move(o));
  }
  out.cdf = preference_cdf(preferences);
  return out;
}

SameWordResult same_word_eval(const EmbeddingStore& store, std::span<const InflectionPair> pairs,
                              const AnalogyConfig& config) {
  SameWordResult out;
  const AnalogyContext ctx(store);
  std::map<std::string, std::pair<double, std::size_t>> sums;
  for (const auto& p : pairs) {
    auto xs = store.rows_of(p.base.word);
    auto ys = store.rows_of(p.inflected.word);
    if (xs.size() < 2 || ys.size() < 2) {
      out.skipped.push_back(p.key() + ": fewer than two tokens to split");
      continue;
    }
    Rng rng(derive_seed(config.seed, "same-word|" + p.key()));
    std::vector<std::size_t> x(xs.begin(), xs.end()), y(ys.begin(), ys.end());
    shuffle_in_place(rng, x);
    shuffle_in_place(rng, y);
    const std::vector<std::size_t> x_src(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(x.size() / 2));
    const std::vector<std::size_t> x_tgt(x.begin() + static_cast<std::ptrdiff_t>(x.size() / 2), x.end());
    std::vector<std::size_t> y_src(y.begin(), y.begin() + static_cast<std::ptrdiff_t>(y.size() / 2));
    std::vector<std::size_t> y_tgt(y.begin() + static_cast<std::ptrdiff_t>(y.size() / 2), y.end());
    std::sort(y_src.begin(), y_src.end());
    std::sort(y_tgt.begin(), y_tgt.end());

    const int s = effective_samples(config, x_src.size() * y_src.size() * x_tgt.size());
    std::vector<TokenTriple> triples;
    for (int i = 0; i < s; ++i) {
      const std::size_t ra = x_src[uniform_index(rng, x_src.size())];
      const std::size_t rb = y_src[uniform_index(rng, y_src.size())];
      const std::size_t rc = x_tgt[uniform_index(rng, x_tgt.size())];
      triples.push_back({ra, rb, rc});
    }
    const auto dist = averaged_distances(store, predict_vectors(ctx, triples), config.jobs);
    const auto r = rank_rows(dist, y_tgt, y_src);
    out.outcomes.push_back({p.key(), p.inflection, r.rank});
    auto& acc = sums[std::string(to_string(p.inflection))];
    acc.first += static_cast<double>(r.rank);
    acc.second += 1;
  }
  for (const auto& [k, acc] : sums) out.mean_rank[k] = acc.first / static_cast<double>(acc.second);
  return out;
}

std::vector<SweepPoint> layer_sweep(std::span<const int> layers, std::span<const SpaceKind> spaces,
                                    const StoreProvider& provider, std::span<const InflectionPair> pairs,
                                    const AnalogyConfig& config, std::vector<std::string>* log) {
  std::vector<SweepPoint> out;
  const std::vector<std::string> labels{"NNS", "VBZ"};
  for (int layer : layers) {
    for (SpaceKind kind : spaces) {
      const std::string space = SpaceTag{kind, layer}.str();
      auto store = provider(layer, kind);
      if (!store) {
        if (log) log->push_back("layer " + std::to_string(layer) + " (" + space + ") missing");
        out.push_back({layer, space, "all", std::nullopt, 0});
        continue;
      }
      const AnalogyContext ctx(*store);
      AnalogyConfig cfg = config;
      cfg.seed = derive_seed(config.seed, "layer-sweep");
      const auto result = transfer_matrix(ctx, pairs, morphology_category, labels, cfg, "layer-sweep");
      double sum = 0.0;
      for (const auto& o : result.outcomes) sum += static_cast<double>(o.rank);
      SweepPoint all{layer, space, "all", std::nullopt, result.outcomes.size()};
      if (!result.outcomes.empty()) all.mean_rank = sum / static_cast<double>(result.outcomes.size());
      out.push_back(all);
      for (const auto& cell : result.matrix.cells) {
        out.push_back({layer, space, cell.from + "->" + cell.to, cell.mean, cell.trials});
      }
    }
  }
  return out;
}

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  detail::write_file_atomic(path, text);
}

}  // namespace

void write_outcomes_jsonl(const std::filesystem::path& path, std::span<const AnalogyOutcome> outcomes) {
  std::string text;
  for (const auto& o : outcomes) {
    json j = {{"experiment", o.experiment},
              {"source", o.source},
              {"target", o.target},
              {"inflection_from", to_string(o.inflection_from)},
              {"inflection_to", to_string(o.inflection_to)},
              {"allomorph_from", to_string(o.allomorph_from)},
              {"allomorph_to", to_string(o.allomorph_to)},
              {"cell_from", o.cell_from},
              {"cell_to", o.cell_to},
              {"rank", o.rank},
              {"distance", o.distance},
              {"samples", o.samples},
              {"seed", o.seed}};
    if (o.baseline_rank) j["baseline_rank"] = *o.baseline_rank;
    text += j.dump();
    text += '\n';
  }
  write_text(path, text);
}

void write_transfer_csv(const std::filesystem::path& path, const TransferMatrix& matrix) {
  using detail::format_number;
  std::string text = "from,to,trials,targets,mean_rank,median_rank,se,baseline_mean_rank\n";
  for (const auto& c : matrix.cells) {
    text += detail::csv_field(c.from) + "," + detail::csv_field(c.to) + "," + std::to_string(c.trials) + "," +
            std::to_string(c.targets) + "," + format_number(c.mean) + "," + format_number(c.median) + "," +
            format_number(c.se) + "," + format_number(c.baseline_mean) + "\n";
  }
  write_text(path, text);
}

void write_forced_choice_csv(const std::filesystem::path& triples_path, const std::filesystem::path& cdf_path,
                             const ForcedChoiceResult& result) {
  using detail::format_number;
  std::string t = "triple,draws,preference\n";
  for (const auto& o : result.triples) {
    t += detail::csv_field(o.key) + "," + std::to_string(o.draws) + "," + format_number(o.preference) + "\n";
  }
  write_text(triples_path, t);
  std::string c = "preference,cumulative_fraction\n";
  for (const auto& [p, f] : result.cdf) c += format_number(p) + "," + format_number(f) + "\n";
  write_text(cdf_path, c);
}

}  // namespace s3m

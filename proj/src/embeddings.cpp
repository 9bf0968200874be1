#include "s3m/embeddings.hpp"

#include <Eigen/Eigenvalues>
#include <atomic>
#include <cmath>
#include <cstring>
#include <exception>
#include <limits>
#include <mutex>
#include <thread>

#include "binary_io.hpp"
#include "json.hpp"
#include "s3m/error.hpp"

namespace s3m {

using nlohmann::json;

namespace {

constexpr std::string_view kStoreMagic = "S3ME";

std::string token_label(const WordToken& t) {
  return t.utterance_id + "#" + std::to_string(t.token_index) + " (" + t.word + ")";
}

Vec maybe_project(const Vec& pooled, const ProbeParams* probe) {
  if (probe == nullptr) return pooled;
  if (probe->in_dim() != pooled.size()) {
    throw DataError("projection dimension mismatch: probe expects " + std::to_string(probe->in_dim()) + ", got " +
                    std::to_string(pooled.size()));
  }
  return probe->weights.cast<double>() * pooled;
}

}  // namespace

std::string SpaceTag::str() const {
  return std::string(kind == SpaceKind::raw ? "raw" : "probe") + "-layer-" + std::to_string(layer);
}

SpaceTag SpaceTag::parse(std::string_view s) {
  SpaceTag tag;
  std::string_view rest;
  if (s.starts_with("raw-layer-")) {
    tag.kind = SpaceKind::raw;
    rest = s.substr(10);
  } else if (s.starts_with("probe-layer-")) {
    tag.kind = SpaceKind::probe;
    rest = s.substr(12);
  } else {
    throw FormatError("bad space tag '" + std::string(s) + "'");
  }
  if (rest.empty() || rest.find_first_not_of("0123456789") != std::string_view::npos) {
    throw FormatError("bad space tag '" + std::string(s) + "'");
  }
  tag.layer = std::stoi(std::string(rest));
  return tag;
}

std::string_view to_string(PoolingKind p) {
  switch (p) {
    case PoolingKind::word: return "word";
    case PoolingKind::phoneme_final: return "phoneme:final";
    case PoolingKind::phoneme_constancy: return "phoneme:constancy";
  }
  return "word";
}

PoolingKind parse_pooling(std::string_view s) {
  if (s == "word") return PoolingKind::word;
  if (s == "phoneme:final" || s == "final") return PoolingKind::phoneme_final;
  if (s == "phoneme:constancy" || s == "constancy") return PoolingKind::phoneme_constancy;
  throw FormatError("bad pooling tag '" + std::string(s) + "'");
}

Vec pool_frames(const Eigen::Ref<const FrameMatrix>& frames, FrameRange range) {
  if (range.empty()) throw DataError("unusable token: empty frame range");
  if (range.end > static_cast<std::size_t>(frames.rows())) throw DataError("frame range past end of activations");
  Vec sum = Vec::Zero(frames.cols());
  for (std::size_t t = range.begin; t < range.end; ++t) {
    sum += frames.row(static_cast<Eigen::Index>(t)).transpose().cast<double>();
  }
  return sum / static_cast<double>(range.size());
}

TokenEmbedding pool_word(const ActivationMatrix& activations, const WordToken& token, const ProbeParams* probe) {
  const auto tf = assign_frames(token, activations.hop);
  const auto range = clip(tf.word, activations.frame_count());
  if (range.empty()) throw DataError("unusable token " + token_label(token) + ": no frames in span");
  TokenEmbedding e;
  e.ref = {token.utterance_id, token.token_index};
  e.word = token.word;
  e.space = SpaceTag{probe ? SpaceKind::probe : SpaceKind::raw, activations.layer}.str();
  e.pooling = "word";
  e.vector = maybe_project(pool_frames(activations.frames, range), probe);
  return e;
}

std::size_t phoneme_position(const WordToken& token, PoolingKind which, const PhonForm* base) {
  if (token.phonemes.empty()) throw DataError("token " + token_label(token) + " has no phoneme alignment");
  switch (which) {
    case PoolingKind::phoneme_final: return token.phonemes.size() - 1;
    case PoolingKind::phoneme_constancy: {
      if (base == nullptr) throw DataError("constancy pooling needs the base transcription");
      if (base->phones.empty() || base->phones.size() >= token.phonemes.size()) {
        throw DataError("pairing error: base of " + token_label(token) + " is not a proper prefix");
      }
      for (std::size_t i = 0; i < base->phones.size(); ++i) {
        if (FeatureInventory::normalize(token.phonemes[i].label) != base->phones[i]) {
          throw DataError("pairing error: base /" + base->str() + "/ is not a prefix of " + token_label(token));
        }
      }
      return base->phones.size() - 1;
    }
    case PoolingKind::word: break;
  }
  throw DataError("phoneme_position called with word pooling");
}

TokenEmbedding pool_phoneme(const ActivationMatrix& activations, const WordToken& token, PoolingKind which,
                            const PhonForm* base, const ProbeParams* probe) {
  const auto pos = phoneme_position(token, which, base);
  const auto tf = assign_frames(token, activations.hop);
  const auto range = clip(tf.phonemes[pos], activations.frame_count());
  if (range.empty()) throw DataError("unusable token " + token_label(token) + ": no frames in phoneme span");
  TokenEmbedding e;
  e.ref = {token.utterance_id, token.token_index};
  e.word = token.word;
  e.space = SpaceTag{probe ? SpaceKind::probe : SpaceKind::raw, activations.layer}.str();
  e.pooling = "phoneme:" + FeatureInventory::normalize(token.phonemes[pos].label) + "@" + std::to_string(pos);
  e.vector = maybe_project(pool_frames(activations.frames, range), probe);
  return e;
}

EmbeddingStore::EmbeddingStore(std::string space, std::string pooling, EmbeddingMatrix vectors,
                               std::vector<StoreRow> rows)
    : space_(std::move(space)), pooling_(std::move(pooling)), vectors_(std::move(vectors)), rows_(std::move(rows)) {
  if (static_cast<std::size_t>(vectors_.rows()) != rows_.size()) {
    throw DataError("store has " + std::to_string(vectors_.rows()) + " vectors but " + std::to_string(rows_.size()) +
                    " row records");
  }
  inverse_norms_.resize(rows_.size());
  for (std::size_t r = 0; r < rows_.size(); ++r) {
    double ss = 0.0;
    for (Eigen::Index c = 0; c < vectors_.cols(); ++c) {
      const double v = vectors_(static_cast<Eigen::Index>(r), c);
      if (!std::isfinite(v)) throw DataError("store row " + std::to_string(r) + " has a non-finite entry");
      ss += v * v;
    }
    if (ss == 0.0) throw DataError("store row " + std::to_string(r) + " is a zero vector");
    inverse_norms_[r] = 1.0 / std::sqrt(ss);
    by_word_[rows_[r].word].push_back(r);
  }
}

std::span<const std::size_t> EmbeddingStore::rows_of(std::string_view word) const {
  auto it = by_word_.find(word);
  if (it == by_word_.end()) return {};
  return it->second;
}

std::vector<std::string> EmbeddingStore::words() const {
  std::vector<std::string> out;
  out.reserve(by_word_.size());
  for (const auto& [w, _] : by_word_) out.push_back(w);
  return out;
}

bool operator==(const EmbeddingStore& a, const EmbeddingStore& b) {
  return a.space_ == b.space_ && a.pooling_ == b.pooling_ && a.rows_ == b.rows_ &&
         a.vectors_.rows() == b.vectors_.rows() && a.vectors_.cols() == b.vectors_.cols() &&
         std::memcmp(a.vectors_.data(), b.vectors_.data(), sizeof(float) * a.vectors_.size()) == 0;
}

std::string encode_store(const EmbeddingStore& store) {
  detail::ByteWriter w;
  w.bytes(kStoreMagic);
  w.uint<std::uint16_t>(kStoreFormatVersion);
  w.short_string(store.space());
  w.short_string(store.pooling());
  w.uint<std::uint32_t>(static_cast<std::uint32_t>(store.dim()));
  w.uint<std::uint64_t>(store.size());
  w.floats({store.vectors().data(), static_cast<std::size_t>(store.vectors().size())});
  json rows = json::array();
  for (const auto& r : store.rows()) rows.push_back({r.ref.utterance_id, r.ref.token_index, r.word, r.phone, r.position});
  const std::string trailer = json{{"rows", rows}}.dump();
  w.uint<std::uint64_t>(trailer.size());
  w.bytes(trailer);
  return w.data();
}

EmbeddingStore decode_store(std::string_view bytes, const std::string& context) {
  detail::ByteReader r(bytes, context);
  if (bytes.size() < 4 || r.bytes(4) != kStoreMagic) throw FormatError(context + ": bad magic (expected S3ME)");
  auto version = r.uint<std::uint16_t>();
  if (version != kStoreFormatVersion) throw FormatError(context + ": unsupported version " + std::to_string(version));
  std::string space = r.short_string();
  std::string pooling = r.short_string();
  const auto dim = r.uint<std::uint32_t>();
  const auto count = r.uint<std::uint64_t>();
  if (dim == 0 && count != 0) throw FormatError(context + ": zero dimension");
  if (dim != 0 && count > r.remaining() / (sizeof(float) * dim)) throw CorruptionError(context + ": payload truncated");
  EmbeddingMatrix vectors(static_cast<Eigen::Index>(count), static_cast<Eigen::Index>(dim));
  r.floats({vectors.data(), static_cast<std::size_t>(vectors.size())});
  auto len = r.uint<std::uint64_t>();
  if (len > r.remaining()) throw CorruptionError(context + ": metadata trailer truncated");
  std::vector<StoreRow> rows;
  try {
    auto meta = json::parse(r.bytes(static_cast<std::size_t>(len)));
    for (const auto& e : meta.at("rows")) {
      rows.push_back({{e.at(0).get<std::string>(), e.at(1).get<int>()},
                      e.at(2).get<std::string>(),
                      e.at(3).get<std::string>(),
                      e.at(4).get<int>()});
    }
  } catch (const json::exception& e) {
    throw FormatError(context + ": bad metadata trailer: " + e.what());
  }
  if (r.remaining() != 0) throw FormatError(context + ": trailing bytes");
  return EmbeddingStore(std::move(space), std::move(pooling), std::move(vectors), std::move(rows));
}

void write_store_file(const std::filesystem::path& path, const EmbeddingStore& store) {
  detail::write_file_atomic(path, encode_store(store));
}

EmbeddingStore read_store_file(const std::filesystem::path& path) {
  return decode_store(detail::read_file_bytes(path), path.string());
}

EmbeddingStore build_store(std::span<const WordToken> tokens, const ActivationLoader& load, const StoreSpec& spec,
                           StoreLog* log) {
  if (spec.space.kind == SpaceKind::probe && spec.probe == nullptr) throw ConfigError("probe space needs a probe");
  if (spec.space.kind == SpaceKind::raw && spec.probe != nullptr) throw ConfigError("raw space takes no probe");
  if (spec.pooling == PoolingKind::phoneme_constancy && spec.constancy_bases == nullptr) {
    throw ConfigError("constancy pooling needs base transcriptions");
  }
  const auto groups = group_by_utterance(std::vector<WordToken>(tokens.begin(), tokens.end()));
  std::vector<const std::pair<const std::string, std::vector<WordToken>>*> order;
  for (const auto& g : groups) order.push_back(&g);

  struct Slot {
    std::vector<StoreRow> rows;
    std::vector<Vec> vectors;
    std::vector<std::string> skipped;
    std::size_t considered = 0;
  };
  std::vector<Slot> slots(order.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;

  auto work = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= order.size()) return;
      try {
        const auto& [utt, utt_tokens] = *order[i];
        const ActivationMatrix act = load(utt);
        Slot& slot = slots[i];
        for (const auto& t : utt_tokens) {
          const PhonForm* base = nullptr;
          if (spec.pooling == PoolingKind::phoneme_constancy) {
            auto it = spec.constancy_bases->find(t.word);
            if (it == spec.constancy_bases->end()) continue;
            base = &it->second;
          }
          ++slot.considered;
          try {
            TokenEmbedding e = spec.pooling == PoolingKind::word
                                   ? pool_word(act, t, spec.probe)
                                   : pool_phoneme(act, t, spec.pooling, base, spec.probe);
            if (e.vector.squaredNorm() == 0.0) {
              slot.skipped.push_back(token_label(t) + ": zero vector");
              continue;
            }
            StoreRow row{e.ref, t.word, {}, -1};
            if (spec.pooling != PoolingKind::word) {
              row.position = static_cast<int>(phoneme_position(t, spec.pooling, base));
              row.phone = FeatureInventory::normalize(t.phonemes[static_cast<std::size_t>(row.position)].label);
            }
            slot.rows.push_back(std::move(row));
            slot.vectors.push_back(std::move(e.vector));
          } catch (const DataError& e) {
            slot.skipped.push_back(token_label(t) + ": " + e.what());
          }
        }
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next.store(order.size());
        return;
      }
    }
  };

  const int jobs = std::max(1, std::min<int>(spec.jobs, static_cast<int>(order.size())));
  if (jobs <= 1) {
    work();
  } else {
    std::vector<std::thread> threads;
    for (int j = 0; j < jobs; ++j) threads.emplace_back(work);
    for (auto& th : threads) th.join();
  }
  if (failure) std::rethrow_exception(failure);

  std::size_t total = 0;
  Eigen::Index dim = -1;
  for (const auto& s : slots) {
    total += s.rows.size();
    for (const auto& v : s.vectors) {
      if (dim < 0) dim = v.size();
      if (v.size() != dim) throw DataError("activation dimension differs between utterances");
    }
  }
  EmbeddingMatrix vectors(static_cast<Eigen::Index>(total), std::max<Eigen::Index>(dim, 0));
  std::vector<StoreRow> rows;
  rows.reserve(total);
  if (log) log->considered = 0;
  for (auto& s : slots) {
    for (std::size_t k = 0; k < s.rows.size(); ++k) {
      vectors.row(static_cast<Eigen::Index>(rows.size())) = s.vectors[k].transpose().cast<float>();
      rows.push_back(std::move(s.rows[k]));
    }
    if (log) {
      log->considered += s.considered;
      for (auto& m : s.skipped) log->skipped.push_back(std::move(m));
    }
  }
  std::string pooling(to_string(spec.pooling));
  return EmbeddingStore(spec.space.str(), pooling, std::move(vectors), std::move(rows));
}

namespace {

PcaBasis basis_from_covariance(Eigen::VectorXd mean, const Mat& cov, int k) {
  const auto dim = cov.rows();
  Eigen::SelfAdjointEigenSolver<Mat> solver(cov);
  if (solver.info() != Eigen::Success) throw NumericError("covariance eigendecomposition failed");
  // ascending -> descending
  Eigen::VectorXd values = solver.eigenvalues().reverse();
  Mat vectors = solver.eigenvectors().rowwise().reverse();
  for (Eigen::Index i = 0; i < values.size(); ++i) values(i) = std::max(values(i), 0.0);
  const double top = values.size() ? values(0) : 0.0;
  const double tol = top * static_cast<double>(dim) * std::numeric_limits<double>::epsilon();
  int available = 0;
  while (available < values.size() && values(available) > tol) ++available;

  PcaBasis out;
  out.mean = std::move(mean);
  const int keep = std::min(k, available);
  if (keep < k) {
    out.warnings.push_back("requested " + std::to_string(k) + " components but only " + std::to_string(available) +
                           " non-zero eigenvalues are available");
  }
  out.components = vectors.leftCols(keep);
  // sign convention: the largest-magnitude entry of each component is positive
  for (int c = 0; c < keep; ++c) {
    Eigen::Index arg = 0;
    out.components.col(c).cwiseAbs().maxCoeff(&arg);
    if (out.components(arg, c) < 0) out.components.col(c) *= -1.0;
  }
  out.eigenvalues = values.head(keep);
  const double trace = values.sum();
  out.explained_ratio = trace > 0 ? Eigen::VectorXd(out.eigenvalues / trace) : Eigen::VectorXd::Zero(keep);
  return out;
}

void check_pca_args(Eigen::Index n, int k) {
  if (k < 1) throw ConfigError("PCA needs at least one component");
  if (n <= k) throw DataError("PCA needs more rows than components");
}

}  // namespace

PcaBasis pca_fit(const Mat& rows, int k) {
  check_pca_args(rows.rows(), k);
  Eigen::VectorXd mean = rows.colwise().mean().transpose();
  const Mat centered = rows.rowwise() - mean.transpose();
  const Mat cov = (centered.transpose() * centered) / static_cast<double>(rows.rows() - 1);
  return basis_from_covariance(std::move(mean), cov, k);
}

PcaBasis pca_fit(const EmbeddingStore& store, int k) {
  const auto n = static_cast<Eigen::Index>(store.size());
  check_pca_args(n, k);
  const auto dim = static_cast<Eigen::Index>(store.dim());
  const auto& v = store.vectors();
  Eigen::VectorXd mean = v.cast<double>().colwise().mean().transpose();
  Mat cov = Mat::Zero(dim, dim);
  constexpr Eigen::Index kChunk = 4096;
  for (Eigen::Index start = 0; start < n; start += kChunk) {
    const auto len = std::min(kChunk, n - start);
    const Mat block = v.middleRows(start, len).cast<double>().rowwise() - mean.transpose();
    cov.selfadjointView<Eigen::Lower>().rankUpdate(block.transpose());
  }
  cov = cov.selfadjointView<Eigen::Lower>();
  cov /= static_cast<double>(n - 1);
  return basis_from_covariance(std::move(mean), cov, k);
}

PcaReport pca_project(const EmbeddingStore& store, int k, std::span<const InflectionPair> pairs, int samples_per_pair,
                      Rng& rng) {
  PcaReport report;
  report.basis = pca_fit(store, k);
  const auto keep = report.basis.components.cols();
  report.mean_direction = Eigen::VectorXd::Zero(keep);
  for (const auto& p : pairs) {
    auto a = store.rows_of(p.base.word);
    auto b = store.rows_of(p.inflected.word);
    if (a.empty() || b.empty()) continue;
    for (int s = 0; s < samples_per_pair; ++s) {
      const std::size_t ra = uniform_choice(rng, a);
      const std::size_t rb = uniform_choice(rng, b);
      const Eigen::VectorXd diff = (store.vectors().row(static_cast<Eigen::Index>(rb)).cast<double>() -
                                    store.vectors().row(static_cast<Eigen::Index>(ra)).cast<double>())
                                       .transpose();
      PairDifference d{p.key(), ra, rb, report.basis.components.transpose() * diff};
      report.mean_direction += d.coords;
      report.differences.push_back(std::move(d));
    }
  }
  if (!report.differences.empty()) report.mean_direction /= static_cast<double>(report.differences.size());
  return report;
}

}  // namespace s3m

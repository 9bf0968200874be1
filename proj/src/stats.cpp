#include "s3m/stats.hpp"

#include <Eigen/QR>
#include <algorithm>
#include <boost/math/distributions/students_t.hpp>
#include <cmath>
#include <limits>
#include <map>

#include "binary_io.hpp"
#include "s3m/error.hpp"
#include "text_util.hpp"

namespace s3m {

namespace {

struct Level {
  std::string name;
  double (*value)(const TrialRow&);
};

struct Factor {
  std::string name;
  std::vector<Level> levels;  // non-reference levels
};

bool is_inflection_vbz(Inflection i, const char* which) {
  if (i == Inflection::FF) throw DataError(std::string(which) + ": false-friend rows are not part of the regression");
  return i == Inflection::VBZ;
}

void check_allomorph(Allomorph a, const char* which) {
  if (a == Allomorph::none) throw DataError(std::string(which) + ": allomorph level 'none' is outside the inventory");
}

std::vector<Factor> factors(AllomorphCoding coding) {
  std::vector<Factor> out;
  out.push_back({"inflection_from",
                 {{"VBZ", [](const TrialRow& r) { return is_inflection_vbz(r.inflection_from, "inflection_from") ? 1.0 : 0.0; }}}});
  out.push_back({"inflection_to",
                 {{"VBZ", [](const TrialRow& r) { return is_inflection_vbz(r.inflection_to, "inflection_to") ? 1.0 : 0.0; }}}});
  Factor from{"allomorph_from", {{"S", [](const TrialRow& r) { return r.allomorph_from == Allomorph::s ? 1.0 : 0.0; }}}};
  Factor to{"allomorph_to", {{"S", [](const TrialRow& r) { return r.allomorph_to == Allomorph::s ? 1.0 : 0.0; }}}};
  if (coding == AllomorphCoding::full) {
    from.levels.push_back({"Iz", [](const TrialRow& r) { return r.allomorph_from == Allomorph::Iz ? 1.0 : 0.0; }});
    to.levels.push_back({"Iz", [](const TrialRow& r) { return r.allomorph_to == Allomorph::Iz ? 1.0 : 0.0; }});
  }
  out.push_back(std::move(from));
  out.push_back(std::move(to));
  return out;
}

struct Column {
  std::string name;
  std::vector<const Level*> parts;
};

/// Products over every non-empty subset of factors, smaller subsets first.
std::vector<Column> interaction_columns(const std::vector<Factor>& fs) {
  std::vector<Column> out;
  const std::size_t n = fs.size();
  for (std::size_t size = 1; size <= n; ++size) {
    std::vector<bool> mask(n, false);
    std::fill(mask.begin(), mask.begin() + static_cast<std::ptrdiff_t>(size), true);
    do {
      std::vector<std::size_t> chosen;
      for (std::size_t i = 0; i < n; ++i) {
        if (mask[i]) chosen.push_back(i);
      }
      std::vector<Column> partial{{}};
      for (auto fi : chosen) {
        std::vector<Column> next;
        for (const auto& p : partial) {
          for (const auto& lvl : fs[fi].levels) {
            Column c = p;
            if (!c.name.empty()) c.name += kInteraction;
            c.name += fs[fi].name + "=" + lvl.name;
            c.parts.push_back(&lvl);
            next.push_back(std::move(c));
          }
        }
        partial = std::move(next);
      }
      for (auto& c : partial) out.push_back(std::move(c));
    } while (std::prev_permutation(mask.begin(), mask.end()));
  }
  return out;
}

std::vector<std::string> aliased_terms(const Eigen::ColPivHouseholderQR<Eigen::MatrixXd>& qr,
                                       const std::vector<std::string>& terms) {
  std::vector<std::string> out;
  const auto& perm = qr.colsPermutation().indices();
  for (Eigen::Index k = qr.rank(); k < perm.size(); ++k) out.push_back(terms[static_cast<std::size_t>(perm(k))]);
  std::sort(out.begin(), out.end());
  return out;
}

std::string join(const std::vector<std::string>& v) {
  std::string out;
  for (const auto& s : v) out += (out.empty() ? "" : ", ") + s;
  return out;
}

}  // namespace

Design build_design(std::span<const TrialRow> rows, AllomorphCoding coding) {
  for (const auto& r : rows) {
    if (!std::isfinite(r.outcome) || !std::isfinite(r.from_freq) || !std::isfinite(r.to_freq)) {
      throw DataError("regression row with a non-finite value");
    }
    check_allomorph(r.allomorph_from, "allomorph_from");
    check_allomorph(r.allomorph_to, "allomorph_to");
  }
  const auto fs = factors(coding);
  const auto cols = interaction_columns(fs);
  const auto n = static_cast<Eigen::Index>(rows.size());

  std::vector<std::string> names{"Intercept"};
  std::vector<Eigen::VectorXd> values{Eigen::VectorXd::Ones(n)};
  for (const auto& c : cols) {
    Eigen::VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      double x = 1.0;
      for (const auto* lvl : c.parts) x *= lvl->value(rows[static_cast<std::size_t>(i)]);
      v(i) = x;
    }
    names.push_back(c.name);
    values.push_back(std::move(v));
  }
  Eigen::VectorXd from(n), to(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    from(i) = rows[static_cast<std::size_t>(i)].from_freq;
    to(i) = rows[static_cast<std::size_t>(i)].to_freq;
  }
  names.push_back("from_freq");
  values.push_back(std::move(from));
  names.push_back("to_freq");
  values.push_back(std::move(to));

  Design d;
  std::vector<std::size_t> kept;
  for (std::size_t j = 0; j < values.size(); ++j) {
    const bool zero = (values[j].array() == 0.0).all();
    const bool repeat = std::any_of(kept.begin(), kept.end(), [&](std::size_t k) { return values[k] == values[j]; });
    if (zero || repeat) {
      d.dropped.push_back(names[j]);
    } else {
      kept.push_back(j);
    }
  }
  d.x.resize(n, static_cast<Eigen::Index>(kept.size()));
  for (std::size_t c = 0; c < kept.size(); ++c) {
    d.x.col(static_cast<Eigen::Index>(c)) = values[kept[c]];
    d.terms.push_back(names[kept[c]]);
  }
  d.y.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) d.y(i) = rows[static_cast<std::size_t>(i)].outcome;

  if (n > 0) {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(d.x);
    if (qr.rank() < d.x.cols()) {
      throw NumericError("rank-deficient design; aliased terms: " + join(aliased_terms(qr, d.terms)));
    }
  }
  return d;
}

std::optional<double> RegressionFit::coefficient(std::string_view term) const {
  for (std::size_t i = 0; i < terms.size(); ++i) {
    if (terms[i] == term) return coefficients(static_cast<Eigen::Index>(i));
  }
  return std::nullopt;
}

std::optional<double> RegressionFit::standard_error(std::string_view term) const {
  for (std::size_t i = 0; i < terms.size(); ++i) {
    if (terms[i] == term) return standard_errors(static_cast<Eigen::Index>(i));
  }
  return std::nullopt;
}

RegressionFit fit_ols(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, std::vector<std::string> terms) {
  const auto n = x.rows();
  const auto p = x.cols();
  if (static_cast<Eigen::Index>(terms.size()) != p) throw DataError("term count does not match design columns");
  if (y.size() != n) throw DataError("outcome length does not match design rows");
  if (p == 0) throw DataError("empty design");
  if (n < p) throw DataError("fewer observations than design columns");
  if (!x.allFinite() || !y.allFinite()) throw DataError("non-finite value in regression input");
  for (Eigen::Index a = 0; a < p; ++a) {
    for (Eigen::Index b = a + 1; b < p; ++b) {
      if (x.col(a) == x.col(b)) {
        throw DataError("design column '" + terms[static_cast<std::size_t>(b)] + "' duplicates '" +
                        terms[static_cast<std::size_t>(a)] + "'");
      }
    }
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
  if (qr.rank() < p) throw NumericError("singular design; aliased terms: " + join(aliased_terms(qr, terms)));

  RegressionFit fit;
  fit.terms = std::move(terms);
  fit.observations = static_cast<std::size_t>(n);
  fit.coefficients = qr.solve(y);
  const Eigen::VectorXd resid = y - x * fit.coefficients;
  fit.residual_variance = n > p ? resid.squaredNorm() / static_cast<double>(n - p) : 0.0;

  // (X'X)^-1 = P R^-1 R^-T P'
  const Eigen::MatrixXd r = qr.matrixR().topLeftCorner(p, p).triangularView<Eigen::Upper>();
  const Eigen::MatrixXd rinv =
      r.triangularView<Eigen::Upper>().solve(Eigen::MatrixXd::Identity(p, p));
  const Eigen::MatrixXd cov_perm = rinv * rinv.transpose();
  const auto& perm = qr.colsPermutation();
  const Eigen::MatrixXd cov = perm * cov_perm * perm.transpose();
  fit.standard_errors = (fit.residual_variance * cov.diagonal().array()).sqrt();
  return fit;
}

RegressionFit fit_ols(const Design& design) { return fit_ols(design.x, design.y, design.terms); }

std::vector<TermStrength> interaction_strength(const RegressionFit& fit) {
  std::vector<TermStrength> out;
  for (std::size_t i = 0; i < fit.terms.size(); ++i) {
    if (fit.terms[i].find(kInteraction) == std::string::npos) continue;
    out.push_back({fit.terms[i], std::abs(fit.coefficients(static_cast<Eigen::Index>(i)))});
  }
  std::sort(out.begin(), out.end(), [](const TermStrength& a, const TermStrength& b) {
    return a.strength != b.strength ? a.strength > b.strength : a.term < b.term;
  });
  return out;
}

std::vector<StrengthComparison> compare_interactions(const RegressionFit& a, const RegressionFit& b) {
  std::vector<StrengthComparison> out;
  for (const auto& s : interaction_strength(a)) {
    auto other = b.coefficient(s.term);
    if (!other) continue;
    out.push_back({s.term, s.strength, std::abs(*other), s.strength - std::abs(*other)});
  }
  return out;
}

WelchResult welch_t(std::span<const double> a, std::span<const double> b) {
  if (a.size() < 2 || b.size() < 2) throw DataError("Welch test needs at least two values per group");
  auto moments = [](std::span<const double> v) {
    double m = 0.0;
    for (double x : v) m += x;
    m /= static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - m) * (x - m);
    return std::pair{m, ss / static_cast<double>(v.size() - 1)};
  };
  const auto [ma, va] = moments(a);
  const auto [mb, vb] = moments(b);
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  const double sa = va / na;
  const double sb = vb / nb;
  WelchResult r;
  if (sa + sb == 0.0) {
    if (ma == mb) throw DataError("Welch test is undefined for two identical constant groups");
    r.infinite = true;
    r.t = std::copysign(std::numeric_limits<double>::infinity(), ma - mb);
    r.df = na + nb - 2.0;
    r.p = 0.0;
    return r;
  }
  r.t = (ma - mb) / std::sqrt(sa + sb);
  r.df = (sa + sb) * (sa + sb) / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
  const boost::math::students_t dist(r.df);
  r.p = std::min(1.0, 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(r.t))));
  return r;
}

void write_fit_csv(const std::filesystem::path& path, std::span<const NamedFit> fits) {
  std::vector<std::string> terms;
  for (const auto& f : fits) {
    for (const auto& t : f.fit->terms) {
      if (std::find(terms.begin(), terms.end(), t) == terms.end()) terms.push_back(t);
    }
  }
  std::string text = "term";
  for (const auto& f : fits) text += "," + detail::csv_field(f.name + "_estimate") + "," + detail::csv_field(f.name + "_se");
  text += "\n";
  for (const auto& t : terms) {
    text += detail::csv_field(t);
    for (const auto& f : fits) {
      text += "," + detail::format_number(f.fit->coefficient(t)) + "," + detail::format_number(f.fit->standard_error(t));
    }
    text += "\n";
  }
  detail::write_file_atomic(path, text);
}

void write_interaction_csv(const std::filesystem::path& path, std::string_view name_a, std::string_view name_b,
                           std::span<const StrengthComparison> rows) {
  std::string text = "term," + detail::csv_field(name_a) + "," + detail::csv_field(name_b) + ",difference\n";
  for (const auto& r : rows) {
    text += detail::csv_field(r.term) + "," + detail::format_number(r.a) + "," + detail::format_number(r.b) + "," +
            detail::format_number(r.difference) + "\n";
  }
  detail::write_file_atomic(path, text);
}

}  // namespace s3m

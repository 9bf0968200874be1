#pragma once

// Trial-level OLS with categorical interactions, interaction strengths and
// Welch's t-test.

#include <Eigen/Core>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "s3m/stimuli.hpp"

namespace s3m {

struct TrialRow {
  double outcome = 0.0;
  Allomorph allomorph_from = Allomorph::z;
  Allomorph allomorph_to = Allomorph::z;
  Inflection inflection_from = Inflection::NNS;
  Inflection inflection_to = Inflection::NNS;
  double from_freq = 0.0;
  double to_freq = 0.0;
};

enum class AllomorphCoding {
  /// z reference, dummies for s and Iz.
  full,
  /// s against everything else.
  binary_s,
};

struct Design {
  Eigen::MatrixXd x;
  Eigen::VectorXd y;
  std::vector<std::string> terms;
  /// Columns removed because they were all zero or repeated an earlier column.
  std::vector<std::string> dropped;
};

inline constexpr std::string_view kInteraction = " × ";

/// Treatment coding (inflection reference NNS) with every interaction among
/// inflection_from, inflection_to, allomorph_from, allomorph_to, plus additive
/// from_freq and to_freq and an intercept. Term names list factors in that
/// order joined by " × ". DataError on non-finite values or categorical
/// levels outside the inventories; NumericError naming the aliased terms when
/// the design stays rank deficient after dropping.
Design build_design(std::span<const TrialRow> rows, AllomorphCoding coding = AllomorphCoding::full);

struct RegressionFit {
  std::vector<std::string> terms;
  Eigen::VectorXd coefficients;
  Eigen::VectorXd standard_errors;
  double residual_variance = 0.0;
  std::size_t observations = 0;

  std::optional<double> coefficient(std::string_view term) const;
  std::optional<double> standard_error(std::string_view term) const;
};

/// Least squares via column-pivoted QR. DataError when there are fewer rows
/// than columns or a column duplicates another; NumericError when singular.
RegressionFit fit_ols(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, std::vector<std::string> terms);
RegressionFit fit_ols(const Design& design);

struct TermStrength {
  std::string term;
  double strength = 0.0;
};

/// |coefficient| of every interaction term, strongest first (ties by name).
std::vector<TermStrength> interaction_strength(const RegressionFit& fit);

struct StrengthComparison {
  std::string term;
  double a = 0.0;
  double b = 0.0;
  double difference = 0.0;  // a - b
};

/// Interaction terms present in both fits, in the order of `a`'s strengths.
std::vector<StrengthComparison> compare_interactions(const RegressionFit& a, const RegressionFit& b);

struct WelchResult {
  double t = 0.0;
  double df = 0.0;
  double p = 1.0;
  /// Both groups constant with different values: |t| is infinite, p = 0.
  bool infinite = false;
};

/// Two-sided Welch test. DataError for a group with fewer than two values or
/// when neither group varies and their means agree.
WelchResult welch_t(std::span<const double> a, std::span<const double> b);

struct NamedFit {
  std::string name;
  const RegressionFit* fit = nullptr;
};

/// term, then estimate and standard error per model.
void write_fit_csv(const std::filesystem::path& path, std::span<const NamedFit> fits);
void write_interaction_csv(const std::filesystem::path& path, std::string_view name_a, std::string_view name_b,
                           std::span<const StrengthComparison> rows);

}  // namespace s3m

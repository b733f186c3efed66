#pragma once

#include <span>
#include <utility>
#include <vector>

namespace softerr {

// Error function computed from the regularized incomplete gamma function:
// power series for small arguments, modified-Lentz continued fraction for
// the tail. Absolute error is below 1e-12 over the real line, so results do
// not depend on the platform's libm erf.
double erf_approx(double x);
double erfc_approx(double x);

double normal_pdf(double x);
double normal_cdf(double x);

// RMS real-valued disturbance of one uniformly random bit flip in a
// symmetric two's complement word: bound * sqrt((1/bits) * sum 4^-b).
// Close to bound/sqrt(6) for 8 bits and bound/sqrt(12) for 16 bits.
double flip_disturbance_rms(int bits, double bound);

// Expected output RMSE of a single bit flip in one conv weight
// (kernel x kernel, in_ch -> out_ch, unit-variance activations, default
// 1/sqrt(fan_in) weight scale): flip_rms / (kernel * sqrt(in_ch * out_ch)).
double weight_fault_rmse(int kernel, int in_ch, int out_ch, double flip_rms);

// Same for a single bit flip in one activation of a feature_size^2 x in_ch
// input map: flip_rms / (feature_size * sqrt(in_ch)).
double activation_fault_rmse(int feature_size, int in_ch, double flip_rms);

// Variance of a product of independent zero-mean variables.
double variance_product(double var_x, double var_y);

// Probability that a unit-variance signal keeps its sign under additive
// zero-mean noise of the given relative RMS: 0.5 * erf(1/rrmse) + 0.5.
double binary_accuracy(double rrmse);

// Probability that the correct logit stays on top among class_count
// competitors under i.i.d. relative noise:
//   integral of pdf(x) * cdf(x + 1/rrmse)^(class_count-1) dx,
// evaluated with adaptive Simpson quadrature (absolute error <= 1e-6).
// At class_count 2 this equals normcdf(1/(sqrt(2)*rrmse)), which differs
// from binary_accuracy by a factor of 2 inside the cdf argument: the binary
// form measures a two-sided margin (correct logit +1, wrong logit -1), this
// one a one-unit gap to each competitor. Both conventions are deliberate.
double multiclass_accuracy(double rrmse, int class_count);

// Logistic fit of accuracy against RRMSE, exact at both ends:
// value(0) = acc_clean, value(inf) = 1/class_count.
struct SigmoidAccuracyModel {
  double midpoint = 1.0;   // RRMSE at the transition center, > 0
  double steepness = 1.0;  // > 0
  double acc_clean = 1.0;
  int class_count = 2;

  double operator()(double rrmse) const;
};

struct SigmoidFit {
  SigmoidAccuracyModel model;
  double residual = 0.0;  // root mean squared accuracy residual at the points
};

// Fits midpoint/steepness to (rrmse, accuracy) points: coarse log-spaced
// grid search followed by Nelder-Mead refinement in log-parameter space.
// Needs at least two distinct rrmse values and a non-constant response.
SigmoidFit fit_sigmoid_accuracy(
    const std::vector<std::pair<double, double>>& points, double acc_clean,
    int class_count);

// Euclidean composition of independent error contributions.
double aggregate_rrmse(std::span<const double> parts);

// Converts an RRMSE measured with sign-bit-only flips to the equivalent
// uniformly-random-bit RRMSE at the same flip count. The exact divisor is
// bound / flip_disturbance_rms(bits, bound), i.e. ~sqrt(6) for 8 bits and
// ~sqrt(12) for 16 bits.
double msb_to_standard_rrmse(double rrmse_msb, int bits);

// RRMSE grows with the square root of the bit error rate.
double scale_rrmse_to_ber(double rrmse_at_p, double p, double p_target);

struct NormalityReport {
  size_t count = 0;
  double mean = 0.0;
  double variance = 0.0;         // population
  double skewness = 0.0;         // third standardized moment
  double excess_kurtosis = 0.0;  // fourth standardized moment minus 3
  double ks_distance = 0.0;      // sup gap vs the fitted normal CDF
};

// Smallest sample normality_diagnostics accepts; below this the higher
// moments and the KS statistic are too noisy to report.
inline constexpr size_t kNormalityMinSamples = 100;

// Requires at least kNormalityMinSamples samples with positive variance.
NormalityReport normality_diagnostics(std::span<const double> samples);

}  // namespace softerr

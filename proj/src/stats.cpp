#include "softerr/stats.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>

#include "softerr/errors.hpp"
#include "softerr/tensor.hpp"

namespace softerr {

namespace {

constexpr double kPi = 3.141592653589793238462643;
constexpr double kLnSqrtPi = 0.5723649429247000870717137;  // lgamma(1/2)

// Series expansion of the regularized lower incomplete gamma P(a, x).
double gamma_p_series(double a, double x) {
  double ap = a;
  double sum = 1.0 / a;
  double del = sum;
  for (int i = 0; i < 500; ++i) {
    ap += 1.0;
    del *= x / ap;
    sum += del;
    if (std::fabs(del) < std::fabs(sum) * 1e-17)
      return sum * std::exp(-x + a * std::log(x) - kLnSqrtPi);
  }
  throw QuadratureFailure("gamma_p_series: no convergence");
}

// Modified-Lentz continued fraction for the regularized upper incomplete
// gamma Q(a, x), valid for x > a + 1.
double gamma_q_cf(double a, double x) {
  const double tiny = 1e-300;
  double b = x + 1.0 - a;
  double c = 1.0 / tiny;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i <= 500; ++i) {
    const double an = -static_cast<double>(i) * (static_cast<double>(i) - a);
    b += 2.0;
    d = an * d + b;
    if (std::fabs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::fabs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < 1e-17)
      return h * std::exp(-x + a * std::log(x) - kLnSqrtPi);
  }
  throw QuadratureFailure("gamma_q_cf: no convergence");
}

// Adaptive Simpson with Richardson correction.
double simpson_recurse(const std::function<double(double)>& f, double a,
                       double b, double fa, double fm, double fb, double whole,
                       double tol, int depth) {
  const double m = 0.5 * (a + b);
  const double lm = 0.5 * (a + m);
  const double rm = 0.5 * (m + b);
  const double flm = f(lm);
  const double frm = f(rm);
  const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
  const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
  const double delta = left + right - whole;
  if (std::fabs(delta) <= 15.0 * tol) return left + right + delta / 15.0;
  if (depth <= 0)
    throw QuadratureFailure("adaptive Simpson: depth exhausted before tolerance");
  return simpson_recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) +
         simpson_recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1);
}

double integrate(const std::function<double(double)>& f, double a, double b,
                 double tol) {
  const double fa = f(a);
  const double fb = f(b);
  const double fm = f(0.5 * (a + b));
  const double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
  return simpson_recurse(f, a, b, fa, fm, fb, whole, tol, 60);
}

// Nelder-Mead on two parameters; deterministic, no restarts.
std::array<double, 2> nelder_mead2(
    const std::function<double(const std::array<double, 2>&)>& f,
    std::array<double, 2> start, double step, int iters) {
  std::array<std::array<double, 2>, 3> pts{
      start,
      {start[0] + step, start[1]},
      {start[0], start[1] + step},
  };
  std::array<double, 3> val{f(pts[0]), f(pts[1]), f(pts[2])};
  for (int it = 0; it < iters; ++it) {
    std::array<int, 3> ord{0, 1, 2};
    std::sort(ord.begin(), ord.end(),
              [&](int a, int b) { return val[a] < val[b]; });
    const auto& best = pts[ord[0]];
    const auto& worst = pts[ord[2]];
    if (std::fabs(val[ord[2]] - val[ord[0]]) < 1e-15) break;
    const std::array<double, 2> mid{
        0.5 * (pts[ord[0]][0] + pts[ord[1]][0]),
        0.5 * (pts[ord[0]][1] + pts[ord[1]][1])};
    const std::array<double, 2> refl{2.0 * mid[0] - worst[0],
                                     2.0 * mid[1] - worst[1]};
    const double frefl = f(refl);
    if (frefl < val[ord[0]]) {
      const std::array<double, 2> expa{3.0 * mid[0] - 2.0 * worst[0],
                                       3.0 * mid[1] - 2.0 * worst[1]};
      const double fexpa = f(expa);
      if (fexpa < frefl) {
        pts[ord[2]] = expa;
        val[ord[2]] = fexpa;
      } else {
        pts[ord[2]] = refl;
        val[ord[2]] = frefl;
      }
    } else if (frefl < val[ord[1]]) {
      pts[ord[2]] = refl;
      val[ord[2]] = frefl;
    } else {
      const std::array<double, 2> contr{0.5 * (mid[0] + worst[0]),
                                        0.5 * (mid[1] + worst[1])};
      const double fcontr = f(contr);
      if (fcontr < val[ord[2]]) {
        pts[ord[2]] = contr;
        val[ord[2]] = fcontr;
      } else {
        for (int i : {ord[1], ord[2]}) {
          pts[i][0] = 0.5 * (pts[i][0] + best[0]);
          pts[i][1] = 0.5 * (pts[i][1] + best[1]);
          val[i] = f(pts[i]);
        }
      }
    }
  }
  std::array<int, 3> ord{0, 1, 2};
  std::sort(ord.begin(), ord.end(),
            [&](int a, int b) { return val[a] < val[b]; });
  return pts[ord[0]];
}

}  // namespace

double erf_approx(double x) {
  if (x < 0.0) return -erf_approx(-x);
  if (x == 0.0) return 0.0;
  const double z = x * x;
  if (x < 2.0) return gamma_p_series(0.5, z);
  return 1.0 - gamma_q_cf(0.5, z);
}

double erfc_approx(double x) {
  if (x < 0.0) return 2.0 - erfc_approx(-x);
  if (x == 0.0) return 1.0;
  const double z = x * x;
  if (x < 2.0) return 1.0 - gamma_p_series(0.5, z);
  return gamma_q_cf(0.5, z);
}

double normal_pdf(double x) {
  return std::exp(-0.5 * x * x) / std::sqrt(2.0 * kPi);
}

double normal_cdf(double x) {
  return 0.5 * erfc_approx(-x / std::sqrt(2.0));
}

double flip_disturbance_rms(int bits, double bound) {
  if (bits != 8 && bits != 16)
    throw InvalidArgument("flip_disturbance_rms: bits must be 8 or 16");
  if (!(bound > 0.0) || !std::isfinite(bound))
    throw InvalidArgument("flip_disturbance_rms: bound must be positive");
  double sum = 0.0;
  for (int b = 0; b < bits; ++b) sum += std::pow(4.0, -b);
  return bound * std::sqrt(sum / static_cast<double>(bits));
}

double weight_fault_rmse(int kernel, int in_ch, int out_ch, double flip_rms) {
  if (kernel <= 0 || in_ch <= 0 || out_ch <= 0)
    throw InvalidArgument("weight_fault_rmse: dims must be positive");
  if (!(flip_rms >= 0.0))
    throw InvalidArgument("weight_fault_rmse: flip_rms must be non-negative");
  return flip_rms / (static_cast<double>(kernel) *
                     std::sqrt(static_cast<double>(in_ch) *
                               static_cast<double>(out_ch)));
}

double activation_fault_rmse(int feature_size, int in_ch, double flip_rms) {
  if (feature_size <= 0 || in_ch <= 0)
    throw InvalidArgument("activation_fault_rmse: dims must be positive");
  if (!(flip_rms >= 0.0))
    throw InvalidArgument(
        "activation_fault_rmse: flip_rms must be non-negative");
  return flip_rms /
         (static_cast<double>(feature_size) * std::sqrt(static_cast<double>(in_ch)));
}

double variance_product(double var_x, double var_y) {
  if (var_x < 0.0 || var_y < 0.0)
    throw InvalidArgument("variance_product: variances must be non-negative");
  return var_x * var_y;
}

double binary_accuracy(double rrmse) {
  if (!(rrmse >= 0.0) || !std::isfinite(rrmse))
    throw InvalidArgument("binary_accuracy: rrmse must be finite and >= 0");
  if (rrmse == 0.0) return 1.0;
  return 0.5 * erf_approx(1.0 / rrmse) + 0.5;
}

double multiclass_accuracy(double rrmse, int class_count) {
  if (class_count < 2)
    throw InvalidArgument("multiclass_accuracy: class_count must be >= 2");
  if (!(rrmse >= 0.0) || !std::isfinite(rrmse))
    throw InvalidArgument("multiclass_accuracy: rrmse must be finite and >= 0");
  if (rrmse == 0.0) return 1.0;
  const double c = 1.0 / rrmse;
  // Beyond this offset the integrand is indistinguishable from the bare pdf.
  if (c > 38.0) return 1.0;
  const int k = class_count - 1;
  auto integrand = [c, k](double x) {
    const double base = normal_cdf(x + c);
    double p = 1.0;
    for (int i = 0; i < k; ++i) p *= base;
    return normal_pdf(x) * p;
  };
  return integrate(integrand, -10.0, 10.0 + c, 1e-7);
}

double SigmoidAccuracyModel::operator()(double rrmse) const {
  if (!(rrmse >= 0.0))
    throw InvalidArgument("SigmoidAccuracyModel: rrmse must be >= 0");
  const double floor = 1.0 / static_cast<double>(class_count);
  const double span = acc_clean - floor;
  const double lift = 1.0 + std::exp(-midpoint * steepness);
  const double g = steepness * (rrmse - midpoint);
  // exp(g) overflows harmlessly to +inf for large g; guard anyway.
  const double denom = (g > 700.0) ? std::numeric_limits<double>::infinity()
                                   : 1.0 + std::exp(g);
  return lift * span / denom + floor;
}

SigmoidFit fit_sigmoid_accuracy(
    const std::vector<std::pair<double, double>>& points, double acc_clean,
    int class_count) {
  if (class_count < 2)
    throw InvalidArgument("fit_sigmoid_accuracy: class_count must be >= 2");
  const double floor = 1.0 / static_cast<double>(class_count);
  if (!(acc_clean > floor && acc_clean <= 1.0))
    throw InvalidArgument(
        "fit_sigmoid_accuracy: acc_clean must lie in (1/class_count, 1]");
  if (points.size() < 2)
    throw FitFailure("fit_sigmoid_accuracy: need at least two points");
  double rmin = std::numeric_limits<double>::infinity();
  double rmax = -rmin;
  double amin = std::numeric_limits<double>::infinity();
  double amax = -amin;
  for (const auto& [r, a] : points) {
    if (!(r >= 0.0) || !std::isfinite(r))
      throw InvalidArgument("fit_sigmoid_accuracy: rrmse must be finite, >= 0");
    if (!(a >= 0.0 && a <= 1.0))
      throw InvalidArgument("fit_sigmoid_accuracy: accuracy must lie in [0,1]");
    rmin = std::min(rmin, r);
    rmax = std::max(rmax, r);
    amin = std::min(amin, a);
    amax = std::max(amax, a);
  }
  if (!(rmax > rmin))
    throw FitFailure("fit_sigmoid_accuracy: points share one rrmse value");
  if (amax - amin < 1e-12)
    throw FitFailure("fit_sigmoid_accuracy: constant accuracy response");

  auto sse = [&](double m, double s) {
    SigmoidAccuracyModel trial{m, s, acc_clean, class_count};
    double e = 0.0;
    for (const auto& [r, a] : points) {
      const double d = trial(r) - a;
      e += d * d;
    }
    return e;
  };

  // Coarse 16x16 log grid.
  const int grid = 16;
  double best_m = 1.0, best_s = 1.0;
  double best = std::numeric_limits<double>::infinity();
  for (int i = 0; i < grid; ++i) {
    const double m = 1e-3 * std::pow(10.0 / 1e-3, i / double(grid - 1));
    for (int j = 0; j < grid; ++j) {
      const double s = 1e-1 * std::pow(1e3 / 1e-1, j / double(grid - 1));
      const double e = sse(m, s);
      if (e < best) {
        best = e;
        best_m = m;
        best_s = s;
      }
    }
  }

  // Refine in log space so both parameters stay positive.
  auto obj = [&](const std::array<double, 2>& lp) {
    return sse(std::exp(lp[0]), std::exp(lp[1]));
  };
  const auto lp = nelder_mead2(obj, {std::log(best_m), std::log(best_s)},
                               0.25, 400);
  SigmoidFit fit;
  fit.model = SigmoidAccuracyModel{std::exp(lp[0]), std::exp(lp[1]), acc_clean,
                                   class_count};
  fit.residual = std::sqrt(sse(fit.model.midpoint, fit.model.steepness) /
                           static_cast<double>(points.size()));
  return fit;
}

double aggregate_rrmse(std::span<const double> parts) {
  std::vector<double> sq(parts.size());
  for (size_t i = 0; i < parts.size(); ++i) {
    if (!(parts[i] >= 0.0))
      throw InvalidArgument("aggregate_rrmse: parts must be non-negative");
    sq[i] = parts[i] * parts[i];
  }
  return std::sqrt(pairwise_sum(sq));
}

double msb_to_standard_rrmse(double rrmse_msb, int bits) {
  if (!(rrmse_msb >= 0.0))
    throw InvalidArgument("msb_to_standard_rrmse: rrmse must be non-negative");
  // Ratio of sign-bit disturbance (always = bound) to the random-bit RMS;
  // bound cancels, so evaluate at bound = 1.
  return rrmse_msb * flip_disturbance_rms(bits, 1.0);
}

double scale_rrmse_to_ber(double rrmse_at_p, double p, double p_target) {
  if (!(rrmse_at_p >= 0.0))
    throw InvalidArgument("scale_rrmse_to_ber: rrmse must be non-negative");
  if (!(p > 0.0) || !(p_target >= 0.0))
    throw InvalidArgument("scale_rrmse_to_ber: rates must be positive");
  return rrmse_at_p * std::sqrt(p_target / p);
}

NormalityReport normality_diagnostics(std::span<const double> samples) {
  if (samples.size() < kNormalityMinSamples)
    throw InvalidArgument("normality_diagnostics: need at least 100 samples");
  const double n = static_cast<double>(samples.size());
  std::vector<double> buf(samples.begin(), samples.end());
  const double mean = pairwise_sum(buf) / n;
  double m2 = 0.0, m3 = 0.0, m4 = 0.0;
  for (double x : buf) {
    const double d = x - mean;
    const double d2 = d * d;
    m2 += d2;
    m3 += d2 * d;
    m4 += d2 * d2;
  }
  m2 /= n;
  m3 /= n;
  m4 /= n;
  if (m2 <= 0.0)
    throw DegenerateInput("normality_diagnostics: constant samples");
  NormalityReport rep;
  rep.count = samples.size();
  rep.mean = mean;
  rep.variance = m2;
  const double sd = std::sqrt(m2);
  rep.skewness = m3 / (sd * sd * sd);
  rep.excess_kurtosis = m4 / (m2 * m2) - 3.0;
  std::sort(buf.begin(), buf.end());
  double d_stat = 0.0;
  for (size_t i = 0; i < buf.size(); ++i) {
    const double z = (buf[i] - mean) / sd;
    const double cdf = normal_cdf(z);
    const double hi = static_cast<double>(i + 1) / n - cdf;
    const double lo = cdf - static_cast<double>(i) / n;
    d_stat = std::max({d_stat, std::fabs(hi), std::fabs(lo)});
  }
  rep.ks_distance = d_stat;
  return rep;
}

}  // namespace softerr

#include "dostx/prep.hpp"

#include <cmath>

#include "dostx/errors.hpp"

namespace dostx {

EnergyGrid make_grid(double e_min, double e_max, int m) {
  if (!std::isfinite(e_min) || !std::isfinite(e_max))
    throw ValidationError("energy grid bounds must be finite");
  if (!(e_min < e_max)) throw ValidationError("energy grid requires e_min < e_max");
  if (m < 2) throw ValidationError("energy grid requires at least 2 points");
  EnergyGrid grid{e_min, e_max, m, Eigen::VectorXd(m)};
  const double step = (e_max - e_min) / (m - 1);
  for (int k = 0; k < m; ++k) grid.values[k] = e_min + k * step;
  return grid;
}

Eigen::VectorXd normalize_dos(const Eigen::VectorXd& raw, bool* degenerate) {
  if (!raw.allFinite()) throw NumericalError("normalize_dos: non-finite input");
  const double lo = raw.minCoeff();
  const double hi = raw.maxCoeff();
  if (degenerate) *degenerate = false;
  if (hi == lo) {
    if (degenerate) *degenerate = true;
    return Eigen::VectorXd::Zero(raw.size());
  }
  return (raw.array() - lo) / (hi - lo);
}

namespace {

// Fit a degree-p polynomial to samples y at integer positions xs by
// least squares; return the coefficient vector (constant term first).
Eigen::VectorXd polyfit(const Eigen::VectorXd& xs, const Eigen::VectorXd& y, int p) {
  Eigen::MatrixXd vand(xs.size(), p + 1);
  for (Eigen::Index r = 0; r < xs.size(); ++r) {
    double acc = 1.0;
    for (int c = 0; c <= p; ++c) {
      vand(r, c) = acc;
      acc *= xs[r];
    }
  }
  return vand.colPivHouseholderQr().solve(y);
}

double polyval(const Eigen::VectorXd& coef, double x) {
  double acc = 0.0;
  for (Eigen::Index c = coef.size() - 1; c >= 0; --c) acc = acc * x + coef[c];
  return acc;
}

}  // namespace

Eigen::VectorXd savgol_coeffs(int window, int polyorder) {
  if (window < 1 || window % 2 == 0)
    throw ValidationError("savgol window must be odd and positive");
  if (polyorder < 0 || polyorder >= window)
    throw ValidationError("savgol polyorder must satisfy 0 <= polyorder < window");
  const int half = window / 2;
  // Center value of the LS fit is a linear functional of the window:
  // c = A (A^T A)^{-1} e_0 with A the Vandermonde at positions -h..h.
  Eigen::MatrixXd vand(window, polyorder + 1);
  for (int r = 0; r < window; ++r) {
    double x = r - half, acc = 1.0;
    for (int c = 0; c <= polyorder; ++c) {
      vand(r, c) = acc;
      acc *= x;
    }
  }
  Eigen::VectorXd e0 = Eigen::VectorXd::Zero(polyorder + 1);
  e0[0] = 1.0;
  return vand * (vand.transpose() * vand).ldlt().solve(e0);
}

Eigen::VectorXd savgol_smooth(const Eigen::VectorXd& y, const SmootherConfig& cfg) {
  const int m = static_cast<int>(y.size());
  const int w = cfg.window;
  if (m < w) throw ValidationError("savgol: signal shorter than window");
  const int half = w / 2;
  const Eigen::VectorXd coeffs = savgol_coeffs(w, cfg.polyorder);

  Eigen::VectorXd out(m);
  for (int k = half; k < m - half; ++k)
    out[k] = coeffs.dot(y.segment(k - half, w));

  // interpolation edges: one polynomial per end, evaluated at the
  // positions the interior convolution cannot reach
  Eigen::VectorXd xs(w);
  for (int r = 0; r < w; ++r) xs[r] = r;
  const Eigen::VectorXd head = polyfit(xs, y.head(w), cfg.polyorder);
  const Eigen::VectorXd tail = polyfit(xs, y.tail(w), cfg.polyorder);
  for (int k = 0; k < half; ++k) {
    out[k] = polyval(head, k);
    out[m - 1 - k] = polyval(tail, w - 1 - k);
  }
  return out;
}

}  // namespace dostx

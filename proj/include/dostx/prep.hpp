#pragma once

#include <Eigen/Dense>

namespace dostx {

// Uniform energy axis shared by every spectrum in a dataset.
struct EnergyGrid {
  double e_min = -5.0;
  double e_max = 5.0;
  int m = 201;
  Eigen::VectorXd values;  // length m, strictly increasing

  double spacing() const { return (e_max - e_min) / (m - 1); }
};

EnergyGrid make_grid(double e_min, double e_max, int m);

struct SmootherConfig {
  int window = 17;
  int polyorder = 1;
};

// Min-max map onto [0,1]. A constant input maps to zeros and sets
// *degenerate so the caller can flag the crystal instead of aborting.
Eigen::VectorXd normalize_dos(const Eigen::VectorXd& raw, bool* degenerate = nullptr);

// Savitzky-Golay convolution coefficients for the interior response:
// least-squares polynomial of degree `polyorder` over `window` points,
// evaluated at the center. Coefficients sum to 1.
Eigen::VectorXd savgol_coeffs(int window, int polyorder);

// Sliding least-squares polynomial smoother. Edges use a single
// polynomial fit to the first/last window evaluated at the edge
// positions (interpolation edge mode).
Eigen::VectorXd savgol_smooth(const Eigen::VectorXd& y, const SmootherConfig& cfg);

}  // namespace dostx

#include <doctest.h>

#include <Eigen/Dense>
#include <random>

#include "dostx/errors.hpp"
#include "dostx/prep.hpp"

using namespace dostx;

namespace {

// Independent Savitzky-Golay oracle: fit the window polynomial with an
// SVD solve at every output position, never reusing the implementation's
// precomputed convolution coefficients.
Eigen::VectorXd savgol_oracle(const Eigen::VectorXd& y, int window, int polyorder) {
  const int m = static_cast<int>(y.size());
  const int half = window / 2;
  auto fit_eval = [&](int first, double at) {
    Eigen::MatrixXd vand(window, polyorder + 1);
    for (int r = 0; r < window; ++r)
      for (int c = 0; c <= polyorder; ++c) vand(r, c) = std::pow(double(r), c);
    Eigen::VectorXd coef =
        vand.jacobiSvd(Eigen::ComputeThinU | Eigen::ComputeThinV).solve(y.segment(first, window));
    double acc = 0.0;
    for (int c = polyorder; c >= 0; --c) acc = acc * at + coef[c];
    return acc;
  };
  Eigen::VectorXd out(m);
  for (int k = 0; k < m; ++k) {
    if (k < half)
      out[k] = fit_eval(0, k);
    else if (k >= m - half)
      out[k] = fit_eval(m - window, k - (m - window));
    else
      out[k] = fit_eval(k - half, half);
  }
  return out;
}

Eigen::VectorXd random_vec(int n, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-2.0, 2.0);
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v[i] = dist(rng);
  return v;
}

}  // namespace

TEST_CASE("make_grid matches the 201-point electron default") {
  const EnergyGrid g = make_grid(-5, 5, 201);
  CHECK(g.spacing() == doctest::Approx(0.05).epsilon(1e-12));
  CHECK(g.values[100] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(g.values[0] == -5.0);
  CHECK(g.values[200] == 5.0);
}

TEST_CASE("make_grid endpoints") {
  const EnergyGrid g = make_grid(0, 1, 2);
  CHECK(g.values[0] == 0.0);
  CHECK(g.values[1] == 1.0);
}

TEST_CASE("make_grid rejects bad input") {
  CHECK_THROWS_AS(make_grid(1, 0, 10), ValidationError);
  CHECK_THROWS_AS(make_grid(0, 1, 1), ValidationError);
  CHECK_THROWS_AS(make_grid(0, std::numeric_limits<double>::infinity(), 10), ValidationError);
}

TEST_CASE("normalize_dos linear map") {
  Eigen::Vector3d raw(0, 2, 4);
  bool deg = true;
  const Eigen::VectorXd out = normalize_dos(raw, &deg);
  CHECK_FALSE(deg);
  CHECK(out[0] == 0.0);
  CHECK(out[1] == 0.5);
  CHECK(out[2] == 1.0);
}

TEST_CASE("normalize_dos degenerate input maps to zeros with flag") {
  Eigen::Vector3d raw(3, 3, 3);
  bool deg = false;
  const Eigen::VectorXd out = normalize_dos(raw, &deg);
  CHECK(deg);
  CHECK(out.isZero(0.0));
}

TEST_CASE("normalize_dos rejects NaN") {
  Eigen::Vector2d raw(0.0, std::nan(""));
  CHECK_THROWS_AS(normalize_dos(raw), NumericalError);
}

TEST_CASE("normalize_dos range and idempotence") {
  for (unsigned seed = 0; seed < 20; ++seed) {
    const Eigen::VectorXd raw = random_vec(31, seed);
    const Eigen::VectorXd out = normalize_dos(raw);
    CHECK(out.minCoeff() == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(out.maxCoeff() == doctest::Approx(1.0).epsilon(1e-15));
    const Eigen::VectorXd again = normalize_dos(out);
    CHECK((again - out).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("savgol coefficients: polyorder 1 is the moving average, all sum to 1") {
  for (int w : {5, 9, 17}) {
    const Eigen::VectorXd c1 = savgol_coeffs(w, 1);
    for (int k = 0; k < w; ++k) CHECK(c1[k] == doctest::Approx(1.0 / w).epsilon(1e-12));
    for (int p : {0, 1, 2, 3}) {
      CHECK(savgol_coeffs(w, p).sum() == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
}

TEST_CASE("savgol preserves constants and linear ramps") {
  const int m = 41;
  Eigen::VectorXd constant = Eigen::VectorXd::Constant(m, 2.5);
  Eigen::VectorXd ramp(m);
  for (int k = 0; k < m; ++k) ramp[k] = 0.3 * k - 1.0;
  for (int w : {5, 9, 17}) {
    for (int p : {1, 2}) {
      const SmootherConfig cfg{w, p};
      CHECK((savgol_smooth(constant, cfg) - constant).cwiseAbs().maxCoeff() < 1e-10);
      CHECK((savgol_smooth(ramp, cfg) - ramp).cwiseAbs().maxCoeff() < 1e-10);
    }
  }
}

TEST_CASE("savgol matches the per-window least-squares oracle") {
  const Eigen::VectorXd y = random_vec(51, 7);
  for (int w : {5, 9, 17}) {
    for (int p : {1, 2}) {
      const Eigen::VectorXd got = savgol_smooth(y, {w, p});
      const Eigen::VectorXd want = savgol_oracle(y, w, p);
      CHECK((got - want).cwiseAbs().maxCoeff() < 1e-10);
    }
  }
}

TEST_CASE("savgol (17,1) interior equals 17-point moving average") {
  const Eigen::VectorXd y = random_vec(64, 11);
  const Eigen::VectorXd out = savgol_smooth(y, {17, 1});
  for (int k = 8; k < 56; ++k)
    CHECK(out[k] == doctest::Approx(y.segment(k - 8, 17).mean()).epsilon(1e-12));
}

TEST_CASE("savgol is linear") {
  const Eigen::VectorXd x = random_vec(33, 1);
  const Eigen::VectorXd y = random_vec(33, 2);
  const SmootherConfig cfg{9, 2};
  const Eigen::VectorXd lhs = savgol_smooth(1.7 * x - 0.4 * y, cfg);
  const Eigen::VectorXd rhs = 1.7 * savgol_smooth(x, cfg) - 0.4 * savgol_smooth(y, cfg);
  CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("savgol rejects signals shorter than the window") {
  CHECK_THROWS_AS(savgol_smooth(Eigen::VectorXd::Zero(5), {7, 1}), ValidationError);
}

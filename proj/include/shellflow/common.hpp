#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace shellflow {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

inline constexpr double pi = 3.14159265358979323846;

// ---------------------------------------------------------------------------
// Errors

struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

#define SHELLFLOW_ERROR(Name)                                   \
  struct Name : Error {                                         \
    explicit Name(const std::string& msg = #Name) : Error(msg) {} \
  }

SHELLFLOW_ERROR(OutsideTubular);
SHELLFLOW_ERROR(RatioTooLarge);
SHELLFLOW_ERROR(OutsideDomain);
SHELLFLOW_ERROR(OutsideDeformedDomain);
SHELLFLOW_ERROR(NoConvergence);
SHELLFLOW_ERROR(InadmissibleDisplacement);
SHELLFLOW_ERROR(IncompatibleMean);
SHELLFLOW_ERROR(StokesFailure);
SHELLFLOW_ERROR(DegenerateBump);
SHELLFLOW_ERROR(NonNormalTrace);
SHELLFLOW_ERROR(IncompatibleFlux);
SHELLFLOW_ERROR(SolverBreakdown);
SHELLFLOW_ERROR(RankDeficientBasis);
SHELLFLOW_ERROR(NonSPDMass);
SHELLFLOW_ERROR(IncompatibleInitialRate);
SHELLFLOW_ERROR(LinearSolveFailure);
SHELLFLOW_ERROR(GapInversion);
SHELLFLOW_ERROR(MarginViolated);
SHELLFLOW_ERROR(MaxIterations);
SHELLFLOW_ERROR(Diverged);
SHELLFLOW_ERROR(InequalityViolated);
SHELLFLOW_ERROR(ConfigError);

#undef SHELLFLOW_ERROR

// ---------------------------------------------------------------------------
// Gauss-Legendre quadrature on [a, b]

struct Quadrature1D {
  std::vector<double> x, w;
};

inline Quadrature1D gauss_legendre(int n, double a, double b) {
  Quadrature1D q;
  q.x.resize(n);
  q.w.resize(n);
  for (int i = 0; i < n; ++i) {
    // Newton on P_n with Chebyshev initial guess
    double t = std::cos(pi * (i + 0.75) / (n + 0.5));
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = t;
      for (int k = 2; k <= n; ++k) {
        double p2 = ((2 * k - 1) * t * p1 - (k - 1) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      double dp = n * (t * p1 - p0) / (t * t - 1.0);
      double dt = p1 / dp;
      t -= dt;
      if (std::abs(dt) < 1e-15) break;
    }
    double p0 = 1.0, p1 = t;
    for (int k = 2; k <= n; ++k) {
      double p2 = ((2 * k - 1) * t * p1 - (k - 1) * p0) / k;
      p0 = p1;
      p1 = p2;
    }
    double dp = n * (t * p1 - p0) / (t * t - 1.0);
    q.x[i] = 0.5 * (a + b) + 0.5 * (b - a) * t;
    q.w[i] = (b - a) / ((1.0 - t * t) * dp * dp);
  }
  return q;
}

// Composite Simpson weights on a uniform grid with n+1 nodes (n even).
inline std::vector<double> simpson_weights(int n_nodes, double h) {
  if (n_nodes < 3 || n_nodes % 2 == 0)
    throw Error("simpson_weights: need an odd node count >= 3");
  std::vector<double> w(n_nodes, 0.0);
  for (int i = 0; i + 2 < n_nodes; i += 2) {
    w[i] += h / 3.0;
    w[i + 1] += 4.0 * h / 3.0;
    w[i + 2] += h / 3.0;
  }
  return w;
}

// ---------------------------------------------------------------------------
// Legendre polynomials P_l and Gegenbauer functions
// G_n = (P_{n-2} - P_n)/(2n-1), n >= 2, with dG_n/dz = -P_{n-1}.

inline void legendre_all(int lmax, double z, std::vector<double>& P) {
  P.resize(lmax + 1);
  P[0] = 1.0;
  if (lmax >= 1) P[1] = z;
  for (int l = 2; l <= lmax; ++l)
    P[l] = ((2 * l - 1) * z * P[l - 1] - (l - 1) * P[l - 2]) / l;
}

inline double legendre(int l, double z) {
  std::vector<double> P;
  legendre_all(l, z, P);
  return P[l];
}

inline double gegenbauer(int n, double z) {
  std::vector<double> P;
  legendre_all(n, z, P);
  return (P[n - 2] - P[n]) / (2 * n - 1);
}

// G_n(cos t)/sin t, continuous limit 0 at the poles.
inline double gegenbauer_over_sin(int n, double theta) {
  double st = std::sin(theta);
  if (std::abs(st) < 1e-9) return 0.0;
  return gegenbauer(n, std::cos(theta)) / st;
}

// ---------------------------------------------------------------------------
// C-infinity bump, supported on |x| < 1, bump(0) = 1.

inline double bump(double x) {
  double x2 = x * x;
  if (x2 >= 1.0) return 0.0;
  return std::exp(1.0 - 1.0 / (1.0 - x2));
}

inline double bump_deriv(double x) {
  double x2 = x * x;
  if (x2 >= 1.0) return 0.0;
  double d = 1.0 - x2;
  return bump(x) * (-2.0 * x / (d * d));
}

// ---------------------------------------------------------------------------
// Dense radial polynomials: p(r) = sum c_k r^k.

struct RadialPoly {
  std::vector<double> c;  // c[k] multiplies r^k

  double eval(double r) const {
    double v = 0.0;
    for (int k = (int)c.size() - 1; k >= 0; --k) v = v * r + c[k];
    return v;
  }
  RadialPoly deriv() const {
    RadialPoly d;
    if (c.size() <= 1) return d;
    d.c.resize(c.size() - 1);
    for (size_t k = 1; k < c.size(); ++k) d.c[k - 1] = k * c[k];
    return d;
  }
  RadialPoly& operator+=(const RadialPoly& o) {
    if (o.c.size() > c.size()) c.resize(o.c.size(), 0.0);
    for (size_t k = 0; k < o.c.size(); ++k) c[k] += o.c[k];
    return *this;
  }
  RadialPoly scaled(double a) const {
    RadialPoly s = *this;
    for (auto& v : s.c) v *= a;
    return s;
  }
};

inline RadialPoly monomial(int k, double a = 1.0) {
  RadialPoly p;
  p.c.assign(k + 1, 0.0);
  p.c[k] = a;
  return p;
}

}  // namespace shellflow

#pragma once

#include "shellflow/common.hpp"
#include "shellflow/geometry.hpp"

namespace shellflow {

// ---------------------------------------------------------------------------
// Elastic parameters of the shell. The areal density eps0*rho_S is 1.

struct ElasticParams {
  double lambda = 1.0;
  double mu = 1.0;
  double eps0 = 0.1;

  double c1() const { return 4.0 * lambda * mu / (lambda + 2.0 * mu); }
  double bending_constant() const {
    return eps0 * eps0 * eps0 * 8.0 * mu * (lambda + mu) /
           (3.0 * (lambda + 2.0 * mu));
  }
};

// 2x2 symmetric tensor in an orthonormal tangent frame.
struct Sym2 {
  double tt = 0.0, pp = 0.0, tp = 0.0;
  double trace() const { return tt + pp; }
  double ddot(const Sym2& o) const {
    return tt * o.tt + pp * o.pp + 2.0 * tp * o.tp;
  }
};

// <C, A (x) B> = c1 (tr A)(tr B) + 4 mu (A : B) in the orthonormal frame.
inline double elasticity_contract(const ElasticParams& p, const Sym2& A,
                                  const Sym2& B) {
  return p.c1() * A.trace() * B.trace() + 4.0 * p.mu * A.ddot(B);
}

// ---------------------------------------------------------------------------
// One-dimensional surface grids.
//
// The production grid is the colatitude interval [theta_gamma, pi] on the
// sphere (axisymmetric transverse displacement), clamped at theta_gamma and
// even across the pole. A periodic flat strip (curvatures zero) is provided
// for unit tests with closed-form answers. Derivatives use fourth-order
// central stencils; the covariant Hessian of a zonal field on the sphere is
// diag(eta'' , cot(theta) eta') / R^2 in the orthonormal frame.

struct SurfaceGrid {
  Vec nodes;           // theta (cap) or x (strip)
  Vec w;               // area quadrature weights
  Mat D1, D2;          // derivative operators
  Mat Htt, Hpp;        // covariant Hessian component maps
  Vec h_frame, k_frame;  // per-node fundamental-form frame values
  bool clamped = false;  // first node constrained to zero
  double R = 1.0;

  int n() const { return (int)nodes.size(); }
  double area() const { return w.sum(); }
  double integrate(const Vec& f) const { return w.dot(f); }
};

namespace detail {

// Even-reflection index into [0, n-1] about both ends.
inline int reflect(int j, int n) {
  while (j < 0 || j >= n) {
    if (j < 0) j = -j;
    if (j >= n) j = 2 * (n - 1) - j;
  }
  return j;
}

inline void add_stencil(Mat& A, int row, int col, double v, int n,
                        bool periodic) {
  if (periodic)
    col = ((col % n) + n) % n;
  else
    col = reflect(col, n);
  A(row, col) += v;
}

inline void build_derivative_ops(int n, double h, bool periodic, Mat& D1,
                                 Mat& D2) {
  D1 = Mat::Zero(n, n);
  D2 = Mat::Zero(n, n);
  const double c1[5] = {1.0, -8.0, 0.0, 8.0, -1.0};
  const double c2[5] = {-1.0, 16.0, -30.0, 16.0, -1.0};
  for (int j = 0; j < n; ++j)
    for (int k = -2; k <= 2; ++k) {
      add_stencil(D1, j, j + k, c1[k + 2] / (12.0 * h), n, periodic);
      add_stencil(D2, j, j + k, c2[k + 2] / (12.0 * h * h), n, periodic);
    }
}

}  // namespace detail

// Spherical cap complement M = {theta_gamma <= theta <= pi}, clamped at
// theta_gamma, axisymmetric. Quadrature weights integrate the P1 hat
// functions against sin(theta) exactly, so every node (including the pole,
// where sin vanishes) carries positive area and the lumped mass matrix is
// nonsingular.
inline SurfaceGrid make_cap_grid(const SphereGeometry& geom, int n_nodes) {
  if (n_nodes % 2 == 0) ++n_nodes;
  SurfaceGrid g;
  g.R = geom.R;
  g.clamped = true;
  double a = geom.theta_gamma, b = pi;
  double h = (b - a) / (n_nodes - 1);
  g.nodes = Vec::LinSpaced(n_nodes, a, b);
  g.w = Vec::Zero(n_nodes);
  double ring = 2.0 * pi * geom.R * geom.R;
  for (int j = 0; j + 1 < n_nodes; ++j) {
    double t0 = g.nodes[j], t1 = g.nodes[j + 1];
    double I0 = std::cos(t0) - std::cos(t1);
    double I1 = (std::sin(t1) - t1 * std::cos(t1)) -
                (std::sin(t0) - t0 * std::cos(t0));
    g.w[j] += ring * (t1 * I0 - I1) / h;
    g.w[j + 1] += ring * (I1 - t0 * I0) / h;
  }
  detail::build_derivative_ops(n_nodes, h, false, g.D1, g.D2);
  double R2 = geom.R * geom.R;
  g.Htt = g.D2 / R2;
  g.Hpp = Mat::Zero(n_nodes, n_nodes);
  for (int j = 0; j < n_nodes; ++j) {
    double th = g.nodes[j];
    if (std::abs(std::sin(th)) < 1e-10) {
      g.Hpp.row(j) = g.D2.row(j) / R2;  // cot(theta) eta' -> eta'' at the pole
    } else {
      g.Hpp.row(j) = (std::cos(th) / std::sin(th)) * g.D1.row(j) / R2;
    }
  }
  g.h_frame = Vec::Constant(n_nodes, geom.h_frame());
  g.k_frame = Vec::Constant(n_nodes, geom.k_frame());
  return g;
}

// Periodic flat strip of unit width and length L; curvatures vanish.
inline SurfaceGrid make_flat_strip_grid(double L, int n_nodes) {
  SurfaceGrid g;
  g.clamped = false;
  double h = L / n_nodes;
  g.nodes = Vec::LinSpaced(n_nodes, 0.0, L - h);
  g.w = Vec::Constant(n_nodes, h);
  detail::build_derivative_ops(n_nodes, h, true, g.D1, g.D2);
  g.Htt = g.D2;
  g.Hpp = Mat::Zero(n_nodes, n_nodes);
  g.h_frame = Vec::Zero(n_nodes);
  g.k_frame = Vec::Zero(n_nodes);
  return g;
}

// ---------------------------------------------------------------------------
// Strains: sigma(eta) = -h eta, xi(eta) = Hess(eta) - k eta (both diagonal
// in the frames used here).

struct StrainField {
  Vec tt, pp;
};

inline std::pair<StrainField, StrainField> linearized_strains(
    const SurfaceGrid& g, const Vec& eta) {
  StrainField sigma, xi;
  sigma.tt = -g.h_frame.cwiseProduct(eta);
  sigma.pp = sigma.tt;
  xi.tt = g.Htt * eta - g.k_frame.cwiseProduct(eta);
  xi.pp = g.Hpp * eta - g.k_frame.cwiseProduct(eta);
  return {sigma, xi};
}

// ---------------------------------------------------------------------------
// Koiter quadratic form. The assembled matrix k_mat satisfies
// K(eta, b) = eta^T k_mat b with K(eta,b) = 1/2 int_M eps0 <C, s(eta) s(b)>
// + (eps0^3/3) <C, xi(eta) xi(b)> dA.

struct KoiterForm {
  SurfaceGrid grid;
  ElasticParams params;
  Mat k_mat;

  double operator()(const Vec& eta, const Vec& b) const {
    return eta.dot(k_mat * b);
  }
};

inline KoiterForm make_koiter_form(const SurfaceGrid& g,
                                   const ElasticParams& p) {
  int n = g.n();
  Mat St = Mat::Zero(n, n);
  for (int j = 0; j < n; ++j) St(j, j) = -g.h_frame[j];
  Mat Sp = St;  // isotropic h on the sphere; zero on flat strips
  Mat K = Mat::Zero(n, n);
  Mat Xt = g.Htt, Xp = g.Hpp;
  for (int j = 0; j < n; ++j) {
    Xt(j, j) -= g.k_frame[j];
    Xp(j, j) -= g.k_frame[j];
  }
  Mat W = g.w.asDiagonal();
  double c1 = p.c1(), mu4 = 4.0 * p.mu;
  auto quad = [&](const Mat& At, const Mat& Ap) -> Mat {
    Mat tr = At + Ap;
    return c1 * tr.transpose() * W * tr +
           mu4 * (At.transpose() * W * At + Ap.transpose() * W * Ap);
  };
  K = 0.5 * (p.eps0 * quad(St, Sp) +
             (p.eps0 * p.eps0 * p.eps0 / 3.0) * quad(Xt, Xp));
  // exact symmetry despite roundoff
  K = 0.5 * (K + K.transpose()).eval();
  if (g.clamped) {
    K.row(0).setZero();
    K.col(0).setZero();
  }
  return {g, p, std::move(K)};
}

// Discrete Riesz representative of the first variation:
// (grad, b)_{L^2} = 2 K(eta, b) for all discrete b.
inline Vec koiter_gradient(const KoiterForm& kf, const Vec& eta) {
  int n = kf.grid.n();
  Vec grad = Vec::Zero(n);
  for (int j = 0; j < n; ++j) {
    if (kf.grid.clamped && j == 0) continue;
    if (kf.grid.w[j] <= 0.0)
      throw Error("koiter_gradient: singular mass matrix");
    grad[j] = 2.0 * (kf.k_mat.row(j) * eta)(0) / kf.grid.w[j];
  }
  return grad;
}

// Smallest Rayleigh quotient K(eta,eta)/||eta||_{H^2}^2 over the discrete
// clamped space.
inline double coercivity_constant(const KoiterForm& kf) {
  const SurfaceGrid& g = kf.grid;
  int n = g.n();
  Mat W = g.w.asDiagonal();
  Mat H2 = W + g.D1.transpose() * W * g.D1 / (g.R * g.R) +
           g.Htt.transpose() * W * g.Htt + g.Hpp.transpose() * W * g.Hpp;
  H2 = 0.5 * (H2 + H2.transpose()).eval();
  int lo = g.clamped ? 1 : 0;
  int m = n - lo;
  Mat A = kf.k_mat.block(lo, lo, m, m);
  Mat B = H2.block(lo, lo, m, m);
  // guard: H2 restricted must be positive definite
  Eigen::GeneralizedSelfAdjointEigenSolver<Mat> es(A, B);
  if (es.info() != Eigen::Success)
    throw Error("coercivity_constant: eigen solver failure");
  return es.eigenvalues()(0);
}

}  // namespace shellflow

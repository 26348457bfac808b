#pragma once

#include "shellflow/common.hpp"
#include "shellflow/fields.hpp"

namespace shellflow {

// ---------------------------------------------------------------------------
// Stokes system on the reference ball, homogeneous right-hand side,
// prescribed boundary velocity, pressure never formed.
//
// Axisymmetric solver: per Legendre mode l >= 1 the regular interior
// solutions have stream-function radial parts r^{l+1} and r^{l+3}; boundary
// velocities
//   u_r(R)     = (A R^{l-1} + B R^{l+1}) P_l(cos theta)
//   u_theta(R) = -((l+1) A R^{l-1} + (l+3) B R^{l+1}) G_{l+2...}
// are matched mode by mode (L^2(sin theta) projection of the datum), so the
// result is an exact Stokes field for the projected data and divergence-free
// identically. Swirl enters through harmonic toroidal modes t_l = c r^l.

class AxisymStokesSolver {
 public:
  AxisymStokesSolver(double R = 1.0, int lmax = 24, int n_quad = 256)
      : R_(R), lmax_(lmax), quad_(gauss_legendre(n_quad, 0.0, pi)) {}

  double radius() const { return R_; }
  int lmax() const { return lmax_; }

  double flux(const std::function<double(double)>& g_r) const {
    double f = 0.0;
    for (size_t i = 0; i < quad_.x.size(); ++i)
      f += quad_.w[i] * g_r(quad_.x[i]) * std::sin(quad_.x[i]);
    return 2.0 * pi * R_ * R_ * f;
  }

  // Full zonal datum (g_r, g_theta, g_phi), each a function of theta.
  StreamField solve(const std::function<double(double)>& g_r,
                    const std::function<double(double)>& g_t,
                    const std::function<double(double)>& g_p,
                    double flux_tol = 1e-8) const {
    double defect = flux(g_r);
    double scale = 0.0;
    for (size_t i = 0; i < quad_.x.size(); ++i)
      scale += quad_.w[i] * std::abs(g_r(quad_.x[i])) * std::sin(quad_.x[i]);
    scale = 2.0 * pi * R_ * R_ * scale + 1.0;
    if (std::abs(defect) > flux_tol * scale)
      throw IncompatibleFlux("solve_stokes: boundary flux defect " +
                             std::to_string(defect));

    StreamField out;
    for (int l = 1; l <= lmax_; ++l) {
      double gr = project(g_r, [&](double th) { return legendre(l, std::cos(th)); });
      double gt = project(g_t, [&](double th) { return gegenbauer_over_sin(l + 1, th); });
      double gp = project(g_p, [&](double th) {
        double z = std::cos(th), st = std::sin(th);
        return st < 1e-9 ? 0.0 : l * (legendre(l - 1, z) - z * legendre(l, z)) / st;
      });
      double rl1 = std::pow(R_, l - 1), rl3 = std::pow(R_, l + 1);
      if (std::abs(gr) > 1e-300 || std::abs(gt) > 1e-300) {
        // A R^{l-1} + B R^{l+1} = gr ; -( (l+1)A R^{l-1} + (l+3)B R^{l+1} ) = gt
        Eigen::Matrix2d M;
        M << rl1, rl3, -(l + 1.0) * rl1, -(l + 3.0) * rl3;
        Eigen::Vector2d rhs(gr, gt);
        Eigen::Vector2d AB = M.partialPivLu().solve(rhs);
        RadialPoly f = monomial(l + 1, AB[0]);
        f += monomial(l + 3, AB[1]);
        out.poloidal[l] += f;
      }
      if (std::abs(gp) > 1e-300)
        out.toroidal[l] += monomial(l, gp / std::pow(R_, l));
    }
    return out;
  }

  // Purely radial datum g(theta) r_hat (the production path for lifts and
  // boundary extensions).
  StreamField solve_radial(const std::function<double(double)>& g_r,
                           double flux_tol = 1e-8) const {
    auto zero = [](double) { return 0.0; };
    return solve(g_r, zero, zero, flux_tol);
  }

 private:
  template <class F, class G>
  double project(const F& g, const G& basis) const {
    double num = 0.0, den = 0.0;
    for (size_t i = 0; i < quad_.x.size(); ++i) {
      double th = quad_.x[i], s = std::sin(th), b = basis(th);
      num += quad_.w[i] * g(th) * b * s;
      den += quad_.w[i] * b * b * s;
    }
    return den < 1e-300 ? 0.0 : num / den;
  }

  double R_;
  int lmax_;
  Quadrature1D quad_;
};

// ---------------------------------------------------------------------------
// Full-3D mode: minimum-Dirichlet-energy fit over a dictionary of exactly
// divergence-free polynomial fields (curls of monomial fields). Used for
// non-zonal operator tests; the coupled solver itself is axisymmetric.

class PolyStokesSolver {
 public:
  struct Solution final : VectorField {
    const PolyStokesSolver* owner = nullptr;
    Vec coef;
    Vec3 eval(const Vec3& x) const override {
      Vec3 v = Vec3::Zero();
      for (int i = 0; i < coef.size(); ++i)
        if (coef[i] != 0.0) v += coef[i] * owner->dict_[i].eval(x);
      return v;
    }
    Mat3 gradient(const Vec3& x) const {
      Mat3 G = Mat3::Zero();
      for (int i = 0; i < coef.size(); ++i)
        if (coef[i] != 0.0) G += coef[i] * owner->dict_[i].gradient(x);
      return G;
    }
    double dirichlet_energy() const {
      return coef.dot(owner->energy_ * coef);
    }
  };

  explicit PolyStokesSolver(double R = 1.0, int degree = 3) : R_(R) {
    for (int t = 0; t <= degree; ++t)
      for (int a = 0; a <= t; ++a)
        for (int b = 0; a + b <= t; ++b)
          for (int i = 0; i < 3; ++i) {
            PolyField3 f = curl_monomial(a, b, t - a - b, i);
            bool zero = f.u[0].terms.empty() && f.u[1].terms.empty() &&
                        f.u[2].terms.empty();
            if (!zero) dict_.push_back(std::move(f));
          }
    build_quadrature(degree);
    build_grams();
  }

  int size() const { return (int)dict_.size(); }

  template <class G>
  double flux(const G& g) const {
    double f = 0.0;
    for (const auto& [q, w] : bnodes_) f += w * g(q).dot(q / q.norm());
    return f;
  }

  template <class G>
  Solution solve(const G& g, double flux_tol = 1e-8) const {
    double defect = flux(g);
    double scale = 1.0;
    for (const auto& [q, w] : bnodes_) scale += w * g(q).norm();
    if (std::abs(defect) > flux_tol * scale)
      throw IncompatibleFlux("solve_stokes: boundary flux defect " +
                             std::to_string(defect));
    int n = size();
    Vec rhs = Vec::Zero(n);
    for (const auto& [q, w] : bnodes_) {
      Vec3 gv = g(q);
      for (int i = 0; i < n; ++i) rhs[i] += w * gv.dot(dict_[i].eval(q));
    }
    // Split the boundary Gram into range and (trace-) null space, fit the
    // datum on the range, then minimize Dirichlet energy over the null space.
    Eigen::SelfAdjointEigenSolver<Mat> es(bound_);
    if (es.info() != Eigen::Success) throw SolverBreakdown();
    const Vec& ev = es.eigenvalues();
    double cut = 1e-11 * ev(n - 1);
    Vec c = Vec::Zero(n);
    std::vector<int> null_idx;
    for (int i = 0; i < n; ++i) {
      if (ev(i) > cut)
        c += es.eigenvectors().col(i) * (es.eigenvectors().col(i).dot(rhs) / ev(i));
      else
        null_idx.push_back(i);
    }
    if (!null_idx.empty()) {
      Mat Vn(n, (int)null_idx.size());
      for (size_t k = 0; k < null_idx.size(); ++k)
        Vn.col(k) = es.eigenvectors().col(null_idx[k]);
      Mat A = Vn.transpose() * energy_ * Vn;
      A.diagonal().array() += 1e-12 * (energy_.trace() / n + 1.0);
      Vec z = A.ldlt().solve(-Vn.transpose() * (energy_ * c));
      c += Vn * z;
    }
    Solution s;
    s.owner = this;
    s.coef = std::move(c);
    return s;
  }

 private:
  void build_quadrature(int degree) {
    int nz = 2 * degree + 6;
    int np = 4 * degree + 8;
    auto qz = gauss_legendre(nz, -1.0, 1.0);
    for (int i = 0; i < nz; ++i)
      for (int j = 0; j < np; ++j) {
        double z = qz.x[i], s = std::sqrt(1.0 - z * z);
        double phi = 2.0 * pi * j / np;
        Vec3 q(R_ * s * std::cos(phi), R_ * s * std::sin(phi), R_ * z);
        bnodes_.push_back({q, R_ * R_ * qz.w[i] * 2.0 * pi / np});
      }
    auto qr = gauss_legendre(degree + 4, 0.0, R_);
    for (size_t b = 0; b < bnodes_.size(); ++b)
      for (size_t k = 0; k < qr.x.size(); ++k) {
        double r = qr.x[k];
        Vec3 x = bnodes_[b].first * (r / R_);
        double w = bnodes_[b].second / (R_ * R_) * r * r * qr.w[k];
        vnodes_.push_back({x, w});
      }
  }

  void build_grams() {
    int n = size();
    bound_ = Mat::Zero(n, n);
    energy_ = Mat::Zero(n, n);
    std::vector<Vec3> vals(n);
    for (const auto& [q, w] : bnodes_) {
      for (int i = 0; i < n; ++i) vals[i] = dict_[i].eval(q);
      for (int i = 0; i < n; ++i)
        for (int j = i; j < n; ++j) bound_(i, j) += w * vals[i].dot(vals[j]);
    }
    std::vector<Mat3> grads(n);
    for (const auto& [x, w] : vnodes_) {
      for (int i = 0; i < n; ++i) grads[i] = dict_[i].gradient(x);
      for (int i = 0; i < n; ++i)
        for (int j = i; j < n; ++j)
          energy_(i, j) += w * (grads[i].cwiseProduct(grads[j])).sum();
    }
    bound_ = bound_.selfadjointView<Eigen::Upper>();
    energy_ = energy_.selfadjointView<Eigen::Upper>();
  }

  double R_;
  std::vector<PolyField3> dict_;
  std::vector<std::pair<Vec3, double>> bnodes_, vnodes_;
  Mat bound_, energy_;

  friend struct Solution;
};

}  // namespace shellflow

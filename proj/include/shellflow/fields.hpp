#pragma once

#include <map>

#include "shellflow/common.hpp"

namespace shellflow {

// ---------------------------------------------------------------------------
// Generic vector fields and finite-difference helpers.

struct VectorField {
  virtual ~VectorField() = default;
  virtual Vec3 eval(const Vec3& x) const = 0;
};

template <class F>
inline Mat3 fd_gradient(const F& f, const Vec3& x, double h) {
  Mat3 G;
  for (int d = 0; d < 3; ++d) {
    Vec3 e = Vec3::Zero();
    e[d] = h;
    G.col(d) = (f(x + e) - f(x - e)) / (2.0 * h);
  }
  return G;  // G(i,j) = d u_i / d x_j
}

template <class F>
inline double fd_divergence(const F& f, const Vec3& x, double h) {
  double div = 0.0;
  for (int d = 0; d < 3; ++d) {
    Vec3 e = Vec3::Zero();
    e[d] = h;
    div += (f(x + e)[d] - f(x - e)[d]) / (2.0 * h);
  }
  return div;
}

// ---------------------------------------------------------------------------
// Axisymmetric fields about the z-axis, built from a Stokes stream function
//
//   psi(r, theta) = sum_l f_l(r) G_{l+1}(cos theta),
//   u_r = f_l(r)/r^2 P_l,   u_theta = -f_l'(r)/(r sin theta) G_{l+1},
//
// which is divergence-free identically, plus an optional toroidal (swirl)
// part u_phi = t_l(r) sin(theta) P_l'(cos theta) (also divergence-free).
// The radial factors are polynomials; regularity at the origin requires the
// lowest power of f_l to be at least l+1 and of t_l at least l.

struct StreamField final : VectorField {
  std::map<int, RadialPoly> poloidal;  // l -> f_l
  std::map<int, RadialPoly> toroidal;  // l -> t_l

  bool empty() const { return poloidal.empty() && toroidal.empty(); }

  // velocity in spherical components at (r, theta)
  void spherical(double r, double theta, double& ur, double& ut,
                 double& up) const {
    ur = ut = up = 0.0;
    double rr = std::max(r, 1e-12);
    double z = std::cos(theta);
    int lmax = 0;
    for (auto& [l, f] : poloidal) lmax = std::max(lmax, l);
    for (auto& [l, f] : toroidal) lmax = std::max(lmax, l);
    std::vector<double> P;
    legendre_all(lmax + 1, z, P);
    for (auto& [l, f] : poloidal) {
      ur += f.eval(rr) / (rr * rr) * P[l];
      ut -= f.deriv().eval(rr) / rr * gegenbauer_over_sin(l + 1, theta);
    }
    double st = std::sin(theta);
    for (auto& [l, t] : toroidal) {
      // sin(theta) P_l'(z) = l (P_{l-1} - z P_l) / sin(theta), safe at poles
      double sp = (st < 1e-9)
                      ? 0.0
                      : l * (P[l - 1] - z * P[l]) / st;
      up += t.eval(rr) * sp;
    }
  }

  Vec3 eval(const Vec3& x) const override {
    double r = x.norm();
    double theta = (r < 1e-14) ? 0.0 : std::acos(std::clamp(x.z() / r, -1.0, 1.0));
    double phi = std::atan2(x.y(), x.x());
    double ur, ut, up;
    spherical(r, theta, ur, ut, up);
    double st = std::sin(theta), ct = std::cos(theta);
    double cp = std::cos(phi), sp = std::sin(phi);
    Vec3 rh(st * cp, st * sp, ct);
    Vec3 th(ct * cp, ct * sp, -st);
    Vec3 ph(-sp, cp, 0.0);
    return ur * rh + ut * th + up * ph;
  }

  StreamField& axpy(double a, const StreamField& o) {
    for (auto& [l, f] : o.poloidal) poloidal[l] += f.scaled(a);
    for (auto& [l, t] : o.toroidal) toroidal[l] += t.scaled(a);
    return *this;
  }
};

// ---------------------------------------------------------------------------
// Trivariate polynomial vector fields with analytic gradients; used for the
// full-3D divergence-free dictionary.

struct Poly3 {
  struct Mono {
    int a, b, c;
    double coef;
  };
  std::vector<Mono> terms;

  static double ipow(double x, int n) {
    double v = 1.0;
    for (int i = 0; i < n; ++i) v *= x;
    return v;
  }
  double eval(const Vec3& x) const {
    double v = 0.0;
    for (const auto& m : terms)
      v += m.coef * ipow(x.x(), m.a) * ipow(x.y(), m.b) * ipow(x.z(), m.c);
    return v;
  }
  Poly3 deriv(int d) const {
    Poly3 out;
    for (const auto& m : terms) {
      int e[3] = {m.a, m.b, m.c};
      if (e[d] == 0) continue;
      double c = m.coef * e[d];
      e[d] -= 1;
      out.terms.push_back({e[0], e[1], e[2], c});
    }
    return out;
  }
};

struct PolyField3 final : VectorField {
  Poly3 u[3];

  Vec3 eval(const Vec3& x) const override {
    return Vec3(u[0].eval(x), u[1].eval(x), u[2].eval(x));
  }
  Mat3 gradient(const Vec3& x) const {
    Mat3 G;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) G(i, j) = u[i].deriv(j).eval(x);
    return G;
  }
};

// curl of the monomial vector field x^a y^b z^c e_i; exactly divergence-free.
inline PolyField3 curl_monomial(int a, int b, int c, int i) {
  Poly3 comp;
  comp.terms.push_back({a, b, c, 1.0});
  Poly3 A[3];
  A[i] = comp;
  PolyField3 f;
  f.u[0] = A[2].deriv(1);
  for (auto& m : A[1].deriv(2).terms) f.u[0].terms.push_back({m.a, m.b, m.c, -m.coef});
  f.u[1] = A[0].deriv(2);
  for (auto& m : A[2].deriv(0).terms) f.u[1].terms.push_back({m.a, m.b, m.c, -m.coef});
  f.u[2] = A[1].deriv(0);
  for (auto& m : A[0].deriv(1).terms) f.u[2].terms.push_back({m.a, m.b, m.c, -m.coef});
  return f;
}

}  // namespace shellflow

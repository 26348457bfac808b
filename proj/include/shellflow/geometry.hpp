#pragma once

#include <array>
#include <map>
#include <memory>

#include "shellflow/common.hpp"

namespace shellflow {

// ---------------------------------------------------------------------------
// Reference surface: the sphere of radius R, boundary of the ball Omega.
// The fixed region Gamma is the polar cap {theta <= theta_gamma} around +e3,
// the elastic region M is its complement.
//
// Sign convention: the shape operator is -d(nu), so the sphere with outer
// normal has h = -(1/R) g in an orthonormal tangent frame, H = -1/R, G = 1/R^2.

struct SphereGeometry {
  double R = 1.0;
  double theta_gamma = pi / 6.0;

  double kappa() const { return R; }
  Vec3 normal(const Vec3& q) const { return q / q.norm(); }
  double mean_curvature() const { return -1.0 / R; }
  double gauss_curvature() const { return 1.0 / (R * R); }
  // Orthonormal-frame entries of h and k = h.h (both isotropic on the sphere)
  double h_frame() const { return -1.0 / R; }
  double k_frame() const { return 1.0 / (R * R); }

  double colatitude(const Vec3& q) const {
    return std::acos(std::clamp(q.z() / q.norm(), -1.0, 1.0));
  }
  bool in_gamma(const Vec3& q) const { return colatitude(q) <= theta_gamma; }
  double area() const { return 4.0 * pi * R * R; }
};

// gamma(eta) = 1 - 2 H eta + G eta^2, the area-element ratio of Phi_eta.
inline double gamma_factor(const SphereGeometry& geom, double eta) {
  return 1.0 - 2.0 * geom.mean_curvature() * eta +
         geom.gauss_curvature() * eta * eta;
}

// tau(eta) = (1 - ||eta||_inf/kappa)^{-1}, infinity sentinel otherwise.
inline double tau_margin(const SphereGeometry& geom, double eta_sup) {
  double r = eta_sup / geom.kappa();
  if (r >= 1.0) return std::numeric_limits<double>::infinity();
  return 1.0 / (1.0 - r);
}

// ---------------------------------------------------------------------------
// Tubular-neighborhood decomposition x = q + s nu(q), |s| < kappa, s < 0
// inside Omega. For the ball this is the radial decomposition.

struct TubularPoint {
  Vec3 q;
  double s;
};

inline TubularPoint tubular_decompose(const SphereGeometry& geom,
                                      const Vec3& x) {
  double r = x.norm();
  double s = r - geom.R;
  if (std::abs(s) >= geom.kappa() || r < 1e-14)
    throw OutsideTubular("tubular_decompose: point outside the tubular band");
  return {geom.R / r * x, s};
}

// ---------------------------------------------------------------------------
// Cutoff profile beta on [-1, 0]: 0 near -1, 1 near 0, monotone, C^2, with
// sup|beta'| strictly below 1/ratio. The derivative is a plateau trapezoid
// with quintic-smoothstep ramps; plateau and ramp widths shrink as the
// ratio approaches 1 so that the peak slope 1/(1 - m/2) stays admissible
// (m = 1 - ratio). A fixed profile cannot work for every ratio: the mean
// value theorem forces sup|beta'| >= 1.

struct CutoffProfile {
  double plateau = 0.075;   // width of the constant pieces at both ends
  double ramp = 0.15;       // width of each smoothstep ramp of beta'
  double slope = 0.0;       // peak |beta'|
  double ratio_bound = 0.0; // the ratio this profile was built for

  static double smoothstep(double x) {
    x = std::clamp(x, 0.0, 1.0);
    return x * x * x * (10.0 + x * (-15.0 + 6.0 * x));
  }
  static double smoothstep_integral(double x) {
    x = std::clamp(x, 0.0, 1.0);
    double x4 = x * x * x * x;
    return x4 * (2.5 + x * (-3.0 + x));
  }

  double value(double u) const {
    if (u <= -1.0 + plateau) return 0.0;
    if (u >= -plateau) return 1.0;
    double lo = -1.0 + plateau;
    if (u <= lo + ramp)
      return slope * ramp * smoothstep_integral((u - lo) / ramp);
    double hi = -plateau;
    if (u >= hi - ramp)
      return 1.0 - slope * ramp * smoothstep_integral((hi - u) / ramp);
    return slope * (ramp / 2.0 + (u - lo - ramp));
  }

  double deriv(double u) const {
    if (u <= -1.0 + plateau || u >= -plateau) return 0.0;
    double lo = -1.0 + plateau;
    if (u <= lo + ramp) return slope * smoothstep((u - lo) / ramp);
    double hi = -plateau;
    if (u >= hi - ramp) return slope * smoothstep((hi - u) / ramp);
    return slope;
  }
};

inline CutoffProfile make_cutoff(double ratio) {
  if (ratio < 0.0 || ratio >= 1.0)
    throw RatioTooLarge("make_cutoff: need 0 <= ratio < 1");
  double m = 1.0 - std::max(ratio, 0.4);
  CutoffProfile p;
  p.plateau = m / 8.0;
  p.ramp = m / 4.0;
  p.slope = 1.0 / (1.0 - 2.0 * p.plateau - p.ramp);
  p.ratio_bound = ratio;
  return p;
}

// ---------------------------------------------------------------------------
// Scalar displacement fields on the sphere, with tangential surface gradient.

struct SurfaceDisplacement {
  virtual ~SurfaceDisplacement() = default;
  virtual double value(const Vec3& q) const = 0;
  virtual Vec3 gradient(const Vec3& q) const = 0;
  virtual double sup_norm() const = 0;
};

struct ZeroDisplacement final : SurfaceDisplacement {
  double value(const Vec3&) const override { return 0.0; }
  Vec3 gradient(const Vec3&) const override { return Vec3::Zero(); }
  double sup_norm() const override { return 0.0; }
};

// eta given as an ambient function restricted to the sphere; the surface
// gradient is the tangential projection of the ambient gradient.
struct AmbientDisplacement final : SurfaceDisplacement {
  std::function<double(const Vec3&)> f;
  std::function<Vec3(const Vec3&)> grad_f;
  double sup = 0.0;

  double value(const Vec3& q) const override { return f(q); }
  Vec3 gradient(const Vec3& q) const override {
    Vec3 n = q / q.norm();
    Vec3 g = grad_f(q);
    return g - n.dot(g) * n;
  }
  double sup_norm() const override { return sup; }
};

// Axisymmetric (zonal) displacement eta(theta) with derivative in theta.
struct ZonalDisplacement final : SurfaceDisplacement {
  std::function<double(double)> f;       // eta(theta)
  std::function<double(double)> df;      // d eta / d theta
  double sup = 0.0;
  double R = 1.0;

  double value(const Vec3& q) const override {
    return f(std::acos(std::clamp(q.z() / q.norm(), -1.0, 1.0)));
  }
  Vec3 gradient(const Vec3& q) const override {
    double r = q.norm();
    double ct = std::clamp(q.z() / r, -1.0, 1.0);
    double st = std::sqrt(std::max(0.0, 1.0 - ct * ct));
    if (st < 1e-12) return Vec3::Zero();
    double theta = std::acos(ct);
    // unit vector e_theta at q
    double phi = std::atan2(q.y(), q.x());
    Vec3 et(ct * std::cos(phi), ct * std::sin(phi), -st);
    return df(theta) / R * et;
  }
  double sup_norm() const override { return sup; }
};

// ---------------------------------------------------------------------------
// Hanzawa transform Psi_eta(x) = x + nu(q(x)) eta(q(x)) beta(s(x)/kappa) on
// the closed ball, identity near the center (beta vanishes near -1).

struct HanzawaMap {
  SphereGeometry geom;
  std::shared_ptr<const SurfaceDisplacement> eta;
  CutoffProfile beta;

  struct ForwardResult {
    Vec3 y;
    Mat3 J;
    double detJ;
  };

  bool admissible() const {
    return eta->sup_norm() < geom.kappa() &&
           eta->sup_norm() / geom.kappa() <= beta.ratio_bound + 1e-12;
  }

  ForwardResult forward(const Vec3& x) const {
    double r = x.norm();
    double kap = geom.kappa();
    if (r > geom.R + 1e-12)
      throw OutsideDomain("hanzawa_forward: point outside the closed ball");
    ForwardResult out;
    if (r < 1e-12 || beta.value((r - geom.R) / kap) == 0.0) {
      // identity region (includes a neighborhood of the center)
      double b = (r < 1e-12) ? 0.0 : beta.value((r - geom.R) / kap);
      if (b == 0.0) {
        out.y = x;
        out.J = Mat3::Identity();
        out.detJ = 1.0;
        return out;
      }
    }
    Vec3 xh = x / r;
    Vec3 q = geom.R * xh;
    double s = r - geom.R;
    double e = eta->value(q);
    Vec3 ge = eta->gradient(q);
    double b = beta.value(s / kap);
    double db = beta.deriv(s / kap);

    out.y = x + xh * (e * b);
    Mat3 P = Mat3::Identity() - xh * xh.transpose();
    out.J = Mat3::Identity() + (e * b / r) * P +
            b * (xh * (geom.R / r * ge).transpose()) +
            (e * db / kap) * (xh * xh.transpose());
    out.detJ = out.J.determinant();
    return out;
  }

  // Damped Newton seeded by the tubular decomposition of y.
  Vec3 inverse(const Vec3& y, double tol = 1e-12, int max_iters = 50) const {
    double ry = y.norm();
    Vec3 x;
    if (ry < 1e-12) {
      x = y;
    } else {
      Vec3 yh = y / ry;
      Vec3 q = geom.R * yh;
      double s_guess = (ry - geom.R) - eta->value(q);
      s_guess = std::clamp(s_guess, -0.999 * geom.kappa(), 0.0);
      x = (geom.R + s_guess) * yh;
    }
    double res = std::numeric_limits<double>::infinity();
    for (int it = 0; it < max_iters; ++it) {
      ForwardResult f = forward(x);
      Vec3 g = f.y - y;
      res = g.norm();
      if (res < tol) return x;
      Vec3 step = f.J.partialPivLu().solve(g);
      double damp = 1.0;
      for (int k = 0; k < 20; ++k) {
        Vec3 xn = x - damp * step;
        double rn = xn.norm();
        if (rn > geom.R) xn *= geom.R / rn;  // stay in the closed ball
        ForwardResult fn = forward(xn);
        if ((fn.y - y).norm() < res) {
          x = xn;
          break;
        }
        damp *= 0.5;
        if (k == 19)
          throw NoConvergence("hanzawa_inverse: damping stalled");
      }
    }
    if (res < 1e2 * tol) return x;
    throw NoConvergence("hanzawa_inverse: Newton did not converge");
  }
};

inline HanzawaMap make_hanzawa(const SphereGeometry& geom,
                               std::shared_ptr<const SurfaceDisplacement> eta) {
  double ratio = eta->sup_norm() / geom.kappa();
  if (ratio >= 1.0)
    throw InadmissibleDisplacement("make_hanzawa: ||eta|| >= kappa");
  return HanzawaMap{geom, std::move(eta), make_cutoff(std::min(ratio + 0.02, 0.995))};
}

// ---------------------------------------------------------------------------
// Triangulated sphere (subdivided icosahedron) for full-3D surface
// quadrature: midpoint rule over flat faces.

struct TriangulatedSphere {
  std::vector<Vec3> vertices;              // on the sphere of radius R
  std::vector<std::array<int, 3>> faces;

  Vec3 centroid(int f) const {
    const auto& t = faces[f];
    return (vertices[t[0]] + vertices[t[1]] + vertices[t[2]]) / 3.0;
  }
  double face_area(int f) const {
    const auto& t = faces[f];
    return 0.5 * (vertices[t[1]] - vertices[t[0]])
                     .cross(vertices[t[2]] - vertices[t[0]])
                     .norm();
  }
};

inline TriangulatedSphere triangulate_sphere(double R, int subdivisions) {
  const double g = (1.0 + std::sqrt(5.0)) / 2.0;
  std::vector<Vec3> v = {
      {-1, g, 0}, {1, g, 0}, {-1, -g, 0}, {1, -g, 0},
      {0, -1, g}, {0, 1, g}, {0, -1, -g}, {0, 1, -g},
      {g, 0, -1}, {g, 0, 1}, {-g, 0, -1}, {-g, 0, 1}};
  for (auto& p : v) p.normalize();
  std::vector<std::array<int, 3>> f = {
      {0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11},
      {1, 5, 9},  {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
      {3, 9, 4},  {3, 4, 2},  {3, 2, 6},   {3, 6, 8},  {3, 8, 9},
      {4, 9, 5},  {2, 4, 11}, {6, 2, 10},  {8, 6, 7},  {9, 8, 1}};
  for (int s = 0; s < subdivisions; ++s) {
    std::map<std::pair<int, int>, int> midpoint;
    auto mid = [&](int a, int b) {
      auto key = std::minmax(a, b);
      auto it = midpoint.find(key);
      if (it != midpoint.end()) return it->second;
      Vec3 m = (v[a] + v[b]).normalized();
      v.push_back(m);
      int idx = (int)v.size() - 1;
      midpoint[key] = idx;
      return idx;
    };
    std::vector<std::array<int, 3>> nf;
    nf.reserve(4 * f.size());
    for (const auto& t : f) {
      int a = mid(t[0], t[1]), b = mid(t[1], t[2]), c = mid(t[2], t[0]);
      nf.push_back({t[0], a, c});
      nf.push_back({t[1], b, a});
      nf.push_back({t[2], c, b});
      nf.push_back({a, b, c});
    }
    f = std::move(nf);
  }
  TriangulatedSphere ts;
  ts.vertices = std::move(v);
  for (auto& p : ts.vertices) p *= R;
  ts.faces = std::move(f);
  return ts;
}

}  // namespace shellflow

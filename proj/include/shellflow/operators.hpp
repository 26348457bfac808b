#pragma once

#include "shellflow/geometry.hpp"
#include "shellflow/stokes.hpp"

namespace shellflow {

// ---------------------------------------------------------------------------
// Variable-domain operator toolkit: Piola pushforward between the reference
// ball and the deformed domain, divergence-free extension of normal boundary
// data, the gamma-weighted mean corrector, traces, and the
// integration-by-parts defect used as a discretization diagnostic.
//
// Zonal scalar data on the shell part M = {theta >= theta_gamma} of the
// sphere are plain functions of colatitude.

using ZonalFn = std::function<double(double)>;

// -div of the outward unit normal field nu(q(x)); on the sphere -2/r.
inline double normal_divergence(const SphereGeometry&, const Vec3& x) {
  double r = x.norm();
  if (r < 1e-14) throw OutsideTubular("normal_divergence at the center");
  return -2.0 / r;
}

// exp of the line integral of normal_divergence along the outward ray,
// from normal offset s0 to s1. Closed form on the sphere; the quadrature
// path is kept as an oracle for the tests.
inline double layer_factor(const SphereGeometry& g, double s0, double s1) {
  double a = g.R + s0, b = g.R + s1;
  if (a <= 0.0 || b <= 0.0) throw OutsideTubular("layer_factor: ray leaves the tubular region");
  return (a * a) / (b * b);
}

inline double layer_factor_quadrature(const SphereGeometry& g, double s0,
                                      double s1, int n = 64) {
  auto q = gauss_legendre(n, s0, s1);
  double I = 0.0;
  for (size_t i = 0; i < q.x.size(); ++i)
    I += q.w[i] * (-2.0 / (g.R + q.x[i]));
  return std::exp(I);
}

// gamma-weighted compatibility functional a(b, eta) = int_M b gamma(eta) dA.
inline double compat_mean(const SphereGeometry& g, const ZonalFn& b,
                          const ZonalFn& eta, int n_quad = 256) {
  auto q = gauss_legendre(n_quad, g.theta_gamma, pi);
  double I = 0.0;
  for (size_t i = 0; i < q.x.size(); ++i) {
    double th = q.x[i], e = eta(th);
    double gamma = (1.0 + e / g.R) * (1.0 + e / g.R);
    I += q.w[i] * b(th) * gamma * std::sin(th);
  }
  return 2.0 * pi * g.R * g.R * I;
}

// ---------------------------------------------------------------------------
// Piola pushforward T_eta and its inverse. Fields are plain callables
// Vec3 -> Vec3; the returned callables live on the other domain.

template <class F>
auto pushforward(const HanzawaMap& map, F phi) {
  if (map.eta->sup_norm() >= map.geom.kappa())
    throw InadmissibleDisplacement("pushforward: displacement reaches the tubular radius");
  return [map, phi = std::move(phi)](const Vec3& y) -> Vec3 {
    Vec3 x = map.inverse(y);
    auto fr = map.forward(x);
    return (fr.J * phi(x)) / fr.detJ;
  };
}

template <class F>
auto inverse_pushforward(const HanzawaMap& map, F v) {
  if (map.eta->sup_norm() >= map.geom.kappa())
    throw InadmissibleDisplacement("inverse_pushforward: displacement reaches the tubular radius");
  return [map, v = std::move(v)](const Vec3& x) -> Vec3 {
    auto fr = map.forward(x);
    return fr.detJ * fr.J.partialPivLu().solve(v(fr.y));
  };
}

// ---------------------------------------------------------------------------
// Divergence-free extension of a normal boundary datum b nu on the deformed
// boundary. In the shell layer |r - R| <= alpha the field is the exponential
// layer formula b(q) (R+eta(q))^2 / r^2 r_hat; inside r < R - alpha it is
// the Stokes solve taking the layer values on that inner sphere exactly.

struct ExtendedField {
  SphereGeometry geom;
  ZonalFn b, eta;
  double alpha = 0.0;
  double r_split = 0.0;  // R - alpha
  StreamField interior;

  Vec3 eval(const Vec3& x) const {
    double r = x.norm();
    if (r > geom.R + alpha + 1e-12)
      throw OutsideDomain("extend_boundary field evaluated outside B_alpha");
    if (r >= r_split) {
      double th = (r < 1e-14) ? 0.0
                              : std::acos(std::clamp(x.z() / r, -1.0, 1.0));
      double e = eta(th);
      double Re = geom.R + e;
      return b(th) * (Re * Re) / (r * r) * (x / r);
    }
    return interior.eval(x);
  }
  Vec3 operator()(const Vec3& x) const { return eval(x); }
};

inline double default_alpha(const SphereGeometry& g, double eta_sup,
                            double fraction = 0.5) {
  return eta_sup + fraction * (g.kappa() - eta_sup);
}

inline ExtendedField extend_boundary(const SphereGeometry& g, const ZonalFn& b,
                                     const ZonalFn& eta, double alpha,
                                     double mean_tol = 1e-8, int lmax = 24) {
  double sup = 0.0;
  for (int i = 0; i <= 200; ++i) {
    double th = g.theta_gamma + (pi - g.theta_gamma) * i / 200.0;
    sup = std::max(sup, std::abs(eta(th)));
  }
  if (!(sup < alpha && alpha < g.kappa()))
    throw InadmissibleDisplacement("extend_boundary: need |eta| < alpha < kappa");
  if (g.theta_gamma > 1e-12) {
    for (int i = 0; i < 8; ++i) {
      double th = g.theta_gamma * i / 8.0;
      if (std::abs(b(th)) > 1e-10)
        throw Error("extend_boundary: datum does not vanish on the clamped part");
    }
  }
  double defect = compat_mean(g, b, eta);
  if (std::abs(defect) > mean_tol)
    throw IncompatibleMean("extend_boundary: weighted mean " + std::to_string(defect));

  ExtendedField F;
  F.geom = g;
  F.b = b;
  F.eta = eta;
  F.alpha = alpha;
  F.r_split = g.R - alpha;
  double rs = F.r_split;
  AxisymStokesSolver solver(rs, lmax);
  auto g_inner = [&](double th) {
    double e = (th >= g.theta_gamma) ? eta(th) : 0.0;
    double Re = g.R + e;
    double bb = (th >= g.theta_gamma) ? b(th) : 0.0;
    return bb * (Re * Re) / (rs * rs);
  };
  // flux already certified through the gamma-weighted mean; pass a loose
  // tolerance so quadrature noise cannot trip the inner solve
  F.interior = solver.solve_radial(g_inner, 1e-6);
  return F;
}

// ---------------------------------------------------------------------------
// Mean corrector: affine projection onto the kernel of a(., eta).

inline ZonalFn default_bump(const SphereGeometry& g) {
  double radius = pi / 4.0;
  return [radius](double th) {
    double u = (pi - th) / radius;
    return (std::abs(u) < 1.0) ? bump(u) : 0.0;
  };
}

inline ZonalFn mean_correct(const SphereGeometry& g, const ZonalFn& b,
                            const ZonalFn& eta, const ZonalFn& psi_bump,
                            double bump_threshold = 1e-8) {
  double apsi = compat_mean(g, psi_bump, eta);
  if (apsi <= bump_threshold)
    throw DegenerateBump("mean_correct: bump has near-zero weighted mean");
  double c = compat_mean(g, b, eta) / apsi;
  return [b, psi_bump, c](double th) { return b(th) - c * psi_bump(th); };
}

// ---------------------------------------------------------------------------
// Trace of a field on the deformed domain, pulled back to the reference
// boundary: q -> v(Psi_eta(q)).

template <class F>
auto surface_trace(const HanzawaMap& map, F v) {
  return [map, v = std::move(v)](const Vec3& q) -> Vec3 {
    return v(map.forward(q).y);
  };
}

// zonal version for fields on the star-shaped deformed ball
template <class F>
auto surface_trace_zonal(const SphereGeometry& g, const ZonalFn& eta, F v) {
  return [g, eta, v = std::move(v)](double th) -> Vec3 {
    double rho = g.R + ((th >= g.theta_gamma) ? eta(th) : 0.0);
    Vec3 q(rho * std::sin(th), 0.0, rho * std::cos(th));
    return v(q);
  };
}

// ---------------------------------------------------------------------------
// Integration-by-parts defect on the deformed (star-shaped, zonal) domain:
//   int phi . grad psi + (div phi) psi dx  -  int_M b gamma(eta) (tr psi) dA.
// The domain is { r < R + eta(theta) }; the radial quadrature is split at
// r_split where extension fields have a derivative kink.

struct IbpQuadrature {
  int n_theta = 192;
  int n_r = 48;
  double fd_h = 1e-5;
  double r_split = -1.0;  // < 0 disables the split
};

template <class Phi, class Psi>
double ibp_defect(const SphereGeometry& g, Phi&& phi, Psi&& psi,
                  const ZonalFn& b, const ZonalFn& eta,
                  const IbpQuadrature& qp = {}, double trace_tol = 1e-6) {
  // split at theta_gamma: the boundary radius has limited smoothness there
  Quadrature1D qt;
  if (g.theta_gamma > 1e-12) {
    auto qa = gauss_legendre(std::max(4, qp.n_theta / 4), 0.0, g.theta_gamma);
    auto qb = gauss_legendre(qp.n_theta, g.theta_gamma, pi);
    qt.x = qa.x;
    qt.w = qa.w;
    qt.x.insert(qt.x.end(), qb.x.begin(), qb.x.end());
    qt.w.insert(qt.w.end(), qb.w.begin(), qb.w.end());
  } else {
    qt = gauss_legendre(qp.n_theta, 0.0, pi);
  }
  double vol = 0.0, surf = 0.0;
  double scale = 0.0;
  for (size_t i = 0; i < qt.x.size(); ++i) {
    double th = qt.x[i];
    double e = (th >= g.theta_gamma) ? eta(th) : 0.0;
    double rho = g.R + e;
    Vec3 dir(std::sin(th), 0.0, std::cos(th));

    // normal-trace precondition on the shell part
    if (th >= g.theta_gamma) {
      Vec3 pb = phi(dir * (rho * (1.0 - 1e-9)));
      Vec3 tang = pb - pb.dot(dir) * dir;
      scale = std::max(scale, pb.norm());
      if (tang.norm() > trace_tol * (1.0 + pb.norm()))
        throw NonNormalTrace("ibp_defect: boundary trace has a tangential part");
    }

    auto radial = [&](double r0, double r1) {
      auto qr = gauss_legendre(qp.n_r, r0, r1);
      double acc = 0.0;
      for (size_t k = 0; k < qr.x.size(); ++k) {
        double r = qr.x[k];
        Vec3 x = r * dir;
        Vec3 gpsi;
        double div = 0.0;
        for (int d = 0; d < 3; ++d) {
          Vec3 eh = Vec3::Zero();
          eh[d] = qp.fd_h;
          gpsi[d] = (psi(x + eh) - psi(x - eh)) / (2.0 * qp.fd_h);
          div += (phi(x + eh)[d] - phi(x - eh)[d]) / (2.0 * qp.fd_h);
        }
        acc += qr.w[k] * r * r * (phi(x).dot(gpsi) + div * psi(x));
      }
      return acc;
    };
    double inner = 0.0;
    if (qp.r_split > 0.0 && qp.r_split < rho) {
      inner = radial(1e-6, qp.r_split) + radial(qp.r_split, rho);
    } else {
      inner = radial(1e-6, rho);
    }
    vol += 2.0 * pi * qt.w[i] * std::sin(th) * inner;

    if (th >= g.theta_gamma) {
      double gamma = (1.0 + e / g.R) * (1.0 + e / g.R);
      surf += 2.0 * pi * g.R * g.R * qt.w[i] * std::sin(th) * b(th) * gamma *
              psi(rho * dir);
    }
  }
  return vol - surf;
}

}  // namespace shellflow

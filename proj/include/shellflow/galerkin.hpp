#pragma once

#include "shellflow/operators.hpp"
#include "shellflow/shell.hpp"

namespace shellflow {

// ---------------------------------------------------------------------------
// Divergence-free time-dependent Galerkin basis and the linear
// integro-differential system it produces. The moving-domain fields are the
// Piola pushforwards of fixed reference fields; all volume integrals are
// mapped back to the reference ball through the Hanzawa map, so no remeshing
// ever happens.

struct GalerkinConfig {
  int n_surface = 8;
  int n_interior = 8;
  double dt = 1e-3;
  double horizon = 1.0;
  int n_theta_grid = 97;   // shell grid nodes
  int quad_theta = 48;     // meridian quadrature, polar direction
  int quad_r = 28;         // meridian quadrature, radial direction (total)
  int stokes_lmax = 24;
  int stokes_quad = 200;     // projection quadrature of the lift solver
  double stokes_tol = 1e-6;  // flux tolerance of the lift solves
  double fd_x = 2e-4;      // spatial stencil step for pushforward gradients
};

// ---------------------------------------------------------------------------
// Time-dependent displacement and background-velocity inputs of the
// decoupled problem.

struct DisplacementPath {
  virtual ~DisplacementPath() = default;
  virtual double value(double t, double theta) const = 0;
  virtual double d_theta(double t, double theta) const = 0;
  virtual double d_t(double t, double theta) const = 0;
  // sup over the whole boundary sphere (mollified paths are nonzero on the
  // clamped part too)
  double sup(double t, const SphereGeometry&, int samples = 192) const {
    double s = 0.0;
    for (int i = 0; i <= samples; ++i)
      s = std::max(s, std::abs(value(t, pi * i / samples)));
    return s;
  }
};

struct StaticPath final : DisplacementPath {
  ZonalFn f, df;
  StaticPath() {
    f = [](double) { return 0.0; };
    df = f;
  }
  StaticPath(ZonalFn f_, ZonalFn df_) : f(std::move(f_)), df(std::move(df_)) {}
  double value(double, double th) const override { return f(th); }
  double d_theta(double, double th) const override { return df(th); }
  double d_t(double, double) const override { return 0.0; }
};

struct VelocityPath {
  virtual ~VelocityPath() = default;
  virtual Vec3 eval(double t, const Vec3& y) const = 0;
};

struct Forcing {
  std::function<Vec3(double, const Vec3&)> f;  // volume force density
  std::function<double(double, double)> g;     // surface load g(t, theta)
};

// ---------------------------------------------------------------------------
// Reference basis: interior stream-function modes with zero trace, clamped
// zero-mean surface modes with Stokes lifts. Y-modes come first in the
// enumeration.

struct ReferenceBasis {
  SphereGeometry geom;
  SurfaceGrid grid;  // shell cap grid
  int ny = 0, nx = 0;
  std::vector<ZonalFn> yfun;       // surface functions, closed form
  std::vector<Vec> ynodal;         // surface functions on the shell grid
  std::vector<StreamField> lift;   // Stokes lifts of yfun * nu
  std::vector<StreamField> inner;  // zero-trace interior modes

  int n() const { return ny + nx; }
  const StreamField& field(int k) const {
    return k < ny ? lift[k] : inner[k - ny];
  }
};

inline ReferenceBasis build_reference_bases(const SphereGeometry& geom,
                                            const GalerkinConfig& cfg) {
  ReferenceBasis b;
  b.geom = geom;
  b.grid = make_cap_grid(geom, cfg.n_theta_grid);
  b.ny = cfg.n_surface;
  b.nx = cfg.n_interior;
  double a = geom.theta_gamma;

  auto raw = [a](int k) -> ZonalFn {
    return [a, k](double th) {
      if (th < a) return 0.0;
      double z = pi * (th - a) / (pi - a);
      double c = 1.0 - std::cos(z);
      return 0.25 * c * c * std::cos(k * z);
    };
  };
  auto qs = gauss_legendre(256, a, pi);
  auto surf_int = [&](const ZonalFn& f, const ZonalFn& g) {
    double I = 0.0;
    for (size_t i = 0; i < qs.x.size(); ++i)
      I += qs.w[i] * f(qs.x[i]) * g(qs.x[i]) * std::sin(qs.x[i]);
    return 2.0 * pi * geom.R * geom.R * I;
  };
  ZonalFn one = [](double) { return 1.0; };
  ZonalFn bump0 = raw(0);
  double m0 = surf_int(bump0, one);
  AxisymStokesSolver stokes(geom.R, cfg.stokes_lmax, cfg.stokes_quad);
  for (int k = 1; k <= b.ny; ++k) {
    ZonalFn rk = raw(k);
    double c = surf_int(rk, one) / m0;
    ZonalFn yk = [rk, bump0, c](double th) { return rk(th) - c * bump0(th); };
    double nrm = std::sqrt(surf_int(yk, yk));
    ZonalFn ynorm = [yk, nrm](double th) { return yk(th) / nrm; };
    b.yfun.push_back(ynorm);
    Vec nodal(b.grid.n());
    for (int i = 0; i < b.grid.n(); ++i) nodal[i] = ynorm(b.grid.nodes[i]);
    b.ynodal.push_back(std::move(nodal));
    b.lift.push_back(stokes.solve_radial(ynorm, cfg.stokes_tol));
  }

  for (int k = 0; k < b.nx; ++k) {
    int l = 1 + k % 4, j = k / 4;
    double R2 = geom.R * geom.R;
    RadialPoly f = monomial(l + 1 + 2 * j, 1.0);
    f += monomial(l + 3 + 2 * j, -2.0 / R2);
    f += monomial(l + 5 + 2 * j, 1.0 / (R2 * R2));
    StreamField s;
    s.poloidal[l] = f;
    b.inner.push_back(std::move(s));
  }

  // normalize interior modes by their volume L2 norm
  {
    auto qr = gauss_legendre(24, 1e-6, geom.R);
    auto qt = gauss_legendre(48, 0.0, pi);
    for (auto& s : b.inner) {
      double nrm2 = 0.0;
      for (size_t i = 0; i < qr.x.size(); ++i)
        for (size_t j = 0; j < qt.x.size(); ++j) {
          double r = qr.x[i], th = qt.x[j];
          Vec3 x(r * std::sin(th), 0.0, r * std::cos(th));
          nrm2 += 2.0 * pi * qr.w[i] * qt.w[j] * r * r * std::sin(th) *
                  s.eval(x).squaredNorm();
        }
      double inv = 1.0 / std::sqrt(nrm2);
      for (auto& [l, f] : s.poloidal) f = f.scaled(inv);
    }
  }

  // rank checks: surface Gram and volume Gram of the full family
  {
    Mat gs = Mat::Zero(b.ny, b.ny);
    for (int i = 0; i < b.ny; ++i)
      for (int j = i; j < b.ny; ++j)
        gs(i, j) = gs(j, i) = surf_int(b.yfun[i], b.yfun[j]);
    Eigen::SelfAdjointEigenSolver<Mat> es(gs);
    if (es.eigenvalues()(0) < 1e-8)
      throw RankDeficientBasis("surface mode Gram nearly singular");

    int n = b.n();
    auto qr = gauss_legendre(24, 1e-6, geom.R);
    auto qt = gauss_legendre(48, 0.0, pi);
    Mat gv = Mat::Zero(n, n);
    std::vector<Vec3> vals(n);
    for (size_t i = 0; i < qr.x.size(); ++i)
      for (size_t j = 0; j < qt.x.size(); ++j) {
        double r = qr.x[i], th = qt.x[j];
        Vec3 x(r * std::sin(th), 0.0, r * std::cos(th));
        double w = 2.0 * pi * qr.w[i] * qt.w[j] * r * r * std::sin(th);
        for (int k = 0; k < n; ++k) vals[k] = b.field(k).eval(x);
        for (int k = 0; k < n; ++k)
          for (int m = k; m < n; ++m) gv(k, m) += w * vals[k].dot(vals[m]);
      }
    gv = gv.selfadjointView<Eigen::Upper>();
    Eigen::SelfAdjointEigenSolver<Mat> ev(gv);
    if (ev.eigenvalues()(0) < 1e-8)
      throw RankDeficientBasis("volume Gram of basis fields nearly singular");
  }
  return b;
}

// ---------------------------------------------------------------------------
// Assembled matrices of the integro-ODE at one time. B carries the sign
// flips required when the weak-form terms cross to the right-hand side of
// A da/dt = B a + (elastic memory) + D; the elastic part is not in B, it is
// applied through the surface map S and the Koiter matrix by the stepper.

struct SystemMatrices {
  Mat A;      // total mass (volume + surface)
  Mat A_vol;  // volume part only, for energy diagnostics
  Mat B;      // everything except the elastic term, signs included
  Mat V;      // viscous Gram, positive semidefinite
  Mat N;      // skew convective block
  Mat S;      // nodal surface parts, grid.n() x n
  Vec D;      // forcing load
};

class Assembler {
 public:
  Assembler(ReferenceBasis basis, GalerkinConfig cfg, CutoffProfile beta)
      : basis_(std::move(basis)), cfg_(cfg), beta_(beta) {
    build_nodes();
    cache_reference_fields();
  }

  const ReferenceBasis& basis() const { return basis_; }
  const GalerkinConfig& config() const { return cfg_; }
  const CutoffProfile& cutoff() const { return beta_; }

  HanzawaMap map_at(double t, const DisplacementPath& path) const {
    // the path lives on the whole boundary sphere; mollified paths are
    // nonzero over the clamped part as well
    auto z = std::make_shared<ZonalDisplacement>();
    z->R = basis_.geom.R;
    z->f = [&path, t](double th) { return path.value(t, th); };
    z->df = [&path, t](double th) { return path.d_theta(t, th); };
    z->sup = path.sup(t, basis_.geom);
    if (z->sup >= basis_.geom.kappa())
      throw InadmissibleDisplacement("displacement reaches the tubular radius");
    return HanzawaMap{basis_.geom, z, beta_};
  }

  // W_k(t, y) on the deformed domain, for trace tests and diagnostics
  Vec3 field_at(double t, const DisplacementPath& path, int k,
                const Vec3& y) const {
    HanzawaMap map = map_at(t, path);
    Vec3 x = map.inverse(y);
    auto fr = map.forward(x);
    return (fr.J * basis_.field(k).eval(x)) / fr.detJ;
  }

  // nodal surface parts on the shell grid: S(i,k) = Y_k(theta_i)/gamma
  Mat surface_parts(double t, const DisplacementPath& path) const {
    int m = basis_.grid.n(), n = basis_.n();
    Mat S = Mat::Zero(m, n);
    for (int i = 0; i < m; ++i) {
      double th = basis_.grid.nodes[i];
      double e = path.value(t, th);
      double gamma = gamma_factor(basis_.geom, e);
      for (int k = 0; k < basis_.ny; ++k)
        S(i, k) = basis_.ynodal[k][i] / gamma;
    }
    return S;
  }

  SystemMatrices assemble(double t, const DisplacementPath& path,
                          const VelocityPath* rv = nullptr,
                          const Forcing* force = nullptr) const {
    int n = basis_.n();
    HanzawaMap map = map_at(t, path);
    HanzawaMap map_m = map_at(t - cfg_.dt, path);
    HanzawaMap map_p = map_at(t + cfg_.dt, path);

    SystemMatrices out;
    out.A_vol = Mat::Zero(n, n);
    out.V = Mat::Zero(n, n);
    Mat P = Mat::Zero(n, n);      // one-sided convective block
    Mat Mdt = Mat::Zero(n, n);    // volume d/dt term
    Vec Dvol = Vec::Zero(n);

    double h = cfg_.fd_x;
    std::vector<Vec3> F(n);             // pushed fields at the node
    std::vector<Mat3> G(n);             // spatial gradients on Omega_eta
    std::vector<Vec3> Fdot(n);          // time derivative at fixed y
    std::vector<std::array<Vec3, 6>> Fs(n);  // stencil values

    for (size_t q = 0; q < nodes_.size(); ++q) {
      const QNode& nd = nodes_[q];
      auto fr = map.forward(nd.x);
      double detJ = fr.detJ;
      if (detJ <= 0.0)
        throw InadmissibleDisplacement("degenerate Hanzawa Jacobian");
      Mat3 Jinv = fr.J.inverse();

      for (int k = 0; k < n; ++k) F[k] = (fr.J * cache_[q].center[k]) / detJ;
      for (int s = 0; s < 6; ++s) {
        auto frs = map.forward(nd.x + offset(s, h));
        Mat3 Js = frs.J / frs.detJ;
        for (int k = 0; k < n; ++k) Fs[k][s] = Js * cache_[q].stencil[s][k];
      }
      for (int k = 0; k < n; ++k) {
        Mat3 dF;
        for (int d = 0; d < 3; ++d)
          dF.col(d) = (Fs[k][2 * d + 1] - Fs[k][2 * d]) / (2.0 * h);
        G[k] = dF * Jinv;
      }
      {
        auto frm = map_m.forward(nd.x);
        auto frp = map_p.forward(nd.x);
        Mat3 ddtJ = (frp.J / frp.detJ - frm.J / frm.detJ) / (2.0 * cfg_.dt);
        // d/dt at fixed y: d/dt at fixed x minus convection with the
        // domain velocity dPsi/dt
        double thq = std::acos(std::clamp(nd.x.z() / nd.x.norm(), -1.0, 1.0));
        double bval = beta_.value((nd.x.norm() - basis_.geom.R) /
                                  basis_.geom.kappa());
        double etadot = path.d_t(t, thq);
        Vec3 dpsi_dt = (nd.x / nd.x.norm()) * bval * etadot;
        for (int k = 0; k < n; ++k)
          Fdot[k] = ddtJ * cache_[q].center[k] - G[k] * dpsi_dt;
      }

      double w = nd.w * detJ;
      Vec3 rvv = Vec3::Zero();
      if (rv) rvv = rv->eval(t, fr.y);
      Vec3 fv = Vec3::Zero();
      if (force && force->f) fv = force->f(t, fr.y);
      for (int k = 0; k < n; ++k) {
        for (int j = 0; j < n; ++j) {
          out.A_vol(j, k) += w * F[k].dot(F[j]);
          out.V(j, k) += w * (G[k].cwiseProduct(G[j])).sum();
          Mdt(j, k) += w * Fdot[k].dot(F[j]);
          if (rv) P(j, k) += w * (G[k] * rvv).dot(F[j]);
        }
        if (force && force->f) Dvol[k] += w * fv.dot(F[k]);
      }
    }

    out.N = 0.5 * (P - P.transpose());
    out.S = surface_parts(t, path);

    const SurfaceGrid& grid = basis_.grid;
    int m = grid.n();
    Mat W = grid.w.asDiagonal();
    out.A = out.A_vol + out.S.transpose() * W * out.S;
    out.A = 0.5 * (out.A + out.A.transpose()).eval();
    out.A_vol = 0.5 * (out.A_vol + out.A_vol.transpose()).eval();
    out.V = 0.5 * (out.V + out.V.transpose()).eval();

    // surface pieces of B: 1/2 W_k W_j dRdt gamma, and dW_k/dt W_j
    Mat Sdot = Mat::Zero(m, basis_.n());
    Vec moving = Vec::Zero(m);
    for (int i = 0; i < m; ++i) {
      double th = grid.nodes[i];
      double e = path.value(t, th);
      double ed = path.d_t(t, th);
      double gamma = gamma_factor(basis_.geom, e);
      double dgamma = 2.0 * (1.0 + e / basis_.geom.R) * ed / basis_.geom.R;
      moving[i] = ed * gamma;
      for (int k = 0; k < basis_.ny; ++k)
        Sdot(i, k) = -basis_.ynodal[k][i] * dgamma / (gamma * gamma);
    }
    Mat Mgamma = out.S.transpose() * moving.asDiagonal() * W * out.S;
    Mat Msdt = out.S.transpose() * W * Sdot;

    out.B = -(Mdt + 0.5 * Mgamma + out.N + out.V + Msdt);

    out.D = Dvol;
    if (force && force->g) {
      Vec gn(m);
      for (int i = 0; i < m; ++i) gn[i] = force->g(t, grid.nodes[i]);
      out.D += out.S.transpose() * W * gn;
    }

    Eigen::LLT<Mat> llt(out.A);
    if (llt.info() != Eigen::Success)
      throw NonSPDMass("assembled mass matrix is not positive definite");
    return out;
  }

  // mass and surface map only, for per-step energy diagnostics
  void assemble_mass(double t, const DisplacementPath& path, Mat& A_vol,
                     Mat& S) const {
    int n = basis_.n();
    HanzawaMap map = map_at(t, path);
    A_vol = Mat::Zero(n, n);
    std::vector<Vec3> F(n);
    for (size_t q = 0; q < nodes_.size(); ++q) {
      auto fr = map.forward(nodes_[q].x);
      if (fr.detJ <= 0.0)
        throw InadmissibleDisplacement("degenerate Hanzawa Jacobian");
      for (int k = 0; k < n; ++k)
        F[k] = (fr.J * cache_[q].center[k]) / fr.detJ;
      double w = nodes_[q].w * fr.detJ;
      for (int k = 0; k < n; ++k)
        for (int j = k; j < n; ++j) A_vol(j, k) += w * F[k].dot(F[j]);
    }
    A_vol = A_vol.selfadjointView<Eigen::Lower>();
    S = surface_parts(t, path);
  }

 private:
  struct QNode {
    Vec3 x;
    double w;  // includes 2 pi r^2 sin(theta) and both quadrature weights
  };
  struct NodeCache {
    std::vector<Vec3> center;
    std::array<std::vector<Vec3>, 6> stencil;
  };

  static Vec3 offset(int s, double h) {
    Vec3 e = Vec3::Zero();
    e[s / 2] = (s % 2 == 0) ? -h : h;
    return e;
  }

  void build_nodes() {
    const SphereGeometry& g = basis_.geom;
    double kap = g.kappa();
    // radial breakpoints where the cutoff profile changes pieces
    std::vector<double> rb = {1e-6, g.R - kap};
    for (double u : {-1.0 + beta_.plateau, -1.0 + beta_.plateau + beta_.ramp,
                     -beta_.plateau - beta_.ramp, -beta_.plateau})
      rb.push_back(g.R + kap * u);
    rb.push_back(g.R);
    std::sort(rb.begin(), rb.end());

    int per = std::max(4, cfg_.quad_r / (int)(rb.size() - 1));
    Quadrature1D qt;
    {
      auto qa = gauss_legendre(std::max(4, cfg_.quad_theta / 4), 0.0,
                               g.theta_gamma);
      auto qb = gauss_legendre(cfg_.quad_theta, g.theta_gamma, pi);
      qt.x = qa.x;
      qt.w = qa.w;
      qt.x.insert(qt.x.end(), qb.x.begin(), qb.x.end());
      qt.w.insert(qt.w.end(), qb.w.begin(), qb.w.end());
    }
    for (size_t seg = 0; seg + 1 < rb.size(); ++seg) {
      if (rb[seg + 1] - rb[seg] < 1e-12) continue;
      auto qr = gauss_legendre(per, rb[seg], rb[seg + 1]);
      for (size_t i = 0; i < qr.x.size(); ++i)
        for (size_t j = 0; j < qt.x.size(); ++j) {
          double r = qr.x[i], th = qt.x[j];
          QNode nd;
          nd.x = Vec3(r * std::sin(th), 0.0, r * std::cos(th));
          nd.w = 2.0 * pi * qr.w[i] * qt.w[j] * r * r * std::sin(th);
          nodes_.push_back(nd);
        }
    }
  }

  void cache_reference_fields() {
    int n = basis_.n();
    cache_.resize(nodes_.size());
    double h = cfg_.fd_x;
    for (size_t q = 0; q < nodes_.size(); ++q) {
      cache_[q].center.resize(n);
      for (int k = 0; k < n; ++k)
        cache_[q].center[k] = basis_.field(k).eval(nodes_[q].x);
      for (int s = 0; s < 6; ++s) {
        cache_[q].stencil[s].resize(n);
        Vec3 xs = nodes_[q].x + offset(s, h);
        for (int k = 0; k < n; ++k)
          cache_[q].stencil[s][k] = basis_.field(k).eval(xs);
      }
    }
  }

  ReferenceBasis basis_;
  GalerkinConfig cfg_;
  CutoffProfile beta_;
  std::vector<QNode> nodes_;
  std::vector<NodeCache> cache_;
};

// ---------------------------------------------------------------------------
// Initial-data projection: surface rates first (L2(M) best approximation in
// the Y-modes), then the interior modes pick up the velocity remainder.

template <class U0>
Vec direct_load(const Assembler& as, const DisplacementPath& path,
                const U0& u0) {
  // int_{Omega_eta} u0 . W_xj dx for the interior modes only
  const ReferenceBasis& b = as.basis();
  Vec out = Vec::Zero(b.nx);
  HanzawaMap map = as.map_at(0.0, path);
  auto qr = gauss_legendre(24, 1e-6, b.geom.R);
  auto qt = gauss_legendre(64, 0.0, pi);
  for (size_t i = 0; i < qr.x.size(); ++i)
    for (size_t j = 0; j < qt.x.size(); ++j) {
      double r = qr.x[i], th = qt.x[j];
      Vec3 x(r * std::sin(th), 0.0, r * std::cos(th));
      auto fr = map.forward(x);
      double w = 2.0 * pi * qr.w[i] * qt.w[j] * r * r * std::sin(th) * fr.detJ;
      Vec3 uv = u0(fr.y);
      for (int k = 0; k < b.nx; ++k)
        out[k] += w * uv.dot((fr.J * b.field(b.ny + k).eval(x)) / fr.detJ);
    }
  return out;
}

template <class U0>
Vec project_initial(const Assembler& as, const DisplacementPath& path,
                    const U0& u0, const Vec& eta1, double rate_tol = 1e-6) {
  const ReferenceBasis& b = as.basis();
  const SurfaceGrid& grid = b.grid;
  int n = b.n(), ny = b.ny;

  Vec gammaw(grid.n());
  for (int i = 0; i < grid.n(); ++i)
    gammaw[i] = gamma_factor(b.geom, path.value(0.0, grid.nodes[i]));
  double defect = grid.w.dot(gammaw.cwiseProduct(eta1));
  double scale = grid.w.dot(gammaw.cwiseProduct(eta1.cwiseAbs())) + 1.0;
  if (std::abs(defect) > rate_tol * scale)
    throw IncompatibleInitialRate("project_initial: gamma-weighted mean " +
                                  std::to_string(defect));

  SystemMatrices sm = as.assemble(0.0, path);
  Mat W = grid.w.asDiagonal();
  Mat Sy = sm.S.leftCols(ny);
  Mat My = Sy.transpose() * W * Sy;
  Vec ay = My.ldlt().solve(Sy.transpose() * W * eta1);

  Vec alpha = Vec::Zero(n);
  alpha.head(ny) = ay;

  if (b.nx > 0) {
    // interior modes pick up the velocity remainder in L2 of the deformed
    // domain; the Y-part is removed through the mixed mass block
    Mat Axx = sm.A_vol.block(ny, ny, b.nx, b.nx);
    Vec rhs = direct_load(as, path, u0) - sm.A_vol.block(ny, 0, b.nx, ny) * ay;
    alpha.tail(b.nx) = Axx.ldlt().solve(rhs);
  }
  return alpha;
}

// ---------------------------------------------------------------------------
// Generic linear integro-ODE integrator: A(t) da/dt = B(t) a
// + int_0^t C(t,s) a(s) ds + D(t), implicit midpoint with a trapezoidal
// memory integral. Used directly by the scalar verification problems; the
// coupled solver uses the specialized stepper below.

struct IntegroODE {
  std::function<Mat(double)> A, B;
  std::function<Mat(double, double)> C;  // may be empty
  std::function<Vec(double)> D;          // may be empty
};

struct OdeTrajectory {
  std::vector<double> t;
  std::vector<Vec> alpha;
};

inline OdeTrajectory integrate(const IntegroODE& sys, Vec alpha0, double dt,
                               double horizon) {
  if (dt <= 0.0) throw Error("integrate: dt must be positive");
  int n = (int)alpha0.size();
  int steps = (int)std::llround(horizon / dt);
  OdeTrajectory out;
  out.t.push_back(0.0);
  out.alpha.push_back(alpha0);
  for (int i = 0; i < steps; ++i) {
    double t0 = i * dt, tm = t0 + 0.5 * dt;
    Mat Am = sys.A(tm), Bm = sys.B(tm);
    Vec rhs_hist = Vec::Zero(n);
    Mat Cmm = Mat::Zero(n, n);
    if (sys.C) {
      // trapezoid over the stored grid history, then the half step to tm
      for (int j = 0; j <= i; ++j) {
        double wj = (j == 0 || j == i) ? 0.5 * dt : dt;
        if (i == 0) wj = 0.0;  // no full intervals yet
        rhs_hist += wj * (sys.C(tm, j * dt) * out.alpha[j]);
      }
      Cmm = sys.C(tm, tm);
      rhs_hist += 0.25 * dt * (sys.C(tm, t0) * out.alpha[i]);
    }
    Vec Dm = sys.D ? sys.D(tm) : Vec::Zero(n);
    Mat lhs = Am / dt - 0.5 * Bm - 0.125 * dt * Cmm;
    Mat rhsM = Am / dt + 0.5 * Bm + 0.125 * dt * Cmm;
    Eigen::PartialPivLU<Mat> lu(lhs);
    if (std::abs(lu.determinant()) < 1e-300)
      throw LinearSolveFailure("integrate: singular implicit system");
    Vec next = lu.solve(rhsM * out.alpha[i] + rhs_hist + Dm);
    if (!next.allFinite())
      throw LinearSolveFailure("integrate: non-finite step");
    out.t.push_back((i + 1) * dt);
    out.alpha.push_back(std::move(next));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Specialized stepper for the coupled shell problem. The elastic memory is
// carried as a shell displacement state on the grid, which makes the
// midpoint energy identity telescope exactly when the geometry is frozen.

struct PdeTrajectory {
  std::vector<double> t;
  std::vector<Vec> alpha;
  std::vector<Vec> eta;          // shell displacement on the grid
  std::vector<Vec> rate;         // shell rate S alpha on the grid
  std::vector<double> kinetic;   // 1/2 ||u||^2 over the moving domain
  std::vector<double> shell_kin; // 1/2 ||d eta/dt||^2 over M
  std::vector<double> elastic;   // K(eta, eta)
  std::vector<double> dissip;    // cumulative viscous dissipation
  std::vector<double> work;      // cumulative forcing work
};

inline PdeTrajectory run_galerkin(const Assembler& as, const KoiterForm& kf,
                                  const DisplacementPath& path,
                                  const VelocityPath* rv, const Forcing* force,
                                  Vec alpha0, Vec eta0, double dt,
                                  double horizon, double t_start = 0.0) {
  int steps = (int)std::llround(horizon / dt);
  PdeTrajectory out;
  Mat W = as.basis().grid.w.asDiagonal();

  Vec alpha = std::move(alpha0);
  Vec eta = std::move(eta0);
  double dissip = 0.0, work = 0.0;

  auto record = [&](double t) {
    Mat A_vol, S;
    as.assemble_mass(t, path, A_vol, S);
    out.t.push_back(t);
    out.alpha.push_back(alpha);
    out.eta.push_back(eta);
    out.kinetic.push_back(0.5 * alpha.dot(A_vol * alpha));
    Vec etadot = S * alpha;
    out.shell_kin.push_back(0.5 * etadot.dot(W * etadot));
    out.rate.push_back(std::move(etadot));
    out.elastic.push_back(kf(eta, eta));
    out.dissip.push_back(dissip);
    out.work.push_back(work);
  };

  record(t_start);

  for (int i = 0; i < steps; ++i) {
    double tm = t_start + i * dt + 0.5 * dt;
    SystemMatrices sm = as.assemble(tm, path, rv, force);
    Mat SK = sm.S.transpose() * kf.k_mat;     // n x m
    Mat SKS = SK * sm.S;                      // elastic coupling
    Mat lhs = sm.A / dt - 0.5 * sm.B + 0.5 * dt * SKS;
    Mat rhsM = sm.A / dt + 0.5 * sm.B - 0.5 * dt * SKS;
    Vec rhs = rhsM * alpha - 2.0 * (SK * eta) + sm.D;
    Eigen::PartialPivLU<Mat> lu(lhs);
    Vec next = lu.solve(rhs);
    if (!next.allFinite())
      throw LinearSolveFailure("run_galerkin: non-finite step");
    Vec amid = 0.5 * (alpha + next);
    dissip += dt * amid.dot(sm.V * amid);
    work += dt * amid.dot(sm.D);
    eta += dt * (sm.S * amid);
    alpha = std::move(next);
    record(t_start + (i + 1) * dt);
  }
  return out;
}

}  // namespace shellflow

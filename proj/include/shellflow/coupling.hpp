#pragma once

#include <map>
#include <memory>

#include "shellflow/galerkin.hpp"

namespace shellflow {

// ---------------------------------------------------------------------------
// Coupled solver: spacetime mollification of the data pair (delta, v), the
// lifted initial data on the mollified domain, the Picard iteration around
// the decoupled solve, and the windowed continuation that runs until the
// horizon or until the shell reaches the collision margin.

namespace detail {

// cubic Lagrange interpolation on a uniform grid starting at a with step h
inline double cubic_uniform(const Vec& v, double a, double h, double th) {
  int n = (int)v.size();
  double u = (th - a) / h;
  if (u <= 0.0) return v[0];
  if (u >= n - 1) return v[n - 1];
  int j = std::clamp((int)std::floor(u) - 1, 0, n - 4);
  double acc = 0.0;
  for (int m = 0; m < 4; ++m) {
    double L = 1.0;
    for (int l = 0; l < 4; ++l)
      if (l != m) L *= (u - (j + l)) / (double)(m - l);
    acc += L * v[j + m];
  }
  return acc;
}

}  // namespace detail

// nodal shell values on the cap grid as a zonal callable; zero on the
// clamped part of the sphere
inline ZonalFn nodal_zonal(const SurfaceGrid& grid, Vec vals) {
  double a = grid.nodes[0];
  double h = (grid.nodes[grid.n() - 1] - a) / (grid.n() - 1);
  return [vals = std::move(vals), a, h](double th) -> double {
    if (th < a) return 0.0;
    return detail::cubic_uniform(vals, a, h, th);
  };
}

// ---------------------------------------------------------------------------
// Sampled displacement trajectory feeding the mollifier. Frame j holds the
// nodal shell displacement at t0 + j dt; the history extension (constant
// initial displacement, or the previous window) is part of the frame list.

struct ShellSource {
  double t0 = 0.0;
  double dt = 1e-3;
  std::vector<Vec> eta;

  double t_end() const { return t0 + dt * (double)(eta.size() - 1); }
};

// ---------------------------------------------------------------------------
// Mollified displacement path. The time kernel is a one-sided bump supported
// in [eps/2, eps], so the value at t reads the source strictly in the past;
// the polar kernel is a bump of width eps applied to the source extended by
// zero over the clamped part and evenly across the poles. The global
// sqrt(eps) shift keeps the mollified boundary above the original one.
// Profiles on a fine polar grid are cached per evaluation time.

class MollifiedPath final : public DisplacementPath {
 public:
  MollifiedPath(const SphereGeometry& g, SurfaceGrid grid, ShellSource src,
                double eps, int nfine = 385)
      : geom_(g),
        grid_(std::move(grid)),
        src_(std::move(src)),
        eps_(eps),
        nfine_(nfine) {
    if (src_.eta.empty()) throw Error("MollifiedPath: empty source");
    if (eps_ <= 0.0) throw Error("MollifiedPath: eps must be positive");
    hfine_ = pi / (nfine_ - 1);
    sm_.resize(src_.eta.size());
    sm_ok_.assign(src_.eta.size(), 0);

    // one-sided time kernel, discretely normalized so constants pass
    // through exactly; the derivative weights get the matching zero-sum fix
    auto qt = gauss_legendre(32, 0.5 * eps_, eps_);
    double wsum = 0.0;
    for (size_t i = 0; i < qt.x.size(); ++i) {
      double u = (qt.x[i] - 0.75 * eps_) / (0.25 * eps_);
      tnode_.push_back(qt.x[i]);
      tval_.push_back(qt.w[i] * bump(u));
      tder_.push_back(qt.w[i] * bump_deriv(u) / (0.25 * eps_));
      wsum += tval_.back();
    }
    for (auto& w : tval_) w /= wsum;
    double dsum = 0.0;
    for (auto& w : tder_) {
      w /= wsum;
      dsum += w;
    }
    for (size_t i = 0; i < tder_.size(); ++i) tder_[i] -= dsum * tval_[i];

    auto qs = gauss_legendre(24, -eps_, eps_);
    double ssum = 0.0;
    for (size_t i = 0; i < qs.x.size(); ++i) {
      snode_.push_back(qs.x[i]);
      sval_.push_back(qs.w[i] * bump(qs.x[i] / eps_));
      ssum += sval_.back();
    }
    for (auto& w : sval_) w /= ssum;
  }

  double value(double t, double th) const override {
    const Profile& p = profile(t);
    return detail::cubic_uniform(p.val, 0.0, hfine_, th);
  }
  double d_theta(double t, double th) const override {
    const Profile& p = profile(t);
    return detail::cubic_uniform(p.dth, 0.0, hfine_, th);
  }
  double d_t(double t, double th) const override {
    const Profile& p = profile(t);
    return detail::cubic_uniform(p.dts, 0.0, hfine_, th);
  }

  const ShellSource& source() const { return src_; }
  double eps() const { return eps_; }

 private:
  struct Profile {
    Vec val, dth, dts;
  };

  double source_at(const Vec& frame, double th) const {
    th = std::abs(th);
    if (th > pi) th = 2.0 * pi - th;
    if (th < grid_.nodes[0]) return 0.0;
    double a = grid_.nodes[0];
    double h = (grid_.nodes[grid_.n() - 1] - a) / (grid_.n() - 1);
    return detail::cubic_uniform(frame, a, h, th);
  }

  const Vec& smoothed(int j) const {
    if (!sm_ok_[j]) {
      Vec out(nfine_);
      for (int i = 0; i < nfine_; ++i) {
        double th = i * hfine_, acc = 0.0;
        for (size_t q = 0; q < snode_.size(); ++q)
          acc += sval_[q] * source_at(src_.eta[j], th - snode_[q]);
        out[i] = acc;
      }
      sm_[j] = std::move(out);
      sm_ok_[j] = 1;
    }
    return sm_[j];
  }

  const Profile& profile(double t) const {
    long long key = (long long)std::llround(t * 1e9);
    auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;

    Profile p;
    p.val = Vec::Constant(nfine_, std::sqrt(eps_));
    p.dts = Vec::Zero(nfine_);
    int last = (int)src_.eta.size() - 1;
    for (size_t q = 0; q < tnode_.size(); ++q) {
      double u = (t - tnode_[q] - src_.t0) / src_.dt;
      int j = std::clamp((int)std::floor(u), 0, std::max(0, last - 1));
      double frac = (last == 0) ? 0.0 : std::clamp(u - j, 0.0, 1.0);
      const Vec& f0 = smoothed(j);
      const Vec& f1 = smoothed(std::min(j + 1, last));
      Vec mix = (1.0 - frac) * f0 + frac * f1;
      p.val += tval_[q] * mix;
      p.dts += tder_[q] * mix;
    }
    p.dth = Vec::Zero(nfine_);
    for (int i = 0; i < nfine_; ++i) {
      auto v = [&](int k) { return p.val[detail::reflect(k, nfine_)]; };
      p.dth[i] = (-v(i + 2) + 8.0 * v(i + 1) - 8.0 * v(i - 1) + v(i - 2)) /
                 (12.0 * hfine_);
    }
    return cache_.emplace(key, std::move(p)).first->second;
  }

  SphereGeometry geom_;
  SurfaceGrid grid_;
  ShellSource src_;
  double eps_ = 0.0;
  int nfine_ = 385;
  double hfine_ = 0.0;
  std::vector<double> tnode_, tval_, tder_;
  std::vector<double> snode_, sval_;
  mutable std::vector<Vec> sm_;
  mutable std::vector<char> sm_ok_;
  mutable std::map<long long, Profile> cache_;
};

// ---------------------------------------------------------------------------
// Sampled velocity trajectory on a fixed meridian lattice, s = sqrt(x^2+y^2)
// in [0, smax], z in [-zmax, zmax]; frame j at t0 + j dt holds the field in
// the phi = 0 half-plane, extended by zero outside the fluid domain.

struct VelocitySource {
  double t0 = 0.0;
  double dt = 0.0125;
  double smax = 2.0, zmax = 2.0;
  int ns = 40, nz = 81;
  std::vector<std::vector<Vec3>> frames;

  double ds() const { return smax / (ns - 1); }
  double dz() const { return 2.0 * zmax / (nz - 1); }
  int idx(int is, int iz) const { return is * nz + iz; }
  std::vector<Vec3> zero_frame() const {
    return std::vector<Vec3>((size_t)ns * nz, Vec3::Zero());
  }
};

// sample a spacetime field on the lattice, mostly for tests
template <class F>
VelocitySource sample_velocity(F&& field, double t0, double dt, int nframes,
                               double smax, double zmax, int ns, int nz) {
  VelocitySource src;
  src.t0 = t0;
  src.dt = dt;
  src.smax = smax;
  src.zmax = zmax;
  src.ns = ns;
  src.nz = nz;
  for (int j = 0; j < nframes; ++j) {
    auto fr = src.zero_frame();
    double t = t0 + j * dt;
    for (int is = 0; is < ns; ++is)
      for (int iz = 0; iz < nz; ++iz) {
        Vec3 y(is * src.ds(), 0.0, -zmax + iz * src.dz());
        fr[src.idx(is, iz)] = field(t, y);
      }
    src.frames.push_back(std::move(fr));
  }
  return src;
}

// ---------------------------------------------------------------------------
// Mollified velocity: discrete spacetime convolution on the lattice with a
// symmetric product bump kernel of width eps in each direction, axisymmetric
// reflection across the axis, zero extension beyond the lattice and outside
// the sampled time range. Time-combined slices are cached per evaluation
// time; evaluation is bilinear interpolation plus the meridian rotation.

class MollifiedVelocity final : public VelocityPath {
 public:
  MollifiedVelocity(VelocitySource src, double eps)
      : src_(std::move(src)), eps_(eps) {
    if (eps_ <= 0.0) throw Error("MollifiedVelocity: eps must be positive");
    ws_ = axis_weights(src_.ds());
    wz_ = axis_weights(src_.dz());
    sm_.resize(src_.frames.size());
    sm_ok_.assign(src_.frames.size(), 0);
  }

  Vec3 eval(double t, const Vec3& y) const override {
    if (src_.frames.empty()) return Vec3::Zero();
    const std::vector<Vec3>& sl = slice(t);
    double s = std::hypot(y.x(), y.y()), z = y.z();
    double u = s / src_.ds(), v = (z + src_.zmax) / src_.dz();
    if (u >= src_.ns - 1 || v <= 0.0 || v >= src_.nz - 1) return Vec3::Zero();
    int i0 = (int)std::floor(u), j0 = (int)std::floor(v);
    double fu = u - i0, fv = v - j0;
    Vec3 p = (1 - fu) * (1 - fv) * sl[src_.idx(i0, j0)] +
             fu * (1 - fv) * sl[src_.idx(i0 + 1, j0)] +
             (1 - fu) * fv * sl[src_.idx(i0, j0 + 1)] +
             fu * fv * sl[src_.idx(i0 + 1, j0 + 1)];
    double c = 1.0, sn = 0.0;
    if (s > 1e-14) {
      c = y.x() / s;
      sn = y.y() / s;
    }
    return Vec3(c * p.x() - sn * p.y(), sn * p.x() + c * p.y(), p.z());
  }

 private:
  // lattice-aligned normalized bump weights; collapses to the identity when
  // eps drops below the lattice spacing
  std::vector<double> axis_weights(double h) const {
    int m = (int)std::floor(eps_ / h);
    std::vector<double> w(2 * m + 1);
    double sum = 0.0;
    for (int k = -m; k <= m; ++k) {
      w[k + m] = bump(k * h / eps_);
      sum += w[k + m];
    }
    for (auto& x : w) x /= sum;
    return w;
  }

  const std::vector<Vec3>& smoothed(int j) const {
    if (!sm_ok_[j]) {
      const auto& in = src_.frames[j];
      int ns = src_.ns, nz = src_.nz;
      int ms = ((int)ws_.size() - 1) / 2, mz = ((int)wz_.size() - 1) / 2;
      std::vector<Vec3> a((size_t)ns * nz, Vec3::Zero());
      for (int is = 0; is < ns; ++is)
        for (int iz = 0; iz < nz; ++iz) {
          Vec3 acc = Vec3::Zero();
          for (int k = -ms; k <= ms; ++k) {
            int i = is - k;
            if (i >= ns) continue;
            if (i >= 0) {
              acc += ws_[k + ms] * in[src_.idx(i, iz)];
            } else {
              // reflection across the axis flips the in-plane components
              Vec3 r = in[src_.idx(-i, iz)];
              acc += ws_[k + ms] * Vec3(-r.x(), -r.y(), r.z());
            }
          }
          a[src_.idx(is, iz)] = acc;
        }
      std::vector<Vec3> b((size_t)ns * nz, Vec3::Zero());
      for (int is = 0; is < ns; ++is)
        for (int iz = 0; iz < nz; ++iz) {
          Vec3 acc = Vec3::Zero();
          for (int k = -mz; k <= mz; ++k) {
            int i = iz - k;
            if (i < 0 || i >= nz) continue;
            acc += wz_[k + mz] * a[src_.idx(is, i)];
          }
          b[src_.idx(is, iz)] = acc;
        }
      sm_[j] = std::move(b);
      sm_ok_[j] = 1;
    }
    return sm_[j];
  }

  const std::vector<Vec3>& slice(double t) const {
    long long key = (long long)std::llround(t * 1e9);
    auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;

    // kernel support in frame indices; out-of-range frames count as zero
    // but keep their weight in the normalization (zero extension in time)
    int jlo = (int)std::ceil((t - eps_ - src_.t0) / src_.dt);
    int jhi = (int)std::floor((t + eps_ - src_.t0) / src_.dt);
    std::vector<Vec3> out((size_t)src_.ns * src_.nz, Vec3::Zero());
    double wsum = 0.0;
    for (int j = jlo; j <= jhi; ++j)
      wsum += bump((t - src_.t0 - j * src_.dt) / eps_);
    if (wsum <= 0.0) {
      // kernel narrower than the frame spacing: nearest-frame fallback
      int j = (int)std::llround((t - src_.t0) / src_.dt);
      if (j >= 0 && j < (int)src_.frames.size()) out = smoothed(j);
      return cache_.emplace(key, std::move(out)).first->second;
    }
    for (int j = jlo; j <= jhi; ++j) {
      if (j < 0 || j >= (int)src_.frames.size()) continue;
      double w = bump((t - src_.t0 - j * src_.dt) / eps_) / wsum;
      const auto& f = smoothed(j);
      for (size_t i = 0; i < out.size(); ++i) out[i] += w * f[i];
    }
    return cache_.emplace(key, std::move(out)).first->second;
  }

  VelocitySource src_;
  double eps_ = 0.0;
  std::vector<double> ws_, wz_;
  mutable std::vector<std::vector<Vec3>> sm_;
  mutable std::vector<char> sm_ok_;
  mutable std::map<long long, std::vector<Vec3>> cache_;
};

// ---------------------------------------------------------------------------
// Lifted initial data on the mollified domain: the velocity keeps its values
// on the original domain and is filled with the divergence-free layer
// extension of the shell rate in the gap; the rate is rescaled by the layer
// factor so its weighted mean against the mollified boundary stays zero.

struct LiftedData {
  std::function<Vec3(const Vec3&)> u0;
  Vec eta1;
};

template <class U0>
LiftedData lift_initial_data(const SphereGeometry& g, const SurfaceGrid& grid,
                             U0 u0, const Vec& eta0, const Vec& eta1,
                             const ZonalFn& reta0, int stokes_lmax = 24) {
  ZonalFn e0 = nodal_zonal(grid, eta0);
  double sup0 = 0.0, supr = 0.0;
  for (int i = 0; i <= 384; ++i) {
    double th = pi * i / 384.0;
    double base = e0(th), lifted = reta0(th);
    if (lifted < base - 1e-10)
      throw GapInversion("lift_initial_data: mollified boundary dips below the original one");
    sup0 = std::max(sup0, std::abs(base));
    supr = std::max(supr, std::abs(lifted));
  }
  if (supr >= g.kappa())
    throw InadmissibleDisplacement("lift_initial_data: mollified boundary leaves the tubular region");

  double alpha = default_alpha(g, std::max(sup0, supr));
  ZonalFn b = nodal_zonal(grid, eta1);
  ZonalFn bc = mean_correct(g, b, e0, default_bump(g));
  ExtendedField psi = extend_boundary(g, bc, e0, alpha, 1e-6, stokes_lmax);

  LiftedData out;
  out.eta1 = Vec(grid.n());
  for (int i = 0; i < grid.n(); ++i) {
    double th = grid.nodes[i];
    double q = (g.R + eta0[i]) / (g.R + reta0(th));
    out.eta1[i] = bc(th) * q * q;
  }
  out.u0 = [g, e0, psi, u0 = std::move(u0)](const Vec3& y) -> Vec3 {
    double r = y.norm();
    double th = (r < 1e-14) ? 0.0
                            : std::acos(std::clamp(y.z() / r, -1.0, 1.0));
    if (r <= g.R + e0(th) + 1e-12) return u0(y);
    return psi.eval(y);
  };
  return out;
}

// ---------------------------------------------------------------------------
// Decoupled solve with the mollified inputs: admissibility sweep over the
// window, then the Galerkin run.

inline PdeTrajectory solve_decoupled(const Assembler& as, const KoiterForm& kf,
                                     const DisplacementPath& rdelta,
                                     const VelocityPath* rv,
                                     const Forcing* force, Vec alpha0, Vec eta0,
                                     double dt, double T, double t_start = 0.0,
                                     double band = 0.98) {
  const SphereGeometry& g = as.basis().geom;
  int steps = (int)std::llround(T / dt);
  for (int i = 0; i <= steps; ++i)
    if (rdelta.sup(t_start + i * dt, g) >= band * g.kappa())
      throw MarginViolated("solve_decoupled: mollified displacement leaves the admissible band");
  return run_galerkin(as, kf, rdelta, rv, force, std::move(alpha0),
                      std::move(eta0), dt, T, t_start);
}

// ---------------------------------------------------------------------------
// Picard iteration on one time window. The displacement iterate lives on the
// solver time grid, the velocity iterate on the coarser sample lattice; both
// carry their mollifier history so the mollified inputs are continuous
// across window junctions.

struct CouplingParams {
  double epsilon = 0.05;
  double relax = 0.7;
  double fp_tol = 1e-6;
  int fp_max_iters = 50;
  double margin = 0.95;    // collision stop on ||eta||_inf / kappa
  double rate_tol = 1e-3;  // initial-rate compatibility tolerance
  int vel_ns = 40;         // velocity sample lattice
  int vel_nz = 81;
  double vel_frame_dt = 0.0;  // 0: solver dt times round(eps / (4 dt))
};

struct FixedPointLog {
  std::vector<double> increments;
  int iterations = 0;
};

struct WindowResult {
  PdeTrajectory traj;
  ShellSource delta;    // source fed to the displacement mollifier
  VelocitySource vel;   // samples fed to the velocity mollifier
  FixedPointLog log;
};

inline WindowResult fixed_point_solve(const Assembler& as, const KoiterForm& kf,
                                      const CouplingParams& p,
                                      const Forcing* force, Vec alpha0,
                                      Vec eta0, const ShellSource& hist,
                                      const VelocitySource& vhist,
                                      double t_start, double T, double dt,
                                      double band = 0.98) {
  const ReferenceBasis& basis = as.basis();
  const SphereGeometry& g = basis.geom;
  int nsteps = (int)std::llround(T / dt);
  if (std::abs(hist.t_end() - t_start) > 1e-9 || std::abs(hist.dt - dt) > 1e-12)
    throw Error("fixed_point_solve: history does not end at the window start");
  // the history ends with the relaxed iterate, which trails the solver
  // state by at most the convergence increment
  if ((hist.eta.back() - eta0).cwiseAbs().maxCoeff() > std::max(1e-9, 10.0 * p.fp_tol))
    throw Error("fixed_point_solve: history terminal state mismatch");

  // displacement iterate: constant continuation of the initial state
  std::vector<Vec> wf(nsteps + 1, eta0);

  // velocity frame bookkeeping on the global lattice grid
  VelocitySource vbase = vhist;
  double dtv = vbase.dt;
  int jlo = std::max(0, (int)std::ceil((t_start - vbase.t0) / dtv - 1e-9));
  int jhi = (int)std::floor((t_start + T - vbase.t0) / dtv + 1e-9);
  std::vector<std::vector<Vec3>> vf(jhi - jlo + 1);
  for (int j = jlo; j <= jhi; ++j)
    vf[j - jlo] = (j < (int)vbase.frames.size()) ? vbase.frames[j]
                                                 : vbase.zero_frame();

  WindowResult out;
  for (int m = 0; m < p.fp_max_iters; ++m) {
    ShellSource src = hist;
    src.eta.reserve(hist.eta.size() + nsteps);
    for (int i = 1; i <= nsteps; ++i) src.eta.push_back(wf[i]);

    VelocitySource vsrc = vbase;
    if ((int)vsrc.frames.size() < jhi + 1)
      vsrc.frames.resize(jhi + 1, vsrc.zero_frame());
    for (int j = jlo; j <= jhi; ++j) vsrc.frames[j] = vf[j - jlo];

    MollifiedPath rdelta(g, basis.grid, src, p.epsilon);
    MollifiedVelocity rv(vsrc, p.epsilon);
    PdeTrajectory traj = solve_decoupled(as, kf, rdelta, &rv, force, alpha0,
                                         eta0, dt, T, t_start, band);

    // displacement increment and relaxed update
    double d_eta = 0.0;
    for (int i = 1; i <= nsteps; ++i)
      d_eta = std::max(d_eta, (traj.eta[i] - wf[i]).cwiseAbs().maxCoeff());

    // resample the velocity on the lattice frames of this window
    double d_v = 0.0;
    std::vector<std::vector<Vec3>> vn(vf.size());
    for (int j = jlo; j <= jhi; ++j) {
      double tf = vbase.t0 + j * dtv;
      int i = std::clamp((int)std::llround((tf - t_start) / dt), 0, nsteps);
      StreamField comb;
      for (int k = 0; k < basis.n(); ++k)
        comb.axpy(traj.alpha[i][k], basis.field(k));
      HanzawaMap map = as.map_at(traj.t[i], rdelta);
      auto frame = vsrc.zero_frame();
      for (int is = 0; is < vsrc.ns; ++is)
        for (int iz = 0; iz < vsrc.nz; ++iz) {
          Vec3 y(is * vsrc.ds(), 0.0, -vsrc.zmax + iz * vsrc.dz());
          double r = y.norm();
          if (r >= g.R + g.kappa()) continue;
          double th = (r < 1e-14)
                          ? 0.0
                          : std::acos(std::clamp(y.z() / r, -1.0, 1.0));
          if (r >= g.R + rdelta.value(traj.t[i], th) - 1e-9) continue;
          Vec3 x = map.inverse(y);
          auto fr = map.forward(x);
          frame[vsrc.idx(is, iz)] = (fr.J * comb.eval(x)) / fr.detJ;
        }
      for (size_t q = 0; q < frame.size(); ++q)
        d_v = std::max(d_v, (frame[q] - vf[j - jlo][q]).cwiseAbs().maxCoeff());
      vn[j - jlo] = std::move(frame);
    }

    double inc = d_eta + d_v;
    out.log.increments.push_back(inc);
    out.log.iterations = m + 1;
    if (inc < p.fp_tol) {
      out.traj = std::move(traj);
      out.delta = std::move(src);
      out.vel = std::move(vsrc);
      return out;
    }
    for (int i = 1; i <= nsteps; ++i)
      wf[i] += p.relax * (traj.eta[i] - wf[i]);
    for (size_t j = 0; j < vf.size(); ++j)
      for (size_t q = 0; q < vf[j].size(); ++q)
        vf[j][q] += p.relax * (vn[j][q] - vf[j][q]);
  }
  throw MaxIterations("fixed_point_solve: no convergence, last increment " +
                      std::to_string(out.log.increments.back()));
}

// ---------------------------------------------------------------------------
// Windowed continuation until the horizon, the collision margin, or a
// breakdown of the fixed point under repeated window shrinking.

enum class StopReason { HORIZON, COLLISION, DIVERGED };

inline const char* to_string(StopReason s) {
  switch (s) {
    case StopReason::HORIZON: return "HORIZON";
    case StopReason::COLLISION: return "COLLISION";
    default: return "DIVERGED";
  }
}

struct CoupledTrajectory {
  std::vector<double> t;
  std::vector<Vec> alpha, eta, rate;
  std::vector<double> kinetic, shell_kin, elastic, dissip, work;
  StopReason stop = StopReason::HORIZON;
  double t_star = std::numeric_limits<double>::infinity();
  std::vector<double> window_starts;
  std::vector<FixedPointLog> logs;
};

template <class U0>
CoupledTrajectory advance_until_collision(const SphereGeometry& g,
                                          const GalerkinConfig& cfg,
                                          const ElasticParams& ep,
                                          const CouplingParams& p,
                                          const Forcing* force, U0 u0, Vec eta0,
                                          Vec eta1, double horizon,
                                          double window) {
  ReferenceBasis basis = build_reference_bases(g, cfg);
  KoiterForm kf = make_koiter_form(basis.grid, ep);
  double dt = cfg.dt, kappa = g.kappa();

  // cutoff steep enough for the current band of displacements; rebuilt with
  // a wider band when the geometry outgrows it
  auto ratio_for = [&](double sup) {
    return std::clamp((sup + std::sqrt(p.epsilon)) / kappa + 0.15, 0.45, 0.98);
  };
  double ratio = ratio_for(eta0.cwiseAbs().maxCoeff());
  auto assembler =
      std::make_unique<Assembler>(basis, cfg, make_cutoff(ratio));

  int nh = (int)std::ceil(p.epsilon / dt) + 2;
  ShellSource hist;
  hist.t0 = -nh * dt;
  hist.dt = dt;
  hist.eta.assign(nh + 1, eta0);

  VelocitySource vhist;
  vhist.t0 = 0.0;
  vhist.dt = (p.vel_frame_dt > 0.0)
                 ? p.vel_frame_dt
                 : dt * std::max(1.0, std::round(p.epsilon / (4.0 * dt)));
  vhist.smax = vhist.zmax = g.R + kappa;
  vhist.ns = p.vel_ns;
  vhist.nz = p.vel_nz;

  // admissibilize the initial data against the mollified boundary and
  // project onto the basis of the initial domain
  MollifiedPath path0(g, basis.grid, hist, p.epsilon);
  ZonalFn reta0 = [&path0](double th) { return path0.value(0.0, th); };
  LiftedData ld =
      lift_initial_data(g, basis.grid, std::move(u0), eta0, eta1, reta0,
                        cfg.stokes_lmax);
  Vec alpha = project_initial(*assembler, path0, ld.u0, ld.eta1, p.rate_tol);

  CoupledTrajectory out;
  Vec eta = eta0;
  double T0 = 0.0, Tw = window;
  double dissip_off = 0.0, work_off = 0.0;
  bool first = true;

  while (T0 < horizon - 0.5 * dt) {
    int nst = std::max(1, (int)std::llround(std::min(Tw, horizon - T0) / dt));
    double Tlen = nst * dt;

    bool geom_fail = false, iter_fail = false;
    WindowResult wr;
    try {
      wr = fixed_point_solve(*assembler, kf, p, force, alpha, eta, hist,
                             vhist, T0, Tlen, dt, ratio - 0.01);
    } catch (const MaxIterations&) {
      iter_fail = true;
    } catch (const LinearSolveFailure&) {
      iter_fail = true;
    } catch (const MarginViolated&) {
      geom_fail = true;
    } catch (const InadmissibleDisplacement&) {
      geom_fail = true;
    } catch (const NonSPDMass&) {
      geom_fail = true;
    }
    if (geom_fail && ratio < 0.979) {
      ratio = std::min(0.98, ratio + 0.2);
      assembler =
          std::make_unique<Assembler>(basis, cfg, make_cutoff(ratio));
      continue;
    }
    if (geom_fail || iter_fail) {
      Tw *= 0.5;
      if (Tw < 4.0 * dt) {
        out.stop = StopReason::DIVERGED;
        return out;
      }
      continue;
    }

    out.window_starts.push_back(T0);
    out.logs.push_back(wr.log);
    bool collided = false;
    for (size_t i = first ? 0 : 1; i < wr.traj.t.size(); ++i) {
      out.t.push_back(wr.traj.t[i]);
      out.alpha.push_back(wr.traj.alpha[i]);
      out.eta.push_back(wr.traj.eta[i]);
      out.rate.push_back(wr.traj.rate[i]);
      out.kinetic.push_back(wr.traj.kinetic[i]);
      out.shell_kin.push_back(wr.traj.shell_kin[i]);
      out.elastic.push_back(wr.traj.elastic[i]);
      out.dissip.push_back(dissip_off + wr.traj.dissip[i]);
      out.work.push_back(work_off + wr.traj.work[i]);
      if (wr.traj.eta[i].cwiseAbs().maxCoeff() >= p.margin * kappa) {
        out.stop = StopReason::COLLISION;
        out.t_star = wr.traj.t[i];
        collided = true;
        break;
      }
    }
    if (collided) return out;

    first = false;
    alpha = wr.traj.alpha.back();
    eta = wr.traj.eta.back();
    dissip_off += wr.traj.dissip.back();
    work_off += wr.traj.work.back();
    hist = std::move(wr.delta);
    vhist = std::move(wr.vel);

    // trim displacement history beyond the mollifier reach
    int keep_from =
        (int)std::floor((T0 + Tlen - p.epsilon - 2.0 * dt - hist.t0) / dt);
    if (keep_from > 0) {
      hist.eta.erase(hist.eta.begin(), hist.eta.begin() + keep_from);
      hist.t0 += keep_from * dt;
    }
    T0 += Tlen;
    Tw = window;
  }
  out.stop = StopReason::HORIZON;
  return out;
}

}  // namespace shellflow

#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "shellflow/coupling.hpp"

namespace shellflow {

// ---------------------------------------------------------------------------
// Energy ledger: per-step records of the discrete energy identity and its
// residual, derived from a solved trajectory.

struct EnergyLedger {
  std::vector<double> t, fluid_kin, shell_kin, elastic, dissip, work, residual;

  int n() const { return (int)t.size(); }
};

template <class Traj>
EnergyLedger energy_ledger(const Traj& tr) {
  EnergyLedger led;
  led.t = tr.t;
  led.fluid_kin = tr.kinetic;
  led.shell_kin = tr.shell_kin;
  led.elastic = tr.elastic;
  led.dissip = tr.dissip;
  led.work = tr.work;
  led.residual.assign(tr.t.size(), 0.0);
  for (size_t i = 1; i < tr.t.size(); ++i) {
    double e1 = tr.kinetic[i] + tr.shell_kin[i] + tr.elastic[i];
    double e0 = tr.kinetic[i - 1] + tr.shell_kin[i - 1] + tr.elastic[i - 1];
    led.residual[i] = (e1 - e0) + (tr.dissip[i] - tr.dissip[i - 1]) -
                      (tr.work[i] - tr.work[i - 1]);
  }
  return led;
}

// ---------------------------------------------------------------------------
// Constant-free integrated energy inequality
//   E(t) + D(t) <= E(0) + W(t) + slack
// checked at every output time; the exponential ratio is reported as an
// informational a-priori-bound diagnostic.

struct GronwallReport {
  bool ok = true;
  double worst_slack = 0.0;
  double worst_time = 0.0;
  double scale = 0.0;
  double exp_ratio = 0.0;  // max of (E + D) / (e^t (E(0) + W + eps))
};

inline GronwallReport gronwall_check(const EnergyLedger& led,
                                     double slack_tol = 1e-3) {
  GronwallReport rep;
  if (led.n() == 0) return rep;
  double e0 = led.fluid_kin[0] + led.shell_kin[0] + led.elastic[0];
  double wmax = 0.0;
  for (double w : led.work) wmax = std::max(wmax, std::abs(w));
  rep.scale = std::max(e0, wmax) + 1e-12;
  for (int i = 0; i < led.n(); ++i) {
    double e = led.fluid_kin[i] + led.shell_kin[i] + led.elastic[i];
    double lhs = e + led.dissip[i];
    double slack = lhs - (e0 + led.work[i]);
    if (slack > rep.worst_slack) {
      rep.worst_slack = slack;
      rep.worst_time = led.t[i];
    }
    rep.exp_ratio = std::max(
        rep.exp_ratio, lhs / (std::exp(led.t[i]) * (e0 + std::abs(led.work[i]) + 1e-12)));
  }
  rep.ok = rep.worst_slack <= slack_tol * rep.scale;
  if (!rep.ok)
    throw InequalityViolated("energy inequality violated at t = " +
                             std::to_string(rep.worst_time) + ", slack " +
                             std::to_string(rep.worst_slack));
  return rep;
}

// ---------------------------------------------------------------------------
// Reynolds transport residual on a moving star-shaped family: the boundary
// is r = rho(t, theta), the domain velocity is radial with speed rhodot.
// Residual at each interior step of
//   d/dt int_{Omega(t)} xi = int_{Omega(t)} d_t xi + oint (w . nu) xi dA,
// the boundary term written exactly in star coordinates.

struct MovingStarDomain {
  std::function<double(double, double)> rho;     // (t, theta)
  std::function<double(double, double)> rhodot;  // boundary radial speed
};

template <class Xi, class DXi>
std::vector<double> reynolds_defect(const MovingStarDomain& dom, Xi&& xi,
                                    DXi&& dxi, double dt, double T,
                                    int n_theta = 64, int n_r = 48) {
  auto qt = gauss_legendre(n_theta, 0.0, pi);
  auto vol = [&](double t, bool rate) {
    double I = 0.0;
    for (size_t i = 0; i < qt.x.size(); ++i) {
      double th = qt.x[i];
      Vec3 dir(std::sin(th), 0.0, std::cos(th));
      auto qr = gauss_legendre(n_r, 1e-9, dom.rho(t, th));
      double acc = 0.0;
      for (size_t k = 0; k < qr.x.size(); ++k) {
        double r = qr.x[k];
        double v = rate ? dxi(t, Vec3(r * dir)) : xi(t, Vec3(r * dir));
        acc += qr.w[k] * r * r * v;
      }
      I += 2.0 * pi * qt.w[i] * std::sin(th) * acc;
    }
    return I;
  };
  auto boundary = [&](double t) {
    double I = 0.0;
    for (size_t i = 0; i < qt.x.size(); ++i) {
      double th = qt.x[i];
      double r = dom.rho(t, th);
      Vec3 y = r * Vec3(std::sin(th), 0.0, std::cos(th));
      I += 2.0 * pi * qt.w[i] * std::sin(th) * r * r * dom.rhodot(t, th) *
           xi(t, y);
    }
    return I;
  };
  int steps = (int)std::llround(T / dt);
  std::vector<double> res;
  for (int i = 1; i < steps; ++i) {
    double t = i * dt;
    double lhs = (vol(t + dt, false) - vol(t - dt, false)) / (2.0 * dt);
    res.push_back(lhs - vol(t, true) - boundary(t));
  }
  return res;
}

// ---------------------------------------------------------------------------
// Korn-identity defect on the star domain r < R + eta(theta):
//   int (grad u)^T : grad u dx  /  int |grad u|^2 dx.
// Near zero for divergence-free fields with purely normal boundary trace;
// -1 for rigid rotations (the negative control).

template <class U>
double korn_defect(const SphereGeometry& g, U&& u, const ZonalFn& eta,
                   int n_theta = 96, int n_r = 32, double fd_h = 1e-5,
                   double r_split = -1.0) {
  Quadrature1D qt;
  if (g.theta_gamma > 1e-12) {
    auto qa = gauss_legendre(std::max(4, n_theta / 4), 0.0, g.theta_gamma);
    auto qb = gauss_legendre(n_theta, g.theta_gamma, pi);
    qt.x = qa.x;
    qt.w = qa.w;
    qt.x.insert(qt.x.end(), qb.x.begin(), qb.x.end());
    qt.w.insert(qt.w.end(), qb.w.begin(), qb.w.end());
  } else {
    qt = gauss_legendre(n_theta, 0.0, pi);
  }
  double num = 0.0, den = 0.0;
  for (size_t i = 0; i < qt.x.size(); ++i) {
    double th = qt.x[i];
    double rho = g.R + ((th >= g.theta_gamma) ? eta(th) : 0.0);
    Vec3 dir(std::sin(th), 0.0, std::cos(th));
    auto radial = [&](double r0, double r1) {
      auto qr = gauss_legendre(n_r, r0, r1);
      for (size_t k = 0; k < qr.x.size(); ++k) {
        double r = qr.x[k];
        Mat3 G = fd_gradient(u, Vec3(r * dir), fd_h);
        double w = 2.0 * pi * qt.w[i] * qr.w[k] * r * r * std::sin(th);
        num += w * (G * G).trace();
        den += w * G.squaredNorm();
      }
    };
    if (r_split > 0.0 && r_split < rho) {
      radial(1e-6, r_split);
      radial(r_split, rho * (1.0 - 1e-9));
    } else {
      radial(1e-6, rho * (1.0 - 1e-9));
    }
  }
  if (den <= 0.0) return 0.0;
  return num / den;
}

// ---------------------------------------------------------------------------
// Flat key = value run configuration with dotted keys; unknown keys are hard
// errors, values are kept as strings and parsed on access.

class RunConfig {
 public:
  RunConfig() { kv_ = defaults(); }

  static RunConfig from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    RunConfig rc;
    std::string line;
    int ln = 0;
    while (std::getline(in, line)) {
      ++ln;
      auto hash = line.find('#');
      if (hash != std::string::npos) line = line.substr(0, hash);
      auto trim = [](std::string s) {
        size_t a = s.find_first_not_of(" \t\r");
        if (a == std::string::npos) return std::string();
        size_t b = s.find_last_not_of(" \t\r");
        return s.substr(a, b - a + 1);
      };
      line = trim(line);
      if (line.empty()) continue;
      auto eq = line.find('=');
      if (eq == std::string::npos)
        throw ConfigError(path + ":" + std::to_string(ln) +
                          ": expected key = value");
      rc.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return rc;
  }

  void set(const std::string& key, const std::string& value) {
    if (kv_.find(key) == kv_.end())
      throw ConfigError("unknown config key: " + key);
    kv_[key] = value;
  }

  // "key=value" override from the command line
  void override_entry(const std::string& kv) {
    auto eq = kv.find('=');
    if (eq == std::string::npos)
      throw ConfigError("override must be key=value: " + kv);
    set(kv.substr(0, eq), kv.substr(eq + 1));
  }

  double num(const std::string& key) const {
    const std::string& s = at(key);
    try {
      size_t pos = 0;
      double v = std::stod(s, &pos);
      if (pos != s.size()) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      throw ConfigError("config key " + key + ": not a number: " + s);
    }
  }
  int integer(const std::string& key) const {
    double v = num(key);
    if (v != std::floor(v))
      throw ConfigError("config key " + key + ": not an integer");
    return (int)v;
  }
  const std::string& str(const std::string& key) const { return at(key); }

  SphereGeometry geometry() const {
    SphereGeometry g;
    g.R = num("geometry.radius");
    g.theta_gamma = num("geometry.theta_gamma");
    if (g.R <= 0.0) throw ConfigError("geometry.radius must be positive");
    return g;
  }
  GalerkinConfig galerkin() const {
    GalerkinConfig c;
    c.n_surface = integer("galerkin.n_modes_surface");
    c.n_interior = integer("galerkin.n_modes_interior");
    c.dt = num("galerkin.dt");
    c.horizon = num("galerkin.horizon");
    c.n_theta_grid = integer("geometry.n_theta");
    c.quad_theta = integer("geometry.quad_order");
    c.quad_r = integer("stokes.n_r");
    c.stokes_quad = integer("stokes.n_theta");
    c.stokes_tol = num("stokes.tol");
    if (c.dt <= 0.0) throw ConfigError("galerkin.dt must be positive");
    return c;
  }
  ElasticParams elastic() const {
    ElasticParams p;
    p.lambda = num("shell.lambda");
    p.mu = num("shell.mu");
    p.eps0 = num("shell.eps0");
    return p;
  }
  CouplingParams coupling() const {
    CouplingParams p;
    p.epsilon = num("coupling.epsilon");
    p.relax = num("coupling.relax");
    p.fp_tol = num("coupling.fp_tol");
    p.fp_max_iters = integer("coupling.fp_max_iters");
    p.margin = num("coupling.margin");
    p.rate_tol = num("tolerances.rate_tol");
    return p;
  }

  const std::map<std::string, std::string>& entries() const { return kv_; }

 private:
  const std::string& at(const std::string& key) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) throw ConfigError("unknown config key: " + key);
    return it->second;
  }

  static std::map<std::string, std::string> defaults() {
    return {
        {"geometry.radius", "1.0"},
        {"geometry.theta_gamma", "0.5235987755982988"},
        {"geometry.n_theta", "97"},
        {"geometry.quad_order", "48"},
        {"shell.lambda", "1.0"},
        {"shell.mu", "1.0"},
        {"shell.eps0", "0.1"},
        {"operators.alpha_fraction", "0.5"},
        {"operators.mean_tol", "1e-8"},
        {"stokes.n_r", "28"},
        {"stokes.n_theta", "200"},
        {"stokes.tol", "1e-6"},
        {"galerkin.n_modes_surface", "8"},
        {"galerkin.n_modes_interior", "8"},
        {"galerkin.dt", "1e-3"},
        {"galerkin.horizon", "1.0"},
        {"coupling.epsilon", "0.05"},
        {"coupling.relax", "0.7"},
        {"coupling.fp_tol", "1e-6"},
        {"coupling.fp_max_iters", "50"},
        {"coupling.margin", "0.95"},
        {"run.horizon", "1.0"},
        {"run.restart_window", "0.25"},
        {"run.output_dir", "."},
        {"run.snapshot_stride", "10"},
        {"tolerances.rate_tol", "1e-3"},
        {"tolerances.energy_slack", "1e-3"},
        {"forcing.f", "none"},
        {"forcing.f_amplitude", "0.0"},
        {"forcing.f_frequency", "1.0"},
        {"forcing.g", "pulse"},
        {"forcing.g_amplitude", "0.05"},
        {"forcing.g_frequency", "1.0"},
        {"forcing.g_center", "3.141592653589793"},
        {"forcing.g_width", "1.2"},
        {"forcing.g_table", ""},
        {"init.eta0_amp", "0.0"},
        {"init.eta1_amp", "0.0"},
    };
  }

  std::map<std::string, std::string> kv_;
};

// ---------------------------------------------------------------------------
// Forcing presets: none | constant | pulse for both densities, plus a
// tabulated surface load (CSV rows t,node,value on the shell grid).

inline Forcing make_forcing(const RunConfig& rc, const SurfaceGrid& grid) {
  Forcing f;
  const std::string& fp = rc.str("forcing.f");
  double fa = rc.num("forcing.f_amplitude"), fq = rc.num("forcing.f_frequency");
  if (fp == "constant") {
    f.f = [fa](double, const Vec3&) { return Vec3(0.0, 0.0, fa); };
  } else if (fp == "pulse") {
    f.f = [fa, fq](double t, const Vec3&) {
      return Vec3(0.0, 0.0, fa * std::sin(2.0 * pi * fq * t));
    };
  } else if (fp != "none") {
    throw ConfigError("forcing.f: unknown preset " + fp);
  }

  const std::string& gp = rc.str("forcing.g");
  double ga = rc.num("forcing.g_amplitude"), gq = rc.num("forcing.g_frequency");
  double gc = rc.num("forcing.g_center"), gw = rc.num("forcing.g_width");
  auto shape = [gc, gw](double th) { return bump((th - gc) / gw); };
  if (gp == "constant") {
    f.g = [ga, shape](double, double th) { return ga * shape(th); };
  } else if (gp == "pulse") {
    f.g = [ga, gq, shape](double t, double th) {
      return ga * std::sin(2.0 * pi * gq * t) * shape(th);
    };
  } else if (gp == "table") {
    const std::string& path = rc.str("forcing.g_table");
    std::ifstream in(path);
    if (!in) throw ConfigError("forcing.g_table: cannot open " + path);
    std::map<double, Vec> rows;  // t -> nodal values
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty() || line[0] == '#' || line[0] == 't') continue;
      std::istringstream ls(line);
      std::string a, b, c;
      if (!std::getline(ls, a, ',') || !std::getline(ls, b, ',') ||
          !std::getline(ls, c, ','))
        throw ConfigError("forcing.g_table: expected rows t,node,value");
      double t = std::stod(a);
      int node = std::stoi(b);
      if (node < 0 || node >= grid.n())
        throw ConfigError("forcing.g_table: node index out of range");
      auto it = rows.find(t);
      if (it == rows.end())
        it = rows.emplace(t, Vec::Zero(grid.n())).first;
      it->second[node] = std::stod(c);
    }
    if (rows.empty()) throw ConfigError("forcing.g_table: no rows in " + path);
    double a0 = grid.nodes[0];
    double h = (grid.nodes[grid.n() - 1] - a0) / (grid.n() - 1);
    f.g = [rows = std::move(rows), a0, h, n = grid.n()](double t, double th) {
      int node = std::clamp((int)std::llround((th - a0) / h), 0, n - 1);
      auto hi = rows.lower_bound(t);
      if (hi == rows.begin()) return hi->second[node];
      if (hi == rows.end()) return std::prev(hi)->second[node];
      auto lo = std::prev(hi);
      double w = (t - lo->first) / (hi->first - lo->first);
      return (1.0 - w) * lo->second[node] + w * hi->second[node];
    };
  } else if (gp != "none") {
    throw ConfigError("forcing.g: unknown preset " + gp);
  }
  return f;
}

// ---------------------------------------------------------------------------
// Run driver: initial data from the config presets, the windowed coupled
// solve, the ledger, and the inequality check.

struct RunSummary {
  std::string stop_reason;
  double t_star = std::numeric_limits<double>::infinity();
  std::vector<int> fp_iterations;
  double max_balance_residual = 0.0;
  double gronwall_slack = 0.0;
  double gronwall_exp_ratio = 0.0;
};

struct RunResult {
  SurfaceGrid grid;
  CoupledTrajectory traj;
  EnergyLedger ledger;
  RunSummary summary;
};

inline RunResult execute_run(const RunConfig& rc) {
  SphereGeometry g = rc.geometry();
  GalerkinConfig gc = rc.galerkin();
  ElasticParams ep = rc.elastic();
  CouplingParams cp = rc.coupling();

  RunResult out;
  out.grid = make_cap_grid(g, gc.n_theta_grid);
  Forcing force = make_forcing(rc, out.grid);

  auto shape = [&](double th) {
    if (th < g.theta_gamma) return 0.0;
    double z = pi * (th - g.theta_gamma) / (pi - g.theta_gamma);
    double c = 1.0 - std::cos(z);
    return 0.25 * c * c;
  };
  double a0 = rc.num("init.eta0_amp"), a1 = rc.num("init.eta1_amp");
  Vec eta0(out.grid.n()), eta1 = Vec::Zero(out.grid.n());
  for (int i = 0; i < out.grid.n(); ++i) eta0[i] = a0 * shape(out.grid.nodes[i]);

  std::function<Vec3(const Vec3&)> u0 = [](const Vec3&) {
    return Vec3(Vec3::Zero());
  };
  if (a1 != 0.0) {
    ZonalFn e0 = nodal_zonal(out.grid, eta0);
    ZonalFn raw = [a1, shape](double th) { return a1 * shape(th); };
    ZonalFn b = mean_correct(g, raw, e0, default_bump(g),
                             rc.num("operators.mean_tol"));
    for (int i = 0; i < out.grid.n(); ++i) eta1[i] = b(out.grid.nodes[i]);
    double sup0 = std::abs(a0);
    double alpha = default_alpha(g, sup0, rc.num("operators.alpha_fraction"));
    ExtendedField u0f = extend_boundary(g, b, e0, alpha, 1e-6, gc.stokes_lmax);
    u0 = [u0f](const Vec3& y) { return u0f.eval(y); };
  }

  out.traj = advance_until_collision(g, gc, ep, cp,
                                     (force.f || force.g) ? &force : nullptr,
                                     u0, eta0, eta1, rc.num("run.horizon"),
                                     rc.num("run.restart_window"));
  out.ledger = energy_ledger(out.traj);

  out.summary.stop_reason = to_string(out.traj.stop);
  out.summary.t_star = out.traj.t_star;
  for (auto& log : out.traj.logs)
    out.summary.fp_iterations.push_back(log.iterations);
  for (double r : out.ledger.residual)
    out.summary.max_balance_residual =
        std::max(out.summary.max_balance_residual, std::abs(r));
  if (out.traj.stop != StopReason::DIVERGED && out.ledger.n() > 0) {
    GronwallReport rep =
        gronwall_check(out.ledger, rc.num("tolerances.energy_slack"));
    out.summary.gronwall_slack = rep.worst_slack;
    out.summary.gronwall_exp_ratio = rep.exp_ratio;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Artifact writers: fixed %.12g formatting keeps repeated runs byte-identical.

namespace detail {

inline std::string fmt12(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

inline uint64_t fnv1a(const std::string& s) {
  uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::string hex64(uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", (unsigned long long)v);
  return buf;
}

}  // namespace detail

inline std::string energy_csv(const EnergyLedger& led) {
  std::string s =
      "t,E_fluid_kin,E_shell_kin,E_elastic,D_visc_cum,W_ext_cum,balance_residual\n";
  for (int i = 0; i < led.n(); ++i) {
    s += detail::fmt12(led.t[i]) + "," + detail::fmt12(led.fluid_kin[i]) + "," +
         detail::fmt12(led.shell_kin[i]) + "," + detail::fmt12(led.elastic[i]) +
         "," + detail::fmt12(led.dissip[i]) + "," + detail::fmt12(led.work[i]) +
         "," + detail::fmt12(led.residual[i]) + "\n";
  }
  return s;
}

inline std::string snapshots_csv(const SurfaceGrid& grid,
                                 const CoupledTrajectory& traj, int stride) {
  std::string s = "t,theta,eta,deta_dt\n";
  for (size_t i = 0; i < traj.t.size(); i += std::max(1, stride)) {
    for (int j = 0; j < grid.n(); ++j) {
      s += detail::fmt12(traj.t[i]) + "," + detail::fmt12(grid.nodes[j]) + "," +
           detail::fmt12(traj.eta[i][j]) + "," + detail::fmt12(traj.rate[i][j]) +
           "\n";
    }
  }
  return s;
}

inline std::string summary_json(const RunSummary& sm, const std::string& cs_e,
                                const std::string& cs_s) {
  std::string s = "{\n";
  s += "  \"stop_reason\": \"" + sm.stop_reason + "\",\n";
  s += "  \"t_star\": ";
  s += std::isfinite(sm.t_star) ? detail::fmt12(sm.t_star) : std::string("null");
  s += ",\n  \"windows\": " + std::to_string(sm.fp_iterations.size());
  s += ",\n  \"fp_iterations\": [";
  for (size_t i = 0; i < sm.fp_iterations.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(sm.fp_iterations[i]);
  }
  s += "],\n  \"max_balance_residual\": " +
       detail::fmt12(sm.max_balance_residual);
  s += ",\n  \"gronwall_slack\": " + detail::fmt12(sm.gronwall_slack);
  s += ",\n  \"gronwall_exp_ratio\": " + detail::fmt12(sm.gronwall_exp_ratio);
  s += ",\n  \"checksum_energy\": \"" + cs_e + "\"";
  s += ",\n  \"checksum_snapshots\": \"" + cs_s + "\"\n}\n";
  return s;
}

inline void write_outputs(const RunResult& rr, const RunConfig& rc) {
  namespace fs = std::filesystem;
  fs::path dir = rc.str("run.output_dir");
  fs::create_directories(dir);
  std::string e = energy_csv(rr.ledger);
  std::string sn =
      snapshots_csv(rr.grid, rr.traj, rc.integer("run.snapshot_stride"));
  std::ofstream(dir / "energy.csv") << e;
  std::ofstream(dir / "shell_snapshots.csv") << sn;
  std::ofstream(dir / "summary.json")
      << summary_json(rr.summary, detail::hex64(detail::fnv1a(e)),
                      detail::hex64(detail::fnv1a(sn)));
}

// ---------------------------------------------------------------------------
// L2(I x M) distance between the shell trajectories of two runs on the same
// grid and time step, for the epsilon study.

inline double l2_space_time_diff(const SurfaceGrid& grid,
                                 const CoupledTrajectory& a,
                                 const CoupledTrajectory& b, double dt) {
  size_t n = std::min(a.eta.size(), b.eta.size());
  double acc = 0.0;
  for (size_t i = 0; i < n; ++i) {
    Vec d = a.eta[i] - b.eta[i];
    acc += dt * d.dot(grid.w.asDiagonal() * d);
  }
  return std::sqrt(acc);
}

}  // namespace shellflow

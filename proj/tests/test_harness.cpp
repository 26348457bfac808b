#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "shellflow/harness.hpp"

using namespace shellflow;

namespace {

// small but fully coupled configuration for fast end-to-end runs
RunConfig tiny_config() {
  RunConfig rc;
  rc.set("geometry.n_theta", "65");
  rc.set("geometry.quad_order", "24");
  rc.set("stokes.n_r", "24");
  rc.set("galerkin.n_modes_surface", "4");
  rc.set("galerkin.n_modes_interior", "4");
  rc.set("galerkin.dt", "2e-3");
  rc.set("run.horizon", "0.02");
  rc.set("run.restart_window", "0.02");
  return rc;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const std::filesystem::path& p, const std::string& s) {
  std::ofstream(p) << s;
}

}  // namespace

TEST_CASE("energy ledger") {
  // zero data keeps every column exactly zero
  RunConfig rc = tiny_config();
  rc.set("forcing.g", "none");
  RunResult rr = execute_run(rc);
  REQUIRE(rr.summary.stop_reason == "HORIZON");
  REQUIRE(rr.ledger.n() == 11);
  for (int i = 0; i < rr.ledger.n(); ++i) {
    REQUIRE(rr.ledger.fluid_kin[i] == 0.0);
    REQUIRE(rr.ledger.shell_kin[i] == 0.0);
    REQUIRE(rr.ledger.elastic[i] == 0.0);
    REQUIRE(rr.ledger.dissip[i] == 0.0);
    REQUIRE(rr.ledger.work[i] == 0.0);
    REQUIRE(rr.ledger.residual[i] == 0.0);
  }

  // forced run: dissipation monotone, per-step balance residual small
  RunConfig rf = tiny_config();
  rf.set("forcing.g_amplitude", "0.3");
  RunResult rw = execute_run(rf);
  double scale = 0.0;
  for (int i = 0; i < rw.ledger.n(); ++i) {
    scale = std::max({scale,
                      rw.ledger.fluid_kin[i] + rw.ledger.shell_kin[i] +
                          rw.ledger.elastic[i],
                      std::abs(rw.ledger.work[i])});
    if (i > 0) REQUIRE(rw.ledger.dissip[i] >= rw.ledger.dissip[i - 1]);
  }
  REQUIRE(scale > 0.0);
  REQUIRE(rw.summary.max_balance_residual <= 1e-3 * scale);
}

TEST_CASE("gronwall check") {
  // free ringdown: no external work, energy plus dissipation cannot grow
  RunConfig rc = tiny_config();
  rc.set("forcing.g", "none");
  rc.set("init.eta1_amp", "0.02");
  RunResult rr = execute_run(rc);
  REQUIRE(rr.ledger.fluid_kin[0] + rr.ledger.shell_kin[0] > 0.0);
  GronwallReport rep = gronwall_check(rr.ledger, 1e-3);
  REQUIRE(rep.ok);
  REQUIRE(rep.exp_ratio <= 1.0 + 1e-3);

  // a fabricated energy jump trips the inequality
  EnergyLedger bad = rr.ledger;
  bad.fluid_kin.back() += 1.0;
  REQUIRE_THROWS_AS(gronwall_check(bad, 1e-3), InequalityViolated);
}

TEST_CASE("reynolds transport residual") {
  double dt = 1e-3, T = 5e-3;

  // static domain: pure differentiation check
  MovingStarDomain fixed{[](double, double) { return 1.0; },
                         [](double, double) { return 0.0; }};
  auto xi = [](double t, const Vec3& x) {
    return x.x() * x.x() + x.z() + 0.5 * t;
  };
  auto dxi = [](double, const Vec3&) { return 0.5; };
  for (double r : reynolds_defect(fixed, xi, dxi, dt, T, 48, 32))
    REQUIRE(std::abs(r) < 1e-9);

  // uniformly expanding ball with xi = 1: the identity reduces to
  // d/dt (4/3 pi R^3) = 4 pi R^2 Rdot
  MovingStarDomain ball{[](double t, double) { return 1.0 + 0.1 * t; },
                        [](double, double) { return 0.1; }};
  auto one = [](double, const Vec3&) { return 1.0; };
  auto zero = [](double, const Vec3&) { return 0.0; };
  std::vector<double> res = reynolds_defect(ball, one, zero, dt, T, 48, 32);
  double t1 = dt, rr = 1.0 + 0.1 * t1;
  double scale = 4.0 * pi * rr * rr * 0.1;
  for (double r : res) REQUIRE(std::abs(r) < 1e-3 * scale);

  // zonally deformed family
  SphereGeometry g;
  auto shape = [&](double th) {
    if (th < g.theta_gamma) return 0.0;
    double z = pi * (th - g.theta_gamma) / (pi - g.theta_gamma);
    double c = 1.0 - std::cos(z);
    return 0.25 * c * c;
  };
  MovingStarDomain zon{
      [&](double t, double th) { return 1.0 + 0.2 * std::sin(t) * shape(th); },
      [&](double t, double th) { return 0.2 * std::cos(t) * shape(th); }};
  for (double r : reynolds_defect(zon, xi, dxi, dt, T, 64, 40))
    REQUIRE(std::abs(r) < 1e-4);
}

TEST_CASE("korn identity defect") {
  // smooth axisymmetric stream function, u_theta vanishing on r = 1, so the
  // trace is purely radial with b = (2/3) P2(cos th); for such fields the
  // transpose-gradient integral equals the curvature boundary term
  // -2 oint b^2 dA, which serves as the independent oracle
  auto field = [](const Vec3& x) {
    double r = x.norm();
    if (r < 1e-8) return Vec3(Vec3::Zero());
    double ct = x.z() / r, st = std::sqrt(std::max(0.0, 1.0 - ct * ct));
    double h = std::pow(r, 4) - (2.0 / 3.0) * std::pow(r, 6);
    double hp = 4.0 * std::pow(r, 3) - 4.0 * std::pow(r, 5);
    double ur = h / (r * r) * (2.0 * ct * ct - st * st);
    double uth = -hp / r * st * ct;
    double phi = std::atan2(x.y(), x.x());
    Vec3 rhat(st * std::cos(phi), st * std::sin(phi), ct);
    Vec3 that(ct * std::cos(phi), ct * std::sin(phi), -st);
    return Vec3(ur * rhat + uth * that);
  };
  SphereGeometry gs;
  gs.theta_gamma = 0.0;
  ZonalFn zero = [](double) { return 0.0; };

  double sb2 = 0.0, den = 0.0;
  auto q = gauss_legendre(96, 0.0, pi);
  for (size_t i = 0; i < q.x.size(); ++i) {
    double ct = std::cos(q.x[i]);
    double b = (2.0 / 3.0) * 0.5 * (3.0 * ct * ct - 1.0);
    sb2 += 2.0 * pi * q.w[i] * std::sin(q.x[i]) * b * b;
    Vec3 dir(std::sin(q.x[i]), 0.0, ct);
    auto qr = gauss_legendre(48, 1e-6, 1.0 - 1e-9);
    for (size_t k = 0; k < qr.x.size(); ++k) {
      Mat3 G = fd_gradient(field, Vec3(qr.x[k] * dir), 1e-5);
      den += 2.0 * pi * q.w[i] * qr.w[k] * qr.x[k] * qr.x[k] *
             std::sin(q.x[i]) * G.squaredNorm();
    }
  }
  double oracle = -2.0 * sb2 / den;

  double d1 = korn_defect(gs, field, zero, 48, 16, 1e-5, 0.6);
  double d2 = korn_defect(gs, field, zero, 96, 32, 1e-5, 0.6);
  REQUIRE(d2 == Catch::Approx(oracle).margin(1e-6));
  REQUIRE(std::abs(d2 - oracle) <= std::abs(d1 - oracle) + 1e-9);

  // zero field convention
  auto zf = [](const Vec3&) { return Vec3(Vec3::Zero()); };
  REQUIRE(korn_defect(gs, zf, zero, 16, 8) == 0.0);

  // rigid rotation as the negative control
  SphereGeometry g;
  ZonalFn eta = [&](double th) {
    if (th < g.theta_gamma) return 0.0;
    double z = pi * (th - g.theta_gamma) / (pi - g.theta_gamma);
    double c = 1.0 - std::cos(z);
    return 0.015 * c * c;
  };
  auto rot = [](const Vec3& x) { return Vec3(-x.y(), x.x(), 0.0); };
  REQUIRE(korn_defect(g, rot, eta, 48, 16, 1e-5, -1.0) ==
          Catch::Approx(-1.0).margin(1e-8));
}

TEST_CASE("run config parsing") {
  RunConfig rc;
  REQUIRE(rc.num("geometry.radius") == 1.0);
  REQUIRE(rc.integer("galerkin.n_modes_surface") == 8);
  REQUIRE(rc.str("forcing.g") == "pulse");

  auto dir = std::filesystem::temp_directory_path() / "sf_cfg_test";
  std::filesystem::create_directories(dir);
  spit(dir / "good.cfg",
       "# comment line\n"
       "galerkin.dt = 5e-4   # trailing comment\n"
       "\n"
       "  coupling.margin=0.5\n");
  RunConfig fc = RunConfig::from_file((dir / "good.cfg").string());
  REQUIRE(fc.num("galerkin.dt") == 5e-4);
  REQUIRE(fc.num("coupling.margin") == 0.5);

  spit(dir / "bad_key.cfg", "galerkin.timestep = 1e-3\n");
  REQUIRE_THROWS_AS(RunConfig::from_file((dir / "bad_key.cfg").string()),
                    ConfigError);
  spit(dir / "bad_line.cfg", "galerkin.dt\n");
  REQUIRE_THROWS_AS(RunConfig::from_file((dir / "bad_line.cfg").string()),
                    ConfigError);

  fc.override_entry("coupling.margin=0.7");
  REQUIRE(fc.num("coupling.margin") == 0.7);
  REQUIRE_THROWS_AS(fc.override_entry("no.such.key=1"), ConfigError);
  REQUIRE_THROWS_AS(fc.override_entry("coupling.margin"), ConfigError);

  fc.set("galerkin.dt", "abc");
  REQUIRE_THROWS_AS(fc.num("galerkin.dt"), ConfigError);
  fc.set("galerkin.n_modes_surface", "2.5");
  REQUIRE_THROWS_AS(fc.integer("galerkin.n_modes_surface"), ConfigError);
}

TEST_CASE("forcing presets") {
  SphereGeometry g;
  SurfaceGrid grid = make_cap_grid(g, 65);

  RunConfig rc;
  rc.set("forcing.f", "pulse");
  rc.set("forcing.f_amplitude", "2.0");
  rc.set("forcing.f_frequency", "3.0");
  Forcing f = make_forcing(rc, grid);
  REQUIRE(f.f);
  Vec3 v = f.f(0.1, Vec3(0.3, 0.0, 0.2));
  REQUIRE(v.x() == 0.0);
  REQUIRE(v.z() == Catch::Approx(2.0 * std::sin(2.0 * pi * 3.0 * 0.1)));
  REQUIRE(f.g);
  double th = 0.9 * pi;
  double expect = 0.05 * std::sin(2.0 * pi * 0.2) *
                  bump((th - rc.num("forcing.g_center")) / rc.num("forcing.g_width"));
  REQUIRE(f.g(0.2, th) == Catch::Approx(expect));

  RunConfig rn;
  rn.set("forcing.f", "none");
  rn.set("forcing.g", "none");
  Forcing fn = make_forcing(rn, grid);
  REQUIRE_FALSE(fn.f);
  REQUIRE_FALSE(fn.g);

  // tabulated surface load: linear in time, nodal in space
  auto dir = std::filesystem::temp_directory_path() / "sf_tbl_test";
  std::filesystem::create_directories(dir);
  spit(dir / "g.csv",
       "t,node,value\n"
       "0.0,10,1.0\n"
       "0.0,11,3.0\n"
       "1.0,10,2.0\n"
       "1.0,11,5.0\n");
  RunConfig rt;
  rt.set("forcing.g", "table");
  rt.set("forcing.g_table", (dir / "g.csv").string());
  Forcing ft = make_forcing(rt, grid);
  REQUIRE(ft.g(0.5, grid.nodes[10]) == Catch::Approx(1.5));
  REQUIRE(ft.g(0.25, grid.nodes[11]) == Catch::Approx(3.5));
  REQUIRE(ft.g(2.0, grid.nodes[10]) == Catch::Approx(2.0));  // clamped past end

  RunConfig rb;
  rb.set("forcing.g", "sawtooth");
  REQUIRE_THROWS_AS(make_forcing(rb, grid), ConfigError);
}

TEST_CASE("cli artifacts and determinism") {
  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / "sf_cli_test";
  fs::remove_all(dir);
  fs::create_directories(dir);

  spit(dir / "tiny.cfg",
       "geometry.n_theta = 65\n"
       "geometry.quad_order = 24\n"
       "stokes.n_r = 24\n"
       "galerkin.n_modes_surface = 4\n"
       "galerkin.n_modes_interior = 4\n"
       "galerkin.dt = 2e-3\n"
       "run.horizon = 0.01\n"
       "run.restart_window = 0.01\n"
       "forcing.g_amplitude = 0.2\n"
       "run.snapshot_stride = 2\n");

  auto run = [&](const std::string& args) {
    std::string cmd = std::string(SHELLFLOW_CLI_PATH) + " " + args +
                      " > " + (dir / "stdout.txt").string() + " 2>&1";
    int st = std::system(cmd.c_str());
    return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
  };

  std::string cfg = (dir / "tiny.cfg").string();
  REQUIRE(run("run --config " + cfg + " --override run.output_dir=" +
              (dir / "a").string()) == 0);
  REQUIRE(fs::exists(dir / "a" / "energy.csv"));
  REQUIRE(fs::exists(dir / "a" / "shell_snapshots.csv"));
  REQUIRE(fs::exists(dir / "a" / "summary.json"));

  std::string energy = slurp(dir / "a" / "energy.csv");
  REQUIRE(energy.rfind("t,E_fluid_kin,E_shell_kin,E_elastic,D_visc_cum,"
                       "W_ext_cum,balance_residual\n", 0) == 0);
  std::string summary = slurp(dir / "a" / "summary.json");
  REQUIRE(summary.find("\"stop_reason\": \"HORIZON\"") != std::string::npos);
  REQUIRE(summary.find("\"checksum_energy\"") != std::string::npos);

  // identical config, fresh process: byte-identical artifacts
  REQUIRE(run("run --config " + cfg + " --override run.output_dir=" +
              (dir / "b").string()) == 0);
  REQUIRE(slurp(dir / "b" / "energy.csv") == energy);
  REQUIRE(slurp(dir / "b" / "shell_snapshots.csv") ==
          slurp(dir / "a" / "shell_snapshots.csv"));

  // config failures exit with status 1
  spit(dir / "bad.cfg", "no.such.key = 1\n");
  REQUIRE(run("run --config " + (dir / "bad.cfg").string()) == 1);
  REQUIRE(run("run --config " + (dir / "missing.cfg").string()) == 1);
  REQUIRE(run("waltz --config " + cfg) == 1);
}

// Command line driver: coupled runs, operator property checks, and the
// mollification-parameter refinement study.

#include <cstring>
#include <iostream>

#include "shellflow/harness.hpp"

using namespace shellflow;

namespace {

struct Args {
  std::string command;
  std::string config;
  std::vector<std::string> overrides;
  std::vector<double> values = {0.2, 0.1, 0.05};
};

Args parse_args(int argc, char** argv) {
  if (argc < 2) throw ConfigError("usage: shellflow <run|check-operators|study-epsilon> --config <path> [--override k=v]... [--values a,b,c]");
  Args a;
  a.command = argv[1];
  for (int i = 2; i < argc; ++i) {
    std::string s = argv[i];
    auto next = [&]() -> std::string {
      if (i + 1 >= argc) throw ConfigError("missing value after " + s);
      return argv[++i];
    };
    if (s == "--config") {
      a.config = next();
    } else if (s == "--override") {
      a.overrides.push_back(next());
    } else if (s == "--values") {
      a.values.clear();
      std::istringstream vs(next());
      std::string tok;
      while (std::getline(vs, tok, ',')) a.values.push_back(std::stod(tok));
      if (a.values.empty()) throw ConfigError("--values: empty list");
    } else {
      throw ConfigError("unknown argument: " + s);
    }
  }
  if (a.config.empty()) throw ConfigError("--config is required");
  return a;
}

RunConfig load_config(const Args& a) {
  RunConfig rc = RunConfig::from_file(a.config);
  for (const auto& ov : a.overrides) rc.override_entry(ov);
  return rc;
}

int cmd_run(const Args& a) {
  RunConfig rc = load_config(a);
  RunResult rr = execute_run(rc);
  write_outputs(rr, rc);
  std::cout << "stop_reason " << rr.summary.stop_reason << "\n";
  if (std::isfinite(rr.summary.t_star))
    std::cout << "t_star " << detail::fmt12(rr.summary.t_star) << "\n";
  std::cout << "windows " << rr.summary.fp_iterations.size() << "\n"
            << "max_balance_residual "
            << detail::fmt12(rr.summary.max_balance_residual) << "\n"
            << "gronwall_slack " << detail::fmt12(rr.summary.gronwall_slack)
            << "\n";
  return rr.traj.stop == StopReason::DIVERGED ? 2 : 0;
}

// 4th order centered divergence
template <class F>
double fd_div4(const F& f, const Vec3& x, double h) {
  double d = 0.0;
  for (int k = 0; k < 3; ++k) {
    Vec3 e = Vec3::Zero();
    e[k] = h;
    d += (-f(x + 2 * e)[k] + 8 * f(x + e)[k] - 8 * f(x - e)[k] +
          f(x - 2 * e)[k]) /
         (12 * h);
  }
  return d;
}

int cmd_check_operators(const Args& a) {
  RunConfig rc = load_config(a);
  SphereGeometry g = rc.geometry();
  bool all_ok = true;
  auto report = [&](const char* name, double value, double tol) {
    bool ok = std::abs(value) <= tol;
    all_ok = all_ok && ok;
    std::printf("%-4s %-28s %12.3e (tol %.1e)\n", ok ? "ok" : "FAIL", name,
                value, tol);
  };

  double worst = 0.0;
  for (auto [s0, s1] : {std::pair{-0.2, 0.3}, {0.0, 0.4}, {0.25, -0.1}})
    worst = std::max(worst, std::abs(layer_factor(g, s0, s1) -
                                     layer_factor_quadrature(g, s0, s1)));
  report("layer_factor_quadrature", worst, 1e-10);

  auto shape = [&](double th) {
    if (th < g.theta_gamma) return 0.0;
    double z = pi * (th - g.theta_gamma) / (pi - g.theta_gamma);
    double c = 1.0 - std::cos(z);
    return 0.25 * c * c;
  };
  ZonalFn eta = [&](double th) { return 0.08 * shape(th); };
  ZonalFn raw = [&](double th) { return 0.05 * shape(th); };
  ZonalFn b = mean_correct(g, raw, eta, default_bump(g));
  report("mean_corrected_compat", compat_mean(g, b, eta), 1e-8);

  double alpha = default_alpha(g, 0.08, rc.num("operators.alpha_fraction"));
  ExtendedField ext = extend_boundary(g, b, eta, alpha, 1e-6, 24);
  auto extf = [&](const Vec3& x) { return ext.eval(x); };
  double dmax = 0.0;
  for (int i = 1; i <= 12; ++i) {
    double th = g.theta_gamma + (pi - g.theta_gamma) * i / 13.0;
    double r = g.R * (0.25 + 0.05 * i);
    Vec3 x = r * Vec3(std::sin(th), 0.0, std::cos(th));
    dmax = std::max(dmax, std::abs(fd_div4(extf, x, 2e-4)));
  }
  report("extension_divergence", dmax, 1e-5);

  auto zd = std::make_shared<ZonalDisplacement>();
  zd->f = eta;
  zd->df = [&g](double th) {
    if (th < g.theta_gamma) return 0.0;
    double sc = pi / (pi - g.theta_gamma);
    double z = sc * (th - g.theta_gamma);
    return 0.08 * 0.5 * (1.0 - std::cos(z)) * std::sin(z) * sc;
  };
  zd->sup = 0.08;
  zd->R = g.R;
  HanzawaMap map = make_hanzawa(g, zd);
  auto push = pushforward(map, extf);
  dmax = 0.0;
  for (int i = 1; i <= 8; ++i) {
    double th = g.theta_gamma + (pi - g.theta_gamma) * i / 9.0;
    double r = g.R * (0.3 + 0.06 * i);
    Vec3 x = r * Vec3(std::sin(th), 0.0, std::cos(th));
    dmax = std::max(dmax, std::abs(fd_div4(push, map.forward(x).y, 3e-4)));
  }
  report("pushforward_divergence", dmax, 1e-4);

  auto phi = [&](const Vec3& x) { return ext.eval(x); };
  auto psi = [](const Vec3& x) {
    return std::sin(x.y()) + std::cos(x.z()) + x.x() * x.y();
  };
  IbpQuadrature q1{96, 24, 1e-5, -1.0};
  IbpQuadrature q2{192, 48, 1e-5, -1.0};
  double d1 = std::abs(ibp_defect(g, phi, psi, b, eta, q1));
  double d2 = std::abs(ibp_defect(g, phi, psi, b, eta, q2));
  std::printf("%-4s %-28s %12.3e -> %12.3e\n",
              (d2 * 3.0 <= d1 || d2 < 1e-10) ? "ok" : "FAIL",
              "ibp_defect_refinement", d1, d2);
  all_ok = all_ok && (d2 * 3.0 <= d1 || d2 < 1e-10);

  // for a smooth divergence-free field with purely radial trace the
  // transpose-gradient integral equals the curvature boundary term
  // -2 oint b^2 dA, checked against its independent quadrature
  auto kfield = [](const Vec3& x) {
    double r = x.norm();
    if (r < 1e-8) return Vec3(Vec3::Zero());
    double ct = x.z() / r, st = std::sqrt(std::max(0.0, 1.0 - ct * ct));
    double h = std::pow(r, 4) - (2.0 / 3.0) * std::pow(r, 6);
    double hp = 4.0 * std::pow(r, 3) - 4.0 * std::pow(r, 5);
    double ur = h / (r * r) * (2.0 * ct * ct - st * st);
    double uth = -hp / r * st * ct;
    double ph = std::atan2(x.y(), x.x());
    Vec3 rhat(st * std::cos(ph), st * std::sin(ph), ct);
    Vec3 that(ct * std::cos(ph), ct * std::sin(ph), -st);
    return Vec3(ur * rhat + uth * that);
  };
  SphereGeometry gs;
  gs.theta_gamma = 0.0;
  ZonalFn zeta = [](double) { return 0.0; };
  double sb2 = 0.0, den = 0.0;
  auto qk = gauss_legendre(96, 0.0, pi);
  for (size_t i = 0; i < qk.x.size(); ++i) {
    double ct = std::cos(qk.x[i]);
    double bv = (2.0 / 3.0) * 0.5 * (3.0 * ct * ct - 1.0);
    sb2 += 2.0 * pi * qk.w[i] * std::sin(qk.x[i]) * bv * bv;
    Vec3 dir(std::sin(qk.x[i]), 0.0, ct);
    auto qr = gauss_legendre(48, 1e-6, 1.0 - 1e-9);
    for (size_t k = 0; k < qr.x.size(); ++k) {
      Mat3 G = fd_gradient(kfield, Vec3(qr.x[k] * dir), 1e-5);
      den += 2.0 * pi * qk.w[i] * qr.w[k] * qr.x[k] * qr.x[k] *
             std::sin(qk.x[i]) * G.squaredNorm();
    }
  }
  double kd = korn_defect(gs, kfield, zeta, 96, 32, 1e-5, 0.6);
  report("korn_vs_curvature_oracle", kd + 2.0 * sb2 / den, 1e-6);
  auto rot = [](const Vec3& x) { return Vec3(-x.y(), x.x(), 0.0); };
  double kr = korn_defect(g, rot, eta, 48, 16, 1e-5, -1.0);
  report("korn_defect_rotation_plus_1", kr + 1.0, 1e-8);

  std::cout << (all_ok ? "ALL OK" : "FAILURES PRESENT") << "\n";
  return all_ok ? 0 : 2;
}

int cmd_study_epsilon(const Args& a) {
  RunConfig base = load_config(a);
  std::vector<RunResult> results;
  for (double eps : a.values) {
    RunConfig rc = base;
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.12g", eps);
    rc.set("coupling.epsilon", buf);
    std::cout << "running epsilon = " << buf << std::flush;
    results.push_back(execute_run(rc));
    std::cout << "  stop " << results.back().summary.stop_reason << "\n";
  }
  double dt = base.num("galerkin.dt");
  std::string csv = "epsilon,epsilon_next,l2_diff\n";
  bool decreasing = true;
  double prev = std::numeric_limits<double>::infinity();
  for (size_t i = 0; i + 1 < results.size(); ++i) {
    double d = l2_space_time_diff(results[i].grid, results[i].traj,
                                  results[i + 1].traj, dt);
    std::printf("|eta_%g - eta_%g|_L2 = %.6e\n", a.values[i + 1], a.values[i],
                d);
    csv += detail::fmt12(a.values[i]) + "," + detail::fmt12(a.values[i + 1]) +
           "," + detail::fmt12(d) + "\n";
    if (!(d < prev)) decreasing = false;
    prev = d;
  }
  std::filesystem::path dir = base.str("run.output_dir");
  std::filesystem::create_directories(dir);
  std::ofstream(dir / "epsilon_study.csv") << csv;
  std::cout << (decreasing ? "refinement Cauchy: decreasing"
                           : "refinement Cauchy: NOT decreasing")
            << "\n";
  return decreasing ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    Args a = parse_args(argc, argv);
    if (a.command == "run") return cmd_run(a);
    if (a.command == "check-operators") return cmd_check_operators(a);
    if (a.command == "study-epsilon") return cmd_study_epsilon(a);
    throw ConfigError("unknown command: " + a.command);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}

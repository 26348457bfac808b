#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "shellflow/geometry.hpp"

using namespace shellflow;

namespace {

std::shared_ptr<AmbientDisplacement> random_displacement(std::mt19937& rng,
                                                         double amplitude) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Vec3 d1 = Vec3(u(rng), u(rng), u(rng)).normalized();
  Vec3 d2 = Vec3(u(rng), u(rng), u(rng)).normalized();
  double a = amplitude * (0.5 + 0.5 * std::abs(u(rng)));
  auto f = std::make_shared<AmbientDisplacement>();
  f->f = [=](const Vec3& x) { return a * (x.dot(d1)) * (x.dot(d2)); };
  f->grad_f = [=](const Vec3& x) -> Vec3 {
    return a * (d1 * x.dot(d2) + d2 * x.dot(d1));
  };
  f->sup = a;
  return f;
}

}  // namespace

TEST_CASE("tubular decomposition on the unit ball") {
  SphereGeometry geom;
  auto t1 = tubular_decompose(geom, Vec3(0.5, 0, 0));
  CHECK(t1.q.isApprox(Vec3(1, 0, 0), 1e-14));
  CHECK(t1.s == Catch::Approx(-0.5));

  auto t2 = tubular_decompose(geom, Vec3(0, 0, 1));
  CHECK(t2.q.isApprox(Vec3(0, 0, 1), 1e-14));
  CHECK(std::abs(t2.s) < 1e-14);

  CHECK_THROWS_AS(tubular_decompose(geom, Vec3(0, 0, 0)), OutsideTubular);
}

TEST_CASE("tubular round trip") {
  SphereGeometry geom{1.7, pi / 6};
  std::mt19937 rng(11);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int i = 0; i < 200; ++i) {
    Vec3 q = Vec3(u(rng), u(rng), u(rng)).normalized() * geom.R;
    double s = 0.95 * geom.kappa() * u(rng);
    Vec3 x = q + s * geom.normal(q);
    auto t = tubular_decompose(geom, x);
    CHECK((t.q - q).norm() < 1e-12);
    CHECK(std::abs(t.s - s) < 1e-12);
  }
}

TEST_CASE("cutoff profile endpoints and smoothness") {
  auto p = make_cutoff(0.0);
  CHECK(p.value(-1.0) == 0.0);
  CHECK(p.value(0.0) == 1.0);
  // plateaus
  CHECK(p.value(-1.0 + 0.5 * p.plateau) == 0.0);
  CHECK(p.value(-0.5 * p.plateau) == 1.0);
  // derivative consistent with finite differences, monotone
  for (double u = -0.999; u < 0.0; u += 0.004) {
    double fd = (p.value(u + 5e-7) - p.value(u - 5e-7)) / 1e-6;
    CHECK(std::abs(fd - p.deriv(u)) < 1e-6);
    CHECK(p.deriv(u) >= 0.0);
  }
}

TEST_CASE("cutoff derivative bound at ratio 0.5") {
  auto p = make_cutoff(0.5);
  double sup = 0.0;
  for (int i = 0; i <= 200000; ++i)
    sup = std::max(sup, std::abs(p.deriv(-1.0 + i * 0.5e-5)));
  CHECK(sup <= 1.95);
  CHECK(sup < 2.0);
}

TEST_CASE("cutoff bound holds near the admissibility limit") {
  for (double ratio : {0.7, 0.9, 0.97}) {
    auto p = make_cutoff(ratio);
    double sup = 0.0;
    for (int i = 0; i <= 100000; ++i)
      sup = std::max(sup, std::abs(p.deriv(-1.0 + i * 1e-5)));
    CHECK(sup < 1.0 / ratio);
    CHECK(p.value(-1.0) == 0.0);
    CHECK(p.value(0.0) == 1.0);
  }
  CHECK_THROWS_AS(make_cutoff(1.0), RatioTooLarge);
}

TEST_CASE("hanzawa forward: identity at eta = 0") {
  SphereGeometry geom;
  auto map = make_hanzawa(geom, std::make_shared<ZeroDisplacement>());
  for (const Vec3& x : {Vec3(0.3, -0.2, 0.1), Vec3(0, 0, 0.99), Vec3(0, 0, 0)}) {
    auto f = map.forward(x);
    CHECK((f.y - x).norm() < 1e-15);
    CHECK((f.J - Mat3::Identity()).norm() < 1e-15);
    CHECK(f.detJ == Catch::Approx(1.0));
  }
}

TEST_CASE("hanzawa forward: boundary action is Phi_eta") {
  SphereGeometry geom;
  double c = 0.25;
  auto eta = std::make_shared<AmbientDisplacement>();
  eta->f = [=](const Vec3&) { return c; };
  eta->grad_f = [](const Vec3&) { return Vec3::Zero(); };
  eta->sup = c;
  auto map = make_hanzawa(geom, eta);
  Vec3 q = Vec3(1, 2, -1).normalized();
  auto f = map.forward(q);
  CHECK((f.y - (1.0 + c) * q).norm() < 1e-14);
  // boundary determinant equals (1+c/R)^2 on the unit sphere
  CHECK(f.detJ == Catch::Approx((1 + c) * (1 + c)));
}

TEST_CASE("hanzawa jacobian matches finite differences") {
  SphereGeometry geom;
  std::mt19937 rng(5);
  auto eta = random_displacement(rng, 0.3);
  auto map = make_hanzawa(geom, eta);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int i = 0; i < 30; ++i) {
    Vec3 x = Vec3(u(rng), u(rng), u(rng));
    if (x.norm() >= 0.98 || x.norm() < 0.05) continue;
    auto f = map.forward(x);
    double h = 1e-6;
    for (int d = 0; d < 3; ++d) {
      Vec3 e = Vec3::Zero();
      e[d] = h;
      Vec3 col = (map.forward(x + e).y - map.forward(x - e).y) / (2 * h);
      CHECK((col - f.J.col(d)).norm() < 1e-8);
    }
    CHECK(f.detJ > 0.0);
  }
}

TEST_CASE("hanzawa inverse: radial scaling and round trips") {
  SphereGeometry geom;
  double c = 0.2;
  auto eta = std::make_shared<AmbientDisplacement>();
  eta->f = [=](const Vec3&) { return c; };
  eta->grad_f = [](const Vec3&) { return Vec3::Zero(); };
  eta->sup = c;
  auto map = make_hanzawa(geom, eta);
  Vec3 x = map.inverse(Vec3(0, 0, 1 + c));
  CHECK((x - Vec3(0, 0, 1)).norm() < 1e-10);

  std::mt19937 rng(17);
  auto eta2 = random_displacement(rng, 0.3);
  auto map2 = make_hanzawa(geom, eta2);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  double worst = 0.0;
  int n = 0;
  while (n < 100) {
    Vec3 x0 = Vec3(u(rng), u(rng), u(rng));
    if (x0.norm() > 0.999) continue;
    ++n;
    Vec3 y = map2.forward(x0).y;
    Vec3 back = map2.inverse(y);
    worst = std::max(worst, (back - x0).norm());
  }
  CHECK(worst < 1e-10);
}

TEST_CASE("gamma factor values and positivity") {
  SphereGeometry geom;
  CHECK(gamma_factor(geom, 0.0) == Catch::Approx(1.0));
  for (double c : {-0.5, 0.2, 0.4})
    CHECK(gamma_factor(geom, c) == Catch::Approx((1 + c) * (1 + c)));

  std::mt19937 rng(23);
  auto ts = triangulate_sphere(1.0, 3);
  for (int k = 0; k < 50; ++k) {
    auto eta = random_displacement(rng, 0.9);
    for (size_t f = 0; f < ts.faces.size(); ++f) {
      Vec3 q = ts.centroid(f).normalized();
      CHECK(gamma_factor(geom, eta->value(q)) > 0.0);
    }
  }
}

TEST_CASE("gamma factor equals the triangulated area-element ratio") {
  // Uniform eta = c: the deformed triangulation is the reference one scaled
  // by 1 + c, so every per-face area ratio equals (1+c)^2 exactly.
  SphereGeometry geom;
  auto ts = triangulate_sphere(1.0, 4);
  for (double c : {-0.5, 0.2, 0.4}) {
    double worst = 0.0;
    for (size_t f = 0; f < ts.faces.size(); ++f) {
      const auto& t = ts.faces[f];
      Vec3 a = (1 + c) * ts.vertices[t[0]];
      Vec3 b = (1 + c) * ts.vertices[t[1]];
      Vec3 d = (1 + c) * ts.vertices[t[2]];
      double area_def = 0.5 * (b - a).cross(d - a).norm();
      double ratio = area_def / ts.face_area(f);
      worst = std::max(worst, std::abs(ratio - gamma_factor(geom, c)));
    }
    CHECK(worst < 1e-6);
  }
}

TEST_CASE("integrated area-element identity for smooth eta") {
  // int_{dOmega} psi gamma(eta) dA vs the integral of (psi nu).nu_eta over
  // the deformed triangulated surface; agreement at quadrature tolerance.
  SphereGeometry geom;
  std::mt19937 rng(31);
  auto eta = random_displacement(rng, 0.25);
  auto psi = [](const Vec3& q) { return 1.0 + 0.5 * q.x() - 0.3 * q.y() * q.z(); };
  auto ts = triangulate_sphere(1.0, 5);

  double lhs = 0.0, rhs = 0.0;
  for (size_t f = 0; f < ts.faces.size(); ++f) {
    Vec3 q = ts.centroid(f).normalized();
    lhs += psi(q) * gamma_factor(geom, eta->value(q)) * ts.face_area(f);

    const auto& t = ts.faces[f];
    auto push = [&](const Vec3& v) {
      Vec3 qq = v.normalized();
      return qq * (1.0 + eta->value(qq));
    };
    Vec3 a = push(ts.vertices[t[0]]);
    Vec3 b = push(ts.vertices[t[1]]);
    Vec3 d = push(ts.vertices[t[2]]);
    Vec3 n2 = (b - a).cross(d - a);  // 2 * area * unit normal
    rhs += 0.5 * psi(q) * q.dot(n2.normalized()) * n2.norm();
  }
  CHECK(std::abs(lhs - rhs) / std::abs(lhs) < 2e-4);
}

TEST_CASE("normal derivative identity along surface curves") {
  // d/dt Phi_eta(c(t)) at t=0 equals e + (grad eta . e) nu - eta h_i^j e_j;
  // on the unit sphere (h = -g) the last term is + eta e.
  SphereGeometry geom;
  std::mt19937 rng(41);
  auto eta = random_displacement(rng, 0.3);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int i = 0; i < 10; ++i) {
    Vec3 q = Vec3(u(rng), u(rng), u(rng)).normalized();
    Vec3 e = Vec3(u(rng), u(rng), u(rng));
    e = (e - q.dot(e) * q).normalized();
    auto curve = [&](double t) -> Vec3 { return (q + t * e).normalized(); };
    auto phi = [&](const Vec3& p) -> Vec3 {
      return p + eta->value(p) * geom.normal(p);
    };
    auto fd = [&](double h) -> Vec3 {
      return (phi(curve(h)) - phi(curve(-h))) / (2 * h);
    };
    Vec3 expect = e + eta->gradient(q).dot(e) * q + eta->value(q) * e;
    double err1 = (fd(1e-3) - expect).norm();
    double err2 = (fd(5e-4) - expect).norm();
    CHECK(err1 < 1e-4);
    CHECK(err2 < 0.3 * err1 + 1e-12);  // O(step^2) decay
  }
}

TEST_CASE("tau margin") {
  SphereGeometry geom;
  CHECK(tau_margin(geom, 0.0) == Catch::Approx(1.0));
  CHECK(tau_margin(geom, 0.5) == Catch::Approx(2.0));
  CHECK(std::isinf(tau_margin(geom, 1.0)));
}

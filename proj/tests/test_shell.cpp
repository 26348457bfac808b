#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "shellflow/shell.hpp"

using namespace shellflow;

namespace {

// Smooth clamped fields on [theta_gamma, pi]: (1 - cos z)^2 cos(m z) with
// z the rescaled colatitude; value and slope vanish at theta_gamma, slope
// vanishes at the pole.
Vec clamped_mode(const SurfaceGrid& g, int m, double amp) {
  double a = g.nodes[0], b = g.nodes[g.n() - 1];
  Vec v(g.n());
  for (int j = 0; j < g.n(); ++j) {
    double z = pi * (g.nodes[j] - a) / (b - a);
    double c = 1.0 - std::cos(z);
    v[j] = amp * c * c * std::cos(m * z);
  }
  return v;
}

Vec random_clamped(const SurfaceGrid& g, std::mt19937& rng, double amp = 1.0) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Vec v = Vec::Zero(g.n());
  for (int m = 0; m < 4; ++m) v += clamped_mode(g, m, amp * u(rng));
  return v;
}

// Direct four-index summation over the elasticity tensor in an orthonormal
// frame: C_abcd = c1 d_ab d_cd + 2 mu (d_ac d_bd + d_ad d_bc).
double contract_oracle(const ElasticParams& p, const Sym2& A, const Sym2& B) {
  double Am[2][2] = {{A.tt, A.tp}, {A.tp, A.pp}};
  double Bm[2][2] = {{B.tt, B.tp}, {B.tp, B.pp}};
  double sum = 0.0;
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 2; ++b)
      for (int c = 0; c < 2; ++c)
        for (int d = 0; d < 2; ++d) {
          double C = p.c1() * (a == b) * (c == d) +
                     2.0 * p.mu * ((a == c) * (b == d) + (a == d) * (b == c));
          sum += C * Am[a][b] * Bm[c][d];
        }
  return sum;
}

}  // namespace

TEST_CASE("elasticity contraction") {
  ElasticParams p{1.0, 1.0, 1.0};
  Sym2 I{1.0, 1.0, 0.0};
  CHECK(elasticity_contract(p, I, I) == Catch::Approx(40.0 / 3.0));
  CHECK(contract_oracle(p, I, I) == Catch::Approx(40.0 / 3.0));

  Sym2 dev{0.7, -0.7, 0.3};
  CHECK(std::abs(elasticity_contract(p, dev, I)) < 1e-14);

  std::mt19937 rng(3);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int i = 0; i < 50; ++i) {
    ElasticParams q{0.5 + std::abs(u(rng)), 0.5 + std::abs(u(rng)), 1.0};
    Sym2 A{u(rng), u(rng), u(rng)}, B{u(rng), u(rng), u(rng)};
    double ab = elasticity_contract(q, A, B);
    CHECK(std::abs(ab - elasticity_contract(q, B, A)) < 1e-14);
    CHECK(ab == Catch::Approx(contract_oracle(q, A, B)).margin(1e-12));
  }
}

TEST_CASE("linearized strains") {
  SphereGeometry geom;
  auto cap = make_cap_grid(geom, 81);
  auto [s0, x0] = linearized_strains(cap, Vec::Zero(cap.n()));
  CHECK(s0.tt.norm() == 0.0);
  CHECK(x0.tt.norm() == 0.0);

  // flat strip: sigma = 0, xi = Hessian
  auto strip = make_flat_strip_grid(2 * pi, 128);
  Vec eta(strip.n());
  for (int j = 0; j < strip.n(); ++j) eta[j] = std::sin(strip.nodes[j]);
  auto [ss, xs] = linearized_strains(strip, eta);
  CHECK(ss.tt.norm() == 0.0);
  for (int j = 0; j < strip.n(); ++j) {
    CHECK(xs.tt[j] == Catch::Approx(-std::sin(strip.nodes[j])).margin(1e-6));
    CHECK(xs.pp[j] == 0.0);
  }

  // unit sphere, eta = c (clamping waived): sigma = c g, xi = -c g
  double c = 0.37;
  Vec etac = Vec::Constant(cap.n(), c);
  auto [sc, xc] = linearized_strains(cap, etac);
  for (int j = 0; j < cap.n(); ++j) {
    CHECK(sc.tt[j] == Catch::Approx(c));
    CHECK(sc.pp[j] == Catch::Approx(c));
    CHECK(xc.tt[j] == Catch::Approx(-c).margin(1e-9));
    CHECK(xc.pp[j] == Catch::Approx(-c).margin(1e-9));
  }
}

TEST_CASE("koiter form values") {
  ElasticParams p{1.0, 1.0, 1.0};
  auto strip = make_flat_strip_grid(2 * pi, 128);
  auto kf = make_koiter_form(strip, p);

  Vec eta(strip.n());
  for (int j = 0; j < strip.n(); ++j) eta[j] = std::sin(strip.nodes[j]);
  CHECK(kf(Vec::Zero(strip.n()), eta) == 0.0);
  CHECK(kf(eta, eta) == Catch::Approx(8.0 * pi / 9.0).epsilon(1e-6));

  SphereGeometry geom;
  auto cap = make_cap_grid(geom, 81);
  auto kc = make_koiter_form(cap, ElasticParams{1.0, 1.0, 0.1});
  std::mt19937 rng(7);
  for (int i = 0; i < 20; ++i) {
    Vec a = random_clamped(cap, rng), b = random_clamped(cap, rng);
    double kab = kc(a, b);
    CHECK(std::abs(kab - kc(b, a)) < 1e-12 * (1.0 + std::abs(kab)));
    CHECK(kc(a, a) >= 0.0);
  }
}

TEST_CASE("koiter gradient") {
  ElasticParams p{1.0, 1.0, 1.0};
  auto strip = make_flat_strip_grid(2 * pi, 256);
  auto kf = make_koiter_form(strip, p);

  CHECK(koiter_gradient(kf, Vec::Zero(strip.n())).norm() == 0.0);

  int k = 2;
  Vec eta(strip.n());
  for (int j = 0; j < strip.n(); ++j) eta[j] = std::sin(k * strip.nodes[j]);
  Vec grad = koiter_gradient(kf, eta);
  double kb = 16.0 / 9.0;  // bending constant for lambda = mu = eps0 = 1
  for (int j = 0; j < strip.n(); ++j) {
    double expect = kb * std::pow(k, 4) * std::sin(k * strip.nodes[j]);
    CHECK(grad[j] == Catch::Approx(expect).margin(2e-3 * kb * 16));
  }

  // adjoint identity and linearity on the cap grid
  SphereGeometry geom;
  auto cap = make_cap_grid(geom, 97);
  auto kc = make_koiter_form(cap, ElasticParams{1.3, 0.8, 0.1});
  std::mt19937 rng(13);
  for (int i = 0; i < 20; ++i) {
    Vec a = random_clamped(cap, rng), b = random_clamped(cap, rng);
    Vec ga = koiter_gradient(kc, a);
    double lhs = cap.integrate(ga.cwiseProduct(b));
    double rhs = 2.0 * kc(a, b);
    CHECK(std::abs(lhs - rhs) < 1e-10 * (1.0 + std::abs(rhs)));
    Vec gb = koiter_gradient(kc, b);
    Vec gsum = koiter_gradient(kc, Vec(a + b));
    CHECK((gsum - ga - gb).norm() <
          1e-12 * (1.0 + ga.norm() + gb.norm() + gsum.norm()));
  }
}

TEST_CASE("coercivity constant") {
  SphereGeometry geom;
  ElasticParams p{1.0, 1.0, 0.1};
  auto g1 = make_cap_grid(geom, 49);
  auto g2 = make_cap_grid(geom, 97);
  double c1 = coercivity_constant(make_koiter_form(g1, p));
  double c2 = coercivity_constant(make_koiter_form(g2, p));
  CHECK(c1 > 0.0);
  CHECK(c2 > 0.0);
  CHECK(std::abs(c1 - c2) / c2 < 0.15);

  ElasticParams p2 = p;
  p2.eps0 = 2.0 * p.eps0;
  CHECK(coercivity_constant(make_koiter_form(g2, p2)) >= c2);

  // K(eta,eta) >= c0 ||eta||_{H2}^2 for random clamped fields
  auto kf = make_koiter_form(g2, p);
  Mat W = g2.w.asDiagonal();
  Mat H2 = W + g2.D1.transpose() * W * g2.D1 / (g2.R * g2.R) +
           g2.Htt.transpose() * W * g2.Htt + g2.Hpp.transpose() * W * g2.Hpp;
  std::mt19937 rng(19);
  for (int i = 0; i < 100; ++i) {
    Vec a = random_clamped(g2, rng);
    CHECK(kf(a, a) >= c2 * a.dot(H2 * a) * (1.0 - 1e-10));
  }
}

#include <gtest/gtest.h>

#include <cmath>
#include <functional>

#include "spinelab/outype.hpp"

using namespace spinelab;

namespace {

OuParams standard() { return OuParams{}; }  // theta 10, a 1, r 1, rho 1

struct Moments {
  double mean;
  double var;
  double n;
};

Moments moments_of(int n, const std::function<double(RandomStream&)>& draw, std::uint64_t seed) {
  RandomStream rng(StreamKey::from(seed, 0), kRootParticleId);
  double s1 = 0.0, s2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = draw(rng);
    s1 += x, s2 += x * x;
  }
  const double mean = s1 / n;
  return {mean, s2 / n - mean * mean, static_cast<double>(n)};
}

// 3-SE check of a Gaussian sample's mean and variance.
void expect_normal(const Moments& m, double mean, double var) {
  EXPECT_NEAR(m.mean, mean, 3.0 * std::sqrt(var / m.n));
  EXPECT_NEAR(m.var, var, 3.0 * var * std::sqrt(2.0 / m.n));
}

}  // namespace

TEST(Spectral, WorkedValues) {
  const OuParams p = standard();
  // mu^2 = theta^2/4 - theta (2r + a lambda^2)
  for (double l : {-0.5, -0.25}) {
    const double mu = std::sqrt(25.0 - 10.0 * (2.0 + l * l));
    const double psi_minus = (10.0 - 2.0 * mu) / 40.0;
    const OuSpectral s = ou_spectral(p, l);
    EXPECT_NEAR(s.mu, mu, 1e-12);
    EXPECT_NEAR(s.psi_minus, psi_minus, 1e-12);
    EXPECT_NEAR(s.psi_plus, (10.0 + 2.0 * mu) / 40.0, 1e-12);
    EXPECT_NEAR(s.e_lambda, 1.0 + 10.0 * psi_minus, 1e-12);
    EXPECT_NEAR(s.c_lambda, -(1.0 + 10.0 * psi_minus) / l, 1e-12);
    EXPECT_EQ(s.psi_minus + s.psi_plus, 0.5);
  }
  EXPECT_NEAR(ou_spectral(p, -0.5).mu, 1.581139, 1e-6);
  EXPECT_NEAR(ou_spectral(p, -0.5).e_lambda, 2.709431, 1e-6);
  EXPECT_NEAR(ou_spectral(p, -0.25).mu, 2.091650, 1e-6);
  EXPECT_NEAR(ou_spectral(p, -0.25).psi_minus, 0.145418, 1e-6);
  EXPECT_NEAR(ou_lambda_min(p), -std::sqrt(0.5), 1e-15);
  EXPECT_NEAR(ou_spectral(p, -1e-9).mu, 0.5 * std::sqrt(20.0), 1e-9);
}

TEST(Spectral, DomainAndValidation) {
  const OuParams p = standard();
  for (double l : {0.0, 0.1, -0.75, ou_lambda_min(p)}) {
    try {
      ou_spectral(p, l);
      FAIL() << l;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::OutOfDomain);
    }
  }
  OuParams cold = p;
  cold.theta = 8.0;
  EXPECT_THROW(cold.validate(), Error);
}

TEST(Spectral, MonotoneOnGrid) {
  const OuParams p = standard();
  double prev_mu = INFINITY, prev_e = 0.0;
  for (int i = 1; i < 70; ++i) {
    const OuSpectral s = ou_spectral(p, -0.01 * i);
    EXPECT_LT(s.mu, prev_mu);
    EXPECT_GT(s.e_lambda, prev_e);
    EXPECT_GT(s.psi_minus, 0.0);
    EXPECT_LT(s.psi_plus, 0.5);
    prev_mu = s.mu, prev_e = s.e_lambda;
  }
}

TEST(Spectral, DerivativeMatchesFiniteDifference) {
  const OuParams p = standard();
  for (double l : {-0.6, -0.5, -0.3, -0.1}) {
    const double h = 1e-6;
    const double fd = (ou_spectral(p, l + h).e_lambda - ou_spectral(p, l - h).e_lambda) / (2 * h);
    const OuSpectral s = ou_spectral(p, l);
    EXPECT_NEAR(s.e_prime, fd, 1e-7);
    // lambda a theta / mu is exactly twice the derivative
    EXPECT_NEAR(l * p.a * p.theta / s.mu, 2.0 * fd, 1e-6);
  }
}

TEST(LambdaTilde, MatchesFineGridAndFirstOrderCondition) {
  const OuParams p = standard();
  const double lmin = ou_lambda_min(p);
  constexpr int n = 1000000;
  double best = 0.0, best_c = INFINITY;
  for (int i = 1; i < n; ++i) {
    const double l = lmin * (1.0 - static_cast<double>(i) / n);
    const double c = ou_spectral(p, l).c_lambda;
    if (c < best_c) best_c = c, best = l;
  }
  const double tilde = lambda_tilde_ou(p);
  EXPECT_NEAR(tilde, best, 1e-6);
  EXPECT_GT(tilde, lmin);
  EXPECT_LT(tilde, 0.0);
  const OuSpectral s = ou_spectral(p, tilde);
  EXPECT_NEAR(s.e_lambda, tilde * s.e_prime, 1e-6);
}

TEST(Classify, Branches) {
  const OuParams p = standard();
  const auto v = classify_ou(p, -0.25, 2.0);
  EXPECT_EQ(v.tag, Regime::LpConvergent);
  EXPECT_NEAR(2 * ou_spectral(p, -0.25).e_lambda - ou_spectral(p, -0.5).e_lambda, 2.198919, 1e-6);
  EXPECT_NEAR(2 * ou_spectral(p, -0.25).psi_minus, 0.290835, 1e-6);

  const double tilde = lambda_tilde_ou(p);
  EXPECT_EQ(classify_ou(p, tilde - 0.01).tag, Regime::AsZero);
  EXPECT_EQ(classify_ou(p, tilde + 0.01).tag, Regime::L1Convergent);
  EXPECT_EQ(classify_ou(p, -0.4, 2.0).clause, "ou.lp.scaled_out_of_domain");
  EXPECT_EQ(classify_ou(p, -0.35, 2.0).clause, "ou.lp.psi_violated");
  EXPECT_EQ(classify_ou(p, ou_lambda_min(p) / 1.2 + 1e-4, 1.2).clause, "ou.lp.gap_negative");
}

TEST(TransitionP, StationaryAndLimits) {
  expect_normal(moments_of(100000, [](RandomStream& r) { return ou_transition_p(1.7, 10.0, 10.0, r); }, 1), 0.0, 1.0);
  RandomStream rng(StreamKey::from(2, 0), kRootParticleId);
  EXPECT_NEAR(ou_transition_p(0.8, 1e-8, 10.0, rng), 0.8, 1e-3);
  const double mean = 2.0 * std::exp(-0.5);
  EXPECT_NEAR(mean, 1.213061, 1e-6);
  expect_normal(moments_of(100000, [](RandomStream& r) { return ou_transition_p(2.0, 0.1, 10.0, r); }, 3), mean,
                1.0 - std::exp(-1.0));
}

TEST(TransitionP, PreservesStandardNormal) {
  expect_normal(moments_of(100000, [](RandomStream& r) { return ou_transition_p(r.normal(), 0.05, 10.0, r); }, 4),
                0.0, 1.0);
}

TEST(TransitionQ, StationaryVariance) {
  const double mu = ou_spectral(standard(), -0.5).mu;
  EXPECT_NEAR(10.0 / (2.0 * mu), 3.162278, 1e-6);
  expect_normal(moments_of(100000, [&](RandomStream& r) { return ou_transition_q(0.3, 10.0, mu, 10.0, r); }, 5), 0.0,
                10.0 / (2.0 * mu));
  RandomStream rng(StreamKey::from(6, 0), kRootParticleId);
  EXPECT_NEAR(ou_transition_q(-1.1, 1e-9, mu, 10.0, rng), -1.1, 1e-3);
}

// With mu = theta/2 both laws have mean e^{-theta dt/2} y and variance 1 - e^{-theta dt}.
TEST(TransitionQ, ReducesToPAtHalfTheta) {
  RandomStream seeds(StreamKey::from(7, 0), kRootParticleId);
  for (int i = 0; i < 5; ++i) {
    const double y = 4.0 * seeds.uniform() - 2.0;
    const double dt = seeds.uniform();
    const double theta = 1.0 + 10.0 * seeds.uniform();
    RandomStream a(StreamKey::from(8, i), kRootParticleId), b(StreamKey::from(8, i), kRootParticleId);
    EXPECT_NEAR(ou_transition_q(y, dt, 0.5 * theta, theta, a), ou_transition_p(y, dt, theta, b), 1e-13);
    EXPECT_NEAR(detail::ou_variance(dt, 0.5 * theta, theta), -std::expm1(-theta * dt), 1e-15);
  }
}

// The bridge draw at tau1 with the endpoint at tau1 + tau2 reproduces the
// joint law of a two-step forward path.
TEST(Bridge, MatchesForwardJointLaw) {
  const double theta = 10.0, k = 5.0, y0 = 0.7, t1 = 0.03, t2 = 0.05;
  RandomStream rng(StreamKey::from(9, 0), kRootParticleId);
  constexpr int n = 200000;
  double f_mid2 = 0, f_cross = 0, b_mid2 = 0, b_cross = 0;
  for (int i = 0; i < n; ++i) {
    const double mid = std::exp(-k * t1) * y0 + std::sqrt(detail::ou_variance(t1, k, theta)) * rng.normal();
    const double end = std::exp(-k * t2) * mid + std::sqrt(detail::ou_variance(t2, k, theta)) * rng.normal();
    f_mid2 += mid * mid, f_cross += mid * end;
    const double bridged = detail::ou_bridge(y0, end, t1, t2, k, theta, rng.normal());
    b_mid2 += bridged * bridged, b_cross += bridged * end;
  }
  EXPECT_NEAR(b_mid2 / n, f_mid2 / n, 0.01);
  EXPECT_NEAR(b_cross / n, f_cross / n, 0.01);
}

TEST(Simulation, ZeroHorizonAndMartingaleStart) {
  OuParams p = standard();
  p.x0 = 0.5;
  p.y0 = 1.2;
  const Snapshot s = simulate_p_ou(p, 0.0, 0.01, 1);
  ASSERT_EQ(s.size(), 1u);
  EXPECT_EQ(std::get<double>(s.particles[0].type), 1.2);
  const OuSpectral spec = ou_spectral(p, -0.25);
  EXPECT_NEAR(z_lambda_ou(s, spec), std::exp(spec.psi_minus * 1.44 - 0.125), 1e-15);
  p.x0 = 0.0;
  p.y0 = 0.0;
  EXPECT_EQ(z_lambda_ou(simulate_p_ou(p, 0.0, 0.01, 1), spec), 1.0);
  const auto [snap, rec] = simulate_q_ou(p, -0.25, 0.0, 0.01, 1);
  EXPECT_EQ(rec.fission_count(), 0u);
  EXPECT_EQ(snap.size(), 1u);
}

TEST(Simulation, Reproducible) {
  const OuParams p = standard();
  const Snapshot a = simulate_p_ou(p, 1.0, 0.01, 3);
  const Snapshot b = simulate_p_ou(p, 1.0, 0.01, 3);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a.particles[i].position, b.particles[i].position);
}

// With r negligible the fission rate is the constant rho.
TEST(Simulation, FirstFissionIsExponentialAtRho) {
  OuParams p = standard();
  p.r = 1e-12;
  p.rho = 2.0;
  const OuDynamics dyn(p, std::nullopt, OuGrid{});
  constexpr int n = 20000;
  double s = 0.0;
  for (int i = 0; i < n; ++i) {
    Particle<double> q = ou_root(p);
    const LifeEnd end = dyn.live(q, 100.0, StreamKey::from(11, i));
    ASSERT_TRUE(end.fission);
    EXPECT_EQ(end.extra, 1u);
    s += q.time;
  }
  EXPECT_NEAR(s / n, 0.5, 3.0 * 0.5 / std::sqrt(n));
}

TEST(Grid, NoiseStepMustDivideStep) {
  EXPECT_EQ((OuGrid{0.01, 0.005}).per_step(), 2);
  EXPECT_THROW((OuGrid{0.01, 0.003}).per_step(), Error);
}

// Runs at h and h/2 share their fine-grid noise, so type paths agree exactly
// at common grid times when no fission intervenes.
TEST(Grid, CoupledStepHalving) {
  OuParams p = standard();
  p.r = 1e-12;
  p.rho = 1e-9;
  const OuDynamics coarse(p, std::nullopt, OuGrid{0.01, 0.005});
  const OuDynamics fine(p, std::nullopt, OuGrid{0.005, std::nullopt});
  double sq = 0.0, sq_indep = 0.0;
  constexpr int n = 200;
  for (int i = 0; i < n; ++i) {
    const StreamKey k = StreamKey::from(12, i);
    Particle<double> a = ou_root(p), b = ou_root(p);
    a.type = b.type = 0.9;
    coarse.live(a, 1.0, k);
    fine.live(b, 1.0, k);
    EXPECT_NEAR(a.type, b.type, 1e-12);
    sq += (a.x - b.x) * (a.x - b.x);
    Particle<double> c = ou_root(p);
    c.type = 0.9;
    fine.live(c, 1.0, StreamKey::from(13, i));
    sq_indep += (a.x - c.x) * (a.x - c.x);
  }
  // Positions differ only through the quadrature of the variance.
  EXPECT_LT(std::sqrt(sq / n), 0.2 * std::sqrt(sq_indep / n));
}

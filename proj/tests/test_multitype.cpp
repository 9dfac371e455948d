#include <gtest/gtest.h>

#include <cmath>
#include <string>

#include "spinelab/bbm.hpp"
#include "spinelab/multitype.hpp"

using namespace spinelab;

namespace {

TypedParams two_type() {
  TypedParams p;
  p.theta = 1.5;
  p.q = Eigen::MatrixXd{{-1.0, 1.0}, {2.0, -2.0}};
  p.a = Eigen::VectorXd{{1.0, 2.5}};
  p.r = Eigen::VectorXd{{1.0, 0.5}};
  p.offspring = {OffspringDist::finite({0.0, 1.0}), OffspringDist::finite({0.2, 0.3, 0.5})};
  p.finalize();
  return p;
}

TypedParams degenerate(double a, double r, std::size_t n = 3) {
  TypedParams p;
  p.theta = 0.7;
  p.q = Eigen::MatrixXd::Constant(n, n, 1.0);
  p.q.diagonal().setConstant(-static_cast<double>(n - 1));
  p.a = Eigen::VectorXd::Constant(n, a);
  p.r = Eigen::VectorXd::Constant(n, r);
  p.offspring.assign(n, OffspringDist::finite({0.0, 1.0}));
  p.finalize();
  return p;
}

// Rightmost root of the 2x2 characteristic polynomial.
double top_root(const Eigen::MatrixXd& h) {
  const double tr = h.trace();
  const double det = h.determinant();
  return 0.5 * (tr + std::sqrt(tr * tr - 4.0 * det));
}

std::string error_text(const TypedParams& p) {
  try {
    TypedParams copy = p;
    copy.finalize();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ConfigInvalid);
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Params, StationaryLaw) {
  const TypedParams p = two_type();
  EXPECT_NEAR(p.pi(0), 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(p.pi(1), 1.0 / 3.0, 1e-15);
}

TEST(Params, ValidationNamesInvariant) {
  TypedParams p = two_type();
  p.q(0, 0) = -0.9;
  EXPECT_NE(error_text(p).find("rows of Q sum to 0"), std::string::npos);

  p = two_type();
  p.q = Eigen::MatrixXd{{0.0, 0.0}, {1.0, -1.0}};
  p.pi.resize(0);
  EXPECT_NE(error_text(p).find("Q irreducible"), std::string::npos);

  p = two_type();
  p.r(1) = 0.0;
  EXPECT_NE(error_text(p).find("r(y) = 0 implies"), std::string::npos);
  p.offspring[1] = OffspringDist::finite({1.0});
  EXPECT_EQ(error_text(p), "");

  p = two_type();
  p.pi = Eigen::VectorXd{{0.5, 0.5}};
  EXPECT_NE(error_text(p).find("supplied pi"), std::string::npos);

  p = two_type();
  p.a(0) = 0.0;
  EXPECT_NE(error_text(p).find("a(y) > 0"), std::string::npos);
}

TEST(Params, NonReversibleRejected) {
  TypedParams p;
  p.q = Eigen::MatrixXd{{-1.0, 1.0, 0.0}, {0.0, -1.0, 1.0}, {1.0, 0.0, -1.0}};
  p.a = Eigen::VectorXd::Ones(3);
  p.r = Eigen::VectorXd::Ones(3);
  p.offspring.assign(3, OffspringDist::finite({0.0, 1.0}));
  EXPECT_NE(error_text(p).find("detailed balance"), std::string::npos);
}

TEST(Spectral, MatchesCharacteristicPolynomial) {
  const TypedParams p = two_type();
  for (double l : {0.0, -0.3, -1.0, -2.7}) {
    const TypedSpectral s = typed_spectral(p, l);
    const Eigen::MatrixXd h = typed_operator(p, l);
    const double e = top_root(h);
    EXPECT_NEAR(s.e_lambda, e, 1e-12);
    // v from the first row of (H - E) v = 0, then pi-normalised
    Eigen::VectorXd v{{-h(0, 1), h(0, 0) - e}};
    if (v(0) < 0) v = -v;
    v /= std::sqrt(pi_inner(v, v, p.pi));
    EXPECT_NEAR((s.v - v).cwiseAbs().maxCoeff(), 0.0, 1e-10);
    EXPECT_NEAR(pi_inner(s.v, s.v, p.pi), 1.0, 1e-12);
    EXPECT_LE(s.residual, 1e-10);
  }
}

TEST(Spectral, DerivativeMatchesFiniteDifference) {
  const TypedParams p = two_type();
  for (double l = -3.0; l <= -0.05; l += 0.25) {
    EXPECT_NEAR(typed_spectral(p, l).e_prime, e_prime_check(p, l, 1e-5), 1e-6);
  }
}

TEST(Spectral, DegenerateReducesToBbm) {
  const TypedParams p = degenerate(2.0, 0.5);
  for (double l : {0.0, -0.4, -1.7}) {
    const TypedSpectral s = typed_spectral(p, l);
    EXPECT_NEAR(s.e_lambda, 0.5 * 2.0 * l * l + 0.5, 1e-12);
    EXPECT_NEAR((s.v.array() - 1.0).abs().maxCoeff(), 0.0, 1e-12);
    EXPECT_NEAR(s.e_prime, 2.0 * l, 1e-12);
  }
  EXPECT_NEAR(lambda_tilde_typed(p), -std::sqrt(2.0 * 0.5 / 2.0), 1e-8);
  EXPECT_NEAR(lmp_speed_typed(p), -std::sqrt(2.0 * 2.0 * 0.5), 1e-8);
}

TEST(LambdaTilde, MatchesGridSearch) {
  const TypedParams p = two_type();
  double best = 0.0, best_c = INFINITY;
  for (int i = 1; i <= 20000; ++i) {
    const double l = -4.0 * i / 20000.0;
    const double c = *typed_spectral(p, l).c_lambda;
    if (c < best_c) best_c = c, best = l;
  }
  const double tilde = lambda_tilde_typed(p);
  EXPECT_NEAR(tilde, best, 4e-4);
  const TypedSpectral s = typed_spectral(p, tilde);
  EXPECT_NEAR(s.e_lambda, tilde * s.e_prime, 1e-8);
}

TEST(LambdaTilde, BracketFailureWithoutBranching) {
  TypedParams p = degenerate(1.0, 1.0, 2);
  p.r.setZero();
  p.offspring.assign(2, OffspringDist::finite({1.0}));
  p.finalize();
  try {
    lambda_tilde_typed(p);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::BracketFailure);
  }
}

TEST(QLambda, HonestGeneratorWithInvariantLaw) {
  const TypedParams p = two_type();
  for (double l : {0.0, -0.5, -2.0}) {
    const TypedSpectral s = typed_spectral(p, l);
    const QLambda q = q_lambda_matrix(p, s);
    for (Eigen::Index i = 0; i < 2; ++i) {
      EXPECT_NEAR(q.generator.row(i).sum(), 0.0, 1e-10);
      for (Eigen::Index j = 0; j < 2; ++j) {
        if (i != j) {
          EXPECT_GE(q.generator(i, j), 0.0);
        }
      }
    }
    const Eigen::VectorXd law = s.v.cwiseAbs2().cwiseProduct(p.pi);
    EXPECT_NEAR(law.sum(), 1.0, 1e-12);
    EXPECT_LE((law.transpose() * q.generator).cwiseAbs().maxCoeff(), 1e-10);
  }
}

// With m(y) = 1 everywhere the r(y) diagonal already has zero row sums.
TEST(QLambda, UnitMeanUsesRateDiagonal) {
  TypedParams p = two_type();
  p.offspring[1] = OffspringDist::finite({0.0, 1.0});
  p.finalize();
  const QLambda q = q_lambda_matrix(p, typed_spectral(p, -0.7));
  EXPECT_TRUE(q.printed_diagonal_used);
  const QLambda q2 = q_lambda_matrix(two_type(), typed_spectral(two_type(), -0.7));
  EXPECT_FALSE(q2.printed_diagonal_used);
  EXPECT_GT(q2.printed_row_sum_defect, 1e-3);
}

TEST(Classify, Branches) {
  const TypedParams p = two_type();
  const double tilde = lambda_tilde_typed(p);
  EXPECT_EQ(classify_typed(p, tilde - 0.1).clause, "typed.l1.lambda_le_tilde");
  EXPECT_EQ(classify_typed(p, tilde + 0.1).clause, "typed.l1.convergent");
  EXPECT_EQ(classify_typed(p, -0.1, 2.0).clause, "typed.lp.convergent");
  EXPECT_EQ(classify_typed(p, -2.5, 2.0).clause, "typed.lp.gap_negative");

  TypedParams heavy = two_type();
  heavy.offspring[1] = OffspringDist::log_power_tail(1.5, 2);
  heavy.finalize();
  EXPECT_EQ(classify_typed(heavy, lambda_tilde_typed(heavy) + 0.05).clause, "typed.l1.xlogx_infinite");
  EXPECT_EQ(classify_typed(heavy, -0.1, 1.5).clause, "typed.lp.moment_infinite");

  // Degenerate model: p E_l - E_pl = (p - p^2) a l^2/2 + (p - 1) m r vanishes at l^2 = 2mr/(pa).
  const TypedParams d = degenerate(1.0, 1.0);
  EXPECT_EQ(classify_typed(d, -1.0, 2.0).clause, "typed.lp.boundary");
}

TEST(DecayRate, DomainAndValue) {
  const TypedParams d = degenerate(1.0, 1.0);
  // BBM: -l (c_l - c_tilde) with c_l = -(l^2/2 + 1)/l
  const double l = -2.0;
  const double expected = -l * ((0.5 * l * l + 1.0) / -l - std::sqrt(2.0));
  EXPECT_NEAR(decay_rate_typed(d, l), expected, 1e-8);
  EXPECT_THROW(decay_rate_typed(d, -0.5), Error);
}

TEST(Simulation, ZeroHorizonAndReproducibility) {
  const TypedParams p = two_type();
  const Snapshot s = simulate_p_typed(p, 0.0, 1);
  ASSERT_EQ(s.size(), 1u);
  EXPECT_EQ(std::get<std::size_t>(s.particles[0].type), p.y0);
  const Snapshot a = simulate_p_typed(p, 2.0, 5);
  const Snapshot b = simulate_p_typed(p, 2.0, 5);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a.particles[i].position, b.particles[i].position);
}

// A single non-branching particle: its type chain relaxes to pi.
TEST(Simulation, TypeChainReachesStationaryLaw) {
  TypedParams p = two_type();
  p.r.setZero();
  p.offspring.assign(2, OffspringDist::finite({1.0}));
  p.finalize();
  constexpr int n = 20000;
  int in_zero = 0;
  for (int i = 0; i < n; ++i)
    in_zero += std::get<std::size_t>(simulate_p_typed(p, 5.0, StreamKey::from(2, i)).particles[0].type) == 0;
  EXPECT_NEAR(in_zero / double(n), p.pi(0), 4.0 * std::sqrt(p.pi(0) * p.pi(1) / n));
}

TEST(Martingale, InitialValue) {
  TypedParams p = two_type();
  p.x0 = 0.4;
  p.y0 = 1;
  const TypedSpectral s = typed_spectral(p, -0.6);
  EXPECT_NEAR(z_lambda_typed(simulate_p_typed(p, 0.0, 1), s), s.v(1) * std::exp(-0.24), 1e-15);
}

TEST(SpineDecomposition, NoFissionIsSpineTerm) {
  const TypedParams p = two_type();
  const TypedSpectral s = typed_spectral(p, -0.6);
  SpineRecord rec;
  rec.horizon = 1.5;
  rec.terminal = {-0.9, std::size_t{1}};
  EXPECT_NEAR(spine_decomposition_typed(rec, s), s.v(1) * std::exp(-0.6 * -0.9 - s.e_lambda * 1.5), 1e-14);
}

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "qe/fit.hpp"
#include "qe/quantum_stats.hpp"

using namespace qe;

namespace {

TorusSymbol cos_mode(int k1, int k2) { return TorusSymbol::mode(k1, k2, 0.5) + TorusSymbol::mode(-k1, -k2, 0.5); }

}  // namespace

TEST(Propagator, UnitaryAndErrors) {
  for (int n : {2, 7, 8, 64}) {
    const auto u = propagator(AnosovMap(), n).matrix;
    EXPECT_LT((u.adjoint() * u - Matrix::Identity(n, n)).cwiseAbs().maxCoeff(), 1e-12) << n;
  }
  try {
    propagator(AnosovMap({{{2, 1}, {1, 1}}}), 8);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::parity);
  }
  try {
    propagator(AnosovMap({{{2, 0}, {4, 1}}}), 8);  // det 2 is rejected first
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::invalid_argument);
  }
}

TEST(Propagator, SingularKernel) {
  // det 1, hyperbolic, even products, but A12 = 0 is impossible with |tr| > 2
  // and det 1 unless the diagonal is reciprocal; lower-triangular integer maps
  // have trace +-2. The SingularError path is reached only via A12 = 0 maps
  // that are not hyperbolic, which the map itself rejects.
  EXPECT_THROW(AnosovMap({{{1, 0}, {2, 1}}}), Error);
}

TEST(Propagator, GeneralOffDiagonal) {
  // A12 = 2 uses the two-term kernel sum.
  const AnosovMap g({{{1, 2}, {2, 5}}});
  ASSERT_TRUE(g.quantizable());
  for (int n : {8, 9, 16}) {
    const auto u = propagator(g, n).matrix;
    EXPECT_LT((u.adjoint() * u - Matrix::Identity(n, n)).cwiseAbs().maxCoeff(), 1e-12);
    const auto d = egorov_defect(TorusSymbol::mode(1, 0), g, u, 1);
    EXPECT_LT(d.defect, 1e-10) << n;
  }
}

TEST(Propagator, MetaplecticCovariance) {
  const int n = 8;
  const Matrix u = propagator(AnosovMap(), n).matrix;
  // U Op(e_k) U^* = Op(e_k o G^-1)
  const Matrix lhs = u * quantize(TorusSymbol::mode(1, 0), n).matrix * u.adjoint();
  const auto back = pullback(TorusSymbol::mode(1, 0), AnosovMap(), -1).symbol;
  EXPECT_LT((lhs - quantize(back, n).matrix).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Propagator, KickNormBound) {
  const int n = 64;
  const double eps = 0.05;
  const Matrix u0 = propagator(AnosovMap(), n).matrix;
  const Matrix ue = propagator(AnosovMap(default_cat_matrix, eps), n).matrix;
  EXPECT_LE(spectral_norm(ue - u0), two_pi * n * eps * 1.0 + 1e-10);
}

TEST(Propagator, KickSignMatchesClassicalShear) {
  // Egorov at t = 1 discriminates the two possible kick signs.
  const int n = 256;
  const AnosovMap g(default_cat_matrix, 0.01);
  const auto a = cos_mode(1, 0) + cos_mode(0, 1);
  const Matrix u = propagator(g, n).matrix;
  Matrix flipped = u;
  for (int j = 0; j < n; ++j) flipped.row(j) *= std::polar(1.0, -2.0 * two_pi * n * 0.01 * g.kick_potential(double(j) / n));
  const double good = egorov_defect(a, g, u, 1).defect;
  const double bad = egorov_defect(a, g, flipped, 1).defect;
  EXPECT_LT(good, 0.05);
  EXPECT_GT(bad, 10 * good);
}

TEST(Egorov, ExactForLinearMap) {
  for (int n : {16, 64}) {
    const auto sweep = egorov_sweep(TorusSymbol::mode(1, 0) + TorusSymbol::mode(0, 1, 0.3), AnosovMap(), n, 20);
    ASSERT_GE(sweep.size(), 2u);
    EXPECT_EQ(sweep[0].defect, 0.0);
    for (const auto& d : sweep) EXPECT_LT(d.defect, 1e-10) << n << " t=" << d.t;
  }
  try {
    egorov_defect(TorusSymbol::mode(1, 0), AnosovMap(), 8, 4);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::alias_limited);
  }
}

TEST(Egorov, PerturbedDefectGrows) {
  const AnosovMap g(default_cat_matrix, 0.02);
  const auto sweep = egorov_sweep(cos_mode(1, 0), g, 128, 6);
  ASSERT_EQ(sweep.size(), 7u);
  EXPECT_EQ(sweep[0].defect, 0.0);
  EXPECT_LT(sweep[1].defect, 0.1);
  EXPECT_GT(sweep[6].defect, sweep[1].defect);
}

TEST(Eigensolve, IdentityAndClock) {
  const auto id = eigensolve(Matrix::Identity(4, 4));
  for (int j = 0; j < 4; ++j) EXPECT_NEAR(id.phases(j), 0.0, 1e-15);
  EXPECT_LT(id.gram_defect, 1e-12);
  const auto clock = eigensolve(quantize(TorusSymbol::mode(1, 0), 8).matrix);
  std::vector<double> ph(clock.phases.data(), clock.phases.data() + 8);
  std::sort(ph.begin(), ph.end());
  for (int j = 0; j < 8; ++j) EXPECT_NEAR(ph[j], two_pi * j / 8, 1e-12);
  for (int j = 0; j < 8; ++j) {
    // each eigenvector is a standard basis vector up to phase
    Eigen::Index at;
    clock.vectors.col(j).cwiseAbs().maxCoeff(&at);
    EXPECT_NEAR(std::abs(clock.vectors(at, j)), 1.0, 1e-12);
    EXPECT_NEAR(ph[0] + two_pi * at / 8 - ph[0], clock.phases(j), 1e-12);
  }
}

TEST(Eigensolve, CatMapResidualAndUniformPhases) {
  const auto u = propagator(AnosovMap(), 128).matrix;
  const auto e = eigensolve(u);
  EXPECT_LE(e.residual, 1e-8);
  EXPECT_LE(e.gram_defect, 1e-10);
  std::vector<double> ph(e.phases.data(), e.phases.data() + e.dim);
  std::sort(ph.begin(), ph.end());
  double ks = 0.0;
  for (int j = 0; j < e.dim; ++j)
    ks = std::max({ks, std::abs(ph[j] / two_pi - double(j) / e.dim), std::abs(ph[j] / two_pi - double(j + 1) / e.dim)});
  RecordProperty("ks_distance", std::to_string(ks));
  EXPECT_LT(ks, 0.5);  // diagnostic only; degeneracies cluster phases
}

TEST(Eigensolve, RejectsNonUnitary) {
  Matrix m = Matrix::Identity(4, 4);
  m(0, 0) = 2.0;
  try {
    eigensolve(m);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::not_unitary);
  }
}

TEST(Variance, ConstantSymbol) {
  const auto e = eigensolve(propagator(AnosovMap(), 32).matrix);
  const auto r = variance(TorusSymbol::constant(0.7), e, 0.3, default_beta_tilde(0.3));
  EXPECT_NEAR(r.v2, 0.0, 1e-24);
  EXPECT_EQ(r.gamma_set.size(), 32u);
  EXPECT_DOUBLE_EQ(r.density_gamma(), 1.0);
}

TEST(Variance, IdentityBasisOracle) {
  // U = I, N = 4: eigenvectors are the standard basis, <Op(a) e_j, e_j> = 2 cos(2 pi j / 4).
  const auto e = eigensolve(Matrix::Identity(4, 4));
  const auto a = TorusSymbol::mode(1, 0) + TorusSymbol::mode(-1, 0);
  const auto r = variance(a, e, 0.0, 0.0);
  const Matrix op = quantize(a, 4).matrix;
  double v2 = 0.0;
  for (int j = 0; j < 4; ++j) v2 += std::norm(e.vectors.col(j).dot(op * e.vectors.col(j)));
  EXPECT_NEAR(r.v2, v2 / 4, 1e-14);
  EXPECT_NEAR(r.v2, 2.0, 1e-14);  // mean of 4 cos^2 over the four sites
}

TEST(Variance, TraceAndCauchySchwarz) {
  const int n = 96;
  const auto e = eigensolve(propagator(AnosovMap(), n).matrix);
  DeltaSymbolSpec s;
  s.kind = Localization::microlocalized;
  s.x0 = 0.3;
  s.xi0 = 0.6;
  s.scale = 0.4;
  const auto a = make_delta_symbol(s, 10);
  const Vector el = diagonal_elements(a, e.vectors);
  EXPECT_LT(std::abs(el.sum() - double(n) * a.mean()), 1e-10);
  EXPECT_LT((el - expectation_values(a, e.vectors)).cwiseAbs().maxCoeff(), 1e-12);
  const auto r = variance(a, e, 0.3, default_beta_tilde(0.3));
  EXPECT_LE(r.v1 * r.v1, r.v2 + 1e-15);
  double sup = 0.0;
  for (const auto& z : sample_grid(a, 64)) sup = std::max(sup, std::abs(z));
  EXPECT_LE(r.v2, 2 * sup * r.v1 + 1e-15);
  EXPECT_EQ(r.gamma_set.size() + r.lambda_set.size(), std::size_t(n));
  for (int j : r.lambda_set) EXPECT_GE(r.deviations[j], r.threshold);
  const double logn = std::log(double(n));
  EXPECT_NEAR(r.threshold, std::pow(logn, -0.3) * std::pow(logn, -default_beta_tilde(0.3)), 1e-15);
  EXPECT_THROW(variance(TorusSymbol::mode(48, 0), e, 0.3, 0.0), Error);
}

TEST(Variance, Parameters) {
  EXPECT_NEAR(default_beta(0.3), 0.35, 1e-15);
  EXPECT_NEAR(default_beta_tilde(0.3), (0.35 - 0.3) / 3, 1e-15);
  // alpha n + 2 beta~ - beta < 0
  // the admissible window alpha n < beta < 1 - 2 alpha n is nonempty for alpha < 1/3
  for (double a : {0.0, 0.1, 0.3, 0.33}) EXPECT_LT(a + 2 * default_beta_tilde(a) - default_beta(a), 0.0);
  EXPECT_NEAR(ehrenfest_time(1024, std::log(2 + std::sqrt(3.0))), 5.2632, 1e-4);
}

TEST(Variance, SweepCsvAndJson) {
  const auto e = eigensolve(propagator(AnosovMap(), 16).matrix);
  const auto r = variance(cos_mode(2, 0), e, 0.3, 0.0);
  const auto j = r.to_json();
  EXPECT_EQ(j["N"], 16);
  EXPECT_EQ(j["per_j_deviations"].size(), 16u);
  const auto path = (std::filesystem::temp_directory_path() / "qe_sweep.csv").string();
  write_variance_sweep_csv({r}, path);
  std::ifstream is(path);
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line, "N,delta,v1,v2,v2_log_n,density_gamma");
}

TEST(Mass, Normalization) {
  const int n = 64;
  const Matrix uniform = Matrix::Constant(n, 1, 1.0 / std::sqrt(double(n)));
  EXPECT_NEAR(small_scale_mass(uniform, 0.25, 0.25).masses[0], 0.5, 1.0 / n);
  Matrix e0 = Matrix::Zero(n, 1);
  e0(0, 0) = 1.0;
  EXPECT_NEAR(small_scale_mass(e0, 0.0, 0.1).masses[0], 1.0, 1e-15);
  try {
    small_scale_mass(e0, 0.0, 1.0 / n);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::radius_too_small);
  }
  // a partition into eight arcs sums to one per eigenvector
  const auto eig = eigensolve(propagator(AnosovMap(), n).matrix);
  std::vector<double> total(n, 0.0);
  for (int p = 0; p < 8; ++p) {
    // arcs centred between lattice sites so no site sits on a boundary
    const auto m = small_scale_mass(eig, (p + 0.5) / 8.0 - 0.5 / n, 0.5 / 8.0);
    for (int j = 0; j < n; ++j) total[j] += m.masses[j];
  }
  for (double t : total) EXPECT_NEAR(t, 1.0, 1e-12);
}

TEST(Density, Recurrence) {
  const auto h = window_recurrence(5);
  double x = 1.0;
  for (int m = 0; m < 5; ++m) {
    EXPECT_NEAR(h[m], x, 1e-12);
    x = std::pow(std::pow(x, -2) + 1.0 / x, -0.5);
  }
  EXPECT_NEAR(h[1], std::sqrt(0.5), 1e-12);
  EXPECT_NEAR(h[2], 0.5411961, 1e-6);
  EXPECT_EQ(window_index(1.0), 1);
  EXPECT_EQ(window_index(0.8), 1);
  EXPECT_EQ(window_index(0.7), 2);
}

namespace {

VarianceReport synthetic(int n, double outlier_fraction) {
  Vector el = Vector::Zero(n);
  const int outliers = static_cast<int>(std::round(outlier_fraction * n));
  for (int j = 0; j < outliers; ++j) el(j) = 10.0;
  return variance_from_elements(el, TorusSymbol::constant(0.0), n, 0.3, 0.0);
}

}  // namespace

TEST(Density, Windows) {
  const std::vector<double> hs{0.9, 0.6, 0.5};
  const auto clean = density_one_extract({synthetic(20, 0.0), synthetic(20, 0.0), synthetic(20, 0.0)}, hs);
  ASSERT_EQ(clean.windows.size(), 3u);
  for (const auto& w : clean.windows) EXPECT_DOUBLE_EQ(w.density, 1.0);
  const auto noisy = density_one_extract({synthetic(20, 0.1), synthetic(30, 0.1), synthetic(40, 0.1)}, hs);
  for (const auto& w : noisy.windows) EXPECT_NEAR(w.density, 0.9, 1e-12);
  EXPECT_THROW(density_one_extract({synthetic(20, 0.0), synthetic(20, 0.0)}, {0.9, 0.6}), Error);
  VarianceReport empty = synthetic(20, 0.0);
  empty.deviations.clear();
  empty.gamma_set.clear();
  try {
    density_one_extract({synthetic(20, 0.0), synthetic(20, 0.0), empty}, hs);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::empty_window);
  }
}

#include "helpers.hpp"

#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>
#include <sstream>

using namespace nhflux;

namespace {

const auto kSd = SpectralDensity::ohmic_exponential(0.121, 900.0);

TruncationPolicy tight(std::size_t K = 0) {
  TruncationPolicy p;
  p.svd_relative_cutoff = 1e-14;
  p.max_bond_dimension = 100000;
  p.memory_steps = K;
  return p;
}

double min_eig(const CMatrix& r) {
  const CMatrix h = 0.5 * (r + r.adjoint());
  return Eigen::SelfAdjointEigenSolver<CMatrix>(h).eigenvalues().minCoeff();
}

// ---------------------------------------------------------------- bare

TEST(Bare, RabiOscillation) {
  const double h = -181.5, dt = 0.002;
  const auto sys = build_excitonic_chain(2, 0.0, h);
  const auto tr = propagate_bare(sys, th::site_rho(2, 0), dt, 300);
  for (std::size_t n = 0; n <= 300; ++n) {
    const double c = std::cos(h * tr.times[n] / kUnits.hbar);
    EXPECT_NEAR(tr.rho[n](0, 0).real(), c * c, 1e-12);
    EXPECT_NEAR(tr.rho[n].trace().real(), 1.0, 1e-12);
  }
}

TEST(Bare, SingleLossySite) {
  const double T = 0.3, dt = 0.001;
  const auto sys = build_excitonic_chain(1, 0.0, 0.0, {{0, T}});
  const auto tr = propagate_bare(sys, th::site_rho(1, 0), dt, 1000);
  const auto L = total_loss(tr);
  for (std::size_t n = 0; n < L.size(); ++n) EXPECT_NEAR(L[n], 1.0 - std::exp(-2.0 * kPi * tr.times[n] / T), 1e-10);
  // population convention: amplitude decays at 1/(2T)
  const auto pop = build_excitonic_chain(1, 0.0, 0.0, {{0, T}}, kUnits, LifetimeConvention::Population);
  const auto tp = propagate_bare(pop, th::site_rho(1, 0), dt, 1000);
  for (std::size_t n = 0; n < tp.size(); n += 50)
    EXPECT_NEAR(1.0 - tp.rho[n].trace().real(), 1.0 - std::exp(-tp.times[n] / T), 1e-10);
}

// closed form through the eigendecomposition of the non-Hermitian Hamiltonian
TEST(Bare, MatchesEigendecomposition) {
  const auto sys = embed_cavity(th::trimer(), 37.0, 0.6, 181.5);
  const CMatrix H = sys.matrix();
  Eigen::ComplexEigenSolver<CMatrix> es(H);
  const CMatrix V = es.eigenvectors(), Vi = V.inverse();
  const auto tr = propagate_bare(sys, th::site_rho(4, 0), 0.005, 400);
  for (std::size_t n = 0; n <= 400; n += 40) {
    const double t = tr.times[n];
    Eigen::VectorXcd ph(4);
    for (int k = 0; k < 4; ++k) ph(k) = std::exp(cd(0, -1) * es.eigenvalues()(k) * t / kUnits.hbar);
    const CMatrix U = V * ph.asDiagonal() * Vi;
    const CMatrix r = U * th::site_rho(4, 0) * U.adjoint();
    EXPECT_LT(th::max_abs(r, tr.rho[n]), 1e-10);
  }
}

// ---------------------------------------------------------------- path sum

TEST(Pathsum, NoCouplingEqualsBare) {
  const auto sys = th::trimer();
  const auto zero = SpectralDensity::ohmic_exponential(0.0, 900.0);
  const auto eta = build_eta_table(zero, 300.0, 0.01, 4);
  const auto a = propagate_pathsum(sys, th::site_baths(3, zero), th::site_rho(3, 0), 0.01, 6, eta);
  const auto b = propagate_bare(sys, th::site_rho(3, 0), 0.01, 6);
  EXPECT_LT(th::max_traj_dev(a, b), 1e-12);
}

// one step by hand: U rho Ubar with the start and end self factors and their pair factor
TEST(Pathsum, OneStepClosedForm) {
  const auto sys = embed_cavity(build_excitonic_chain(2, 0.0, -181.5, {{1, 0.3}}), 0.0, 0.6, 90.0);
  const std::size_t d = 3;
  const double dt = 0.01;
  const auto eta = build_eta_table(kSd, 300.0, dt, 1);
  const auto baths = th::site_baths(2, kSd);
  CMatrix rho0(d, d);
  rho0 << 0.5, 0.2, cd(0.1, 0.1), 0.2, 0.3, 0.0, cd(0.1, -0.1), 0.0, 0.2;
  const auto bp = bare_propagators(sys, dt);
  const cd eh = eta.half[0], e1 = eta.half[1];
  CMatrix want = CMatrix::Zero(d, d);
  for (std::size_t p1 = 0; p1 < d; ++p1)
    for (std::size_t m1 = 0; m1 < d; ++m1)
      for (std::size_t p0 = 0; p0 < d; ++p0)
        for (std::size_t m0 = 0; m0 < d; ++m0) {
          cd phase = 0.0;
          for (const auto& b : baths) {
            const double sp1 = b.eigenvalue(p1), sm1 = b.eigenvalue(m1), sp0 = b.eigenvalue(p0), sm0 = b.eigenvalue(m0);
            phase += (sp1 - sm1) * (eh * sp1 - std::conj(eh) * sm1);
            phase += (sp1 - sm1) * (e1 * sp0 - std::conj(e1) * sm0);
            phase += (sp0 - sm0) * (eh * sp0 - std::conj(eh) * sm0);
          }
          want(p1, m1) += bp.U(p1, p0) * rho0(p0, m0) * bp.Ubar(m0, m1) * std::exp(-phase);
        }
  const auto tr = propagate_pathsum(sys, baths, rho0, dt, 1, eta);
  EXPECT_LT(th::max_abs(tr.rho[1], want), 1e-14);
  const auto tt = propagate_tempo(sys, baths, rho0, dt, 1, eta, tight());
  EXPECT_LT(th::max_abs(tt.rho[1], want), 1e-13);
}

TEST(Pathsum, HermitianTraceAndPositivity) {
  const auto sys = build_excitonic_chain(2, 0.0, -181.5);
  const auto eta = build_eta_table(kSd, 300.0, 0.005, 6);
  const auto tr = propagate_pathsum(sys, th::site_baths(2, kSd), th::site_rho(2, 0), 0.005, 6, eta);
  for (const auto& r : tr.rho) {
    EXPECT_NEAR(std::abs(r.trace() - cd(1.0)), 0.0, 1e-10);
    EXPECT_GE(min_eig(r), -1e-8);
    EXPECT_LT(th::max_abs(r, r.adjoint()), 1e-12);
  }
}

TEST(Pathsum, LossBoundsAndThreadIndependence) {
  const auto sys = th::trimer();
  const auto eta = build_eta_table(kSd, 300.0, 0.01, 6);
  PathsumOptions one, many;
  one.threads = 1;
  many.threads = 4;
  const auto a = propagate_pathsum(sys, th::site_baths(3, kSd), th::site_rho(3, 0), 0.01, 6, eta, one);
  const auto b = propagate_pathsum(sys, th::site_baths(3, kSd), th::site_rho(3, 0), 0.01, 6, eta, many);
  EXPECT_LE(th::max_traj_dev(a, b), 1e-12);
  const auto L = total_loss(a);
  for (std::size_t n = 0; n < L.size(); ++n) {
    EXPECT_GE(L[n], -1e-12);
    EXPECT_LE(L[n], 1.0);
    if (n) EXPECT_GE(L[n], L[n - 1] - 1e-12);
    EXPECT_GE(min_eig(a.rho[n]), -1e-8);
  }
}

TEST(Pathsum, BudgetRefusal) {
  const auto eta = build_eta_table(kSd, 300.0, 0.01, 4);
  PathsumOptions o;
  o.budget = 1e4;
  EXPECT_THROW(propagate_pathsum(th::trimer(), th::site_baths(3, kSd), th::site_rho(3, 0), 0.01, 5, eta, o),
               BudgetExceeded);
}

// Halving dt moves rho(t_final) by a shrinking amount.
TEST(Pathsum, TimeStepRefinement) {
  const auto sys = build_excitonic_chain(2, 0.0, -181.5, {{1, 0.3}});
  std::vector<CMatrix> finals;
  for (double dt : {0.008, 0.004, 0.002}) {
    const std::size_t n = std::size_t(std::llround(0.016 / dt));
    const auto eta = build_eta_table(kSd, 300.0, dt, n);
    finals.push_back(propagate_pathsum(sys, th::site_baths(2, kSd), th::site_rho(2, 0), dt, n, eta).rho.back());
  }
  const double d1 = th::max_abs(finals[0], finals[1]), d2 = th::max_abs(finals[1], finals[2]);
  EXPECT_LT(d2, d1);
}

// ---------------------------------------------------------------- pure dephasing

// With no tunnelling the path sum is exact: the coherence decays as
// exp(-(ds)^2 Re g(t)) with g the double time integral of C / hbar^2.
TEST(PureDephasing, MatchesAnalyticDecay) {
  const auto sys = build_excitonic_chain(2, 0.0, 0.0);
  const double dt = 0.005;
  const std::size_t N = 8;
  const auto eta = build_eta_table(kSd, 300.0, dt, N);
  const std::vector<BathAttachment> baths{{0, kSd, 1.0, -1.0}};
  CMatrix rho0 = CMatrix::Constant(2, 2, cd(0.5));
  const auto ps = propagate_pathsum(sys, baths, rho0, dt, N, eta);
  const auto tt = propagate_tempo(sys, baths, rho0, dt, N, eta, tight());
  const th::CorrelationOracle C(0.121, 900.0, 300.0);
  for (std::size_t n = 1; n <= N; ++n) {
    const double want = 0.5 * std::exp(-4.0 * C.re_g(dt * double(n)));
    EXPECT_NEAR(ps.rho[n](0, 1).real(), want, 1e-7 * want);
    EXPECT_NEAR(ps.rho[n](0, 1).imag(), 0.0, 1e-12);
    EXPECT_NEAR(tt.rho[n](0, 1).real(), want, 1e-7 * want);
    EXPECT_NEAR(ps.rho[n](0, 0).real(), 0.5, 1e-14);
  }
}

// ---------------------------------------------------------------- tempo

TEST(Tempo, NoCouplingEqualsBareForAnyPolicy) {
  const auto sys = embed_cavity(th::trimer(), 0.0, 0.6, 181.5);
  const auto zero = SpectralDensity::ohmic_exponential(0.0, 900.0);
  const auto eta = build_eta_table(zero, 300.0, 0.005, 5);
  const auto bare = propagate_bare(sys, th::site_rho(4, 0), 0.005, 60);
  for (double cut : {1e-2, 1e-6, 1e-12}) {
    TruncationPolicy p;
    p.svd_relative_cutoff = cut;
    p.max_bond_dimension = 3;
    const auto tr = propagate_tempo(sys, th::site_baths(3, zero), th::site_rho(4, 0), 0.005, 60, eta, p);
    EXPECT_LT(th::max_traj_dev(tr, bare), 1e-10) << "cutoff " << cut;
  }
}

TEST(Tempo, MatchesPathsumFullMemory) {
  const auto eta = build_eta_table(kSd, 300.0, 0.01, 5);
  const auto sys = th::trimer();
  const auto b = th::site_baths(3, kSd);
  const auto ps = propagate_pathsum(sys, b, th::site_rho(3, 0), 0.01, 5, eta);
  const auto tt = propagate_tempo(sys, b, th::site_rho(3, 0), 0.01, 5, eta, tight());
  EXPECT_LT(th::max_traj_dev(ps, tt), 1e-10);
}

TEST(Tempo, MatchesPathsumTruncatedMemory) {
  const auto eta = build_eta_table(kSd, 300.0, 0.01, 2);
  const auto sys = th::trimer();
  const auto b = th::site_baths(3, kSd);
  const auto ps = propagate_pathsum(sys, b, th::site_rho(3, 1), 0.01, 6, eta);
  const auto tt = propagate_tempo(sys, b, th::site_rho(3, 1), 0.01, 6, eta, tight());
  EXPECT_LT(th::max_traj_dev(ps, tt), 1e-10);
}

// cavity state, baths with different densities and coupling eigenvalues
TEST(Tempo, MatchesPathsumMixedBaths) {
  const double dt = 0.01;
  const auto sys = embed_cavity(build_excitonic_chain(2, 0.0, -181.5, {{1, 0.3}}), 20.0, 0.6, 181.5);
  const auto other = SpectralDensity::ohmic_exponential(0.3, 400.0);
  std::vector<BathAttachment> b{{0, kSd, 1.0, -1.0}, {1, other, 1.0, 0.0}};
  const std::vector<EtaTable> eta{build_eta_table(kSd, 300.0, dt, 4), build_eta_table(other, 300.0, dt, 4)};
  CMatrix rho0 = CMatrix::Zero(3, 3);
  rho0(0, 0) = 0.6;
  rho0(2, 2) = 0.4;
  rho0(0, 2) = rho0(2, 0) = 0.3;
  const auto ps = propagate_pathsum(sys, b, rho0, dt, 4, eta);
  const auto tt = propagate_tempo(sys, b, rho0, dt, 4, eta, tight());
  EXPECT_LT(th::max_traj_dev(ps, tt), 1e-10);
}

TEST(Tempo, LosslessTraceConservation) {
  const auto sys = th::trimer(false);
  const double dt = 0.005;
  const std::size_t K = 20;
  const auto eta = build_eta_table(kSd, 300.0, dt, K);
  TruncationPolicy p;
  p.memory_steps = K;
  const auto tr = propagate_tempo(sys, th::site_baths(3, kSd), th::site_rho(3, 0), dt, 100, eta, p);
  for (const auto& r : tr.rho) {
    EXPECT_LE(std::abs(r.trace().real() - 1.0), 1e-8);
    EXPECT_LT(th::max_abs(r, r.adjoint()), 1e-8);
    EXPECT_GE(min_eig(r), -1e-8);
  }
}

TEST(Tempo, LossyTraceMonotone) {
  const auto sys = embed_cavity(th::trimer(), 0.0, 0.6, 181.5);
  const double dt = 0.005;
  const auto eta = build_eta_table(kSd, 300.0, dt, 20);
  const auto tr = propagate_tempo(sys, th::site_baths(3, kSd), th::site_rho(4, 0), dt, 100, eta, TruncationPolicy{});
  const auto L = total_loss(tr);
  for (std::size_t n = 1; n < L.size(); ++n) {
    EXPECT_GE(L[n], L[n - 1] - 1e-10);
    EXPECT_LE(L[n], 1.0);
    EXPECT_GE(min_eig(tr.rho[n]), -1e-8);
  }
}

TEST(Tempo, DiscardedWeightFallsWithCutoff) {
  const auto sys = th::trimer();
  const double dt = 0.005;
  const auto eta = build_eta_table(kSd, 300.0, dt, 20);
  std::vector<TempoDiagnostics> diag(3);
  const std::vector<double> cuts{1e-3, 1e-5, 1e-7};
  for (std::size_t i = 0; i < cuts.size(); ++i) {
    TruncationPolicy p;
    p.svd_relative_cutoff = cuts[i];
    propagate_tempo(sys, th::site_baths(3, kSd), th::site_rho(3, 0), dt, 60, eta, p, kUnits, {}, &diag[i]);
  }
  EXPECT_GT(diag[0].total_discarded(), diag[1].total_discarded());
  EXPECT_GT(diag[1].total_discarded(), diag[2].total_discarded());
  std::size_t bigger = 0;
  for (std::size_t n = 0; n < diag[0].discarded_weight.size(); ++n)
    bigger += diag[0].discarded_weight[n] >= diag[2].discarded_weight[n];
  EXPECT_EQ(bigger, diag[0].discarded_weight.size());
  EXPECT_LE(diag[0].max_bond.back(), diag[2].max_bond.back());
}

TEST(Tempo, BondCeilingWarns) {
  const auto eta = build_eta_table(kSd, 300.0, 0.005, 10);
  TruncationPolicy p;
  p.max_bond_dimension = 2;
  p.svd_relative_cutoff = 1e-12;
  std::vector<std::string> warnings;
  TempoDiagnostics d;
  const auto tr = propagate_tempo(th::trimer(), th::site_baths(3, kSd), th::site_rho(3, 0), 0.005, 20, eta, p, kUnits,
                                  [&](const std::string& w) { warnings.push_back(w); }, &d);
  EXPECT_FALSE(warnings.empty());
  EXPECT_FALSE(d.warnings.empty());
  for (auto b : d.max_bond) EXPECT_LE(b, 2u);
  EXPECT_EQ(tr.metadata.max_bond_reached, 2u);
}

TEST(Tempo, PolicyValidation) {
  TruncationPolicy p;
  EXPECT_NO_THROW(p.validate());
  p.svd_relative_cutoff = 0.0;
  EXPECT_THROW(p.validate(), InvalidParameter);
  p.svd_relative_cutoff = 1.0;
  EXPECT_THROW(p.validate(), InvalidParameter);
  p = {};
  p.max_bond_dimension = 0;
  EXPECT_THROW(p.validate(), InvalidParameter);
}

TEST(Tempo, CheckpointRoundTripAndResume) {
  const auto sys = embed_cavity(th::trimer(), 0.0, 0.6, 181.5);
  const auto b = th::site_baths(3, kSd);
  const double dt = 0.005;
  const auto eta = build_eta_table(kSd, 300.0, dt, 12);
  TruncationPolicy p;
  p.memory_steps = 12;
  const std::vector<EtaTable> tables{eta};

  TempoPropagator full(sys, b, th::site_rho(4, 0), dt, tables, p);
  for (int i = 0; i < 30; ++i) full.step();

  TempoPropagator first(sys, b, th::site_rho(4, 0), dt, tables, p);
  for (int i = 0; i < 15; ++i) first.step();
  std::stringstream buf;
  save_checkpoint(first.state(), buf);
  const auto restored = load_checkpoint(buf);
  EXPECT_TRUE(restored == first.state());

  TempoPropagator second(sys, b, dt, tables, restored);
  EXPECT_EQ(second.step_index(), 15u);
  for (int i = 0; i < 15; ++i) second.step();
  EXPECT_EQ(second.current_rho(), full.current_rho());
  EXPECT_TRUE(second.state() == full.state());

  std::stringstream bad("NOTACHECKPOINT");
  EXPECT_THROW(load_checkpoint(bad), InvalidParameter);
  EXPECT_THROW(TempoPropagator(th::trimer(), b, dt, tables, restored), InvalidParameter);
}

TEST(Tempo, Deterministic) {
  const auto eta = build_eta_table(kSd, 300.0, 0.005, 15);
  const auto a = propagate_tempo(th::trimer(), th::site_baths(3, kSd), th::site_rho(3, 0), 0.005, 40, eta, {});
  const auto c = propagate_tempo(th::trimer(), th::site_baths(3, kSd), th::site_rho(3, 0), 0.005, 40, eta, {});
  for (std::size_t n = 0; n < a.size(); ++n) EXPECT_EQ(a.rho[n], c.rho[n]);
}

}  // namespace

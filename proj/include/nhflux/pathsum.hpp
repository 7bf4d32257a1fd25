#pragma once

#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

#include "bath.hpp"
#include "errors.hpp"
#include "influence.hpp"
#include "propagators.hpp"

namespace nhflux {

struct PathsumOptions {
  double budget = 1e8;      // max path pairs n_states^(2 n_steps)
  std::size_t threads = 0;  // 0: hardware concurrency
};

inline double pathsum_path_count(std::size_t n_states, std::size_t n_steps) {
  return std::pow(static_cast<double>(n_states), 2.0 * static_cast<double>(n_steps));
}

namespace detail {

// Flattened tables for the enumeration: weights for the newest point k paired with
// an earlier point at separation delta, both as an interior and as an end point.
struct PathsumTables {
  std::size_t d2, K;
  CMatrix G;                                 // G(a, sigma)
  std::vector<CMatrix> int_int, int_start;   // [delta] (a, sigma)
  std::vector<CMatrix> end_int, end_start;
  Eigen::VectorXcd self_int, self_end, self_start;

  PathsumTables(const InfluenceFactors& inf, const BarePropagators& bp) : d2(inf.d2()), K(inf.memory()) {
    using P = EtaTable::Point;
    G = bp.liouville();
    int_int.resize(K + 1);
    int_start = end_int = end_start = int_int;
    for (std::size_t dl = 1; dl <= K; ++dl) {
      int_int[dl] = inf.pair_matrix(P::Interior, P::Interior, dl);
      int_start[dl] = inf.pair_matrix(P::Interior, P::Start, dl);
      end_int[dl] = inf.pair_matrix(P::End, P::Interior, dl);
      end_start[dl] = inf.pair_matrix(P::End, P::Start, dl);
    }
    self_int = inf.self_vector(P::Interior);
    self_end = inf.self_vector(P::End);
    self_start = inf.self_vector(P::Start);
  }
};

struct PathsumWorker {
  const PathsumTables& T;
  std::size_t N;
  std::vector<std::size_t> path;
  std::vector<Eigen::VectorXcd> acc;  // acc[k](a): contribution to vec rho(k)

  PathsumWorker(const PathsumTables& t, std::size_t n) : T(t), N(n), path(n + 1, 0), acc(n + 1) {
    for (auto& v : acc) v = Eigen::VectorXcd::Zero(t.d2);
  }

  // extend a path whose points 0..k-1 are fixed; w = weight of that prefix with
  // point k-1 treated as interior
  void extend(std::size_t k, cd w) {
    const std::size_t sig = path[k - 1];
    const std::size_t lo = k > T.K ? k - T.K : 0;
    for (std::size_t a = 0; a < T.d2; ++a) {
      const cd g = T.G(a, sig);
      if (g == cd(0.0)) continue;
      cd wg = w * g;
      path[k] = a;
      cd we = wg * T.self_end(a);
      for (std::size_t j = lo; j < k; ++j) {
        const auto dl = k - j;
        we *= (j == 0 ? T.end_start[dl] : T.end_int[dl])(a, path[j]);
      }
      acc[k](a) += we;
      if (k == N) continue;
      cd wi = wg * T.self_int(a);
      for (std::size_t j = lo; j < k; ++j) {
        const auto dl = k - j;
        wi *= (j == 0 ? T.int_start[dl] : T.int_int[dl])(a, path[j]);
      }
      extend(k + 1, wi);
    }
  }
};

inline std::size_t resolve_threads(std::size_t requested) {
  if (requested) return requested;
  if (const char* e = std::getenv("NHFLUX_THREADS")) {
    const long v = std::strtol(e, nullptr, 10);
    if (v > 0) return static_cast<std::size_t>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

}  // namespace detail

// Exact enumeration of every forward/backward path pair. Bit-deterministic and
// independent of the thread count (one accumulator per leading index, merged in order).
inline Trajectory propagate_pathsum(const SystemHamiltonian& sys, const std::vector<BathAttachment>& baths,
                                    const CMatrix& rho0, double dt, std::size_t n_steps,
                                    const std::vector<EtaTable>& eta, const PathsumOptions& opt = {},
                                    const UnitSystem& u = kUnits) {
  const auto d = sys.n_states();
  const double count = pathsum_path_count(d, n_steps);
  if (count > opt.budget)
    throw BudgetExceeded("path sum over " + std::to_string(n_steps) + " steps needs " + std::to_string(count) +
                         " path pairs, budget is " + std::to_string(opt.budget));
  for (const auto& t : eta)
    if (std::abs(t.dt - dt) > 1e-15 * dt) throw InvalidParameter("eta table dt does not match propagation dt");
  if (static_cast<std::size_t>(rho0.rows()) != d) throw InvalidParameter("rho0 dimension mismatch");

  const InfluenceFactors inf(sys, baths, eta);
  const auto bp = bare_propagators(sys, dt, u);
  const detail::PathsumTables T(inf, bp);
  const auto r0 = rho_to_vec(rho0);
  const auto d2 = inf.d2();

  Trajectory tr;
  tr.metadata.engine = "pathsum";
  tr.metadata.dt = dt;
  tr.metadata.memory_steps = inf.memory();
  for (std::size_t n = 0; n <= n_steps; ++n) tr.times.push_back(dt * static_cast<double>(n));
  tr.rho.assign(n_steps + 1, CMatrix::Zero(d, d));
  tr.rho[0] = rho0;
  if (n_steps == 0) return tr;

  // branch = leading index alpha_1
  std::vector<detail::PathsumWorker> branch;
  branch.reserve(d2);
  for (std::size_t a1 = 0; a1 < d2; ++a1) branch.emplace_back(T, n_steps);

  auto run_branch = [&](std::size_t a1) {
    auto& W = branch[a1];
    for (std::size_t a0 = 0; a0 < d2; ++a0) {
      if (r0(a0) == cd(0.0)) continue;
      const cd g = T.G(a1, a0);
      if (g == cd(0.0)) continue;
      W.path[0] = a0;
      W.path[1] = a1;
      const cd w0 = r0(a0) * T.self_start(a0) * g;
      cd we = w0 * T.self_end(a1);
      if (T.K >= 1) we *= T.end_start[1](a1, a0);
      W.acc[1](a1) += we;
      if (n_steps == 1) continue;
      cd wi = w0 * T.self_int(a1);
      if (T.K >= 1) wi *= T.int_start[1](a1, a0);
      W.extend(2, wi);
    }
  };

  const auto nt = std::min(detail::resolve_threads(opt.threads), d2);
  if (nt <= 1) {
    for (std::size_t a1 = 0; a1 < d2; ++a1) run_branch(a1);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < nt; ++t)
      pool.emplace_back([&] {
        for (std::size_t a1; (a1 = next.fetch_add(1)) < d2;) run_branch(a1);
      });
    for (auto& th : pool) th.join();
  }

  for (std::size_t k = 1; k <= n_steps; ++k) {
    Eigen::VectorXcd v = Eigen::VectorXcd::Zero(d2);
    for (std::size_t a1 = 0; a1 < d2; ++a1) v += branch[a1].acc[k];
    tr.rho[k] = vec_to_rho(v, d);
  }
  return tr;
}

inline Trajectory propagate_pathsum(const SystemHamiltonian& sys, const std::vector<BathAttachment>& baths,
                                    const CMatrix& rho0, double dt, std::size_t n_steps, const EtaTable& eta,
                                    const PathsumOptions& opt = {}, const UnitSystem& u = kUnits) {
  return propagate_pathsum(sys, baths, rho0, dt, n_steps, std::vector<EtaTable>{eta}, opt, u);
}

}  // namespace nhflux

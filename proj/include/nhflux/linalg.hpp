#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <complex>
#include <cstddef>
#include <string>
#include <vector>

#include <lapacke.h>

#include "errors.hpp"
#include "model.hpp"

namespace nhflux {

using RowCMatrix = Eigen::Matrix<cd, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// rank-3 tensor, row-major [l][s][r]
struct Tensor3 {
  std::size_t l = 0, s = 0, r = 0;
  std::vector<cd> data;

  Tensor3() = default;
  Tensor3(std::size_t l_, std::size_t s_, std::size_t r_) : l(l_), s(s_), r(r_), data(l_ * s_ * r_, cd(0.0)) {}

  cd& operator()(std::size_t i, std::size_t j, std::size_t k) { return data[(i * s + j) * r + k]; }
  cd operator()(std::size_t i, std::size_t j, std::size_t k) const { return data[(i * s + j) * r + k]; }

  // (l*s) x r and l x (s*r) views
  Eigen::Map<RowCMatrix> left_matrix() { return {data.data(), Eigen::Index(l * s), Eigen::Index(r)}; }
  Eigen::Map<const RowCMatrix> left_matrix() const { return {data.data(), Eigen::Index(l * s), Eigen::Index(r)}; }
  Eigen::Map<RowCMatrix> right_matrix() { return {data.data(), Eigen::Index(l), Eigen::Index(s * r)}; }
  Eigen::Map<const RowCMatrix> right_matrix() const { return {data.data(), Eigen::Index(l), Eigen::Index(s * r)}; }

  bool operator==(const Tensor3&) const = default;
};

struct TruncatedSvd {
  RowCMatrix U;          // m x k
  Eigen::VectorXd S;     // k
  RowCMatrix Vh;         // k x n
  double discarded = 0;  // discarded sum of s^2 over total sum of s^2
  bool ceiling_hit = false;
};

// full thin SVD, singular values descending
inline TruncatedSvd svd_thin(const RowCMatrix& M) {
  const auto m = static_cast<lapack_int>(M.rows()), n = static_cast<lapack_int>(M.cols());
  const lapack_int k = std::min(m, n);
  RowCMatrix A = M;
  TruncatedSvd r;
  r.U.resize(m, k);
  r.Vh.resize(k, n);
  r.S.resize(k);
  auto* a = reinterpret_cast<lapack_complex_double*>(A.data());
  auto* u = reinterpret_cast<lapack_complex_double*>(r.U.data());
  auto* vt = reinterpret_cast<lapack_complex_double*>(r.Vh.data());
  lapack_int info = LAPACKE_zgesdd(LAPACK_ROW_MAJOR, 'S', m, n, a, n, r.S.data(), u, k, vt, n);
  if (info != 0) {
    A = M;
    std::vector<double> superb(static_cast<std::size_t>(std::max<lapack_int>(1, k)));
    info = LAPACKE_zgesvd(LAPACK_ROW_MAJOR, 'S', 'S', m, n, a, n, r.S.data(), u, k, vt, n, superb.data());
    if (info != 0) throw NumericalError("SVD failed to converge (info " + std::to_string(info) + ")");
  }
  for (Eigen::Index i = 0; i < r.S.size(); ++i)
    if (!std::isfinite(r.S(i))) throw NumericalError("SVD produced non-finite singular values");
  return r;
}

// number of singular values above cutoff * s_0 (at least 1)
inline std::size_t rank_above(const Eigen::VectorXd& S, double cutoff) {
  std::size_t keep = 0;
  const double smax = S.size() > 0 ? S(0) : 0.0;
  while (keep < static_cast<std::size_t>(S.size()) && S(Eigen::Index(keep)) > cutoff * smax) ++keep;
  return std::max<std::size_t>(keep, 1);
}

// Thin SVD with relative cutoff (keep s_i > cutoff * s_0) and rank cap.
inline TruncatedSvd svd_truncate(const RowCMatrix& M, double cutoff, std::size_t max_rank) {
  TruncatedSvd r = svd_thin(M);
  std::size_t keep = std::min<std::size_t>(rank_above(r.S, cutoff), static_cast<std::size_t>(r.S.size()));
  if (keep > max_rank) {
    keep = max_rank;
    r.ceiling_hit = true;
  }
  const double total = r.S.squaredNorm();
  const double kept = r.S.head(Eigen::Index(keep)).squaredNorm();
  r.discarded = total > 0 ? std::max(0.0, (total - kept) / total) : 0.0;
  r.U = r.U.leftCols(Eigen::Index(keep)).eval();
  r.S = r.S.head(Eigen::Index(keep)).eval();
  r.Vh = r.Vh.topRows(Eigen::Index(keep)).eval();
  return r;
}

// thin QR: M = Q R with Q (m x k), R (k x n), k = min(m, n)
inline std::pair<RowCMatrix, RowCMatrix> thin_qr(const RowCMatrix& M) {
  const auto m = M.rows(), n = M.cols(), k = std::min(m, n);
  Eigen::HouseholderQR<Eigen::MatrixXcd> qr(M);
  RowCMatrix Q = qr.householderQ() * Eigen::MatrixXcd::Identity(m, k);
  RowCMatrix R = qr.matrixQR().topRows(k).template triangularView<Eigen::Upper>();
  return {std::move(Q), std::move(R)};
}

}  // namespace nhflux

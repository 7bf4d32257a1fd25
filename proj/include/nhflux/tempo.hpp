#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "bath.hpp"
#include "errors.hpp"
#include "linalg.hpp"
#include "propagators.hpp"

namespace nhflux {

struct TruncationPolicy {
  double svd_relative_cutoff = 1e-6;
  std::size_t max_bond_dimension = 256;
  std::size_t memory_steps = 0;  // 0: use the eta table length
  // Pending legs store branch-coherent letters (s+ != s-) scaled by this factor.
  // Closing a leg only sees the s+ == s- letters, so a small weight keeps the
  // closure of a long pending train from drowning in rounding noise.
  double coherence_weight = 0.1;

  void validate() const {
    if (!(svd_relative_cutoff > 0.0 && svd_relative_cutoff < 1.0))
      throw InvalidParameter("svd cutoff must lie in (0, 1)");
    if (!(coherence_weight > 0.0 && coherence_weight <= 1.0))
      throw InvalidParameter("coherence weight must lie in (0, 1]");
    if (max_bond_dimension < 1) throw InvalidParameter("max bond dimension must be >= 1");
  }
  bool operator==(const TruncationPolicy&) const = default;
};

inline constexpr std::size_t kNoHorizon = std::numeric_limits<std::size_t>::max();

// Letters of one bath. A full letter is a pair (s+, s-) of coupling eigenvalues on
// the two branches. A leg that has not yet acted as the earlier end of any pair
// factor only depends on its letter through s+ - s-, so pending legs use a
// shorter alphabet: one merged letter for every s+ == s- pair, then the others.
struct BathAlphabet {
  std::vector<double> sp, sm;              // full letters
  std::vector<std::size_t> letter_of;      // Liouville index p*d + m -> full letter
  std::vector<std::size_t> pending_of;     // full letter -> pending letter
  std::vector<double> psp, psm;            // a representative pair per pending letter
  std::vector<double> cap;                 // closure weight per pending letter
  std::vector<double> gauge;               // storage scale per pending letter

  std::size_t size() const { return sp.size(); }
  std::size_t pending_size() const { return psp.size(); }
  double pending_ds(std::size_t y) const { return psp[y] - psm[y]; }
};

inline BathAlphabet bath_alphabet(const BathAttachment& b, std::size_t d, double coherence_weight = 1.0) {
  std::vector<double> vals{b.occupied_value};
  if (b.other_value != b.occupied_value) vals.push_back(b.other_value);
  const auto nv = vals.size();
  BathAlphabet A;
  A.psp.push_back(vals[0]);
  A.psm.push_back(vals[0]);
  A.cap.push_back(1.0);
  A.gauge.push_back(1.0);
  for (std::size_t i = 0; i < nv; ++i)
    for (std::size_t j = 0; j < nv; ++j) {
      A.sp.push_back(vals[i]);
      A.sm.push_back(vals[j]);
      if (i == j) {
        A.pending_of.push_back(0);
        continue;
      }
      A.pending_of.push_back(A.psp.size());
      A.psp.push_back(vals[i]);
      A.psm.push_back(vals[j]);
      A.cap.push_back(0.0);
      A.gauge.push_back(coherence_weight);
    }
  auto idx = [&](double v) -> std::size_t { return v == vals[0] ? 0 : 1; };
  A.letter_of.resize(d * d);
  for (std::size_t p = 0; p < d; ++p)
    for (std::size_t m = 0; m < d; ++m) A.letter_of[p * d + m] = idx(b.eigenvalue(p)) * nv + idx(b.eigenvalue(m));
  return A;
}

// Pending part of one bath's process tensor. Legs are half cells of width dt/2:
// cell 0 is [0, dt/2]; point p >= 1 owns cells 2p-1 (first half) and 2p (second).
struct PathTrain {
  std::size_t front = 0;           // point whose first half heads the train
  std::vector<std::size_t> cells;  // half-cell index of each pending leg
  std::vector<Tensor3> legs;       // (bond, letter, bond)
  bool operator==(const PathTrain&) const = default;
};

// Everything needed to continue a propagation: one pending train per distinct
// bath, and the joint tensor of the system Liouville index with every bath's
// boundary bond (row-major, system index first).
struct CompressedPathState {
  std::size_t step = 0;
  std::size_t d2 = 0;
  std::size_t horizon = kNoHorizon;
  TruncationPolicy policy;
  std::vector<PathTrain> trains;
  std::vector<std::size_t> joint_dims;
  std::vector<cd> joint;
  double log_scale = 0.0;  // the trains and the joint tensor are stored normalized

  std::size_t max_bond() const {
    std::size_t m = 1;
    for (const auto& t : trains)
      for (const auto& x : t.legs) m = std::max({m, x.l, x.r});
    return m;
  }
  bool operator==(const CompressedPathState&) const = default;
};

namespace detail {

inline constexpr char kCheckpointMagic[8] = {'N', 'H', 'F', 'L', 'U', 'X', 'C', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 2;

template <class T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <class T>
T get(std::istream& is) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw InvalidParameter("truncated checkpoint");
  return v;
}

inline void put_data(std::ostream& os, const std::vector<cd>& v) {
  os.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(cd)));
}
inline void get_data(std::istream& is, std::vector<cd>& v) {
  if (!is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(cd))))
    throw InvalidParameter("truncated checkpoint");
}

inline std::uint64_t checked_count(std::istream& is, std::uint64_t limit, const char* what) {
  const auto n = get<std::uint64_t>(is);
  if (n > limit) throw InvalidParameter(std::string("corrupt checkpoint (") + what + ")");
  return n;
}

}  // namespace detail

// Binary layout (native byte order, checked by a marker): magic, u32 version,
// u32 0x01020304, u64 step, u64 d2, u64 horizon, f64 cutoff, u64 max bond,
// u64 memory, f64 coherence weight, f64 log scale, u64 trains; per train u64 front, u64 legs and per leg u64 cell,
// u64 l, u64 s, u64 r, then l*s*r complex doubles; u64 joint rank, the dims,
// then the joint tensor.
inline void save_checkpoint(const CompressedPathState& st, std::ostream& os) {
  using detail::put;
  os.write(detail::kCheckpointMagic, 8);
  put<std::uint32_t>(os, detail::kCheckpointVersion);
  put<std::uint32_t>(os, 0x01020304u);
  put<std::uint64_t>(os, st.step);
  put<std::uint64_t>(os, st.d2);
  put<std::uint64_t>(os, st.horizon);
  put<double>(os, st.policy.svd_relative_cutoff);
  put<std::uint64_t>(os, st.policy.max_bond_dimension);
  put<std::uint64_t>(os, st.policy.memory_steps);
  put<double>(os, st.policy.coherence_weight);
  put<double>(os, st.log_scale);
  put<std::uint64_t>(os, st.trains.size());
  for (const auto& t : st.trains) {
    put<std::uint64_t>(os, t.front);
    put<std::uint64_t>(os, t.legs.size());
    for (std::size_t i = 0; i < t.legs.size(); ++i) {
      const auto& x = t.legs[i];
      put<std::uint64_t>(os, t.cells[i]);
      put<std::uint64_t>(os, x.l);
      put<std::uint64_t>(os, x.s);
      put<std::uint64_t>(os, x.r);
      detail::put_data(os, x.data);
    }
  }
  put<std::uint64_t>(os, st.joint_dims.size());
  for (auto d : st.joint_dims) put<std::uint64_t>(os, d);
  detail::put_data(os, st.joint);
  if (!os) throw NumericalError("failed writing checkpoint");
}

inline CompressedPathState load_checkpoint(std::istream& is) {
  using detail::get;
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, detail::kCheckpointMagic, 8) != 0)
    throw InvalidParameter("not a checkpoint file");
  const auto version = get<std::uint32_t>(is);
  if (version != detail::kCheckpointVersion)
    throw InvalidParameter("unsupported checkpoint version " + std::to_string(version));
  if (get<std::uint32_t>(is) != 0x01020304u) throw InvalidParameter("checkpoint byte order mismatch");
  constexpr std::uint64_t kBig = std::uint64_t(1) << 32;
  CompressedPathState st;
  st.step = get<std::uint64_t>(is);
  st.d2 = detail::checked_count(is, 1 << 20, "d2");
  st.horizon = get<std::uint64_t>(is);
  st.policy.svd_relative_cutoff = get<double>(is);
  st.policy.max_bond_dimension = get<std::uint64_t>(is);
  st.policy.memory_steps = get<std::uint64_t>(is);
  st.policy.coherence_weight = get<double>(is);
  st.log_scale = get<double>(is);
  const auto ntrains = detail::checked_count(is, 1 << 16, "train count");
  for (std::uint64_t k = 0; k < ntrains; ++k) {
    PathTrain t;
    t.front = get<std::uint64_t>(is);
    const auto legs = detail::checked_count(is, 1 << 24, "leg count");
    for (std::uint64_t i = 0; i < legs; ++i) {
      t.cells.push_back(get<std::uint64_t>(is));
      const auto l = get<std::uint64_t>(is), s = get<std::uint64_t>(is), r = get<std::uint64_t>(is);
      if (s == 0 || s > 64 || l > kBig || r > kBig || l * s * r > kBig)
        throw InvalidParameter("corrupt checkpoint (tensor shape)");
      Tensor3 x(l, s, r);
      detail::get_data(is, x.data);
      t.legs.push_back(std::move(x));
    }
    st.trains.push_back(std::move(t));
  }
  const auto rank = detail::checked_count(is, 1 << 16, "joint rank");
  std::uint64_t size = 1;
  for (std::uint64_t i = 0; i < rank; ++i) {
    const auto d = get<std::uint64_t>(is);
    if (d == 0 || d > kBig || size * d > kBig) throw InvalidParameter("corrupt checkpoint (joint shape)");
    size *= d;
    st.joint_dims.push_back(d);
  }
  st.joint.resize(rank ? size : 0);
  detail::get_data(is, st.joint);
  return st;
}

inline void save_checkpoint(const CompressedPathState& st, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw InvalidParameter("cannot write checkpoint " + path);
  save_checkpoint(st, os);
}

inline CompressedPathState load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InvalidParameter("cannot open checkpoint " + path);
  return load_checkpoint(is);
}

struct TempoDiagnostics {
  std::vector<std::size_t> max_bond;     // per step
  std::vector<double> discarded_weight;  // per step, summed over compressions
  std::vector<std::string> warnings;
  double total_discarded() const {
    double s = 0;
    for (double v : discarded_weight) s += v;
    return s;
  }
};

using WarningSink = std::function<void(const std::string&)>;

namespace detail {

struct CompressionStats {
  double discarded = 0.0;
  bool ceiling_hit = false;
  double ceiling_discarded = 0.0;
};

// Truncated SVD of M (rows x cols) that keeps the closure functional exact: with
// `capvec` the closure of everything right of this bond, M * capvec is carried by
// the kept subspace plus at most one extra direction.
struct CapSplit {
  RowCMatrix left;      // rows x k
  RowCMatrix right;     // k x cols, orthonormal rows
  Eigen::VectorXcd cap; // right * capvec
};

inline CapSplit cap_preserving_split(const RowCMatrix& M, const Eigen::VectorXcd& capvec, const TruncationPolicy& pol,
                                     CompressionStats& stats) {
  TruncatedSvd sv = svd_thin(M);
  const auto full = static_cast<std::size_t>(sv.S.size());
  const std::size_t want = std::min(rank_above(sv.S, pol.svd_relative_cutoff), full);
  const Eigen::VectorXcd r = sv.Vh * capvec;
  auto tail_norm = [&](std::size_t k) { return k < full ? r.tail(Eigen::Index(full - k)).norm() : 0.0; };
  const double tol = 1e-13 * r.norm();

  std::size_t keep = std::min(want, pol.max_bond_dimension);
  if (keep == pol.max_bond_dimension && pol.max_bond_dimension >= 2 && tail_norm(keep) > tol) --keep;
  const double nd = tail_norm(keep);
  const bool augment = nd > tol && keep + 1 <= pol.max_bond_dimension;

  const double total = sv.S.squaredNorm();
  const double dropped = total > 0 ? std::max(0.0, (total - sv.S.head(Eigen::Index(keep)).squaredNorm()) / total) : 0.0;
  stats.discarded += dropped;
  if (want > keep + (augment ? 1 : 0)) {
    stats.ceiling_hit = true;
    stats.ceiling_discarded = std::max(stats.ceiling_discarded, dropped);
  }

  const auto k = Eigen::Index(keep), kk = Eigen::Index(keep + (augment ? 1 : 0));
  CapSplit out;
  out.left.resize(M.rows(), kk);
  out.right.resize(kk, M.cols());
  out.cap.resize(kk);
  out.left.leftCols(k) = sv.U.leftCols(k) * sv.S.head(k).asDiagonal();
  out.right.topRows(k) = sv.Vh.topRows(k);
  out.cap.head(k) = r.head(k);
  if (augment) {
    const auto tail = Eigen::Index(full) - k;
    const Eigen::VectorXcd rt = r.tail(tail);
    out.right.row(k) = (rt.conjugate().transpose() * sv.Vh.bottomRows(tail)) / nd;
    out.left.col(k) = (sv.U.rightCols(tail) * (sv.S.tail(tail).cast<cd>().cwiseProduct(rt))) / nd;
    out.cap(k) = nd;
  }
  return out;
}

// QR of leg i, R pushed into leg i+1
inline void shift_right(std::vector<Tensor3>& legs, std::size_t i) {
  auto [Q, R] = thin_qr(RowCMatrix(legs[i].left_matrix()));
  Tensor3 q(legs[i].l, legs[i].s, static_cast<std::size_t>(Q.cols()));
  q.left_matrix() = Q;
  legs[i] = std::move(q);
  Tensor3& nx = legs[i + 1];
  Tensor3 m(static_cast<std::size_t>(R.rows()), nx.s, nx.r);
  m.right_matrix().noalias() = R * nx.right_matrix();
  nx = std::move(m);
}

// Builds one bath's process tensor a point at a time. Row n multiplies in every
// pair factor between point n (earlier) and the pending half cells of later
// points within the memory; afterwards the legs of point n are final.
class TrainBuilder {
 public:
  TrainBuilder(BathAlphabet alphabet, std::vector<cd> half, std::size_t K, std::size_t horizon, TruncationPolicy pol)
      : a_(std::move(alphabet)), half_(std::move(half)), K_(K), H_(horizon), pol_(pol) {
    if (half_.size() < 2 * K_ + 2) throw InvalidParameter("eta table shorter than the memory length");
  }

  const BathAlphabet& alphabet() const { return a_; }

  void init(PathTrain& t) const {
    t = PathTrain{};
    append(t, last_point(0));
    for (std::size_t i = 0; i + 1 < t.legs.size(); ++i) shift_right(t.legs, i);
  }

  // one vector per pending letter over the train's left bond: the head leg with
  // that letter, everything after it closed. The vectors are exp(log) times the result.
  std::vector<Eigen::VectorXcd> closure(const PathTrain& t, double& log) const {
    Eigen::VectorXcd R = Eigen::VectorXcd::Ones(1);
    for (std::size_t i = t.legs.size(); i-- > 1;) {
      R = closed(t.legs[i], R);
      const double m = R.cwiseAbs().maxCoeff();
      if (m > 0.0 && std::isfinite(m)) {
        R /= m;
        log += std::log(m);
      }
    }
    const Tensor3& A = t.legs.front();
    std::vector<Eigen::VectorXcd> out(A.s);
    for (std::size_t y = 0; y < A.s; ++y) out[y] = (slice(A, y) * R) / a_.gauge[y];
    return out;
  }

  // scales the train to unit norm, returns the log of the factor removed
  static double normalize(PathTrain& t) {
    auto& d = t.legs.back().data;
    double n2 = 0.0;
    for (const auto& x : d) n2 += std::norm(x);
    const double n = std::sqrt(n2);
    if (!(n > 0.0) || !std::isfinite(n)) throw NumericalError("process tensor norm is not finite");
    for (auto& x : d) x /= n;
    return std::log(n);
  }

  // apply row `front`; returns the finalized legs of that point
  std::vector<Tensor3> advance(PathTrain& t, CompressionStats& stats) const {
    const std::size_t n = t.front;
    if (n >= H_) throw InvalidParameter("process tensor advanced past its horizon");
    const std::size_t old = t.legs.size();
    append(t, last_point(n));
    for (std::size_t i = old ? old - 1 : 0; i + 1 < t.legs.size(); ++i) shift_right(t.legs, i);

    const std::size_t L = t.legs.size();
    const std::size_t nx = a_.size();
    const std::size_t s_cell = 2 * n;  // second half of point n (absent for n = 0)

    // zip the row in from the right
    RowCMatrix X = RowCMatrix::Ones(Eigen::Index(nx), 1);  // rows (r, x)
    Eigen::VectorXcd R = Eigen::VectorXcd::Ones(1);
    for (std::size_t i = L; i-- > 1;) {
      const Tensor3& A = t.legs[i];
      const auto k = static_cast<std::size_t>(X.cols());
      const bool pass = n > 0 && t.cells[i] == s_cell;
      const cd eta = pass ? cd(0.0) : coefficient(t.cells[i], n);
      RowCMatrix B(Eigen::Index(A.l * nx), Eigen::Index(A.s * k));
      for (std::size_t x = 0; x < nx; ++x) {
        const RowCMatrix Y = A.left_matrix() * rows_of(X, x, nx, A.r);
        for (std::size_t l = 0; l < A.l; ++l)
          for (std::size_t y = 0; y < A.s; ++y) {
            const cd f = pass ? cd(1.0) : weight(eta, y, x);
            B.block(Eigen::Index(l * nx + x), Eigen::Index(y * k), 1, Eigen::Index(k)) =
                f * Y.row(Eigen::Index(l * A.s + y));
          }
      }
      Eigen::VectorXcd cv(Eigen::Index(A.s * k));
      for (std::size_t y = 0; y < A.s; ++y) cv.segment(Eigen::Index(y * k), Eigen::Index(k)) = a_.cap[y] * R;
      CapSplit sp = cap_preserving_split(B, cv, pol_, stats);
      Tensor3 v(static_cast<std::size_t>(sp.right.rows()), A.s, k);
      v.right_matrix() = sp.right;
      t.legs[i] = std::move(v);
      X = std::move(sp.left);
      R = std::move(sp.cap);
    }
    {
      // head leg copies its own letter into the row bond; it now needs the full alphabet
      const Tensor3& A = t.legs[0];
      const auto k = static_cast<std::size_t>(X.cols());
      Tensor3 h(A.l, nx, k);
      for (std::size_t y = 0; y < nx; ++y) {
        const RowCMatrix Xy = rows_of(X, y, nx, A.r);
        const std::size_t yp = a_.pending_of[y];
        for (std::size_t l = 0; l < A.l; ++l)
          for (std::size_t r = 0; r < A.r; ++r) {
            const cd c = A(l, yp, r);
            if (c == cd(0.0)) continue;
            for (std::size_t q = 0; q < k; ++q) h(l, y, q) += c * Xy(Eigen::Index(r), Eigen::Index(q));
          }
      }
      t.legs[0] = std::move(h);
    }

    const std::size_t nfinal = n == 0 ? 1 : 2;
    for (std::size_t i = 0; i < nfinal && i + 1 < t.legs.size(); ++i) shift_right(t.legs, i);
    std::vector<Tensor3> out(std::make_move_iterator(t.legs.begin()),
                             std::make_move_iterator(t.legs.begin() + Eigen::Index(nfinal)));
    t.legs.erase(t.legs.begin(), t.legs.begin() + Eigen::Index(nfinal));
    t.cells.erase(t.cells.begin(), t.cells.begin() + Eigen::Index(nfinal));
    for (std::size_t i = 0; i + 1 < t.legs.size(); ++i) shift_right(t.legs, i);
    t.front = n + 1;
    return out;
  }

 private:
  static std::size_t point_of(std::size_t cell) { return (cell + 1) / 2; }

  std::size_t last_point(std::size_t n) const {
    const std::size_t p = K_ > kNoHorizon - n ? kNoHorizon : n + K_;
    return std::min(p, H_);
  }

  // pair coefficient between a later half cell and the whole cell of point n
  cd coefficient(std::size_t cell, std::size_t n) const {
    if (n == 0) return half_[cell];
    return half_[cell - (2 * n - 1)] + half_[cell - 2 * n];
  }

  // pair factor; `later` is a pending letter, `earlier` a full one
  cd weight(cd eta, std::size_t later, std::size_t earlier) const {
    return std::exp(-a_.pending_ds(later) * (eta * a_.sp[earlier] - std::conj(eta) * a_.sm[earlier]));
  }

  // fresh legs (self factors only) for every half cell of points up to p
  void append(PathTrain& t, std::size_t p) const {
    std::size_t c = t.cells.empty() ? (t.front == 0 ? 0 : 2 * t.front - 1) : t.cells.back() + 1;
    const std::size_t ny = a_.pending_size();
    for (; point_of(c) <= p; ++c) {
      const bool second = c >= 2 && c % 2 == 0;
      if (second && point_of(c) >= H_) break;  // never needed
      const cd eta = second ? half_[0] + half_[1] : half_[0];
      Tensor3 x(t.legs.empty() ? 1 : t.legs.back().r, ny, 1);
      if (!t.legs.empty() && t.legs.back().r != 1) throw NumericalError("train does not end in a unit bond");
      for (std::size_t y = 0; y < ny; ++y)
        x(0, y, 0) = a_.gauge[y] * std::exp(-a_.pending_ds(y) * (eta * a_.psp[y] - std::conj(eta) * a_.psm[y]));
      t.legs.push_back(std::move(x));
      t.cells.push_back(c);
    }
  }

  static Eigen::Map<const RowCMatrix, 0, Eigen::OuterStride<>> slice(const Tensor3& A, std::size_t y) {
    return {A.data.data() + y * A.r, Eigen::Index(A.l), Eigen::Index(A.r), Eigen::OuterStride<>(A.s * A.r)};
  }

  Eigen::VectorXcd closed(const Tensor3& A, const Eigen::VectorXcd& R) const {
    Eigen::VectorXcd v = Eigen::VectorXcd::Zero(Eigen::Index(A.l));
    for (std::size_t y = 0; y < A.s; ++y)
      if (a_.cap[y] != 0.0) v.noalias() += a_.cap[y] * (slice(A, y) * R);
    return v;
  }

  static RowCMatrix rows_of(const RowCMatrix& X, std::size_t x, std::size_t nx, std::size_t r) {
    RowCMatrix B(Eigen::Index(r), X.cols());
    for (std::size_t i = 0; i < r; ++i) B.row(Eigen::Index(i)) = X.row(Eigen::Index(i * nx + x));
    return B;
  }

  BathAlphabet a_;
  std::vector<cd> half_;
  std::size_t K_, H_;
  TruncationPolicy pol_;
};

}  // namespace detail

// Process-tensor evaluation of the discretized path integral. Each distinct bath
// keeps a compressed train of pending half-cell legs; finalized legs are folded
// straight into a joint tensor over (system Liouville index, one bond per bath).
class TempoPropagator {
 public:
  TempoPropagator(const SystemHamiltonian& sys, const std::vector<BathAttachment>& baths, const CMatrix& rho0,
                  double dt, const std::vector<EtaTable>& eta, TruncationPolicy policy, const UnitSystem& u = kUnits,
                  WarningSink sink = {}, std::size_t horizon = kNoHorizon)
      : TempoPropagator(sys, baths, dt, eta, policy, horizon, u, std::move(sink)) {
    const auto d = sys.n_states();
    if (static_cast<std::size_t>(rho0.rows()) != d || static_cast<std::size_t>(rho0.cols()) != d)
      throw InvalidParameter("rho0 dimension mismatch");
    st_.step = 0;
    st_.d2 = d2_;
    st_.horizon = horizon;
    st_.policy = policy_;
    st_.trains.resize(builders_.size());
    for (std::size_t g = 0; g < builders_.size(); ++g) {
      builders_[g].init(st_.trains[g]);
      st_.log_scale += uses_[g] * detail::TrainBuilder::normalize(st_.trains[g]);
    }
    st_.joint_dims.assign(1 + baths_.size(), 1);
    st_.joint_dims[0] = d2_;
    const auto r0 = rho_to_vec(rho0);
    st_.joint.assign(r0.data(), r0.data() + r0.size());
    rho_ = rho0;
    if (st_.horizon > 0) finalize_point();
  }

  // resume from a checkpoint
  TempoPropagator(const SystemHamiltonian& sys, const std::vector<BathAttachment>& baths, double dt,
                  const std::vector<EtaTable>& eta, CompressedPathState state, const UnitSystem& u = kUnits,
                  WarningSink sink = {})
      : TempoPropagator(sys, baths, dt, eta, state.policy, state.horizon, u, std::move(sink)) {
    if (state.d2 != d2_ || state.trains.size() != builders_.size() ||
        state.joint_dims.size() != 1 + baths_.size() || state.joint_dims[0] != d2_)
      throw InvalidParameter("checkpoint does not match the problem");
    std::size_t size = 1;
    for (auto x : state.joint_dims) size *= x;
    if (size != state.joint.size()) throw InvalidParameter("checkpoint joint tensor has the wrong size");
    for (const auto& t : state.trains)
      if (t.legs.size() != t.cells.size() || t.legs.empty() || t.front != state.step + 1)
        throw InvalidParameter("checkpoint train is inconsistent");
    st_ = std::move(state);
    rho_ = CMatrix::Constant(sys.n_states(), sys.n_states(), cd(std::numeric_limits<double>::quiet_NaN()));
  }

  std::size_t step_index() const { return st_.step; }
  double dt() const { return bp_.dt; }
  const CompressedPathState& state() const { return st_; }
  const TempoDiagnostics& diagnostics() const { return diag_; }
  const CMatrix& current_rho() const { return rho_; }

  // advance to step n+1, return rho(n+1)
  const CMatrix& step() {
    const std::size_t n = st_.step + 1;
    if (n > st_.horizon) throw InvalidParameter("propagation past the configured horizon");
    stats_ = {};
    apply_propagator();
    rho_ = output();
    st_.step = n;
    if (n < st_.horizon) finalize_point();
    diag_.max_bond.push_back(st_.max_bond());
    diag_.discarded_weight.push_back(stats_.discarded);
    if (stats_.ceiling_hit) {
      std::ostringstream os;
      os << "step " << n << ": bond ceiling " << policy_.max_bond_dimension
         << " reached with cutoff unsatisfied; largest discarded weight " << stats_.ceiling_discarded;
      if (diag_.warnings.size() < 1000) diag_.warnings.push_back(os.str());
      if (sink_) sink_(os.str());
    }
    if (!rho_.allFinite()) {
      std::ostringstream os;
      os << "non-finite density matrix at step " << n << " (t = " << bp_.dt * static_cast<double>(n)
         << " ps), max bond " << st_.max_bond() << ", discarded weight this step " << stats_.discarded;
      throw NumericalError(os.str());
    }
    return rho_;
  }

 private:
  TempoPropagator(const SystemHamiltonian& sys, const std::vector<BathAttachment>& baths, double dt,
                  const std::vector<EtaTable>& eta, TruncationPolicy policy, std::size_t horizon,
                  const UnitSystem& u, WarningSink sink)
      : bp_(bare_propagators(sys, dt, u)), d2_(sys.n_states() * sys.n_states()), policy_(policy),
        sink_(std::move(sink)), baths_(baths) {
    policy_.validate();
    validate_attachments(sys, baths);
    if (!baths.empty() && eta.size() != 1 && eta.size() != baths.size())
      throw InvalidParameter("need one eta table, or one per bath");
    for (const auto& t : eta)
      if (std::abs(t.dt - dt) > 1e-12 * dt) throw InvalidParameter("eta table dt does not match propagation dt");
    G_ = bp_.liouville();
    std::map<std::tuple<std::size_t, double, double>, std::size_t> groups;
    std::size_t K_used = 0;
    for (std::size_t b = 0; b < baths.size(); ++b) {
      const std::size_t ti = eta.size() == 1 ? 0 : b;
      const auto key = std::make_tuple(ti, baths[b].occupied_value, baths[b].other_value);
      auto it = groups.find(key);
      if (it == groups.end()) {
        const EtaTable& tab = eta[ti];
        const std::size_t K = policy_.memory_steps ? policy_.memory_steps : tab.K;
        if (K > tab.K) throw InvalidParameter("memory length exceeds the eta table");
        K_used = std::max(K_used, K);
        it = groups.emplace(key, builders_.size()).first;
        builders_.emplace_back(bath_alphabet(baths[b], sys.n_states(), policy_.coherence_weight), tab.half, K,
                               horizon, policy_);
        alphabets_.push_back(builders_.back().alphabet());
      }
      group_.push_back(it->second);
      if (uses_.size() <= it->second) uses_.resize(it->second + 1, 0.0);
      uses_[it->second] += 1.0;
      letters_.push_back(bath_alphabet(baths[b], sys.n_states()).letter_of);
    }
    policy_.memory_steps = K_used;
  }

  // joint <- G joint over the system index
  void apply_propagator() {
    const auto rest = Eigen::Index(st_.joint.size() / d2_);
    Eigen::Map<RowCMatrix> J(st_.joint.data(), Eigen::Index(d2_), rest);
    RowCMatrix out = G_ * J;
    std::copy(out.data(), out.data() + out.size(), st_.joint.begin());
  }

  CMatrix output() const {
    std::vector<std::vector<Eigen::VectorXcd>> cl(builders_.size());
    double log = st_.log_scale;
    for (std::size_t g = 0; g < builders_.size(); ++g) {
      double lg = 0.0;
      cl[g] = builders_[g].closure(st_.trains[g], lg);
      log += uses_[g] * lg;
    }
    const auto rest = st_.joint.size() / d2_;
    Eigen::VectorXcd r(static_cast<Eigen::Index>(d2_));
    std::vector<cd> buf;
    for (std::size_t a = 0; a < d2_; ++a) {
      buf.assign(st_.joint.begin() + Eigen::Index(a * rest), st_.joint.begin() + Eigen::Index((a + 1) * rest));
      std::size_t len = rest;
      for (std::size_t b = baths_.size(); b-- > 0;) {
        const auto chi = st_.joint_dims[1 + b];
        const auto& al = alphabets_[group_[b]];
        const auto& v = cl[group_[b]][al.pending_of[letters_[b][a]]];
        Eigen::Map<RowCMatrix> M(buf.data(), Eigen::Index(len / chi), Eigen::Index(chi));
        Eigen::VectorXcd w = M * v;
        len /= chi;
        std::copy(w.data(), w.data() + w.size(), buf.begin());
      }
      r(Eigen::Index(a)) = buf[0];
    }
    r *= std::exp(log);
    return vec_to_rho(r, static_cast<std::size_t>(std::lround(std::sqrt(double(d2_)))));
  }

  // apply the row of the current point in every train and fold its final legs in
  void finalize_point() {
    for (std::size_t g = 0; g < builders_.size(); ++g) {
      auto legs = builders_[g].advance(st_.trains[g], stats_);
      for (const auto& Q : legs)
        for (std::size_t b = 0; b < baths_.size(); ++b)
          if (group_[b] == g) contract(b, Q);
      st_.log_scale += uses_[g] * detail::TrainBuilder::normalize(st_.trains[g]);
    }
    double m = 0.0;
    for (const auto& x : st_.joint) m = std::max(m, std::abs(x));
    if (m > 0.0 && std::isfinite(m)) {
      for (auto& x : st_.joint) x /= m;
      st_.log_scale += std::log(m);
    }
  }

  void contract(std::size_t b, const Tensor3& Q) {
    auto& dims = st_.joint_dims;
    const std::size_t l = dims[1 + b], r = Q.r;
    if (Q.l != l) throw NumericalError("joint tensor and train bonds disagree");
    std::size_t pre = 1, post = 1;
    for (std::size_t c = 0; c < b; ++c) pre *= dims[1 + c];
    for (std::size_t c = b + 1; c < baths_.size(); ++c) post *= dims[1 + c];
    const std::size_t in_blk = pre * l * post, out_blk = pre * r * post;
    std::vector<cd> out(d2_ * out_blk);
    for (std::size_t a = 0; a < d2_; ++a) {
      const auto& al = alphabets_[group_[b]];
      const auto yf = letters_[b][a];
      const auto y = Q.s == al.size() ? yf : al.pending_of[yf];
      const double g = 1.0 / al.gauge[al.pending_of[yf]];
      Eigen::Map<const RowCMatrix, 0, Eigen::OuterStride<>> S(Q.data.data() + y * Q.r, Eigen::Index(l),
                                                               Eigen::Index(r), Eigen::OuterStride<>(Q.s * Q.r));
      const cd* src = st_.joint.data() + a * in_blk;
      cd* dst = out.data() + a * out_blk;
      if (post == 1) {
        Eigen::Map<const RowCMatrix> In(src, Eigen::Index(pre), Eigen::Index(l));
        Eigen::Map<RowCMatrix> Out(dst, Eigen::Index(pre), Eigen::Index(r));
        Out.noalias() = g * (In * S);
      } else {
        for (std::size_t p = 0; p < pre; ++p) {
          Eigen::Map<const RowCMatrix> In(src + p * l * post, Eigen::Index(l), Eigen::Index(post));
          Eigen::Map<RowCMatrix> Out(dst + p * r * post, Eigen::Index(r), Eigen::Index(post));
          Out.noalias() = g * (S.transpose() * In);
        }
      }
    }
    st_.joint = std::move(out);
    dims[1 + b] = r;
  }

  BarePropagators bp_;
  std::size_t d2_;
  TruncationPolicy policy_;
  WarningSink sink_;
  std::vector<BathAttachment> baths_;
  CMatrix G_;
  std::vector<detail::TrainBuilder> builders_;
  std::vector<std::size_t> group_;
  std::vector<double> uses_;  // baths per train
  std::vector<BathAlphabet> alphabets_;
  std::vector<std::vector<std::size_t>> letters_;
  CompressedPathState st_;
  TempoDiagnostics diag_;
  detail::CompressionStats stats_;
  CMatrix rho_;
};

inline Trajectory propagate_tempo(const SystemHamiltonian& sys, const std::vector<BathAttachment>& baths,
                                  const CMatrix& rho0, double dt, std::size_t n_steps,
                                  const std::vector<EtaTable>& eta, const TruncationPolicy& policy,
                                  const UnitSystem& u = kUnits, WarningSink sink = {},
                                  TempoDiagnostics* diagnostics = nullptr) {
  TempoPropagator prop(sys, baths, rho0, dt, eta, policy, u, std::move(sink), n_steps);
  Trajectory tr;
  tr.metadata.engine = "tempo";
  tr.metadata.dt = dt;
  tr.metadata.memory_steps = prop.state().policy.memory_steps;
  tr.metadata.svd_cutoff = policy.svd_relative_cutoff;
  tr.metadata.max_bond = policy.max_bond_dimension;
  tr.times.push_back(0.0);
  tr.rho.push_back(rho0);
  for (std::size_t n = 1; n <= n_steps; ++n) {
    tr.times.push_back(dt * static_cast<double>(n));
    tr.rho.push_back(prop.step());
  }
  const auto& dg = prop.diagnostics();
  for (auto m : dg.max_bond) tr.metadata.max_bond_reached = std::max(tr.metadata.max_bond_reached, m);
  tr.metadata.truncation_error = dg.total_discarded();
  if (diagnostics) *diagnostics = dg;
  return tr;
}

inline Trajectory propagate_tempo(const SystemHamiltonian& sys, const std::vector<BathAttachment>& baths,
                                  const CMatrix& rho0, double dt, std::size_t n_steps, const EtaTable& eta,
                                  const TruncationPolicy& policy, const UnitSystem& u = kUnits,
                                  WarningSink sink = {}, TempoDiagnostics* diagnostics = nullptr) {
  return propagate_tempo(sys, baths, rho0, dt, n_steps,
                         baths.empty() ? std::vector<EtaTable>{} : std::vector<EtaTable>{eta}, policy, u,
                         std::move(sink), diagnostics);
}

}  // namespace nhflux

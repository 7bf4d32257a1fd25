#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <vector>

#include "bath.hpp"
#include "errors.hpp"
#include "model.hpp"

namespace nhflux {

// Influence weights on Liouville indices alpha = p * d + m for a set of baths.
// For bath b the pair (later a, earlier sigma) with coefficient eta contributes
//   exp(-ds_b(a) [eta s+_b(sigma) - conj(eta) s-_b(sigma)]),  ds = s+ - s-.
class InfluenceFactors {
 public:
  using Point = EtaTable::Point;

  InfluenceFactors(const SystemHamiltonian& sys, const std::vector<BathAttachment>& baths,
                   std::vector<EtaTable> tables, std::size_t memory = 0)
      : d_(sys.n_states()), d2_(d_ * d_), tables_(std::move(tables)) {
    validate_attachments(sys, baths);
    if (tables_.size() == 1 && baths.size() > 1) tables_.resize(baths.size(), tables_.front());
    if (tables_.size() != baths.size()) throw InvalidParameter("need one eta table per bath (or a single shared one)");
    for (const auto& t : tables_) {
      if (!tables_.empty() && (t.dt != tables_.front().dt || t.K != tables_.front().K))
        throw InvalidParameter("eta tables must share dt and K");
    }
    K_ = tables_.empty() ? (memory ? memory : 1) : tables_.front().K;
    if (memory) {
      if (!tables_.empty() && memory > K_) throw InvalidParameter("memory length exceeds eta table length");
      K_ = memory;
    }
    for (const auto& b : baths) {
      Bath e;
      e.sp.resize(d2_);
      e.sm.resize(d2_);
      e.cls.resize(d2_);
      for (std::size_t p = 0; p < d_; ++p)
        for (std::size_t m = 0; m < d_; ++m) {
          const auto a = p * d_ + m;
          e.sp[a] = b.eigenvalue(p);
          e.sm[a] = b.eigenvalue(m);
          const double ds = e.sp[a] - e.sm[a];
          auto it = std::find(e.classes.begin(), e.classes.end(), ds);
          if (it == e.classes.end()) {
            e.classes.push_back(ds);
            it = e.classes.end() - 1;
          }
          e.cls[a] = static_cast<std::size_t>(it - e.classes.begin());
        }
      baths_.push_back(std::move(e));
    }
  }

  std::size_t d() const { return d_; }
  std::size_t d2() const { return d2_; }
  std::size_t n_baths() const { return baths_.size(); }
  std::size_t memory() const { return K_; }
  const EtaTable& table(std::size_t b) const { return tables_.at(b); }

  std::size_t n_classes(std::size_t b) const { return baths_[b].classes.size(); }
  double class_value(std::size_t b, std::size_t c) const { return baths_[b].classes[c]; }
  std::size_t class_of(std::size_t b, std::size_t a) const { return baths_[b].cls[a]; }
  double ds(std::size_t b, std::size_t a) const { return baths_[b].sp[a] - baths_[b].sm[a]; }

  // exp(-c [eta s+(sigma) - conj(eta) s-(sigma)]) for a later index with ds = c
  cd class_weight(std::size_t b, double c, cd eta, std::size_t sigma) const {
    const auto& e = baths_[b];
    return std::exp(-c * (eta * e.sp[sigma] - std::conj(eta) * e.sm[sigma]));
  }

  cd eta(std::size_t b, Point later, Point earlier, std::size_t delta) const {
    if (delta > K_) return cd(0.0);
    return tables_[b].coefficient(later, earlier, delta);
  }

  // product over baths, W(a, sigma); delta >= 1
  CMatrix pair_matrix(Point later, Point earlier, std::size_t delta) const {
    CMatrix W = CMatrix::Ones(d2_, d2_);
    for (std::size_t b = 0; b < baths_.size(); ++b) {
      const cd e = eta(b, later, earlier, delta);
      if (e == cd(0.0)) continue;
      for (std::size_t a = 0; a < d2_; ++a)
        for (std::size_t s = 0; s < d2_; ++s) W(a, s) *= class_weight(b, ds(b, a), e, s);
    }
    return W;
  }

  // diagonal self factor of one point, product over baths
  Eigen::VectorXcd self_vector(Point p) const {
    Eigen::VectorXcd v = Eigen::VectorXcd::Ones(d2_);
    for (std::size_t b = 0; b < baths_.size(); ++b) {
      const cd e = tables_[b].self(p);
      for (std::size_t a = 0; a < d2_; ++a) v(a) *= class_weight(b, ds(b, a), e, a);
    }
    return v;
  }

  // single-bath self factor
  cd self_weight(std::size_t b, Point p, std::size_t a) const {
    return class_weight(b, ds(b, a), tables_[b].self(p), a);
  }

 private:
  struct Bath {
    std::vector<double> sp, sm, classes;
    std::vector<std::size_t> cls;
  };
  std::size_t d_, d2_, K_ = 1;
  std::vector<EtaTable> tables_;
  std::vector<Bath> baths_;
};

}  // namespace nhflux

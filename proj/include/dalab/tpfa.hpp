#pragma once

#include "dalab/core.hpp"
#include "dalab/field.hpp"

#include <Eigen/OrderingMethods>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <utility>
#include <vector>

namespace dalab {

using SparseMatrix = Eigen::SparseMatrix<double>;
using Triplet = Eigen::Triplet<double>;

/// Interior face between two neighbouring cells with its geometric
/// two-point transmissibility thickness * (face length / center distance) *
/// harmonic mean of e^u.
struct Face {
  Eigen::Index left = 0;
  Eigen::Index right = 0;
  double transmissibility = 0.0;
};

inline double harmonic_mean(double a, double b) { return 2.0 * a * b / (a + b); }

inline std::vector<Face> tpfa_faces(const Field& log_perm, double thickness) {
  const Grid2D& g = log_perm.grid();
  const Vector perm = log_perm.values().array().exp();
  std::vector<Face> faces;
  faces.reserve(std::size_t(2 * g.cell_count()));
  const double gx = thickness * g.dy() / g.dx();
  const double gy = thickness * g.dx() / g.dy();
  for (int j = 0; j < g.ny; ++j)
    for (int i = 0; i < g.nx; ++i) {
      const auto k = g.index(i, j);
      if (i + 1 < g.nx) {
        const auto r = g.index(i + 1, j);
        faces.push_back({k, r, gx * harmonic_mean(perm[k], perm[r])});
      }
      if (j + 1 < g.ny) {
        const auto r = g.index(i, j + 1);
        faces.push_back({k, r, gy * harmonic_mean(perm[k], perm[r])});
      }
    }
  return faces;
}

/// Adds sum_f w_f T_f (p_l - p_r) for every face to the triplet list.
template <class FaceWeight>
void add_flux_operator(std::vector<Triplet>& trip, const std::vector<Face>& faces, FaceWeight&& weight) {
  for (const Face& f : faces) {
    const double t = f.transmissibility * weight(f);
    trip.emplace_back(f.left, f.left, t);
    trip.emplace_back(f.right, f.right, t);
    trip.emplace_back(f.left, f.right, -t);
    trip.emplace_back(f.right, f.left, -t);
  }
}

/// Fill-reducing (AMD) ordering of the five-point stencil on a grid;
/// order[k] is the position of cell k. Computed once per grid shape.
inline std::shared_ptr<const std::vector<int>> stencil_ordering(const Grid2D& grid) {
  static std::mutex mutex;
  static std::map<std::pair<int, int>, std::shared_ptr<const std::vector<int>>> cache;
  std::lock_guard<std::mutex> lock(mutex);
  auto& slot = cache[{grid.nx, grid.ny}];
  if (slot) return slot;

  std::vector<Triplet> trip;
  for (int j = 0; j < grid.ny; ++j)
    for (int i = 0; i < grid.nx; ++i) {
      const auto k = grid.index(i, j);
      trip.emplace_back(k, k, 4.0);
      if (i + 1 < grid.nx) {
        trip.emplace_back(k, grid.index(i + 1, j), -1.0);
        trip.emplace_back(grid.index(i + 1, j), k, -1.0);
      }
      if (j + 1 < grid.ny) {
        trip.emplace_back(k, grid.index(i, j + 1), -1.0);
        trip.emplace_back(grid.index(i, j + 1), k, -1.0);
      }
    }
  SparseMatrix a(grid.cell_count(), grid.cell_count());
  a.setFromTriplets(trip.begin(), trip.end());
  Eigen::PermutationMatrix<Eigen::Dynamic, Eigen::Dynamic, int> perm;
  Eigen::AMDOrdering<int> amd;
  amd(a, perm);
  // AMD returns P with A(P, P) factored; invert to get the position map
  auto order = std::make_shared<std::vector<int>>(std::size_t(grid.cell_count()));
  for (int k = 0; k < perm.size(); ++k) (*order)[std::size_t(perm.indices()[k])] = k;
  slot = std::move(order);
  return slot;
}

/// Sparse LDL^T of a symmetric matrix given in cell numbering, factored in a
/// precomputed stencil ordering. Analyzed solvers are recycled through a
/// per-thread pool, so a matrix with the same sparsity pattern as the last one
/// seen by that solver skips the symbolic phase.
class OrderedLdlt {
  using Solver = Eigen::SimplicialLDLT<SparseMatrix, Eigen::Lower, Eigen::NaturalOrdering<int>>;

  struct Slot {
    Solver solver;
    std::vector<SparseMatrix::StorageIndex> outer, inner;  // analyzed pattern
  };

  static std::vector<std::unique_ptr<Slot>>& pool() {
    thread_local std::vector<std::unique_ptr<Slot>> p;
    return p;
  }

public:
  explicit OrderedLdlt(std::shared_ptr<const std::vector<int>> order) : order_(std::move(order)) {
    auto& p = pool();
    if (p.empty()) {
      slot_ = std::make_unique<Slot>();
    } else {
      slot_ = std::move(p.back());
      p.pop_back();
    }
  }
  ~OrderedLdlt() {
    if (slot_ && pool().size() < 16) pool().push_back(std::move(slot_));
  }
  OrderedLdlt(const OrderedLdlt&) = delete;
  OrderedLdlt& operator=(const OrderedLdlt&) = delete;

  /// Factorizes the matrix with the given entries (cell numbering, duplicates summed).
  bool compute(const std::vector<Triplet>& trip, Eigen::Index n) {
    require(order_ && Eigen::Index(order_->size()) == n, "OrderedLdlt: ordering size mismatch");
    std::vector<Triplet> permuted;
    permuted.reserve(trip.size());
    const auto& o = *order_;
    for (const auto& t : trip) permuted.emplace_back(o[std::size_t(t.row())], o[std::size_t(t.col())], t.value());
    SparseMatrix a(n, n);
    a.setFromTriplets(permuted.begin(), permuted.end());
    a.makeCompressed();
    const auto* ob = a.outerIndexPtr();
    const auto* ib = a.innerIndexPtr();
    const bool same = slot_->outer.size() == std::size_t(n + 1) && slot_->inner.size() == std::size_t(a.nonZeros()) &&
                      std::equal(ob, ob + n + 1, slot_->outer.begin()) &&
                      std::equal(ib, ib + a.nonZeros(), slot_->inner.begin());
    if (!same) {
      slot_->solver.analyzePattern(a);
      slot_->outer.assign(ob, ob + n + 1);
      slot_->inner.assign(ib, ib + a.nonZeros());
    }
    slot_->solver.factorize(a);
    ok_ = slot_->solver.info() == Eigen::Success;
    if (!ok_) slot_->outer.clear();
    return ok_;
  }

  bool ok() const { return ok_; }

  Vector solve(const Vector& b) const {
    const auto& o = *order_;
    Vector pb(b.size());
    for (Eigen::Index k = 0; k < b.size(); ++k) pb[o[std::size_t(k)]] = b[k];
    const Vector px = slot_->solver.solve(pb);
    Vector x(b.size());
    for (Eigen::Index k = 0; k < b.size(); ++k) x[k] = px[o[std::size_t(k)]];
    return x;
  }

private:
  std::shared_ptr<const std::vector<int>> order_;
  std::unique_ptr<Slot> slot_;
  bool ok_ = false;
};

}  // namespace dalab

#pragma once

// Independent reference computations shared by the unit and acceptance
// tests. Nothing here calls into the library's own derivative or LP code.

#include <algorithm>
#include <bit>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "anml/dataset.hpp"
#include "anml/mahalanobis.hpp"
#include "anml/random.hpp"

namespace testutil {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

inline std::vector<double> random_series(anml::Rng& rng, std::size_t n, double lo, double hi) {
  std::vector<double> a(n);
  for (auto& v : a) v = rng.uniform(lo, hi);
  return a;
}

/// Strictly increasing series with gaps of at least `min_gap`.
inline std::vector<double> increasing_series(anml::Rng& rng, std::size_t n, double min_gap = 0.05) {
  std::vector<double> a(n);
  double x = rng.uniform(-5.0, 5.0);
  for (auto& v : a) {
    v = x;
    x += min_gap + rng.uniform(0.0, 2.0);
  }
  return a;
}

/// -(1/g) log((1/n) sum exp(-g a_i)) summed naively in long double.
inline long double direct_log_exp_mean(const std::vector<double>& a, double gamma) {
  long double s = 0.0L;
  for (double x : a) s += std::exp(-static_cast<long double>(gamma) * x);
  return -std::log(s / static_cast<long double>(a.size())) / static_cast<long double>(gamma);
}

inline double mean(const std::vector<double>& a) {
  return std::accumulate(a.begin(), a.end(), 0.0) / static_cast<double>(a.size());
}

inline double max_abs(const MatrixXd& m) { return m.cwiseAbs().maxCoeff(); }

inline double relative_frobenius(const MatrixXd& analytic, const MatrixXd& numeric) {
  const double scale = std::max({analytic.norm(), numeric.norm(), 1e-6});
  return (analytic - numeric).norm() / scale;
}

/// Central differences of a scalar function of a matrix, entry by entry.
inline MatrixXd central_difference(const std::function<double(const MatrixXd&)>& f, const MatrixXd& x,
                                   double h = 1e-5) {
  MatrixXd out(x.rows(), x.cols());
  MatrixXd probe = x;
  for (Index r = 0; r < x.rows(); ++r) {
    for (Index c = 0; c < x.cols(); ++c) {
      probe(r, c) = x(r, c) + h;
      const double up = f(probe);
      probe(r, c) = x(r, c) - h;
      const double down = f(probe);
      probe(r, c) = x(r, c);
      out(r, c) = (up - down) / (2.0 * h);
    }
  }
  return out;
}

/// Central differences of a function of a symmetric matrix along the
/// symmetric directions E_ab + E_ba. Returns the matrix of directional
/// derivatives, which for a symmetric gradient G equals G on the diagonal
/// and 2 G off it.
inline MatrixXd symmetric_central_difference(const std::function<double(const MatrixXd&)>& f, const MatrixXd& m,
                                             double h = 1e-5) {
  const Index d = m.rows();
  MatrixXd out(d, d);
  for (Index a = 0; a < d; ++a) {
    for (Index b = a; b < d; ++b) {
      MatrixXd e = MatrixXd::Zero(d, d);
      e(a, b) = 1.0;
      e(b, a) = 1.0;
      out(a, b) = out(b, a) = (f(m + h * e) - f(m - h * e)) / (2.0 * h);
    }
  }
  return out;
}

/// G on the diagonal, G_ab + G_ba off it: comparable with symmetric_central_difference.
inline MatrixXd symmetric_directional(const MatrixXd& g) {
  MatrixXd out = g + g.transpose();
  out.diagonal() = g.diagonal();
  return out;
}

inline MatrixXd random_spd(anml::Rng& rng, Index d, double floor = 0.3) {
  MatrixXd b(d, d);
  for (Index i = 0; i < d; ++i)
    for (Index j = 0; j < d; ++j) b(i, j) = 0.5 * rng.normal();
  return b * b.transpose() + floor * MatrixXd::Identity(d, d);
}

/// Random PSD matrix of the given rank.
inline MatrixXd random_psd(anml::Rng& rng, Index d, Index rank) {
  MatrixXd b(d, rank);
  for (Index i = 0; i < d; ++i)
    for (Index j = 0; j < rank; ++j) b(i, j) = rng.normal();
  return b * b.transpose();
}

inline anml::LabeledDataset random_dataset(anml::Rng& rng, std::size_t per_class, std::size_t classes,
                                           std::size_t dim, double spread = 0.8) {
  const std::size_t n = per_class * classes;
  MatrixXd x(static_cast<Index>(n), static_cast<Index>(dim));
  std::vector<int> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = static_cast<int>(i % classes) + 1;
    for (std::size_t c = 0; c < dim; ++c) {
      x(static_cast<Index>(i), static_cast<Index>(c)) = spread * rng.normal() + (c == 0 ? 0.6 * y[i] : 0.0);
    }
  }
  return anml::LabeledDataset(std::move(x), std::move(y));
}

inline MatrixXd random_sphere(anml::Rng& rng, Index n, Index dim) {
  MatrixXd f(n, dim);
  for (Index i = 0; i < n; ++i) {
    for (Index c = 0; c < dim; ++c) f(i, c) = rng.normal();
    f.row(i).normalize();
  }
  return f;
}

inline std::vector<int> cyclic_labels(std::size_t n, std::size_t classes) {
  std::vector<int> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = static_cast<int>(i % classes) + 1;
  return y;
}

inline double sq_mahalanobis(const MatrixXd& m, const VectorXd& x, const VectorXd& y) {
  const VectorXd d = x - y;
  return d.dot(m * d);
}

/// NCA probability of correct classification for every sample, written
/// straight from its definition: sum over same-class j of exp(-d_ij) over the
/// sum over all k != i of exp(-d_ik).
inline std::vector<double> nca_probabilities(const MatrixXd& m, const anml::LabeledDataset& data) {
  const std::size_t n = data.size();
  std::vector<double> p(n);
  for (std::size_t i = 0; i < n; ++i) {
    long double same = 0.0L, all = 0.0L;
    for (std::size_t k = 0; k < n; ++k) {
      if (k == i) continue;
      const long double w = std::exp(-static_cast<long double>(sq_mahalanobis(m, data.row(i), data.row(k))));
      all += w;
      if (data.labels()[k] == data.labels()[i]) same += w;
    }
    p[i] = static_cast<double>(same / all);
  }
  return p;
}

/// Minimum sum |r_j| over r with sum_j r_j v_j == target (small bases).
/// Free coefficients are scanned on a grid and refined down to `step`; the
/// remaining ones are solved exactly. Returns nullopt when the target is
/// not reachable.
inline std::optional<double> grid_min_l1(const std::vector<VectorXd>& basis, const VectorXd& target,
                                         double step = 1e-3, double bound = 6.0) {
  const std::size_t k = basis.size();
  const double inf = std::numeric_limits<double>::infinity();
  double best = inf;
  auto consider = [&](const VectorXd& r) {
    VectorXd recon = VectorXd::Zero(target.size());
    for (std::size_t j = 0; j < k; ++j) recon += r(static_cast<Index>(j)) * basis[j];
    if ((recon - target).norm() <= 1e-9 * (1.0 + target.norm())) best = std::min(best, r.lpNorm<1>());
  };
  MatrixXd b(target.size(), static_cast<Index>(k));
  for (std::size_t j = 0; j < k; ++j) b.col(static_cast<Index>(j)) = basis[j];
  const Eigen::FullPivLU<MatrixXd> lu(b);
  const Index rank = lu.rank();

  // Enumerate the free coefficients on the grid, solve the pivot ones.
  // With rank r among k columns there are k - r free coefficients.
  // Pivot columns: the rank-sized subset spanning the largest volume. Then
  // each pivot coefficient moves by at most one unit per unit of a free
  // coefficient, so the grid step bounds the error of the scan.
  std::vector<Index> free_idx, pivot_idx;
  double best_volume = -1.0;
  for (unsigned mask = 0; mask < (1u << k); ++mask) {
    if (static_cast<Index>(std::popcount(mask)) != rank) continue;
    MatrixXd sub(target.size(), rank);
    std::vector<Index> cols;
    for (Index j = 0; j < static_cast<Index>(k); ++j) {
      if (mask & (1u << j)) {
        sub.col(static_cast<Index>(cols.size())) = b.col(j);
        cols.push_back(j);
      }
    }
    const double volume = (sub.transpose() * sub).determinant();
    if (volume > best_volume) {
      best_volume = volume;
      pivot_idx = cols;
    }
  }
  for (Index j = 0; j < static_cast<Index>(k); ++j) {
    if (std::find(pivot_idx.begin(), pivot_idx.end(), j) == pivot_idx.end()) free_idx.push_back(j);
  }
  if (rank == 0) {
    if (target.norm() <= 1e-12) return 0.0;
    return std::nullopt;
  }
  MatrixXd piv(target.size(), static_cast<Index>(pivot_idx.size()));
  for (std::size_t c = 0; c < pivot_idx.size(); ++c) piv.col(static_cast<Index>(c)) = b.col(pivot_idx[c]);
  const auto qr = piv.colPivHouseholderQr();

  auto eval_free = [&](const std::vector<double>& fv) {
    VectorXd rhs = target;
    for (std::size_t c = 0; c < free_idx.size(); ++c) rhs -= fv[c] * b.col(free_idx[c]);
    const VectorXd sol = qr.solve(rhs);
    if ((piv * sol - rhs).norm() > 1e-9 * (1.0 + rhs.norm())) return;
    VectorXd r = VectorXd::Zero(static_cast<Index>(k));
    for (std::size_t c = 0; c < pivot_idx.size(); ++c) r(pivot_idx[c]) = sol(static_cast<Index>(c));
    for (std::size_t c = 0; c < free_idx.size(); ++c) r(free_idx[c]) = fv[c];
    consider(r);
  };

  if (free_idx.empty()) {
    eval_free({});
  } else {
    // The objective is convex in the free coefficients: coarse scan then
    // successively finer scans around the incumbent down to `step`.
    const std::size_t nf = free_idx.size();
    std::vector<double> centre(nf, 0.0);
    double half = bound, h = std::max(step, bound / 60.0);
    while (true) {
      double local_best = inf;
      std::vector<double> local_arg = centre;
      std::vector<double> fv(nf);
      const int steps = static_cast<int>(std::round(half / h));
      std::function<void(std::size_t)> scan = [&](std::size_t c) {
        if (c == nf) {
          const double before = best;
          best = inf;
          eval_free(fv);
          if (best < local_best) {
            local_best = best;
            local_arg = fv;
          }
          best = std::min(before, best);
          return;
        }
        for (int s = -steps; s <= steps; ++s) {
          fv[c] = centre[c] + s * h;
          scan(c + 1);
        }
      };
      scan(0);
      centre = local_arg;
      if (h <= step) break;
      half = 3.0 * h;
      h = std::max(step, h / 10.0);
    }
  }
  if (!std::isfinite(best)) return std::nullopt;
  return best;
}

}  // namespace testutil

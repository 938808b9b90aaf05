#include "dcl/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include <Eigen/Dense>
#include <Eigen/SVD>

#include "dcl/rng.hpp"

namespace dcl {

namespace {
constexpr double kStdEps = 1e-8;
}

FeatureMatrix standardize(const FeatureMatrix& features,
                          StandardizeStats* stats) {
  if (features.n < 2) {
    throw std::invalid_argument("standardize: need at least 2 rows");
  }
  StandardizeStats st;
  st.mean.assign(features.f, 0.0);
  st.stddev.assign(features.f, 0.0);
  for (int i = 0; i < features.n; ++i) {
    for (int j = 0; j < features.f; ++j) st.mean[j] += features.at(i, j);
  }
  for (double& m : st.mean) m /= features.n;
  for (int i = 0; i < features.n; ++i) {
    for (int j = 0; j < features.f; ++j) {
      const double d = features.at(i, j) - st.mean[j];
      st.stddev[j] += d * d;
    }
  }
  for (double& s : st.stddev) s = std::sqrt(s / features.n);

  FeatureMatrix out(features.n, features.f);
  for (int i = 0; i < features.n; ++i) {
    for (int j = 0; j < features.f; ++j) {
      out.at(i, j) = st.stddev[j] > kStdEps
                         ? (features.at(i, j) - st.mean[j]) / st.stddev[j]
                         : 0.0;
    }
  }
  if (stats) *stats = std::move(st);
  return out;
}

PCAModel pca_fit(const FeatureMatrix& scaled, int p) {
  const int max_p = std::min(scaled.n - 1, scaled.f);
  if (p < 1 || p > max_p) {
    throw std::invalid_argument("pca_fit: P must be in [1, min(N-1, F)]");
  }
  PCAModel model;
  model.p = p;
  model.f = scaled.f;
  model.mean.assign(scaled.f, 0.0);
  for (int i = 0; i < scaled.n; ++i) {
    for (int j = 0; j < scaled.f; ++j) model.mean[j] += scaled.at(i, j);
  }
  for (double& m : model.mean) m /= scaled.n;

  Eigen::MatrixXd centered(scaled.n, scaled.f);
  for (int i = 0; i < scaled.n; ++i) {
    for (int j = 0; j < scaled.f; ++j) {
      centered(i, j) = scaled.at(i, j) - model.mean[j];
    }
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(centered, Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();
  const auto& V = svd.matrixV();  // f x rank, columns are right singular vectors

  model.components.assign(static_cast<std::size_t>(p) * scaled.f, 0.0);
  model.singular_values.assign(p, 0.0);
  for (int c = 0; c < p; ++c) {
    model.singular_values[c] = sv(c);
    // canonical sign: largest-magnitude entry positive
    int arg = 0;
    for (int j = 1; j < scaled.f; ++j) {
      if (std::abs(V(j, c)) > std::abs(V(arg, c))) arg = j;
    }
    const double sign = V(arg, c) < 0.0 ? -1.0 : 1.0;
    for (int j = 0; j < scaled.f; ++j) {
      model.components[static_cast<std::size_t>(c) * scaled.f + j] =
          sign * V(j, c);
    }
  }
  return model;
}

FeatureMatrix pca_transform(const PCAModel& model, const FeatureMatrix& rows,
                            bool whiten) {
  if (rows.f != model.f) {
    throw std::invalid_argument("pca_transform: feature width mismatch");
  }
  FeatureMatrix out(rows.n, model.p);
  for (int i = 0; i < rows.n; ++i) {
    for (int c = 0; c < model.p; ++c) {
      const double* comp =
          model.components.data() + static_cast<std::size_t>(c) * model.f;
      double acc = 0.0;
      for (int j = 0; j < model.f; ++j) {
        acc += (rows.at(i, j) - model.mean[j]) * comp[j];
      }
      if (whiten) {
        acc = model.singular_values[c] > kStdEps
                  ? acc / model.singular_values[c]
                  : 0.0;
      }
      out.at(i, c) = acc;
    }
  }
  return out;
}

void l2_row_normalize(FeatureMatrix& rows) {
  for (int i = 0; i < rows.n; ++i) {
    double* r = rows.row(i);
    double norm2 = 0.0;
    for (int j = 0; j < rows.f; ++j) norm2 += r[j] * r[j];
    if (norm2 > 0.0) {
      const double inv = 1.0 / std::sqrt(norm2);
      for (int j = 0; j < rows.f; ++j) r[j] *= inv;
    }
  }
}

namespace {

double sq_dist(const double* a, const double* b, int p) {
  double acc = 0.0;
  for (int j = 0; j < p; ++j) {
    const double d = a[j] - b[j];
    acc += d * d;
  }
  return acc;
}

std::vector<double> kmeanspp_init(const FeatureMatrix& pts, int k, Rng& rng) {
  const int n = pts.n, p = pts.f;
  std::vector<double> centroids(static_cast<std::size_t>(k) * p);
  const int first = static_cast<int>(rng.bounded(n));
  std::copy_n(pts.row(first), p, centroids.data());
  std::vector<double> d2(n);
  for (int i = 0; i < n; ++i) d2[i] = sq_dist(pts.row(i), centroids.data(), p);
  for (int c = 1; c < k; ++c) {
    double total = 0.0;
    for (double d : d2) total += d;
    int pick;
    if (total <= 0.0) {
      pick = static_cast<int>(rng.bounded(n));
    } else {
      const double r = rng.uniform() * total;
      double run = 0.0;
      pick = n - 1;
      for (int i = 0; i < n; ++i) {
        run += d2[i];
        if (run >= r) {
          pick = i;
          break;
        }
      }
    }
    double* cent = centroids.data() + static_cast<std::size_t>(c) * p;
    std::copy_n(pts.row(pick), p, cent);
    for (int i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], sq_dist(pts.row(i), cent, p));
    }
  }
  return centroids;
}

void assign_nearest(const FeatureMatrix& pts, const std::vector<double>& cents,
                    int k, std::vector<int>& assign) {
  const int p = pts.f;
  for (int i = 0; i < pts.n; ++i) {
    int best = 0;
    double best_d = sq_dist(pts.row(i), cents.data(), p);
    for (int c = 1; c < k; ++c) {
      const double d =
          sq_dist(pts.row(i), cents.data() + static_cast<std::size_t>(c) * p, p);
      if (d < best_d) {
        best_d = d;
        best = c;
      }
    }
    assign[i] = best;
  }
}

// Moves the farthest point of the highest-inertia cluster onto each empty
// centroid. Returns true if anything moved.
bool repair_empty(const FeatureMatrix& pts, std::vector<double>& cents, int k,
                  std::vector<int>& assign) {
  const int p = pts.f;
  std::vector<int> counts(k, 0);
  for (int a : assign) ++counts[a];
  bool moved = false;
  for (int e = 0; e < k; ++e) {
    if (counts[e] > 0) continue;
    std::vector<double> cluster_inertia(k, 0.0);
    for (int i = 0; i < pts.n; ++i) {
      cluster_inertia[assign[i]] += sq_dist(
          pts.row(i), cents.data() + static_cast<std::size_t>(assign[i]) * p, p);
    }
    int donor = -1;
    for (int c = 0; c < k; ++c) {
      if (counts[c] >= 2 &&
          (donor < 0 || cluster_inertia[c] > cluster_inertia[donor])) {
        donor = c;
      }
    }
    if (donor < 0) continue;  // cannot repair (all nonempty clusters singleton)
    int far = -1;
    double far_d = -1.0;
    for (int i = 0; i < pts.n; ++i) {
      if (assign[i] != donor) continue;
      const double d = sq_dist(
          pts.row(i), cents.data() + static_cast<std::size_t>(donor) * p, p);
      if (d > far_d) {
        far_d = d;
        far = i;
      }
    }
    std::copy_n(pts.row(far), p, cents.data() + static_cast<std::size_t>(e) * p);
    assign[far] = e;
    counts[e] = 1;
    --counts[donor];
    moved = true;
  }
  return moved;
}

double compute_inertia(const FeatureMatrix& pts,
                       const std::vector<double>& cents,
                       const std::vector<int>& assign) {
  double total = 0.0;
  for (int i = 0; i < pts.n; ++i) {
    total += sq_dist(pts.row(i),
                     cents.data() + static_cast<std::size_t>(assign[i]) * pts.f,
                     pts.f);
  }
  return total;
}

}  // namespace

KMeansModel kmeans(const FeatureMatrix& points, int k, std::uint64_t seed,
                   int max_iter, double tol) {
  if (k < 1) {
    throw std::invalid_argument("kmeans: k must be >= 1");
  }
  if (points.n < k) {
    throw std::invalid_argument("kmeans: need at least k points");
  }
  const int n = points.n, p = points.f;
  Rng rng(mix_seed(seed, 0x6b6d6575uLL));

  KMeansModel model;
  model.k = k;
  model.p = p;
  model.centroids = kmeanspp_init(points, k, rng);
  model.assignments.assign(n, 0);

  std::vector<int> prev_assign;
  double prev_inertia = std::numeric_limits<double>::infinity();
  for (int iter = 0; iter < std::max(1, max_iter); ++iter) {
    if (iter > 0) {
      // update step: centroids become cluster means
      std::vector<int> counts(k, 0);
      std::vector<double> sums(model.centroids.size(), 0.0);
      for (int i = 0; i < n; ++i) {
        const int a = model.assignments[i];
        ++counts[a];
        double* cent = sums.data() + static_cast<std::size_t>(a) * p;
        const double* row = points.row(i);
        for (int j = 0; j < p; ++j) cent[j] += row[j];
      }
      for (int c = 0; c < k; ++c) {
        if (counts[c] == 0) continue;  // keep previous centroid
        double* cent = model.centroids.data() + static_cast<std::size_t>(c) * p;
        for (int j = 0; j < p; ++j) cent[j] = sums[c * p + j] / counts[c];
      }
    }
    assign_nearest(points, model.centroids, k, model.assignments);
    for (int guard = 0; guard < k; ++guard) {
      if (!repair_empty(points, model.centroids, k, model.assignments)) break;
      assign_nearest(points, model.centroids, k, model.assignments);
    }
    model.inertia = compute_inertia(points, model.centroids, model.assignments);
    if (model.inertia > prev_inertia + 1e-9 * std::max(1.0, prev_inertia)) {
      throw std::logic_error("kmeans: inertia increased across an iteration");
    }
    const bool stable = iter > 0 && model.assignments == prev_assign;
    const bool converged =
        std::isfinite(prev_inertia) && prev_inertia - model.inertia < tol;
    if (stable || converged) break;
    prev_assign = model.assignments;
    prev_inertia = model.inertia;
  }
  return model;
}

std::vector<int> pseudo_labels(const KMeansModel& model) {
  return model.assignments;
}

}  // namespace dcl

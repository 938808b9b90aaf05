#pragma once

#include <cstdint>
#include <vector>

namespace dcl {

// N x F row-major matrix of pooled feature vectors; row order follows the
// dataset's subject order.
struct FeatureMatrix {
  int n = 0, f = 0;
  std::vector<double> v;

  FeatureMatrix() = default;
  FeatureMatrix(int n_, int f_)
      : n(n_), f(f_), v(static_cast<std::size_t>(n_) * f_, 0.0) {}

  double* row(int i) { return v.data() + static_cast<std::size_t>(i) * f; }
  const double* row(int i) const {
    return v.data() + static_cast<std::size_t>(i) * f;
  }
  double at(int i, int j) const { return v[static_cast<std::size_t>(i) * f + j]; }
  double& at(int i, int j) { return v[static_cast<std::size_t>(i) * f + j]; }
};

struct StandardizeStats {
  std::vector<double> mean;
  std::vector<double> stddev;  // population std; columns with std <= eps map to 0
};

// Column-wise zero-mean unit-variance scaling. Constant columns become 0.
FeatureMatrix standardize(const FeatureMatrix& features,
                          StandardizeStats* stats = nullptr);

struct PCAModel {
  int p = 0, f = 0;
  std::vector<double> mean;             // length f
  std::vector<double> components;       // p x f, orthonormal rows
  std::vector<double> singular_values;  // length p, non-increasing
};

// Components are the top-P right singular vectors of the row-centered matrix.
PCAModel pca_fit(const FeatureMatrix& scaled, int p);
// Projects centered rows; whiten divides each coordinate by its singular value.
FeatureMatrix pca_transform(const PCAModel& model, const FeatureMatrix& rows,
                            bool whiten = false);

// Unit-Euclidean-norm rows; zero rows stay zero.
void l2_row_normalize(FeatureMatrix& rows);

struct KMeansModel {
  int k = 0, p = 0;
  std::vector<double> centroids;  // k x p
  std::vector<int> assignments;   // length n, nearest centroid (first-index ties)
  double inertia = 0.0;
};

// Lloyd iterations from k-means++ seeding. Deterministic per seed. Empty
// clusters are repaired by moving the farthest point of the highest-inertia
// cluster onto the empty centroid. Stops when assignments are stable, the
// inertia improvement drops below tol, or max_iter is reached.
KMeansModel kmeans(const FeatureMatrix& points, int k, std::uint64_t seed,
                   int max_iter = 100, double tol = 0.0);

std::vector<int> pseudo_labels(const KMeansModel& model);

}  // namespace dcl

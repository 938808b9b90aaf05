#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "dcl/clustering.hpp"

namespace dcl {

struct ConfusionMatrix {
  int k_pred = 0, k_true = 0;
  std::vector<long> counts;  // k_pred x k_true

  long at(int p, int t) const {
    return counts[static_cast<std::size_t>(p) * k_true + t];
  }
};

ConfusionMatrix confusion_matrix(const std::vector<int>& pred,
                                 const std::vector<int>& truth, int k_pred,
                                 int k_true);

// Minimum-cost one-to-one assignment of n rows to n columns (O(n^3)).
// Returns the column chosen for each row.
std::vector<int> solve_assignment(const std::vector<std::vector<double>>& cost);

// Best-matching clustering accuracy: max over one-to-one cluster-to-class
// matchings of the matched count / N.
double matched_accuracy(const std::vector<int>& pred,
                        const std::vector<int>& truth, int k);

// Mean silhouette over all points: (b - a) / max(a, b), where a is the mean
// intra-cluster distance (self excluded) and b the smallest mean distance to
// another cluster. Singleton clusters contribute 0.
double silhouette(const FeatureMatrix& points, const std::vector<int>& labels);

// Mean over clusters of the worst (S_i + S_j) / M_ij ratio, with S the mean
// distance to the cluster centroid and M the centroid distance. Returns
// +infinity when two centroids coincide.
double davies_bouldin(const FeatureMatrix& points,
                      const std::vector<int>& labels);

struct MetricsReport {
  std::string method;
  double clustering_accuracy = 0.0;
  double silhouette = 0.0;
  double davies_bouldin = 0.0;
};

MetricsReport make_report(const std::string& method,
                          const std::vector<int>& pred,
                          const std::vector<int>& truth,
                          const FeatureMatrix& points);

// metrics.csv: header `method,clustering_accuracy,silhouette,davies_bouldin`,
// one row per method, 4-decimal fixed formatting.
void write_metrics_csv(const std::filesystem::path& path,
                       const std::vector<MetricsReport>& reports);

}  // namespace dcl

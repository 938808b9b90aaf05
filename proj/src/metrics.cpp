#include "dcl/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace dcl {

ConfusionMatrix confusion_matrix(const std::vector<int>& pred,
                                 const std::vector<int>& truth, int k_pred,
                                 int k_true) {
  if (pred.size() != truth.size()) {
    throw std::invalid_argument("confusion_matrix: length mismatch");
  }
  ConfusionMatrix cm;
  cm.k_pred = k_pred;
  cm.k_true = k_true;
  cm.counts.assign(static_cast<std::size_t>(k_pred) * k_true, 0);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] < 0 || pred[i] >= k_pred || truth[i] < 0 || truth[i] >= k_true) {
      throw std::invalid_argument("confusion_matrix: label out of range");
    }
    ++cm.counts[static_cast<std::size_t>(pred[i]) * k_true + truth[i]];
  }
  return cm;
}

// Potential-based shortest augmenting path formulation of the assignment
// problem; cost rows are assigned to columns one at a time.
std::vector<int> solve_assignment(const std::vector<std::vector<double>>& cost) {
  const int n = static_cast<int>(cost.size());
  for (const auto& row : cost) {
    if (static_cast<int>(row.size()) != n) {
      throw std::invalid_argument("solve_assignment: cost matrix not square");
    }
  }
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, kInf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      int j1 = 0;
      double delta = kInf;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> rowsol(n, -1);
  for (int j = 1; j <= n; ++j) {
    if (p[j]) rowsol[p[j] - 1] = j - 1;
  }
  return rowsol;
}

double matched_accuracy(const std::vector<int>& pred,
                        const std::vector<int>& truth, int k) {
  if (pred.size() != truth.size()) {
    throw std::invalid_argument("matched_accuracy: length mismatch");
  }
  if (pred.empty()) {
    throw std::invalid_argument("matched_accuracy: empty labels");
  }
  const ConfusionMatrix cm = confusion_matrix(pred, truth, k, k);
  std::vector<std::vector<double>> cost(k, std::vector<double>(k));
  for (int p = 0; p < k; ++p) {
    for (int t = 0; t < k; ++t) {
      cost[p][t] = -static_cast<double>(cm.at(p, t));
    }
  }
  const std::vector<int> match = solve_assignment(cost);
  long correct = 0;
  for (int p = 0; p < k; ++p) correct += cm.at(p, match[p]);
  return static_cast<double>(correct) / static_cast<double>(pred.size());
}

namespace {

double euclid(const double* a, const double* b, int p) {
  double acc = 0.0;
  for (int j = 0; j < p; ++j) {
    const double d = a[j] - b[j];
    acc += d * d;
  }
  return std::sqrt(acc);
}

int label_count(const std::vector<int>& labels) {
  int k = 0;
  for (int l : labels) {
    if (l < 0) throw std::invalid_argument("negative cluster label");
    k = std::max(k, l + 1);
  }
  return k;
}

}  // namespace

double silhouette(const FeatureMatrix& points, const std::vector<int>& labels) {
  const int n = points.n;
  if (static_cast<int>(labels.size()) != n) {
    throw std::invalid_argument("silhouette: label length mismatch");
  }
  if (n < 3) {
    throw std::invalid_argument("silhouette: need at least 3 points");
  }
  const int k = label_count(labels);
  std::vector<int> counts(k, 0);
  for (int l : labels) ++counts[l];
  int nonempty = 0;
  for (int c : counts) nonempty += (c > 0);
  if (nonempty < 2) {
    throw std::invalid_argument("silhouette: need at least 2 clusters");
  }

  double total = 0.0;
  std::vector<double> mean_dist(k);
  for (int i = 0; i < n; ++i) {
    if (counts[labels[i]] == 1) continue;  // singleton contributes 0
    std::fill(mean_dist.begin(), mean_dist.end(), 0.0);
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      mean_dist[labels[j]] += euclid(points.row(i), points.row(j), points.f);
    }
    const int own = labels[i];
    const double a = mean_dist[own] / (counts[own] - 1);
    double b = std::numeric_limits<double>::infinity();
    for (int c = 0; c < k; ++c) {
      if (c == own || counts[c] == 0) continue;
      b = std::min(b, mean_dist[c] / counts[c]);
    }
    const double denom = std::max(a, b);
    total += denom > 0.0 ? (b - a) / denom : 0.0;
  }
  return total / n;
}

double davies_bouldin(const FeatureMatrix& points,
                      const std::vector<int>& labels) {
  const int n = points.n, p = points.f;
  if (static_cast<int>(labels.size()) != n) {
    throw std::invalid_argument("davies_bouldin: label length mismatch");
  }
  const int k = label_count(labels);
  std::vector<int> counts(k, 0);
  for (int l : labels) ++counts[l];
  std::vector<int> live;
  for (int c = 0; c < k; ++c) {
    if (counts[c] > 0) live.push_back(c);
  }
  if (live.size() < 2) {
    throw std::invalid_argument("davies_bouldin: need at least 2 clusters");
  }

  std::vector<double> centroids(static_cast<std::size_t>(k) * p, 0.0);
  for (int i = 0; i < n; ++i) {
    double* cent = centroids.data() + static_cast<std::size_t>(labels[i]) * p;
    for (int j = 0; j < p; ++j) cent[j] += points.at(i, j);
  }
  for (int c : live) {
    double* cent = centroids.data() + static_cast<std::size_t>(c) * p;
    for (int j = 0; j < p; ++j) cent[j] /= counts[c];
  }
  std::vector<double> scatter(k, 0.0);
  for (int i = 0; i < n; ++i) {
    scatter[labels[i]] += euclid(
        points.row(i), centroids.data() + static_cast<std::size_t>(labels[i]) * p,
        p);
  }
  for (int c : live) scatter[c] /= counts[c];

  double total = 0.0;
  for (int ci : live) {
    double worst = 0.0;
    for (int cj : live) {
      if (cj == ci) continue;
      const double m =
          euclid(centroids.data() + static_cast<std::size_t>(ci) * p,
                 centroids.data() + static_cast<std::size_t>(cj) * p, p);
      if (m <= 0.0) return std::numeric_limits<double>::infinity();
      worst = std::max(worst, (scatter[ci] + scatter[cj]) / m);
    }
    total += worst;
  }
  return total / static_cast<double>(live.size());
}

MetricsReport make_report(const std::string& method,
                          const std::vector<int>& pred,
                          const std::vector<int>& truth,
                          const FeatureMatrix& points) {
  MetricsReport r;
  r.method = method;
  const int k = std::max(label_count(pred), label_count(truth));
  r.clustering_accuracy = matched_accuracy(pred, truth, k);
  r.silhouette = silhouette(points, pred);
  r.davies_bouldin = davies_bouldin(points, pred);
  return r;
}

void write_metrics_csv(const std::filesystem::path& path,
                       const std::vector<MetricsReport>& reports) {
  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error("cannot write " + path.string());
  }
  out << "method,clustering_accuracy,silhouette,davies_bouldin\n";
  char buf[128];
  for (const MetricsReport& r : reports) {
    std::snprintf(buf, sizeof(buf), "%s,%.4f,%.4f,%.4f", r.method.c_str(),
                  r.clustering_accuracy, r.silhouette, r.davies_bouldin);
    out << buf << "\n";
  }
}

}  // namespace dcl

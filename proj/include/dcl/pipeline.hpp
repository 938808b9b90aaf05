#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "dcl/clustering.hpp"
#include "dcl/net.hpp"
#include "dcl/volume.hpp"

namespace dcl {

struct Seeds {
  std::uint64_t net = 1;
  std::uint64_t head = 2;
  std::uint64_t kmeans = 3;
  std::uint64_t sampler = 4;
};

struct TrainConfig {
  int epochs = 15;
  int classifier_steps_per_epoch = 0;  // 0: ceil(N / batch_size) * 3
  double learning_rate = 1e-3;
  double momentum = 0.9;
  int batch_size = 4;
  int pca_dim = 0;  // 0: min(N - 1, F, 32)
  int k = 6;
  Variant variant = Variant::kProposed;
  bool uniform_sampling = true;
  bool skip_connections = true;
  bool dense_post_relu = true;
  bool standardize = true;
  bool l2_normalize = true;
  bool whiten = false;
  int base_filters = 8;
  int levels = 0;  // 0: 3 for proposed, 4 for baseline
  Seeds seeds;

  Topology topology() const;
  void validate() const;
};

// Strict JSON round trip: unknown keys are an error, never ignored.
TrainConfig config_from_json(const nlohmann::json& j);
TrainConfig load_config(const std::filesystem::path& path);
nlohmann::json config_to_json(const TrainConfig& config);

struct EpochLog {
  int epoch = 0;
  double kmeans_inertia = 0.0;
  std::vector<long> label_histogram;
  double mean_loss_start = 0.0;
  double mean_loss_end = 0.0;
  double label_change_fraction = 0.0;
  bool loss_nonincreasing = true;
};

void write_epochs_csv(const std::filesystem::path& path,
                      const std::vector<EpochLog>& logs);

// Forward-passes every subject through the frozen net and pools the dense
// features within the (resolution-matched) lung mask. Never mutates
// parameters; row order follows dataset order.
FeatureMatrix extract_features(const FeatureNet& net, const Dataset& dataset,
                               int threads = 1);

// Mask brought to the net's feature resolution (2x2x2 any-inside reduction
// per pooling level for the baseline; identity for the proposed variant).
Mask pooled_mask(const Mask& mask, const Topology& topo);

struct PreprocessedFeatures {
  FeatureMatrix raw;      // pooled features as extracted
  FeatureMatrix reduced;  // scaled / PCA-reduced / normalized, as configured
  int pca_dim = 0;
};

PreprocessedFeatures preprocess_features(FeatureMatrix raw,
                                         const TrainConfig& config);

// Mean multinomial logistic loss of the pooled-route classifier over the
// whole dataset under the given pseudo-labels.
double dataset_mean_loss(const FeatureNet& net, const Head& head,
                         const Dataset& dataset, const std::vector<int>& labels,
                         int threads = 1);

struct EpochResult {
  EpochLog log;
  std::vector<int> labels;
};

// One DeepCluster epoch: frozen feature extraction, scaling + PCA, k-means
// pseudo-labels, head re-initialization from hash(head_seed, epoch), then
// mini-batch SGD over net and head on the pseudo-labels.
EpochResult run_epoch(FeatureNet& net, Head& head, const Dataset& dataset,
                      const TrainConfig& config,
                      const std::vector<int>& prev_labels, int epoch_index,
                      ModelGrads& velocity, int threads = 1);

struct TrainResult {
  FeatureNet net;
  Head head;
  std::vector<EpochLog> logs;
};

// Full training run. When out_dir is nonempty, writes per-epoch checkpoints
// (checkpoint_ep000 is the initial state) and epochs.csv there.
TrainResult train(const TrainConfig& config, const Dataset& dataset,
                  const std::filesystem::path& out_dir = {}, int threads = 1);

}  // namespace dcl

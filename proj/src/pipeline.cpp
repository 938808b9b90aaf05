#include "dcl/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <stdexcept>

#include "dcl/metrics.hpp"
#include "dcl/parallel.hpp"
#include "dcl/rng.hpp"

namespace dcl {

using nlohmann::json;

Topology TrainConfig::topology() const {
  const int lv = levels > 0 ? levels
                            : (variant == Variant::kProposed ? 3 : 4);
  Topology t = variant == Variant::kProposed
                   ? Topology::proposed(lv, base_filters, skip_connections)
                   : Topology::baseline(lv, base_filters);
  t.dense_post_relu = dense_post_relu;
  return t;
}

void TrainConfig::validate() const {
  if (epochs < 0) throw std::invalid_argument("config: epochs must be >= 0");
  if (k < 2) throw std::invalid_argument("config: k must be >= 2");
  if (!(learning_rate > 0.0)) {
    throw std::invalid_argument("config: learning_rate must be positive");
  }
  if (momentum < 0.0 || momentum >= 1.0) {
    throw std::invalid_argument("config: momentum must be in [0, 1)");
  }
  if (batch_size < 1) throw std::invalid_argument("config: batch_size must be >= 1");
  if (classifier_steps_per_epoch < 0) {
    throw std::invalid_argument("config: classifier_steps_per_epoch must be >= 0");
  }
  if (pca_dim < 0) throw std::invalid_argument("config: pca_dim must be >= 0");
  if (base_filters < 1) {
    throw std::invalid_argument("config: base_filters must be >= 1");
  }
  if (levels < 0) throw std::invalid_argument("config: levels must be >= 0");
}

TrainConfig config_from_json(const json& j) {
  TrainConfig c;
  for (const auto& [key, value] : j.items()) {
    if (key == "epochs") c.epochs = value.get<int>();
    else if (key == "classifier_steps_per_epoch") c.classifier_steps_per_epoch = value.get<int>();
    else if (key == "learning_rate") c.learning_rate = value.get<double>();
    else if (key == "momentum") c.momentum = value.get<double>();
    else if (key == "batch_size") c.batch_size = value.get<int>();
    else if (key == "pca_dim") c.pca_dim = value.get<int>();
    else if (key == "k") c.k = value.get<int>();
    else if (key == "variant") c.variant = variant_from_name(value.get<std::string>());
    else if (key == "uniform_sampling") c.uniform_sampling = value.get<bool>();
    else if (key == "skip_connections") c.skip_connections = value.get<bool>();
    else if (key == "dense_post_relu") c.dense_post_relu = value.get<bool>();
    else if (key == "standardize") c.standardize = value.get<bool>();
    else if (key == "l2_normalize") c.l2_normalize = value.get<bool>();
    else if (key == "whiten") c.whiten = value.get<bool>();
    else if (key == "base_filters") c.base_filters = value.get<int>();
    else if (key == "levels") c.levels = value.get<int>();
    else if (key == "seeds") {
      for (const auto& [skey, svalue] : value.items()) {
        if (skey == "net") c.seeds.net = svalue.get<std::uint64_t>();
        else if (skey == "head") c.seeds.head = svalue.get<std::uint64_t>();
        else if (skey == "kmeans") c.seeds.kmeans = svalue.get<std::uint64_t>();
        else if (skey == "sampler") c.seeds.sampler = svalue.get<std::uint64_t>();
        else throw std::invalid_argument("config: unknown seeds key \"" + skey + "\"");
      }
    } else {
      throw std::invalid_argument("config: unknown key \"" + key + "\"");
    }
  }
  c.validate();
  return c;
}

TrainConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("missing config file: " + path.string());
  }
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw std::invalid_argument("config parse error in " + path.string() +
                                ": " + e.what());
  }
  try {
    return config_from_json(j);
  } catch (const json::exception& e) {
    throw std::invalid_argument("config field error in " + path.string() +
                                ": " + e.what());
  }
}

json config_to_json(const TrainConfig& c) {
  return json{{"epochs", c.epochs},
              {"classifier_steps_per_epoch", c.classifier_steps_per_epoch},
              {"learning_rate", c.learning_rate},
              {"momentum", c.momentum},
              {"batch_size", c.batch_size},
              {"pca_dim", c.pca_dim},
              {"k", c.k},
              {"variant", variant_name(c.variant)},
              {"uniform_sampling", c.uniform_sampling},
              {"skip_connections", c.skip_connections},
              {"dense_post_relu", c.dense_post_relu},
              {"standardize", c.standardize},
              {"l2_normalize", c.l2_normalize},
              {"whiten", c.whiten},
              {"base_filters", c.base_filters},
              {"levels", c.levels},
              {"seeds",
               {{"net", c.seeds.net},
                {"head", c.seeds.head},
                {"kmeans", c.seeds.kmeans},
                {"sampler", c.seeds.sampler}}}};
}

void write_epochs_csv(const std::filesystem::path& path,
                      const std::vector<EpochLog>& logs) {
  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error("cannot write " + path.string());
  }
  out << "epoch,kmeans_inertia,label_change_fraction,mean_loss_start,"
         "mean_loss_end,loss_nonincreasing,label_histogram\n";
  char buf[256];
  for (const EpochLog& log : logs) {
    std::string hist;
    for (std::size_t i = 0; i < log.label_histogram.size(); ++i) {
      if (i) hist += '|';
      hist += std::to_string(log.label_histogram[i]);
    }
    std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g,%.9g,%.9g,%d,", log.epoch,
                  log.kmeans_inertia, log.label_change_fraction,
                  log.mean_loss_start, log.mean_loss_end,
                  log.loss_nonincreasing ? 1 : 0);
    out << buf << hist << "\n";
  }
}

Mask pooled_mask(const Mask& mask, const Topology& topo) {
  if (topo.downsample_factor() == 1) return mask;
  Mask m = mask;
  for (int i = 0; i < topo.levels; ++i) m = downsample_mask2(m);
  return m;
}

FeatureMatrix extract_features(const FeatureNet& net, const Dataset& dataset,
                               int threads) {
  const int n = static_cast<int>(dataset.subjects.size());
  if (n == 0) {
    throw std::invalid_argument("extract_features: empty dataset");
  }
  const int f = net.topo.feature_channels();
  FeatureMatrix features(n, f);
  parallel_for(n, threads, [&](int i) {
    const Subject& s = dataset.subjects[i];
    const Tensor4 dense = unet_forward(net, s.volume);
    const Mask pm = pooled_mask(s.mask, net.topo);
    const std::vector<double> pooled = masked_avg_pool(dense, pm);
    std::copy(pooled.begin(), pooled.end(), features.row(i));
  });
  return features;
}

PreprocessedFeatures preprocess_features(FeatureMatrix raw,
                                         const TrainConfig& config) {
  PreprocessedFeatures out;
  out.raw = std::move(raw);
  FeatureMatrix work = out.raw;
  if (config.standardize) {
    work = standardize(work);
  }
  const int max_p = std::min(work.n - 1, work.f);
  int p = config.pca_dim > 0 ? config.pca_dim : std::min(max_p, 32);
  p = std::min(p, max_p);
  if (p >= 1) {
    const PCAModel pca = pca_fit(work, p);
    work = pca_transform(pca, work, config.whiten);
  }
  if (config.l2_normalize) {
    l2_row_normalize(work);
  }
  out.pca_dim = p;
  out.reduced = std::move(work);
  return out;
}

namespace {

std::vector<double> subject_pooled(const FeatureNet& net, const Subject& s) {
  const Tensor4 dense = unet_forward(net, s.volume);
  return masked_avg_pool(dense, pooled_mask(s.mask, net.topo));
}

}  // namespace

double dataset_mean_loss(const FeatureNet& net, const Head& head,
                         const Dataset& dataset, const std::vector<int>& labels,
                         int threads) {
  const int n = static_cast<int>(dataset.subjects.size());
  if (static_cast<int>(labels.size()) != n) {
    throw std::invalid_argument("dataset_mean_loss: label length mismatch");
  }
  std::vector<double> losses(n, 0.0);
  parallel_for(n, threads, [&](int i) {
    const std::vector<double> pooled = subject_pooled(net, dataset.subjects[i]);
    losses[i] = softmax_xent(head_apply(head, pooled), labels[i]).loss;
  });
  double total = 0.0;
  for (double l : losses) total += l;  // fixed-order reduction
  return total / n;
}

EpochResult run_epoch(FeatureNet& net, Head& head, const Dataset& dataset,
                      const TrainConfig& config,
                      const std::vector<int>& prev_labels, int epoch_index,
                      ModelGrads& velocity, int threads) {
  config.validate();
  const int n = static_cast<int>(dataset.subjects.size());
  EpochResult result;
  result.log.epoch = epoch_index;

  // (1) frozen feature extraction, (2) scaling + PCA, (3) k-means
  FeatureMatrix raw = extract_features(net, dataset, threads);
  PreprocessedFeatures feats = preprocess_features(std::move(raw), config);
  const KMeansModel km =
      kmeans(feats.reduced, config.k, mix_seed(config.seeds.kmeans, epoch_index));
  result.labels = pseudo_labels(km);
  result.log.kmeans_inertia = km.inertia;
  result.log.label_histogram.assign(config.k, 0);
  for (int l : result.labels) ++result.log.label_histogram[l];
  if (prev_labels.empty()) {
    result.log.label_change_fraction = 1.0;
  } else {
    int changed = 0;
    for (int i = 0; i < n; ++i) changed += (result.labels[i] != prev_labels[i]);
    result.log.label_change_fraction = static_cast<double>(changed) / n;
  }

  // (4) head reset; velocity of the head restarts with it
  head = make_head(net.topo.feature_channels(), config.k,
                   mix_seed(config.seeds.head, epoch_index));
  std::fill(velocity.head.w.begin(), velocity.head.w.end(), 0.0);
  std::fill(velocity.head.b.begin(), velocity.head.b.end(), 0.0);

  // phase-start loss: net is unchanged since extraction, reuse pooled rows
  {
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
      std::vector<double> pooled(feats.raw.row(i), feats.raw.row(i) + feats.raw.f);
      total += softmax_xent(head_apply(head, pooled), result.labels[i]).loss;
    }
    result.log.mean_loss_start = total / n;
  }

  // (5) classifier phase: mini-batch SGD on pseudo-labels, f and g together
  const int steps = config.classifier_steps_per_epoch > 0
                        ? config.classifier_steps_per_epoch
                        : ((n + config.batch_size - 1) / config.batch_size) * 3;
  std::vector<std::vector<int>> members(config.k);
  for (int i = 0; i < n; ++i) members[result.labels[i]].push_back(i);
  Rng sampler(mix_seed(config.seeds.sampler, epoch_index));

  const int batch = config.batch_size;
  std::vector<ModelGrads> member_grads(batch);
  std::vector<int> batch_idx(batch);
  ModelGrads batch_grad = zero_grads_like(net, head);
  for (int step = 0; step < steps; ++step) {
    for (int b = 0; b < batch; ++b) {
      if (config.uniform_sampling) {
        const int cls = static_cast<int>(sampler.bounded(config.k));
        const auto& pool = members[cls];
        batch_idx[b] = pool[sampler.bounded(pool.size())];
      } else {
        batch_idx[b] = static_cast<int>(sampler.bounded(n));
      }
    }
    parallel_for(batch, threads, [&](int b) {
      const Subject& s = dataset.subjects[batch_idx[b]];
      NetTrace trace;
      const Tensor4 dense = unet_forward(net, s.volume, &trace);
      const Mask pm = pooled_mask(s.mask, net.topo);
      const std::vector<double> pooled = masked_avg_pool(dense, pm);
      const std::vector<double> logits = head_apply(head, pooled);
      const XentResult xr = softmax_xent(logits, result.labels[batch_idx[b]]);
      const HeadGrads hg = head_backward(head, pooled, xr.grad_logits);
      const Tensor4 grad_dense =
          masked_avg_pool_backward(hg.pooled, pm, dense.c);
      ModelGrads mg;
      mg.net = unet_backward(net, trace, grad_dense);
      mg.head.w = hg.w;
      mg.head.b = hg.b;
      member_grads[b] = std::move(mg);
    });
    batch_grad.zero();
    for (int b = 0; b < batch; ++b) {
      batch_grad.add_scaled(member_grads[b], 1.0 / batch);
    }
    sgd_step(net, head, batch_grad, config.learning_rate, config.momentum,
             velocity);
  }

  result.log.mean_loss_end =
      dataset_mean_loss(net, head, dataset, result.labels, threads);
  result.log.loss_nonincreasing =
      result.log.mean_loss_end <= result.log.mean_loss_start + 1e-6;
  return result;
}

TrainResult train(const TrainConfig& config, const Dataset& dataset,
                  const std::filesystem::path& out_dir, int threads) {
  config.validate();
  if (dataset.subjects.empty()) {
    throw std::invalid_argument("train: empty dataset");
  }
  const Topology topo = config.topology();
  TrainResult result;
  result.net = make_feature_net(topo, config.seeds.net);
  result.head =
      make_head(topo.feature_channels(), config.k, config.seeds.head);

  const bool emit = !out_dir.empty();
  if (emit) std::filesystem::create_directories(out_dir);
  char name[64];
  auto checkpoint_stem = [&](int epoch) {
    std::snprintf(name, sizeof(name), "checkpoint_ep%03d", epoch);
    return out_dir / name;
  };
  const json cfg_json = config_to_json(config);
  if (emit) {
    save_checkpoint(checkpoint_stem(0), result.net, result.head, 0, cfg_json);
  }

  ModelGrads velocity = zero_grads_like(result.net, result.head);
  std::vector<int> labels;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    EpochResult er = run_epoch(result.net, result.head, dataset, config, labels,
                               epoch, velocity, threads);
    labels = std::move(er.labels);
    if (!er.log.loss_nonincreasing) {
      std::cerr << "warning: epoch " << epoch
                << ": classification loss increased over the classifier phase ("
                << er.log.mean_loss_start << " -> " << er.log.mean_loss_end
                << ")\n";
    }
    result.logs.push_back(std::move(er.log));
    if (emit) {
      save_checkpoint(checkpoint_stem(epoch + 1), result.net, result.head,
                      epoch + 1, cfg_json);
      write_epochs_csv(out_dir / "epochs.csv", result.logs);
    }
  }
  if (emit) {
    write_epochs_csv(out_dir / "epochs.csv", result.logs);
  }
  return result;
}

}  // namespace dcl

#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "dcl/clustering.hpp"
#include "dcl/dcam.hpp"
#include "dcl/metrics.hpp"
#include "dcl/net.hpp"
#include "dcl/pipeline.hpp"
#include "dcl/volume.hpp"

namespace {

constexpr const char* kToolVersion = "densecluster 1.0.0";
constexpr const char* kFormatNote = "volume format v1, checkpoint format v1";

struct GenDataArgs {
  int classes = 3;
  int per_class = 20;
  int dims = 16;
  std::uint64_t seed = 7;
  std::string out;
  std::string variant = "both";
};

int cmd_gen_data(const GenDataArgs& a) {
  int divisor = 16;
  if (a.variant == "proposed") divisor = 8;
  else if (a.variant == "baseline" || a.variant == "both") divisor = 16;
  else throw std::invalid_argument("--variant must be proposed|baseline|both");
  if (a.dims < 8 || a.dims % divisor != 0) {
    throw std::invalid_argument(
        "--dims " + std::to_string(a.dims) + " unusable: the " + a.variant +
        (a.variant == "both" ? " variants need" : " variant needs") +
        " dims >= 8 and divisible by " + std::to_string(divisor) +
        " (proposed: 3 pooling levels; baseline: 4)");
  }
  const dcl::Dataset ds = dcl::generate_dataset(
      a.classes, a.per_class, {a.dims, a.dims, a.dims}, a.seed);
  dcl::save_dataset(ds, a.out);
  std::cout << "wrote " << ds.subjects.size() << " subjects (" << a.classes
            << " classes x " << a.per_class << ") to " << a.out << "\n";
  return 0;
}

struct TrainArgs {
  std::string config;
  std::string data;
  std::string out;
  int threads = 1;
};

int cmd_train(const TrainArgs& a) {
  const dcl::TrainConfig config = dcl::load_config(a.config);
  const dcl::Dataset dataset = dcl::load_dataset(a.data);
  std::filesystem::create_directories(a.out);

  const dcl::TrainResult result =
      dcl::train(config, dataset, a.out, a.threads);

  nlohmann::json manifest;
  manifest["tool_version"] = std::string(kToolVersion);
  manifest["config"] = dcl::config_to_json(config);
  manifest["data_manifest"] = a.data;
  manifest["output_dir"] = a.out;
  manifest["seeds"] = dcl::config_to_json(config)["seeds"];
  std::ofstream mf(std::filesystem::path(a.out) / "run_manifest.json");
  mf << manifest.dump(2) << "\n";

  std::cout << "trained " << dcl::variant_name(config.variant) << " for "
            << config.epochs << " epochs; checkpoints and epochs.csv in "
            << a.out << "\n";
  return 0;
}

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  std::string out;
  std::string method;
  bool dump_features = false;
  int threads = 1;
};

int cmd_eval(const EvalArgs& a) {
  const dcl::Checkpoint ck = dcl::load_checkpoint(a.checkpoint);
  const dcl::Dataset dataset = dcl::load_dataset(a.data);
  dcl::TrainConfig config;
  if (ck.extra.is_object()) config = dcl::config_from_json(ck.extra);
  config.k = ck.head.k();

  std::vector<int> truth;
  for (const dcl::Subject& s : dataset.subjects) {
    if (s.true_class < 0) {
      throw std::invalid_argument(
          "subject " + s.id +
          " has no true_class; evaluation needs labeled data");
    }
    truth.push_back(s.true_class);
  }

  dcl::FeatureMatrix raw = dcl::extract_features(ck.net, dataset, a.threads);
  dcl::PreprocessedFeatures feats =
      dcl::preprocess_features(std::move(raw), config);
  const dcl::KMeansModel km =
      dcl::kmeans(feats.reduced, config.k, config.seeds.kmeans);
  const std::vector<int> pred = dcl::pseudo_labels(km);

  const std::string name =
      a.method.empty() ? dcl::variant_name(ck.net.topo.variant) : a.method;
  std::vector<dcl::MetricsReport> reports;
  reports.push_back(dcl::make_report(name, pred, truth, feats.reduced));
  // same clustering scored on the raw pooled feature space, for transparency
  reports.push_back(dcl::make_report(name + "_raw", pred, truth, feats.raw));
  std::filesystem::create_directories(a.out);
  dcl::write_metrics_csv(std::filesystem::path(a.out) / "metrics.csv", reports);

  if (a.dump_features) {
    std::ofstream out(std::filesystem::path(a.out) / "features.csv");
    out << "id,assignment,true_class";
    for (int j = 0; j < feats.raw.f; ++j) out << ",f" << j;
    out << "\n";
    char buf[32];
    for (int i = 0; i < feats.raw.n; ++i) {
      out << dataset.subjects[i].id << "," << pred[i] << "," << truth[i];
      for (int j = 0; j < feats.raw.f; ++j) {
        std::snprintf(buf, sizeof(buf), ",%.9g", feats.raw.at(i, j));
        out << buf;
      }
      out << "\n";
    }
  }

  for (const dcl::MetricsReport& r : reports) {
    std::printf("%s: accuracy %.4f silhouette %.4f davies_bouldin %.4f\n",
                r.method.c_str(), r.clustering_accuracy, r.silhouette,
                r.davies_bouldin);
  }
  return 0;
}

struct DcamArgs {
  std::string checkpoint;
  std::string data;
  std::string subject;
  int channel = 0;
  std::string axis = "z";
  std::string out;
};

int cmd_dcam(const DcamArgs& a) {
  const dcl::Checkpoint ck = dcl::load_checkpoint(a.checkpoint);
  const dcl::Dataset dataset = dcl::load_dataset(a.data);
  const dcl::Subject* subject = nullptr;
  for (const dcl::Subject& s : dataset.subjects) {
    if (s.id == a.subject) {
      subject = &s;
      break;
    }
  }
  if (!subject) {
    std::string ids;
    for (const dcl::Subject& s : dataset.subjects) {
      if (!ids.empty()) ids += ", ";
      ids += s.id;
    }
    throw std::invalid_argument("unknown subject \"" + a.subject +
                                "\"; available: " + ids);
  }
  if (a.axis.size() != 1) {
    throw std::invalid_argument("--axis must be one of z, y, x");
  }
  const dcl::DCAM dcam = dcl::compute_dcam(ck.net, ck.head, *subject);
  const auto files =
      dcl::export_slices(dcam, subject->mask, a.channel, a.axis[0], a.out);
  std::cout << "subject " << subject->id << " assigned cluster "
            << dcam.assigned_cluster << "; wrote " << files.size()
            << " slices to " << a.out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deep clustering of volumetric images with dense features"};
  app.set_version_flag("--version",
                       std::string(kToolVersion) + " (" + kFormatNote + ")");
  app.require_subcommand(1);

  GenDataArgs gen;
  CLI::App* cmd_gen = app.add_subcommand(
      "gen-data", "Generate a synthetic phantom dataset with a manifest");
  cmd_gen->add_option("--classes", gen.classes, "Number of phantom classes")
      ->required();
  cmd_gen->add_option("--per-class", gen.per_class, "Subjects per class")
      ->required();
  cmd_gen->add_option("--dims", gen.dims, "Cubic volume edge length")
      ->required();
  cmd_gen->add_option("--seed", gen.seed, "Generator seed")->required();
  cmd_gen->add_option("--out", gen.out, "Output directory")->required();
  cmd_gen->add_option("--variant", gen.variant,
                      "Which variant the data must fit (proposed|baseline|both)");

  TrainArgs tr;
  CLI::App* cmd_tr = app.add_subcommand("train", "Run deep-clustering training");
  cmd_tr->add_option("--config", tr.config, "JSON training config")->required();
  cmd_tr->add_option("--data", tr.data, "Dataset manifest (or its directory)")
      ->required();
  cmd_tr->add_option("--out", tr.out, "Output directory")->required();
  cmd_tr->add_option("--threads", tr.threads, "Worker cap (default 1)");

  EvalArgs ev;
  CLI::App* cmd_ev = app.add_subcommand(
      "eval", "Cluster features of a frozen checkpoint and score them");
  cmd_ev->add_option("--checkpoint", ev.checkpoint, "Checkpoint stem or .json")
      ->required();
  cmd_ev->add_option("--data", ev.data, "Dataset manifest (or its directory)")
      ->required();
  cmd_ev->add_option("--out", ev.out, "Output directory")->required();
  cmd_ev->add_option("--method", ev.method,
                     "Method label for metrics.csv (default: variant name)");
  cmd_ev->add_flag("--dump-features", ev.dump_features,
                   "Also write features.csv");
  cmd_ev->add_option("--threads", ev.threads, "Worker cap (default 1)");

  DcamArgs dc;
  CLI::App* cmd_dc = app.add_subcommand(
      "dcam", "Export dense clustering activation map slices as PGM");
  cmd_dc->add_option("--checkpoint", dc.checkpoint, "Checkpoint stem or .json")
      ->required();
  cmd_dc->add_option("--data", dc.data, "Dataset manifest (or its directory)")
      ->required();
  cmd_dc->add_option("--subject", dc.subject, "Subject id")->required();
  cmd_dc->add_option("--channel", dc.channel, "Cluster channel")->required();
  cmd_dc->add_option("--axis", dc.axis, "Slice axis: z, y or x")->required();
  cmd_dc->add_option("--out", dc.out, "Output directory")->required();

  try {
    app.parse(argc, argv);
    if (cmd_gen->parsed()) return cmd_gen_data(gen);
    if (cmd_tr->parsed()) return cmd_train(tr);
    if (cmd_ev->parsed()) return cmd_eval(ev);
    if (cmd_dc->parsed()) return cmd_dcam(dc);
    return 1;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const dcl::DomainRefusal& e) {
    std::cerr << "refused: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

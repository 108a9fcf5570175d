// pscene: scene parsing pipeline driver.
//
// Stages: synth -> train-local -> [train-metric] -> build-index -> parse ->
// eval. Every stage reads its predecessors' artifacts from disk and writes
// one versioned artifact, so reruns with identical inputs and seeds are
// byte-identical.

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "pscene/config.hpp"
#include "pscene/convnet.hpp"
#include "pscene/global_transfer.hpp"
#include "pscene/integration.hpp"
#include "pscene/local_belief.hpp"
#include "pscene/metric.hpp"
#include "pscene/scene_data.hpp"

namespace fs = std::filesystem;
using namespace pscene;

namespace {

int class_count_of(const DatasetSplit& split) {
  int classes = 0;
  for (const auto& rec : split.records)
    for (std::uint16_t l : rec.labels.labels)
      if (l != kUnlabeled) classes = std::max(classes, static_cast<int>(l) + 1);
  if (classes == 0) throw DataError("split has no labeled pixels");
  return classes;
}

std::vector<Strategy> parse_strategies(const std::string& csv) {
  std::vector<Strategy> out;
  std::string token;
  std::istringstream ss(csv);
  while (std::getline(ss, token, ','))
    if (!token.empty()) out.push_back(strategy_from_name(token));
  if (out.empty()) throw ArgumentError("no sampling strategies given");
  return out;
}

PyramidConfig parse_pyramid(const std::string& csv) {
  PyramidConfig p;
  p.level_grids.clear();
  std::string token;
  std::istringstream ss(csv);
  while (std::getline(ss, token, ','))
    if (!token.empty()) p.level_grids.push_back(std::stoi(token));
  if (p.level_grids.empty()) throw ArgumentError("empty pyramid spec");
  return p;
}

// Cell-level feature/label pairs of a whole split, the training food for
// the metric stage.
void collect_cell_features(const DatasetSplit& split, const NetworkSpec& spec,
                           const NetworkParams& params,
                           std::vector<Eigen::VectorXd>& features, std::vector<int>& labels) {
  const int stride = spec.feature_stride();
  for (const auto& rec : split.records) {
    const PixelFeatureMap map = extract_features(spec, params, preprocess(rec.image));
    const auto cell_labels = cell_majority_labels(rec.labels, stride, map.grid_h, map.grid_w);
    for (int r = 0; r < map.grid_h; ++r)
      for (int c = 0; c < map.grid_w; ++c) {
        const std::uint16_t l = cell_labels[static_cast<size_t>(r) * map.grid_w + c];
        if (l == kUnlabeled) continue;
        features.emplace_back(
            Eigen::Map<const Eigen::VectorXd>(map.cell(r, c), map.dim));
        labels.push_back(l);
      }
  }
}

struct SynthArgs {
  std::string out;
  std::string config_path;
  std::uint64_t seed = 7;
};

int cmd_synth(const SynthArgs& a) {
  Config cfg;
  if (!a.config_path.empty()) cfg = Config::load(a.config_path);
  SceneGrammarConfig grammar = default_grammar();
  grammar.image_h = cfg.get_int("synth.image_size", grammar.image_h);
  grammar.image_w = grammar.image_h;
  grammar.train_per_category = cfg.get_int("synth.train_per_category", grammar.train_per_category);
  grammar.test_per_category = cfg.get_int("synth.test_per_category", grammar.test_per_category);
  grammar.unlabeled_fraction = cfg.get_double("synth.unlabeled_fraction", 0.0);
  if (!grammar.blobs.empty())
    grammar.blobs[0].prob_per_image = cfg.get_double("synth.blob_prob", grammar.blobs[0].prob_per_image);

  const SynthResult data = generate_synthetic_scenes(grammar, a.seed);
  std::error_code ec;
  fs::create_directories(a.out, ec);
  if (ec || !fs::is_directory(a.out)) throw DataError("cannot create output dir: " + a.out);
  save_split(data.train, fs::path(a.out) / "train.manifest", "train");
  save_split(data.test, fs::path(a.out) / "test.manifest", "test");
  std::cout << "wrote " << data.train.size() << " train / " << data.test.size()
            << " test scenes to " << a.out << "\n";
  return 0;
}

struct TrainLocalArgs {
  std::string manifest, out;
  std::string samplers = "gs,cs,hs,tcs";
  double eta = 0.05;
  int epoch_size = 10000;
  int epochs = 10;
  int batch = 100;
  double lr = 0.01;
  double momentum = 0.9;
  int decay_every = 20;
  int input_side = 17;
  int feature_dim = 16;
  bool full_preset = false;
  std::uint64_t seed = 0;
};

int cmd_train_local(const TrainLocalArgs& a) {
  const DatasetSplit split = load_split(a.manifest);
  const int classes = class_count_of(split);
  const NetworkSpec spec = a.full_preset ? full_spec(classes)
                                         : desk_spec(classes, a.input_side, a.feature_dim);
  SamplingConfig sampler;
  sampler.epoch_size = a.epoch_size;
  sampler.eta = a.eta;
  sampler.seed = a.seed;
  TrainConfig cfg;
  cfg.learning_rate = a.lr;
  cfg.momentum = a.momentum;
  cfg.batch_size = a.batch;
  cfg.epochs = a.epochs;
  cfg.decay_every = a.decay_every;
  cfg.seed = a.seed;
  const EnsembleModel model =
      train_ensemble(split, parse_strategies(a.samplers), spec, sampler, cfg);
  save_ensemble(model, a.out);
  std::cout << "trained " << model.size() << " members, wrote " << a.out << "\n";
  return 0;
}

struct TrainMetricArgs {
  std::string manifest, model, out, out_model;
  double tau = 3.0;
  double lambda = 0.01;
  int batch = 200;
  int quota = 200;
  double lr = 1e-3;
  double lr_decay = 0.9;
  int epochs = 20;
  std::string loss_norm = "pairs";
  bool fine_tune = false;
  std::uint64_t seed = 0;
};

int cmd_train_metric(const TrainMetricArgs& a) {
  const DatasetSplit split = load_split(a.manifest);
  EnsembleModel model = load_ensemble(a.model);
  MetricLossConfig cfg;
  cfg.margin = a.tau;
  cfg.lambda = a.lambda;
  cfg.batch_size = a.batch;
  cfg.per_class_quota = a.quota;
  cfg.learning_rate = a.lr;
  cfg.lr_decay = a.lr_decay;
  cfg.epochs = a.epochs;
  cfg.seed = a.seed;
  cfg.norm = a.loss_norm == "features" ? LossNorm::Features : LossNorm::Pairs;

  MetricParams metric;
  if (a.fine_tune) {
    TrainConfig net_cfg;  // momentum only
    metric = train_metric_finetune(split, model.spec, model.members[0], cfg, net_cfg);
    if (!a.out_model.empty()) save_ensemble(model, a.out_model);
  } else {
    std::vector<Eigen::VectorXd> features;
    std::vector<int> labels;
    collect_cell_features(split, model.spec, model.members[0], features, labels);
    metric = train_metric(features, labels, model.spec.num_classes(), cfg);
  }
  save_metric(metric, a.out);
  std::cout << "wrote metric " << a.out << "\n";
  return 0;
}

struct BuildIndexArgs {
  std::string manifest, model, out;
  std::string pyramid = "1,2";
};

int cmd_build_index(const BuildIndexArgs& a) {
  const DatasetSplit split = load_split(a.manifest);
  const EnsembleModel model = load_ensemble(a.model);
  const TransferIndex index = build_index(split, model.spec, model.members[0],
                                          parse_pyramid(a.pyramid), model.spec.num_classes());
  save_index(index, a.out);
  std::cout << "indexed " << index.images.size() << " images, wrote " << a.out << "\n";
  return 0;
}

struct ParseArgs {
  std::string manifest, model, index, metric, out;
  std::string mode = "integrated";
  int exemplars = 5;
  int k = 200;
  double alpha = 15.0;
  double gamma = 5.0;
  double eta = 0.05;
  std::uint64_t seed = 0;
};

int cmd_parse(const ParseArgs& a) {
  if (a.mode != "local" && a.mode != "global" && a.mode != "integrated")
    throw ArgumentError("--mode must be local, global or integrated");
  const DatasetSplit split = load_split(a.manifest);
  const EnsembleModel model = load_ensemble(a.model);
  const int stride = model.spec.feature_stride();

  TransferIndex index;
  GlobalTransferConfig gcfg;
  if (a.mode != "local") {
    if (a.index.empty()) throw ArgumentError("--index required for global/integrated modes");
    index = load_index(a.index);
    gcfg.exemplar_count = a.exemplars;
    gcfg.k = a.k;
    gcfg.kernel = {a.alpha, a.gamma};
    gcfg.eta = a.eta;
    gcfg.seed = a.seed;
  }
  std::optional<MetricParams> metric;
  if (!a.metric.empty()) metric = load_metric(a.metric);

  std::error_code ec;
  fs::create_directories(a.out, ec);
  if (ec || !fs::is_directory(a.out)) throw DataError("cannot create output dir: " + a.out);

  char name[32];
  for (size_t i = 0; i < split.records.size(); ++i) {
    const SceneRecord& rec = split.records[i];
    EnergyMap energy;
    if (a.mode == "local") {
      energy = belief_energy(local_belief_map(model, rec.image));
    } else {
      const PixelFeatureMap feats =
          extract_features(model.spec, model.members[0], preprocess(rec.image));
      const BeliefMap global =
          global_belief_map(index, feats, gcfg, metric ? &*metric : nullptr);
      if (a.mode == "global")
        energy = belief_energy(global);
      else
        energy = integrate(local_belief_map(model, rec.image), global);
    }
    const LabelMap pred = infer_labels(energy, stride, rec.image.h, rec.image.w);
    std::snprintf(name, sizeof(name), "pred_%04zu.pgm", i);
    save_labels_pgm(pred, fs::path(a.out) / name);
  }
  std::cout << "parsed " << split.size() << " images (" << a.mode << ") into " << a.out << "\n";
  return 0;
}

struct EvalArgs {
  std::string pred, manifest, out;
};

int cmd_eval(const EvalArgs& a) {
  const DatasetSplit split = load_split(a.manifest);
  std::vector<LabelMap> predictions, ground_truth;
  char name[32];
  for (size_t i = 0; i < split.records.size(); ++i) {
    std::snprintf(name, sizeof(name), "pred_%04zu.pgm", i);
    predictions.push_back(load_labels_pgm(fs::path(a.pred) / name));
    ground_truth.push_back(split.records[i].labels);
  }
  const int classes = class_count_of(split);
  const EvalReport report = evaluate(predictions, ground_truth, classes);

  std::ostringstream text;
  text << "gpa\t" << report.gpa << "\n";
  text << "aca\t" << report.aca << "\n";
  for (int c = 0; c < classes; ++c)
    if (report.per_class_recall[c] >= 0.0)
      text << "recall." << c << "\t" << report.per_class_recall[c] << "\n";
  std::cout << text.str();
  if (!a.out.empty()) {
    std::ofstream out(a.out);
    if (!out) throw DataError("cannot open for writing: " + a.out);
    out << text.str();
    const fs::path csv = fs::path(a.out).replace_extension(".csv");
    std::ofstream cm(csv);
    for (int g = 0; g < classes; ++g) {
      for (int p = 0; p < classes; ++p) cm << report.confusion[g][p] << (p + 1 < classes ? "," : "");
      cm << "\n";
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"scene parsing with parametric local beliefs and non-parametric "
               "global label transfer"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "generate a synthetic scene dataset");
  s->add_option("--out", synth.out, "output directory")->required();
  s->add_option("--config", synth.config_path, "key=value config file");
  s->add_option("--seed", synth.seed, "generator seed");

  TrainLocalArgs tl;
  auto* t = app.add_subcommand("train-local", "train the classifier ensemble");
  t->add_option("--manifest", tl.manifest, "training split manifest")->required();
  t->add_option("--out", tl.out, "output model file")->required();
  t->add_option("--samplers", tl.samplers, "comma list of gs,cs,hs,tcs");
  t->add_option("--eta", tl.eta, "rare-class frequency threshold");
  t->add_option("--epoch-size", tl.epoch_size, "patches sampled per epoch");
  t->add_option("--epochs", tl.epochs, "training epochs");
  t->add_option("--batch", tl.batch, "batch size");
  t->add_option("--lr", tl.lr, "initial learning rate");
  t->add_option("--momentum", tl.momentum, "SGD momentum");
  t->add_option("--decay-every", tl.decay_every, "epochs between 10x lr decays");
  t->add_option("--input-side", tl.input_side, "patch side (odd)");
  t->add_option("--feature-dim", tl.feature_dim, "truncated feature width");
  t->add_flag("--full-preset", tl.full_preset, "paper-scale architecture (65x65, 64-d)");
  t->add_option("--seed", tl.seed, "training seed");

  TrainMetricArgs tm;
  auto* m = app.add_subcommand("train-metric", "learn the Mahalanobis metric");
  m->add_option("--manifest", tm.manifest, "training split manifest")->required();
  m->add_option("--model", tm.model, "trained ensemble file")->required();
  m->add_option("--out", tm.out, "output metric file")->required();
  m->add_option("--out-model", tm.out_model, "fine-tuned model output");
  m->add_option("--tau", tm.tau, "margin (> 1)");
  m->add_option("--lambda", tm.lambda, "regularization weight");
  m->add_option("--batch", tm.batch, "metric batch size");
  m->add_option("--quota", tm.quota, "per-class samples per epoch");
  m->add_option("--lr", tm.lr, "initial learning rate");
  m->add_option("--lr-decay", tm.lr_decay, "exponential decay rate");
  m->add_option("--epochs", tm.epochs, "epochs");
  m->add_option("--loss-norm", tm.loss_norm, "pairs|features")
      ->check(CLI::IsMember({"pairs", "features"}));
  m->add_flag("--fine-tune", tm.fine_tune, "backpropagate into the feature extractor");
  m->add_option("--seed", tm.seed, "seed");

  BuildIndexArgs bi;
  auto* b = app.add_subcommand("build-index", "build the retrieval index");
  b->add_option("--manifest", bi.manifest, "training split manifest")->required();
  b->add_option("--model", bi.model, "trained ensemble file")->required();
  b->add_option("--out", bi.out, "output index file")->required();
  b->add_option("--pyramid", bi.pyramid, "comma list of pyramid grid sides");

  ParseArgs pa;
  auto* p = app.add_subcommand("parse", "predict label maps");
  p->add_option("--manifest", pa.manifest, "split manifest to parse")->required();
  p->add_option("--model", pa.model, "trained ensemble file")->required();
  p->add_option("--index", pa.index, "retrieval index file");
  p->add_option("--metric", pa.metric, "learned metric file");
  p->add_option("--out", pa.out, "output directory")->required();
  p->add_option("--mode", pa.mode, "local|global|integrated")
      ->check(CLI::IsMember({"local", "global", "integrated"}));
  p->add_option("--exemplars", pa.exemplars, "|S(X)|, retrieved exemplar images");
  p->add_option("--k", pa.k, "transfer neighbors K");
  p->add_option("--alpha", pa.alpha, "feature falloff");
  p->add_option("--gamma", pa.gamma, "spatial falloff");
  p->add_option("--eta", pa.eta, "rarity threshold");
  p->add_option("--seed", pa.seed, "auxiliary sampling seed");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "score predictions against ground truth");
  e->add_option("--pred", ev.pred, "prediction directory")->required();
  e->add_option("--manifest", ev.manifest, "ground-truth manifest")->required();
  e->add_option("--out", ev.out, "report file (confusion CSV written alongside)");

  try {
    app.parse(argc, argv);
    if (s->parsed()) return cmd_synth(synth);
    if (t->parsed()) return cmd_train_local(tl);
    if (m->parsed()) return cmd_train_metric(tm);
    if (b->parsed()) return cmd_build_index(bi);
    if (p->parsed()) return cmd_parse(pa);
    if (e->parsed()) return cmd_eval(ev);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : 1;
  } catch (const ArgumentError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 1;
  } catch (const DataError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 2;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 2;
  }
  return 1;
}

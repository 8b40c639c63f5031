// pneunet command line: pretrain, train, evaluate, predict, cam, serve, plot,
// config, scan, synth.
//
// Exit codes: 0 success, 2 missing or unreadable file, 3 invalid input or
// configuration, 1 anything else.

#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "json.hpp"
#include "pneunet/checkpoint.h"
#include "pneunet/dataset.h"
#include "pneunet/error.h"
#include "pneunet/explain.h"
#include "pneunet/inference.h"
#include "pneunet/metrics.h"
#include "pneunet/service.h"
#include "pneunet/synthetic.h"
#include "pneunet/train.h"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace pneunet;

namespace {

constexpr int kExitIo = 2;
constexpr int kExitInvalid = 3;

struct Options {
  std::string config_path;
  std::string out_dir = "out";
  std::optional<std::uint64_t> seed;

  // model / train overrides
  std::optional<std::string> preset;
  std::optional<std::size_t> image_size;
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> batch_size;
  std::optional<std::string> loss;
  std::optional<double> learning_rate;
  std::optional<double> val_fraction;
  std::optional<std::size_t> patience;
  bool no_augment = false;
  bool no_early_stop = false;
  bool unfreeze = false;
  std::optional<std::size_t> samples;

  std::string data_dir;
  std::string split = "test";
  std::string backbone;
  std::string checkpoint;
  std::string image;
  std::optional<double> threshold;
  bool always_cam = false;
  double blend = 0.4;
  bool grid_csv = false;

  int port = 8080;
  std::string host = "0.0.0.0";
  std::string static_dir;

  std::string history;
  std::string roc;

  bool print_default = false;

  std::size_t n_train = 500;
  std::size_t n_test = 100;
  std::size_t n_val = 50;
  double positive_fraction = 0.5;
};

std::string read_text(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read " + path.string());
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f << text;
}

void require_file(const std::string& path, const char* what) {
  if (path.empty()) throw ConfigError(std::string("missing --") + what);
  if (!fs::exists(path)) throw IoError(std::string(what) + " not found: " + path);
}

json default_config() {
  return {{"model", ModelConfig{}.to_json()},
          {"train", TrainConfig{}.to_json()},
          {"pretrain", PretrainConfig{}.to_json()}};
}

// Config file values first, then command-line overrides.
json effective_config(const Options& o, const std::string& command) {
  json cfg = default_config();
  if (!o.config_path.empty()) {
    require_file(o.config_path, "config");
    json file;
    try {
      file = json::parse(read_text(o.config_path));
    } catch (const json::parse_error& e) {
      throw ConfigError("config file: " + std::string(e.what()));
    }
    if (!file.is_object()) throw ConfigError("config file must hold a JSON object");
    cfg.merge_patch(file);
  }
  json& m = cfg["model"];
  json& t = cfg["train"];
  json& p = cfg["pretrain"];
  if (o.preset) m["backbone_preset"] = *o.preset;
  if (o.image_size) m["input_shape"] = {m["input_shape"][0], *o.image_size, *o.image_size};
  if (o.threshold) m["threshold"] = *o.threshold;
  // seed, epochs, batch size and lr go to the running command's section;
  // `config` applies them to both.
  const bool to_train = command != "pretrain";
  const bool to_pretrain = command == "pretrain" || command == "config";
  if (o.seed) {
    if (to_train) t["seed"] = *o.seed;
    if (to_pretrain) p["seed"] = *o.seed;
  }
  if (o.epochs) {
    if (to_train) t["max_epochs"] = *o.epochs;
    if (to_pretrain) p["epochs"] = *o.epochs;
  }
  if (o.batch_size) {
    if (to_train) t["batch_size"] = *o.batch_size;
    if (to_pretrain) p["batch_size"] = *o.batch_size;
  }
  if (o.learning_rate) {
    if (to_train) t["optimizer"]["learning_rate"] = *o.learning_rate;
    if (to_pretrain) p["optimizer"]["learning_rate"] = *o.learning_rate;
  }
  if (o.loss) t["loss"] = *o.loss;
  if (o.val_fraction) t["val_fraction"] = *o.val_fraction;
  if (o.patience) t["early_stop"]["patience"] = *o.patience;
  if (o.no_augment) t["augmentation"]["enabled"] = false;
  if (o.no_early_stop) t["early_stop"]["enabled"] = false;
  if (o.samples) p["samples"] = *o.samples;
  // Parse once to validate every section.
  ModelConfig::from_json(m);
  TrainConfig::from_json(t);
  PretrainConfig::from_json(p);
  return cfg;
}

void echo(const std::string& command, const json& cfg, std::ostream& out) {
  out << json{{"command", command}, {"config", cfg}}.dump() << std::endl;
}

fs::path out_dir(const Options& o) {
  fs::create_directories(o.out_dir);
  return o.out_dir;
}

ModelGraph load_model(const std::string& path) {
  const auto resolved = resolve_checkpoint(path.empty() ? std::nullopt : std::optional<fs::path>(path));
  if (!resolved) throw ConfigError("missing --checkpoint (or PNEUNET_CHECKPOINT)");
  if (!fs::exists(*resolved)) throw IoError("checkpoint not found: " + resolved->string());
  return load_checkpoint(*resolved);
}

int cmd_pretrain(const Options& o) {
  const json cfg = effective_config(o, "pretrain");
  echo("pretrain", cfg, std::cout);
  const ModelConfig mc = ModelConfig::from_json(cfg["model"]);
  const PretrainConfig pc = PretrainConfig::from_json(cfg["pretrain"]);
  PretrainResult r = pretrain_backbone(mc, pc);
  const fs::path path = out_dir(o) / "backbone.ckpt";
  r.backbone.metadata()["created_at"] = creation_timestamp();
  save_checkpoint(r.backbone, path);
  std::cout << json{{"backbone", path.string()},
                    {"accuracy", r.accuracy},
                    {"epoch_losses", r.epoch_losses}}
                   .dump()
            << std::endl;
  return 0;
}

int cmd_train(const Options& o) {
  require_file(o.data_dir, "data");
  if (!o.backbone.empty()) require_file(o.backbone, "backbone");
  json cfg = effective_config(o, "train");
  cfg["train"]["checkpoint_dir"] = o.out_dir;
  echo("train", cfg, std::cout);
  const ModelConfig mc = ModelConfig::from_json(cfg["model"]);
  const TrainConfig tc = TrainConfig::from_json(cfg["train"]);

  const DatasetIndex index = scan_dataset(o.data_dir);
  for (const std::string& w : index.warnings) spdlog::warn("{}", w);
  const FileSource files(index.split("train"), mc.width, mc.height);
  const MemorySource all = load_into_memory(files);
  std::optional<SubsetSource> train_set, val_holdout;
  std::optional<MemorySource> val_folder;
  if (tc.val_fraction > 0.0) {
    auto [tr, va] = holdout_split(all.size(), tc.val_fraction, tc.seed);
    train_set.emplace(all, tr);
    val_holdout.emplace(all, va);
  } else {
    std::vector<std::size_t> every(all.size());
    for (std::size_t i = 0; i < every.size(); ++i) every[i] = i;
    train_set.emplace(all, every);
    val_folder = load_into_memory(FileSource(index.split("val"), mc.width, mc.height));
  }
  const SampleSource& val = val_holdout ? static_cast<const SampleSource&>(*val_holdout)
                                        : static_cast<const SampleSource&>(*val_folder);
  spdlog::info("train {} samples, validation {} samples", train_set->size(), val.size());

  ModelGraph model = build_model(mc, tc.seed);
  if (!o.backbone.empty()) {
    const std::size_t n = transfer_weights(load_checkpoint(o.backbone), model);
    if (!o.unfreeze) freeze_backbone(model);
    spdlog::info("transferred {} backbone tensors ({})", n, o.unfreeze ? "fine-tuning" : "frozen");
  }
  model.metadata()["created_at"] = creation_timestamp();
  model.metadata()["seed"] = tc.seed;

  TrainOptions opts;
  opts.on_epoch = [](const EpochRecord& r) {
    spdlog::info("epoch {:3d} loss {:.6f} acc {:.4f} val_loss {:.6f} val_acc {:.4f} ({:.1f}s)", r.epoch,
                 r.train_loss, r.train_acc, r.val_loss, r.val_acc, r.wall_seconds);
  };
  const TrainHistory history = train(model, *train_set, val, tc, opts);
  const fs::path dir = out_dir(o);
  history.write_csv(dir / "history.csv");
  save_checkpoint(model, dir / "model.ckpt");
  std::cout << json{{"checkpoint", (dir / "model.ckpt").string()},
                    {"history", (dir / "history.csv").string()},
                    {"epochs", history.records.size()},
                    {"best_epoch", history.best_epoch},
                    {"stopped_early", history.stopped_early}}
                   .dump()
            << std::endl;
  return 0;
}

int cmd_evaluate(const Options& o) {
  require_file(o.data_dir, "data");
  ModelGraph model = load_model(o.checkpoint);
  const double threshold = o.threshold.value_or(model.config().threshold);
  echo("evaluate", {{"checkpoint", o.checkpoint}, {"data", o.data_dir}, {"split", o.split},
                    {"threshold", threshold}, {"model", model.config().to_json()}},
       std::cout);
  const DatasetIndex index = scan_dataset(o.data_dir);
  const FileSource files(index.split(o.split), model.config().width, model.config().height);
  const std::vector<float> probs = predict_source(model, files);
  std::vector<double> scores(probs.begin(), probs.end());
  std::vector<int> labels;
  for (std::size_t i = 0; i < files.size(); ++i) labels.push_back(files.label(i));
  const EvalReport report = make_report(scores, labels, threshold);
  export_report(report, out_dir(o));
  std::cout << report.to_json().dump() << std::endl;
  return 0;
}

int cmd_predict(const Options& o) {
  require_file(o.image, "image");
  const InferenceEngine engine(load_model(o.checkpoint));
  echo("predict", {{"checkpoint", o.checkpoint}, {"image", o.image}, {"threshold", o.threshold.value_or(engine.model().config().threshold)},
                   {"always_cam", o.always_cam}},
       std::cerr);
  std::cout << engine.predict(read_image(o.image), o.threshold, o.always_cam).to_json().dump()
            << std::endl;
  return 0;
}

int cmd_cam(const Options& o) {
  require_file(o.image, "image");
  const InferenceEngine engine(load_model(o.checkpoint));
  echo("cam", {{"checkpoint", o.checkpoint}, {"image", o.image}, {"blend", o.blend}}, std::cout);
  const ImageBuffer image = read_image(o.image);
  const ModelConfig& mc = engine.model().config();
  const ImageBuffer resized = resize_bilinear(image, mc.width, mc.height);
  const CamResult cam = grad_cam(engine.model(), to_tensor(resized, mc.channels));
  const fs::path dir = out_dir(o);
  const std::string stem = fs::path(o.image).stem().string();
  const fs::path png = dir / (stem + "_cam.png");
  write_image(png, render_overlay(resized, cam.heatmap.upsampled, o.blend));
  json result{{"overlay", png.string()}, {"probability", cam.probability}, {"logit", cam.logit}};
  if (o.grid_csv) {
    const fs::path csv = dir / (stem + "_cam.csv");
    write_text(csv, cam.heatmap.grid_csv());
    result["grid_csv"] = csv.string();
  }
  std::cout << result.dump() << std::endl;
  return 0;
}

Service* g_service = nullptr;

void on_signal(int) {
  if (g_service) g_service->stop();
}

int cmd_serve(const Options& o) {
  const auto ckpt = resolve_checkpoint(o.checkpoint.empty() ? std::nullopt
                                                            : std::optional<fs::path>(o.checkpoint));
  std::shared_ptr<const InferenceEngine> engine;
  if (ckpt) {
    if (!fs::exists(*ckpt)) throw IoError("checkpoint not found: " + ckpt->string());
    engine = std::make_shared<InferenceEngine>(load_checkpoint(*ckpt));
  }
  ServiceConfig sc{o.host, o.port, o.threshold, std::nullopt};
  if (!o.static_dir.empty()) {
    if (!fs::is_directory(o.static_dir)) throw IoError("static directory not found: " + o.static_dir);
    sc.static_dir = o.static_dir;
  }
  echo("serve", {{"checkpoint", ckpt ? json(ckpt->string()) : json(nullptr)}, {"host", o.host},
                 {"port", o.port}, {"threshold", o.threshold ? json(*o.threshold) : json(nullptr)},
                 {"static_dir", o.static_dir}},
       std::cout);
  Service service(engine, sc);
  const int port = service.bind();
  g_service = &service;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  spdlog::info("listening on {}:{} (model {})", o.host, port, engine ? engine->version() : "not loaded");
  service.run();
  g_service = nullptr;
  return 0;
}

int cmd_plot(const Options& o) {
  echo("plot", {{"history", o.history}, {"roc", o.roc}, {"out_dir", o.out_dir}}, std::cout);
  if (o.history.empty() && o.roc.empty()) throw ConfigError("plot needs --history and/or --roc");
  const fs::path dir = out_dir(o);
  json written = json::array();
  if (!o.history.empty()) {
    require_file(o.history, "history");
    const TrainHistory h = TrainHistory::read_csv(o.history);
    Series tl{"train"}, vl{"validation"}, ta{"train"}, va{"validation"};
    for (const EpochRecord& r : h.records) {
      const double e = static_cast<double>(r.epoch);
      tl.x.push_back(e), tl.y.push_back(r.train_loss);
      vl.x.push_back(e), vl.y.push_back(r.val_loss);
      ta.x.push_back(e), ta.y.push_back(r.train_acc);
      va.x.push_back(e), va.y.push_back(r.val_acc);
    }
    write_text(dir / "loss.svg", render_svg_chart("Train vs validation loss", "epoch", "loss", {tl, vl}));
    write_text(dir / "accuracy.svg",
               render_svg_chart("Train vs validation accuracy", "epoch", "accuracy", {ta, va}));
    written.push_back((dir / "loss.svg").string());
    written.push_back((dir / "accuracy.svg").string());
  }
  if (!o.roc.empty()) {
    require_file(o.roc, "roc");
    const std::vector<RocPoint> curve = roc_from_csv(read_text(o.roc));
    Series roc{"ROC (AUC " + std::to_string(auc(curve)).substr(0, 5) + ")"};
    for (const RocPoint& p : curve) roc.x.push_back(p.fpr), roc.y.push_back(p.tpr);
    Series chance{"chance", {0.0, 1.0}, {0.0, 1.0}};
    write_text(dir / "roc.svg", render_svg_chart("ROC curve", "false positive rate",
                                                 "true positive rate", {roc, chance}));
    written.push_back((dir / "roc.svg").string());
  }
  std::cout << json{{"written", written}}.dump() << std::endl;
  return 0;
}

int cmd_config(const Options& o) {
  if (o.print_default) {
    std::cout << default_config().dump(2) << std::endl;
  } else {
    std::cout << effective_config(o, "config").dump(2) << std::endl;
  }
  return 0;
}

int cmd_scan(const Options& o) {
  require_file(o.data_dir, "data");
  const DatasetIndex index = scan_dataset(o.data_dir);
  for (const std::string& w : index.warnings) spdlog::warn("{}", w);
  std::cout << index.summary().dump(2) << std::endl;
  return 0;
}

int cmd_synth(const Options& o) {
  BlobTaskConfig bc;
  bc.positive_fraction = o.positive_fraction;
  const std::uint64_t seed = o.seed.value_or(0);
  echo("synth", {{"out_dir", o.out_dir}, {"train", o.n_train}, {"test", o.n_test}, {"val", o.n_val},
                 {"positive_fraction", o.positive_fraction}, {"seed", seed}},
       std::cout);
  write_blob_dataset(o.out_dir, bc, o.n_train, o.n_test, o.n_val, seed);
  std::cout << scan_dataset(o.out_dir).summary().dump() << std::endl;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  // Logs go to stderr so that stdout carries only JSON.
  spdlog::set_default_logger(spdlog::stderr_color_mt("pneunet"));
  spdlog::set_pattern("[%H:%M:%S] %^%l%$ %v");

  Options o;
  CLI::App app{"PneuNet: chest X-ray pneumonia classifier with class activation maps"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  auto add_common = [&](CLI::App* c) {
    c->add_option("--config", o.config_path, "JSON config file");
    c->add_option("--out-dir", o.out_dir, "artifact directory")->capture_default_str();
    c->add_option("--seed", o.seed, "random seed");
  };
  auto add_model = [&](CLI::App* c) {
    c->add_option("--preset", o.preset, "backbone preset (tiny, small)");
    c->add_option("--image-size", o.image_size, "square input resolution");
  };

  auto* pretrain = app.add_subcommand("pretrain", "pretrain a backbone on the synthetic shape task");
  add_common(pretrain);
  add_model(pretrain);
  pretrain->add_option("--epochs", o.epochs);
  pretrain->add_option("--batch-size", o.batch_size);
  pretrain->add_option("--samples", o.samples, "synthetic training images");
  pretrain->add_option("--lr", o.learning_rate);

  auto* train_cmd = app.add_subcommand("train", "train the classifier on a dataset directory");
  add_common(train_cmd);
  add_model(train_cmd);
  train_cmd->add_option("--data", o.data_dir, "dataset root")->required();
  train_cmd->add_option("--backbone", o.backbone, "pretrained backbone checkpoint (frozen)");
  train_cmd->add_flag("--unfreeze", o.unfreeze, "fine-tune the transferred backbone");
  train_cmd->add_option("--epochs", o.epochs);
  train_cmd->add_option("--batch-size", o.batch_size);
  train_cmd->add_option("--loss", o.loss, "focal or bce");
  train_cmd->add_option("--lr", o.learning_rate);
  train_cmd->add_option("--val-fraction", o.val_fraction, "0 uses the val folder");
  train_cmd->add_option("--patience", o.patience);
  train_cmd->add_flag("--no-augment", o.no_augment);
  train_cmd->add_flag("--no-early-stop", o.no_early_stop);

  auto* evaluate = app.add_subcommand("evaluate", "write report.json and roc.csv for a split");
  add_common(evaluate);
  evaluate->add_option("--checkpoint", o.checkpoint);
  evaluate->add_option("--data", o.data_dir, "dataset root")->required();
  evaluate->add_option("--split", o.split)->check(CLI::IsMember({"train", "test", "val"}));
  evaluate->add_option("--threshold", o.threshold);

  auto* predict_cmd = app.add_subcommand("predict", "classify one image, JSON on stdout");
  predict_cmd->add_option("--checkpoint", o.checkpoint);
  predict_cmd->add_option("--image", o.image)->required();
  predict_cmd->add_option("--threshold", o.threshold);
  predict_cmd->add_flag("--always-cam", o.always_cam);

  auto* cam = app.add_subcommand("cam", "write a Grad-CAM overlay PNG");
  add_common(cam);
  cam->add_option("--checkpoint", o.checkpoint);
  cam->add_option("--image", o.image)->required();
  cam->add_option("--blend", o.blend)->capture_default_str();
  cam->add_flag("--grid-csv", o.grid_csv, "also dump the feature-resolution grid");

  auto* serve = app.add_subcommand("serve", "run the HTTP inference service");
  serve->add_option("--checkpoint", o.checkpoint);
  serve->add_option("--port", o.port)->capture_default_str();
  serve->add_option("--host", o.host)->capture_default_str();
  serve->add_option("--threshold", o.threshold);
  serve->add_option("--static-dir", o.static_dir);

  auto* plot = app.add_subcommand("plot", "render history.csv / roc.csv as SVG");
  plot->add_option("--history", o.history);
  plot->add_option("--roc", o.roc);
  plot->add_option("--out-dir", o.out_dir)->capture_default_str();

  auto* config = app.add_subcommand("config", "print the effective or default configuration");
  add_common(config);
  add_model(config);
  config->add_flag("--print-default", o.print_default);

  auto* scan = app.add_subcommand("scan", "summarise a dataset directory");
  scan->add_option("--data", o.data_dir)->required();

  auto* synth = app.add_subcommand("synth", "write a synthetic blob dataset");
  synth->add_option("--out-dir", o.out_dir)->capture_default_str();
  synth->add_option("--seed", o.seed);
  synth->add_option("--train", o.n_train)->capture_default_str();
  synth->add_option("--test", o.n_test)->capture_default_str();
  synth->add_option("--val", o.n_val)->capture_default_str();
  synth->add_option("--positive-fraction", o.positive_fraction)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitInvalid;
  }

  try {
    if (*pretrain) return cmd_pretrain(o);
    if (*train_cmd) return cmd_train(o);
    if (*evaluate) return cmd_evaluate(o);
    if (*predict_cmd) return cmd_predict(o);
    if (*cam) return cmd_cam(o);
    if (*serve) return cmd_serve(o);
    if (*plot) return cmd_plot(o);
    if (*config) return cmd_config(o);
    if (*scan) return cmd_scan(o);
    if (*synth) return cmd_synth(o);
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return kExitIo;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return kExitInvalid;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 1;
  }
  return 1;
}

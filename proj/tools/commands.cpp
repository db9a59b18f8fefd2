#include "commands.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "rtaformer/data.hpp"
#include "rtaformer/errors.hpp"

namespace rtaformer::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void reject_unknown(const json& section, const std::string& where,
                    const std::set<std::string>& known) {
  if (!section.is_object()) throw ConfigError("config section '" + where + "' must be an object");
  for (const auto& [key, _] : section.items()) {
    if (!known.count(key)) throw ConfigError("unknown key '" + key + "' in config section '" + where + "'");
  }
}

template <typename T>
void read_if(const json& j, const char* key, T& out) {
  if (j.contains(key) && !j.at(key).is_null()) out = j.at(key).get<T>();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IngestionError("cannot write " + path.string());
  out << text;
}

struct Datasets {
  std::vector<SegSample> train;
  std::vector<std::pair<std::string, std::vector<SegSample>>> test;
};

Datasets load_data(const RunConfig& config, const fs::path& data_root, bool need_train) {
  if (!data_root.empty() && !fs::is_directory(data_root)) {
    throw IngestionError("data root " + data_root.string() + " does not exist");
  }
  Datasets d;
  if (config.data.toy) {
    const auto& t = *config.data.toy;
    d.train = make_toy_set(t.n, t.size, t.seed);
    d.test.emplace_back("toy", d.train);
    return d;
  }
  if (data_root.empty()) throw IngestionError("no --data-root given and no toy data configured");
  if (need_train) {
    for (const auto& name : config.data.train) {
      auto part = load_split(data_root, name, "train");
      d.train.insert(d.train.end(), std::make_move_iterator(part.begin()),
                     std::make_move_iterator(part.end()));
    }
  }
  for (const auto& name : config.data.test) d.test.emplace_back(name, load_split(data_root, name, "test"));
  return d;
}

std::vector<MetricReport> score(RtaFormer& model, const Datasets& data, const RunConfig& config) {
  std::vector<MetricReport> out;
  for (const auto& [name, samples] : data.test) {
    out.push_back(evaluate(model, samples, config.data.threshold, config.model.image_size, name));
  }
  return out;
}

json metrics_json(const std::vector<MetricReport>& metrics) {
  json arr = json::array();
  for (const auto& m : metrics) arr.push_back(json::parse(m.to_json()));
  return arr;
}

}  // namespace

RunConfig RunConfig::parse(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  RunConfig c;
  try {
    reject_unknown(j, "<root>", {"model", "train", "data", "seed"});
    read_if(j, "seed", c.seed);
    if (j.contains("model")) {
      const auto& m = j.at("model");
      reject_unknown(m, "model", {"preset", "variant", "c_common", "image_size",
                                  "share_stage_weights", "freeze_backbone"});
      json mj = m;
      mj["seed"] = c.seed;
      c.model = ModelConfig::from_json(mj.dump());
    }
    if (j.contains("train")) {
      const auto& t = j.at("train");
      reject_unknown(t, "train", {"lr", "weight_decay", "batch_size", "epochs", "scales",
                                  "max_steps", "grad_clip", "deterministic", "device"});
      read_if(t, "lr", c.train.lr);
      read_if(t, "weight_decay", c.train.weight_decay);
      read_if(t, "batch_size", c.train.batch_size);
      read_if(t, "epochs", c.train.epochs);
      read_if(t, "scales", c.train.scales);
      read_if(t, "max_steps", c.train.max_steps);
      read_if(t, "deterministic", c.train.deterministic);
      read_if(t, "device", c.train.device);
      if (t.contains("grad_clip") && !t.at("grad_clip").is_null()) {
        c.train.grad_clip = t.at("grad_clip").get<double>();
      }
    }
    if (j.contains("data")) {
      const auto& d = j.at("data");
      reject_unknown(d, "data", {"train", "test", "threshold", "toy"});
      read_if(d, "train", c.data.train);
      read_if(d, "test", c.data.test);
      read_if(d, "threshold", c.data.threshold);
      if (d.contains("toy") && !d.at("toy").is_null()) {
        const auto& t = d.at("toy");
        reject_unknown(t, "data.toy", {"n", "size", "seed"});
        ToyData toy;
        read_if(t, "n", toy.n);
        read_if(t, "size", toy.size);
        read_if(t, "seed", toy.seed);
        c.data.toy = toy;
      }
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad config value: ") + e.what());
  }
  c.model.seed = c.seed;
  c.train.seed = c.seed;
  c.train.image_size = c.model.image_size;
  c.train.validate();
  if (!(c.data.threshold > 0.0 && c.data.threshold < 1.0)) {
    throw ConfigError("data.threshold must lie in (0, 1)");
  }
  return c;
}

RunConfig RunConfig::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::string RunConfig::to_json() const {
  json j;
  j["seed"] = seed;
  j["model"] = json::parse(model.to_json());
  j["model"].erase("seed");
  j["train"] = {{"lr", train.lr},
                {"weight_decay", train.weight_decay},
                {"batch_size", train.batch_size},
                {"epochs", train.epochs},
                {"scales", train.scales},
                {"max_steps", train.max_steps},
                {"grad_clip", train.grad_clip ? json(*train.grad_clip) : json(nullptr)},
                {"deterministic", train.deterministic},
                {"device", train.device}};
  j["data"] = {{"train", data.train}, {"test", data.test}, {"threshold", data.threshold}};
  if (data.toy) j["data"]["toy"] = {{"n", data.toy->n}, {"size", data.toy->size}, {"seed", data.toy->seed}};
  return j.dump(2);
}

RunConfig resolve(const Options& options) {
  RunConfig c = options.config.empty() ? RunConfig::parse("{}") : RunConfig::load(options.config);
  if (options.seed) {
    c.seed = *options.seed;
    c.model.seed = c.seed;
    c.train.seed = c.seed;
  }
  if (options.deterministic) c.train.deterministic = true;
  if (options.preset) c.model.preset = preset_from_string(*options.preset);
  if (options.variant) c.model.variant = variant_from_string(*options.variant);
  if (options.device) c.train.device = *options.device;
  if (c.model.variant != Variant::HfsRta) c.model.share_stage_weights = false;
  c.model.validate();
  return c;
}

TrainOutcome run_train(const RunConfig& config, const fs::path& data_root, const fs::path& out_dir,
                       std::ostream& log) {
  auto data = load_data(config, data_root, true);
  fs::create_directories(out_dir);
  if (config.train.deterministic) set_deterministic(true);
  auto model = build(config.model);
  log << "training " << to_string(config.model.preset) << "/" << to_string(config.model.variant)
      << " on " << data.train.size() << " images, " << count_parameters(*model)
      << " parameters\n";

  TrainOutcome outcome;
  outcome.result = train(model, data.train, config.train);
  for (const auto& r : outcome.result.history) {
    if (r.epoch == 1 || r.epoch % 10 == 0 ||
        r.epoch == outcome.result.history.back().epoch) {
      log << "  epoch " << r.epoch << " mean loss " << r.mean_loss << "\n";
    }
  }
  outcome.metrics = score(model, data, config);
  for (const auto& m : outcome.metrics) log << "  " << m.to_json() << "\n";

  outcome.checkpoint = out_dir / "checkpoint.rtaw";
  save_checkpoint(model, outcome.checkpoint);
  write_loss_history(out_dir / "loss_history.jsonl", outcome.result.history);
  write_text(out_dir / "metrics.json", metrics_json(outcome.metrics).dump(2) + "\n");
  write_text(out_dir / "config.json", config.to_json() + "\n");
  return outcome;
}

std::vector<MetricReport> run_evaluate(const fs::path& checkpoint, const RunConfig& config,
                                       const fs::path& data_root, const fs::path& out_dir,
                                       std::ostream& log) {
  if (!fs::exists(checkpoint)) throw IngestionError("checkpoint " + checkpoint.string() + " does not exist");
  auto model = load_checkpoint(checkpoint);
  auto data = load_data(config, data_root, false);
  RunConfig scored = config;
  scored.model.image_size = model->config().image_size;
  auto metrics = score(model, data, scored);
  for (const auto& m : metrics) log << m.to_json() << "\n";
  fs::create_directories(out_dir);
  write_text(out_dir / "metrics.json", metrics_json(metrics).dump(2) + "\n");
  return metrics;
}

std::vector<AblationRow> run_ablation(const RunConfig& config, const fs::path& data_root,
                                      const fs::path& out_dir, std::ostream& log) {
  fs::create_directories(out_dir);
  std::vector<AblationRow> rows;
  for (Variant v : kAllVariants) {
    RunConfig c = config;
    c.model.variant = v;
    if (v != Variant::HfsRta) c.model.share_stage_weights = false;
    auto outcome = run_train(c, data_root, out_dir / to_string(v), log);
    auto model = load_checkpoint(outcome.checkpoint);
    AblationRow row;
    row.variant = v;
    row.hfs = v != Variant::Base;
    row.ra = v == Variant::HfsRa;
    row.rta = v == Variant::HfsRta;
    row.reverse_attention_sublayers = model->reverse_attention_sublayers();
    row.metrics = outcome.metrics;
    rows.push_back(std::move(row));
  }

  json j = json::array();
  std::ostringstream md;
  md << "| Variant | HFS | RA | RTA |";
  for (const auto& m : rows.front().metrics) md << " " << m.dataset << " DICE | " << m.dataset << " mIoU |";
  md << "\n|---|---|---|---|";
  for (size_t i = 0; i < rows.front().metrics.size(); ++i) md << "---|---|";
  md << "\n";
  for (const auto& r : rows) {
    auto mark = [](bool b) { return b ? "✓" : " "; };
    md << "| " << to_string(r.variant) << " | " << mark(r.hfs) << " | " << mark(r.ra) << " | "
       << mark(r.rta) << " |";
    for (const auto& m : r.metrics) {
      md << std::fixed << std::setprecision(4) << " " << m.dice << " | " << m.miou << " |";
    }
    md << "\n";
    j.push_back({{"variant", to_string(r.variant)},
                 {"hfs", r.hfs},
                 {"ra", r.ra},
                 {"rta", r.rta},
                 {"reverse_attention_sublayers", r.reverse_attention_sublayers},
                 {"metrics", metrics_json(r.metrics)}});
  }
  write_text(out_dir / "ablation.json", j.dump(2) + "\n");
  write_text(out_dir / "ablation.md", md.str());
  log << md.str();
  return rows;
}

std::vector<ParamRow> run_params(const std::vector<ModelPreset>& presets) {
  std::vector<ParamRow> rows;
  for (ModelPreset p : presets) {
    ModelConfig mc;
    mc.preset = p;
    mc.variant = Variant::HfsRta;
    ParamRow row;
    row.preset = p;
    {
      auto model = build(mc);
      row.counted = count_parameters(*model);
    }
    row.published_millions = published_parameters_millions(p);
    if (row.published_millions) {
      const double published = *row.published_millions * 1e6;
      row.deviation_percent = 100.0 * (static_cast<double>(row.counted) - published) / published;
      row.within_tolerance = std::abs(*row.deviation_percent) <= 10.0;
    }
    rows.push_back(row);
  }
  return rows;
}

void print_params(const std::vector<ParamRow>& rows, std::ostream& out) {
  out << std::left << std::setw(8) << "preset" << std::right << std::setw(14) << "counted"
      << std::setw(12) << "counted(M)" << std::setw(14) << "published(M)" << std::setw(12)
      << "deviation" << "  status\n";
  for (const auto& r : rows) {
    out << std::left << std::setw(8) << to_string(r.preset) << std::right << std::setw(14)
        << r.counted << std::setw(12) << std::fixed << std::setprecision(2)
        << static_cast<double>(r.counted) / 1e6;
    if (r.published_millions) {
      out << std::setw(14) << std::setprecision(1) << *r.published_millions << std::setw(11)
          << std::showpos << std::setprecision(1) << *r.deviation_percent << "%" << std::noshowpos
          << "  " << (r.within_tolerance ? "ok" : "OUTSIDE +-10%");
    } else {
      out << std::setw(14) << "-" << std::setw(12) << "-" << "  pinned";
    }
    out << "\n";
  }
}

std::vector<GradCamOutput> run_gradcam(const GradCamOptions& options, std::ostream& log) {
  if (!fs::exists(options.checkpoint)) {
    throw IngestionError("checkpoint " + options.checkpoint.string() + " does not exist");
  }
  std::vector<std::string> layers = options.layers.empty() ? gradcam_layers() : options.layers;
  auto model = load_checkpoint(options.checkpoint);
  const int64_t size = model->config().image_size;
  const Normalization norm;

  SegSample sample;
  sample.id = options.image.stem().string();
  sample.image = norm.apply(read_rgb(options.image));
  sample.mask = options.mask ? read_mask(*options.mask)
                             : torch::zeros({1, sample.image.size(1), sample.image.size(2)});
  auto resized = resize_pair(sample, size);
  const auto rgb01 = norm.invert(resized.image);
  auto reference = options.mask ? std::optional<torch::Tensor>(resized.mask) : std::nullopt;

  std::vector<GradCamOutput> outputs;
  json j = json::array();
  for (int level : options.levels) {
    auto maps = grad_cam(model, resized.image, level, layers, reference);
    const fs::path dir = options.out_dir / ("level" + std::to_string(level));
    fs::create_directories(dir);
    for (const auto& m : maps) {
      GradCamOutput o;
      o.level = level;
      o.layer = m.layer;
      o.heatmap = dir / (m.layer + ".png");
      o.overlay = dir / (m.layer + "_overlay.png");
      o.shape = m.heatmap.sizes().vec();
      o.min = m.heatmap.min().item<double>();
      o.max = m.heatmap.max().item<double>();
      o.focus = m.focus;
      write_heatmap(o.heatmap, m.heatmap);
      write_overlay(o.overlay, m.heatmap, rgb01);
      j.push_back({{"level", level},
                   {"layer", o.layer},
                   {"shape", o.shape},
                   {"min", o.min},
                   {"max", o.max},
                   {"interior_fraction", o.focus.interior_fraction},
                   {"boundary_fraction", o.focus.boundary_fraction},
                   {"centroid_radius", o.focus.centroid_radius}});
      log << "level " << level << " " << o.layer << " " << shape_string(o.shape)
          << " interior " << std::setprecision(3) << o.focus.interior_fraction << " boundary "
          << o.focus.boundary_fraction << " centroid radius " << o.focus.centroid_radius << "\n";
      outputs.push_back(std::move(o));
    }
  }
  fs::create_directories(options.out_dir);
  write_text(options.out_dir / "gradcam.json", j.dump(2) + "\n");
  return outputs;
}

void write_toy_dataset(const ToyData& toy, const fs::path& dir) {
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "masks");
  const Normalization norm;
  for (const auto& s : make_toy_set(toy.n, toy.size, toy.seed, norm)) {
    write_png(dir / "images" / (s.id + ".png"), norm.invert(s.image));
    write_png(dir / "masks" / (s.id + ".png"), s.mask);
  }
}

// ---------------------------------------------------------------------------

namespace {

void add_common(CLI::App* sub, Options& o) {
  sub->add_option("--config", o.config, "JSON run configuration");
  sub->add_option("--data-root", o.data_root, "directory holding the benchmark datasets");
  sub->add_option("--out-dir", o.out_dir, "artifact directory");
  sub->add_option("--seed", o.seed, "seed for model init, shuffling and scale draws");
  sub->add_flag("--deterministic", o.deterministic, "deterministic kernels, one thread");
  sub->add_option("--preset", o.preset, "T, S, M, L or TINY");
  sub->add_option("--variant", o.variant, "base, hfs, hfs+ra or hfs+rta");
  sub->add_option("--device", o.device, "torch device, e.g. cpu or cuda:0");
}

}  // namespace

int main_entry(int argc, char** argv) {
  CLI::App app{"rtaformer: polyp segmentation training, evaluation and visualization"};
  app.require_subcommand(1);

  Options train_opts, eval_opts, ablate_opts;
  auto* train_cmd = app.add_subcommand("train", "train a model and write a checkpoint");
  add_common(train_cmd, train_opts);

  fs::path eval_ckpt;
  auto* eval_cmd = app.add_subcommand("evaluate", "score a checkpoint on the test sets");
  add_common(eval_cmd, eval_opts);
  eval_cmd->add_option("--checkpoint", eval_ckpt, "checkpoint archive")->required();

  auto* ablate_cmd = app.add_subcommand("ablate", "train and score the four ablation variants");
  add_common(ablate_cmd, ablate_opts);

  GradCamOptions cam;
  std::vector<std::string> cam_levels{"1"};
  Options cam_opts;
  auto* cam_cmd = app.add_subcommand("gradcam", "Grad-CAM heatmaps of the reverse-block bottlenecks");
  cam_cmd->add_option("--checkpoint", cam.checkpoint, "checkpoint archive")->required();
  cam_cmd->add_option("--image", cam.image, "input image")->required();
  cam_cmd->add_option("--mask", cam.mask, "optional ground-truth mask for focus statistics");
  cam_cmd->add_option("--out-dir", cam.out_dir, "artifact directory");
  cam_cmd->add_option("--level", cam_levels, "reverse block level(s) 1..3, or 'all'");
  cam_cmd->add_option("--layer", cam.layers, "bottleneck1.0 .. bottleneck2.2 (default: all six)");
  cam_cmd->add_option("--seed", cam_opts.seed, "unused; accepted for flag uniformity");
  cam_cmd->add_flag("--deterministic", cam_opts.deterministic, "deterministic kernels, one thread");
  cam_cmd->add_option("--device", cam_opts.device, "unused; Grad-CAM runs on cpu");

  ToyData toy;
  fs::path toy_out = "toy";
  std::string toy_name = "toy";
  auto* toy_cmd = app.add_subcommand("make-toy", "write the synthetic set as <out>/<name>/{images,masks}");
  toy_cmd->add_option("--out-dir", toy_out, "dataset root to write");
  toy_cmd->add_option("--name", toy_name, "dataset directory name");
  toy_cmd->add_option("--n", toy.n, "number of images");
  toy_cmd->add_option("--size", toy.size, "side length, a multiple of 32");
  toy_cmd->add_option("--seed", toy.seed, "generator seed");

  std::vector<std::string> param_presets;
  auto* params_cmd = app.add_subcommand("params", "parameter counts against the published sizes");
  params_cmd->add_option("--presets", param_presets, "subset of T S M L TINY");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*train_cmd) {
      run_train(resolve(train_opts), train_opts.data_root, train_opts.out_dir, std::cout);
    } else if (*eval_cmd) {
      run_evaluate(eval_ckpt, resolve(eval_opts), eval_opts.data_root, eval_opts.out_dir, std::cout);
    } else if (*ablate_cmd) {
      run_ablation(resolve(ablate_opts), ablate_opts.data_root, ablate_opts.out_dir, std::cout);
    } else if (*cam_cmd) {
      if (cam_opts.deterministic) set_deterministic(true);
      cam.levels.clear();
      for (const auto& l : cam_levels) {
        if (l == "all") {
          cam.levels.insert(cam.levels.end(), {1, 2, 3});
        } else {
          cam.levels.push_back(std::stoi(l));
        }
      }
      run_gradcam(cam, std::cout);
    } else if (*toy_cmd) {
      write_toy_dataset(toy, toy_out / toy_name);
    } else if (*params_cmd) {
      std::vector<ModelPreset> presets;
      for (const auto& p : param_presets) presets.push_back(preset_from_string(p));
      auto rows = presets.empty() ? run_params() : run_params(presets);
      print_params(rows, std::cout);
    }
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::runtime_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace rtaformer::cli

// Copyright 2026 The StereoIRR Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Subcommands of the stereoirr tool. Kept in a header so tests can drive them in-process.

#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "stereoirr/stereoirr.hpp"

namespace stereoirr::cli {

namespace fs = std::filesystem;

enum ExitCode : int { kOk = 0, kUsage = 1, kDataError = 2, kNumericError = 3 };

// ---------------------------------------------------------------------------
// Ablation grids

struct Variant {
  std::string name;
  std::vector<std::pair<std::string, std::string>> deltas;  // expanded key, value
  int line = 0;
};

/**
 * One variant per line: a name followed by zero or more key=value deltas,
 * whitespace separated. Short keys (dma, scale, loss, width, ...) are
 * expanded. Every key is checked here so a bad grid fails before any training.
 */
inline std::vector<Variant> parse_grid(const std::string& text) {
  std::vector<Variant> out;
  std::istringstream in(text);
  std::string line;
  int no = 0;
  while (std::getline(in, line)) {
    ++no;
    if (const auto h = line.find('#'); h != std::string::npos) line.erase(h);
    std::istringstream words(line);
    Variant v;
    v.line = no;
    if (!(words >> v.name)) continue;
    if (v.name.find('=') != std::string::npos)
      throw ConfigError("grid line " + std::to_string(no) + ": variant name missing before '" + v.name + "'");
    std::string tok;
    while (words >> tok) {
      const auto eq = tok.find('=');
      if (eq == std::string::npos || eq == 0)
        throw ConfigError("grid line " + std::to_string(no) + ": expected key=value, got '" + tok + "'");
      const auto key = expand_key(tok.substr(0, eq));
      if (!Settings::known(key))
        throw ConfigError("grid line " + std::to_string(no) + ": unknown variant key '" + tok.substr(0, eq) + "'");
      if (key == "train.seed" || key == "train.perceptual_seed")
        throw ConfigError("grid line " + std::to_string(no) + ": variants must share the seed; '" + key +
                          "' cannot be varied");
      v.deltas.emplace_back(key, tok.substr(eq + 1));
    }
    for (const auto& o : out)
      if (o.name == v.name) throw ConfigError("grid line " + std::to_string(no) + ": duplicate variant " + v.name);
    out.push_back(std::move(v));
  }
  if (out.empty()) throw ConfigError("ablation grid lists no variants");
  return out;
}

/// Base settings with the variant's deltas applied and validated.
inline Settings variant_settings(const Settings& base, const Variant& v) {
  Settings s = base;
  for (const auto& [k, val] : v.deltas) {
    try {
      s.set(k, val);
    } catch (const ConfigError& e) {
      throw ConfigError("variant " + v.name + ": " + e.what());
    }
  }
  try {
    s.validate();
  } catch (const ConfigError& e) {
    throw ConfigError("variant " + v.name + ": " + e.what());
  }
  return s;
}

/// "key=value" for every setting that differs from the base, ';'-joined ("-" if none).
inline std::string changed_fields(const Settings& base, const Settings& s) {
  std::string out;
  for (const auto& k : Settings::keys())
    if (base.get(k) != s.get(k)) out += (out.empty() ? "" : ";") + k + "=" + s.get(k);
  return out.empty() ? "-" : out;
}

struct AblationRow {
  std::string variant;
  std::string changed;
  EvalSummary metrics;
  EvalSummary rainy;
  double final_loss = 0;
  std::uint64_t seed = 0;
  std::uint64_t model_seed = 0;
  Index steps = 0;
};

/**
 * Trains every variant from the same seed on `train` and evaluates it on
 * `eval`. All variants are validated before the first one runs.
 */
inline std::vector<AblationRow> run_ablation(const Settings& base, const std::vector<Variant>& grid,
                                             const std::vector<StereoSample>& train,
                                             const std::vector<StereoSample>& eval,
                                             const std::function<void(const std::string&)>& progress = {}) {
  std::vector<Settings> all;
  for (const auto& v : grid) all.push_back(variant_settings(base, v));
  if (train.empty()) throw ConfigError("ablation: no training samples");
  if (eval.empty()) throw ConfigError("ablation: no evaluation samples");
  std::vector<AblationRow> rows;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const auto& s = all[i];
    AblationRow row;
    row.variant = grid[i].name;
    row.changed = changed_fields(base, s);
    row.seed = s.train.seed;
    row.model_seed = model_seed(s.train.seed);
    StereoIrrModel<float> model(s.model, row.model_seed);
    TrainOptions opt;
    opt.on_epoch = [&](const EpochLog& e) {
      if (progress) progress(grid[i].name + " " + format_log_row(e));
    };
    const auto res = train_loop(model, train, s.train, opt);
    row.final_loss = res.log.empty() ? NAN : res.log.back().loss;
    row.steps = res.state.adam.t;
    const auto rep = evaluate(model, eval, row.variant);
    row.metrics = rep.model;
    row.rainy = rep.rainy;
    rows.push_back(std::move(row));
  }
  return rows;
}

inline std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::string out =
      "variant,changed_fields,psnr_db,ssim,psnr_left,ssim_left,psnr_right,ssim_right,final_loss,steps,seed\n";
  for (const auto& r : rows) {
    const auto& m = r.metrics;
    out += r.variant + "," + r.changed + "," + format_metric(m.total.psnr_db) + "," + format_metric(m.total.ssim) +
           "," + format_metric(m.left.psnr_db) + "," + format_metric(m.left.ssim) + "," +
           format_metric(m.right.psnr_db) + "," + format_metric(m.right.ssim) + "," + format_metric(r.final_loss) +
           "," + std::to_string(r.steps) + "," + std::to_string(r.seed) + "\n";
  }
  return out;
}

inline nlohmann::json ablation_metadata(const std::vector<AblationRow>& rows) {
  nlohmann::json j;
  bool same = true;
  for (const auto& r : rows) same = same && r.seed == rows.front().seed && r.model_seed == rows.front().model_seed;
  j["identical_seeds"] = same;
  j["seed"] = rows.empty() ? 0 : rows.front().seed;
  j["model_seed"] = rows.empty() ? 0 : rows.front().model_seed;
  j["variants"] = nlohmann::json::array();
  for (const auto& r : rows)
    j["variants"].push_back({{"variant", r.variant},
                             {"seed", r.seed},
                             {"model_seed", r.model_seed},
                             {"steps", r.steps},
                             {"rainy_psnr_db", r.rainy.total.psnr_db},
                             {"rainy_ssim", r.rainy.total.ssim}});
  return j;
}

// ---------------------------------------------------------------------------
// Helpers

inline std::string read_text(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw IoError("cannot read " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  out << text;
  if (!out) throw IoError("cannot write " + p.string());
}

inline std::vector<StereoSample> load_split(const fs::path& dir, const std::string& split) {
  if (!fs::is_directory(dir)) throw IoError("data directory " + dir.string() + " does not exist");
  auto data = load_dataset(dir, split);
  if (data.empty()) throw ConfigError("data directory " + dir.string() + " has no '" + split + "' samples");
  return data;
}

struct SettingsArgs {
  std::string config;
  std::vector<std::string> overrides;
};

inline void add_settings_options(CLI::App* app, SettingsArgs& a) {
  app->add_option("--config", a.config, "key=value configuration file");
  app->add_option("--set", a.overrides, "override one setting, key=value (repeatable; wins over --config)");
}

/// Config file first, then --set overrides in order.
inline void apply_settings(Settings& s, const SettingsArgs& a) {
  if (!a.config.empty()) apply_config_file(s, a.config);
  for (const auto& o : a.overrides) apply_override(s, o);
}

// ---------------------------------------------------------------------------
// Commands

struct GenDataArgs {
  SettingsArgs settings;
  std::string out;
  Index n_train = 0;
  Index n_test = 0;
  std::uint64_t seed = 0;
  bool force = false;
};

/// Accepts `--scene.x v`, `--scene.x=v` (and rain.*) left over from option parsing.
inline void apply_dotted_flags(Settings& s, const std::vector<std::string>& extras) {
  for (std::size_t i = 0; i < extras.size(); ++i) {
    const auto& tok = extras[i];
    if (tok.rfind("--scene.", 0) != 0 && tok.rfind("--rain.", 0) != 0)
      throw CLI::ExtrasError({tok});
    const auto eq = tok.find('=');
    if (eq != std::string::npos) {
      s.set(tok.substr(2, eq - 2), tok.substr(eq + 1));
    } else {
      if (i + 1 >= extras.size()) throw CLI::ArgumentMismatch(tok + " needs a value");
      s.set(tok.substr(2), extras[++i]);
    }
  }
}

inline int cmd_gen_data(const GenDataArgs& a, const std::vector<std::string>& extras, std::ostream& out) {
  Settings s;
  apply_settings(s, a.settings);
  apply_dotted_flags(s, extras);
  const auto manifest = build_dataset(a.out, a.n_train, a.n_test, a.seed, s.data, a.force);
  out << manifest.string() << "\n";
  return kOk;
}

struct TrainArgs {
  SettingsArgs settings;
  std::string data;
  std::string out;
  std::string resume;
};

inline int cmd_train(const TrainArgs& a, std::ostream& out) {
  Settings s;
  std::optional<Checkpoint> resume;
  if (!a.resume.empty()) {
    resume = load_checkpoint(a.resume);
    s.model = resume->model;
    s.train = resume->train;
  }
  apply_settings(s, a.settings);
  s.validate();
  const auto data = load_split(a.data, "train");
  StereoIrrModel<float> model(s.model, model_seed(s.train.seed));
  TrainOptions opt;
  opt.out_dir = a.out;
  opt.resume = resume;
  opt.on_epoch = [&](const EpochLog& e) { out << format_log_row(e) << "\n" << std::flush; };
  if (!resume) write_text(fs::path(a.out) / "config.cfg", s.dump());
  const auto res = train_loop(model, data, s.train, opt);
  out << "final checkpoint " << (fs::path(a.out) / "last.sirr").string() << " after epoch " << res.state.epoch
      << "\n";
  return kOk;
}

struct InferArgs {
  std::string ckpt, left, right, out;
};

inline int cmd_infer(const InferArgs& a, std::ostream& out) {
  const auto model = model_from_checkpoint(load_checkpoint(a.ckpt));
  const auto il = load_image(a.left), ir = load_image(a.right);
  if (il.height != ir.height || il.width != ir.width)
    throw ShapeError("left image is " + std::to_string(il.height) + "x" + std::to_string(il.width) +
                     " but right image is " + std::to_string(ir.height) + "x" + std::to_string(ir.width));
  StereoOutput<float> y;
  {
    NoGradScope<float> ng;
    y = infer(model, to_tensor<float>(il), to_tensor<float>(ir));
  }
  fs::create_directories(a.out);
  const auto pl = fs::path(a.out) / "left_derained.ppm", pr = fs::path(a.out) / "right_derained.ppm";
  save_image(pl, to_image(y.left));
  save_image(pr, to_image(y.right));
  out << pl.string() << "\n" << pr.string() << "\n";
  return kOk;
}

struct EvalArgs {
  std::string ckpt, data, out, error_maps;
  std::string split = "test";
};

inline int cmd_eval(const EvalArgs& a, std::ostream& out) {
  const auto model = model_from_checkpoint(load_checkpoint(a.ckpt));
  const auto data = load_split(a.data, a.split);
  std::function<void(const StereoSample&, const EvalOutputs&)> maps;
  if (!a.error_maps.empty()) {
    fs::create_directories(a.error_maps);
    maps = [&](const StereoSample& s, const EvalOutputs& o) {
      const fs::path d = a.error_maps;
      save_image(d / (s.id + "_left_model.ppm"), error_map(o.left, s.clean_l));
      save_image(d / (s.id + "_right_model.ppm"), error_map(o.right, s.clean_r));
      save_image(d / (s.id + "_left_rainy.ppm"), error_map(s.rainy_l, s.clean_l));
      save_image(d / (s.id + "_right_rainy.ppm"), error_map(s.rainy_r, s.clean_r));
      save_image(d / (s.id + "_left_gt.ppm"), error_map(s.clean_l, s.clean_l));
      save_image(d / (s.id + "_right_gt.ppm"), error_map(s.clean_r, s.clean_r));
    };
  }
  EvalReport rep;
  {
    NoGradScope<float> ng;
    rep = evaluate(model, data, a.split, maps);
  }
  write_text(a.out, eval_csv(rep));
  out << "total psnr_db " << format_metric(rep.model.total.psnr_db) << " ssim " << format_metric(rep.model.total.ssim)
      << " (rainy input " << format_metric(rep.rainy.total.psnr_db) << " / " << format_metric(rep.rainy.total.ssim)
      << ")\n";
  return kOk;
}

struct AblateArgs {
  SettingsArgs settings;
  std::string data, grid, out;
  std::string split = "test";
};

inline int cmd_ablate(const AblateArgs& a, std::ostream& out) {
  Settings base;
  apply_settings(base, a.settings);
  const auto grid = parse_grid(read_text(a.grid));
  for (const auto& v : grid) variant_settings(base, v);  // reject bad variants before loading data
  const auto train = load_split(a.data, "train");
  const auto eval = load_split(a.data, a.split);
  const auto rows = run_ablation(base, grid, train, eval, [&](const std::string& line) {
    out << line << "\n" << std::flush;
  });
  write_text(a.out, ablation_csv(rows));
  write_text(a.out + ".meta.json", ablation_metadata(rows).dump(2) + "\n");
  out << "wrote " << a.out << " (" << rows.size() << " variants)\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// Dispatcher

/// Runs the tool on argv-style arguments (args[0] is the program name).
inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Stereo image rain removal: data generation, training, inference, evaluation"};
  app.name(args.empty() ? "stereoirr" : fs::path(args[0]).filename().string());
  app.require_subcommand(1);

  GenDataArgs gen;
  auto* g = app.add_subcommand("gen-data", "synthesize a stereo rain dataset");
  g->add_option("--out", gen.out, "output directory")->required();
  g->add_option("--train", gen.n_train, "number of training samples")->required();
  g->add_option("--test", gen.n_test, "number of test samples")->required();
  g->add_option("--seed", gen.seed, "base seed");
  g->add_flag("--force", gen.force, "overwrite a non-empty output directory");
  add_settings_options(g, gen.settings);
  g->allow_extras();

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "train a model on the train split of a dataset");
  t->add_option("--data", tr.data, "dataset directory")->required();
  t->add_option("--out", tr.out, "output directory for logs and checkpoints")->required();
  t->add_option("--resume", tr.resume, "checkpoint to continue from");
  add_settings_options(t, tr.settings);

  InferArgs in;
  auto* i = app.add_subcommand("infer", "derain one stereo pair");
  i->add_option("--ckpt", in.ckpt, "checkpoint file")->required();
  i->add_option("--left", in.left, "left view (PPM)")->required();
  i->add_option("--right", in.right, "right view (PPM)")->required();
  i->add_option("--out", in.out, "output directory")->required();

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Y-channel PSNR/SSIM of a checkpoint on a dataset split");
  e->add_option("--ckpt", ev.ckpt, "checkpoint file")->required();
  e->add_option("--data", ev.data, "dataset directory")->required();
  e->add_option("--out", ev.out, "metrics CSV")->required();
  e->add_option("--split", ev.split, "train or test");
  e->add_option("--error-maps", ev.error_maps, "directory for error map images");

  AblateArgs ab;
  auto* a = app.add_subcommand("ablate", "train and evaluate a grid of config variants");
  a->add_option("--data", ab.data, "dataset directory")->required();
  a->add_option("--grid", ab.grid, "variant grid file")->required();
  a->add_option("--out", ab.out, "result CSV")->required();
  a->add_option("--split", ab.split, "evaluation split");
  add_settings_options(a, ab.settings);

  std::vector<std::string> rev(args.rbegin(), args.rend());
  if (!rev.empty()) rev.pop_back();
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp& ex) {
    return app.exit(ex, out, err);
  } catch (const CLI::ParseError& ex) {
    app.exit(ex, out, err);
    return kUsage;
  }

  try {
    if (g->parsed()) return cmd_gen_data(gen, g->remaining(), out);
    if (t->parsed()) return cmd_train(tr, out);
    if (i->parsed()) return cmd_infer(in, out);
    if (e->parsed()) return cmd_eval(ev, out);
    if (a->parsed()) return cmd_ablate(ab, out);
  } catch (const CLI::ParseError& ex) {
    err << "error: " << ex.what() << "\n";
    return kUsage;
  } catch (const NumericError& ex) {
    err << "numeric failure: " << ex.what() << "\n";
    return kNumericError;
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << "\n";
    return kDataError;
  }
  return kUsage;
}

}  // namespace stereoirr::cli

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

#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "stereoirr/checkpoint.hpp"
#include "stereoirr/config.hpp"
#include "stereoirr/image.hpp"
#include "stereoirr/losses.hpp"
#include "stereoirr/metrics.hpp"
#include "stereoirr/model.hpp"
#include "stereoirr/optim.hpp"
#include "stereoirr/synth.hpp"

namespace stereoirr {

struct EpochLog {
  Index epoch = 0;
  double lr = 0;
  double loss = 0;  // sample-weighted mean over the epoch's batches
  double seconds = 0;
};

inline std::string format_log_row(const EpochLog& e) {
  std::ostringstream os;
  os << e.epoch << ',' << std::setprecision(9) << e.lr << ',' << std::setprecision(9) << e.loss << ','
     << std::fixed << std::setprecision(3) << e.seconds;
  return os.str();
}

struct TrainOptions {
  /// Where train_log.csv and checkpoints go; empty keeps everything in memory.
  std::filesystem::path out_dir;
  /// Continue from this state instead of starting fresh.
  std::optional<Checkpoint> resume;
  /// Stop after this many epochs of this invocation (-1: run to cfg.epochs).
  Index max_epochs = -1;
  std::function<void(const EpochLog&)> on_epoch;
};

struct TrainResult {
  std::vector<EpochLog> log;
  Checkpoint state;
};

/// Batch of one or more samples as [N,3,h,w] tensors.
struct Batch {
  Tensor<float> rainy_l, rainy_r, clean_l, clean_r;
  std::vector<std::string> ids;
};

inline Batch make_batch(const std::vector<const StereoSample*>& samples) {
  std::vector<const ImageRGB*> xl, xr, yl, yr;
  Batch b;
  for (const auto* s : samples) {
    xl.push_back(&s->rainy_l);
    xr.push_back(&s->rainy_r);
    yl.push_back(&s->clean_l);
    yr.push_back(&s->clean_r);
    b.ids.push_back(s->id);
  }
  b.rainy_l = stack_images<float>(xl);
  b.rainy_r = stack_images<float>(xr);
  b.clean_l = stack_images<float>(yl);
  b.clean_r = stack_images<float>(yr);
  return b;
}

/// Differentiable forward of a batch with reflect padding to the model's size multiple.
inline StereoOutput<float> forward_padded(const StereoIrrModel<float>& model, const Tensor<float>& xl,
                                          const Tensor<float>& xr) {
  const Index levels = model.config().levels();
  const auto pl = pad_reflect(xl, levels);
  const auto pr = pad_reflect(xr, levels);
  const auto y = model.forward(pl.image, pr.image);
  if (pl.crop.pad_bottom == 0 && pl.crop.pad_right == 0) return y;
  return {crop_to(y.left, pl.crop), crop_to(y.right, pr.crop)};
}

/// Training loss of one batch (no tape handling).
inline Tensor<float> batch_loss(const StereoIrrModel<float>& model, const Batch& b,
                                const PerceptualExtractor<float>& ex, const TrainConfig& cfg) {
  const auto y = forward_padded(model, b.rainy_l, b.rainy_r);
  return training_loss(model.config().loss, y, b.clean_l, b.clean_r, ex, cfg.loss_weights());
}

namespace detail {

inline void write_nan_dump(const std::filesystem::path& dir, Index epoch, Index batch, const Batch& b) {
  if (dir.empty()) return;
  std::ofstream out(dir / "nan_batch.txt");
  out << "epoch " << epoch << "\nbatch " << batch << "\nsamples";
  for (const auto& id : b.ids) out << ' ' << id;
  out << '\n';
}

}  // namespace detail

/**
 * Trains `model` in place. Each epoch shuffles the samples with the trainer
 * RNG, takes one random crop per sample, and runs batches of
 * cfg.batch_size (the last batch may be smaller). Throws NumericError naming
 * the epoch and batch on a non-finite loss.
 */
inline TrainResult train_loop(StereoIrrModel<float>& model, const std::vector<StereoSample>& data,
                              const TrainConfig& cfg, const TrainOptions& opt = {}) {
  cfg.validate();
  if (data.empty()) throw ConfigError("train_loop: dataset is empty");
  const PerceptualExtractor<float> ex(cfg.perceptual_seed);

  Checkpoint st;
  if (opt.resume) {
    st = *opt.resume;
    const auto diff = diff_fields(cfg, st.train);
    // Run length and checkpoint cadence may change between invocations.
    for (const auto& f : diff)
      if (f != "train.epochs" && f != "train.checkpoint_every")
        throw ConfigError("resume: training config differs from checkpoint in " + f);
    restore_parameters(model, st);
    st.train = cfg;
  } else {
    st = make_checkpoint(model, cfg);
  }
  Rng rng(st.rng);
  const auto params = model.parameters();
  if (params.size() != st.adam.m.size()) throw ConfigError("optimizer state does not match model");

  std::ofstream log_file;
  if (!opt.out_dir.empty()) {
    std::filesystem::create_directories(opt.out_dir);
    const auto path = opt.out_dir / "train_log.csv";
    const bool append = opt.resume && std::filesystem::exists(path);
    log_file.open(path, append ? std::ios::app : std::ios::trunc);
    if (!log_file) throw IoError("cannot write " + path.string());
    if (!append) log_file << "epoch,lr,loss,seconds\n";
  }
  auto checkpoint = [&](const std::string& name) {
    if (opt.out_dir.empty()) return;
    st.params.clear();
    for (const auto& p : params) st.params.push_back({p.name, p.tensor.clone()});
    st.rng = rng.state();
    save_checkpoint(opt.out_dir / name, st);
  };

  TrainResult result;
  const auto n = static_cast<Index>(data.size());
  Index run = 0;
  for (Index epoch = st.epoch; epoch < cfg.epochs; ++epoch) {
    if (opt.max_epochs >= 0 && run >= opt.max_epochs) break;
    const auto t0 = std::chrono::steady_clock::now();
    const double lr = cfg.lr_at(epoch);
    std::vector<Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Index{0});
    rng.shuffle(order);

    double loss_sum = 0;
    Index batch_id = 0;
    for (Index start = 0; start < n; start += cfg.batch_size, ++batch_id) {
      std::vector<StereoSample> crops;
      for (Index k = start; k < std::min(n, start + cfg.batch_size); ++k) {
        const auto& s = data[static_cast<std::size_t>(order[static_cast<std::size_t>(k)])];
        crops.push_back(cfg.crop > 0 ? random_crop(s, cfg.crop, rng) : s);
      }
      std::vector<const StereoSample*> ptrs;
      for (const auto& c : crops) ptrs.push_back(&c);
      const Batch b = make_batch(ptrs);

      model.zero_grad();
      Tape<float> tape;
      Tensor<float> loss;
      {
        TapeScope<float> scope(tape);
        loss = batch_loss(model, b, ex, cfg);
      }
      if (!std::isfinite(loss.item())) {
        detail::write_nan_dump(opt.out_dir, epoch, batch_id, b);
        std::string ids;
        for (const auto& id : b.ids) ids += " " + id;
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(batch_id) + " (samples:" + ids + ")");
      }
      backward(loss, tape);
      adam_step(params, st.adam, lr, cfg.adam());
      loss_sum += static_cast<double>(loss.item()) * static_cast<double>(b.ids.size());
    }
    st.epoch = epoch + 1;
    ++run;
    const EpochLog e{epoch, lr, loss_sum / static_cast<double>(n),
                     std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()};
    result.log.push_back(e);
    if (log_file) log_file << format_log_row(e) << '\n' << std::flush;
    if (opt.on_epoch) opt.on_epoch(e);
    if (cfg.checkpoint_every > 0 && st.epoch % cfg.checkpoint_every == 0) {
      std::ostringstream name;
      name << "checkpoint_e" << std::setw(4) << std::setfill('0') << st.epoch << ".sirr";
      checkpoint(name.str());
    }
  }
  checkpoint("last.sirr");
  st.params.clear();
  for (const auto& p : params) st.params.push_back({p.name, p.tensor.clone()});
  st.rng = rng.state();
  result.state = std::move(st);
  return result;
}

// ---------------------------------------------------------------------------
// Evaluation

struct EvalRow {
  std::string dataset;
  std::string method;  // "model" or "rainy" (input baseline)
  std::string sample_id;
  std::string view;  // left, right, total
  double psnr_db = 0;
  double ssim = 0;
};

struct EvalSummary {
  QualityScore left, right, total;
};

struct EvalReport {
  std::vector<EvalRow> rows;
  EvalSummary model;
  EvalSummary rainy;
};

struct EvalOutputs {
  ImageRGB left, right;
};

inline std::string format_metric(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::ostringstream os;
  os << std::fixed << std::setprecision(6) << v;
  return os.str();
}

/// Baseline rows carry the dataset name suffixed with "/rainy".
inline std::string eval_csv(const EvalReport& r) {
  std::string out = "dataset,sample_id,view,psnr_db,ssim\n";
  for (const auto& row : r.rows)
    out += row.dataset + (row.method == "rainy" ? "/rainy" : "") + "," + row.sample_id + "," + row.view + "," +
           format_metric(row.psnr_db) + "," + format_metric(row.ssim) + "\n";
  return out;
}

/**
 * Y-channel PSNR/SSIM per sample and view for the model outputs and for the
 * rainy inputs. Summary rows (sample_id "ALL") give per-view means and
 * "total", the mean of the two view means. `on_output` receives each derained pair.
 */
inline EvalReport evaluate(const StereoIrrModel<float>& model, const std::vector<StereoSample>& data,
                           const std::string& dataset = "test",
                           const std::function<void(const StereoSample&, const EvalOutputs&)>& on_output = {}) {
  EvalReport rep;
  double sums[2][2][2] = {};  // method, view, metric
  for (const auto& s : data) {
    const auto xl = to_tensor<float>(s.rainy_l), xr = to_tensor<float>(s.rainy_r);
    const auto yl = to_tensor<float>(s.clean_l), yr = to_tensor<float>(s.clean_r);
    const auto out = infer(model, xl, xr);
    const auto pl = clamp_values(out.left, 0.f, 1.f), pr = clamp_values(out.right, 0.f, 1.f);
    const QualityScore q[2][2] = {{y_channel_quality(pl, yl), y_channel_quality(pr, yr)},
                                  {y_channel_quality(xl, yl), y_channel_quality(xr, yr)}};
    const char* methods[2] = {"model", "rainy"};
    const char* views[2] = {"left", "right"};
    for (int m = 0; m < 2; ++m)
      for (int v = 0; v < 2; ++v) {
        rep.rows.push_back({dataset, methods[m], s.id, views[v], q[m][v].psnr_db, q[m][v].ssim});
        sums[m][v][0] += q[m][v].psnr_db;
        sums[m][v][1] += q[m][v].ssim;
      }
    if (on_output) on_output(s, {to_image(pl), to_image(pr)});
  }
  const double n = std::max<double>(1.0, static_cast<double>(data.size()));
  EvalSummary* summ[2] = {&rep.model, &rep.rainy};
  const char* methods[2] = {"model", "rainy"};
  for (int m = 0; m < 2; ++m) {
    summ[m]->left = {sums[m][0][0] / n, sums[m][0][1] / n};
    summ[m]->right = {sums[m][1][0] / n, sums[m][1][1] / n};
    summ[m]->total = {(summ[m]->left.psnr_db + summ[m]->right.psnr_db) / 2,
                      (summ[m]->left.ssim + summ[m]->right.ssim) / 2};
    rep.rows.push_back({dataset, methods[m], "ALL", "left", summ[m]->left.psnr_db, summ[m]->left.ssim});
    rep.rows.push_back({dataset, methods[m], "ALL", "right", summ[m]->right.psnr_db, summ[m]->right.ssim});
    rep.rows.push_back({dataset, methods[m], "ALL", "total", summ[m]->total.psnr_db, summ[m]->total.ssim});
  }
  return rep;
}

/// Model seed used by the trainer and CLI for a given training seed.
inline std::uint64_t model_seed(std::uint64_t train_seed) { return Rng(train_seed).split("model").next_u64(); }

}  // namespace stereoirr

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

#include <gtest/gtest.h>

#include <fstream>

#include "test_support.hpp"

namespace stereoirr {
namespace {

namespace fs = std::filesystem;
using testing::bit_equal;
using testing::scratch_dir;
using testing::toy_config;

std::vector<StereoSample> tiny_data(Index n, Index size = 16, std::uint64_t base = 500) {
  std::vector<StereoSample> out;
  for (Index i = 0; i < n; ++i)
    out.push_back(make_sample(base + static_cast<std::uint64_t>(i), DataGenConfig{.height = size, .width = 2 * size},
                              "s" + std::to_string(i)));
  return out;
}

TrainConfig quick_config() {
  TrainConfig c;
  c.crop = 16;
  c.epochs = 4;
  c.milestone_every = 2;
  c.checkpoint_every = 2;
  c.seed = 3;
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

TEST(AdamTest, FirstStepClosedForm) {
  Tensor<double> w = Tensor<double>::scalar(0.0);
  w.set_requires_grad(true);
  w.zero_grad();
  auto g = w.grad();
  g[0] = 1.0;
  ParamList<double> ps{{"w", w}};
  auto st = AdamState<double>::zeros_like(ps);
  adam_step(ps, st, 0.1, AdamConfig{});
  EXPECT_NEAR(w.item(), -0.1 / (1 + 1e-8), 1e-15);
  EXPECT_NEAR(w.item(), -0.1, 1e-8);
  EXPECT_EQ(st.t, 1);
}

TEST(AdamTest, MatchesReferenceOverSeveralSteps) {
  Rng rng(1);
  Tensor<double> w({5}, 0.0);
  for (auto& v : w.data()) v = rng.uniform(-1, 1);
  std::vector<double> ref(w.data().begin(), w.data().end()), m(5, 0), v(5, 0);
  w.set_requires_grad(true);
  ParamList<double> ps{{"w", w}};
  auto st = AdamState<double>::zeros_like(ps);
  const AdamConfig cfg{0.9, 0.9, 1e-8, 0.0, 0.0};
  for (int t = 1; t <= 6; ++t) {
    w.zero_grad();
    auto g = w.grad();
    for (std::size_t i = 0; i < 5; ++i) {
      g[i] = rng.uniform(-2, 2);
      m[i] = 0.9 * m[i] + 0.1 * g[i];
      v[i] = 0.9 * v[i] + 0.1 * g[i] * g[i];
      ref[i] -= 1e-2 * (m[i] / (1 - std::pow(0.9, t))) / (std::sqrt(v[i] / (1 - std::pow(0.9, t))) + 1e-8);
    }
    adam_step(ps, st, 1e-2, cfg);
  }
  for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(w.data()[i], ref[i], 1e-14);
}

TEST(AdamTest, ZeroGradientLeavesParametersUnchanged) {
  Rng rng(2);
  Tensor<float> w({3, 4});
  for (auto& v : w.data()) v = static_cast<float>(rng.uniform(-1, 1));
  const auto before = w.clone();
  w.set_requires_grad(true);
  w.zero_grad();
  ParamList<float> ps{{"w", w}};
  auto st = AdamState<float>::zeros_like(ps);
  for (int k = 0; k < 3; ++k) adam_step(ps, st, 0.1, AdamConfig{});
  EXPECT_TRUE(bit_equal(w, before));
  EXPECT_EQ(st.t, 3);
}

TEST(AdamTest, ShapeMismatchAndClip) {
  Tensor<float> w({2}, 0.f);
  w.set_requires_grad(true);
  ParamList<float> ps{{"w", w}};
  AdamState<float> st;
  st.m.emplace_back(Shape{3});
  st.v.emplace_back(Shape{3});
  EXPECT_THROW(adam_step(ps, st, 0.1, AdamConfig{}), ShapeError);

  w.zero_grad();
  w.grad()[0] = 3;
  w.grad()[1] = 4;
  EXPECT_DOUBLE_EQ(grad_norm(ps), 5.0);
  auto s2 = AdamState<float>::zeros_like(ps);
  AdamConfig c;
  c.grad_clip = 1.0;
  adam_step(ps, s2, 0.1, c);
  EXPECT_NEAR(s2.m[0].data()[0], 0.1 * 0.6, 1e-7);
}

TEST(LrScheduleTest, StepDecay) {
  const TrainConfig c;
  EXPECT_DOUBLE_EQ(c.lr_at(0), 5e-4);
  EXPECT_DOUBLE_EQ(c.lr_at(49), 5e-4);
  EXPECT_DOUBLE_EQ(c.lr_at(50), 2.5e-4);
  EXPECT_DOUBLE_EQ(c.lr_at(199), 5e-4 / 8);
  double prev = INFINITY;
  for (Index e = 0; e < 400; ++e) {
    EXPECT_LE(c.lr_at(e), prev);
    prev = c.lr_at(e);
  }
  EXPECT_THROW(lr_schedule(-1, 1e-3, 50, 0.5), ContractError);
}

TEST(TrainLoopTest, RemainderBatchKept) {
  StereoIrrModel<float> m(toy_config(), 1);
  auto cfg = quick_config();
  cfg.epochs = 1;
  const auto data = tiny_data(2);
  const auto r = train_loop(m, data, cfg);
  EXPECT_EQ(r.state.adam.t, 1);  // one batch of two
  auto five = tiny_data(5);
  StereoIrrModel<float> m2(toy_config(), 1);
  EXPECT_EQ(train_loop(m2, five, cfg).state.adam.t, 2);  // 3 + 2
}

TEST(TrainLoopTest, FirstStepLossIsIdentityLoss) {
  StereoIrrModel<float> m(toy_config(), 2);
  auto cfg = quick_config();
  cfg.crop = 0;
  cfg.epochs = 1;
  cfg.batch_size = 4;
  const auto data = tiny_data(3);
  const PerceptualExtractor<float> ex(cfg.perceptual_seed);
  std::vector<const StereoSample*> ptrs;
  for (const auto& s : data) ptrs.push_back(&s);
  const auto b = make_batch(ptrs);
  const double identity =
      hybrid_loss(b.rainy_l, b.rainy_r, b.clean_l, b.clean_r, ex, cfg.loss_weights()).item();
  const auto r = train_loop(m, data, cfg);
  EXPECT_NEAR(r.log[0].loss, identity, 1e-6);
}

TEST(TrainLoopTest, LossDecreasesAndLogsAreWritten) {
  StereoIrrModel<float> m(toy_config(), 3);
  auto cfg = quick_config();
  cfg.crop = 0;  // full frames: the loss sees the same pixels every epoch
  cfg.epochs = 40;
  cfg.lr = 5e-4;
  cfg.milestone_every = 20;
  cfg.checkpoint_every = 20;
  const auto dir = scratch_dir("train_log");
  const auto r = train_loop(m, tiny_data(3), cfg, TrainOptions{dir});
  ASSERT_EQ(r.log.size(), 40u);
  double tail = 0;
  for (std::size_t i = 35; i < 40; ++i) tail += r.log[i].loss / 5;
  EXPECT_LT(tail, r.log.front().loss);
  EXPECT_DOUBLE_EQ(r.log[20].lr, 2.5e-4);
  EXPECT_TRUE(fs::exists(dir / "checkpoint_e0020.sirr"));
  EXPECT_TRUE(fs::exists(dir / "checkpoint_e0040.sirr"));
  EXPECT_TRUE(fs::exists(dir / "last.sirr"));
  const auto csv = slurp(dir / "train_log.csv");
  EXPECT_EQ(csv.rfind("epoch,lr,loss,seconds\n", 0), 0u);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 41);
}

TEST(TrainLoopTest, UnalignedCropStillTrainsEveryParameterPath) {
  StereoIrrModel<float> m(toy_config(), 4);
  auto cfg = quick_config();
  cfg.crop = 13;  // not a multiple of 4: padded then cropped
  cfg.epochs = 2;
  const auto before = m.parameters()[m.parameters().size() - 2].tensor.clone();  // tail weight
  train_loop(m, tiny_data(2), cfg);
  EXPECT_FALSE(bit_equal(before, m.parameters()[m.parameters().size() - 2].tensor));
}

std::vector<std::string> rows_without_time(const std::string& csv) {
  std::vector<std::string> out;
  std::istringstream in(csv);
  std::string line;
  while (std::getline(in, line)) out.push_back(line.substr(0, line.rfind(',')));
  return out;
}

TEST(TrainLoopTest, DeterministicAndResumable) {
  const auto data = tiny_data(3);
  const auto cfg = quick_config();
  const auto da = scratch_dir("det_a"), db = scratch_dir("det_b"), dc = scratch_dir("det_c");

  StereoIrrModel<float> a(toy_config(), model_seed(cfg.seed));
  const auto ra = train_loop(a, data, cfg, TrainOptions{da});
  StereoIrrModel<float> b(toy_config(), model_seed(cfg.seed));
  train_loop(b, data, cfg, TrainOptions{db});
  EXPECT_EQ(rows_without_time(slurp(da / "train_log.csv")), rows_without_time(slurp(db / "train_log.csv")));

  // Stop after two epochs, then resume from the written checkpoint.
  StereoIrrModel<float> c(toy_config(), model_seed(cfg.seed));
  TrainOptions first{dc};
  first.max_epochs = 2;
  train_loop(c, data, cfg, first);
  StereoIrrModel<float> d(toy_config(), 999);
  TrainOptions second{dc};
  second.resume = load_checkpoint(dc / "checkpoint_e0002.sirr");
  const auto rc = train_loop(d, data, cfg, second);
  ASSERT_EQ(rc.log.size(), 2u);
  EXPECT_EQ(rc.log[0].epoch, 2);
  for (std::size_t i = 0; i < 2; ++i) EXPECT_NEAR(rc.log[i].loss, ra.log[i + 2].loss, 1e-6);
  const auto pa = a.parameters(), pd = d.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_LT(testing::max_abs_diff(pa[i].tensor, pd[i].tensor), 1e-6);
  EXPECT_EQ(rows_without_time(slurp(da / "train_log.csv")), rows_without_time(slurp(dc / "train_log.csv")));

  auto other = cfg;
  other.lr = 1e-3;
  TrainOptions bad{};
  bad.resume = load_checkpoint(dc / "checkpoint_e0002.sirr");
  StereoIrrModel<float> e(toy_config(), 1);
  EXPECT_THROW(train_loop(e, data, other, bad), ConfigError);
}

TEST(TrainLoopTest, NonFiniteLossAborts) {
  auto data = tiny_data(2);
  data[1].rainy_l.data[5] = std::numeric_limits<float>::quiet_NaN();
  auto cfg = quick_config();
  cfg.crop = 0;
  cfg.batch_size = 1;
  cfg.epochs = 1;
  const auto dir = scratch_dir("nan");
  StereoIrrModel<float> m(toy_config(), 5);
  try {
    train_loop(m, data, cfg, TrainOptions{dir});
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("s1"), std::string::npos) << msg;
    EXPECT_NE(msg.find("epoch 0"), std::string::npos) << msg;
  }
  EXPECT_NE(slurp(dir / "nan_batch.txt").find("s1"), std::string::npos);
  EXPECT_THROW(train_loop(m, {}, cfg), ConfigError);
}

TEST(CheckpointTest, RoundTripIsLosslessAndByteIdentical) {
  StereoIrrModel<float> m(toy_config(), 6);
  testing::perturb_gates(m, Rng(7));
  auto cfg = quick_config();
  cfg.lr = 1.2345678901234e-4;
  auto c = make_checkpoint(m, cfg);
  c.epoch = 17;
  c.rng = Rng(8).split("x").state();
  for (auto& t : c.adam.m) std::fill(t.data().begin(), t.data().end(), 0.25f);
  c.adam.t = 123456789012LL;
  const auto bytes = encode_checkpoint(c);
  const auto back = decode_checkpoint(bytes);
  EXPECT_EQ(encode_checkpoint(back), bytes);
  EXPECT_EQ(back.model, c.model);
  EXPECT_EQ(back.train, c.train);
  EXPECT_EQ(back.epoch, 17);
  EXPECT_EQ(back.adam.t, c.adam.t);
  EXPECT_EQ(back.rng.seed, c.rng.seed);
  EXPECT_EQ(back.rng.counter, c.rng.counter);
  ASSERT_EQ(back.params.size(), c.params.size());
  for (std::size_t i = 0; i < c.params.size(); ++i) EXPECT_TRUE(bit_equal(back.params[i].tensor, c.params[i].tensor));
  const auto model2 = model_from_checkpoint(back);
  for (std::size_t i = 0; i < c.params.size(); ++i)
    EXPECT_TRUE(bit_equal(model2.parameters()[i].tensor, m.parameters()[i].tensor));

  const auto dir = scratch_dir("ckpt");
  save_checkpoint(dir / "a.sirr", c);
  save_checkpoint(dir / "b.sirr", load_checkpoint(dir / "a.sirr"));
  EXPECT_EQ(read_file(dir / "a.sirr"), read_file(dir / "b.sirr"));
}

TEST(CheckpointTest, RejectsCorruptFiles) {
  const auto bytes = encode_checkpoint(make_checkpoint(StereoIrrModel<float>(toy_config(), 9)));
  auto bad = bytes;
  bad[0] = 'X';
  try {
    decode_checkpoint(bad);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 0u);
  }
  bad = bytes;
  bad[4] = 2;
  EXPECT_THROW(decode_checkpoint(bad), FormatError);
  bad.assign(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(bytes.size() / 2));
  try {
    decode_checkpoint(bad);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_GT(e.offset(), 12u);
    EXPECT_LE(e.offset(), bad.size());
  }
  bad = bytes;
  bad.push_back(0);
  EXPECT_THROW(decode_checkpoint(bad), FormatError);
}

TEST(CheckpointTest, ConfigMismatchListsFields) {
  const auto c = make_checkpoint(StereoIrrModel<float>(toy_config(8, true), 10));
  auto other = toy_config(16, false);
  StereoIrrModel<float> m(other, 10);
  try {
    restore_parameters(m, c);
    FAIL();
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("model.width"), std::string::npos) << msg;
    EXPECT_NE(msg.find("model.use_dma"), std::string::npos) << msg;
    EXPECT_EQ(msg.find("model.loss"), std::string::npos) << msg;
  }
}

TEST(EvaluateTest, IdentityModelMatchesBaseline) {
  StereoIrrModel<float> m(toy_config(), 11);
  const auto data = tiny_data(2, 20);
  const auto rep = evaluate(m, data, "toy");
  EXPECT_EQ(rep.model.left.psnr_db, rep.rainy.left.psnr_db);
  EXPECT_EQ(rep.model.right.ssim, rep.rainy.right.ssim);
  // 2 samples x 2 views x 2 methods + 3 summary rows per method
  EXPECT_EQ(rep.rows.size(), 14u);
}

TEST(EvaluateTest, PerfectModelAndTotalIsMean) {
  StereoIrrModel<float> m(toy_config(), 12);
  auto data = tiny_data(3, 16);
  for (auto& s : data) {
    s.rainy_l = s.clean_l;
    s.rainy_r = s.clean_r;
  }
  const auto rep = evaluate(m, data, "toy");
  EXPECT_TRUE(std::isinf(rep.model.total.psnr_db));
  EXPECT_NEAR(rep.model.total.ssim, 1.0, 1e-9);

  const auto rainy = evaluate(m, tiny_data(3, 16), "toy");
  EXPECT_DOUBLE_EQ(rainy.model.total.psnr_db, (rainy.model.left.psnr_db + rainy.model.right.psnr_db) / 2);
  EXPECT_DOUBLE_EQ(rainy.model.total.ssim, (rainy.model.left.ssim + rainy.model.right.ssim) / 2);

  const auto csv = eval_csv(rep);
  EXPECT_EQ(csv.rfind("dataset,sample_id,view,psnr_db,ssim\n", 0), 0u);
  EXPECT_NE(csv.find("toy,ALL,total,inf,"), std::string::npos) << csv;
  EXPECT_NE(csv.find("toy/rainy,ALL,total,inf,"), std::string::npos) << csv;
}

TEST(ConfigTest, ParsesFileAndOverrides) {
  Settings s;
  apply_config_text(s, "# toy\nmodel.width = 16\nmodel.encoder_blocks=1, 2\nmodel.use_dma = off\n\ntrain.lr=1e-3 # hi\n");
  EXPECT_EQ(s.model.width, 16);
  EXPECT_EQ(s.model.encoder_blocks, (std::vector<Index>{1, 2}));
  EXPECT_FALSE(s.model.use_dma);
  EXPECT_DOUBLE_EQ(s.train.lr, 1e-3);
  apply_override(s, "train.lr=2e-3");
  EXPECT_DOUBLE_EQ(s.train.lr, 2e-3);
  apply_override(s, "model.loss=mse");
  EXPECT_EQ(s.model.loss, LossKind::Mse);
  EXPECT_EQ(expand_key("dma"), "model.use_dma");
  EXPECT_EQ(expand_key("train.seed"), "train.seed");
  Settings t;
  apply_config_text(t, s.dump());
  EXPECT_EQ(t.model, s.model);
  EXPECT_EQ(t.train, s.train);
}

TEST(ConfigTest, RejectsUnknownKeysAndBadValues) {
  Settings s;
  try {
    apply_config_text(s, "model.width = 8\nmodel.widht = 9\n");
    FAIL();
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("model.widht"), std::string::npos) << msg;
    EXPECT_NE(msg.find("line 2"), std::string::npos) << msg;
  }
  EXPECT_THROW(apply_override(s, "train.lr=fast"), ConfigError);
  EXPECT_THROW(apply_override(s, "model.use_dma=maybe"), ConfigError);
  EXPECT_THROW(apply_override(s, "novalue"), ConfigError);
  EXPECT_THROW(apply_config_text(s, "just words\n"), ConfigError);
}

}  // namespace
}  // namespace stereoirr

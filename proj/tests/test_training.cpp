// SPDX-License-Identifier: Apache-2.0
//
// Training loops: determinism, resume equivalence, validation purity, GAN
// bookkeeping, and the degenerate-weights equivalence between the adversarial
// and plain trainers.
#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "ctcsr/data/synth.hpp"
#include "ctcsr/train/trainer.hpp"
#include "helpers.hpp"

using namespace ctcsr;
using Catch::Approx;
using Catch::Matchers::ContainsSubstring;
using testutil::TempDir;

namespace {

struct CsvRow {
  int64_t iter = 0;
  double pix = 0, pcp = 0, adv = 0, dis = 0;
  bool has_val = false;
  double val = 0;
};

std::vector<CsvRow> read_loss_csv(const std::string& path) {
  std::ifstream in(path);
  REQUIRE(in.good());
  std::string line;
  std::getline(in, line);
  REQUIRE(line == "iter,l_pix,l_pcp,l_adv,l_dis,val_psnr");
  std::vector<CsvRow> rows;
  while (std::getline(in, line)) {
    std::stringstream ss(line);
    std::string cell;
    CsvRow r;
    std::getline(ss, cell, ',');
    r.iter = std::stoll(cell);
    std::getline(ss, cell, ',');
    r.pix = std::stod(cell);
    std::getline(ss, cell, ',');
    r.pcp = std::stod(cell);
    std::getline(ss, cell, ',');
    r.adv = std::stod(cell);
    std::getline(ss, cell, ',');
    r.dis = std::stod(cell);
    if (std::getline(ss, cell, ',') && !cell.empty()) {
      r.has_val = true;
      r.val = std::stod(cell);
    }
    rows.push_back(r);
  }
  return rows;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

ModelConfig tiny_model() {
  ModelConfig m;
  m.base_channels = 4;
  m.num_stages = 2;
  m.input_size = 16;
  m.num_frm = 1;
  return m;
}

// Shared 16x16 dataset: 4 train + 2 val images at scale x8 (lr is 2x2).
struct TinyData {
  TempDir src{"train_src"};
  TempDir data{"train_data"};
  Manifest train, val;
  TinyData() {
    Rng rng(77);
    for (int i = 0; i < 6; ++i) {
      Tensor<float> img({3, 20, 20});
      for (int64_t k = 0; k < img.numel(); ++k) img[k] = static_cast<float>(rng.uniform());
      write_png(src.str("img_" + std::to_string(i) + ".png"), img);
    }
    auto res = prepare_dataset(src.path, data.path, 4, 2, 0, 13, 16, 8);
    train = Manifest::load(res.manifests[0]);
    val = Manifest::load(res.manifests[1]);
  }
};

TinyData& tiny_data() {
  static TinyData d;
  return d;
}

TrainConfig base_config(const std::string& out_dir) {
  TrainConfig cfg;
  cfg.model = tiny_model();
  cfg.lr_g = 1e-3;
  cfg.lr_d = 4e-3;
  cfg.total_iters = 12;
  cfg.batch_size = 2;
  cfg.seed = 5;
  cfg.checkpoint_every = 6;
  cfg.val_every = 5;
  cfg.train_manifest = tiny_data().data.str("train.jsonl");
  cfg.val_manifest = tiny_data().data.str("val.jsonl");
  cfg.out_dir = out_dir;
  return cfg;
}

}  // namespace

TEST_CASE("batch order is a seeded permutation stream", "[training][order]") {
  auto a = batch_indices(9, 4, 2, 5);
  auto b = batch_indices(9, 4, 2, 5);
  REQUIRE(a == b);
  REQUIRE(a.size() == 2);
  for (int v : a) {
    REQUIRE(v >= 0);
    REQUIRE(v < 5);
  }

  // One full epoch with batch == n is a permutation.
  auto full = batch_indices(9, 0, 5, 5);
  auto sorted = full;
  std::sort(sorted.begin(), sorted.end());
  REQUIRE(sorted == std::vector<int>{0, 1, 2, 3, 4});

  // Different epochs reshuffle.
  REQUIRE(batch_indices(9, 0, 5, 5) != batch_indices(9, 1, 5, 5));

  // Positions within an epoch tile the permutation, wrapping at the end.
  std::vector<int> seen;
  for (int64_t it = 0; it < 3; ++it)
    for (int v : batch_indices(9, it, 2, 5)) seen.push_back(v);
  std::sort(seen.begin(), seen.end());
  REQUIRE(seen.size() == 6);
  for (int v = 0; v < 5; ++v)
    REQUIRE(std::count(seen.begin(), seen.end(), v) >= 1);
}

TEST_CASE("zero iterations is a no-op", "[training]") {
  TempDir out("train_noop");
  auto cfg = base_config(out.str("run"));
  cfg.total_iters = 0;
  auto res = train_ctcnet<float>(cfg);
  REQUIRE(res.final_iter == 0);
  REQUIRE(res.loss_csv.empty());
  REQUIRE(res.latest_ckpt.empty());
  REQUIRE_FALSE(fs::exists(out.path / "run"));
}

TEST_CASE("fixed seeds reproduce the loss curve", "[training][determinism]") {
  TempDir out("train_det");
  auto cfg1 = base_config(out.str("a"));
  auto cfg2 = base_config(out.str("b"));
  auto r1 = train_ctcnet<float>(cfg1);
  auto r2 = train_ctcnet<float>(cfg2);

  REQUIRE(r1.final_iter == 12);
  auto rows1 = read_loss_csv(r1.loss_csv);
  auto rows2 = read_loss_csv(r2.loss_csv);
  REQUIRE(rows1.size() == 12);
  REQUIRE(rows2.size() == 12);
  for (size_t i = 0; i < rows1.size(); ++i) {
    REQUIRE(rows1[i].iter == static_cast<int64_t>(i));
    REQUIRE(rows1[i].pix == Approx(rows2[i].pix).margin(1e-6));
    REQUIRE(rows1[i].has_val == rows2[i].has_val);
    if (rows1[i].has_val) REQUIRE(rows1[i].val == Approx(rows2[i].val).margin(1e-6));
  }
  // Same platform, same stream: the logs should in fact be byte-identical.
  REQUIRE(slurp(r1.loss_csv) == slurp(r2.loss_csv));

  // Validation fired at iters 4, 9 (every 5) and 11 (last).
  REQUIRE(rows1[4].has_val);
  REQUIRE(rows1[9].has_val);
  REQUIRE(rows1[11].has_val);
  REQUIRE_FALSE(rows1[0].has_val);

  // Twelve iterations on noise images prove bookkeeping, not convergence
  // (the overfit acceptance run covers learning); losses must stay bounded.
  for (const auto& r : rows1) {
    REQUIRE(std::isfinite(r.pix));
    REQUIRE(r.pix < 1.0);
  }
  REQUIRE(fs::exists(r1.latest_ckpt));
  REQUIRE(fs::exists(out.str("a/best.ckpt")));
}

TEST_CASE("resuming from a checkpoint matches the uninterrupted run", "[training][resume]") {
  TempDir out("train_resume");

  auto full_cfg = base_config(out.str("full"));
  full_cfg.total_iters = 20;
  full_cfg.checkpoint_every = 10;
  auto full = train_ctcnet<float>(full_cfg);

  auto part_cfg = base_config(out.str("part"));
  part_cfg.total_iters = 10;
  part_cfg.checkpoint_every = 10;
  auto part = train_ctcnet<float>(part_cfg);

  auto cont_cfg = base_config(out.str("part"));
  cont_cfg.total_iters = 20;
  cont_cfg.checkpoint_every = 10;
  auto cont = train_ctcnet<float>(cont_cfg, part.latest_ckpt);

  auto rows_full = read_loss_csv(full.loss_csv);
  auto rows_cont = read_loss_csv(cont.loss_csv);
  REQUIRE(rows_full.size() == 20);
  REQUIRE(rows_cont.size() == 20);
  // Ten iterations after the resume point the curves still agree.
  for (size_t i = 10; i < 20; ++i)
    REQUIRE(rows_cont[i].pix == Approx(rows_full[i].pix).margin(1e-5));

  // Final model parameters agree array-by-array.
  Checkpoint ca = Checkpoint::load(full.latest_ckpt);
  Checkpoint cb = Checkpoint::load(cont.latest_ckpt);
  REQUIRE(ca.meta.at("iter").get<int64_t>() == 20);
  REQUIRE(cb.meta.at("iter").get<int64_t>() == 20);
  int compared = 0;
  for (const auto& [name, blob] : ca.arrays()) {
    auto ta = ca.get<float>(name);
    auto tb = cb.get<float>(name);
    REQUIRE(ta.shape() == tb.shape());
    for (int64_t i = 0; i < ta.numel(); ++i)
      REQUIRE(static_cast<double>(std::abs(ta[i] - tb[i])) <= 1e-6);
    ++compared;
  }
  REQUIRE(compared > 0);
}

TEST_CASE("validation and evaluation leave parameters untouched", "[training][validation]") {
  auto& d = tiny_data();
  CtcNet<float> net(tiny_model(), 99);
  uint64_t before = param_hash<float>(net);

  double vp = validation_psnr(net, d.val);
  REQUIRE(param_hash<float>(net) == before);
  REQUIRE(std::isfinite(vp));

  // Fresh networks are identities, so validation PSNR equals the capped mean
  // luma PSNR of the stored interpolation against ground truth.
  double acc = 0.0;
  for (int i = 0; i < static_cast<int>(d.val.entries.size()); ++i) {
    auto b = load_batch<float>(d.val, {i});
    Tensor<float> up({3, 16, 16});
    std::copy(b.lr_up.data(), b.lr_up.data() + up.numel(), up.data());
    Tensor<float> hr({3, 16, 16});
    std::copy(b.hr.data(), b.hr.data() + hr.numel(), hr.data());
    acc += std::min(psnr_y(up, hr), kPsnrCap);
  }
  REQUIRE(vp == Approx(acc / 2.0).margin(1e-12));

  // max_images truncates the pass.
  auto b0 = load_batch<float>(d.val, {0});
  Tensor<float> up({3, 16, 16});
  std::copy(b0.lr_up.data(), b0.lr_up.data() + up.numel(), up.data());
  Tensor<float> hr({3, 16, 16});
  std::copy(b0.hr.data(), b0.hr.data() + hr.numel(), hr.data());
  REQUIRE(validation_psnr(net, d.val, 1) ==
          Approx(std::min(psnr_y(up, hr), kPsnrCap)).margin(1e-12));
}

TEST_CASE("identity evaluation reproduces the interpolation baseline", "[training][eval]") {
  auto& d = tiny_data();
  CtcNet<float> net(tiny_model(), 42);

  TempDir out("train_eval");
  EvalOptions opt;
  opt.dump_dir = out.str("dump");
  auto [model, baseline] = evaluate_model(net, d.val, opt);
  REQUIRE(model.per_image.size() == 2);
  REQUIRE(baseline.per_image.size() == 2);
  for (size_t i = 0; i < model.per_image.size(); ++i) {
    REQUIRE(model.per_image[i].first == baseline.per_image[i].first);
    // Fresh net output is bit-identical to its input, so every metric of the
    // model equals the baseline's, exactly.
    REQUIRE(model.per_image[i].second.psnr_rgb == baseline.per_image[i].second.psnr_rgb);
    REQUIRE(model.per_image[i].second.psnr_y == baseline.per_image[i].second.psnr_y);
    REQUIRE(model.per_image[i].second.ssim == baseline.per_image[i].second.ssim);
    REQUIRE(model.per_image[i].second.vif == baseline.per_image[i].second.vif);
    REQUIRE(std::isfinite(model.per_image[i].second.psnr_rgb));
    REQUIRE(fs::exists(out.path / "dump" / (model.per_image[i].first + "_sr.png")));
  }

  SECTION("repeat evaluation is identical") {
    auto [model2, baseline2] = evaluate_model(net, d.val);
    for (size_t i = 0; i < model.per_image.size(); ++i) {
      REQUIRE(model2.per_image[i].second.psnr_rgb == model.per_image[i].second.psnr_rgb);
      REQUIRE(model2.per_image[i].second.ssim == model.per_image[i].second.ssim);
    }
  }

  SECTION("size mismatch between manifest and model is a hard error") {
    ModelConfig wide = tiny_model();
    wide.input_size = 32;
    CtcNet<float> net32(wide, 1);
    REQUIRE_THROWS_WITH(evaluate_model(net32, d.val),
                        ContainsSubstring("does not match model input_size"));
  }

  SECTION("empty manifest is a hard error") {
    Manifest empty;
    empty.split = "val";
    REQUIRE_THROWS_WITH(evaluate_model(net, empty), ContainsSubstring("empty manifest"));
  }
}

TEST_CASE("adversarial training logs three finite terms per iteration", "[training][gan]") {
  TempDir out("train_gan");
  auto cfg = base_config(out.str("run"));
  cfg.total_iters = 6;
  cfg.extractor = "random:3";
  auto res = train_ctcgan<float>(cfg);
  REQUIRE(res.final_iter == 6);
  REQUIRE_FALSE(res.disc_collapse_warned);

  auto rows = read_loss_csv(res.loss_csv);
  REQUIRE(rows.size() == 6);
  for (const auto& r : rows) {
    REQUIRE(std::isfinite(r.pix));
    REQUIRE(std::isfinite(r.pcp));
    REQUIRE(std::isfinite(r.adv));
    REQUIRE(std::isfinite(r.dis));
    REQUIRE(r.pix > 0.0);
    REQUIRE(r.pcp > 0.0);
    REQUIRE(r.adv > 0.0);
    REQUIRE(r.dis > 0.0);
  }

  // The checkpoint carries the critic and both optimizer states.
  Checkpoint c = Checkpoint::load(res.latest_ckpt);
  REQUIRE(c.meta.at("has_disc").get<bool>());
  REQUIRE(c.has("d.conv0.weight"));
  REQUIRE(c.has("adam_g.m.stem.weight"));
  REQUIRE(c.has("adam_d.m.d.conv0.weight"));

  SECTION("plain checkpoints cannot seed a critic resume") {
    auto pcfg = base_config(out.str("plain"));
    pcfg.total_iters = 2;
    auto plain = train_ctcnet<float>(pcfg);
    auto gcfg = base_config(out.str("resume_fail"));
    gcfg.extractor = "random:3";
    REQUIRE_THROWS_WITH(train_ctcgan<float>(gcfg, plain.latest_ckpt),
                        ContainsSubstring("no critic state"));
  }

  SECTION("warm start from a reconstruction checkpoint") {
    auto pcfg = base_config(out.str("warm_src"));
    pcfg.total_iters = 2;
    pcfg.checkpoint_every = 2;
    auto plain = train_ctcnet<float>(pcfg);

    auto gcfg = base_config(out.str("warm_gan"));
    gcfg.total_iters = 1;
    gcfg.extractor = "identity";
    gcfg.init_from = plain.latest_ckpt;
    auto warm = train_ctcgan<float>(gcfg);
    REQUIRE(warm.final_iter == 1);
  }
}

TEST_CASE("zero feature and adversarial weights reduce to plain training", "[training][gan]") {
  TempDir out("train_degen");

  auto gan_cfg = base_config(out.str("gan"));
  gan_cfg.total_iters = 6;
  gan_cfg.extractor = "random:3";
  gan_cfg.weights.lambda_pcp = 0.0;
  gan_cfg.weights.lambda_adv = 0.0;
  auto gan = train_ctcgan<float>(gan_cfg);

  auto pix_cfg = base_config(out.str("pix"));
  pix_cfg.total_iters = 6;
  auto pix = train_ctcnet<float>(pix_cfg);

  auto rows_g = read_loss_csv(gan.loss_csv);
  auto rows_p = read_loss_csv(pix.loss_csv);
  REQUIRE(rows_g.size() == rows_p.size());
  for (size_t i = 0; i < rows_g.size(); ++i)
    REQUIRE(rows_g[i].pix == Approx(rows_p[i].pix).margin(1e-6));
}

TEST_CASE("train config survives a json round trip", "[training][config]") {
  TrainConfig cfg;
  cfg.model.base_channels = 16;
  cfg.model.input_size = 64;
  cfg.weights.lambda_adv = 0.25;
  cfg.lr_g = 3e-4;
  cfg.total_iters = 321;
  cfg.batch_size = 3;
  cfg.seed = 17;
  cfg.extractor = "identity";
  cfg.out_dir = "runs/rt";

  nlohmann::json j = cfg;
  auto back = j.get<TrainConfig>();
  REQUIRE(back.model.base_channels == 16);
  REQUIRE(back.model.input_size == 64);
  REQUIRE(back.weights.lambda_adv == 0.25);
  REQUIRE(back.lr_g == 3e-4);
  REQUIRE(back.total_iters == 321);
  REQUIRE(back.batch_size == 3);
  REQUIRE(back.seed == 17);
  REQUIRE(back.extractor == "identity");
  REQUIRE(back.out_dir == "runs/rt");

  // Partial configs fall back to defaults.
  auto sparse = nlohmann::json{{"total_iters", 5}}.get<TrainConfig>();
  REQUIRE(sparse.total_iters == 5);
  REQUIRE(sparse.lr_g == 2e-4);
  REQUIRE(sparse.lr_d == 4e-4);
  REQUIRE(sparse.beta1 == 0.9);
  REQUIRE(sparse.beta2 == 0.99);
  REQUIRE(sparse.batch_size == 8);
  REQUIRE(sparse.weights.lambda_pix == 1.0);
  REQUIRE(sparse.weights.lambda_pcp == 0.01);
  REQUIRE(sparse.weights.lambda_adv == 0.01);
}

TEST_CASE("empty train manifest is rejected", "[training][errors]") {
  TempDir out("train_empty");
  Manifest m;
  m.split = "train";
  m.save(out.path / "train.jsonl");
  auto cfg = base_config(out.str("run"));
  cfg.train_manifest = out.str("train.jsonl");
  REQUIRE_THROWS_WITH(train_ctcnet<float>(cfg), ContainsSubstring("empty train manifest"));
  cfg.extractor = "identity";
  REQUIRE_THROWS_WITH(train_ctcgan<float>(cfg), ContainsSubstring("empty train manifest"));
}

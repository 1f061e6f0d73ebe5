// SPDX-License-Identifier: Apache-2.0
//
// Command layer: exit-code mapping, artifact contracts, determinism of
// repeated invocations, and the ablation axis expansion.
#include <catch2/catch_amalgamated.hpp>

#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "ctcsr/cli.hpp"
#include "helpers.hpp"

using namespace ctcsr;
using Catch::Matchers::ContainsSubstring;
using testutil::TempDir;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

std::vector<std::string> lines_of(const std::string& path) {
  std::ifstream in(path);
  REQUIRE(in.good());
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) out.push_back(line);
  return out;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  return cells;
}

ModelConfig tiny_model() {
  ModelConfig m;
  m.base_channels = 4;
  m.num_stages = 2;
  m.input_size = 16;
  m.num_frm = 1;
  return m;
}

// Corpus, manifests, a config file and an untrained (identity) checkpoint,
// shared across the command tests.
struct CliFixture {
  TempDir root{"cli"};
  std::string train_manifest, val_manifest, identity_ckpt;

  CliFixture() {
    Rng rng(31);
    fs::create_directories(root.path / "src");
    for (int i = 0; i < 6; ++i) {
      Tensor<float> img({3, 20, 20});
      for (int64_t k = 0; k < img.numel(); ++k) img[k] = static_cast<float>(rng.uniform());
      write_png(root.str("src/img_" + std::to_string(i) + ".png"), img);
    }
    auto res = prepare_dataset(root.path / "src", root.path / "data", 4, 2, 0, 13, 16, 8);
    train_manifest = res.manifests[0].string();
    val_manifest = res.manifests[1].string();

    TrainConfig cfg = base_cfg("identity");
    CtcNet<float> net(cfg.model, Rng::mix(cfg.seed, 1));
    Adam<float> adam(cfg.lr_g, cfg.beta1, cfg.beta2, cfg.adam_eps);
    adam.attach(net);
    identity_ckpt = root.str("identity.ckpt");
    save_train_checkpoint(identity_ckpt, cfg, net, adam, 0, -1.0);
  }

  TrainConfig base_cfg(const std::string& run_name) const {
    TrainConfig cfg;
    cfg.model = tiny_model();
    cfg.lr_g = 1e-3;
    cfg.total_iters = 2;
    cfg.batch_size = 2;
    cfg.seed = 5;
    cfg.checkpoint_every = 2;
    cfg.val_every = 2;
    cfg.train_manifest = train_manifest;
    cfg.val_manifest = val_manifest;
    cfg.out_dir = (root.path / "runs" / run_name).string();
    return cfg;
  }

  std::string write_cfg(const TrainConfig& cfg, const std::string& name) const {
    nlohmann::json j = cfg;
    std::ofstream out(root.str(name));
    out << j.dump(2) << "\n";
    return root.str(name);
  }
};

CliFixture& fx() {
  static CliFixture f;
  return f;
}

}  // namespace

TEST_CASE("prepare command wraps the dataset protocol", "[cli][prepare]") {
  auto& f = fx();
  TempDir out("cli_prep");

  auto r = cmd_prepare(f.root.str("src"), out.str("d1"), 3, 1, 0, 21, 16, 8);
  CAPTURE(r.summary);
  REQUIRE(r.exit_code == 0);
  REQUIRE(r.artifacts.size() == 3);
  for (const auto& a : r.artifacts) REQUIRE(fs::exists(a));
  REQUIRE_THAT(r.summary, ContainsSubstring("prepared 4 images"));

  SECTION("rerun with the same seed is byte-identical") {
    auto r2 = cmd_prepare(f.root.str("src"), out.str("d2"), 3, 1, 0, 21, 16, 8);
    REQUIRE(r2.exit_code == 0);
    REQUIRE(slurp(out.str("d1/train.jsonl")) == slurp(out.str("d2/train.jsonl")));
  }

  SECTION("empty source is a usage error") {
    fs::create_directories(out.path / "nothing");
    auto bad = cmd_prepare(out.str("nothing"), out.str("d3"), 1, 0, 0, 1);
    REQUIRE(bad.exit_code == 2);
    REQUIRE_THAT(bad.summary, ContainsSubstring("no readable images"));
  }

  SECTION("oversubscription is a usage error") {
    auto bad = cmd_prepare(f.root.str("src"), out.str("d4"), 99, 0, 0, 1, 16, 8);
    REQUIRE(bad.exit_code == 2);
    REQUIRE_THAT(bad.summary, ContainsSubstring("exceed corpus size"));
  }
}

TEST_CASE("train command writes the declared artifacts", "[cli][train]") {
  auto& f = fx();
  auto cfg = f.base_cfg("train_cmd");
  auto path = f.write_cfg(cfg, "train_cmd.json");

  auto r = cmd_train(path);
  CAPTURE(r.summary);
  REQUIRE(r.exit_code == 0);
  REQUIRE_THAT(r.summary, ContainsSubstring("trained to iter 2"));
  REQUIRE(r.artifacts.size() == 4);  // loss csv, checkpoint, plot, run manifest
  for (const auto& a : r.artifacts) REQUIRE(fs::exists(a));
  REQUIRE(fs::exists(cfg.out_dir + "/loss.png"));

  SECTION("resume latest continues the iteration counter") {
    auto cont = cfg;
    cont.total_iters = 4;
    auto cont_path = f.write_cfg(cont, "train_cmd_cont.json");
    auto r2 = cmd_train(cont_path, "latest");
    CAPTURE(r2.summary);
    REQUIRE(r2.exit_code == 0);
    REQUIRE_THAT(r2.summary, ContainsSubstring("trained to iter 4"));
    // Appended, not rewritten: rows 0..3 in one file.
    auto rows = lines_of(cfg.out_dir + "/loss_log.csv");
    REQUIRE(rows.size() == 5);
    REQUIRE(rows[1].rfind("0,", 0) == 0);
    REQUIRE(rows[4].rfind("3,", 0) == 0);

    Checkpoint c = Checkpoint::load(cfg.out_dir + "/latest.ckpt");
    REQUIRE(c.meta.at("iter").get<int64_t>() == 4);
  }

  SECTION("missing resume checkpoint is a usage error") {
    auto r2 = cmd_train(path, f.root.str("not_there.ckpt"));
    REQUIRE(r2.exit_code == 2);
    REQUIRE_THAT(r2.summary, ContainsSubstring("resume checkpoint not found"));
  }

  SECTION("config errors map to exit 2 with the offending field") {
    auto missing = cmd_train(f.root.str("absent.json"));
    REQUIRE(missing.exit_code == 2);
    REQUIRE_THAT(missing.summary, ContainsSubstring("cannot open config"));

    std::ofstream(f.root.str("broken.json")) << "{ not json";
    auto broken = cmd_train(f.root.str("broken.json"));
    REQUIRE(broken.exit_code == 2);
    REQUIRE_THAT(broken.summary, ContainsSubstring("config parse"));

    auto no_manifest = cfg;
    no_manifest.train_manifest = f.root.str("ghost.jsonl");
    auto nm = cmd_train(f.write_cfg(no_manifest, "no_manifest.json"));
    REQUIRE(nm.exit_code == 2);
    REQUIRE_THAT(nm.summary, ContainsSubstring("train_manifest not found"));

    auto bad_model = cfg;
    bad_model.model.base_channels = 7;  // odd channel width fails validation
    auto bm = cmd_train(f.write_cfg(bad_model, "bad_model.json"));
    REQUIRE(bm.exit_code == 2);
    REQUIRE_THAT(bm.summary, ContainsSubstring("config"));
  }

  SECTION("zero iterations succeeds with no artifacts") {
    auto noop = cfg;
    noop.total_iters = 0;
    noop.out_dir = f.root.str("runs/noop");
    auto r2 = cmd_train(f.write_cfg(noop, "noop.json"));
    REQUIRE(r2.exit_code == 0);
    REQUIRE(r2.artifacts.empty());
    REQUIRE_FALSE(fs::exists(noop.out_dir));
  }
}

TEST_CASE("adversarial command validates its extras", "[cli][gan]") {
  auto& f = fx();
  auto cfg = f.base_cfg("gan_cmd");
  cfg.extractor = "random:3";

  auto r = cmd_train_gan(f.write_cfg(cfg, "gan_cmd.json"));
  CAPTURE(r.summary);
  REQUIRE(r.exit_code == 0);
  REQUIRE_THAT(r.summary, ContainsSubstring("adversarial run to iter 2"));
  for (const auto& a : r.artifacts) REQUIRE(fs::exists(a));

  SECTION("missing extractor is a usage error") {
    auto bare = cfg;
    bare.extractor = "";
    bare.out_dir = f.root.str("runs/gan_noex");
    auto r2 = cmd_train_gan(f.write_cfg(bare, "gan_noex.json"));
    REQUIRE(r2.exit_code == 2);
    REQUIRE_THAT(r2.summary, ContainsSubstring("requires an extractor"));
  }

  SECTION("unreadable extractor artifact is a usage error") {
    auto bad = cfg;
    bad.extractor = f.root.str("ghost_fx.ckpt");
    auto r2 = cmd_train_gan(f.write_cfg(bad, "gan_badex.json"));
    REQUIRE(r2.exit_code == 2);
  }

  SECTION("missing warm-start checkpoint is a usage error") {
    auto bad = cfg;
    bad.init_from = f.root.str("ghost_init.ckpt");
    auto r2 = cmd_train_gan(f.write_cfg(bad, "gan_badinit.json"));
    REQUIRE(r2.exit_code == 2);
    REQUIRE_THAT(r2.summary, ContainsSubstring("init_from checkpoint not found"));
  }
}

TEST_CASE("eval command reports model and baseline side by side", "[cli][eval]") {
  auto& f = fx();
  TempDir out("cli_eval");

  auto r = cmd_eval(f.identity_ckpt, f.val_manifest, out.str("metrics.csv"));
  CAPTURE(r.summary);
  REQUIRE(r.exit_code == 0);
  REQUIRE(r.artifacts.size() == 3);
  for (const auto& a : r.artifacts) REQUIRE(fs::exists(a));

  // 2 manifest entries -> header + 2 rows + aggregate.
  auto rows = lines_of(out.str("metrics.csv"));
  REQUIRE(rows.size() == 4);
  REQUIRE(rows[0] == "id,psnr_rgb,psnr_y,ssim,vif,lpips");
  REQUIRE(split_csv(rows[3])[0] == "aggregate");

  // The identity checkpoint makes the model columns equal the interpolation
  // baseline, byte for byte.
  REQUIRE(slurp(out.str("metrics.csv")) == slurp(out.str("metrics_baseline.csv")));
  REQUIRE_THAT(r.summary, ContainsSubstring("delta +0.000 dB"));

  SECTION("repeat invocations are byte-identical") {
    auto r2 = cmd_eval(f.identity_ckpt, f.val_manifest, out.str("metrics2.csv"));
    REQUIRE(r2.exit_code == 0);
    REQUIRE(slurp(out.str("metrics2.csv")) == slurp(out.str("metrics.csv")));
  }

  SECTION("missing inputs are usage errors") {
    REQUIRE(cmd_eval(f.root.str("ghost.ckpt"), f.val_manifest, out.str("x.csv")).exit_code == 2);
    REQUIRE(cmd_eval(f.identity_ckpt, f.root.str("ghost.jsonl"), out.str("x.csv")).exit_code == 2);
  }

  SECTION("provenance names the checkpoint") {
    auto prov = slurp(out.str("metrics.csv.provenance.json"));
    REQUIRE_THAT(prov, ContainsSubstring("identity.ckpt"));
  }
}

TEST_CASE("infer command super-resolves files and directories", "[cli][infer]") {
  auto& f = fx();
  TempDir out("cli_infer");

  Rng rng(55);
  Tensor<float> small({3, 4, 4});
  for (int64_t i = 0; i < small.numel(); ++i) small[i] = static_cast<float>(rng.uniform());
  write_png(out.str("tiny.png"), small);

  auto r = cmd_infer(f.identity_ckpt, out.str("tiny.png"), out.str("sr"));
  CAPTURE(r.summary);
  REQUIRE(r.exit_code == 0);
  REQUIRE(r.artifacts == std::vector<std::string>{out.str("sr/tiny_sr.png")});

  // Identity model: output is exactly the quantized interpolation.
  auto got = read_png<float>(out.str("sr/tiny_sr.png"));
  REQUIRE(got.shape() == std::vector<int>{3, 16, 16});
  auto in_again = read_png<float>(out.str("tiny.png"));
  auto expect = quantize_unit(bicubic_resize(in_again, 16));
  REQUIRE(std::memcmp(got.data(), expect.data(),
                      sizeof(float) * static_cast<size_t>(got.numel())) == 0);

  SECTION("right-sized inputs pass through the identity unchanged") {
    Tensor<float> exact({3, 16, 16});
    for (int64_t i = 0; i < exact.numel(); ++i) exact[i] = static_cast<float>(rng.uniform());
    write_png(out.str("exact.png"), quantize_unit(exact));
    auto r2 = cmd_infer(f.identity_ckpt, out.str("exact.png"), out.str("sr2"));
    REQUIRE(r2.exit_code == 0);
    auto o = read_png<float>(out.str("sr2/exact_sr.png"));
    auto i = read_png<float>(out.str("exact.png"));
    REQUIRE(std::memcmp(o.data(), i.data(), sizeof(float) * static_cast<size_t>(o.numel())) == 0);
  }

  SECTION("directory mode processes every png") {
    fs::create_directories(out.path / "batch");
    for (int i = 0; i < 3; ++i)
      write_png(out.str("batch/in" + std::to_string(i) + ".png"), small);
    auto r2 = cmd_infer(f.identity_ckpt, out.str("batch"), out.str("sr3"));
    REQUIRE(r2.exit_code == 0);
    REQUIRE(r2.artifacts.size() == 3);
    for (int i = 0; i < 3; ++i)
      REQUIRE(fs::exists(out.str("sr3/in" + std::to_string(i) + "_sr.png")));
  }

  SECTION("reference image adds a three-pane strip") {
    Tensor<float> hr({3, 16, 16});
    for (int64_t i = 0; i < hr.numel(); ++i) hr[i] = static_cast<float>(rng.uniform());
    write_png(out.str("ref.png"), hr);
    auto r2 = cmd_infer(f.identity_ckpt, out.str("tiny.png"), out.str("sr4"), out.str("ref.png"));
    REQUIRE(r2.exit_code == 0);
    REQUIRE(r2.artifacts.size() == 2);
    auto strip = read_png<float>(out.str("sr4/tiny_triptych.png"));
    REQUIRE(strip.shape() == std::vector<int>{3, 16, 48});
  }

  SECTION("mis-sized reference falls back to two panes") {
    Tensor<float> hr({3, 20, 20});
    write_png(out.str("ref20.png"), hr);
    auto r2 = cmd_infer(f.identity_ckpt, out.str("tiny.png"), out.str("sr5"), out.str("ref20.png"));
    REQUIRE(r2.exit_code == 0);
    auto strip = read_png<float>(out.str("sr5/tiny_triptych.png"));
    REQUIRE(strip.shape() == std::vector<int>{3, 16, 32});
  }

  SECTION("missing or empty inputs are usage errors") {
    REQUIRE(cmd_infer(f.identity_ckpt, out.str("ghost.png"), out.str("sr6")).exit_code == 2);
    fs::create_directories(out.path / "void");
    auto r2 = cmd_infer(f.identity_ckpt, out.str("void"), out.str("sr7"));
    REQUIRE(r2.exit_code == 2);
    REQUIRE_THAT(r2.summary, ContainsSubstring("no readable images"));
  }

  SECTION("a directory of undecodable files is a runtime failure") {
    fs::create_directories(out.path / "junk");
    std::ofstream(out.str("junk/fake.png")) << "not a png";
    auto r2 = cmd_infer(f.identity_ckpt, out.str("junk"), out.str("sr8"));
    REQUIRE(r2.exit_code == 3);
    REQUIRE_THAT(r2.summary, ContainsSubstring("no input could be processed"));
  }
}

TEST_CASE("ablate command expands the requested axis", "[cli][ablate]") {
  auto& f = fx();

  SECTION("bottleneck depth sweep has exactly linear parameter growth") {
    auto cfg = f.base_cfg("ablate_frm");
    auto r = cmd_ablate(f.write_cfg(cfg, "ablate_frm.json"), "frm_count");
    CAPTURE(r.summary);
    REQUIRE(r.exit_code == 0);

    auto rows = lines_of(cfg.out_dir + "/ablation_frm_count.csv");
    REQUIRE(rows.size() == 5);
    REQUIRE(rows[0] == "variant,params,final_l1,best_val_psnr");
    std::vector<int64_t> params;
    std::vector<std::string> names;
    for (size_t i = 1; i < rows.size(); ++i) {
      auto cells = split_csv(rows[i]);
      names.push_back(cells[0]);
      params.push_back(std::stoll(cells[1]));
    }
    REQUIRE(names == std::vector<std::string>{"CTCNet-V0", "CTCNet-V2", "CTCNet-V4",
                                              "CTCNet-V6"});
    REQUIRE(params[1] - params[0] == params[2] - params[1]);
    REQUIRE(params[2] - params[1] == params[3] - params[2]);
    REQUIRE(params[1] > params[0]);
    REQUIRE(fs::exists(cfg.out_dir + "/ablation_frm_count.png"));
    REQUIRE(fs::exists(cfg.out_dir + "/run_manifest.json"));
  }

  SECTION("attention ablations strictly shrink the model") {
    auto cfg = f.base_cfg("ablate_lgcm");
    auto r = cmd_ablate(f.write_cfg(cfg, "ablate_lgcm.json"), "lgcm");
    REQUIRE(r.exit_code == 0);
    auto rows = lines_of(cfg.out_dir + "/ablation_lgcm.csv");
    REQUIRE(rows.size() == 5);
    std::vector<std::string> names;
    std::vector<int64_t> params;
    for (size_t i = 1; i < rows.size(); ++i) {
      auto cells = split_csv(rows[i]);
      names.push_back(cells[0]);
      params.push_back(std::stoll(cells[1]));
    }
    REQUIRE(names == std::vector<std::string>{"full", "wo_tb", "wo_fsau", "wo_lgcm"});
    REQUIRE(params[1] < params[0]);
    REQUIRE(params[2] < params[0]);
    REQUIRE(params[3] < params[1]);
    REQUIRE(params[3] < params[2]);
  }

  SECTION("remaining axes run end to end") {
    for (const std::string axis : {"mffu_mode", "fsau_attention", "feu_parts"}) {
      auto cfg = f.base_cfg("ablate_" + axis);
      cfg.total_iters = 1;
      auto r = cmd_ablate(f.write_cfg(cfg, "ablate_" + axis + ".json"), axis);
      CAPTURE(axis, r.summary);
      REQUIRE(r.exit_code == 0);
      auto rows = lines_of(cfg.out_dir + "/ablation_" + axis + ".csv");
      REQUIRE(rows.size() == (axis == "mffu_mode" ? 6 : 5));
    }
  }

  SECTION("unknown axis lists the valid ones") {
    auto cfg = f.base_cfg("ablate_bad");
    auto r = cmd_ablate(f.write_cfg(cfg, "ablate_bad.json"), "nonsense");
    REQUIRE(r.exit_code == 2);
    REQUIRE_THAT(r.summary,
                 ContainsSubstring("valid: lgcm, frm_count, mffu_mode, fsau_attention, feu_parts"));
  }
}

TEST_CASE("params command accounts for every module", "[cli][params]") {
  auto& f = fx();

  auto r = cmd_params();
  REQUIRE(r.exit_code == 0);
  REQUIRE_THAT(r.summary, ContainsSubstring("total"));
  REQUIRE_THAT(r.summary, ContainsSubstring("deltas equal: yes"));
  REQUIRE_THAT(r.summary, ContainsSubstring("21.613M"));
  REQUIRE_THAT(r.summary, ContainsSubstring("stem"));
  REQUIRE_THAT(r.summary, ContainsSubstring("tail"));

  SECTION("honours the config file") {
    auto cfg = f.base_cfg("params");
    auto r2 = cmd_params(f.write_cfg(cfg, "params.json"));
    REQUIRE(r2.exit_code == 0);
    REQUIRE_THAT(r2.summary, ContainsSubstring("C=4"));
  }

  SECTION("missing config file is a usage error") {
    REQUIRE(cmd_params(f.root.str("ghost.json")).exit_code == 2);
  }
}

TEST_CASE("auxiliary commands keep their contracts", "[cli][aux]") {
  TempDir out("cli_aux");

  SECTION("synth writes the corpus") {
    auto r = cmd_synth(out.str("corpus"), 2, 3);
    REQUIRE(r.exit_code == 0);
    REQUIRE(fs::exists(out.str("corpus/face_00000.png")));
    REQUIRE(fs::exists(out.str("corpus/face_00001.png")));
    REQUIRE(cmd_synth(out.str("corpus"), 0, 3).exit_code == 2);
  }

  SECTION("make-extractor emits a loadable artifact") {
    auto r = cmd_make_extractor(out.str("fx.ckpt"), 11, 8);
    REQUIRE(r.exit_code == 0);
    auto fx2 = FeatureExtractor<float>::load(out.str("fx.ckpt"));
    REQUIRE_FALSE(fx2.is_identity());
  }

  SECTION("plot renders csv columns") {
    std::ofstream csv(out.str("curve.csv"));
    csv << "iter,l_pix\n0,1.0\n1,0.5\n2,0.25\n";
    csv.close();
    auto r = cmd_plot(out.str("curve.csv"), out.str("curve.png"), {"l_pix"});
    REQUIRE(r.exit_code == 0);
    REQUIRE(fs::exists(out.str("curve.png")));
    REQUIRE(cmd_plot(out.str("ghost.csv"), out.str("x.png"), {}).exit_code == 2);
  }
}

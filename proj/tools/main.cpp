// SPDX-License-Identifier: Apache-2.0
//
// ctcsr: face super-resolution pipeline driver.
//
//   ctcsr synth --out faces --count 100 --seed 7
//   ctcsr prepare --src faces --out data --train 80 --val 10 --test 10 --seed 7
//   ctcsr train --config configs/smoke.json
//   ctcsr train-gan --config configs/gan.json
//   ctcsr eval --checkpoint runs/x/latest.ckpt --manifest data/val.jsonl --out report.csv
//   ctcsr infer --checkpoint runs/x/latest.ckpt --input lr.png --out sr_out
//   ctcsr ablate --config configs/smoke.json --axis frm_count
//   ctcsr params --config configs/smoke.json

#include "CLI11.hpp"
#include "ctcsr/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"face super-resolution pipeline"};
  app.require_subcommand(1);

  std::string src, out, config, resume, checkpoint, manifest, input, hr, axis, csv, png;
  std::vector<std::string> columns;
  int n_train = 0, n_val = 0, n_test = 0, count = 100, hr_size = 128, scale = 8, width = 8;
  uint64_t seed = 0;

  auto* synth = app.add_subcommand("synth", "generate a synthetic portrait corpus");
  synth->add_option("--out", out)->required();
  synth->add_option("--count", count);
  synth->add_option("--seed", seed);

  auto* prepare = app.add_subcommand("prepare", "build train/val/test manifests from a corpus");
  prepare->add_option("--src", src)->required();
  prepare->add_option("--out", out)->required();
  prepare->add_option("--train", n_train)->required();
  prepare->add_option("--val", n_val)->required();
  prepare->add_option("--test", n_test)->required();
  prepare->add_option("--seed", seed);
  prepare->add_option("--hr-size", hr_size);
  prepare->add_option("--scale", scale);

  auto* train = app.add_subcommand("train", "reconstruction training");
  train->add_option("--config", config)->required();
  train->add_option("--resume", resume);

  auto* train_gan = app.add_subcommand("train-gan", "adversarial fine-tuning");
  train_gan->add_option("--config", config)->required();
  train_gan->add_option("--resume", resume);

  auto* eval = app.add_subcommand("eval", "metric report against a manifest");
  eval->add_option("--checkpoint", checkpoint)->required();
  eval->add_option("--manifest", manifest)->required();
  eval->add_option("--out", csv)->required();
  eval->add_option("--lpips", input)->description("feature extractor spec for LPIPS");

  auto* infer = app.add_subcommand("infer", "super-resolve one image or a directory");
  infer->add_option("--checkpoint", checkpoint)->required();
  infer->add_option("--input", input)->required();
  infer->add_option("--out", out)->required();
  infer->add_option("--hr", hr)->description("reference image for a side-by-side strip");

  auto* ablate = app.add_subcommand("ablate", "train an ablation axis and compare");
  ablate->add_option("--config", config)->required();
  ablate->add_option("--axis", axis)->required();

  auto* params = app.add_subcommand("params", "parameter accounting for a configuration");
  params->add_option("--config", config);

  auto* mkfx = app.add_subcommand("make-extractor", "save a fixed random feature extractor");
  mkfx->add_option("--out", out)->required();
  mkfx->add_option("--seed", seed);
  mkfx->add_option("--width", width);

  auto* plot = app.add_subcommand("plot", "render CSV columns as a line chart");
  plot->add_option("--csv", csv)->required();
  plot->add_option("--png", png)->required();
  plot->add_option("--columns", columns);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;  // usage errors map to exit 2
  }

  ctcsr::CommandResult r;
  if (synth->parsed()) r = ctcsr::cmd_synth(out, count, seed);
  if (prepare->parsed()) r = ctcsr::cmd_prepare(src, out, n_train, n_val, n_test, seed, hr_size, scale);
  if (train->parsed()) r = ctcsr::cmd_train(config, resume);
  if (train_gan->parsed()) r = ctcsr::cmd_train_gan(config, resume);
  if (eval->parsed()) r = ctcsr::cmd_eval(checkpoint, manifest, csv, input);
  if (infer->parsed()) r = ctcsr::cmd_infer(checkpoint, input, out, hr);
  if (ablate->parsed()) r = ctcsr::cmd_ablate(config, axis);
  if (params->parsed()) r = ctcsr::cmd_params(config);
  if (mkfx->parsed()) r = ctcsr::cmd_make_extractor(out, seed, width);
  if (plot->parsed()) r = ctcsr::cmd_plot(csv, png, columns);

  if (!r.summary.empty()) std::cout << r.summary << "\n";
  return r.exit_code;
}

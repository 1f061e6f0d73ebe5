// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "ctcsr/data/dataset.hpp"
#include "ctcsr/io/checkpoint.hpp"
#include "ctcsr/metrics/perceptual.hpp"
#include "ctcsr/metrics/report.hpp"
#include "ctcsr/metrics/vif.hpp"
#include "ctcsr/nn/losses.hpp"
#include "ctcsr/nn/network.hpp"
#include "ctcsr/train/adam.hpp"

namespace ctcsr {

struct TrainConfig {
  ModelConfig model;
  LossWeights weights;
  double lr_g = 2e-4;
  double lr_d = 4e-4;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double adam_eps = 1e-8;
  int64_t total_iters = 20000;
  int batch_size = 8;
  uint64_t seed = 0;
  int64_t checkpoint_every = 1000;
  int64_t val_every = 1000;
  int val_max_images = 0;  // 0 = whole manifest
  std::string train_manifest;
  std::string val_manifest;
  std::string extractor;   // "identity", "random:<seed>", or artifact path
  std::string init_from;   // warm-start checkpoint (adversarial runs)
  std::string out_dir = "runs/default";
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"model", c.model},
                     {"weights", c.weights},
                     {"lr_g", c.lr_g},
                     {"lr_d", c.lr_d},
                     {"beta1", c.beta1},
                     {"beta2", c.beta2},
                     {"adam_eps", c.adam_eps},
                     {"total_iters", c.total_iters},
                     {"batch_size", c.batch_size},
                     {"seed", c.seed},
                     {"checkpoint_every", c.checkpoint_every},
                     {"val_every", c.val_every},
                     {"val_max_images", c.val_max_images},
                     {"train_manifest", c.train_manifest},
                     {"val_manifest", c.val_manifest},
                     {"extractor", c.extractor},
                     {"init_from", c.init_from},
                     {"out_dir", c.out_dir}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  TrainConfig d;
  c.model = j.value("model", d.model);
  c.weights = j.value("weights", d.weights);
  c.lr_g = j.value("lr_g", d.lr_g);
  c.lr_d = j.value("lr_d", d.lr_d);
  c.beta1 = j.value("beta1", d.beta1);
  c.beta2 = j.value("beta2", d.beta2);
  c.adam_eps = j.value("adam_eps", d.adam_eps);
  c.total_iters = j.value("total_iters", d.total_iters);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.seed = j.value("seed", d.seed);
  c.checkpoint_every = j.value("checkpoint_every", d.checkpoint_every);
  c.val_every = j.value("val_every", d.val_every);
  c.val_max_images = j.value("val_max_images", d.val_max_images);
  c.train_manifest = j.value("train_manifest", d.train_manifest);
  c.val_manifest = j.value("val_manifest", d.val_manifest);
  c.extractor = j.value("extractor", d.extractor);
  c.init_from = j.value("init_from", d.init_from);
  c.out_dir = j.value("out_dir", d.out_dir);
}

// FNV-1a over raw parameter bytes in visit order; used to assert that
// validation and metric passes never mutate the model.
template <typename T, typename Net>
uint64_t param_hash(const Net& net) {
  uint64_t h = 1469598103934665603ull;
  net.visit([&](const std::string&, const Var<T>& v) {
    const unsigned char* p = reinterpret_cast<const unsigned char*>(v->value.data());
    size_t bytes = static_cast<size_t>(v->value.numel()) * sizeof(T);
    for (size_t i = 0; i < bytes; ++i) {
      h ^= p[i];
      h *= 1099511628211ull;
    }
  });
  return h;
}

// Deterministic data order: a fresh permutation of the manifest per epoch,
// seeded by (run seed, epoch), sliced by batch position. Depends only on
// (seed, iter) so resumed runs see the same stream.
inline std::vector<int> batch_indices(uint64_t seed, int64_t iter, int batch, int n) {
  int64_t bpe = (n + batch - 1) / batch;
  int64_t epoch = iter / bpe;
  int64_t pos = iter % bpe;
  std::vector<int> perm(static_cast<size_t>(n));
  Rng rng(Rng::mix(Rng::mix(seed, 3), static_cast<uint64_t>(epoch)));
  rng.permutation(perm, static_cast<size_t>(n));
  std::vector<int> out(static_cast<size_t>(batch));
  for (int j = 0; j < batch; ++j)
    out[static_cast<size_t>(j)] = perm[static_cast<size_t>((pos * batch + j) % n)];
  return out;
}

namespace detail {

template <typename T>
Tensor<T> clamp_unit(const Tensor<T>& t) {
  Tensor<T> out(t.shape());
  for (int64_t i = 0; i < t.numel(); ++i) out[i] = std::min(T(1), std::max(T(0), t[i]));
  return out;
}

template <typename T>
Tensor<T> slice_image(const Tensor<T>& batch, int n) {
  Tensor<T> img({batch.dim(1), batch.dim(2), batch.dim(3)});
  int64_t sz = img.numel();
  std::copy(batch.data() + n * sz, batch.data() + (n + 1) * sz, img.data());
  return img;
}

}  // namespace detail

// Mean luma PSNR of the model output over (a prefix of) a manifest. Asserts
// the pass leaves parameters untouched.
template <typename T>
double validation_psnr(CtcNet<T>& net, const Manifest& m, int max_images = 0) {
  uint64_t before = param_hash<T>(net);
  int n = static_cast<int>(m.entries.size());
  if (max_images > 0 && max_images < n) n = max_images;
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    auto b = load_batch<T>(m, {i});
    auto out = net.forward(make_var(b.lr_up, false));
    auto sr = detail::clamp_unit(detail::slice_image(out.sr->value, 0));
    double p = psnr_y(sr, detail::slice_image(b.hr, 0));
    acc += std::min(p, kPsnrCap);
  }
  if (param_hash<T>(net) != before)
    throw std::runtime_error("validation mutated model parameters");
  return acc / n;
}

struct EvalOptions {
  std::string lpips_spec;  // empty = LPIPS unavailable
  int max_images = 0;
  std::string dump_dir;  // when set, SR outputs are written here as PNGs
};

// Per-image metrics for the model and for the stored interpolation baseline.
template <typename T>
std::pair<MetricReport, MetricReport> evaluate_model(CtcNet<T>& net, const Manifest& m,
                                                     const EvalOptions& opt = {}) {
  uint64_t before = param_hash<T>(net);
  MetricReport model, baseline;
  FeatureExtractor<float> fx;
  std::string note;
  bool lpips_ok = detail::try_resolve_extractor(opt.lpips_spec, fx, note);

  int n = static_cast<int>(m.entries.size());
  if (opt.max_images > 0 && opt.max_images < n) n = opt.max_images;
  if (n == 0) throw std::runtime_error("evaluate: empty manifest");
  if (!opt.dump_dir.empty()) std::filesystem::create_directories(opt.dump_dir);

  for (int i = 0; i < n; ++i) {
    auto b = load_batch<T>(m, {i});
    if (b.hr.dim(2) != net.config().input_size)
      throw std::runtime_error("evaluate: manifest image size " + std::to_string(b.hr.dim(2)) +
                               " does not match model input_size " +
                               std::to_string(net.config().input_size));
    auto out = net.forward(make_var(b.lr_up, false));
    auto sr = detail::clamp_unit(detail::slice_image(out.sr->value, 0));
    auto hr = detail::slice_image(b.hr, 0);
    auto lu = detail::slice_image(b.lr_up, 0);

    auto measure = [&](const Tensor<T>& img) {
      ImageMetrics im;
      im.psnr_rgb = psnr_rgb(img, hr);
      im.psnr_y = psnr_y(img, hr);
      im.ssim = ssim_rgb(img, hr);
      im.vif = vif_p_rgb(hr, img);
      if (lpips_ok) {
        im.lpips = lpips_distance(fx, img.template cast<float>(), hr.template cast<float>());
        im.lpips_available = true;
      }
      return im;
    };
    model.per_image.emplace_back(b.ids[0], measure(sr));
    baseline.per_image.emplace_back(b.ids[0], measure(lu));
    if (!opt.dump_dir.empty())
      write_png((std::filesystem::path(opt.dump_dir) / (b.ids[0] + "_sr.png")).string(), sr);
  }
  if (param_hash<T>(net) != before)
    throw std::runtime_error("evaluation mutated model parameters");
  return {std::move(model), std::move(baseline)};
}

struct TrainResult {
  int64_t final_iter = 0;
  double best_val_psnr = 0.0;
  double last_pix = 0.0, last_dis = 0.0;
  bool disc_collapse_warned = false;
  std::string loss_csv, latest_ckpt, best_ckpt;
};

namespace detail {

inline std::FILE* open_loss_csv(const std::string& path, bool resume) {
  bool fresh = !resume || !std::filesystem::exists(path);
  std::FILE* f = std::fopen(path.c_str(), fresh ? "w" : "a");
  if (!f) throw std::runtime_error("train: cannot open " + path);
  if (fresh) std::fprintf(f, "iter,l_pix,l_pcp,l_adv,l_dis,val_psnr\n");
  return f;
}

inline void log_row(std::FILE* f, int64_t iter, double pix, double pcp, double adv, double dis,
                    double val, bool has_val) {
  std::fprintf(f, "%lld,%.8e,%.8e,%.8e,%.8e,", static_cast<long long>(iter), pix, pcp, adv, dis);
  if (has_val)
    std::fprintf(f, "%.6f\n", val);
  else
    std::fprintf(f, "\n");
  std::fflush(f);
}

template <typename T>
void check_finite(double v, const char* what, const std::vector<std::string>& ids) {
  if (std::isfinite(v)) return;
  std::string msg = std::string("train: non-finite ") + what + " on batch [";
  for (size_t i = 0; i < ids.size(); ++i) msg += (i ? "," : "") + ids[i];
  throw std::runtime_error(msg + "]");
}

}  // namespace detail

template <typename T>
void save_train_checkpoint(const std::string& path, const TrainConfig& cfg, const CtcNet<T>& net,
                           const Adam<T>& adam_g, int64_t iter, double best_val,
                           const PatchDiscriminator<T>* disc = nullptr,
                           const Adam<T>* adam_d = nullptr) {
  Checkpoint c;
  c.meta["artifact"] = "model_checkpoint";
  c.meta["iter"] = iter;
  c.meta["best_val_psnr"] = best_val;
  c.meta["model"] = cfg.model;
  c.meta["train"] = cfg;
  c.meta["has_disc"] = disc != nullptr;
  checkpoint_put_params<T>(c, net, "g.");
  adam_g.save(c, "adam_g");
  if (disc) {
    // Critic visit names already carry a "d." prefix.
    checkpoint_put_params<T>(c, *disc, "");
    adam_d->save(c, "adam_d");
  }
  c.save(path);
}

// Reads just the model config out of a checkpoint.
inline ModelConfig checkpoint_model_config(const std::string& path) {
  Checkpoint c = Checkpoint::load(path);
  if (!c.meta.contains("model"))
    throw std::runtime_error("checkpoint: no model config in " + path);
  return c.meta.at("model").get<ModelConfig>();
}

// Plain reconstruction training: L1 on the residual-corrected output, Adam,
// fixed learning rate. Returns after total_iters; zero iterations is a no-op
// that writes nothing.
template <typename T>
TrainResult train_ctcnet(const TrainConfig& cfg, const std::string& resume = "") {
  Manifest train_m = Manifest::load(cfg.train_manifest);
  if (train_m.entries.empty()) throw std::runtime_error("train: empty train manifest");
  Manifest val_m;
  if (!cfg.val_manifest.empty()) val_m = Manifest::load(cfg.val_manifest);

  CtcNet<T> net(cfg.model, Rng::mix(cfg.seed, 1));
  Adam<T> adam(cfg.lr_g, cfg.beta1, cfg.beta2, cfg.adam_eps);
  adam.attach(net);

  TrainResult res;
  int64_t start_iter = 0;
  double best_val = -1.0;
  if (!resume.empty()) {
    Checkpoint c = Checkpoint::load(resume);
    checkpoint_get_params<T>(c, net, "g.");
    adam.load(c, "adam_g");
    start_iter = c.meta.at("iter").get<int64_t>();
    best_val = c.meta.value("best_val_psnr", -1.0);
  }
  if (cfg.total_iters == 0) {
    res.best_val_psnr = best_val;
    return res;
  }

  std::filesystem::create_directories(cfg.out_dir);
  std::string csv_path = cfg.out_dir + "/loss_log.csv";
  std::string latest = cfg.out_dir + "/latest.ckpt";
  std::string best_path = cfg.out_dir + "/best.ckpt";
  std::FILE* csv = detail::open_loss_csv(csv_path, !resume.empty());
  int n = static_cast<int>(train_m.entries.size());

  for (int64_t iter = start_iter; iter < cfg.total_iters; ++iter) {
    auto idx = batch_indices(cfg.seed, iter, cfg.batch_size, n);
    auto b = load_batch<T>(train_m, idx);
    auto x = make_var(std::move(b.lr_up), false);
    auto y = make_var(std::move(b.hr), false);
    auto out = net.forward(x);
    auto loss = pixel_loss(out.sr, y);
    double l_pix = static_cast<double>(loss->value[0]);
    detail::check_finite<T>(l_pix, "pixel loss", b.ids);
    backward(loss);
    adam.step();
    adam.zero_grad();
    res.last_pix = l_pix;

    bool is_last = iter + 1 == cfg.total_iters;
    bool do_val = !cfg.val_manifest.empty() &&
                  ((iter + 1) % cfg.val_every == 0 || is_last);
    double vp = 0.0;
    if (do_val) {
      vp = validation_psnr(net, val_m, cfg.val_max_images);
      if (vp > best_val) {
        best_val = vp;
        save_train_checkpoint(best_path, cfg, net, adam, iter + 1, best_val);
        res.best_ckpt = best_path;
      }
    }
    detail::log_row(csv, iter, l_pix, 0.0, 0.0, 0.0, vp, do_val);
    if ((iter + 1) % cfg.checkpoint_every == 0 || is_last)
      save_train_checkpoint(latest, cfg, net, adam, iter + 1, best_val);
  }
  std::fclose(csv);
  res.final_iter = cfg.total_iters;
  res.best_val_psnr = best_val;
  res.loss_csv = csv_path;
  res.latest_ckpt = latest;
  return res;
}

// Adversarial fine-tuning: one critic step then one generator step per
// iteration. The generator starts from a reconstruction checkpoint when
// init_from is set. A critic loss pinned below 1e-4 for 500 consecutive
// iterations triggers a collapse warning (training continues).
template <typename T>
TrainResult train_ctcgan(const TrainConfig& cfg, const std::string& resume = "") {
  FeatureExtractor<T> fx = resolve_extractor<T>(cfg.extractor);

  Manifest train_m = Manifest::load(cfg.train_manifest);
  if (train_m.entries.empty()) throw std::runtime_error("train: empty train manifest");
  Manifest val_m;
  if (!cfg.val_manifest.empty()) val_m = Manifest::load(cfg.val_manifest);

  CtcNet<T> net(cfg.model, Rng::mix(cfg.seed, 1));
  PatchDiscriminator<T> disc(cfg.model, Rng::mix(cfg.seed, 2));
  Adam<T> adam_g(cfg.lr_g, cfg.beta1, cfg.beta2, cfg.adam_eps);
  Adam<T> adam_d(cfg.lr_d, cfg.beta1, cfg.beta2, cfg.adam_eps);
  adam_g.attach(net);
  adam_d.attach(disc);

  TrainResult res;
  int64_t start_iter = 0;
  double best_val = -1.0;
  if (!resume.empty()) {
    Checkpoint c = Checkpoint::load(resume);
    checkpoint_get_params<T>(c, net, "g.");
    adam_g.load(c, "adam_g");
    if (!c.meta.value("has_disc", false))
      throw std::runtime_error("train: resume checkpoint has no critic state");
    checkpoint_get_params<T>(c, disc, "");
    adam_d.load(c, "adam_d");
    start_iter = c.meta.at("iter").get<int64_t>();
    best_val = c.meta.value("best_val_psnr", -1.0);
  } else if (!cfg.init_from.empty()) {
    Checkpoint c = Checkpoint::load(cfg.init_from);
    checkpoint_get_params<T>(c, net, "g.");
  }
  if (cfg.total_iters == 0) {
    res.best_val_psnr = best_val;
    return res;
  }

  std::filesystem::create_directories(cfg.out_dir);
  std::string csv_path = cfg.out_dir + "/loss_log.csv";
  std::string latest = cfg.out_dir + "/latest.ckpt";
  std::string best_path = cfg.out_dir + "/best.ckpt";
  std::FILE* csv = detail::open_loss_csv(csv_path, !resume.empty());
  int n = static_cast<int>(train_m.entries.size());
  int collapse_run = 0;

  for (int64_t iter = start_iter; iter < cfg.total_iters; ++iter) {
    auto idx = batch_indices(cfg.seed, iter, cfg.batch_size, n);
    auto b = load_batch<T>(train_m, idx);
    auto x = make_var(std::move(b.lr_up), false);
    auto y = make_var(std::move(b.hr), false);

    auto out = net.forward(x);
    auto sr = out.sr;
    Tensor<T> sr_copy = sr->value;  // critic sees the generator output detached

    // Critic step.
    auto real_logits = disc.forward(y, x);
    auto fake_logits = disc.forward(make_var(std::move(sr_copy), false), x);
    auto l_d = discriminator_loss(real_logits, fake_logits);
    double l_dis = static_cast<double>(l_d->value[0]);
    detail::check_finite<T>(l_dis, "critic loss", b.ids);
    backward(l_d);
    adam_d.step();
    adam_d.zero_grad();

    // Generator step; the critic graph here leaks gradients into critic
    // parameters, which are cleared below without being applied.
    auto fake_for_g = disc.forward(sr, x);
    auto gl = total_generator_loss(sr, y, fake_for_g, cfg.weights, fx);
    double l_total = static_cast<double>(gl.total->value[0]);
    detail::check_finite<T>(gl.pix, "pixel loss", b.ids);
    detail::check_finite<T>(gl.pcp, "feature loss", b.ids);
    detail::check_finite<T>(gl.adv, "adversarial loss", b.ids);
    detail::check_finite<T>(l_total, "generator loss", b.ids);
    backward(gl.total);
    adam_g.step();
    adam_g.zero_grad();
    adam_d.zero_grad();
    res.last_pix = gl.pix;
    res.last_dis = l_dis;

    if (l_dis < 1e-4) {
      if (++collapse_run == 500 && !res.disc_collapse_warned) {
        res.disc_collapse_warned = true;
        std::fprintf(stderr,
                     "warning: critic loss below 1e-4 for 500 consecutive iterations "
                     "(iter %lld); critic may have collapsed\n",
                     static_cast<long long>(iter));
      }
    } else {
      collapse_run = 0;
    }

    bool is_last = iter + 1 == cfg.total_iters;
    bool do_val = !cfg.val_manifest.empty() &&
                  ((iter + 1) % cfg.val_every == 0 || is_last);
    double vp = 0.0;
    if (do_val) {
      vp = validation_psnr(net, val_m, cfg.val_max_images);
      if (vp > best_val) {
        best_val = vp;
        save_train_checkpoint(best_path, cfg, net, adam_g, iter + 1, best_val, &disc, &adam_d);
        res.best_ckpt = best_path;
      }
    }
    detail::log_row(csv, iter, gl.pix, gl.pcp, gl.adv, l_dis, vp, do_val);
    if ((iter + 1) % cfg.checkpoint_every == 0 || is_last)
      save_train_checkpoint(latest, cfg, net, adam_g, iter + 1, best_val, &disc, &adam_d);
  }
  std::fclose(csv);
  res.final_iter = cfg.total_iters;
  res.best_val_psnr = best_val;
  res.loss_csv = csv_path;
  res.latest_ckpt = latest;
  return res;
}

}  // namespace ctcsr

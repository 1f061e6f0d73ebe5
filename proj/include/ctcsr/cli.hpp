// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <iostream>

#include "ctcsr/data/synth.hpp"
#include "ctcsr/train/trainer.hpp"
#include "ctcsr/util/plot.hpp"

namespace ctcsr {

// Exit codes: 0 success, 2 usage/config error, 3 runtime failure.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CommandResult {
  int exit_code = 0;
  std::vector<std::string> artifacts;
  std::string summary;
};

namespace detail {

// Runs a command body, maps exceptions onto exit codes, and enforces the
// artifact contract: success requires every declared artifact on disk.
template <typename F>
CommandResult guarded(F&& body) {
  CommandResult r;
  try {
    body(r);
  } catch (const ConfigError& e) {
    r.exit_code = 2;
    r.summary = std::string("config error: ") + e.what();
    return r;
  } catch (const std::exception& e) {
    r.exit_code = 3;
    r.summary = std::string("error: ") + e.what();
    return r;
  }
  for (const auto& a : r.artifacts)
    if (!std::filesystem::exists(a)) {
      r.exit_code = 3;
      r.summary += "\nerror: declared artifact missing: " + a;
      return r;
    }
  return r;
}

inline void write_run_manifest(const std::string& dir, const CommandResult& r) {
  nlohmann::json j{{"artifacts", r.artifacts}};
  std::ofstream out(std::filesystem::path(dir) / "run_manifest.json");
  out << j.dump(2) << "\n";
}

inline TrainConfig load_train_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config parse: ") + e.what());
  }
  TrainConfig cfg;
  try {
    cfg = j.get<TrainConfig>();
    cfg.model.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (cfg.train_manifest.empty()) throw ConfigError("config: train_manifest not set");
  if (!std::filesystem::exists(cfg.train_manifest))
    throw ConfigError("config: train_manifest not found: " + cfg.train_manifest);
  if (!cfg.val_manifest.empty() && !std::filesystem::exists(cfg.val_manifest))
    throw ConfigError("config: val_manifest not found: " + cfg.val_manifest);
  return cfg;
}

inline std::string resolve_resume(const TrainConfig& cfg, const std::string& resume) {
  if (resume.empty()) return "";
  std::string path = resume == "latest" ? cfg.out_dir + "/latest.ckpt" : resume;
  if (!std::filesystem::exists(path)) throw ConfigError("resume checkpoint not found: " + path);
  return path;
}

}  // namespace detail

inline CommandResult cmd_prepare(const std::string& src, const std::string& out, int n_train,
                                 int n_val, int n_test, uint64_t seed, int hr_size = 128,
                                 int scale = 8) {
  return detail::guarded([&](CommandResult& r) {
    PrepareResult p;
    try {
      p = prepare_dataset(src, out, n_train, n_val, n_test, seed, hr_size, scale);
    } catch (const std::exception& e) {
      // Everything prepare can hit is an input/config problem.
      throw ConfigError(e.what());
    }
    for (const auto& m : p.manifests) r.artifacts.push_back(m.string());
    r.summary = "prepared " + std::to_string(p.prepared) + " images (train " +
                std::to_string(n_train) + ", val " + std::to_string(n_val) + ", test " +
                std::to_string(n_test) + "), skipped " + std::to_string(p.skipped.size());
  });
}

inline CommandResult cmd_train(const std::string& config_path, const std::string& resume = "") {
  return detail::guarded([&](CommandResult& r) {
    TrainConfig cfg = detail::load_train_config(config_path);
    std::string resume_path = detail::resolve_resume(cfg, resume);
    auto res = train_ctcnet<float>(cfg, resume_path);
    if (cfg.total_iters > 0) {
      r.artifacts = {res.loss_csv, res.latest_ckpt};
      plot_csv(res.loss_csv, cfg.out_dir + "/loss.png", {"l_pix"});
      r.artifacts.push_back(cfg.out_dir + "/loss.png");
      detail::write_run_manifest(cfg.out_dir, r);
      r.artifacts.push_back(cfg.out_dir + "/run_manifest.json");
    }
    char best[64] = "n/a";
    if (res.best_val_psnr > 0) std::snprintf(best, sizeof(best), "%.3f dB", res.best_val_psnr);
    r.summary = "trained to iter " + std::to_string(res.final_iter) + ", final L1 " +
                MetricReport::fmt(res.last_pix) + ", best val PSNR " + best;
  });
}

inline CommandResult cmd_train_gan(const std::string& config_path,
                                   const std::string& resume = "") {
  return detail::guarded([&](CommandResult& r) {
    TrainConfig cfg = detail::load_train_config(config_path);
    if (cfg.extractor.empty())
      throw ConfigError("config: adversarial training requires an extractor");
    try {  // resolve before any work so a bad artifact fails fast
      resolve_extractor<float>(cfg.extractor);
    } catch (const std::exception& e) {
      throw ConfigError(e.what());
    }
    if (!cfg.init_from.empty() && !std::filesystem::exists(cfg.init_from))
      throw ConfigError("config: init_from checkpoint not found: " + cfg.init_from);
    std::string resume_path = detail::resolve_resume(cfg, resume);
    auto res = train_ctcgan<float>(cfg, resume_path);
    if (cfg.total_iters > 0) {
      r.artifacts = {res.loss_csv, res.latest_ckpt};
      plot_csv(res.loss_csv, cfg.out_dir + "/loss.png", {"l_pix", "l_adv", "l_dis"});
      r.artifacts.push_back(cfg.out_dir + "/loss.png");
      detail::write_run_manifest(cfg.out_dir, r);
      r.artifacts.push_back(cfg.out_dir + "/run_manifest.json");
    }
    r.summary = "adversarial run to iter " + std::to_string(res.final_iter) + ", final L1 " +
                MetricReport::fmt(res.last_pix) + ", final critic loss " +
                MetricReport::fmt(res.last_dis) +
                (res.disc_collapse_warned ? " (critic collapse warning raised)" : "");
  });
}

inline CommandResult cmd_eval(const std::string& checkpoint, const std::string& manifest,
                              const std::string& out_csv, const std::string& lpips_spec = "") {
  return detail::guarded([&](CommandResult& r) {
    if (!std::filesystem::exists(checkpoint)) throw ConfigError("no such checkpoint: " + checkpoint);
    if (!std::filesystem::exists(manifest)) throw ConfigError("no such manifest: " + manifest);
    Checkpoint c = Checkpoint::load(checkpoint);
    ModelConfig mc = c.meta.at("model").get<ModelConfig>();
    CtcNet<float> net(mc, 1);
    checkpoint_get_params<float>(c, net, "g.");
    Manifest m = Manifest::load(manifest);

    EvalOptions opt;
    opt.lpips_spec = lpips_spec;
    auto [model, baseline] = evaluate_model(net, m, opt);
    model.checkpoint_id = checkpoint + ":" + std::to_string(param_hash<float>(net));
    model.manifest_id = manifest + ":" + std::to_string(m.entries.size());
    baseline.checkpoint_id = "interpolation baseline";
    baseline.manifest_id = model.manifest_id;

    std::string base_csv = out_csv;
    auto dot = base_csv.rfind('.');
    std::string baseline_csv =
        (dot == std::string::npos ? base_csv : base_csv.substr(0, dot)) + "_baseline.csv";
    model.write_csv(out_csv);
    model.write_provenance(out_csv + ".provenance.json");
    baseline.write_csv(baseline_csv);
    r.artifacts = {out_csv, out_csv + ".provenance.json", baseline_csv};

    auto am = model.aggregate();
    auto ab = baseline.aggregate();
    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  "model: PSNR-Y %.3f dB, SSIM %.4f, VIF %.4f | baseline: PSNR-Y %.3f dB "
                  "(delta %+.3f dB) over %d images",
                  am.psnr_y, am.ssim, am.vif, ab.psnr_y, am.psnr_y - ab.psnr_y,
                  static_cast<int>(model.per_image.size()));
    r.summary = buf;
  });
}

inline CommandResult cmd_infer(const std::string& checkpoint, const std::string& input,
                               const std::string& out_dir, const std::string& hr_path = "") {
  return detail::guarded([&](CommandResult& r) {
    if (!std::filesystem::exists(checkpoint)) throw ConfigError("no such checkpoint: " + checkpoint);
    if (!std::filesystem::exists(input)) throw ConfigError("no such input: " + input);
    Checkpoint c = Checkpoint::load(checkpoint);
    ModelConfig mc = c.meta.at("model").get<ModelConfig>();
    CtcNet<float> net(mc, 1);
    checkpoint_get_params<float>(c, net, "g.");
    std::filesystem::create_directories(out_dir);

    std::vector<std::filesystem::path> inputs;
    if (std::filesystem::is_directory(input)) {
      for (const auto& e : std::filesystem::directory_iterator(input))
        if (e.is_regular_file() && e.path().extension() == ".png") inputs.push_back(e.path());
      std::sort(inputs.begin(), inputs.end());
      if (inputs.empty()) throw ConfigError("no readable images in " + input);
    } else {
      inputs.push_back(input);
    }

    int ok = 0;
    for (const auto& p : inputs) {
      Tensor<float> img;
      try {
        img = read_png<float>(p.string());
      } catch (const std::exception& e) {
        std::cerr << "infer: skipping " << p << ": " << e.what() << "\n";
        continue;
      }
      Tensor<float> lr_up = img.dim(1) == mc.input_size && img.dim(2) == mc.input_size
                                ? img
                                : bicubic_resize(img, mc.input_size);
      Tensor<float> batch({1, 3, mc.input_size, mc.input_size}, lr_up.vec());
      auto out = net.forward(make_var(std::move(batch), false));
      auto sr = detail::clamp_unit(detail::slice_image(out.sr->value, 0));
      std::string stem = p.stem().string();
      std::string sr_path = (std::filesystem::path(out_dir) / (stem + "_sr.png")).string();
      write_png(sr_path, sr);
      r.artifacts.push_back(sr_path);

      if (!hr_path.empty()) {
        auto hr = read_png<float>(hr_path);
        std::vector<const Tensor<float>*> panes{&lr_up, &sr};
        if (hr.dim(1) == sr.dim(1) && hr.dim(2) == sr.dim(2)) panes.push_back(&hr);
        int s = sr.dim(1);
        Tensor<float> strip({3, s, s * static_cast<int>(panes.size())});
        for (size_t k = 0; k < panes.size(); ++k)
          for (int ch = 0; ch < 3; ++ch)
            for (int y = 0; y < s; ++y)
              std::copy(panes[k]->data() + (int64_t(ch) * s + y) * s,
                        panes[k]->data() + (int64_t(ch) * s + y + 1) * s,
                        strip.data() + (int64_t(ch) * s + y) * strip.dim(2) +
                            static_cast<int64_t>(k) * s);
        std::string t_path = (std::filesystem::path(out_dir) / (stem + "_triptych.png")).string();
        write_png(t_path, strip);
        r.artifacts.push_back(t_path);
      }
      ++ok;
    }
    if (ok == 0) throw std::runtime_error("infer: no input could be processed");
    r.summary = "wrote " + std::to_string(ok) + " SR image(s) to " + out_dir;
  });
}

namespace detail {

struct AblationVariant {
  std::string name;
  TrainConfig cfg;
};

inline std::vector<AblationVariant> expand_axis(const TrainConfig& base, const std::string& axis) {
  std::vector<AblationVariant> v;
  auto mk = [&](const std::string& name, auto&& mod) {
    TrainConfig c = base;
    mod(c);
    c.out_dir = base.out_dir + "/" + name;
    v.push_back({name, c});
  };
  if (axis == "lgcm") {
    mk("full", [](TrainConfig&) {});
    mk("wo_tb", [](TrainConfig& c) { c.model.ablation.use_transformer = false; });
    mk("wo_fsau", [](TrainConfig& c) { c.model.ablation.use_fsau = false; });
    mk("wo_lgcm", [](TrainConfig& c) {
      c.model.ablation.use_transformer = false;
      c.model.ablation.use_fsau = false;
    });
  } else if (axis == "frm_count") {
    for (int nf : {0, 2, 4, 6})
      mk("CTCNet-V" + std::to_string(nf), [nf](TrainConfig& c) { c.model.num_frm = nf; });
  } else if (axis == "mffu_mode") {
    for (const char* mode : {"none", "concat", "add", "concat+ca", "add+ca"})
      mk(std::string(mode) == "concat+ca" ? "concat_ca"
                                          : (std::string(mode) == "add+ca" ? "add_ca" : mode),
         [mode](TrainConfig& c) {
           c.model.ablation.mffu_fusion_mode = mode;
           c.model.ablation.use_mffu = std::string(mode) != "none";
         });
  } else if (axis == "fsau_attention") {
    mk("ca_sa", [](TrainConfig&) {});
    mk("wo_ca", [](TrainConfig& c) { c.model.ablation.fsau_use_ca = false; });
    mk("wo_sa", [](TrainConfig& c) { c.model.ablation.fsau_use_sa = false; });
    mk("wo_both", [](TrainConfig& c) {
      c.model.ablation.fsau_use_ca = false;
      c.model.ablation.fsau_use_sa = false;
    });
  } else if (axis == "feu_parts") {
    mk("full", [](TrainConfig&) {});
    mk("wo_afdu", [](TrainConfig& c) { c.model.ablation.use_afdu = false; });
    mk("wo_selfcal", [](TrainConfig& c) { c.model.ablation.use_feu_selfcal = false; });
    mk("wo_dual", [](TrainConfig& c) { c.model.ablation.use_feu_dual_branch = false; });
  } else {
    throw ConfigError("unknown ablation axis '" + axis +
                      "'; valid: lgcm, frm_count, mffu_mode, fsau_attention, feu_parts");
  }
  return v;
}

}  // namespace detail

// Expands one ablation axis into its variant set, trains each variant with a
// shared seed and data order, and writes a comparison table plus overlay plot.
inline CommandResult cmd_ablate(const std::string& config_path, const std::string& axis) {
  return detail::guarded([&](CommandResult& r) {
    TrainConfig base = detail::load_train_config(config_path);
    auto variants = detail::expand_axis(base, axis);
    std::filesystem::create_directories(base.out_dir);

    std::string table_path = base.out_dir + "/ablation_" + axis + ".csv";
    std::ofstream table(table_path);
    table << "variant,params,final_l1,best_val_psnr\n";
    Plot plot;
    int color = 0;
    std::string summary = "axis " + axis + ":\n";
    for (auto& v : variants) {
      v.cfg.model.validate();
      CtcNet<float> probe(v.cfg.model, 1);
      int64_t params = parameter_count<float>(probe);
      auto res = train_ctcnet<float>(v.cfg);
      table << v.name << ',' << params << ',' << MetricReport::fmt(res.last_pix) << ','
            << (res.best_val_psnr > 0 ? MetricReport::fmt(res.best_val_psnr) : std::string())
            << "\n";
      char line[160];
      std::snprintf(line, sizeof(line), "  %-12s params %10lld  final L1 %.5f  val %.3f dB\n",
                    v.name.c_str(), static_cast<long long>(params), res.last_pix,
                    res.best_val_psnr);
      summary += line;

      std::ifstream csv(res.loss_csv);
      std::string hdr, row;
      std::getline(csv, hdr);
      std::vector<double> xs, ys;
      while (std::getline(csv, row)) {
        auto c1 = row.find(',');
        auto c2 = row.find(',', c1 + 1);
        xs.push_back(std::atof(row.substr(0, c1).c_str()));
        ys.push_back(std::atof(row.substr(c1 + 1, c2 - c1 - 1).c_str()));
      }
      plot.add_series(xs, ys, color++);
      r.artifacts.push_back(res.loss_csv);
    }
    table.close();
    plot.save(base.out_dir + "/ablation_" + axis + ".png");
    r.artifacts.push_back(table_path);
    r.artifacts.push_back(base.out_dir + "/ablation_" + axis + ".png");
    detail::write_run_manifest(base.out_dir, r);
    r.summary = summary;
  });
}

inline CommandResult cmd_params(const std::string& config_path = "") {
  return detail::guarded([&](CommandResult& r) {
    ModelConfig mc;
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      if (!in) throw ConfigError("cannot open config " + config_path);
      nlohmann::json j = nlohmann::json::parse(in);
      if (j.contains("model"))
        mc = j.at("model").get<ModelConfig>();
      else
        mc = j.get<ModelConfig>();
    }
    mc.validate();
    CtcNet<float> net(mc, 1);

    // Group counts by the top-level visit prefix.
    std::vector<std::pair<std::string, int64_t>> groups;
    net.visit([&](const std::string& name, const Var<float>& v) {
      std::string head = name.substr(0, name.find('.'));
      if (groups.empty() || groups.back().first != head) groups.push_back({head, 0});
      groups.back().second += v->value.numel();
    });
    int64_t total = parameter_count<float>(net);

    std::string s = "configuration: C=" + std::to_string(mc.base_channels) +
                    ", S=" + std::to_string(mc.input_size) +
                    ", stages=" + std::to_string(mc.num_stages) +
                    ", bottleneck blocks=" + std::to_string(mc.num_frm) + "\n";
    for (const auto& [name, count] : groups) {
      char line[96];
      std::snprintf(line, sizeof(line), "  %-12s %12lld\n", name.c_str(),
                    static_cast<long long>(count));
      s += line;
    }
    s += "  total        " + std::to_string(total) + "\n\nbottleneck depth sweep:\n";

    int64_t prev = -1, delta = -1;
    bool equal_deltas = true;
    for (int nf : {0, 2, 4, 6}) {
      ModelConfig v = mc;
      v.num_frm = nf;
      CtcNet<float> n2(v, 1);
      int64_t p = parameter_count<float>(n2);
      char line[96];
      std::snprintf(line, sizeof(line), "  V%-2d %12lld%s\n", nf, static_cast<long long>(p),
                    prev >= 0 ? ("  (+" + std::to_string(p - prev) + ")").c_str() : "");
      s += line;
      if (prev >= 0) {
        if (delta >= 0 && p - prev != delta) equal_deltas = false;
        delta = p - prev;
      }
      prev = p;
    }
    s += equal_deltas ? "  deltas equal: yes\n" : "  deltas equal: NO\n";
    s += "\nreference-scale note: the original architecture at C=64 reports 21.613M "
         "parameters; printed for context only, not asserted here.\n";
    r.summary = s;
  });
}

inline CommandResult cmd_synth(const std::string& out_dir, int count, uint64_t seed) {
  return detail::guarded([&](CommandResult& r) {
    if (count <= 0) throw ConfigError("synth: count must be positive");
    synth_corpus(out_dir, count, seed);
    r.artifacts.push_back(out_dir);
    r.summary = "wrote " + std::to_string(count) + " synthetic portraits to " + out_dir;
  });
}

inline CommandResult cmd_make_extractor(const std::string& out_path, uint64_t seed,
                                        int width = 8) {
  return detail::guarded([&](CommandResult& r) {
    auto fx = FeatureExtractor<float>::random_stack(seed, width);
    fx.save(out_path);
    r.artifacts.push_back(out_path);
    r.summary = "wrote feature extractor artifact (width " + std::to_string(width) + ", seed " +
                std::to_string(seed) + ") to " + out_path;
  });
}

inline CommandResult cmd_plot(const std::string& csv, const std::string& png,
                              const std::vector<std::string>& columns) {
  return detail::guarded([&](CommandResult& r) {
    if (!std::filesystem::exists(csv)) throw ConfigError("no such csv: " + csv);
    plot_csv(csv, png, columns.empty() ? std::vector<std::string>{"l_pix"} : columns);
    r.artifacts.push_back(png);
    r.summary = "plotted " + csv + " -> " + png;
  });
}

}  // namespace ctcsr

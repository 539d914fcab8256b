#pragma once

// Command-line front end: flops, bench, check, train-toy and viz subcommands.
// Exit codes: 0 ok, 1 a check or run failed, 2 bad usage or bad input.

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "hydra/bench.hpp"
#include "hydra/checks.hpp"
#include "hydra/flops.hpp"
#include "hydra/toymodel.hpp"
#include "hydra/viz.hpp"

namespace hydra::cli {

inline constexpr int kOk = 0;
inline constexpr int kFailed = 1;
inline constexpr int kUsage = 2;

namespace detail {

// "256:4096" doubles from 256 up to 4096; "a,b,c" is taken literally.
inline std::vector<std::size_t> parse_sweep(const std::string& text) {
  std::vector<std::size_t> out;
  if (const auto colon = text.find(':'); colon != std::string::npos) {
    const std::size_t lo = std::stoull(text.substr(0, colon)), hi = std::stoull(text.substr(colon + 1));
    if (lo == 0 || hi < lo) throw ConfigError("bad sweep range " + text);
    for (std::size_t t = lo; t <= hi; t *= 2) out.push_back(t);
    return out;
  }
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) out.push_back(std::stoull(item));
  if (out.empty()) throw ConfigError("empty sweep");
  return out;
}

// "-" means `fallback`; anything else is opened as a file.
// Human-readable text is dropped when the CSV itself goes to stdout.
inline std::ostream& text_out(const std::string& csv, std::ostream& out) {
  static std::ostream discard(nullptr);
  return csv == "-" ? discard : out;
}

class Sink {
 public:
  Sink(const std::string& path, std::ostream& fallback) : out_(&fallback) {
    if (path != "-") {
      file_ = std::make_unique<std::ofstream>(path);
      if (!*file_) throw ConfigError("cannot open " + path + " for writing");
      out_ = file_.get();
    }
  }
  std::ostream& operator*() { return *out_; }

 private:
  std::unique_ptr<std::ofstream> file_;
  std::ostream* out_;
};

struct FlopsArgs {
  std::vector<std::uint64_t> sizes{224};
  std::string variant = "baseline";
  int replaced = -1;
  bool patch_embed = false;
  std::string csv;
};

inline int run_flops(const FlopsArgs& a, std::ostream& out) {
  const auto kind = flops::parse_attention_kind(a.variant);
  if (!kind) throw ConfigError("unknown attention kind " + a.variant);
  std::vector<std::pair<std::uint64_t, flops::FlopReport>> rows;
  flops::VitConfig cfg;
  cfg.count_patch_embed = a.patch_embed;
  const std::uint64_t replaced = a.replaced < 0 ? (*kind == flops::AttentionKind::baseline ? 0 : cfg.depth)
                                                : static_cast<std::uint64_t>(a.replaced);
  for (auto size : a.sizes) {
    cfg.image_size = size;
    rows.emplace_back(size, flops::count_vit_flops(cfg, *kind, replaced));
  }
  std::ostream& text = text_out(a.csv, out);
  text << std::fixed;
  for (const auto& [size, r] : rows) {
    text << "image " << size << "px, " << r.tokens << " tokens, " << replaced << " layers replaced\n";
    auto line = [&](const char* label, std::uint64_t v) {
      text << "  " << std::left << std::setw(20) << label << std::right << std::setw(10) << std::setprecision(3)
          << flops::gmacs(v) << " G\n";
    };
    if (a.patch_embed) line("patch embedding", r.patch_embed);
    line("qkv projections", r.qkv_proj);
    line("output projection", r.out_proj);
    line("attention matrices", r.attention_matrices);
    line("mlp", r.mlp);
    line("head", r.head);
    text << "  " << std::left << std::setw(20) << "total" << std::right << std::setw(10) << std::setprecision(2)
        << flops::gmacs(r.total()) << " G\n";
    text << "  attention share " << std::setprecision(2) << flops::attention_fraction(r) << "%\n";
  }
  text << std::defaultfloat;
  if (!a.csv.empty()) {
    Sink sink(a.csv, out);
    *sink << std::setprecision(10) << "size,variant,replaced,tokens,total_macs,attention_macs,gmacs,attention_pct\n";
    for (const auto& [size, r] : rows)
      *sink << size << ',' << flops::name(*kind) << ',' << replaced << ',' << r.tokens << ',' << r.total() << ','
            << r.attention_matrices << ',' << flops::gmacs(r.total()) << ',' << flops::attention_fraction(r) << '\n';
  }
  return kOk;
}

struct BenchArgs {
  std::string variant = "hydra";
  std::string tokens = "256:4096";
  std::size_t dim = 256;
  std::size_t heads = 1;
  std::size_t reps = bench::kMinReps;
  std::size_t warmup = bench::kMinWarmup;
  std::uint64_t seed = 0;
  std::string csv;
};

inline int run_bench(const BenchArgs& a, std::ostream& out) {
  const auto variant = attention::parse_variant(a.variant);
  if (!variant) throw ConfigError("unknown variant " + a.variant);
  const auto ts = parse_sweep(a.tokens);
  const std::size_t heads = *variant == attention::Variant::Hydra ? a.dim : a.heads;
  const auto samples = bench::time_op(*variant, ts, a.dim, heads, a.reps, a.warmup, a.seed);
  std::ostream& text = text_out(a.csv, out);
  text << "# seed=" << a.seed << '\n';
  for (const auto& s : samples)
    text << s.op << "  T=" << s.tokens << "  median " << s.median_seconds * 1e3 << " ms  macs " << s.macs << '\n';
  text << "time slope in T: " << bench::fit_loglog_slope(samples) << '\n';
  if (!a.csv.empty()) {
    Sink sink(a.csv, out);
    *sink << "# seed=" << a.seed << '\n';
    bench::write_csv(*sink, samples);
  }
  return kOk;
}

struct CheckArgs {
  std::string module = "all";
  std::string fault;
  std::uint64_t seed = 0;
  std::string csv;
};

inline int run_check(const CheckArgs& a, std::ostream& out) {
  checks::CheckOptions opts;
  opts.seed = a.seed;
  if (a.fault == "hydra") {
    opts.hydra = checks::broken_hydra;
  } else if (!a.fault.empty()) {
    throw ConfigError("unknown fault " + a.fault);
  }
  const auto results = checks::run_checks(a.module, opts);
  std::size_t failed = 0;
  std::ostream& text = text_out(a.csv, out);
  text << "# seed=" << a.seed << '\n';
  for (const auto& r : results) {
    failed += !r.passed;
    text << (r.passed ? "PASS " : "FAIL ") << r.module << ": " << r.name;
    if (!r.detail.empty()) text << " [" << r.detail << ']';
    text << '\n';
  }
  text << results.size() - failed << " passed, " << failed << " failed\n";
  if (!a.csv.empty()) {
    Sink sink(a.csv, out);
    *sink << "# seed=" << a.seed << "\nmodule,check,passed\n";
    for (const auto& r : results) *sink << r.module << ",\"" << r.name << "\"," << r.passed << '\n';
  }
  return failed ? kFailed : kOk;
}

struct TrainArgs {
  toy::ModelConfig model;
  std::string strategy = "back";
  std::size_t replace = 0;
  std::string kernel = "cossim";
  std::string csv = "-";
  std::string weights_out;
  std::string images_out;
  std::string config;
};

// key=value lines fill in any option not already given on the command line.
inline void apply_config_file(CLI::App& cmd, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path);
  auto trim = [](std::string x) {
    const auto b = x.find_first_not_of(" \t\r\"'"), e = x.find_last_not_of(" \t\r\"'");
    return b == std::string::npos ? std::string() : x.substr(b, e - b + 1);
  };
  std::string line;
  for (int n = 1; std::getline(in, line); ++n) {
    line = trim(line);
    if (line.empty() || line[0] == '#' || line[0] == ';' || line[0] == '[') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(path + ":" + std::to_string(n) + ": expected key=value");
    const std::string key = trim(line.substr(0, eq));
    CLI::Option* opt = key == "config" ? nullptr : cmd.get_option_no_throw("--" + key);
    if (!opt) throw ConfigError(path + ":" + std::to_string(n) + ": unknown key " + key);
    if (opt->count() > 0) continue;
    opt->add_result(trim(line.substr(eq + 1)));
    opt->run_callback();
  }
}

inline int run_train(TrainArgs a, std::ostream& out) {
  const auto strategy = toy::parse_strategy(a.strategy);
  if (!strategy) throw ConfigError("unknown strategy " + a.strategy);
  const auto pair = kernels::parse_kernel_pair(a.kernel);
  if (!pair) throw ConfigError("unknown kernel " + a.kernel);
  const auto cfg = toy::with_schedule(a.model, *strategy, a.replace, *pair);
  toy::Model model;
  const auto report = toy::train(cfg, &model);

  Sink sink(a.csv, out);
  std::ostream& csv = *sink;
  csv << "# seed=" << cfg.seed << '\n' << "# layers=";
  for (std::size_t l = 0; l < cfg.depth; ++l) csv << (l ? "," : "") << toy::layer_token(cfg.layer_specs[l]);
  csv << "\n# lr=" << cfg.learning_rate << " batch=" << cfg.batch_size << " steps=" << cfg.steps << '\n';
  csv << "step,epoch,loss\n" << std::setprecision(17);
  const std::size_t per_epoch = cfg.steps_per_epoch();
  for (std::size_t s = 0; s < report.step_losses.size(); ++s)
    csv << s << ',' << s / per_epoch << ',' << report.step_losses[s] << '\n';
  csv << std::setprecision(6) << "# train_accuracy=" << report.train_accuracy << '\n'
      << "# val_accuracy=" << report.val_accuracy << '\n';
  if (a.csv != "-") {
    out << "seed " << cfg.seed << ": final loss " << report.step_losses.back() << ", train acc "
        << report.train_accuracy << ", val acc " << report.val_accuracy << ", " << report.wall_seconds << " s\n";
  }
  if (!a.weights_out.empty()) toy::save_weights(a.weights_out, model);
  if (!a.images_out.empty()) {
    const auto val = toy::validation_data(cfg);
    std::filesystem::create_directories(a.images_out);
    char name[64];
    for (std::size_t i = 0; i < val.size(); ++i) {
      std::snprintf(name, sizeof name, "val_%03zu_class%zu.ppm", i, val.labels[i]);
      netpbm::write_ppm((std::filesystem::path(a.images_out) / name).string(), toy::image_to_ppm(val.images[i]));
    }
  }
  return kOk;
}

struct VizArgs {
  std::string weights;
  std::string image;
  std::size_t layer = 0;  // 1-based; 0 selects the last layer
  std::string out;
  std::size_t cell = 8;
  std::string csv;
};

inline int run_viz(const VizArgs& a, std::ostream& out) {
  const auto model = toy::load_weights(a.weights);
  const auto& cfg = model.config;
  const std::size_t layer = a.layer == 0 ? cfg.depth : a.layer;
  if (layer > cfg.depth) throw ConfigError("layer " + std::to_string(layer) + " exceeds model depth");
  const auto& spec = cfg.layer_specs[layer - 1];
  if (spec.variant == attention::Variant::MSA || spec.variant == attention::Variant::MLA) {
    throw ConfigError("layer " + std::to_string(layer) + " is " + std::string(attention::name(spec.variant)) +
                      ", not a hydra layer");
  }
  const Tensor image = toy::image_from_ppm(netpbm::read_ppm(a.image));
  toy::require_image(cfg, image);

  ad::Tape tape;
  const auto p = toy::load_params(tape, model, false);
  std::vector<toy::LayerTrace> traces;
  const ad::Var logits = toy::forward_sample(tape, cfg, p, toy::patchify(image, cfg.patch), &traces);
  const auto z = tape.value(logits).data();
  const auto pred = static_cast<std::size_t>(std::max_element(z.begin(), z.end()) - z.begin());
  const auto& tr = traces[layer - 1];
  const Tensor g = tape.gradient_wrt(ad::sum(ad::slice_cols(logits, pred, 1)), tr.mixed);

  const auto plain = spec.kernels.without_layer_norm();
  const Tensor fq = kernels::apply_feature_map(tape.value(tr.q), plain.query, cfg.tokens());
  const Tensor fk = kernels::apply_feature_map(tape.value(tr.k), plain.key, cfg.tokens());
  const auto scores = viz::token_contributions(fq.row(0), fk, tape.value(tr.v), g.row(0));

  double projected = 0, total = 0;
  for (std::size_t c = 0; c < cfg.dim; ++c) projected += tape.value(tr.mixed)(0, c) * g(0, c);
  for (double s : scores) total += s;
  const auto map = viz::make_map(scores, cfg.grid(), cfg.grid());
  netpbm::write_pgm(a.out, viz::render_heatmap(map, a.cell));

  text_out(a.csv, out) << "predicted class " << pred << ", layer " << layer << '\n'
      << "class-token self contribution " << map.class_token_score << '\n'
      << "sum of contributions " << total << ", projected output " << projected << ", residual "
      << std::abs(total - projected) << '\n'
      << "wrote " << a.out << '\n';
  if (!a.csv.empty()) {
    Sink sink(a.csv, out);
    *sink << "token,row,col,score\n" << std::setprecision(17);
    *sink << "0,-1,-1," << scores[0] << '\n';
    for (std::size_t i = 0; i < map.scores.size(); ++i)
      *sink << i + 1 << ',' << i / map.grid_w << ',' << i % map.grid_w << ',' << map.scores[i] << '\n';
  }
  return kOk;
}

}  // namespace detail

// Parses `args` (without the program name) and runs the chosen subcommand.
inline int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Hydra attention lab", "hydra_lab"};
  app.require_subcommand(1);

  detail::FlopsArgs fa;
  auto* flops_cmd = app.add_subcommand("flops", "ViT-B/16 MAC breakdown");
  flops_cmd->add_option("--size", fa.sizes, "image sizes in pixels")->capture_default_str();
  flops_cmd->add_option("--variant", fa.variant, "baseline, hydra or local-window")->capture_default_str();
  flops_cmd->add_option("--replaced", fa.replaced, "layers replaced from the back (default: all, or 0 for baseline)");
  flops_cmd->add_flag("--patch-embed", fa.patch_embed, "include the patch embedding in the total");
  flops_cmd->add_option("--csv", fa.csv, "write rows as CSV ('-' for stdout)");

  detail::BenchArgs ba;
  auto* bench_cmd = app.add_subcommand("bench", "wall-clock scaling sweep over T");
  bench_cmd->set_help_flag("--help", "Print this help message and exit");
  bench_cmd->add_option("--variant", ba.variant)->capture_default_str();
  bench_cmd->add_option("--t", ba.tokens, "lo:hi doubling range or comma list")->capture_default_str();
  bench_cmd->add_option("--d", ba.dim)->capture_default_str();
  bench_cmd->add_option("--h", ba.heads, "heads (hydra always uses H = D)")->capture_default_str();
  bench_cmd->add_option("--reps", ba.reps)->capture_default_str();
  bench_cmd->add_option("--warmup", ba.warmup)->capture_default_str();
  bench_cmd->add_option("--seed", ba.seed)->capture_default_str();
  bench_cmd->add_option("--csv", ba.csv);

  detail::CheckArgs ca;
  auto* check_cmd = app.add_subcommand("check", "run the invariant suite");
  check_cmd->add_option("--module", ca.module, "module name or all")->capture_default_str();
  check_cmd->add_option("--inject-fault", ca.fault, "substitute a broken implementation (hydra)");
  check_cmd->add_option("--seed", ca.seed)->capture_default_str();
  check_cmd->add_option("--csv", ca.csv);

  detail::TrainArgs ta;
  auto& m = ta.model;
  auto* train_cmd = app.add_subcommand("train-toy", "train the toy ViT on synthetic textures");
  train_cmd->add_option("--config", ta.config, "key=value file with any of these flags; command line wins");
  train_cmd->add_option("--depth", m.depth)->capture_default_str();
  train_cmd->add_option("--dim", m.dim)->capture_default_str();
  train_cmd->add_option("--heads", m.heads)->capture_default_str();
  train_cmd->add_option("--patch", m.patch)->capture_default_str();
  train_cmd->add_option("--image-size", m.image_size)->capture_default_str();
  train_cmd->add_option("--classes", m.classes)->capture_default_str();
  train_cmd->add_option("--strategy", ta.strategy, "front, back or interleave")->capture_default_str();
  train_cmd->add_option("--replace", ta.replace, "number of hydra layers")->capture_default_str();
  train_cmd->add_option("--kernel", ta.kernel)->capture_default_str();
  train_cmd->add_option("--steps", m.steps)->capture_default_str();
  train_cmd->add_option("--lr", m.learning_rate)->capture_default_str();
  train_cmd->add_option("--batch", m.batch_size)->capture_default_str();
  train_cmd->add_option("--train-size", m.train_size)->capture_default_str();
  train_cmd->add_option("--val-size", m.val_size)->capture_default_str();
  train_cmd->add_option("--seed", m.seed)->capture_default_str();
  train_cmd->add_option("--csv", ta.csv, "loss curve destination ('-' for stdout)")->capture_default_str();
  train_cmd->add_option("--weights-out", ta.weights_out);
  train_cmd->add_option("--images-out", ta.images_out, "directory for the validation images as PPM");

  detail::VizArgs va;
  auto* viz_cmd = app.add_subcommand("viz", "token-contribution heatmap for a hydra layer");
  viz_cmd->add_option("--weights", va.weights)->required();
  viz_cmd->add_option("--image", va.image, "binary PPM")->required();
  viz_cmd->add_option("--layer", va.layer, "1-based layer (default: last)");
  viz_cmd->add_option("--out", va.out, "binary PGM")->required();
  viz_cmd->add_option("--cell", va.cell, "pixels per patch")->capture_default_str();
  viz_cmd->add_option("--csv", va.csv);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    const auto chosen = app.get_subcommands();
    err << '\n' << (chosen.empty() ? app.help() : chosen.front()->help());
    return kUsage;
  }

  try {
    if (*flops_cmd) return detail::run_flops(fa, out);
    if (*bench_cmd) return detail::run_bench(ba, out);
    if (*check_cmd) return detail::run_check(ca, out);
    if (*train_cmd) {
      if (!ta.config.empty()) detail::apply_config_file(*train_cmd, ta.config);
      return detail::run_train(ta, out);
    }
    if (*viz_cmd) return detail::run_viz(va, out);
  } catch (const TrainingError& e) {
    err << "error: " << e.what() << '\n';
    return kFailed;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  }
  return kUsage;
}

}  // namespace hydra::cli

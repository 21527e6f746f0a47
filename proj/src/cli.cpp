#include "vmatflux/cli.hpp"

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "vmatflux/bev.hpp"
#include "vmatflux/dose.hpp"
#include "vmatflux/fluence.hpp"
#include "vmatflux/io.hpp"
#include "vmatflux/metrics.hpp"
#include "vmatflux/nn/checkpoint.hpp"
#include "vmatflux/nn/trainer.hpp"
#include "vmatflux/parallel.hpp"
#include "vmatflux/synth.hpp"

namespace vmatflux {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Raised for bad user input that the argument parser cannot catch.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Globals {
  std::uint64_t seed{0};
  unsigned threads{0};
  std::string preset{"ci"};
  bool json{false};
};

struct GenArgs {
  int n{-1};
  std::string out;
};

struct FluenceArgs {
  std::string plan, out;
  int substeps{kDefaultSubsteps};
  int size_px{0};
  double spacing_mm{0.0};
};

struct BevArgs {
  std::string plan, dose, out;
  double step_mm{kDefaultStepMm};
  int size_px{0};
  double spacing_mm{0.0};
};

struct TrainArgs {
  std::string data, out, arch{"mednext"};
  int steps{2000};
  double lr{1e-4};
  int base_channels{8};
  int n_scales{5};
  int blocks_per_stage{1};
  int limit{0};
  int checkpoint_every{0};
  double step_mm{kDefaultStepMm};
  bool save_init{false};
  std::string loss_csv;
};

struct PredictArgs {
  std::string ckpt, plan, dose, out;
  double step_mm{kDefaultStepMm};
};

struct EvalArgs {
  std::string pred, target, plan, report, id, dose, dvh_dir;
  std::vector<std::string> masks;
  int bins{kDefaultDvhBins};
};

PlaneGeometry plane_geometry(const Globals& g, int size_px, double spacing_mm) {
  PlaneGeometry geom = preset_by_name(g.preset).plane_geometry();
  if (size_px > 0 || spacing_mm > 0.0) {
    const int n = size_px > 0 ? size_px : geom.nu;
    const double d = spacing_mm > 0.0 ? spacing_mm : geom.du;
    geom = PlaneGeometry::centered(n, n, d, d);
  }
  return geom;
}

void require_file(const std::string& path, const char* what) {
  if (!fs::is_regular_file(path)) throw UsageError(std::string(what) + " not found: " + path);
}

std::string stack_summary(const PlaneStack& s) {
  return std::to_string(s.n_cp) + "×" + std::to_string(s.geometry.nv) + "×" + std::to_string(s.geometry.nu);
}

void report(const Globals& g, std::ostream& out, const json& doc, const std::string& text) {
  if (g.json) {
    out << doc.dump() << '\n';
  } else {
    out << text;
  }
}

int cmd_gen(const Globals& g, const GenArgs& a, std::ostream& out) {
  if (a.n < 1) throw UsageError("gen: -n must be >= 1");
  const Preset preset = preset_by_name(g.preset);
  const DatasetManifest m = gen_dataset(a.n, a.out, g.seed, preset);
  const fs::path manifest = fs::path(a.out) / "manifest.json";
  report(g, out,
         {{"command", "gen"},
          {"manifest", manifest.string()},
          {"plans", m.plans.size()},
          {"train", m.train.size()},
          {"val", m.val.size()}},
         manifest.string() + "\n");
  return kExitOk;
}

int cmd_fluence(const Globals& g, const FluenceArgs& a, std::ostream& out) {
  require_file(a.plan, "plan");
  const VmatPlan plan = load_plan(a.plan);
  const PlaneStack stack = fluence_stack(plan, plane_geometry(g, a.size_px, a.spacing_mm), a.substeps);
  save_stack(stack, a.out);
  report(g, out,
         {{"command", "fluence"}, {"shape", {stack.n_cp, stack.geometry.nv, stack.geometry.nu}}, {"out", a.out}},
         "fluence " + stack_summary(stack) + " -> " + a.out + "\n");
  return kExitOk;
}

int cmd_bev(const Globals& g, const BevArgs& a, std::ostream& out) {
  require_file(a.plan, "plan");
  require_file(a.dose, "dose grid");
  const VmatPlan plan = load_plan(a.plan);
  const Grid3 dose = load_grid(a.dose);
  const PlaneStack stack = project_dose(dose, plan, plane_geometry(g, a.size_px, a.spacing_mm), a.step_mm);
  save_stack(stack, a.out);
  report(g, out,
         {{"command", "bev"}, {"shape", {stack.n_cp, stack.geometry.nv, stack.geometry.nu}}, {"out", a.out}},
         "bev " + stack_summary(stack) + " -> " + a.out + "\n");
  return kExitOk;
}

int cmd_train(const Globals& g, const TrainArgs& a, std::ostream& out, std::ostream& err) {
  if (!fs::is_regular_file(fs::path(a.data) / "manifest.json")) {
    throw UsageError("train: no manifest.json in " + a.data);
  }
  if (a.steps < 0) throw UsageError("train: --steps must be >= 0");
  if (a.lr < 0.0 || !std::isfinite(a.lr)) throw UsageError("train: --lr must be finite and >= 0");
  const DatasetManifest m = load_manifest(a.data);
  std::vector<std::string> ids = m.train.empty() ? m.val : m.train;
  if (a.limit > 0 && static_cast<std::size_t>(a.limit) < ids.size()) ids.resize(static_cast<std::size_t>(a.limit));
  if (ids.empty()) throw UsageError("train: dataset has no plans");
  const auto samples = nn::load_samples(a.data, ids, a.step_mm);

  nn::NetConfig config;
  config.arch = nn::arch_from_string(a.arch);
  config.base_channels = a.base_channels;
  config.n_scales = a.n_scales;
  config.blocks_per_stage = a.blocks_per_stage;
  if (config.arch == nn::Arch::UNet2D) {
    config.in_channels = samples.front().input.depth();
    err << "unet2d: " << config.in_channels << " input/output channels\n";
  }

  const fs::path ckpt(a.out);
  fs::create_directories(ckpt);
  const fs::path loss_path = a.loss_csv.empty() ? ckpt / "loss.csv" : fs::path(a.loss_csv);
  std::ofstream loss_csv(loss_path);
  if (!loss_csv) throw IoError("cannot write " + loss_path.string());
  loss_csv << "step,loss,psnr\n" << std::setprecision(17);

  auto net = nn::build_network<float>(config, g.seed);
  double ratio = 0.0;
  for (const auto& s : samples) ratio += s.target_max / s.input_max;
  ratio /= static_cast<double>(samples.size());
  const PlaneGeometry geom = samples.front().geometry;
  if (a.save_init) nn::save_checkpoint(ckpt / "init", *net, {0, 0.0, g.seed, ratio, geom});

  nn::TrainOptions opt;
  opt.steps = a.steps;
  opt.adam.lr = a.lr;
  opt.seed = g.seed;
  opt.on_step = [&](const nn::StepRecord& r, const nn::Network<float>& n) {
    loss_csv << r.step << ',' << r.loss << ',' << format_psnr(r.psnr_db) << '\n';
    if (a.checkpoint_every > 0 && r.step % a.checkpoint_every == 0) {
      nn::save_checkpoint(ckpt, n, {r.step, r.loss, g.seed, ratio, geom});
    }
  };
  nn::TrainResult result = nn::train(samples, std::move(net), opt);
  const double last_loss = result.curve.empty() ? 0.0 : result.curve.back().loss;
  const double last_psnr = result.curve.empty() ? 0.0 : result.curve.back().psnr_db;
  nn::save_checkpoint(ckpt, *result.net, {a.steps, last_loss, g.seed, result.fluence_scale_ratio, geom});

  std::ostringstream text;
  text << "trained " << nn::to_string(config.arch) << " on " << samples.size() << " plans for " << a.steps
       << " steps; final loss " << last_loss << ", psnr " << format_psnr(last_psnr) << " dB -> " << ckpt.string()
       << "\n";
  report(g, out,
         {{"command", "train"},
          {"arch", nn::to_string(config.arch)},
          {"plans", samples.size()},
          {"in_channels", config.in_channels},
          {"steps", a.steps},
          {"final_loss", last_loss},
          {"final_psnr", format_psnr(last_psnr)},
          {"checkpoint", ckpt.string()},
          {"loss_csv", loss_path.string()}},
         text.str());
  return kExitOk;
}

int cmd_predict(const Globals& g, const PredictArgs& a, std::ostream& out) {
  if (!fs::is_regular_file(fs::path(a.ckpt) / "manifest.json")) throw UsageError("checkpoint not found: " + a.ckpt);
  require_file(a.plan, "plan");
  require_file(a.dose, "dose grid");
  const nn::LoadedCheckpoint ck = nn::load_checkpoint(a.ckpt);
  const VmatPlan plan = load_plan(a.plan);
  const Grid3 dose = load_grid(a.dose);
  const PlaneStack pred = nn::predict(plan, dose, *ck.net, ck.meta.fluence_scale_ratio, ck.meta.geometry, a.step_mm);
  save_stack(pred, a.out);
  report(g, out, {{"command", "predict"}, {"shape", {pred.n_cp, pred.geometry.nv, pred.geometry.nu}}, {"out", a.out}},
         "predicted " + stack_summary(pred) + " -> " + a.out + "\n");
  return kExitOk;
}

int cmd_eval(const Globals& g, const EvalArgs& a, std::ostream& out) {
  require_file(a.pred, "prediction");
  require_file(a.target, "target");
  require_file(a.plan, "plan");
  const PlaneStack pred = load_stack(a.pred);
  const PlaneStack target = load_stack(a.target);
  if (!pred.same_shape(target)) {
    throw nn::ShapeError("prediction " + stack_summary(pred) + " vs target " + stack_summary(target));
  }
  const VmatPlan plan = load_plan(a.plan);
  std::vector<std::pair<std::string, Grid3>> masks;
  for (const auto& path : a.masks) {
    require_file(path, "mask");
    masks.emplace_back(fs::path(path).stem().string(), load_grid(path));
  }
  GridSpec spec = preset_by_name(g.preset).grid_spec();
  if (!a.dose.empty()) {
    require_file(a.dose, "dose grid");
    spec = GridSpec::of(load_grid(a.dose));
  } else if (!masks.empty()) {
    spec = GridSpec::of(masks.front().second);
  }

  const double p = psnr(pred, target);
  const double s = ssim(pred, target);
  const Grid3 dose_pred = forward_dose(pred, plan, spec);
  const Grid3 dose_target = forward_dose(target, plan, spec);
  const double mae = mae_gy(dose_pred, dose_target, masks.empty() ? nullptr : &masks.front().second);
  const std::string id = a.id.empty() ? fs::path(a.plan).stem().string() : a.id;

  std::ofstream csv(a.report);
  if (!csv) throw IoError("cannot write " + a.report);
  csv << "plan_id,psnr_db,ssim,mae_gy\n" << std::setprecision(10);
  csv << id << ',' << format_psnr(p) << ',' << s << ',' << mae << '\n';

  json dvhs = json::array();
  const fs::path dvh_dir = a.dvh_dir.empty() ? fs::path(a.report).parent_path() : fs::path(a.dvh_dir);
  if (!masks.empty()) fs::create_directories(dvh_dir.empty() ? fs::path(".") : dvh_dir);
  for (const auto& [name, mask] : masks) {
    // Shared dose axis so the two curves compare bin by bin.
    const DvhCurve t0 = dvh(dose_target, mask, a.bins, -1.0, name);
    const DvhCurve p0 = dvh(dose_pred, mask, a.bins, -1.0, name);
    const double d_max = std::max(t0.dose_bins_gy.back(), p0.dose_bins_gy.back());
    const DvhCurve dt = dvh(dose_target, mask, a.bins, d_max, name);
    const DvhCurve dp = dvh(dose_pred, mask, a.bins, d_max, name);
    const fs::path fp = dvh_dir / ("dvh_" + id + "_" + name + "_pred.csv");
    const fs::path ft = dvh_dir / ("dvh_" + id + "_" + name + "_target.csv");
    write_dvh_csv(dp, fp);
    write_dvh_csv(dt, ft);
    dvhs.push_back({{"structure", name},
                    {"pred_csv", fp.string()},
                    {"target_csv", ft.string()},
                    {"max_diff", dvh_max_difference(dp, dt)}});
  }

  std::ostringstream text;
  text << "plan " << id << ": psnr " << format_psnr(p) << " dB, ssim " << std::setprecision(6) << s << ", mae "
       << mae << " Gy -> " << a.report << "\n";
  report(g, out,
         {{"command", "eval"},
          {"plan_id", id},
          {"psnr_db", format_psnr(p)},
          {"ssim", s},
          {"mae_gy", mae},
          {"report", a.report},
          {"dvh", dvhs}},
         text.str());
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"VMAT fluence-map prediction toolkit", "vmatflux"};
  app.require_subcommand(1);
  app.fallthrough();

  Globals g;
  app.add_option("--seed", g.seed, "Random seed");
  app.add_option("--threads", g.threads, "Worker threads (default: VMATFLUX_THREADS or all cores)");
  app.add_option("--preset", g.preset, "Shape preset")->check(CLI::IsMember({"ci", "paper-shape"}));
  app.add_flag("--json", g.json, "Machine-readable output");

  GenArgs gen;
  auto* sgen = app.add_subcommand("gen", "Generate a synthetic dataset");
  sgen->add_option("-n", gen.n, "Number of plans")->required();
  sgen->add_option("-o,--out", gen.out, "Output directory")->required();

  FluenceArgs fl;
  auto* sfl = app.add_subcommand("fluence", "Rasterize the fluence stack of a plan");
  sfl->add_option("--plan", fl.plan, "Plan JSON")->required();
  sfl->add_option("-o,--out", fl.out, "Output VFT1 stack")->required();
  sfl->add_option("--substeps", fl.substeps, "Gantry substeps per control point")->check(CLI::PositiveNumber);
  sfl->add_option("--size-px", fl.size_px, "Plane size override")->check(CLI::PositiveNumber);
  sfl->add_option("--spacing-mm", fl.spacing_mm, "Pixel spacing override")->check(CLI::PositiveNumber);

  BevArgs bv;
  auto* sbv = app.add_subcommand("bev", "Project a dose grid into the beam's eye view");
  sbv->add_option("--plan", bv.plan, "Plan JSON")->required();
  sbv->add_option("--dose", bv.dose, "Dose grid VFT1")->required();
  sbv->add_option("-o,--out", bv.out, "Output VFT1 stack")->required();
  sbv->add_option("--step-mm", bv.step_mm, "Ray sampling step")->check(CLI::PositiveNumber);
  sbv->add_option("--size-px", bv.size_px, "Plane size override")->check(CLI::PositiveNumber);
  sbv->add_option("--spacing-mm", bv.spacing_mm, "Pixel spacing override")->check(CLI::PositiveNumber);

  TrainArgs tr;
  auto* str = app.add_subcommand("train", "Train a network on a dataset");
  str->add_option("--data", tr.data, "Dataset directory")->required();
  str->add_option("-o,--out", tr.out, "Checkpoint directory")->required();
  str->add_option("--arch", tr.arch, "mednext, unet3d or unet2d");
  str->add_option("--steps", tr.steps, "Optimizer steps");
  str->add_option("--lr", tr.lr, "Adam learning rate");
  str->add_option("--base-channels", tr.base_channels, "Channels at full resolution")->check(CLI::PositiveNumber);
  str->add_option("--n-scales", tr.n_scales, "Resolution levels")->check(CLI::Range(2, 8));
  str->add_option("--blocks-per-stage", tr.blocks_per_stage, "Blocks per level")->check(CLI::NonNegativeNumber);
  str->add_option("--limit", tr.limit, "Use only the first N training plans")->check(CLI::NonNegativeNumber);
  str->add_option("--checkpoint-every", tr.checkpoint_every, "Checkpoint period in steps")
      ->check(CLI::NonNegativeNumber);
  str->add_option("--step-mm", tr.step_mm, "BEV ray sampling step")->check(CLI::PositiveNumber);
  str->add_option("--loss-csv", tr.loss_csv, "Loss curve path (default <out>/loss.csv)");
  str->add_flag("--save-init", tr.save_init, "Also write the initial parameters to <out>/init");

  PredictArgs pr;
  auto* spr = app.add_subcommand("predict", "Predict the fluence stack of a plan from its dose");
  spr->add_option("--ckpt", pr.ckpt, "Checkpoint directory")->required();
  spr->add_option("--plan", pr.plan, "Plan JSON")->required();
  spr->add_option("--dose", pr.dose, "Dose grid VFT1")->required();
  spr->add_option("-o,--out", pr.out, "Output VFT1 stack")->required();
  spr->add_option("--step-mm", pr.step_mm, "BEV ray sampling step")->check(CLI::PositiveNumber);

  EvalArgs ev;
  auto* sev = app.add_subcommand("eval", "Compare a predicted fluence stack with its target");
  sev->add_option("--pred", ev.pred, "Predicted stack")->required();
  sev->add_option("--target", ev.target, "Target stack")->required();
  sev->add_option("--plan", ev.plan, "Plan JSON")->required();
  sev->add_option("--report", ev.report, "Metrics CSV")->required();
  sev->add_option("--mask", ev.masks, "Structure mask grid (repeatable; the first sets the MAE region)");
  sev->add_option("--dose", ev.dose, "Grid whose geometry the recomputed doses use");
  sev->add_option("--id", ev.id, "Plan id in the report (default: plan file stem)");
  sev->add_option("--dvh-dir", ev.dvh_dir, "Directory for DVH CSVs (default: next to the report)");
  sev->add_option("--bins", ev.bins, "DVH dose points")->check(CLI::Range(2, 100000));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << app.help();
    return kExitUsage;
  }

  set_thread_count(g.threads);
  try {
    if (sgen->parsed()) return cmd_gen(g, gen, out);
    if (sfl->parsed()) return cmd_fluence(g, fl, out);
    if (sbv->parsed()) return cmd_bev(g, bv, out);
    if (str->parsed()) return cmd_train(g, tr, out, err);
    if (spr->parsed()) return cmd_predict(g, pr, out);
    if (sev->parsed()) return cmd_eval(g, ev, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    if (sgen->parsed()) err << sgen->help();
    return kExitUsage;
  } catch (const nn::ShapeError& e) {
    err << "shape error: " << e.what() << "\n";
    return kExitState;
  } catch (const PlanValidationError& e) {
    err << "invalid plan: " << e.what() << "\n";
    return kExitUsage;
  } catch (const IoError& e) {
    err << "i/o error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const fs::filesystem_error& e) {
    err << "i/o error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitState;
  }
  err << app.help();
  return kExitUsage;
}

}  // namespace vmatflux

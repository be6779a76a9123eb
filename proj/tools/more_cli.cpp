// more: command-line front end for scene generation, evaluation, gradient
// checking and the toy MoE training loop.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "more.hpp"
#include "more/eval/pipeline.hpp"

#ifndef MORE_BUILD_ID
#define MORE_BUILD_ID "unknown"
#endif

namespace fs = std::filesystem;
using namespace more;

namespace {

enum Exit : int { kOk = 0, kUsage = 1, kConfig = 2, kIo = 3, kValidation = 4, kMetric = 5 };

// Thrown by a command to exit with a given code after printing its message.
struct CommandFailure {
  int code;
  std::string message;
};

config::RunConfig load_config(const std::string& path) {
  return path.empty() ? config::RunConfig{} : config::load_run_config(path);
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for writing: " + path.string());
  f << text;
  if (!f) throw IoError("write failed: " + path.string());
}

Json envelope(const MetricReport& r, const std::string& command, const config::RunConfig& cfg) {
  Json j = r.to_json();
  j["command"] = command;
  j["build"] = MORE_BUILD_ID;
  j["run_config"] = config::to_json(cfg);
  return j;
}

// Prints the table and writes the JSON report. A report that fails validation
// is still written (for inspection) before the metric-failure exit.
int emit(const MetricReport& r, const std::string& command, const config::RunConfig& cfg, const std::string& out) {
  std::cout << r.to_table();
  if (!out.empty()) write_text(out, envelope(r, command, cfg).dump(2) + "\n");
  r.validate();
  return kOk;
}

std::string frame_name(const char* kind, std::size_t i) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_%03zu.mrtf", kind, i);
  return buf;
}

// A path is either one tensor file or a scene directory holding <kind>_NNN.mrtf.
std::vector<fs::path> frame_files(const fs::path& p, const char* kind) {
  if (!fs::exists(p)) throw IoError("no such file or directory: " + p.string());
  if (!fs::is_directory(p)) return {p};
  std::vector<fs::path> out;
  for (std::size_t i = 0;; ++i) {
    const fs::path f = p / frame_name(kind, i);
    if (!fs::exists(f)) break;
    out.push_back(f);
  }
  if (out.empty()) throw IoError("no " + std::string(kind) + "_*.mrtf files in " + p.string());
  return out;
}

std::vector<PointMap> load_pointmaps(const fs::path& p, const char* kind) {
  std::vector<PointMap> out;
  for (const auto& f : frame_files(p, kind)) out.push_back(io::vec3_grid_from_tensor(io::load_tensor(f)));
  return out;
}

std::vector<DepthMap> load_depths(const fs::path& p) {
  std::vector<DepthMap> out;
  for (const auto& f : frame_files(p, "depth")) out.push_back(io::depth_from_tensor(io::load_tensor(f)));
  return out;
}

// Stacks same-width frames vertically so sequence metrics see one map.
template <class T>
MaskedGrid<T> stack(const std::vector<MaskedGrid<T>>& frames) {
  const std::size_t W = frames.front().width();
  std::size_t H = 0;
  for (const auto& f : frames) {
    if (f.width() != W) throw InvalidArgument("frames differ in width");
    H += f.height();
  }
  MaskedGrid<T> out(H, W);
  std::size_t row = 0;
  for (const auto& f : frames) {
    for (std::size_t i = 0; i < f.height(); ++i)
      for (std::size_t j = 0; j < W; ++j)
        if (f.valid(i, j)) out.set(row + i, j, f(i, j));
    row += f.height();
  }
  return out;
}

fs::path trajectory_file(const fs::path& p) {
  return fs::is_directory(p) ? p / "trajectory.mrtf" : p;
}

Vec3 parse_vec3(const std::vector<double>& v, const char* what) {
  if (v.empty()) return {};
  if (v.size() != 3) throw ConfigError(std::string(what) + ": expected three values");
  return {v[0], v[1], v[2]};
}

// ---------------------------------------------------------------------------

struct GenSceneArgs {
  std::string scene, out;
  std::size_t cameras = 4, height = 48, width = 64;
  bool ply = false;
};

int cmd_gen_scene(const GenSceneArgs& a) {
  const synth::Scene scene =
      a.scene.empty() ? synth::default_scene(a.cameras, a.height, a.width) : config::load_scene(a.scene);
  fs::create_directories(a.out);
  const fs::path dir(a.out);
  write_text(dir / "scene.json", config::to_json(scene).dump(2) + "\n");
  std::vector<Pose> traj;
  for (const auto& c : scene.cameras) traj.push_back(c.pose());
  io::save_tensor(dir / "cameras.mrtf", io::cameras_to_tensor(scene.cameras));
  io::save_tensor(dir / "trajectory.mrtf", io::trajectory_to_tensor(traj));
  for (std::size_t i = 0; i < scene.cameras.size(); ++i) {
    const synth::RenderOutput r = synth::render(scene, i);
    // points are stored in world coordinates, normals in the camera frame
    PointMap world = r.points;
    for (std::size_t f = 0; f < world.size(); ++f)
      if (world.valid(f)) world[f] = scene.cameras[i].pose().apply(world[f]);
    io::save_tensor(dir / frame_name("depth", i), io::depth_to_tensor(r.depth));
    io::save_tensor(dir / frame_name("points", i), io::vec3_grid_to_tensor(world));
    io::save_tensor(dir / frame_name("normals", i), io::vec3_grid_to_tensor(r.normals));
    if (a.ply) {
      std::vector<Vec3> pts;
      for (std::size_t f = 0; f < world.size(); ++f)
        if (world.valid(f)) pts.push_back(world[f]);
      char name[64];
      std::snprintf(name, sizeof name, "points_%03zu.ply", i);
      io::write_ply(dir / name, pts);
    }
    std::cout << "frame " << i << ": " << r.depth.valid_count() << " valid pixels\n";
  }
  std::cout << "wrote " << scene.cameras.size() << " frames to " << dir.string() << "\n";
  return kOk;
}

struct PerturbArgs {
  std::string in, out;
  std::uint64_t seed = 0;
  double scale = 1.0, rot_deg = 0.0;
  std::vector<double> axis, trans;
  double depth_noise = 0.0, normal_tilt_deg = 0.0, pose_rot_deg = 0.0, pose_trans = 0.0;
};

int cmd_perturb(const PerturbArgs& a) {
  const fs::path in(a.in), out(a.out);
  if (!fs::is_directory(in)) throw IoError("not a scene directory: " + in.string());
  synth::NoiseSpec spec;
  spec.seed = a.seed;
  Vec3 axis = parse_vec3(a.axis, "--axis");
  if (a.axis.empty()) axis = {0.0, 1.0, 0.0};
  if (!(a.scale > 0.0)) throw ConfigError("--scale must be positive");
  spec.transform = Sim3{a.scale, Rotation::from_axis_angle(axis, deg2rad(a.rot_deg)), parse_vec3(a.trans, "--trans")};
  spec.depth_noise = a.depth_noise;
  spec.normal_tilt_deg = a.normal_tilt_deg;
  spec.pose_rot_deg = a.pose_rot_deg;
  spec.pose_trans = a.pose_trans;

  fs::create_directories(out);
  const auto depths = frame_files(in, "depth");
  for (std::size_t i = 0; i < depths.size(); ++i) {
    synth::RenderOutput r{io::depth_from_tensor(io::load_tensor(depths[i])),
                          io::vec3_grid_from_tensor(io::load_tensor(in / frame_name("points", i))),
                          io::vec3_grid_from_tensor(io::load_tensor(in / frame_name("normals", i)))};
    const synth::Perturbed p = synth::perturb(r, spec, i);
    io::save_tensor(out / frame_name("depth", i), io::depth_to_tensor(p.output.depth));
    io::save_tensor(out / frame_name("points", i), io::vec3_grid_to_tensor(p.output.points));
    io::save_tensor(out / frame_name("normals", i), io::vec3_grid_to_tensor(p.output.normals));
  }
  const auto traj = io::trajectory_from_tensor(io::load_tensor(in / "trajectory.mrtf"));
  const auto [ptraj, rec] = synth::perturb_trajectory(traj, spec);
  io::save_tensor(out / "trajectory.mrtf", io::trajectory_to_tensor(ptraj));

  const auto& t = spec.transform;
  Json record{{"seed", spec.seed},
              {"scale", t.scale},
              {"rotation", {t.rotation.w(), t.rotation.x(), t.rotation.y(), t.rotation.z()}},
              {"translation", {t.translation.x, t.translation.y, t.translation.z}},
              {"depth_noise", spec.depth_noise},
              {"normal_tilt_deg", spec.normal_tilt_deg},
              {"pose_rot_deg", spec.pose_rot_deg},
              {"pose_trans", spec.pose_trans}};
  write_text(out / "perturbation.json", record.dump(2) + "\n");
  std::cout << "perturbed " << depths.size() << " frames into " << out.string() << "\n";
  return kOk;
}

struct EvalArgs {
  std::string pred, gt, config, out;
  std::optional<std::size_t> keyframe_stride;
  bool no_align = false;
};

int cmd_eval_pointmap(const EvalArgs& a) {
  config::RunConfig cfg = load_config(a.config);
  if (a.keyframe_stride) cfg.eval.keyframe_stride = *a.keyframe_stride;
  cfg.validate();
  const auto pred = load_pointmaps(a.pred, "points");
  const auto gt = load_pointmaps(a.gt, "points");
  eval::PointmapEvalOptions opt;
  opt.keyframe_stride = cfg.eval.keyframe_stride;
  opt.align = !a.no_align;
  opt.icp = {static_cast<int>(cfg.eval.icp_max_iters), cfg.eval.icp_tol, cfg.eval.with_scale};
  const auto res = eval::evaluate_pointmaps(pred, gt, opt);
  return emit(res.report, "eval-pointmap", cfg, a.out);
}

int cmd_eval_depth(const EvalArgs& a) {
  const config::RunConfig cfg = load_config(a.config);
  const auto pred = stack(load_depths(a.pred));
  const auto gt = stack(load_depths(a.gt));
  const MetricReport r = eval::depth_metrics(pred, gt, cfg.eval.depth_alignment);
  return emit(r, "eval-depth", cfg, a.out);
}

int cmd_eval_normal(const EvalArgs& a) {
  const config::RunConfig cfg = load_config(a.config);
  const auto pred = stack(load_pointmaps(a.pred, "normals"));
  const auto gt = stack(load_pointmaps(a.gt, "normals"));
  const MetricReport r = eval::normal_metrics(pred, gt);
  return emit(r, "eval-normal", cfg, a.out);
}

int cmd_eval_pose(const EvalArgs& a) {
  const config::RunConfig cfg = load_config(a.config);
  const auto pred = io::trajectory_from_tensor(io::load_tensor(trajectory_file(a.pred)));
  const auto gt = io::trajectory_from_tensor(io::load_tensor(trajectory_file(a.gt)));
  MetricReport r = eval::pose_metrics_angular(pred, gt, {cfg.eval.pose_threshold_deg, cfg.eval.auc_max_deg});
  if (pred.size() >= 3) {
    const MetricReport d = eval::pose_metrics_distance(pred, gt, {cfg.eval.rpe_stride, cfg.eval.with_scale});
    r.merge(d);
    r.set_config(d.config());
  }
  return emit(r, "eval-pose", cfg, a.out);
}

struct CheckGradArgs {
  std::uint64_t seed = 7;
  std::size_t moe_instances = 20, loss_instances = 4;
  bool quiet = false;
};

int cmd_check_grad(const CheckGradArgs& a) {
  gradcheck::SuiteOptions so;
  so.seed = a.seed;
  so.moe_instances = a.moe_instances;
  so.loss_instances = a.loss_instances;
  const auto res = gradcheck::run_suite(so, [&](const gradcheck::Comparison& c) {
    if (a.quiet && c.passed) return;
    std::printf("%-4s %-36s seed=%-10llu entries=%-4zu skipped=%-3zu max_rel=%.3e\n", c.passed ? "ok" : "FAIL",
                c.name.c_str(), static_cast<unsigned long long>(c.seed), c.entries, c.skipped, c.max_rel_error);
  });
  std::size_t failed = 0;
  for (const auto& c : res.comparisons) failed += c.passed ? 0 : 1;
  std::printf("%zu comparisons, %zu failed, max relative error %.3e (tolerance %.0e, step %.0e)\n",
              res.comparisons.size(), failed, res.max_rel_error(), so.fd.tolerance, so.fd.step);
  return res.passed() ? kOk : kValidation;
}

struct TrainArgs {
  std::string config, log, out, save_layer;
  std::optional<std::uint64_t> seed;
  std::optional<double> lambda_moe;
  std::optional<std::size_t> steps;
};

int cmd_train_toy(const TrainArgs& a) {
  config::RunConfig cfg = load_config(a.config);
  if (a.seed) cfg.seed = *a.seed;
  if (a.lambda_moe) cfg.weights.moe = *a.lambda_moe;
  if (a.steps) cfg.schedule.steps = *a.steps;
  cfg.validate();

  std::ofstream log;
  if (!a.log.empty()) {
    if (fs::path(a.log).has_parent_path()) fs::create_directories(fs::path(a.log).parent_path());
    log.open(a.log, std::ios::binary);
    if (!log) throw IoError("cannot open for writing: " + a.log);
  }
  const auto res = train::train_toy(cfg.toy(), [&](const train::StepLog& s) {
    if (!log) return;
    Json j{{"step", s.step}, {"stage", s.stage}, {"loss", s.loss}, {"mse", s.mse}, {"l_moe", s.balance},
           {"clipped", s.clipped}, {"used_loss", s.used_loss}};
    j["threshold"] = s.threshold ? Json(*s.threshold) : Json(nullptr);
    j["f"] = s.f;
    log << j.dump() << '\n';
  });
  if (log && !log.good()) throw IoError("write failed: " + a.log);

  MetricReport r("train-toy");
  r.add("initial_loss", res.initial_loss, std::nullopt, 1);
  r.add("final_loss", res.final_loss, std::nullopt, 1);
  r.add("final_mse", res.final_mse, std::nullopt, cfg.task.tokens);
  r.add("max_expert_share", res.max_share, std::nullopt, cfg.task.tokens);
  r.add("mean_purity", res.mean_purity, std::nullopt, cfg.task.domains);
  for (std::size_t c = 0; c < res.domain_purity.size(); ++c)
    r.add("purity_domain_" + std::to_string(c), res.domain_purity[c], std::nullopt, 1);
  r.set_counter("clip_events", res.clip_events);
  r.set_counter("steps", res.log.size());
  Json routing{{"f", res.final_stats.f}, {"g", res.final_stats.g}, {"domain_expert", res.domain_expert}};
  r.set_config(Json{{"routing", routing}});
  if (!a.save_layer.empty()) io::save_moe_layer(a.save_layer, res.model.layer);
  const int code = emit(r, "train-toy", cfg, a.out);
  if (!(res.final_loss < res.initial_loss)) throw CommandFailure{kMetric, "training did not reduce the loss"};
  return code;
}

struct ReportArgs {
  std::string in;
  bool json = false;
};

int cmd_report(const ReportArgs& a) {
  Json j;
  try {
    j = Json::parse(config::read_text(a.in));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(a.in + ": " + e.what());
  }
  MetricReport r;
  try {
    r = MetricReport::from_json(j);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(a.in + ": not a metric report: " + e.what());
  }
  if (a.json)
    std::cout << j.dump(2) << '\n';
  else {
    std::cout << r.to_table();
    if (j.contains("build")) std::cout << "# build: " << j.at("build").get<std::string>() << '\n';
  }
  r.validate();
  return kOk;
}

int run(int argc, char** argv) {
  CLI::App app{"Scene generation, evaluation, gradient checking and toy MoE training"};
  app.set_version_flag("--version", std::string(MORE_BUILD_ID));
  app.require_subcommand(1);

  GenSceneArgs gs;
  auto* gen = app.add_subcommand("gen-scene", "Render a synthetic scene to depth, point and normal tensors");
  gen->add_option("--scene", gs.scene, "Scene JSON (default: built-in scene)")->check(CLI::ExistingFile);
  gen->add_option("--out", gs.out, "Output directory")->required();
  gen->add_option("--cameras", gs.cameras, "Camera count for the built-in scene")->check(CLI::Range(1, 64));
  gen->add_option("--height", gs.height, "Image height for the built-in scene")->check(CLI::Range(2, 4096));
  gen->add_option("--width", gs.width, "Image width for the built-in scene")->check(CLI::Range(2, 4096));
  gen->add_flag("--ply", gs.ply, "Also write world-space PLY point clouds");

  PerturbArgs pa;
  auto* per = app.add_subcommand("perturb", "Apply known perturbations to a scene directory");
  per->add_option("--in", pa.in, "Input scene directory")->required();
  per->add_option("--out", pa.out, "Output directory")->required();
  per->add_option("--seed", pa.seed, "Noise seed");
  per->add_option("--scale", pa.scale, "Similarity scale");
  per->add_option("--rot-deg", pa.rot_deg, "Similarity rotation angle, degrees");
  per->add_option("--axis", pa.axis, "Similarity rotation axis (3 values)")->expected(3);
  per->add_option("--trans", pa.trans, "Similarity translation (3 values)")->expected(3);
  per->add_option("--depth-noise", pa.depth_noise, "Relative depth noise std")->check(CLI::NonNegativeNumber);
  per->add_option("--normal-tilt-deg", pa.normal_tilt_deg, "Exact tilt applied to every normal, degrees");
  per->add_option("--pose-rot-deg", pa.pose_rot_deg, "Maximum per-pose rotation noise, degrees")
      ->check(CLI::NonNegativeNumber);
  per->add_option("--pose-trans", pa.pose_trans, "Per-pose translation noise std")->check(CLI::NonNegativeNumber);

  auto add_eval = [&](const char* name, const char* help, EvalArgs& ea) {
    auto* c = app.add_subcommand(name, help);
    c->add_option("--pred", ea.pred, "Prediction (tensor file or scene directory)")->required();
    c->add_option("--gt", ea.gt, "Ground truth (tensor file or scene directory)")->required();
    c->add_option("--config", ea.config, "Run config JSON")->check(CLI::ExistingFile);
    c->add_option("--out", ea.out, "Write the JSON report here");
    return c;
  };
  EvalArgs ep, ed, en, eo;
  auto* evp = add_eval("eval-pointmap", "Accuracy, completeness and normal consistency after Sim(3) alignment", ep);
  evp->add_option("--keyframe-stride", ep.keyframe_stride, "Use every n-th frame")->check(CLI::PositiveNumber);
  evp->add_flag("--no-align", ep.no_align, "Skip Umeyama/ICP alignment");
  auto* evd = add_eval("eval-depth", "AbsRel and delta<1.25 depth metrics", ed);
  auto* evn = add_eval("eval-normal", "Angular normal error metrics", en);
  auto* evo = add_eval("eval-pose", "RRA/RTA/AUC and ATE/RPE trajectory metrics", eo);

  CheckGradArgs cg;
  auto* chk = app.add_subcommand("check-grad", "Finite-difference check of every analytic gradient");
  chk->add_option("--seed", cg.seed, "Suite seed");
  chk->add_option("--moe-instances", cg.moe_instances, "Random MoE layers to check")->check(CLI::PositiveNumber);
  chk->add_option("--loss-instances", cg.loss_instances, "Instances per loss term")->check(CLI::NonNegativeNumber);
  chk->add_flag("--quiet", cg.quiet, "Print failures and the summary only");

  TrainArgs ta;
  auto* trn = app.add_subcommand("train-toy", "Two-stage MoE training on the multi-domain token task");
  trn->add_option("--config", ta.config, "Run config JSON")->check(CLI::ExistingFile);
  trn->add_option("--seed", ta.seed, "Override the config seed");
  trn->add_option("--lambda-moe", ta.lambda_moe, "Override the load-balancing weight");
  trn->add_option("--steps", ta.steps, "Override the total step count");
  trn->add_option("--log", ta.log, "Per-step JSONL log");
  trn->add_option("--out", ta.out, "Write the JSON report here");
  trn->add_option("--save-layer", ta.save_layer, "Save the trained MoE layer to this directory");

  ReportArgs ra;
  auto* rep = app.add_subcommand("report", "Print and validate a stored JSON report");
  rep->add_option("--in", ra.in, "Report file")->required()->check(CLI::ExistingFile);
  rep->add_flag("--json", ra.json, "Print the raw JSON instead of a table");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (*gen) return cmd_gen_scene(gs);
    if (*per) return cmd_perturb(pa);
    if (*evp) return cmd_eval_pointmap(ep);
    if (*evd) return cmd_eval_depth(ed);
    if (*evn) return cmd_eval_normal(en);
    if (*evo) return cmd_eval_pose(eo);
    if (*chk) return cmd_check_grad(cg);
    if (*trn) return cmd_train_toy(ta);
    if (*rep) return cmd_report(ra);
  } catch (const CommandFailure& f) {
    std::cerr << "error: " << f.message << '\n';
    return f.code;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << '\n';
    return kIo;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "I/O error: " << e.what() << '\n';
    return kIo;
  } catch (const FormatError& e) {
    std::cerr << "validation error: " << e.what() << '\n';
    return kValidation;
  } catch (const InvalidArgument& e) {
    std::cerr << "validation error: " << e.what() << '\n';
    return kValidation;
  } catch (const DegenerateError& e) {
    std::cerr << "metric failure: " << e.what() << '\n';
    return kMetric;
  }
  return kUsage;
}

}  // namespace

int main(int argc, char** argv) { return run(argc, argv); }

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>

#include <CLI11.hpp>

#include "graspfield/error.hpp"
#include "graspfield/pipeline.hpp"

using namespace graspfield;
namespace fs = std::filesystem;

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

PipelineConfig config_or_default(const std::string& path) {
  return path.empty() ? PipelineConfig{} : load_pipeline_config(path);
}

void log(const std::string& msg) { std::fprintf(stderr, "%s\n", msg.c_str()); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"graspfield: grasp pose learning pipeline"};
  app.require_subcommand(1);
  std::string config_path;

  auto* gen = app.add_subcommand("gen-objects", "write the procedural object set");
  std::string objects_dir = "objects";
  gen->add_option("--config", config_path, "pipeline config (JSON)")->check(CLI::ExistingFile);
  gen->add_option("--out", objects_dir, "output directory");
  int count_override = -1;
  gen->add_option("--count", count_override, "override the object count");

  auto* build = app.add_subcommand("build-dataset", "plan grasps, augment and split");
  std::string dataset_dir = "dataset";
  build->add_option("--config", config_path, "pipeline config (JSON)")->check(CLI::ExistingFile);
  build->add_option("--objects", objects_dir, "object directory from gen-objects");
  build->add_option("--out", dataset_dir, "dataset directory");

  auto* trn = app.add_subcommand("train", "train the regression network");
  std::string ckpt_dir = "checkpoints";
  std::string loss = "consistency";
  bool all_losses = false;
  int epochs_override = -1;
  trn->add_option("--config", config_path, "pipeline config (JSON)")->check(CLI::ExistingFile);
  trn->add_option("--dataset", dataset_dir, "dataset directory");
  trn->add_option("--out", ckpt_dir, "checkpoint directory");
  trn->add_option("--loss", loss, "l2, consistency or combined")
      ->check(CLI::IsMember({"l2", "consistency", "combined"}));
  trn->add_flag("--all-losses", all_losses, "train l2, consistency and combined");
  trn->add_option("--epochs", epochs_override, "override the epoch count")->check(CLI::NonNegativeNumber);

  auto* pred = app.add_subcommand("predict", "predict a grasp for a mesh");
  std::string checkpoint, mesh_path, pose_out, scene_out;
  bool no_refine = false;
  int resample = 0;
  pred->add_option("--config", config_path, "pipeline config (JSON)")->check(CLI::ExistingFile);
  pred->add_option("--checkpoint", checkpoint, "network checkpoint")->required()->check(CLI::ExistingFile);
  pred->add_option("--mesh", mesh_path, "object OBJ")->required()->check(CLI::ExistingFile);
  pred->add_flag("--no-refine", no_refine, "return the raw network pose");
  pred->add_option("--resample", resample, "rotation attempts (0 = single pass)")->check(CLI::NonNegativeNumber);
  pred->add_option("--out", pose_out, "pose JSON (default stdout)");
  pred->add_option("--scene", scene_out, "write object plus contact markers as OBJ");

  auto* ref = app.add_subcommand("refine", "remove penetrations from a pose");
  std::string pose_in;
  double beta = -1.0;
  ref->add_option("--config", config_path, "pipeline config (JSON)")->check(CLI::ExistingFile);
  ref->add_option("--pose", pose_in, "pose JSON")->required()->check(CLI::ExistingFile);
  ref->add_option("--mesh", mesh_path, "object OBJ")->required()->check(CLI::ExistingFile);
  ref->add_option("--beta", beta, "proximity weight in [0, 1); omitted = runtime adjustment");
  ref->add_option("--out", pose_out, "pose JSON (default stdout)");

  auto* ev = app.add_subcommand("eval", "residual matrix, penetration and quality reports");
  std::string report_dir = "report";
  std::string compare;
  ev->add_option("--config", config_path, "pipeline config (JSON)")->check(CLI::ExistingFile);
  ev->add_option("--dataset", dataset_dir, "dataset directory");
  ev->add_option("--checkpoints", ckpt_dir, "directory with l2/consistency/combined checkpoints");
  ev->add_option("--out", report_dir, "report directory");
  ev->add_option("--compare", compare, "also run a gripper comparison")->check(CLI::IsMember({"low-dof"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    PipelineConfig cfg = config_or_default(config_path);
    const GripperModel model = load_gripper(cfg.gripper);
    cfg.network.output_dim = model.pose_dim();

    if (*gen) {
      if (count_override >= 0) cfg.object_count = count_override;
      if (cfg.object_count < 1) throw InvalidParameter("empty object set");
      const auto names = generate_objects(cfg, objects_dir);
      log("wrote " + std::to_string(names.size()) + " objects to " + objects_dir);
    } else if (*build) {
      const auto t0 = std::chrono::steady_clock::now();
      const bool built = build_dataset_dir(cfg, objects_dir, dataset_dir);
      log(built ? "built " + dataset_dir + " in " + std::to_string(seconds_since(t0)) + " s"
                : dataset_dir + " is up to date");
    } else if (*trn) {
      if (epochs_override >= 0) cfg.epochs = epochs_override;
      const DatasetBundle bundle = load_dataset_dir(dataset_dir);
      const std::vector<std::string> losses =
          all_losses ? std::vector<std::string>{"l2", "consistency", "combined"} : std::vector<std::string>{loss};
      const auto results = train_losses(cfg, bundle.data, losses, ckpt_dir);
      int status = 0;
      for (const auto& [name, r] : results) {
        if (r.diverged) {
          log(name + " diverged (" + r.message + "); kept the best checkpoint");
          status = 1;
        } else {
          log("trained " + name);
        }
      }
      return status;
    } else if (*pred) {
      Network net = load_network(checkpoint);
      if (net.config().output_dim != model.pose_dim()) {
        throw ShapeError("checkpoint predicts " + std::to_string(net.config().output_dim) + " values, gripper " +
                         model.name() + " needs " + std::to_string(model.pose_dim()));
      }
      const TriMesh mesh = read_obj(mesh_path);
      require_solid(mesh);
      const SignedDistanceField field = build_sdf(mesh, cfg.dataset.resolution);
      ResampleConfig rc = cfg.resample;
      rc.refine = !no_refine;
      rc.max_rotations = std::max(1, resample);
      const ResampleResult r = predict_with_resampling(net, mesh, field, model, rc);
      const std::string text = pose_to_json(model, r.pose, field.scale());
      if (pose_out.empty()) {
        std::cout << text;
      } else {
        write_text(pose_out, text);
      }
      if (!scene_out.empty()) write_obj(grasp_scene(mesh, model, r.pose, field.scale()), scene_out);
      char buf[256];
      std::snprintf(buf, sizeof buf,
                    "attempts %d, passed %d, epsilon %.4g, penetrations %d, forward %.3f s, adjustment %.3f s",
                    r.rotations_tried, r.passed ? 1 : 0, r.epsilon, r.penetrations, r.forward_seconds,
                    r.adjust_seconds);
      log(buf);
    } else if (*ref) {
      const TriMesh mesh = read_obj(mesh_path);
      const SignedDistanceField field = build_sdf(mesh, cfg.dataset.resolution);
      const PoseVector x = pose_from_json(read_text(pose_in), model);
      const RigidTransform id = RigidTransform::identity();
      const RefineResult r = beta < 0.0 ? runtime_adjust(x, model, field, id, cfg.refine)
                                        : pose_refine(x, model, field, id, beta, cfg.refine);
      const std::string text = pose_to_json(model, r.pose, field.scale());
      if (pose_out.empty()) {
        std::cout << text;
      } else {
        write_text(pose_out, text);
      }
      log(std::string(r.converged ? "converged" : "not converged") + " after " + std::to_string(r.iterations) +
          " iterations, " + std::to_string(r.penetrations) + " penetrating points");
      return r.converged ? 0 : 1;
    } else if (*ev) {
      const DatasetBundle bundle = load_dataset_dir(dataset_dir);
      auto nets = load_checkpoints(ckpt_dir);
      const auto t0 = std::chrono::steady_clock::now();
      evaluate(cfg, bundle, nets, report_dir);
      if (compare == "low-dof") write_text(fs::path(report_dir) / "compare_low_dof.csv", compare_csv(compare_low_dof(cfg)));
      log("wrote reports to " + report_dir + " in " + std::to_string(seconds_since(t0)) + " s");
    }
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}

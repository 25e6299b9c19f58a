#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "graspfield/dataset.hpp"
#include "graspfield/eval.hpp"
#include "graspfield/network.hpp"
#include "graspfield/refine.hpp"
#include "graspfield/train.hpp"

namespace graspfield {

/// Everything the command line needs, read from one JSON file. Missing keys
/// keep their defaults; unknown keys are rejected.
struct PipelineConfig {
  std::uint64_t seed = 7;
  int object_count = 20;
  std::string gripper = "simple9";  // builtin name or JSON path
  DatasetConfig dataset;
  NetworkConfig network = NetworkConfig::desk(0);  // output_dim follows the gripper
  AdamConfig adam;
  int epochs = 200;
  double beta = 0.75;  // combined loss and pose refinement
  RefineConfig refine{.joints_only = false};  // palm contacts need the wrist
  ResampleConfig resample{.refine_cfg = {.joints_only = false}};
  int compare_objects = 12;  // low-dof comparison
  int compare_epochs = 40;
  std::vector<std::uint64_t> compare_seeds{1, 2, 3};
};

PipelineConfig pipeline_config_from_json(const std::string& text);
std::string pipeline_config_to_json(const PipelineConfig& cfg);
PipelineConfig load_pipeline_config(const std::filesystem::path& path);

/// Procedural meshes as <name>.obj plus objects.json listing them in order.
std::vector<std::string> generate_objects(const PipelineConfig& cfg, const std::filesystem::path& dir);
/// Meshes listed in objects.json, in order.
std::vector<TriMesh> load_objects(const std::filesystem::path& dir);

/// Hash of everything the dataset depends on: the dataset section, seed,
/// gripper and the mesh files.
std::string dataset_hash(const PipelineConfig& cfg, const std::vector<TriMesh>& meshes, const GripperModel& model);

/// Builds and saves the dataset (entries, SDFs, meshes, manifest.json).
/// Returns false without touching anything when the manifest hash matches.
bool build_dataset_dir(const PipelineConfig& cfg, const std::filesystem::path& objects_dir,
                       const std::filesystem::path& out_dir);

/// Dataset saved by build_dataset_dir together with its meshes.
struct DatasetBundle {
  GraspDataset data;
  std::vector<TriMesh> meshes;
};
DatasetBundle load_dataset_dir(const std::filesystem::path& dir);

/// Trains each named loss and writes <loss>.gfn and residuals_<loss>.csv.
std::map<std::string, TrainResult> train_losses(const PipelineConfig& cfg, const GraspDataset& data,
                                                const std::vector<std::string>& losses,
                                                const std::filesystem::path& out_dir);

struct QualityRow {
  int object_id = 0;
  ResampleResult result;
};

struct EvalReport {
  ResidualMatrix residuals;
  std::map<std::string, PenetrationReport> penetration;  // per loss
  std::vector<QualityRow> quality;                       // test objects, combined model
  std::string penetration_csv() const;
  std::string quality_csv() const;
  std::string timing_json() const;
};

/// Residual matrix, penetration tables with refinement for every model, and
/// resampled epsilon quality per test object. Writes residual_matrix.csv,
/// penetration.csv, quality.csv and timing.json.
EvalReport evaluate(const PipelineConfig& cfg, const DatasetBundle& bundle, std::map<std::string, Network>& nets,
                    const std::filesystem::path& out_dir);

/// Loads l2.gfn, consistency.gfn and combined.gfn; IoError names the first
/// missing file.
std::map<std::string, Network> load_checkpoints(const std::filesystem::path& dir);

/// {"gripper", "pose", "translation_m"}; translation_m is the wrist position
/// in meters (pose translation divided by the SDF scale).
std::string pose_to_json(const GripperModel& model, const PoseVector& x, double scale);
/// Reads the "pose" array; ShapeError when its length is not the gripper's.
PoseVector pose_from_json(const std::string& text, const GripperModel& model);

/// Object mesh plus a small marker at every contact point, in meters.
TriMesh grasp_scene(const TriMesh& object, const GripperModel& model, const PoseVector& x, double scale);

struct CompareRow {
  std::string gripper;
  std::uint64_t seed = 0;
  int pose_dim = 0;
  double test_l2 = 0.0;
};

/// l2 training of simple9 and wide24 under the same budget per seed.
std::vector<CompareRow> compare_low_dof(const PipelineConfig& cfg);
std::string compare_csv(const std::vector<CompareRow>& rows);

}  // namespace graspfield

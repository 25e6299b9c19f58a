#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "graspfield/kinematics.hpp"
#include "graspfield/mesh.hpp"
#include "graspfield/planner.hpp"
#include "graspfield/sdf.hpp"

namespace graspfield {

enum class Split { train, test };

const char* to_string(Split s);

struct DatasetEntry {
  int object_id = 0;
  int rotation_index = 0;  // index into augmentation_rotations()
  RigidTransform t_r;
  OccupancyGrid grid;
  std::string sdf_path;  // relative to the dataset directory
  std::vector<PoseVector> poses;  // ascending cost
  std::vector<double> costs;
};

struct GraspDataset {
  std::vector<DatasetEntry> entries;
  std::vector<Split> split;               // per object id
  std::vector<SignedDistanceField> sdfs;  // per object id
  int k = 0;

  int object_count() const { return static_cast<int>(split.size()); }
  Split split_of(const DatasetEntry& e) const { return split[e.object_id]; }
  /// Entry indices in the given split, in file order.
  std::vector<std::size_t> indices(Split s) const;
};

struct DatasetConfig {
  int resolution = 32;
  int k = 8;
  double train_fraction = 0.8;
  AnnealConfig anneal;
};

/// Named procedural object, `count` of them cycling through the six
/// primitive families with seeded random dimensions (meters).
struct ObjectSpec {
  std::string name;
  PrimitiveSpec shape;
};

std::vector<ObjectSpec> procedural_objects(int count, std::uint64_t seed);

/// Identity-frame entry -> 27 entries, one per augmentation rotation. Grids
/// are re-voxelized from the rotated mesh, wrists are left-composed with t_r,
/// joints and costs are carried over.
std::vector<DatasetEntry> augment(const DatasetEntry& base, const TriMesh& mesh);

/// Per-object tags; round(fraction * n) objects go to train. Deterministic
/// in seed.
std::vector<Split> split_dataset(int object_count, double fraction, std::uint64_t seed);

/// Full generation: SDF, k annealing restarts, augmentation and split for
/// every mesh. Object i plans with seed stage_seed(seed, "plan/<i>") + restart.
GraspDataset build_dataset(const std::vector<TriMesh>& meshes, const GripperModel& model, const DatasetConfig& cfg,
                           std::uint64_t seed);

/// "n0 n1 n2 ..." alternating run lengths of 0 and 1 cells, starting with 0.
std::string encode_rle(const std::vector<std::uint8_t>& cells);
std::vector<std::uint8_t> decode_rle(const std::string& rle, std::size_t count);

std::string entry_to_json_line(const DatasetEntry& e, Split split);

/// Writes entries.jsonl and sdf/object_NNN.sdf under dir.
void save_dataset(const GraspDataset& data, const std::filesystem::path& dir);
/// Throws IoError naming the object when an SDF file is missing.
GraspDataset load_dataset(const std::filesystem::path& dir);

}  // namespace graspfield

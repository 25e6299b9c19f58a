#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "graspfield/mesh.hpp"
#include "graspfield/transform.hpp"

namespace graspfield {

/// Similarity transform placing a mesh whose centre of mass is at the origin
/// into the unit cube: p -> s p + 0.5 with s = 0.95 / L, L the longest side of
/// the bounding box.
Mat4 unit_cube_transform(const TriMesh& mesh);

/// R^3 boolean cells over [0,1]^3, x fastest. Cell (i, j, k) has its centre at
/// ((i + 0.5) / R, (j + 0.5) / R, (k + 0.5) / R).
struct OccupancyGrid {
  int resolution = 0;
  std::vector<std::uint8_t> cells;
  Mat4 object_to_grid = Mat4::Identity();

  std::size_t index(int i, int j, int k) const {
    return (static_cast<std::size_t>(k) * resolution + j) * resolution + i;
  }
  bool occupied(int i, int j, int k) const { return cells[index(i, j, k)] != 0; }
  std::size_t occupied_count() const;
};

/// Occupies a cell iff its centre is inside the mesh (ray parity). If no cell
/// centre falls inside, the centre cell is marked so the grid is never empty.
/// Throws TopologyError for open meshes and InvalidParameter for resolution < 8.
OccupancyGrid voxelize(const TriMesh& mesh, int resolution);

/// Dense signed distance samples on the nodes i / (R - 1) of the unit cube,
/// in cube units: positive outside, negative inside. Immutable once built.
class SignedDistanceField {
 public:
  SignedDistanceField() = default;
  SignedDistanceField(int resolution, std::vector<float> values, const Mat4& t_sdf);

  int resolution() const { return resolution_; }
  /// Node spacing in cube units.
  double cell() const { return 1.0 / (resolution_ - 1); }
  double cell_diagonal() const { return std::sqrt(3.0) * cell(); }
  /// s = 0.95 / L; cube units per meter.
  double scale() const { return t_sdf_(0, 0); }
  const Mat4& t_sdf() const { return t_sdf_; }
  std::span<const float> values() const { return values_; }

  float at(int i, int j, int k) const {
    return values_[(static_cast<std::size_t>(k) * resolution_ + j) * resolution_ + i];
  }
  Vec3 node(int i, int j, int k) const { return Vec3(i, j, k) * cell(); }

  /// Largest distance from the cube centre to a node with value <= 0, plus
  /// half a cell. Used to normalise torques.
  double object_radius() const;

 private:
  int resolution_ = 0;
  std::vector<float> values_;
  Mat4 t_sdf_ = Mat4::Identity();
};

/// Exact point-to-triangle distances in a band of two cells around the
/// surface, fast sweeping elsewhere until the largest update is below 1e-6,
/// signs from ray parity. Throws TopologyError for open meshes.
SignedDistanceField build_sdf(const TriMesh& mesh, int resolution);

struct SdfSample {
  double value = 0.0;
  Vec3 gradient = Vec3::Zero();
};

/// Trilinear value and its exact gradient. Outside the unit cube the value is
/// the boundary value at the nearest cube point plus the distance to it.
SdfSample sample_sdf(const SignedDistanceField& field, const Vec3& point);

/// t_sdf * t_r^-1 * p with p in meters.
Vec3 compose_to_sdf_frame(const Mat4& t_sdf, const RigidTransform& t_r, const Vec3& global_point);

/// Affine map from the grasp frame into the SDF cube.
///
/// Poses and gripper geometry are expressed in the normalised grasp frame,
/// whose unit is one cube side (L / 0.95 meters), so translations share the
/// scale of the SDF. Global meters are grasp coordinates divided by s; the map
/// is therefore t_sdf * t_r^-1 * (p / s).
struct SdfFrameMap {
  Mat3 linear = Mat3::Identity();
  Vec3 offset = Vec3::Zero();
  Vec3 apply(const Vec3& p) const { return linear * p + offset; }
};

SdfFrameMap grasp_to_sdf_map(const SignedDistanceField& field, const RigidTransform& t_r);

/// The 27 rotations Rz(g) Ry(b) Rx(a) with a, b, g in {60, 120, 180} degrees,
/// a varying fastest.
std::vector<RigidTransform> augmentation_rotations();

/// Binary container: 16-byte magic "GFLDSDF1" (zero padded), u32 resolution,
/// f32 values (x fastest), 16 f64 of t_sdf row-major. Little endian.
std::string serialize_sdf(const SignedDistanceField& field);
SignedDistanceField deserialize_sdf(const std::string& bytes);
void write_sdf(const SignedDistanceField& field, const std::filesystem::path& path);
SignedDistanceField read_sdf(const std::filesystem::path& path);

}  // namespace graspfield

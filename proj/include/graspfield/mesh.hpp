#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "graspfield/transform.hpp"

namespace graspfield {

/// Triangle mesh in meters. Solids used as grasp targets are closed and
/// outward oriented (counter-clockwise seen from outside).
struct TriMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 3>> triangles;

  std::size_t size() const { return triangles.size(); }
  Vec3 corner(std::size_t tri, int k) const { return vertices[triangles[tri][k]]; }
};

enum class PrimitiveKind { sphere, box, cylinder, capsule, ellipsoid, superquadric };

const char* to_string(PrimitiveKind kind);
PrimitiveKind primitive_from_string(const std::string& name);

/// Shape dimensions, interpreted per kind:
///   sphere        size[0] = radius
///   box           size = full extents along x, y, z
///   cylinder      size[0] = radius, size[1] = height (axis z)
///   capsule       size[0] = radius, size[1] = height of the straight part
///   ellipsoid     size = semi-axes
///   superquadric  size = semi-axes, exponents = (east-west, north-south)
struct PrimitiveSpec {
  PrimitiveKind kind = PrimitiveKind::sphere;
  std::array<double, 3> size{0.05, 0.05, 0.05};
  std::array<double, 2> exponents{1.0, 1.0};
  int segments = 32;
  int rings = 16;
};

/// Closed, outward-oriented mesh centred at its centre of mass. Throws
/// InvalidParameter for non-positive dimensions or tessellation counts.
TriMesh make_primitive(const PrimitiveSpec& spec);

TriMesh make_sphere(double radius, int segments = 32, int rings = 16);
TriMesh make_box(double wx, double wy, double wz);
TriMesh make_cylinder(double radius, double height, int segments = 32);

/// Signed volume via the divergence theorem.
double mesh_volume(const TriMesh& mesh);
double triangle_area(const TriMesh& mesh, std::size_t tri);

/// Every undirected edge is used by exactly two triangles with opposite
/// directions.
bool is_closed(const TriMesh& mesh);

/// V - E + F.
int euler_characteristic(const TriMesh& mesh);

/// Throws TopologyError if indices are out of range, a triangle is
/// degenerate, or the mesh is not closed.
void require_solid(const TriMesh& mesh);

struct Aabb {
  Vec3 lo;
  Vec3 hi;
  Vec3 extent() const { return hi - lo; }
  double longest_side() const { return extent().maxCoeff(); }
};

Aabb bounding_box(const TriMesh& mesh);

TriMesh transformed(const TriMesh& mesh, const RigidTransform& t);

/// Ray-parity inside test along +x. Grazing hits on edges or vertices are
/// retried with jittered rays.
bool contains(const TriMesh& mesh, const Vec3& p);

/// Sorted x coordinates where the line {(x, y, z)} crosses the surface.
/// When the line grazes an edge it is replaced by a jittered parallel line.
std::vector<double> line_crossings_x(const TriMesh& mesh, double y, double z);

/// Closest point on triangle (a, b, c) to p.
Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c);

/// ASCII OBJ with v and f records only.
void write_obj(const TriMesh& mesh, const std::filesystem::path& path);
std::string to_obj(const TriMesh& mesh);
TriMesh read_obj(const std::filesystem::path& path);
TriMesh parse_obj(const std::string& text);

}  // namespace graspfield

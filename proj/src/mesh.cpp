#include "graspfield/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numbers>
#include <set>
#include <sstream>
#include <utility>

#include "graspfield/error.hpp"

namespace graspfield {
namespace {

using Ring = std::vector<Vec3>;

// Closed surface of revolution-like topology: a bottom pole, rings ordered
// bottom to top with counter-clockwise vertex order seen from +z, a top pole.
TriMesh build_lathe(const std::vector<Ring>& rings, const Vec3& bottom, const Vec3& top) {
  TriMesh mesh;
  const int n = static_cast<int>(rings.front().size());
  mesh.vertices.push_back(bottom);
  for (const Ring& ring : rings) mesh.vertices.insert(mesh.vertices.end(), ring.begin(), ring.end());
  mesh.vertices.push_back(top);
  const int top_index = static_cast<int>(mesh.vertices.size()) - 1;
  auto at = [n](int ring, int j) { return 1 + ring * n + (j % n); };

  for (int j = 0; j < n; ++j) mesh.triangles.push_back({0, at(0, j + 1), at(0, j)});
  for (int r = 0; r + 1 < static_cast<int>(rings.size()); ++r) {
    for (int j = 0; j < n; ++j) {
      mesh.triangles.push_back({at(r, j), at(r, j + 1), at(r + 1, j + 1)});
      mesh.triangles.push_back({at(r, j), at(r + 1, j + 1), at(r + 1, j)});
    }
  }
  const int last = static_cast<int>(rings.size()) - 1;
  for (int j = 0; j < n; ++j) mesh.triangles.push_back({top_index, at(last, j), at(last, j + 1)});
  return mesh;
}

double signed_pow(double v, double e) {
  if (v == 0.0) return 0.0;
  return std::copysign(std::pow(std::abs(v), e), v);
}

TriMesh make_superquadric(double a, double b, double c, double e1, double e2, int segments,
                          int rings) {
  std::vector<Ring> ring_list;
  for (int k = 1; k < rings; ++k) {
    const double eta = -std::numbers::pi / 2 + std::numbers::pi * k / rings;
    Ring ring;
    for (int j = 0; j < segments; ++j) {
      const double omega = 2 * std::numbers::pi * j / segments;
      const double ce = signed_pow(std::cos(eta), e1);
      ring.emplace_back(a * ce * signed_pow(std::cos(omega), e2),
                        b * ce * signed_pow(std::sin(omega), e2), c * signed_pow(std::sin(eta), e1));
    }
    ring_list.push_back(std::move(ring));
  }
  return build_lathe(ring_list, Vec3(0, 0, -c), Vec3(0, 0, c));
}

TriMesh make_capsule(double radius, double height, int segments, int rings) {
  const int half = std::max(2, rings / 2);
  std::vector<Ring> ring_list;
  auto add_ring = [&](double phi, double z_offset) {
    Ring ring;
    for (int j = 0; j < segments; ++j) {
      const double omega = 2 * std::numbers::pi * j / segments;
      ring.emplace_back(radius * std::cos(phi) * std::cos(omega),
                        radius * std::cos(phi) * std::sin(omega), radius * std::sin(phi) + z_offset);
    }
    ring_list.push_back(std::move(ring));
  };
  for (int k = 1; k <= half; ++k) add_ring(-std::numbers::pi / 2 * (1.0 - double(k) / half), -height / 2);
  for (int k = 0; k < half; ++k) add_ring(std::numbers::pi / 2 * double(k) / half, height / 2);
  return build_lathe(ring_list, Vec3(0, 0, -height / 2 - radius), Vec3(0, 0, height / 2 + radius));
}

void require_positive(double v, const char* what) {
  if (!(v > 0.0) || !std::isfinite(v)) {
    throw InvalidParameter(std::string("primitive dimension '") + what + "' must be positive");
  }
}

double cross2(double ax, double ay, double bx, double by) { return ax * by - ay * bx; }

enum class LineHit { miss, hit, graze };

// Intersection of the line {(x, y, z)} with a triangle, projected onto yz.
LineHit line_hit(const Vec3& a, const Vec3& b, const Vec3& c, double y, double z, double& x) {
  const double area = cross2(b.y() - a.y(), b.z() - a.z(), c.y() - a.y(), c.z() - a.z());
  if (std::abs(area) < 1e-300) return LineHit::miss;
  const double w0 = cross2(b.y() - y, b.z() - z, c.y() - y, c.z() - z);
  const double w1 = cross2(c.y() - y, c.z() - z, a.y() - y, a.z() - z);
  const double w2 = cross2(a.y() - y, a.z() - z, b.y() - y, b.z() - z);
  const double tol = 1e-10 * std::abs(area);
  const bool pos = w0 >= -tol && w1 >= -tol && w2 >= -tol;
  const bool neg = w0 <= tol && w1 <= tol && w2 <= tol;
  if (!pos && !neg) return LineHit::miss;
  if (std::abs(w0) <= tol || std::abs(w1) <= tol || std::abs(w2) <= tol) return LineHit::graze;
  x = (w0 * a.x() + w1 * b.x() + w2 * c.x()) / area;
  return LineHit::hit;
}

}  // namespace

const char* to_string(PrimitiveKind kind) {
  switch (kind) {
    case PrimitiveKind::sphere: return "sphere";
    case PrimitiveKind::box: return "box";
    case PrimitiveKind::cylinder: return "cylinder";
    case PrimitiveKind::capsule: return "capsule";
    case PrimitiveKind::ellipsoid: return "ellipsoid";
    case PrimitiveKind::superquadric: return "superquadric";
  }
  return "unknown";
}

PrimitiveKind primitive_from_string(const std::string& name) {
  for (auto kind : {PrimitiveKind::sphere, PrimitiveKind::box, PrimitiveKind::cylinder,
                    PrimitiveKind::capsule, PrimitiveKind::ellipsoid, PrimitiveKind::superquadric}) {
    if (name == to_string(kind)) return kind;
  }
  throw InvalidParameter("unknown primitive kind '" + name + "'");
}

TriMesh make_sphere(double radius, int segments, int rings) {
  PrimitiveSpec spec;
  spec.kind = PrimitiveKind::sphere;
  spec.size = {radius, radius, radius};
  spec.segments = segments;
  spec.rings = rings;
  return make_primitive(spec);
}

TriMesh make_box(double wx, double wy, double wz) {
  PrimitiveSpec spec;
  spec.kind = PrimitiveKind::box;
  spec.size = {wx, wy, wz};
  return make_primitive(spec);
}

TriMesh make_cylinder(double radius, double height, int segments) {
  PrimitiveSpec spec;
  spec.kind = PrimitiveKind::cylinder;
  spec.size = {radius, height, 0.0};
  spec.segments = segments;
  return make_primitive(spec);
}

TriMesh make_primitive(const PrimitiveSpec& spec) {
  if (spec.segments < 3 || spec.rings < 2) {
    throw InvalidParameter("primitive tessellation needs segments >= 3 and rings >= 2");
  }
  const auto& s = spec.size;
  switch (spec.kind) {
    case PrimitiveKind::sphere:
      require_positive(s[0], "radius");
      return make_superquadric(s[0], s[0], s[0], 1.0, 1.0, spec.segments, spec.rings);
    case PrimitiveKind::ellipsoid:
      require_positive(s[0], "a");
      require_positive(s[1], "b");
      require_positive(s[2], "c");
      return make_superquadric(s[0], s[1], s[2], 1.0, 1.0, spec.segments, spec.rings);
    case PrimitiveKind::superquadric:
      require_positive(s[0], "a");
      require_positive(s[1], "b");
      require_positive(s[2], "c");
      require_positive(spec.exponents[0], "e1");
      require_positive(spec.exponents[1], "e2");
      return make_superquadric(s[0], s[1], s[2], spec.exponents[0], spec.exponents[1],
                               spec.segments, spec.rings);
    case PrimitiveKind::box: {
      require_positive(s[0], "wx");
      require_positive(s[1], "wy");
      require_positive(s[2], "wz");
      const double x = s[0] / 2, y = s[1] / 2, z = s[2] / 2;
      TriMesh mesh;
      mesh.vertices = {{-x, -y, -z}, {x, -y, -z}, {x, y, -z}, {-x, y, -z},
                       {-x, -y, z},  {x, -y, z},  {x, y, z},  {-x, y, z}};
      mesh.triangles = {{0, 2, 1}, {0, 3, 2}, {4, 5, 6}, {4, 6, 7}, {0, 1, 5}, {0, 5, 4},
                        {1, 2, 6}, {1, 6, 5}, {2, 3, 7}, {2, 7, 6}, {3, 0, 4}, {3, 4, 7}};
      return mesh;
    }
    case PrimitiveKind::cylinder: {
      require_positive(s[0], "radius");
      require_positive(s[1], "height");
      std::vector<Ring> rings(2);
      for (int j = 0; j < spec.segments; ++j) {
        const double omega = 2 * std::numbers::pi * j / spec.segments;
        const double cx = s[0] * std::cos(omega), cy = s[0] * std::sin(omega);
        rings[0].emplace_back(cx, cy, -s[1] / 2);
        rings[1].emplace_back(cx, cy, s[1] / 2);
      }
      return build_lathe(rings, Vec3(0, 0, -s[1] / 2), Vec3(0, 0, s[1] / 2));
    }
    case PrimitiveKind::capsule:
      require_positive(s[0], "radius");
      require_positive(s[1], "height");
      return make_capsule(s[0], s[1], spec.segments, spec.rings);
  }
  throw InvalidParameter("unknown primitive kind");
}

double mesh_volume(const TriMesh& mesh) {
  double v = 0.0;
  for (std::size_t t = 0; t < mesh.size(); ++t) {
    v += mesh.corner(t, 0).dot(mesh.corner(t, 1).cross(mesh.corner(t, 2)));
  }
  return v / 6.0;
}

double triangle_area(const TriMesh& mesh, std::size_t tri) {
  const Vec3 a = mesh.corner(tri, 0);
  return 0.5 * (mesh.corner(tri, 1) - a).cross(mesh.corner(tri, 2) - a).norm();
}

bool is_closed(const TriMesh& mesh) {
  std::map<std::pair<int, int>, int> directed;
  for (const auto& t : mesh.triangles) {
    for (int k = 0; k < 3; ++k) {
      if (++directed[{t[k], t[(k + 1) % 3]}] > 1) return false;
    }
  }
  for (const auto& [edge, count] : directed) {
    if (!directed.contains({edge.second, edge.first})) return false;
  }
  return !mesh.triangles.empty();
}

int euler_characteristic(const TriMesh& mesh) {
  std::set<std::pair<int, int>> edges;
  for (const auto& t : mesh.triangles) {
    for (int k = 0; k < 3; ++k) {
      edges.insert(std::minmax(t[k], t[(k + 1) % 3]));
    }
  }
  return static_cast<int>(mesh.vertices.size()) - static_cast<int>(edges.size()) +
         static_cast<int>(mesh.triangles.size());
}

void require_solid(const TriMesh& mesh) {
  const int n = static_cast<int>(mesh.vertices.size());
  for (std::size_t t = 0; t < mesh.size(); ++t) {
    for (int k = 0; k < 3; ++k) {
      if (mesh.triangles[t][k] < 0 || mesh.triangles[t][k] >= n) {
        throw TopologyError("triangle " + std::to_string(t) + " has an out-of-range vertex index");
      }
    }
    if (triangle_area(mesh, t) <= 1e-12) {
      throw TopologyError("triangle " + std::to_string(t) + " is degenerate");
    }
  }
  if (!is_closed(mesh)) throw TopologyError("mesh is not closed");
}

Aabb bounding_box(const TriMesh& mesh) {
  if (mesh.vertices.empty()) throw InvalidParameter("bounding box of an empty mesh");
  Aabb box{mesh.vertices.front(), mesh.vertices.front()};
  for (const Vec3& v : mesh.vertices) {
    box.lo = box.lo.cwiseMin(v);
    box.hi = box.hi.cwiseMax(v);
  }
  return box;
}

TriMesh transformed(const TriMesh& mesh, const RigidTransform& t) {
  TriMesh out = mesh;
  for (Vec3& v : out.vertices) v = t.apply(v);
  return out;
}

std::vector<double> line_crossings_x(const TriMesh& mesh, double y, double z) {
  const double scale = mesh.vertices.empty() ? 1.0 : bounding_box(mesh).longest_side();
  for (int attempt = 0; attempt < 32; ++attempt) {
    double yy = y, zz = z;
    if (attempt > 0) {
      const double r = 1e-7 * scale * attempt;
      yy += r * std::cos(2.39996 * attempt);
      zz += r * std::sin(2.39996 * attempt);
    }
    std::vector<double> xs;
    bool grazed = false;
    for (std::size_t t = 0; t < mesh.size() && !grazed; ++t) {
      double x = 0.0;
      switch (line_hit(mesh.corner(t, 0), mesh.corner(t, 1), mesh.corner(t, 2), yy, zz, x)) {
        case LineHit::hit: xs.push_back(x); break;
        case LineHit::graze: grazed = true; break;
        case LineHit::miss: break;
      }
    }
    if (!grazed) {
      std::sort(xs.begin(), xs.end());
      return xs;
    }
  }
  throw NumericError("ray parity test failed to find a non-grazing ray");
}

bool contains(const TriMesh& mesh, const Vec3& p) {
  const auto xs = line_crossings_x(mesh, p.y(), p.z());
  const auto beyond = xs.end() - std::upper_bound(xs.begin(), xs.end(), p.x());
  return beyond % 2 == 1;
}

Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
  const Vec3 ab = b - a, ac = c - a, ap = p - a;
  const double d1 = ab.dot(ap), d2 = ac.dot(ap);
  if (d1 <= 0 && d2 <= 0) return a;
  const Vec3 bp = p - b;
  const double d3 = ab.dot(bp), d4 = ac.dot(bp);
  if (d3 >= 0 && d4 <= d3) return b;
  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0 && d1 >= 0 && d3 <= 0) return a + ab * (d1 / (d1 - d3));
  const Vec3 cp = p - c;
  const double d5 = ab.dot(cp), d6 = ac.dot(cp);
  if (d6 >= 0 && d5 <= d6) return c;
  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0 && d2 >= 0 && d6 <= 0) return a + ac * (d2 / (d2 - d6));
  const double va = d3 * d6 - d5 * d4;
  if (va <= 0 && (d4 - d3) >= 0 && (d5 - d6) >= 0) {
    return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
  }
  const double denom = 1.0 / (va + vb + vc);
  return a + ab * (vb * denom) + ac * (vc * denom);
}

std::string to_obj(const TriMesh& mesh) {
  std::ostringstream out;
  out << std::setprecision(17);
  for (const Vec3& v : mesh.vertices) out << "v " << v.x() << ' ' << v.y() << ' ' << v.z() << '\n';
  for (const auto& t : mesh.triangles) {
    out << "f " << t[0] + 1 << ' ' << t[1] + 1 << ' ' << t[2] + 1 << '\n';
  }
  return out.str();
}

void write_obj(const TriMesh& mesh, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << to_obj(mesh);
  if (!out) throw IoError("failed writing " + path.string());
}

TriMesh parse_obj(const std::string& text) {
  TriMesh mesh;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream fields(line);
    std::string tag;
    if (!(fields >> tag) || tag[0] == '#') continue;
    if (tag == "v") {
      Vec3 v;
      if (!(fields >> v.x() >> v.y() >> v.z())) {
        throw ParseError("obj line " + std::to_string(line_no) + ": malformed vertex");
      }
      mesh.vertices.push_back(v);
    } else if (tag == "f") {
      std::vector<int> idx;
      std::string token;
      while (fields >> token) {
        int i = 0;
        try {
          i = std::stoi(token.substr(0, token.find('/')));
        } catch (const std::exception&) {
          throw ParseError("obj line " + std::to_string(line_no) + ": bad face index '" + token + "'");
        }
        idx.push_back(i < 0 ? static_cast<int>(mesh.vertices.size()) + i : i - 1);
      }
      if (idx.size() < 3) throw ParseError("obj line " + std::to_string(line_no) + ": face needs 3 vertices");
      for (std::size_t k = 1; k + 1 < idx.size(); ++k) mesh.triangles.push_back({idx[0], idx[k], idx[k + 1]});
    }
  }
  return mesh;
}

TriMesh read_obj(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_obj(buf.str());
}

}  // namespace graspfield

#include "graspfield/sdf.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>

#include "binary_io.hpp"
#include "graspfield/error.hpp"

namespace graspfield {
namespace {

constexpr char kSdfMagic[16] = {'G', 'F', 'L', 'D', 'S', 'D', 'F', '1', 0, 0, 0, 0, 0, 0, 0, 0};
constexpr double kInf = std::numeric_limits<double>::infinity();

TriMesh to_cube(const TriMesh& mesh, const Mat4& t) {
  TriMesh out = mesh;
  for (Vec3& v : out.vertices) v = t.topLeftCorner<3, 3>() * v + t.topRightCorner<3, 1>();
  return out;
}

// Sweeps closest triangles through the grid: a node adopts an upwind
// neighbour's closest triangle when its exact distance to that triangle beats
// its current value. Band nodes keep their exact values.
void fast_sweep(const TriMesh& cube, std::vector<double>& dist, std::vector<int>& closest,
                const std::vector<std::uint8_t>& fixed, int n, double h) {
  auto idx = [n](int i, int j, int k) { return (static_cast<std::size_t>(k) * n + j) * n + i; };
  for (int pass = 0; pass < 100; ++pass) {
    double max_change = 0.0;
    for (int order = 0; order < 8; ++order) {
      const int di = (order & 1) ? -1 : 1, dj = (order & 2) ? -1 : 1, dk = (order & 4) ? -1 : 1;
      for (int kk = 0; kk < n; ++kk) {
        const int k = dk > 0 ? kk : n - 1 - kk;
        for (int jj = 0; jj < n; ++jj) {
          const int j = dj > 0 ? jj : n - 1 - jj;
          for (int ii = 0; ii < n; ++ii) {
            const int i = di > 0 ? ii : n - 1 - ii;
            const std::size_t c = idx(i, j, k);
            if (fixed[c]) continue;
            const Vec3 p(i * h, j * h, k * h);
            double best = dist[c];
            int best_tri = -1;
            const std::array<std::array<int, 3>, 3> upwind{{{i - di, j, k}, {i, j - dj, k}, {i, j, k - dk}}};
            for (const auto& u : upwind) {
              if (u[0] < 0 || u[1] < 0 || u[2] < 0 || u[0] >= n || u[1] >= n || u[2] >= n) continue;
              const std::size_t nb = idx(u[0], u[1], u[2]);
              const int tri = closest[nb];
              if (tri < 0 || tri == closest[c]) continue;
              const Vec3 q = closest_point_on_triangle(p, cube.corner(tri, 0), cube.corner(tri, 1), cube.corner(tri, 2));
              const double d = (p - q).norm();
              if (d < best) {
                best = d;
                best_tri = tri;
              }
            }
            if (best_tri >= 0) {
              max_change = std::max(max_change, dist[c] == kInf ? kInf : dist[c] - best);
              dist[c] = best;
              closest[c] = best_tri;
            }
          }
        }
      }
    }
    if (max_change < 1e-6) return;
  }
  throw NumericError("fast sweeping did not converge in 100 passes");
}

// Trilinear interpolation inside the cube; p must lie in [0,1]^3.
SdfSample interpolate(const SignedDistanceField& field, const Vec3& p) {
  const int n = field.resolution();
  const double inv_h = n - 1;
  std::array<int, 3> i0{};
  std::array<double, 3> f{};
  for (int a = 0; a < 3; ++a) {
    const double u = p[a] * inv_h;
    i0[a] = std::clamp(static_cast<int>(std::floor(u)), 0, n - 2);
    f[a] = u - i0[a];
  }
  const double c000 = field.at(i0[0], i0[1], i0[2]);
  const double c100 = field.at(i0[0] + 1, i0[1], i0[2]);
  const double c010 = field.at(i0[0], i0[1] + 1, i0[2]);
  const double c110 = field.at(i0[0] + 1, i0[1] + 1, i0[2]);
  const double c001 = field.at(i0[0], i0[1], i0[2] + 1);
  const double c101 = field.at(i0[0] + 1, i0[1], i0[2] + 1);
  const double c011 = field.at(i0[0], i0[1] + 1, i0[2] + 1);
  const double c111 = field.at(i0[0] + 1, i0[1] + 1, i0[2] + 1);
  const double fx = f[0], fy = f[1], fz = f[2];
  const double c00 = c000 + fx * (c100 - c000);
  const double c10 = c010 + fx * (c110 - c010);
  const double c01 = c001 + fx * (c101 - c001);
  const double c11 = c011 + fx * (c111 - c011);
  const double c0 = c00 + fy * (c10 - c00);
  const double c1 = c01 + fy * (c11 - c01);

  SdfSample s;
  s.value = c0 + fz * (c1 - c0);
  const double dx0 = (c100 - c000) + fy * ((c110 - c010) - (c100 - c000));
  const double dx1 = (c101 - c001) + fy * ((c111 - c011) - (c101 - c001));
  s.gradient.x() = (dx0 + fz * (dx1 - dx0)) * inv_h;
  s.gradient.y() = ((c10 - c00) + fz * ((c11 - c01) - (c10 - c00))) * inv_h;
  s.gradient.z() = (c1 - c0) * inv_h;
  return s;
}

}  // namespace

Mat4 unit_cube_transform(const TriMesh& mesh) {
  const double L = bounding_box(mesh).longest_side();
  if (!(L > 0.0)) throw InvalidParameter("mesh has a degenerate bounding box");
  Mat4 t = Mat4::Identity();
  t.topLeftCorner<3, 3>() *= 0.95 / L;
  t.topRightCorner<3, 1>().setConstant(0.5);
  return t;
}

std::size_t OccupancyGrid::occupied_count() const {
  return static_cast<std::size_t>(std::count_if(cells.begin(), cells.end(), [](auto c) { return c != 0; }));
}

OccupancyGrid voxelize(const TriMesh& mesh, int resolution) {
  if (resolution < 8) throw InvalidParameter("voxelize needs resolution >= 8");
  require_solid(mesh);
  OccupancyGrid grid;
  grid.resolution = resolution;
  grid.object_to_grid = unit_cube_transform(mesh);
  grid.cells.assign(static_cast<std::size_t>(resolution) * resolution * resolution, 0);
  const TriMesh cube = to_cube(mesh, grid.object_to_grid);
  const double h = 1.0 / resolution;
  for (int k = 0; k < resolution; ++k) {
    for (int j = 0; j < resolution; ++j) {
      const auto xs = line_crossings_x(cube, (j + 0.5) * h, (k + 0.5) * h);
      if (xs.empty()) continue;
      for (int i = 0; i < resolution; ++i) {
        const double x = (i + 0.5) * h;
        const auto beyond = xs.end() - std::upper_bound(xs.begin(), xs.end(), x);
        if (beyond % 2 == 1) grid.cells[grid.index(i, j, k)] = 1;
      }
    }
  }
  if (grid.occupied_count() == 0) {
    const int c = resolution / 2;
    grid.cells[grid.index(c, c, c)] = 1;
  }
  return grid;
}

SignedDistanceField::SignedDistanceField(int resolution, std::vector<float> values, const Mat4& t_sdf)
    : resolution_(resolution), values_(std::move(values)), t_sdf_(t_sdf) {
  if (resolution < 2) throw InvalidParameter("sdf resolution must be at least 2");
  if (values_.size() != static_cast<std::size_t>(resolution) * resolution * resolution) {
    throw ShapeError("sdf value count does not match resolution^3");
  }
}

double SignedDistanceField::object_radius() const {
  double r = 0.0;
  const Vec3 centre(0.5, 0.5, 0.5);
  for (int k = 0; k < resolution_; ++k) {
    for (int j = 0; j < resolution_; ++j) {
      for (int i = 0; i < resolution_; ++i) {
        if (at(i, j, k) <= 0.0f) r = std::max(r, (node(i, j, k) - centre).norm());
      }
    }
  }
  return r + 0.5 * cell();
}

SignedDistanceField build_sdf(const TriMesh& mesh, int resolution) {
  if (resolution < 4) throw InvalidParameter("build_sdf needs resolution >= 4");
  require_solid(mesh);
  const Mat4 t_sdf = unit_cube_transform(mesh);
  const TriMesh cube = to_cube(mesh, t_sdf);
  const int n = resolution;
  const double h = 1.0 / (n - 1);
  const double band = 2.0 * h;
  auto idx = [n](int i, int j, int k) { return (static_cast<std::size_t>(k) * n + j) * n + i; };

  std::vector<double> dist(static_cast<std::size_t>(n) * n * n, kInf);
  std::vector<int> closest(dist.size(), -1);
  for (std::size_t t = 0; t < cube.size(); ++t) {
    const Vec3 a = cube.corner(t, 0), b = cube.corner(t, 1), c = cube.corner(t, 2);
    const Vec3 lo = a.cwiseMin(b).cwiseMin(c).array() - band;
    const Vec3 hi = a.cwiseMax(b).cwiseMax(c).array() + band;
    std::array<int, 3> from{}, to{};
    for (int ax = 0; ax < 3; ++ax) {
      from[ax] = std::max(0, static_cast<int>(std::ceil(lo[ax] / h)));
      to[ax] = std::min(n - 1, static_cast<int>(std::floor(hi[ax] / h)));
    }
    for (int k = from[2]; k <= to[2]; ++k) {
      for (int j = from[1]; j <= to[1]; ++j) {
        for (int i = from[0]; i <= to[0]; ++i) {
          const Vec3 p(i * h, j * h, k * h);
          const Vec3 q = closest_point_on_triangle(p, a, b, c);
          const double d = (p - q).norm();
          const std::size_t slot = idx(i, j, k);
          if (d < dist[slot]) {
            dist[slot] = d;
            closest[slot] = static_cast<int>(t);
          }
        }
      }
    }
  }
  std::vector<std::uint8_t> fixed(dist.size(), 0);
  for (std::size_t c = 0; c < dist.size(); ++c) {
    if (dist[c] <= band) {
      fixed[c] = 1;
    } else {
      dist[c] = kInf;
      closest[c] = -1;
    }
  }
  if (std::none_of(fixed.begin(), fixed.end(), [](auto f) { return f != 0; })) {
    throw InvalidParameter("mesh surface does not pass near any sdf node");
  }
  fast_sweep(cube, dist, closest, fixed, n, h);

  std::vector<float> values(dist.size());
  for (int k = 0; k < n; ++k) {
    for (int j = 0; j < n; ++j) {
      const auto xs = line_crossings_x(cube, j * h, k * h);
      for (int i = 0; i < n; ++i) {
        const auto beyond = xs.end() - std::upper_bound(xs.begin(), xs.end(), i * h);
        const double d = dist[idx(i, j, k)];
        values[idx(i, j, k)] = static_cast<float>(beyond % 2 == 1 ? -d : d);
      }
    }
  }
  return SignedDistanceField(n, std::move(values), t_sdf);
}

SdfSample sample_sdf(const SignedDistanceField& field, const Vec3& point) {
  const Vec3 clamped = point.cwiseMax(0.0).cwiseMin(1.0);
  if (clamped == point) return interpolate(field, point);
  SdfSample s = interpolate(field, clamped);
  const Vec3 away = point - clamped;
  const double d = away.norm();
  for (int a = 0; a < 3; ++a) {
    if (point[a] != clamped[a]) s.gradient[a] = 0.0;
  }
  s.value += d;
  s.gradient += away / d;
  return s;
}

Vec3 compose_to_sdf_frame(const Mat4& t_sdf, const RigidTransform& t_r, const Vec3& global_point) {
  const Eigen::Vector4d p = t_sdf * (t_r.inverse().matrix() * global_point.homogeneous());
  return p.head<3>();
}

SdfFrameMap grasp_to_sdf_map(const SignedDistanceField& field, const RigidTransform& t_r) {
  SdfFrameMap map;
  const Mat4 m = field.t_sdf() * t_r.inverse().matrix();
  map.linear = m.topLeftCorner<3, 3>() / field.scale();
  map.offset = m.topRightCorner<3, 1>();
  return map;
}

std::vector<RigidTransform> augmentation_rotations() {
  constexpr double deg = std::numbers::pi / 180.0;
  const std::array<double, 3> angles{60 * deg, 120 * deg, 180 * deg};
  std::vector<RigidTransform> out;
  out.reserve(27);
  for (double gamma : angles) {
    for (double beta : angles) {
      for (double alpha : angles) {
        const Mat3 r = axis_angle(Vec3::UnitZ(), gamma) * axis_angle(Vec3::UnitY(), beta) *
                       axis_angle(Vec3::UnitX(), alpha);
        out.emplace_back(Vec3::Zero(), r);
      }
    }
  }
  return out;
}

std::string serialize_sdf(const SignedDistanceField& field) {
  std::string out(kSdfMagic, sizeof(kSdfMagic));
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(field.resolution()));
  for (float v : field.values()) detail::put_le<float>(out, v);
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 4; ++c) detail::put_le<double>(out, field.t_sdf()(r, c));
  }
  return out;
}

SignedDistanceField deserialize_sdf(const std::string& bytes) {
  detail::Reader in(bytes, "sdf");
  if (in.take(sizeof(kSdfMagic)) != std::string(kSdfMagic, sizeof(kSdfMagic))) {
    throw ParseError("sdf: bad magic header");
  }
  const auto n = in.get<std::uint32_t>();
  if (n < 2 || n > 4096) throw ParseError("sdf: implausible resolution " + std::to_string(n));
  std::vector<float> values(static_cast<std::size_t>(n) * n * n);
  for (float& v : values) v = in.get<float>();
  Mat4 t;
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 4; ++c) t(r, c) = in.get<double>();
  }
  if (!in.done()) throw ParseError("sdf: trailing bytes");
  return SignedDistanceField(static_cast<int>(n), std::move(values), t);
}

void write_sdf(const SignedDistanceField& field, const std::filesystem::path& path) {
  detail::write_file(path, serialize_sdf(field));
}

SignedDistanceField read_sdf(const std::filesystem::path& path) {
  return deserialize_sdf(detail::read_file(path));
}

}  // namespace graspfield

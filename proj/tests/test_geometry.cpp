#include <cmath>
#include <numbers>
#include <set>

#include "doctest.h"
#include "graspfield/error.hpp"
#include "graspfield/mesh.hpp"
#include "graspfield/sdf.hpp"
#include "test_util.hpp"

using namespace graspfield;
using graspfield::test::uniform;

namespace {

// Analytic signed distance of a ball in cube coordinates.
double ball_sdf(const Vec3& p, double radius_cube) { return (p - Vec3(0.5, 0.5, 0.5)).norm() - radius_cube; }

// Analytic signed distance of an axis-aligned box with half extents e,
// centred in the cube.
double box_sdf(const Vec3& p, const Vec3& e) {
  const Vec3 q = (p - Vec3(0.5, 0.5, 0.5)).cwiseAbs() - e;
  return q.cwiseMax(0.0).norm() + std::min(q.maxCoeff(), 0.0);
}

// Central differences can only see |grad| = 1 where the field is smooth; on
// the medial axis the second difference jumps by O(h).
bool near_kink(const SignedDistanceField& f, int i, int j, int k) {
  const int n = f.resolution();
  for (int di = -1; di <= 1; ++di) {
    for (int dj = -1; dj <= 1; ++dj) {
      for (int dk = -1; dk <= 1; ++dk) {
        const int a = i + di, b = j + dj, c = k + dk;
        if (a < 1 || b < 1 || c < 1 || a > n - 2 || b > n - 2 || c > n - 2) continue;
        const double v = f.at(a, b, c);
        const double dx = f.at(a + 1, b, c) - 2 * v + f.at(a - 1, b, c);
        const double dy = f.at(a, b + 1, c) - 2 * v + f.at(a, b - 1, c);
        const double dz = f.at(a, b, c + 1) - 2 * v + f.at(a, b, c - 1);
        if (std::max({std::abs(dx), std::abs(dy), std::abs(dz)}) > 0.5 * f.cell()) return true;
      }
    }
  }
  return false;
}

struct EikonalStats {
  std::size_t checked = 0;
  std::size_t violations = 0;
};

EikonalStats eikonal_residual(const SignedDistanceField& f) {
  EikonalStats stats;
  const int n = f.resolution();
  const double h = f.cell();
  for (int k = 1; k < n - 1; ++k) {
    for (int j = 1; j < n - 1; ++j) {
      for (int i = 1; i < n - 1; ++i) {
        if (std::abs(f.at(i, j, k)) <= 2 * h || near_kink(f, i, j, k)) continue;
        const Vec3 g((f.at(i + 1, j, k) - f.at(i - 1, j, k)) / (2 * h),
                     (f.at(i, j + 1, k) - f.at(i, j - 1, k)) / (2 * h),
                     (f.at(i, j, k + 1) - f.at(i, j, k - 1)) / (2 * h));
        ++stats.checked;
        if (g.norm() < 0.9 || g.norm() > 1.1) ++stats.violations;
      }
    }
  }
  return stats;
}

}  // namespace

TEST_SUITE("primitives") {
  TEST_CASE("sphere vertices lie on the sphere") {
    const TriMesh m = make_sphere(0.05);
    for (const Vec3& v : m.vertices) CHECK(std::abs(v.norm() - 0.05) <= 1e-6);
    CHECK(is_closed(m));
  }

  TEST_CASE("box volume and triangle count") {
    const TriMesh m = make_box(0.04, 0.06, 0.10);
    CHECK(m.triangles.size() == 12);
    CHECK(std::abs(mesh_volume(m) - 0.04 * 0.06 * 0.10) <= 1e-9);
  }

  TEST_CASE("cylinder is a closed genus-0 surface") {
    const TriMesh m = make_cylinder(0.03, 0.1, 64);
    CHECK(is_closed(m));
    CHECK(euler_characteristic(m) == 2);
  }

  TEST_CASE("every family is closed, outward and centred") {
    for (auto kind : {PrimitiveKind::sphere, PrimitiveKind::box, PrimitiveKind::cylinder,
                      PrimitiveKind::capsule, PrimitiveKind::ellipsoid, PrimitiveKind::superquadric}) {
      PrimitiveSpec spec;
      spec.kind = kind;
      spec.size = {0.03, 0.04, 0.05};
      spec.exponents = {0.5, 0.7};
      const TriMesh m = make_primitive(spec);
      CAPTURE(to_string(kind));
      CHECK_NOTHROW(require_solid(m));
      CHECK(euler_characteristic(m) == 2);
      CHECK(mesh_volume(m) > 0.0);
      const Aabb box = bounding_box(m);
      CHECK((box.lo + box.hi).norm() <= 1e-12);
    }
  }

  TEST_CASE("non-positive dimensions are rejected") {
    CHECK_THROWS_AS(make_sphere(0.0), InvalidParameter);
    CHECK_THROWS_AS(make_box(0.1, -0.1, 0.1), InvalidParameter);
    PrimitiveSpec spec;
    spec.kind = PrimitiveKind::superquadric;
    spec.exponents = {0.0, 1.0};
    CHECK_THROWS_AS(make_primitive(spec), InvalidParameter);
  }

  TEST_CASE("obj round trip preserves the mesh exactly") {
    PrimitiveSpec spec;
    spec.kind = PrimitiveKind::capsule;
    spec.size = {0.021, 0.07, 0};
    const TriMesh m = make_primitive(spec);
    const TriMesh back = parse_obj(to_obj(m));
    REQUIRE(back.vertices.size() == m.vertices.size());
    CHECK(back.triangles == m.triangles);
    for (std::size_t i = 0; i < m.vertices.size(); ++i) CHECK(back.vertices[i] == m.vertices[i]);
  }

  TEST_CASE("obj parse errors are descriptive") {
    CHECK_THROWS_AS(parse_obj("v 1 2\n"), ParseError);
    CHECK_THROWS_AS(parse_obj("v 0 0 0\nf 1 x 2\n"), ParseError);
  }
}

TEST_SUITE("voxelize") {
  TEST_CASE("ball occupancy matches analytic volume within 5%") {
    const double r = 0.05;
    const OccupancyGrid g = voxelize(make_sphere(r, 64, 32), 32);
    const double s = 0.95 / (2 * r);
    const double expected = 4.0 / 3.0 * std::numbers::pi * std::pow(r * s * 32, 3);
    CHECK(std::abs(double(g.occupied_count()) - expected) <= 0.05 * expected);
  }

  TEST_CASE("sub-cell object keeps the centre cell") {
    const OccupancyGrid g = voxelize(make_box(0.1, 0.0005, 0.0005), 8);
    CHECK(g.occupied_count() == 1);
    CHECK(g.occupied(4, 4, 4));
  }

  TEST_CASE("axis-aligned box matches the per-cell inside test exactly") {
    const TriMesh box = make_box(0.04, 0.06, 0.10);
    const int n = 32;
    const OccupancyGrid g = voxelize(box, n);
    const double s = 0.95 / 0.10;
    const Vec3 half = Vec3(0.02, 0.03, 0.05) * s;
    std::size_t mismatches = 0;
    for (int k = 0; k < n; ++k) {
      for (int j = 0; j < n; ++j) {
        for (int i = 0; i < n; ++i) {
          const Vec3 c = (Vec3(i, j, k).array() + 0.5) / n - 0.5;
          const bool inside = (c.cwiseAbs() - half).maxCoeff() < 0;
          if (inside != g.occupied(i, j, k)) ++mismatches;
        }
      }
    }
    CHECK(mismatches == 0);
  }

  TEST_CASE("boundary cells are free") {
    const int n = 32;
    const OccupancyGrid g = voxelize(make_box(0.1, 0.1, 0.1), n);  // half a cell (1/64) < 0.025 margin
    for (int a = 0; a < n; ++a) {
      for (int b = 0; b < n; ++b) {
        CHECK_FALSE(g.occupied(0, a, b));
        CHECK_FALSE(g.occupied(n - 1, a, b));
      }
    }
  }

  TEST_CASE("open mesh is a topology error") {
    TriMesh m = make_box(0.1, 0.1, 0.1);
    m.triangles.pop_back();
    CHECK_THROWS_AS(voxelize(m, 16), TopologyError);
    CHECK_THROWS_AS(build_sdf(m, 16), TopologyError);
    CHECK_THROWS_AS(voxelize(make_box(0.1, 0.1, 0.1), 4), InvalidParameter);
  }
}

TEST_SUITE("sdf") {
  TEST_CASE("sphere field matches the analytic distance") {
    const double r = 0.05;
    const SignedDistanceField f = build_sdf(make_sphere(r, 64, 32), 32);
    const double rc = r * f.scale();
    CHECK(std::abs(f.scale() - 0.95 / (2 * r)) < 1e-12);
    double worst = 0.0;
    for (int k = 0; k < 32; ++k) {
      for (int j = 0; j < 32; ++j) {
        for (int i = 0; i < 32; ++i) worst = std::max(worst, std::abs(f.at(i, j, k) - ball_sdf(f.node(i, j, k), rc)));
      }
    }
    CHECK(worst <= 2 * f.cell_diagonal());
    CHECK(f.at(0, 0, 0) > 0);
    CHECK(f.at(31, 31, 31) > 0);
    CHECK(f.at(0, 31, 0) > 0);
    const double centre = sample_sdf(f, Vec3(0.5, 0.5, 0.5)).value;
    CHECK(std::abs(centre + rc) <= 2 * f.cell());
  }

  TEST_CASE("box field matches the analytic distance") {
    const SignedDistanceField f = build_sdf(make_box(0.04, 0.06, 0.10), 32);
    const Vec3 half = Vec3(0.02, 0.03, 0.05) * f.scale();
    double worst = 0.0;
    for (int k = 0; k < 32; ++k) {
      for (int j = 0; j < 32; ++j) {
        for (int i = 0; i < 32; ++i) worst = std::max(worst, std::abs(f.at(i, j, k) - box_sdf(f.node(i, j, k), half)));
      }
    }
    CHECK(worst <= 2 * f.cell_diagonal());
  }

  TEST_CASE("eikonal residual away from the surface") {
    for (const TriMesh& m : {make_sphere(0.05, 64, 32), make_box(0.04, 0.06, 0.10), make_cylinder(0.03, 0.1, 64)}) {
      const SignedDistanceField f = build_sdf(m, 32);
      const EikonalStats stats = eikonal_residual(f);
      CHECK(stats.checked > 1000);
      CHECK(stats.violations == 0);
    }
  }

  TEST_CASE("sign is correct at vertices and analytic points") {
    PrimitiveSpec spec;
    spec.kind = PrimitiveKind::ellipsoid;
    spec.size = {0.03, 0.05, 0.04};
    const TriMesh m = make_primitive(spec);
    const SignedDistanceField f = build_sdf(m, 24);
    const Mat4 t = f.t_sdf();
    for (const Vec3& v : m.vertices) {
      const Vec3 p = t.topLeftCorner<3, 3>() * v + t.topRightCorner<3, 1>();
      CHECK(std::abs(sample_sdf(f, p).value) <= 1.5 * f.cell_diagonal());
    }
    for (int n = 0; n < 200; ++n) {
      const Vec3 q = graspfield::test::random_vec(-0.06, 0.06);
      const double level = std::pow(q.x() / 0.03, 2) + std::pow(q.y() / 0.05, 2) + std::pow(q.z() / 0.04, 2);
      if (std::abs(level - 1.0) < 0.3) continue;
      const Vec3 p = t.topLeftCorner<3, 3>() * q + t.topRightCorner<3, 1>();
      CHECK((sample_sdf(f, p).value < 0) == (level < 1.0));
    }
  }

  TEST_CASE("occupancy and sdf agree") {
    const TriMesh m = make_cylinder(0.02, 0.08, 48);
    const OccupancyGrid g = voxelize(m, 32);
    const SignedDistanceField f = build_sdf(m, 32);
    const int n = g.resolution;
    for (int k = 0; k < n; ++k) {
      for (int j = 0; j < n; ++j) {
        for (int i = 0; i < n; ++i) {
          const Vec3 c = (Vec3(i, j, k).array() + 0.5) / n;
          const double v = sample_sdf(f, c).value;
          if (g.occupied(i, j, k)) CHECK(v <= f.cell_diagonal());
          const bool boundary = i == 0 || j == 0 || k == 0 || i == n - 1 || j == n - 1 || k == n - 1;
          if (boundary && !g.occupied(i, j, k)) CHECK(v > 0);
        }
      }
    }
  }

  TEST_CASE("unit cube transform keeps the bounding box inside the margin") {
    const TriMesh m = make_box(0.03, 0.07, 0.05);
    const Mat4 t = unit_cube_transform(m);
    const Aabb b = bounding_box(m);
    const Vec3 lo = t.topLeftCorner<3, 3>() * b.lo + t.topRightCorner<3, 1>();
    const Vec3 hi = t.topLeftCorner<3, 3>() * b.hi + t.topRightCorner<3, 1>();
    CHECK(lo.minCoeff() >= 0.025 - 1e-12);
    CHECK(hi.maxCoeff() <= 0.975 + 1e-12);
    CHECK(std::abs((hi - lo).maxCoeff() - 0.95) <= 1e-12);
  }

  TEST_CASE("sampling") {
    const SignedDistanceField f = build_sdf(make_box(0.05, 0.05, 0.08), 16);
    SUBCASE("grid nodes return stored values") {
      for (int n = 0; n < 50; ++n) {
        const int i = int(uniform(0, 16)), j = int(uniform(0, 16)), k = int(uniform(0, 16));
        CHECK(sample_sdf(f, f.node(i, j, k)).value == doctest::Approx(f.at(i, j, k)).epsilon(1e-12));
      }
    }
    SUBCASE("outside the cube is positive and points away") {
      const SdfSample s = sample_sdf(f, Vec3(2, 2, 2));
      CHECK(s.value > 0);
      CHECK(s.gradient.dot(Vec3(1, 1, 1)) > 0);
    }
    SUBCASE("gradient matches central differences") {
      const double h = 1e-4;
      int checked = 0;
      while (checked < 100) {
        const Vec3 p = graspfield::test::random_vec(0.001, 0.999);
        // the interpolant is only C0 across cell faces
        const Vec3 u = p * (f.resolution() - 1);
        const Vec3 frac = u - u.array().floor().matrix();
        const double margin = h * (f.resolution() - 1);
        if (frac.minCoeff() < margin || frac.maxCoeff() > 1 - margin) continue;
        const Vec3 g = sample_sdf(f, p).gradient;
        for (int a = 0; a < 3; ++a) {
          Vec3 e = Vec3::Zero();
          e[a] = h;
          const double fd = (sample_sdf(f, p + e).value - sample_sdf(f, p - e).value) / (2 * h);
          CHECK(graspfield::test::rel_error(g[a], fd, 1e-9) <= 1e-5);
        }
        ++checked;
      }
    }
    SUBCASE("outside gradient matches central differences") {
      const double h = 1e-6;
      for (int n = 0; n < 50; ++n) {
        Vec3 p = graspfield::test::random_vec(-1.0, 2.0);
        if ((p.array() >= 0).all() && (p.array() <= 1).all()) continue;
        const Vec3 g = sample_sdf(f, p).gradient;
        for (int a = 0; a < 3; ++a) {
          Vec3 e = Vec3::Zero();
          e[a] = h;
          const double fd = (sample_sdf(f, p + e).value - sample_sdf(f, p - e).value) / (2 * h);
          CHECK(std::abs(g[a] - fd) <= 1e-5);
        }
      }
    }
  }

  TEST_CASE("serialization round trip and layout") {
    const SignedDistanceField f = build_sdf(make_sphere(0.04), 12);
    const std::string bytes = serialize_sdf(f);
    CHECK(bytes.substr(0, 8) == "GFLDSDF1");
    CHECK(bytes.size() == 16 + 4 + 12 * 12 * 12 * 4 + 16 * 8);
    CHECK(static_cast<unsigned char>(bytes[16]) == 12);
    const SignedDistanceField back = deserialize_sdf(bytes);
    CHECK(back.resolution() == 12);
    CHECK(std::equal(back.values().begin(), back.values().end(), f.values().begin()));
    CHECK(back.t_sdf() == f.t_sdf());
    CHECK_THROWS_AS(deserialize_sdf(bytes.substr(0, 40)), ParseError);
    std::string bad = bytes;
    bad[0] = 'X';
    CHECK_THROWS_AS(deserialize_sdf(bad), ParseError);
  }
}

TEST_SUITE("frames") {
  TEST_CASE("compose_to_sdf_frame") {
    const SignedDistanceField f = build_sdf(make_sphere(0.05), 8);
    const Mat4 t = f.t_sdf();
    CHECK((compose_to_sdf_frame(t, RigidTransform::identity(), Vec3::Zero()) - Vec3(0.5, 0.5, 0.5)).norm() < 1e-15);

    const RigidTransform rz(Vec3::Zero(), axis_angle(Vec3::UnitZ(), std::numbers::pi));
    const Vec3 p(0.01, -0.02, 0.03);
    const Vec3 expected = t.topLeftCorner<3, 3>() * Vec3(-p.x(), -p.y(), p.z()) + t.topRightCorner<3, 1>();
    CHECK((compose_to_sdf_frame(t, rz, p) - expected).norm() < 1e-12);

    for (int n = 0; n < 100; ++n) {
      const RigidTransform tr = graspfield::test::random_transform(0.1);
      const Vec3 q = graspfield::test::random_vec(-0.2, 0.2);
      const Vec3 cube = compose_to_sdf_frame(t, tr, q);
      const Eigen::Vector4d back = tr.matrix() * (t.inverse() * cube.homogeneous());
      CHECK((back.head<3>() - q).norm() <= 1e-9);
    }
  }

  TEST_CASE("grasp frame map equals the chain with meters") {
    const SignedDistanceField f = build_sdf(make_box(0.03, 0.04, 0.06), 8);
    const RigidTransform tr = augmentation_rotations()[7];
    const SdfFrameMap map = grasp_to_sdf_map(f, tr);
    const Vec3 p(0.3, -0.2, 0.7);
    CHECK((map.apply(p) - compose_to_sdf_frame(f.t_sdf(), tr, p / f.scale())).norm() < 1e-12);
  }

  TEST_CASE("augmentation rotations") {
    const auto rs = augmentation_rotations();
    REQUIRE(rs.size() == 27);
    const Mat3 last = rs[26].rotation_matrix();
    CHECK((last * last - Mat3::Identity()).norm() <= 1e-12);
    for (const auto& r : rs) {
      const Mat3 m = r.rotation_matrix();
      CHECK((m.transpose() * m - Mat3::Identity()).norm() < 1e-12);
      CHECK(std::abs(m.determinant() - 1.0) < 1e-12);
    }
    for (std::size_t a = 0; a < rs.size(); ++a) {
      for (std::size_t b = a + 1; b < rs.size(); ++b) {
        CHECK((rs[a].rotation_matrix() - rs[b].rotation_matrix()).norm() > 1e-6);
      }
    }
    constexpr double deg = std::numbers::pi / 180.0;
    const Mat3 second = axis_angle(Vec3::UnitZ(), 60 * deg) * axis_angle(Vec3::UnitY(), 60 * deg) *
                        axis_angle(Vec3::UnitX(), 120 * deg);
    CHECK((rs[1].rotation_matrix() - second).norm() < 1e-12);
  }
}

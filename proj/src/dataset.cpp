#include "graspfield/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include <json.hpp>

#include "binary_io.hpp"
#include "graspfield/error.hpp"
#include "graspfield/hash.hpp"
#include "graspfield/parallel.hpp"

namespace graspfield {
namespace {

using json = nlohmann::json;

std::string sdf_file(int object_id) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "sdf/object_%03d.sdf", object_id);
  return buf;
}

json transform_json(const RigidTransform& t) {
  const auto& q = t.rotation();
  return {{"t", {t.translation().x(), t.translation().y(), t.translation().z()}}, {"q", {q.w(), q.x(), q.y(), q.z()}}};
}

RigidTransform json_transform(const json& j) {
  const auto& t = j.at("t");
  const auto& q = j.at("q");
  return RigidTransform(Vec3(t.at(0), t.at(1), t.at(2)), Eigen::Quaterniond(q.at(0), q.at(1), q.at(2), q.at(3)));
}

}  // namespace

const char* to_string(Split s) { return s == Split::train ? "train" : "test"; }

std::vector<std::size_t> GraspDataset::indices(Split s) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (split_of(entries[i]) == s) out.push_back(i);
  }
  return out;
}

std::vector<ObjectSpec> procedural_objects(int count, std::uint64_t seed) {
  if (count <= 0) throw InvalidParameter("empty object set");
  std::mt19937_64 rng(seed);
  auto u = [&rng](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  const PrimitiveKind kinds[] = {PrimitiveKind::sphere,  PrimitiveKind::box,       PrimitiveKind::cylinder,
                                 PrimitiveKind::capsule, PrimitiveKind::ellipsoid, PrimitiveKind::superquadric};
  std::vector<ObjectSpec> out;
  for (int i = 0; i < count; ++i) {
    PrimitiveSpec s;
    s.kind = kinds[i % 6];
    switch (s.kind) {
      case PrimitiveKind::sphere:
        s.size = {u(0.03, 0.06), 0.0, 0.0};
        break;
      case PrimitiveKind::box:
        s.size = {u(0.03, 0.12), u(0.03, 0.12), u(0.03, 0.12)};
        break;
      case PrimitiveKind::cylinder:
        s.size = {u(0.02, 0.05), u(0.05, 0.15), 0.0};
        break;
      case PrimitiveKind::capsule:
        s.size = {u(0.02, 0.04), u(0.03, 0.10), 0.0};
        break;
      case PrimitiveKind::ellipsoid:
        s.size = {u(0.02, 0.06), u(0.02, 0.06), u(0.02, 0.06)};
        break;
      case PrimitiveKind::superquadric:
        s.size = {u(0.025, 0.06), u(0.025, 0.06), u(0.025, 0.06)};
        s.exponents = {u(0.4, 1.4), u(0.4, 1.4)};
        break;
    }
    char name[48];
    std::snprintf(name, sizeof name, "%s_%02d", to_string(s.kind), i);
    out.push_back({name, s});
  }
  return out;
}

std::vector<DatasetEntry> augment(const DatasetEntry& base, const TriMesh& mesh) {
  const auto rotations = augmentation_rotations();
  std::vector<DatasetEntry> out(rotations.size());
  parallel_for(rotations.size(), [&](std::size_t r) {
    DatasetEntry& e = out[r];
    e.object_id = base.object_id;
    e.rotation_index = static_cast<int>(r);
    e.t_r = rotations[r];
    e.grid = voxelize(transformed(mesh, rotations[r]), base.grid.resolution);
    e.sdf_path = base.sdf_path;
    e.costs = base.costs;
    e.poses.reserve(base.poses.size());
    for (const PoseVector& x : base.poses) e.poses.push_back(compose_wrist(rotations[r], x));
  });
  return out;
}

std::vector<Split> split_dataset(int object_count, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw InvalidParameter("split fraction must be in (0, 1)");
  if (object_count < 0) throw InvalidParameter("object count must be >= 0");
  std::vector<int> order(object_count);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const int train = static_cast<int>(std::lround(fraction * object_count));
  std::vector<Split> out(object_count, Split::test);
  for (int i = 0; i < train; ++i) out[order[i]] = Split::train;
  return out;
}

GraspDataset build_dataset(const std::vector<TriMesh>& meshes, const GripperModel& model, const DatasetConfig& cfg,
                           std::uint64_t seed) {
  if (meshes.empty()) throw InvalidParameter("empty object set");
  if (cfg.k < 1) throw InvalidParameter("dataset k must be >= 1");
  cfg.anneal.validate();
  const int n = static_cast<int>(meshes.size());
  GraspDataset data;
  data.k = cfg.k;
  data.sdfs.resize(n);
  std::vector<std::vector<DatasetEntry>> per_object(n);
  for (int i = 0; i < n; ++i) {
    try {
      data.sdfs[i] = build_sdf(meshes[i], cfg.resolution);
      AnnealConfig anneal = cfg.anneal;
      anneal.rng_seed = stage_seed(seed, "plan/" + std::to_string(i));
      const auto plans = plan_k_grasps(model, data.sdfs[i], anneal, cfg.k);
      DatasetEntry base;
      base.object_id = i;
      base.grid.resolution = cfg.resolution;
      base.sdf_path = sdf_file(i);
      for (const PlanResult& p : plans) {
        base.poses.push_back(p.pose);
        base.costs.push_back(p.cost.total);
      }
      per_object[i] = augment(base, meshes[i]);
    } catch (const Error& e) {
      throw Error("object " + std::to_string(i) + ": " + e.what());
    }
  }
  for (auto& v : per_object) {
    for (auto& e : v) data.entries.push_back(std::move(e));
  }
  data.split = split_dataset(n, cfg.train_fraction, stage_seed(seed, "split"));
  return data;
}

std::string encode_rle(const std::vector<std::uint8_t>& cells) {
  std::string out;
  std::uint8_t value = 0;
  std::size_t run = 0;
  for (std::uint8_t c : cells) {
    const std::uint8_t b = c != 0;
    if (b == value) {
      ++run;
    } else {
      out += std::to_string(run) + ' ';
      value = b;
      run = 1;
    }
  }
  out += std::to_string(run);
  return out;
}

std::vector<std::uint8_t> decode_rle(const std::string& rle, std::size_t count) {
  std::vector<std::uint8_t> out;
  out.reserve(count);
  std::istringstream in(rle);
  std::uint8_t value = 0;
  long long run = 0;
  while (in >> run) {
    if (run < 0 || out.size() + static_cast<std::size_t>(run) > count) throw ParseError("grid run lengths overflow");
    out.insert(out.end(), static_cast<std::size_t>(run), value);
    value ^= 1;
  }
  if (!in.eof() || out.size() != count) throw ParseError("grid run lengths do not match resolution");
  return out;
}

std::string entry_to_json_line(const DatasetEntry& e, Split split) {
  json j;
  j["object_id"] = e.object_id;
  j["rotation_index"] = e.rotation_index;
  j["split"] = to_string(split);
  j["t_r"] = transform_json(e.t_r);
  json m = json::array();
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 4; ++c) m.push_back(e.grid.object_to_grid(r, c));
  }
  j["grid"] = {{"resolution", e.grid.resolution}, {"object_to_grid", m}, {"rle", encode_rle(e.grid.cells)}};
  j["sdf_path"] = e.sdf_path;
  json poses = json::array();
  for (const PoseVector& x : e.poses) poses.push_back(std::vector<double>(x.data(), x.data() + x.size()));
  j["poses"] = poses;
  j["costs"] = e.costs;
  return j.dump();
}

void save_dataset(const GraspDataset& data, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "sdf");
  for (int i = 0; i < data.object_count(); ++i) write_sdf(data.sdfs[i], dir / sdf_file(i));
  std::string text;
  for (const DatasetEntry& e : data.entries) text += entry_to_json_line(e, data.split_of(e)) + "\n";
  detail::write_file(dir / "entries.jsonl", text);
}

GraspDataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream in(dir / "entries.jsonl");
  if (!in) throw IoError("cannot read " + (dir / "entries.jsonl").string());
  GraspDataset data;
  std::vector<int> split_tag;
  std::vector<std::string> sdf_paths;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      DatasetEntry e;
      e.object_id = j.at("object_id");
      e.rotation_index = j.at("rotation_index");
      if (e.object_id < 0) throw ParseError("negative object id");
      e.t_r = json_transform(j.at("t_r"));
      const json& g = j.at("grid");
      e.grid.resolution = g.at("resolution");
      const auto& m = g.at("object_to_grid");
      for (int r = 0; r < 4; ++r) {
        for (int c = 0; c < 4; ++c) e.grid.object_to_grid(r, c) = m.at(r * 4 + c);
      }
      const std::size_t cells = static_cast<std::size_t>(e.grid.resolution) * e.grid.resolution * e.grid.resolution;
      e.grid.cells = decode_rle(g.at("rle").get<std::string>(), cells);
      e.sdf_path = j.at("sdf_path");
      for (const auto& p : j.at("poses")) {
        const auto v = p.get<std::vector<double>>();
        e.poses.push_back(Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())));
      }
      e.costs = j.at("costs").get<std::vector<double>>();
      if (e.poses.empty() || e.costs.size() != e.poses.size()) throw ParseError("poses and costs disagree");
      if (data.k == 0) data.k = static_cast<int>(e.poses.size());
      if (static_cast<int>(e.poses.size()) != data.k) throw ParseError("entries have different K");
      const int tag = j.at("split").get<std::string>() == "train" ? 0 : 1;
      if (e.object_id >= static_cast<int>(split_tag.size())) {
        split_tag.resize(e.object_id + 1, -1);
        sdf_paths.resize(e.object_id + 1);
      }
      if (split_tag[e.object_id] == -1) {
        split_tag[e.object_id] = tag;
        sdf_paths[e.object_id] = e.sdf_path;
      } else if (split_tag[e.object_id] != tag || sdf_paths[e.object_id] != e.sdf_path) {
        throw ParseError("object " + std::to_string(e.object_id) + " has inconsistent split or sdf path");
      }
      data.entries.push_back(std::move(e));
    } catch (const json::exception& ex) {
      throw ParseError("entries.jsonl line " + std::to_string(line_no) + ": " + ex.what());
    } catch (const ParseError& ex) {
      throw ParseError("entries.jsonl line " + std::to_string(line_no) + ": " + ex.what());
    }
  }
  if (data.entries.empty()) throw ParseError("dataset has no entries");
  const int n = static_cast<int>(split_tag.size());
  data.split.resize(n);
  data.sdfs.resize(n);
  for (int i = 0; i < n; ++i) {
    if (split_tag[i] == -1) throw ParseError("object " + std::to_string(i) + " has no entries");
    data.split[i] = split_tag[i] == 0 ? Split::train : Split::test;
    const auto path = dir / sdf_paths[i];
    if (!std::filesystem::exists(path)) {
      throw IoError("missing SDF for object " + std::to_string(i) + ": " + path.string());
    }
    data.sdfs[i] = read_sdf(path);
  }
  return data;
}

}  // namespace graspfield

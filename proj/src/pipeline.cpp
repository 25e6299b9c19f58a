#include "graspfield/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <set>

#include <json.hpp>

#include "binary_io.hpp"
#include "graspfield/error.hpp"
#include "graspfield/hash.hpp"

namespace graspfield {
namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;

constexpr const char* kLosses[3] = {"l2", "consistency", "combined"};

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw ParseError(where + " must be an object");
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!ok.count(it.key())) throw ParseError("unknown key '" + it.key() + "' in " + where);
  }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string object_file(int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "meshes/object_%03d.obj", i);
  return buf;
}

json anneal_json(const AnnealConfig& a) {
  return {{"iterations", a.iterations},
          {"candidates_per_iter", a.candidates_per_iter},
          {"initial_temperature", a.initial_temperature},
          {"cooling_rate", a.cooling_rate},
          {"step_translation", a.step_translation},
          {"step_rotation", a.step_rotation},
          {"step_joint", a.step_joint},
          {"penetration_weight", a.penetration_weight},
          {"start_radius", a.start_radius}};
}

json dataset_json(const DatasetConfig& d) {
  return {{"resolution", d.resolution}, {"k", d.k}, {"train_fraction", d.train_fraction}, {"anneal", anneal_json(d.anneal)}};
}

}  // namespace

PipelineConfig pipeline_config_from_json(const std::string& text) {
  PipelineConfig c;
  try {
    const json j = json::parse(text);
    check_keys(j, {"seed", "objects", "gripper", "dataset", "network", "train", "refine", "eval", "compare"}, "config");
    read(j, "seed", c.seed);
    read(j, "gripper", c.gripper);
    if (j.contains("objects")) {
      check_keys(j["objects"], {"count"}, "objects");
      read(j["objects"], "count", c.object_count);
    }
    if (j.contains("dataset")) {
      const json& d = j["dataset"];
      check_keys(d, {"resolution", "k", "train_fraction", "anneal"}, "dataset");
      read(d, "resolution", c.dataset.resolution);
      read(d, "k", c.dataset.k);
      read(d, "train_fraction", c.dataset.train_fraction);
      if (d.contains("anneal")) {
        const json& a = d["anneal"];
        check_keys(a,
                   {"iterations", "candidates_per_iter", "initial_temperature", "cooling_rate", "step_translation",
                    "step_rotation", "step_joint", "penetration_weight", "start_radius"},
                   "dataset.anneal");
        AnnealConfig& an = c.dataset.anneal;
        read(a, "iterations", an.iterations);
        read(a, "candidates_per_iter", an.candidates_per_iter);
        read(a, "initial_temperature", an.initial_temperature);
        read(a, "cooling_rate", an.cooling_rate);
        read(a, "step_translation", an.step_translation);
        read(a, "step_rotation", an.step_rotation);
        read(a, "step_joint", an.step_joint);
        read(a, "penetration_weight", an.penetration_weight);
        read(a, "start_radius", an.start_radius);
      }
    }
    if (j.contains("network")) {
      json n = j["network"];
      if (!n.contains("output_dim")) n["output_dim"] = 1;
      c.network = network_config_from_json(n.dump());
    }
    if (j.contains("train")) {
      const json& t = j["train"];
      check_keys(t, {"epochs", "learning_rate", "batch_size", "beta1", "beta2", "epsilon", "beta"}, "train");
      read(t, "epochs", c.epochs);
      read(t, "learning_rate", c.adam.learning_rate);
      read(t, "batch_size", c.adam.batch_size);
      read(t, "beta1", c.adam.beta1);
      read(t, "beta2", c.adam.beta2);
      read(t, "epsilon", c.adam.epsilon);
      read(t, "beta", c.beta);
    }
    if (j.contains("refine")) {
      const json& r = j["refine"];
      check_keys(r, {"step", "max_iters", "max_halvings", "joints_only", "clearance"}, "refine");
      read(r, "step", c.refine.step);
      read(r, "max_iters", c.refine.max_iters);
      read(r, "max_halvings", c.refine.max_halvings);
      read(r, "joints_only", c.refine.joints_only);
      read(r, "clearance", c.refine.clearance);
    }
    if (j.contains("eval")) {
      const json& e = j["eval"];
      check_keys(e, {"mu", "directions", "max_rotations", "refine", "seed"}, "eval");
      read(e, "mu", c.resample.mu);
      read(e, "directions", c.resample.directions);
      read(e, "max_rotations", c.resample.max_rotations);
      read(e, "refine", c.resample.refine);
      read(e, "seed", c.resample.seed);
    }
    if (j.contains("compare")) {
      const json& k = j["compare"];
      check_keys(k, {"objects", "epochs", "seeds"}, "compare");
      read(k, "objects", c.compare_objects);
      read(k, "epochs", c.compare_epochs);
      read(k, "seeds", c.compare_seeds);
    }
  } catch (const json::exception& e) {
    throw ParseError(std::string("config: ") + e.what());
  }
  c.resample.beta = c.beta;
  c.resample.refine_cfg = c.refine;
  c.refine.validate();
  if (c.object_count < 1) throw InvalidParameter("empty object set");
  if (c.epochs < 0) throw InvalidParameter("epochs must be >= 0");
  if (c.network.input_resolution != c.dataset.resolution) {
    throw ShapeError("network input resolution " + std::to_string(c.network.input_resolution) +
                     " differs from dataset resolution " + std::to_string(c.dataset.resolution));
  }
  return c;
}

std::string pipeline_config_to_json(const PipelineConfig& c) {
  json net = json::parse(network_config_to_json(c.network));
  net.erase("output_dim");
  json j{{"seed", c.seed},
         {"objects", {{"count", c.object_count}}},
         {"gripper", c.gripper},
         {"dataset", dataset_json(c.dataset)},
         {"network", net},
         {"train",
          {{"epochs", c.epochs},
           {"learning_rate", c.adam.learning_rate},
           {"batch_size", c.adam.batch_size},
           {"beta1", c.adam.beta1},
           {"beta2", c.adam.beta2},
           {"epsilon", c.adam.epsilon},
           {"beta", c.beta}}},
         {"refine",
          {{"step", c.refine.step},
           {"max_iters", c.refine.max_iters},
           {"max_halvings", c.refine.max_halvings},
           {"joints_only", c.refine.joints_only},
           {"clearance", c.refine.clearance}}},
         {"eval",
          {{"mu", c.resample.mu},
           {"directions", c.resample.directions},
           {"max_rotations", c.resample.max_rotations},
           {"refine", c.resample.refine},
           {"seed", c.resample.seed}}},
         {"compare", {{"objects", c.compare_objects}, {"epochs", c.compare_epochs}, {"seeds", c.compare_seeds}}}};
  return j.dump(2) + "\n";
}

PipelineConfig load_pipeline_config(const fs::path& path) { return pipeline_config_from_json(detail::read_file(path)); }

std::vector<std::string> generate_objects(const PipelineConfig& cfg, const fs::path& dir) {
  const std::vector<ObjectSpec> specs = procedural_objects(cfg.object_count, stage_seed(cfg.seed, "objects"));
  fs::create_directories(dir);
  json list = json::array();
  std::vector<std::string> names;
  for (const ObjectSpec& s : specs) {
    write_obj(make_primitive(s.shape), dir / (s.name + ".obj"));
    list.push_back({{"name", s.name},
                    {"kind", to_string(s.shape.kind)},
                    {"size", s.shape.size},
                    {"exponents", s.shape.exponents}});
    names.push_back(s.name);
  }
  detail::write_file(dir / "objects.json", json{{"objects", list}}.dump(2) + "\n");
  return names;
}

namespace {

std::vector<std::string> object_texts(const fs::path& dir) {
  json j;
  try {
    j = json::parse(detail::read_file(dir / "objects.json"));
  } catch (const json::exception& e) {
    throw ParseError("objects.json: " + std::string(e.what()));
  }
  std::vector<std::string> out;
  for (const json& o : j.at("objects")) out.push_back(detail::read_file(dir / (o.at("name").get<std::string>() + ".obj")));
  if (out.empty()) throw InvalidParameter("empty object set");
  return out;
}

std::string hash_texts(const PipelineConfig& cfg, const std::vector<std::string>& texts, const GripperModel& model) {
  std::uint64_t h = fnv1a64(dataset_json(cfg.dataset).dump());
  h = fnv1a64(std::to_string(cfg.seed), h);
  h = fnv1a64(model.digest(), h);
  for (const std::string& t : texts) h = fnv1a64(t, fnv1a64("\x1f", h));
  return hex64(h);
}

}  // namespace

std::vector<TriMesh> load_objects(const fs::path& dir) {
  std::vector<TriMesh> out;
  for (const std::string& t : object_texts(dir)) out.push_back(parse_obj(t));
  return out;
}

std::string dataset_hash(const PipelineConfig& cfg, const std::vector<TriMesh>& meshes, const GripperModel& model) {
  std::vector<std::string> texts;
  for (const TriMesh& m : meshes) texts.push_back(to_obj(m));
  return hash_texts(cfg, texts, model);
}

bool build_dataset_dir(const PipelineConfig& cfg, const fs::path& objects_dir, const fs::path& out_dir) {
  const GripperModel model = load_gripper(cfg.gripper);
  const std::vector<std::string> texts = object_texts(objects_dir);
  const std::string hash = hash_texts(cfg, texts, model);
  const fs::path manifest = out_dir / "manifest.json";
  if (fs::exists(manifest) && fs::exists(out_dir / "entries.jsonl")) {
    try {
      if (json::parse(detail::read_file(manifest)).value("hash", "") == hash) return false;
    } catch (const json::exception&) {
    }
  }
  std::vector<TriMesh> meshes;
  for (std::size_t i = 0; i < texts.size(); ++i) {
    try {
      meshes.push_back(parse_obj(texts[i]));
    } catch (const Error& e) {
      throw Error("object " + std::to_string(i) + ": " + e.what());
    }
  }
  const GraspDataset data = build_dataset(meshes, model, cfg.dataset, cfg.seed);
  save_dataset(data, out_dir);
  fs::create_directories(out_dir / "meshes");
  for (std::size_t i = 0; i < texts.size(); ++i) detail::write_file(out_dir / object_file(static_cast<int>(i)), texts[i]);
  json m{{"hash", hash},
         {"gripper", model.name()},
         {"gripper_digest", model.digest()},
         {"objects", texts.size()},
         {"entries", data.entries.size()},
         {"k", data.k},
         {"dataset", dataset_json(cfg.dataset)},
         {"seed", cfg.seed}};
  detail::write_file(manifest, m.dump(2) + "\n");
  return true;
}

DatasetBundle load_dataset_dir(const fs::path& dir) {
  DatasetBundle b;
  b.data = load_dataset(dir);
  for (int i = 0; i < b.data.object_count(); ++i) {
    const fs::path p = dir / object_file(i);
    if (!fs::exists(p)) throw IoError("missing mesh for object " + std::to_string(i) + ": " + p.string());
    b.meshes.push_back(read_obj(p));
  }
  return b;
}

std::map<std::string, TrainResult> train_losses(const PipelineConfig& cfg, const GraspDataset& data,
                                                const std::vector<std::string>& losses, const fs::path& out_dir) {
  const GripperModel model = load_gripper(cfg.gripper);
  fs::create_directories(out_dir);
  std::map<std::string, TrainResult> out;
  for (const std::string& name : losses) {
    TrainConfig tc;
    tc.network = cfg.network;
    tc.adam = cfg.adam;
    tc.loss = LossSpec::parse(name, cfg.beta);
    tc.epochs = cfg.epochs;
    tc.seed = stage_seed(cfg.seed, "train/" + name);
    TrainResult r = train(data, model, tc);
    save_network(r.network, out_dir / (name + ".gfn"));
    write_text(out_dir / ("residuals_" + name + ".csv"), residual_log_csv(r.log));
    out.emplace(name, std::move(r));
  }
  return out;
}

std::map<std::string, Network> load_checkpoints(const fs::path& dir) {
  std::map<std::string, Network> out;
  for (const char* name : kLosses) {
    const fs::path p = dir / (std::string(name) + ".gfn");
    if (!fs::exists(p)) throw IoError("missing checkpoint for loss " + std::string(name) + ": " + p.string());
    out.emplace(name, load_network(p));
  }
  return out;
}

std::string EvalReport::penetration_csv() const {
  std::string out =
      "model,stage,predictions,mean_count,mean_depth_m,max_depth_m,converged,unconverged_flagged,mean_iterations,"
      "mean_relative_change\n";
  for (const char* name : kLosses) {
    auto it = penetration.find(name);
    if (it == penetration.end()) continue;
    const PenetrationReport& r = it->second;
    auto row = [&](const char* stage, const PenetrationSummary& s, bool refined) {
      out += std::string(name) + "," + stage + "," + std::to_string(s.predictions) + "," + fmt(s.mean_count) + "," +
             fmt(s.mean_depth) + "," + fmt(s.max_depth) + ",";
      if (refined) {
        out += std::to_string(r.converged) + "," + std::to_string(r.unconverged_flagged) + "," +
               fmt(r.mean_iterations) + "," + fmt(r.mean_relative_change) + "\n";
      } else {
        out += ",,,\n";
      }
    };
    row("before", r.before, false);
    if (r.refined) row("after", r.after, true);
  }
  return out;
}

std::string EvalReport::quality_csv() const {
  std::string out = "object_id,rotations_tried,passed,epsilon,penetrations\n";
  for (const QualityRow& q : quality) {
    out += std::to_string(q.object_id) + "," + std::to_string(q.result.rotations_tried) + "," +
           (q.result.passed ? "1" : "0") + "," + fmt(q.result.epsilon) + "," + std::to_string(q.result.penetrations) +
           "\n";
  }
  return out;
}

std::string EvalReport::timing_json() const {
  json j;
  for (const auto& [name, r] : penetration) {
    const double n = std::max(1, r.before.predictions);
    j["penetration"][name] = {{"forward_seconds_per_prediction", r.forward_seconds / n},
                              {"adjust_seconds_per_prediction", r.adjust_seconds / n}};
  }
  double fwd = 0.0, adj = 0.0;
  int tries = 0;
  for (const QualityRow& q : quality) {
    fwd += q.result.forward_seconds;
    adj += q.result.adjust_seconds;
    tries += q.result.rotations_tried;
  }
  if (tries > 0) {
    j["resampling"] = {{"forward_seconds_per_attempt", fwd / tries}, {"adjust_seconds_per_attempt", adj / tries}};
  }
  return j.dump(2) + "\n";
}

EvalReport evaluate(const PipelineConfig& cfg, const DatasetBundle& bundle, std::map<std::string, Network>& nets,
                    const fs::path& out_dir) {
  const GripperModel model = load_gripper(cfg.gripper);
  const GraspDataset& data = bundle.data;
  EvalReport rep;
  rep.residuals = residual_matrix(nets, data, model, cfg.beta);
  for (const char* name : kLosses) {
    rep.penetration.emplace(name, penetration_report(nets.at(name), data, model, true, cfg.refine));
  }
  ResampleConfig rc = cfg.resample;
  rc.beta = cfg.beta;
  rc.refine_cfg = cfg.refine;
  for (int obj = 0; obj < data.object_count(); ++obj) {
    if (data.split[obj] != Split::test) continue;
    rep.quality.push_back({obj, predict_with_resampling(nets.at("combined"), bundle.meshes[obj], data.sdfs[obj], model, rc)});
  }
  fs::create_directories(out_dir);
  write_text(out_dir / "residual_matrix.csv", rep.residuals.to_csv());
  write_text(out_dir / "penetration.csv", rep.penetration_csv());
  write_text(out_dir / "quality.csv", rep.quality_csv());
  write_text(out_dir / "timing.json", rep.timing_json());
  return rep;
}

std::string pose_to_json(const GripperModel& model, const PoseVector& x, double scale) {
  if (x.size() != model.pose_dim()) throw ShapeError("pose does not match the gripper");
  const Eigen::Vector3d t = x.head<3>() / scale;
  json j{{"gripper", model.name()},
         {"pose", std::vector<double>(x.data(), x.data() + x.size())},
         {"translation_m", {t.x(), t.y(), t.z()}}};
  return j.dump(2) + "\n";
}

PoseVector pose_from_json(const std::string& text, const GripperModel& model) {
  std::vector<double> v;
  try {
    v = json::parse(text).at("pose").get<std::vector<double>>();
  } catch (const json::exception& e) {
    throw ParseError(std::string("pose file: ") + e.what());
  }
  if (static_cast<int>(v.size()) != model.pose_dim()) {
    throw ShapeError("pose has " + std::to_string(v.size()) + " entries, gripper " + model.name() + " needs " +
                     std::to_string(model.pose_dim()));
  }
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

TriMesh grasp_scene(const TriMesh& object, const GripperModel& model, const PoseVector& x, double scale) {
  TriMesh out = object;
  const TriMesh marker = make_sphere(0.002, 8, 4);
  for (const Vec3& p : forward_kinematics(model, x)) {
    const int base = static_cast<int>(out.vertices.size());
    for (const Vec3& v : marker.vertices) out.vertices.push_back(v + p / scale);
    for (const auto& t : marker.triangles) out.triangles.push_back({t[0] + base, t[1] + base, t[2] + base});
  }
  return out;
}

std::vector<CompareRow> compare_low_dof(const PipelineConfig& cfg) {
  std::vector<CompareRow> rows;
  for (std::uint64_t seed : cfg.compare_seeds) {
    const std::vector<ObjectSpec> specs = procedural_objects(cfg.compare_objects, stage_seed(seed, "objects"));
    std::vector<TriMesh> meshes;
    for (const ObjectSpec& s : specs) meshes.push_back(make_primitive(s.shape));
    for (const char* gripper : {"simple9", "wide24"}) {
      const GripperModel model = builtin_gripper(gripper);
      const GraspDataset data = build_dataset(meshes, model, cfg.dataset, seed);
      TrainConfig tc;
      tc.network = cfg.network;
      tc.adam = cfg.adam;
      tc.loss = LossSpec::parse("l2", cfg.beta);
      tc.epochs = cfg.compare_epochs;
      tc.seed = stage_seed(seed, "train/l2");
      TrainResult r = train(data, model, tc);
      const std::vector<std::size_t> test = data.indices(Split::test);
      const Residuals res = residuals(predict_entries(r.network, data, test), data, test, model, cfg.beta);
      rows.push_back({gripper, seed, model.pose_dim(), res.l2});
    }
  }
  return rows;
}

std::string compare_csv(const std::vector<CompareRow>& rows) {
  std::string out = "gripper,seed,pose_dim,test_l2,test_l2_per_dim\n";
  for (const CompareRow& r : rows) {
    out += r.gripper + "," + std::to_string(r.seed) + "," + std::to_string(r.pose_dim) + "," + fmt(r.test_l2) + "," +
           fmt(r.test_l2 / r.pose_dim) + "\n";
  }
  return out;
}

}  // namespace graspfield

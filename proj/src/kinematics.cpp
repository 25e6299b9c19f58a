#include "graspfield/kinematics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>

#include <json.hpp>

#include "binary_io.hpp"
#include "graspfield/error.hpp"
#include "graspfield/hash.hpp"

namespace graspfield {
namespace {

using json = nlohmann::json;

struct Frame {
  Mat3 r = Mat3::Identity();
  Vec3 t = Vec3::Zero();
};

Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
  return m;
}

// Link frames in the hand frame for the given joint angles.
void hand_frames(const GripperModel& model, const double* theta, std::vector<Frame>& frames) {
  const auto& links = model.links();
  frames.resize(links.size());
  for (int l : model.topological_order()) {
    const Link& link = links[l];
    Frame f;
    const Mat3 off_r = link.offset.rotation_matrix();
    if (link.parent < 0) {
      f.r = off_r;
      f.t = link.offset.translation();
    } else {
      const Frame& p = frames[link.parent];
      f.r = p.r * off_r;
      f.t = p.r * link.offset.translation() + p.t;
    }
    if (link.joint >= 0) {
      const Joint& j = model.joints()[link.joint];
      f.r = f.r * Eigen::AngleAxisd(theta[link.joint], j.axis).toRotationMatrix();
    }
    frames[l] = f;
  }
}

std::vector<Vec3> contact_points(const GripperModel& model, const std::vector<Frame>& frames, const Mat3& r,
                                 const Vec3& t) {
  std::vector<Vec3> out;
  out.reserve(model.contacts().size());
  for (const ContactPoint& c : model.contacts()) {
    const Frame& f = frames[c.link];
    out.push_back(r * (f.r * c.offset + f.t) + t);
  }
  return out;
}

json vec_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

Vec3 json_vec3(const json& j, const std::string& what) {
  if (!j.is_array() || j.size() != 3) throw ParseError(what + ": expected an array of 3 numbers");
  Vec3 v;
  for (int i = 0; i < 3; ++i) {
    if (!j[i].is_number()) throw ParseError(what + ": expected an array of 3 numbers");
    v[i] = j[i].get<double>();
  }
  return v;
}

const json& field(const json& j, const char* key, const std::string& what) {
  if (!j.is_object() || !j.contains(key)) throw ParseError(what + ": missing \"" + key + "\"");
  return j[key];
}

}  // namespace

GripperModel::GripperModel(std::string name, std::vector<Link> links, std::vector<Joint> joints,
                           std::vector<ContactPoint> contacts)
    : name_(std::move(name)), links_(std::move(links)), joints_(std::move(joints)), contacts_(std::move(contacts)) {
  const int n = static_cast<int>(links_.size());
  if (n == 0) throw ParseError("gripper has no links");

  int root = -1;
  for (int l = 0; l < n; ++l) {
    const int p = links_[l].parent;
    if (p < -1 || p >= n) throw ParseError("link " + std::to_string(l) + " has an invalid parent");
    if (p == -1) {
      if (root >= 0) {
        throw ParseError("disconnected tree: links " + std::to_string(root) + " and " + std::to_string(l) +
                         " both have no parent");
      }
      root = l;
    }
  }
  // Walking up from every link must reach the root without revisiting.
  for (int l = 0; l < n; ++l) {
    std::vector<char> seen(n, 0);
    for (int c = l; c != -1; c = links_[c].parent) {
      if (seen[c]) throw ParseError("kinematic cycle at link " + std::to_string(c) + " (" + links_[c].name + ")");
      seen[c] = 1;
    }
  }
  if (root < 0) throw ParseError("kinematic cycle at link 0 (" + links_[0].name + ")");

  // Parents before children.
  std::vector<int> depth(n, 0);
  for (int l = 0; l < n; ++l) {
    for (int c = links_[l].parent; c != -1; c = links_[c].parent) ++depth[l];
  }
  order_.resize(n);
  for (int l = 0; l < n; ++l) order_[l] = l;
  std::stable_sort(order_.begin(), order_.end(), [&](int a, int b) { return depth[a] < depth[b]; });

  for (Link& l : links_) l.joint = -1;
  for (int j = 0; j < static_cast<int>(joints_.size()); ++j) {
    Joint& joint = joints_[j];
    const std::string what = "joint " + std::to_string(j);
    if (joint.link < 0 || joint.link >= n) throw ParseError(what + " refers to an unknown link");
    if (joint.link == root) throw ParseError(what + " is attached to the root link");
    if (links_[joint.link].joint >= 0) throw ParseError("link " + links_[joint.link].name + " has two joints");
    if (!joint.axis.allFinite() || std::abs(joint.axis.norm() - 1.0) > 1e-6) {
      throw ParseError(what + " axis is not unit length");
    }
    joint.axis.normalize();
    if (!(joint.lower < joint.upper)) throw ParseError(what + " needs lower < upper limit");
    links_[joint.link].joint = j;
  }
  for (int l = 0; l < n; ++l) {
    if (l != root && links_[l].joint < 0) throw ParseError("link " + links_[l].name + " has no joint");
  }

  if (contacts_.empty()) throw ParseError("gripper has no contact points");
  chains_.resize(contacts_.size());
  for (std::size_t i = 0; i < contacts_.size(); ++i) {
    const int l = contacts_[i].link;
    if (l < 0 || l >= n) throw ParseError("contact " + std::to_string(i) + " refers to an unknown link");
    for (int c = l; c != -1; c = links_[c].parent) {
      if (links_[c].joint >= 0) chains_[i].push_back(links_[c].joint);
    }
  }

  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(joint_count());
  std::vector<Frame> frames;
  hand_frames(*this, zero.data(), frames);
  rest_ = contact_points(*this, frames, Mat3::Identity(), Vec3::Zero());
}

std::string GripperModel::digest() const { return hex64(fnv1a64(gripper_to_json(*this))); }

GraspPose::GraspPose(const GripperModel& model, const RigidTransform& w, const Eigen::VectorXd& j)
    : wrist(w), joints(j) {
  if (joints.size() != model.joint_count()) {
    throw ShapeError("pose has " + std::to_string(joints.size()) + " joints, gripper has " +
                     std::to_string(model.joint_count()));
  }
  for (int k = 0; k < model.joint_count(); ++k) {
    const Joint& jt = model.joints()[k];
    const double c = std::clamp(joints[k], jt.lower, jt.upper);
    if (c != joints[k]) {
      clamped = true;
      joints[k] = c;
    }
  }
}

GraspPose GraspPose::from_vector(const GripperModel& model, const PoseVector& x) {
  if (x.size() != model.pose_dim()) {
    throw ShapeError("pose vector has length " + std::to_string(x.size()) + ", expected " +
                     std::to_string(model.pose_dim()));
  }
  const RigidTransform wrist(x.head<3>(), Eigen::Quaterniond(x[3], x[4], x[5], x[6]));
  return GraspPose(model, wrist, x.tail(model.joint_count()));
}

PoseVector GraspPose::to_vector() const {
  PoseVector x(7 + joints.size());
  const auto& q = wrist.rotation();
  x.head<3>() = wrist.translation();
  x[3] = q.w();
  x[4] = q.x();
  x[5] = q.y();
  x[6] = q.z();
  x.tail(joints.size()) = joints;
  return x;
}

PoseVector compose_wrist(const RigidTransform& t, const PoseVector& x) {
  const int j = static_cast<int>(x.size()) - 7;
  const RigidTransform wrist(x.head<3>(), Eigen::Quaterniond(x[3], x[4], x[5], x[6]));
  const RigidTransform moved = t * wrist;
  PoseVector y(x.size());
  y.head<3>() = moved.translation();
  y[3] = moved.rotation().w();
  y[4] = moved.rotation().x();
  y[5] = moved.rotation().y();
  y[6] = moved.rotation().z();
  y.tail(j) = x.tail(j);
  return y;
}

bool clamp_joints(const GripperModel& model, PoseVector& x) {
  bool moved = false;
  for (int k = 0; k < model.joint_count(); ++k) {
    const Joint& jt = model.joints()[k];
    const double c = std::clamp(x[7 + k], jt.lower, jt.upper);
    moved |= c != x[7 + k];
    x[7 + k] = c;
  }
  return moved;
}

void normalize_quaternion(PoseVector& x) {
  const Eigen::Quaterniond q = canonicalize(Eigen::Quaterniond(x[3], x[4], x[5], x[6]).normalized());
  x[3] = q.w();
  x[4] = q.x();
  x[5] = q.y();
  x[6] = q.z();
}

std::vector<Vec3> forward_kinematics(const GripperModel& model, const GraspPose& pose) {
  std::vector<Frame> frames;
  hand_frames(model, pose.joints.data(), frames);
  return contact_points(model, frames, pose.wrist.rotation_matrix(), pose.wrist.translation());
}

std::vector<Vec3> forward_kinematics(const GripperModel& model, const PoseVector& x) {
  if (x.size() != model.pose_dim()) throw ShapeError("pose vector length does not match gripper");
  const Mat3 r = rotation_of(Eigen::Quaterniond(x[3], x[4], x[5], x[6]));
  std::vector<Frame> frames;
  hand_frames(model, x.data() + 7, frames);
  return contact_points(model, frames, r, x.head<3>());
}

FkJacobian fk_jacobian(const GripperModel& model, const PoseVector& x) {
  if (x.size() != model.pose_dim()) throw ShapeError("pose vector length does not match gripper");
  const Eigen::Vector4d q_raw(x[3], x[4], x[5], x[6]);
  const double qn = q_raw.norm();
  const Eigen::Vector4d qh = q_raw / qn;
  const double w = qh[0];
  const Vec3 u = qh.tail<3>();
  // Same rotation as forward_kinematics so that points agree bit for bit.
  const Mat3 r = rotation_of(Eigen::Quaterniond(x[3], x[4], x[5], x[6]));
  // d(unit q)/d(raw q)
  const Eigen::Matrix4d dnorm = (Eigen::Matrix4d::Identity() - qh * qh.transpose()) / qn;

  std::vector<Frame> frames;
  hand_frames(model, x.data() + 7, frames);

  FkJacobian out;
  const int dim = model.pose_dim();
  out.points.reserve(model.contacts().size());
  out.blocks.reserve(model.contacts().size());
  for (int i = 0; i < model.contact_count(); ++i) {
    const ContactPoint& c = model.contacts()[i];
    const Frame& f = frames[c.link];
    const Vec3 v = f.r * c.offset + f.t;
    out.points.push_back(r * v + x.head<3>());

    Eigen::Matrix<double, 3, Eigen::Dynamic> b = Eigen::Matrix<double, 3, Eigen::Dynamic>::Zero(3, dim);
    b.leftCols<3>().setIdentity();
    // R(q) v = (w^2 - u.u) v + 2 (u.v) u + 2 w (u x v)
    Eigen::Matrix<double, 3, 4> dq;
    dq.col(0) = 2.0 * w * v + 2.0 * u.cross(v);
    dq.rightCols<3>() = -2.0 * v * u.transpose() + 2.0 * u * v.transpose() + 2.0 * u.dot(v) * Mat3::Identity() -
                        2.0 * w * skew(v);
    b.middleCols<4>(3) = dq * dnorm;
    for (int k : model.chain(i)) {
      const Frame& jf = frames[model.joints()[k].link];
      const Vec3 axis = jf.r * model.joints()[k].axis;
      b.col(7 + k) = r * axis.cross(v - jf.t);
    }
    out.blocks.push_back(std::move(b));
  }
  return out;
}

GripperModel builtin_gripper(const std::string& name) {
  std::vector<Link> links{{"palm", -1, RigidTransform::identity(), -1}};
  std::vector<Joint> joints;
  std::vector<ContactPoint> contacts;
  auto add_link = [&](const std::string& link_name, int parent, const Vec3& t, const Vec3& axis, double lo,
                      double hi) {
    links.push_back({link_name, parent, RigidTransform(t, Eigen::Quaterniond::Identity()), -1});
    const int id = static_cast<int>(links.size()) - 1;
    joints.push_back({id, axis, lo, hi});
    return id;
  };
  constexpr double kPi = std::numbers::pi;

  if (name == "simple9") {
    // Three fingers at 120 degrees, each a chain of three flexion links.
    const double radius = 0.2, seg = 0.2;
    for (int f = 0; f < 3; ++f) {
      const double phi = kPi / 2 + f * 2 * kPi / 3;
      const Vec3 radial(std::cos(phi), std::sin(phi), 0.0);
      const Vec3 inward_axis(std::sin(phi), -std::cos(phi), 0.0);  // positive angle curls inward
      int parent = 0;
      for (int s = 0; s < 3; ++s) {
        const Vec3 t = s == 0 ? Vec3(radius * radial) : Vec3(0.0, 0.0, seg);
        parent = add_link("f" + std::to_string(f) + "_" + std::to_string(s), parent, t, inward_axis, -0.2, 1.6);
        contacts.push_back({parent, Vec3(0.0, 0.0, 0.75 * seg)});
      }
    }
    for (int f = 0; f < 3; ++f) {
      const double phi = kPi / 2 + kPi / 3 + f * 2 * kPi / 3;
      contacts.push_back({0, Vec3(0.1 * std::cos(phi), 0.1 * std::sin(phi), 0.0)});
    }
  } else if (name == "wide24") {
    // Four fingers at 90 degrees; each has an abduction joint about the radial
    // direction followed by five flexion links.
    const double radius = 0.22, seg = 0.12;
    for (int f = 0; f < 4; ++f) {
      const double phi = f * kPi / 2;
      const Vec3 radial(std::cos(phi), std::sin(phi), 0.0);
      const Vec3 inward_axis(std::sin(phi), -std::cos(phi), 0.0);
      const std::string base = "f" + std::to_string(f);
      int parent = add_link(base + "_abd", 0, radius * radial, radial, -0.35, 0.35);
      for (int s = 0; s < 5; ++s) {
        const Vec3 t = s == 0 ? Vec3::Zero() : Vec3(0.0, 0.0, seg);
        parent = add_link(base + "_" + std::to_string(s), parent, t, inward_axis, -0.2, 1.6);
        contacts.push_back({parent, Vec3(0.0, 0.0, 0.4 * seg)});
        contacts.push_back({parent, Vec3(0.0, 0.0, 0.9 * seg)});
      }
    }
    contacts.push_back({0, Vec3::Zero()});
    for (int k = 0; k < 4; ++k) {
      const double phi = kPi / 4 + k * kPi / 2;
      contacts.push_back({0, Vec3(0.12 * std::cos(phi), 0.12 * std::sin(phi), 0.0)});
    }
  } else {
    throw InvalidParameter("unknown built-in gripper '" + name + "'");
  }
  return GripperModel(name, std::move(links), std::move(joints), std::move(contacts));
}

std::vector<std::string> builtin_gripper_names() { return {"simple9", "wide24"}; }

GripperModel load_gripper(const std::string& name_or_path) {
  const auto names = builtin_gripper_names();
  if (std::find(names.begin(), names.end(), name_or_path) != names.end()) return builtin_gripper(name_or_path);
  const std::filesystem::path path(name_or_path);
  return parse_gripper(detail::read_file(path), path.stem().string());
}

GripperModel parse_gripper(const std::string& json_text, const std::string& name) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ParseError(std::string("gripper file is not valid JSON: ") + e.what());
  }
  try {
    const json& jl = field(doc, "links", "gripper");
    if (!jl.is_array()) throw ParseError("gripper: \"links\" must be an array");
    std::map<std::string, int> index;
    for (std::size_t i = 0; i < jl.size(); ++i) {
      const std::string n = field(jl[i], "name", "link " + std::to_string(i)).get<std::string>();
      if (!index.emplace(n, static_cast<int>(i)).second) throw ParseError("duplicate link name '" + n + "'");
    }
    auto link_ref = [&](const json& j, const std::string& what) {
      const std::string n = j.get<std::string>();
      const auto it = index.find(n);
      if (it == index.end()) throw ParseError(what + " refers to unknown link '" + n + "'");
      return it->second;
    };

    std::vector<Link> links;
    for (std::size_t i = 0; i < jl.size(); ++i) {
      const std::string what = "link " + std::to_string(i);
      Link l;
      l.name = jl[i]["name"].get<std::string>();
      const json& p = field(jl[i], "parent", what);
      l.parent = p.is_null() ? -1 : link_ref(p, what);
      if (jl[i].contains("offset")) {
        const json& off = jl[i]["offset"];
        const Vec3 t = json_vec3(field(off, "t", what + " offset"), what + " offset.t");
        const json& q = field(off, "q", what + " offset");
        if (!q.is_array() || q.size() != 4) throw ParseError(what + " offset.q: expected 4 numbers (w, x, y, z)");
        try {
          l.offset = RigidTransform(t, Eigen::Quaterniond(q[0].get<double>(), q[1].get<double>(), q[2].get<double>(),
                                                          q[3].get<double>()));
        } catch (const InvalidParameter&) {
          throw ParseError(what + " offset.q is zero");
        }
      }
      links.push_back(l);
    }

    std::vector<Joint> joints;
    const json& jj = field(doc, "joints", "gripper");
    for (std::size_t i = 0; i < jj.size(); ++i) {
      const std::string what = "joint " + std::to_string(i);
      Joint j;
      j.link = link_ref(field(jj[i], "link", what), what);
      j.axis = json_vec3(field(jj[i], "axis", what), what + " axis");
      const json& lim = field(jj[i], "limits", what);
      if (!lim.is_array() || lim.size() != 2) throw ParseError(what + " limits: expected [lo, hi]");
      j.lower = lim[0].get<double>();
      j.upper = lim[1].get<double>();
      joints.push_back(j);
    }

    std::vector<ContactPoint> contacts;
    const json& jc = field(doc, "contacts", "gripper");
    for (std::size_t i = 0; i < jc.size(); ++i) {
      const std::string what = "contact " + std::to_string(i);
      contacts.push_back({link_ref(field(jc[i], "link", what), what), json_vec3(field(jc[i], "offset", what), what)});
    }
    const std::string model_name = doc.contains("name") ? doc["name"].get<std::string>() : name;
    return GripperModel(model_name, std::move(links), std::move(joints), std::move(contacts));
  } catch (const json::exception& e) {
    throw ParseError(std::string("malformed gripper file: ") + e.what());
  }
}

std::string gripper_to_json(const GripperModel& model) {
  json doc;
  doc["name"] = model.name();
  json links = json::array();
  for (const Link& l : model.links()) {
    const auto& q = l.offset.rotation();
    links.push_back({{"name", l.name},
                     {"parent", l.parent < 0 ? json(nullptr) : json(model.links()[l.parent].name)},
                     {"offset", {{"t", vec_json(l.offset.translation())}, {"q", {q.w(), q.x(), q.y(), q.z()}}}}});
  }
  json joints = json::array();
  for (const Joint& j : model.joints()) {
    joints.push_back({{"link", model.links()[j.link].name}, {"axis", vec_json(j.axis)}, {"limits", {j.lower, j.upper}}});
  }
  json contacts = json::array();
  for (const ContactPoint& c : model.contacts()) {
    contacts.push_back({{"link", model.links()[c.link].name}, {"offset", vec_json(c.offset)}});
  }
  doc["links"] = links;
  doc["joints"] = joints;
  doc["contacts"] = contacts;
  return doc.dump(2) + "\n";
}

void save_gripper(const GripperModel& model, const std::filesystem::path& path) {
  detail::write_file(path, gripper_to_json(model));
}

}  // namespace graspfield

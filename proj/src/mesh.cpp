#include "unportrait/mesh.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <istream>
#include <map>
#include <sstream>

namespace unportrait {

const char* landmark_name(int id) {
  static const char* names[kLandmarkCount] = {
      "eye_inner_right", "eye_inner_left", "eye_outer_right", "eye_outer_left", "nose_tip",
      "ear_tip_right",   "ear_tip_left",   "mouth_right",     "mouth_left",     "chin"};
  if (id < 0 || id >= kLandmarkCount) throw std::invalid_argument("landmark_name: bad id");
  return names[id];
}

void TriMesh::validate() const {
  const int n = int(vertices.size());
  if (albedo.size() != vertices.size() || normals.size() != vertices.size())
    throw std::invalid_argument("TriMesh: attribute counts must match vertex count");
  if (triangle_part.size() != triangles.size())
    throw std::invalid_argument("TriMesh: part table must match triangle count");
  for (const auto& t : triangles)
    for (int k = 0; k < 3; ++k)
      if (t[k] < 0 || t[k] >= n) throw std::invalid_argument("TriMesh: triangle index out of range");
  for (int l = 0; l < kLandmarkCount; ++l)
    if (landmarks[size_t(l)] < 0 || landmarks[size_t(l)] >= n)
      throw std::invalid_argument(std::string("TriMesh: landmark not assigned: ") + landmark_name(l));
  if (landmarks[kEyeInnerRight] == landmarks[kEyeInnerLeft])
    throw std::invalid_argument("TriMesh: eye inner corners must be distinct vertices");
}

void HeadParams::validate() const {
  auto in = [](double v, double lo, double hi) { return v >= lo && v <= hi; };
  if (!in(radius_x, 7.0, 9.5) || !in(radius_y, 9.5, 12.5) || !in(radius_z, 8.5, 10.5))
    throw std::invalid_argument("HeadParams: skull radii out of range");
  if (!in(nose_protrusion, 0.0, 4.0))
    throw std::invalid_argument("HeadParams: nose protrusion out of [0, 4]");
  if (!in(ear_offset, radius_x + 0.8, 12.0))
    throw std::invalid_argument("HeadParams: ear offset out of range");
  if (!in(ear_size, 1.0, 3.0)) throw std::invalid_argument("HeadParams: ear size out of [1, 3]");
  if (stacks < 12 || slices < 16 || slices % 2 != 0)
    throw std::invalid_argument("HeadParams: tessellation too coarse or odd slice count");
}

namespace {

struct Builder {
  const HeadParams& p;
  Eigen::Vector3d center;
  TriMesh mesh;

  // Surface z for a given (x, y), front half.
  double surf_z(double x, double y) const {
    const double q = 1.0 - (x / p.radius_x) * (x / p.radius_x) -
                     ((y - center.y()) / p.radius_y) * ((y - center.y()) / p.radius_y);
    return center.z() + p.radius_z * std::sqrt(std::max(0.0, q));
  }

  int grid_index(int i, int j) const {  // i in [1, stacks-1], j in [0, slices)
    return 1 + (i - 1) * p.slices + ((j % p.slices) + p.slices) % p.slices;
  }

  int mirror_index(int idx) const {  // grid vertex reflected through x = 0
    if (idx == 0 || idx == 1 + (p.stacks - 1) * p.slices) return idx;  // poles
    const int i = (idx - 1) / p.slices + 1;
    const int j = (idx - 1) % p.slices;
    return grid_index(i, (p.slices - j) % p.slices);
  }

  int nearest_vertex(const Eigen::Vector3d& target, int vertex_limit) const {
    int best = -1;
    double best_d = 1e30;
    for (int i = 0; i < vertex_limit; ++i) {
      const double d = (mesh.vertices[size_t(i)] - target).squaredNorm();
      if (d < best_d) {
        best_d = d;
        best = i;
      }
    }
    return best;
  }
};

}  // namespace

TriMesh parametric_head(const HeadParams& params) {
  params.validate();
  const double hs = kEyeInnerHalfSepCm;
  const double cy = -2.0;
  const double ex = hs / params.radius_x, ey = (0.0 - cy) / params.radius_y;
  const double cz = -params.radius_z * std::sqrt(1.0 - ex * ex - ey * ey);

  Builder b{params, {0.0, cy, cz}, {}};
  TriMesh& m = b.mesh;

  // Closed lat-long ellipsoid; mirror pairs share column j <-> slices - j.
  m.vertices.push_back(b.center + Eigen::Vector3d(0.0, params.radius_y, 0.0));
  for (int i = 1; i < params.stacks; ++i) {
    const double th = M_PI * i / params.stacks;
    for (int j = 0; j < params.slices; ++j) {
      const double ph = 2.0 * M_PI * j / params.slices;
      m.vertices.push_back(b.center + Eigen::Vector3d(params.radius_x * std::sin(th) * std::sin(ph),
                                                      params.radius_y * std::cos(th),
                                                      params.radius_z * std::sin(th) * std::cos(ph)));
    }
  }
  m.vertices.push_back(b.center + Eigen::Vector3d(0.0, -params.radius_y, 0.0));
  const int bottom = int(m.vertices.size()) - 1;
  const int skull_vertex_count = int(m.vertices.size());

  for (int j = 0; j < params.slices; ++j) {
    m.triangles.emplace_back(0, b.grid_index(1, j), b.grid_index(1, j + 1));
    m.triangles.emplace_back(bottom, b.grid_index(params.stacks - 1, j + 1),
                             b.grid_index(params.stacks - 1, j));
  }
  for (int i = 1; i + 1 < params.stacks; ++i)
    for (int j = 0; j < params.slices; ++j) {
      m.triangles.emplace_back(b.grid_index(i, j), b.grid_index(i + 1, j), b.grid_index(i + 1, j + 1));
      m.triangles.emplace_back(b.grid_index(i, j), b.grid_index(i + 1, j + 1), b.grid_index(i, j + 1));
    }
  for (auto& t : m.triangles) {  // outward winding
    const Eigen::Vector3d a = m.vertices[size_t(t[0])];
    const Eigen::Vector3d n =
        (m.vertices[size_t(t[1])] - a).cross(m.vertices[size_t(t[2])] - a);
    const Eigen::Vector3d outward = (a + m.vertices[size_t(t[1])] + m.vertices[size_t(t[2])]) / 3.0 -
                                    b.center;
    if (n.dot(outward) < 0.0) std::swap(t[1], t[2]);
  }

  // Landmarks snap the nearest grid vertex onto an exact surface position;
  // right/left pairs use mirrored grid vertices so symmetry stays exact.
  const double rx = params.radius_x, ry = params.radius_y;
  auto snap_pair = [&](int right_id, int left_id, const Eigen::Vector3d& right_pos) {
    const int r = b.nearest_vertex(right_pos, skull_vertex_count);
    const int l = b.mirror_index(r);
    m.vertices[size_t(r)] = right_pos;
    m.vertices[size_t(l)] = Eigen::Vector3d(-right_pos.x(), right_pos.y(), right_pos.z());
    m.landmarks[size_t(right_id)] = r;
    m.landmarks[size_t(left_id)] = l;
  };
  // Eye inners sit exactly on the z = 0 plane through the origin: the shot
  // distance is measured to that plane, which is what keeps the projected
  // eye separation constant under the coupled focal law.
  snap_pair(kEyeInnerRight, kEyeInnerLeft, {-hs, 0.0, 0.0});
  const double outer_x = 0.8333 * rx;
  snap_pair(kEyeOuterRight, kEyeOuterLeft, {-outer_x, 0.0, b.surf_z(outer_x, 0.0)});
  const double mouth_x = 2.8 * rx / 8.4, mouth_y = -6.5 * ry / 11.0;
  snap_pair(kMouthRight, kMouthLeft, {-mouth_x, mouth_y, b.surf_z(mouth_x, mouth_y)});

  const double nose_y = -3.4 * ry / 11.0;
  const Eigen::Vector3d nose_base(0.0, nose_y, b.surf_z(0.0, nose_y));
  {
    int v = b.nearest_vertex(nose_base, skull_vertex_count);
    m.vertices[size_t(v)] = nose_base;
    m.landmarks[kNoseTip] = v;
  }
  const double chin_y = cy - 0.8636 * ry;
  {
    const Eigen::Vector3d chin(0.0, chin_y, b.surf_z(0.0, chin_y));
    int v = b.nearest_vertex(chin, skull_vertex_count);
    m.vertices[size_t(v)] = chin;
    m.landmarks[kChin] = v;
  }

  // Nose bump: Gaussian pull along +z with its tail subtracted so it reaches
  // zero exactly at the clip radius. The peak is exactly the protrusion at the
  // tip vertex, and the wide sigma keeps the apex triangles shallow enough
  // that the tip survives the renderer's relative depth test up close.
  const double bump_floor = std::exp(-(3.5 / 2.0) * (3.5 / 2.0));
  for (int i = 0; i < skull_vertex_count; ++i) {
    const double d = (m.vertices[size_t(i)] - nose_base).norm();
    if (d >= 3.5) continue;
    const double g = (std::exp(-(d / 2.0) * (d / 2.0)) - bump_floor) / (1.0 - bump_floor);
    m.vertices[size_t(i)].z() += params.nose_protrusion * g;
  }

  // The eye-inner corners must sit exactly on the eye plane; the bump clip
  // radius keeps them (and all other landmarks) untouched.
  m.triangle_part.assign(m.triangles.size(), kPartFace);

  // Ear flaps: a cone fan from an embedded ring on the skull out to the tip.
  // The ring plane is tilted from the surface normal toward the viewer so the
  // flap presents real frontal area instead of an edge-on sliver.
  const double th_e = 95.0 * M_PI / 180.0;
  const double ph_e = -1.97;  // subject's right side (negative x)
  const Eigen::Vector3d attach =
      b.center + Eigen::Vector3d(rx * std::sin(th_e) * std::sin(ph_e), ry * std::cos(th_e),
                                 params.radius_z * std::sin(th_e) * std::cos(ph_e));
  const Eigen::Vector3d n_att =
      (Eigen::Vector3d((attach.x() - b.center.x()) / (rx * rx),
                       (attach.y() - b.center.y()) / (ry * ry),
                       (attach.z() - b.center.z()) / (params.radius_z * params.radius_z))
           .normalized() +
       0.9 * Eigen::Vector3d::UnitZ())
          .normalized();
  const Eigen::Vector3d t1 = n_att.cross(Eigen::Vector3d::UnitY()).normalized();
  const Eigen::Vector3d t2 = n_att.cross(t1);
  const int kRing = 8;
  for (int side = 0; side < 2; ++side) {  // 0: right (-x), 1: left (+x)
    const double sx = side == 0 ? 1.0 : -1.0;
    const int ring_base = int(m.vertices.size());
    for (int i = 0; i < kRing; ++i) {
      const double a = 2.0 * M_PI * i / kRing + 0.4;
      Eigen::Vector3d v = attach + params.ear_size * (std::cos(a) * t1 + std::sin(a) * t2) -
                          0.35 * n_att;
      v.x() *= sx;
      m.vertices.push_back(v);
    }
    Eigen::Vector3d tip(-params.ear_offset * sx, attach.y() + 0.6, attach.z() - 1.2);
    const int tip_idx = int(m.vertices.size());
    m.vertices.push_back(tip);
    for (int i = 0; i < kRing; ++i) {
      if (side == 0)
        m.triangles.emplace_back(ring_base + i, ring_base + (i + 1) % kRing, tip_idx);
      else
        m.triangles.emplace_back(ring_base + (i + 1) % kRing, ring_base + i, tip_idx);
      m.triangle_part.push_back(side == 0 ? kPartEarRight : kPartEarLeft);
    }
    m.landmarks[size_t(side == 0 ? kEarTipRight : kEarTipLeft)] = tip_idx;
  }
  for (int i = skull_vertex_count; i < int(m.vertices.size()); ++i)
    if (std::abs(m.vertices[size_t(i)].x()) > params.ear_offset)
      throw std::logic_error("parametric_head: ear ring wider than the tip offset");

  // Smooth low-frequency skin albedo; ears a touch darker.
  Rng rng(derive_seed(params.look_seed, 11));
  const double p1 = rng.uniform(0.0, 2.0 * M_PI), p2 = rng.uniform(0.0, 2.0 * M_PI);
  const double p3 = rng.uniform(0.0, 2.0 * M_PI);
  const Eigen::Vector3d base(0.80, 0.60, 0.50);
  m.albedo.resize(m.vertices.size());
  for (size_t i = 0; i < m.vertices.size(); ++i) {
    const Eigen::Vector3d& v = m.vertices[i];
    const double f = 0.88 + 0.09 * std::sin(0.45 * v.y() + p1) * std::cos(0.38 * v.x() + p2) +
                     0.03 * std::sin(0.3 * v.z() + p3);
    Eigen::Vector3d a = base * f;
    const double mouth_d = (v - Eigen::Vector3d(0.0, mouth_y, b.surf_z(0.0, mouth_y))).norm();
    a.x() += 0.07 * std::exp(-(mouth_d / 2.5) * (mouth_d / 2.5));
    m.albedo[i] = a.cwiseMax(0.0).cwiseMin(1.0);
  }
  for (int i = skull_vertex_count; i < int(m.vertices.size()); ++i) m.albedo[size_t(i)] *= 0.97;

  // Area-weighted smooth vertex normals.
  m.normals.assign(m.vertices.size(), Eigen::Vector3d::Zero());
  for (const auto& t : m.triangles) {
    const Eigen::Vector3d a = m.vertices[size_t(t[0])];
    const Eigen::Vector3d fn =
        (m.vertices[size_t(t[1])] - a).cross(m.vertices[size_t(t[2])] - a);
    for (int k = 0; k < 3; ++k) m.normals[size_t(t[k])] += fn;
  }
  for (auto& n : m.normals) {
    const double len = n.norm();
    n = len > 0.0 ? Eigen::Vector3d(n / len) : Eigen::Vector3d::UnitZ();
  }

  for (int a = 0; a < kLandmarkCount; ++a)
    for (int bb = a + 1; bb < kLandmarkCount; ++bb)
      if (m.landmarks[size_t(a)] == m.landmarks[size_t(bb)])
        throw std::logic_error("parametric_head: landmark snapping collided");
  m.validate();
  return m;
}

HeadParams head_params_from_seed(uint64_t seed) {
  Rng rng(derive_seed(seed, 12));
  HeadParams p;
  p.radius_x = 8.4 + rng.uniform(-0.7, 0.7);
  p.radius_y = 11.0 + rng.uniform(-1.0, 1.0);
  p.radius_z = 9.5 + rng.uniform(-0.7, 0.7);
  p.nose_protrusion = 2.5 + rng.uniform(-1.0, 1.0);
  // ear_offset must clear radius_x + 0.8; wide skulls push the floor above
  // the nominal draw range, so clamp rather than reject the seed.
  p.ear_offset = std::max(9.3 + rng.uniform(-0.4, 0.6), p.radius_x + 0.8);
  p.ear_size = 2.0 + rng.uniform(-0.5, 0.5);
  p.look_seed = seed;
  p.validate();
  return p;
}

namespace {

[[noreturn]] void obj_fail(int line, const std::string& what) {
  throw std::runtime_error("load_obj: line " + std::to_string(line) + ": " + what);
}

}  // namespace

TriMesh load_obj(std::istream& in, const std::array<int, kLandmarkCount>& landmark_vertices) {
  TriMesh m;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ls(line);
    std::string key;
    if (!(ls >> key) || key[0] == '#') continue;
    if (key == "v") {
      double x, y, z;
      if (!(ls >> x >> y >> z)) obj_fail(line_no, "malformed vertex");
      m.vertices.emplace_back(x, y, z);
    } else if (key == "vt" || key == "vn") {
      double a, bb, cc;
      const bool ok = key == "vt" ? bool(ls >> a >> bb) : bool(ls >> a >> bb >> cc);
      if (!ok) obj_fail(line_no, "malformed " + key + " directive");
    } else if (key == "f") {
      std::vector<int> idx;
      std::string item;
      while (ls >> item) {
        const std::string head = item.substr(0, item.find('/'));
        size_t used = 0;
        long v = 0;
        try {
          v = std::stol(head, &used);
        } catch (const std::exception&) {
          obj_fail(line_no, "malformed face index '" + item + "'");
        }
        if (used != head.size() || v == 0) obj_fail(line_no, "malformed face index '" + item + "'");
        const long resolved = v > 0 ? v - 1 : long(m.vertices.size()) + v;
        if (resolved < 0 || resolved >= long(m.vertices.size()))
          obj_fail(line_no, "face index out of range");
        idx.push_back(int(resolved));
      }
      if (idx.size() < 3) obj_fail(line_no, "face needs at least 3 vertices");
      for (size_t i = 0; i < idx.size(); ++i)
        for (size_t j = i + 1; j < idx.size(); ++j)
          if (idx[i] == idx[j]) obj_fail(line_no, "face repeats a vertex index");
      for (size_t i = 1; i + 1 < idx.size(); ++i) {
        m.triangles.emplace_back(idx[0], idx[i], idx[i + 1]);
        m.triangle_part.push_back(kPartFace);
      }
    }
    // Other directives (o, g, s, usemtl, ...) are ignored.
  }

  m.albedo.assign(m.vertices.size(), Eigen::Vector3d(0.75, 0.70, 0.66));
  m.normals.assign(m.vertices.size(), Eigen::Vector3d::Zero());
  for (const auto& t : m.triangles) {
    const Eigen::Vector3d a = m.vertices[size_t(t[0])];
    const Eigen::Vector3d fn =
        (m.vertices[size_t(t[1])] - a).cross(m.vertices[size_t(t[2])] - a);
    for (int k = 0; k < 3; ++k) m.normals[size_t(t[k])] += fn;
  }
  for (auto& n : m.normals) {
    const double len = n.norm();
    n = len > 0.0 ? Eigen::Vector3d(n / len) : Eigen::Vector3d::UnitZ();
  }
  m.landmarks = landmark_vertices;
  m.validate();
  return m;
}

}  // namespace unportrait

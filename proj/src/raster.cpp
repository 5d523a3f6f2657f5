#include "unportrait/raster.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace unportrait {

namespace {

const Eigen::Vector3d kLightDir = Eigen::Vector3d(0.25, 0.35, 0.9).normalized();
constexpr double kAmbient = 0.35;
constexpr double kDiffuse = 0.65;

double edge_fn(const Eigen::Vector2d& a, const Eigen::Vector2d& b, const Eigen::Vector2d& p) {
  return (b.x() - a.x()) * (p.y() - a.y()) - (b.y() - a.y()) * (p.x() - a.x());
}

// Boundary ownership for exact-zero edge values.
bool top_left(const Eigen::Vector2d& a, const Eigen::Vector2d& b) {
  const double dy = b.y() - a.y();
  return dy < 0.0 || (dy == 0.0 && b.x() - a.x() > 0.0);
}

}  // namespace

Eigen::Vector3d to_camera(const Eigen::Vector3d& p_head, const Pose& pose, double distance_cm) {
  const Eigen::Vector3d q = pose.rotation() * p_head;
  return {q.x(), -q.y(), distance_cm - q.z()};
}

RenderOutput rasterize(const TriMesh& mesh, const ShotParams& shot, const CameraConfig& cam) {
  mesh.validate();
  shot.validate();
  cam.validate();
  if (shot.distance_cm <= kNearPlaneCm)
    throw std::invalid_argument("rasterize: shot distance must exceed the near plane");

  const int w = cam.image_width, h = cam.image_height;
  RenderOutput out;
  out.shot = shot;
  out.cam = cam;
  out.color.reset(w, h, true);
  out.color.mask.setZero();
  for (int c = 0; c < 4; ++c) out.color.rgba[size_t(c)].setZero();
  out.depth = Plane::Constant(h, w, std::numeric_limits<float>::infinity());
  out.tri = PlaneI32::Constant(h, w, -1);
  out.bary0 = Plane::Zero(h, w);
  out.bary1 = Plane::Zero(h, w);

  const size_t nv = mesh.vertices.size();
  std::vector<Eigen::Vector3d> cam_pos(nv);
  std::vector<Eigen::Vector3d> cam_nrm(nv);
  std::vector<Eigen::Vector2d> px(nv);
  std::vector<bool> projectable(nv, false);
  const Eigen::Matrix3d rot = shot.pose.rotation();
  double max_z = -std::numeric_limits<double>::infinity();
  for (size_t i = 0; i < nv; ++i) {
    cam_pos[i] = to_camera(mesh.vertices[i], shot.pose, shot.distance_cm);
    const Eigen::Vector3d rn = rot * mesh.normals[i];
    cam_nrm[i] = {rn.x(), -rn.y(), -rn.z()};
    max_z = std::max(max_z, cam_pos[i].z());
    if (cam_pos[i].z() > 0.0) {
      px[i] = project(cam_pos[i], cam);
      projectable[i] = true;
    }
  }
  if (max_z <= 0.0) {
    out.all_behind = true;
    return out;
  }

  for (int ti = 0; ti < int(mesh.triangles.size()); ++ti) {
    int idx[3] = {mesh.triangles[size_t(ti)][0], mesh.triangles[size_t(ti)][1],
                  mesh.triangles[size_t(ti)][2]};
    if (cam_pos[size_t(idx[0])].z() < kNearPlaneCm || cam_pos[size_t(idx[1])].z() < kNearPlaneCm ||
        cam_pos[size_t(idx[2])].z() < kNearPlaneCm)
      continue;
    double area = edge_fn(px[size_t(idx[0])], px[size_t(idx[1])], px[size_t(idx[2])]);
    if (area == 0.0) continue;
    bool flipped = false;
    if (area < 0.0) {
      std::swap(idx[1], idx[2]);
      area = -area;
      flipped = true;
    }
    const Eigen::Vector2d a = px[size_t(idx[0])], b = px[size_t(idx[1])], c = px[size_t(idx[2])];
    const int x0 = std::max(0, int(std::floor(std::min({a.x(), b.x(), c.x()}) - 0.5)));
    const int x1 = std::min(w - 1, int(std::ceil(std::max({a.x(), b.x(), c.x()}))));
    const int y0 = std::max(0, int(std::floor(std::min({a.y(), b.y(), c.y()}) - 0.5)));
    const int y1 = std::min(h - 1, int(std::ceil(std::max({a.y(), b.y(), c.y()}))));
    const bool tl0 = top_left(b, c), tl1 = top_left(c, a), tl2 = top_left(a, b);
    const double z0 = cam_pos[size_t(idx[0])].z(), z1 = cam_pos[size_t(idx[1])].z(),
                 z2 = cam_pos[size_t(idx[2])].z();

    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        const Eigen::Vector2d p(x + 0.5, y + 0.5);
        const double e0 = edge_fn(b, c, p);
        const double e1 = edge_fn(c, a, p);
        const double e2 = edge_fn(a, b, p);
        const bool in0 = e0 > 0.0 || (e0 == 0.0 && tl0);
        const bool in1 = e1 > 0.0 || (e1 == 0.0 && tl1);
        const bool in2 = e2 > 0.0 || (e2 == 0.0 && tl2);
        if (!in0 || !in1 || !in2) continue;
        const double l0 = e0 / area, l1 = e1 / area, l2 = e2 / area;
        const double inv_z = l0 / z0 + l1 / z1 + l2 / z2;
        const double z = 1.0 / inv_z;
        if (!(float(z) < out.depth(y, x))) continue;
        const double w0 = (l0 / z0) / inv_z, w1 = (l1 / z1) / inv_z, w2 = (l2 / z2) / inv_z;

        const Eigen::Vector3d n = (w0 * cam_nrm[size_t(idx[0])] + w1 * cam_nrm[size_t(idx[1])] +
                                   w2 * cam_nrm[size_t(idx[2])])
                                      .normalized();
        const Eigen::Vector3d alb = w0 * mesh.albedo[size_t(idx[0])] +
                                    w1 * mesh.albedo[size_t(idx[1])] +
                                    w2 * mesh.albedo[size_t(idx[2])];
        const double intensity = kAmbient + kDiffuse * std::abs(n.dot(kLightDir));
        for (int ch = 0; ch < 3; ++ch)
          out.color.rgba[size_t(ch)](y, x) = float(std::clamp(alb[ch] * intensity, 0.0, 1.0));
        out.color.rgba[3](y, x) = 1.0f;
        out.color.mask(y, x) = 1.0f;
        out.depth(y, x) = float(z);
        out.tri(y, x) = ti;
        // Barycentrics are stored against the mesh's vertex order, not the
        // possibly flipped raster order.
        out.bary0(y, x) = float(w0);
        out.bary1(y, x) = float(flipped ? w2 : w1);
      }
    }
  }

  for (int l = 0; l < kLandmarkCount; ++l) {
    const size_t vi = size_t(mesh.landmarks[size_t(l)]);
    LandmarkPx& lm = out.landmarks[size_t(l)];
    lm.depth = cam_pos[vi].z();
    if (!projectable[vi] || cam_pos[vi].z() < kNearPlaneCm) continue;
    lm.px = px[vi];
    const int ix = int(std::floor(lm.px.x()));
    const int iy = int(std::floor(lm.px.y()));
    if (ix < 0 || ix >= w || iy < 0 || iy >= h) continue;
    // An empty pixel means nothing renders in front of the landmark; for a
    // front-facing landmark that happens when it sits on the silhouette and
    // counts as unoccluded. Back-facing landmarks never qualify that way.
    const bool front_facing = cam_nrm[vi].dot(cam_pos[vi]) < 0.0;
    lm.visible = (out.tri(iy, ix) < 0 && front_facing) ||
                 std::abs(lm.depth - double(out.depth(iy, ix))) <= 0.005 * lm.depth;
  }
  return out;
}

}  // namespace unportrait

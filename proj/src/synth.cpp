#include "unportrait/synth.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace unportrait {

namespace {

// Principal point that puts `eye_cam` exactly on the anchor pixel.
Eigen::Vector2d anchored_pp(const Eigen::Vector3d& eye_cam, double focal_mm, int width,
                            int height) {
  const double k = focal_mm / kSensorWidthMm * double(width);
  const Eigen::Vector2d anchor(kAnchorX512 * double(width) / 512.0,
                               kAnchorY512 * double(height) / 512.0);
  return anchor - k * Eigen::Vector2d(eye_cam.x() / eye_cam.z(), eye_cam.y() / eye_cam.z());
}

}  // namespace

PairResult render_pair(const TriMesh& mesh, double near_cm, const Pose& pose,
                       const CameraConfig& base_cam) {
  mesh.validate();
  if (base_cam.image_width < 8 || base_cam.image_height < 8)
    throw std::invalid_argument("render_pair: image size below 8");
  if (!(near_cm >= kDistanceBinEdgesCm[0] && near_cm <= kCanonicalDistanceCm))
    throw std::invalid_argument("render_pair: near distance outside [23, 160] cm");

  PairResult res;
  res.sample.meta.distance_cm = near_cm;
  res.sample.meta.pose = pose;

  const Eigen::Vector3d eye = mesh.vertices[size_t(mesh.landmarks[kEyeInnerRight])];
  const ShotParams shots[2] = {make_shot(near_cm, pose), make_shot(kCanonicalDistanceCm, pose)};
  const char* view_name[2] = {"close view", "canonical view"};
  RenderOutput* outs[2] = {&res.sample.near_view, &res.sample.far_view};

  for (int v = 0; v < 2; ++v) {
    const Eigen::Vector3d eye_cam = to_camera(eye, pose, shots[v].distance_cm);
    if (eye_cam.z() <= kNearPlaneCm) {
      res.reject_reason = std::string("right eye inner behind the near plane in ") + view_name[v];
      return res;
    }
    CameraConfig cam = base_cam;
    cam.focal_mm = shots[v].focal_mm;
    cam.principal_point =
        anchored_pp(eye_cam, shots[v].focal_mm, cam.image_width, cam.image_height);
    if (cam.principal_point.x() < 0.0 || cam.principal_point.x() > cam.image_width ||
        cam.principal_point.y() < 0.0 || cam.principal_point.y() > cam.image_height) {
      res.reject_reason =
          std::string("anchoring pushes the principal point off frame in ") + view_name[v];
      return res;
    }
    *outs[v] = rasterize(mesh, shots[v], cam);
    if (!outs[v]->landmarks[kEyeInnerRight].visible) {
      res.reject_reason = std::string("right eye inner occluded in ") + view_name[v];
      return res;
    }
  }

  res.sample.gt_flow = ground_truth_flow(res.sample.near_view, res.sample.far_view, mesh);
  res.ok = true;
  return res;
}

FlowMap ground_truth_flow(const RenderOutput& near_view, const RenderOutput& far_view,
                          const TriMesh& mesh) {
  const Pose &pa = near_view.shot.pose, &pb = far_view.shot.pose;
  if (pa.pitch_deg != pb.pitch_deg || pa.yaw_deg != pb.yaw_deg || pa.roll_deg != pb.roll_deg)
    throw std::invalid_argument("ground_truth_flow: views have different poses");

  const int w = near_view.cam.image_width, h = near_view.cam.image_height;
  FlowMap flow(w, h);
  flow.valid.setConstant(kFlowInvalid);

  const int fw = far_view.cam.image_width, fh = far_view.cam.image_height;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const int ti = near_view.tri(y, x);
      if (ti < 0) continue;
      if (ti >= int(mesh.triangles.size()))
        throw std::invalid_argument("ground_truth_flow: view was rendered from another mesh");
      const auto& t = mesh.triangles[size_t(ti)];
      const double b0 = near_view.bary0(y, x), b1 = near_view.bary1(y, x);
      const Eigen::Vector3d surf = b0 * mesh.vertices[size_t(t[0])] +
                                   b1 * mesh.vertices[size_t(t[1])] +
                                   (1.0 - b0 - b1) * mesh.vertices[size_t(t[2])];
      const Eigen::Vector3d q = to_camera(surf, pb, far_view.shot.distance_cm);
      if (q.z() <= 0.0) continue;  // unprojectable, leave invalid
      const Eigen::Vector2d uv = project(q, far_view.cam);
      flow.dx(y, x) = float(uv.x() - (double(x) + 0.5));
      flow.dy(y, x) = float(uv.y() - (double(y) + 0.5));

      const int fx = int(std::floor(uv.x())), fy = int(std::floor(uv.y()));
      bool seen = fx >= 0 && fx < fw && fy >= 0 && fy < fh;
      if (seen) seen = std::abs(q.z() - double(far_view.depth(fy, fx))) <= 0.005 * q.z();
      flow.valid(y, x) = seen ? kFlowValid : kFlowValidOccluded;
    }
  }
  return flow;
}

std::vector<double> log_uniform_grid(int n, double lo, double hi) {
  if (n < 1) throw std::invalid_argument("log_uniform_grid: need at least one point");
  if (!(lo > 0.0) || !(hi >= lo)) throw std::invalid_argument("log_uniform_grid: bad range");
  std::vector<double> grid(size_t(n), lo);
  if (n == 1) return grid;
  const double la = std::log(lo), lb = std::log(hi);
  for (int i = 1; i + 1 < n; ++i)
    grid[size_t(i)] = std::exp(la + (lb - la) * double(i) / double(n - 1));
  grid.back() = hi;
  return grid;
}

std::array<int, kLandmarkCount> read_landmark_sidecar(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_landmark_sidecar: cannot open " + path.string());
  std::array<int, kLandmarkCount> out;
  out.fill(-1);
  std::string line;
  while (std::getline(in, line)) {
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    std::istringstream ls(line);
    std::string name;
    if (!(ls >> name)) continue;
    long index = -1;
    if (!(ls >> index))
      throw std::runtime_error("read_landmark_sidecar: missing index for " + name);
    int id = -1;
    for (int i = 0; i < kLandmarkCount; ++i)
      if (name == landmark_name(i)) id = i;
    if (id < 0) throw std::runtime_error("read_landmark_sidecar: unknown landmark " + name);
    out[size_t(id)] = int(index);
  }
  for (int i = 0; i < kLandmarkCount; ++i)
    if (out[size_t(i)] < 0)
      throw std::runtime_error(std::string("read_landmark_sidecar: missing ") + landmark_name(i));
  return out;
}

void DatasetSpec::validate() const {
  if (subject_count < 0) throw std::invalid_argument("DatasetSpec: negative subject count");
  if (subject_count + int(mesh_files.size()) < 1)
    throw std::invalid_argument("DatasetSpec: no subjects");
  if (poses_per_subject < 1) throw std::invalid_argument("DatasetSpec: need at least one pose");
  if (distance_count < 1) throw std::invalid_argument("DatasetSpec: need at least one distance");
  if (!(min_distance_cm >= kDistanceBinEdgesCm[0] && max_distance_cm <= kCanonicalDistanceCm &&
        min_distance_cm <= max_distance_cm))
    throw std::invalid_argument("DatasetSpec: distance range outside [23, 160] cm");
  if (!(pose_range_deg >= 0.0 && pose_range_deg <= 80.0))
    throw std::invalid_argument("DatasetSpec: pose range outside [0, 80] degrees");
  if (image_size < 32) throw std::invalid_argument("DatasetSpec: image size below 32");
}

KeyValueFile generate_dataset(const DatasetSpec& spec, const std::filesystem::path& out_dir) {
  spec.validate();
  std::filesystem::create_directories(out_dir);

  std::vector<TriMesh> subjects;
  for (int s = 0; s < spec.subject_count; ++s) {
    const uint64_t params_seed = derive_seed(spec.master_seed, 0x100000000ull + uint64_t(s));
    subjects.push_back(parametric_head(head_params_from_seed(params_seed)));
  }
  for (const auto& file : spec.mesh_files) {
    std::ifstream in(file);
    if (!in) throw std::runtime_error("generate_dataset: cannot open " + file.string());
    const auto landmarks = read_landmark_sidecar(file.string() + ".landmarks");
    subjects.push_back(load_obj(in, landmarks));
  }

  const std::vector<double> grid =
      log_uniform_grid(spec.distance_count, spec.min_distance_cm, spec.max_distance_cm);

  CameraConfig base_cam;
  base_cam.image_width = spec.image_size;
  base_cam.image_height = spec.image_size;

  KeyValueFile manifest;
  manifest.kind = "dataset";
  for (int s = 0; s < int(subjects.size()); ++s) {
    for (int p = 0; p < spec.poses_per_subject; ++p) {
      const uint64_t pose_seed =
          derive_seed(spec.master_seed, 0x200000000ull + uint64_t(s) * 0x10000ull + uint64_t(p));
      Rng rng(pose_seed);
      Pose pose;
      pose.pitch_deg = rng.uniform(-spec.pose_range_deg, spec.pose_range_deg);
      pose.yaw_deg = rng.uniform(-spec.pose_range_deg, spec.pose_range_deg);
      pose.roll_deg = rng.uniform(-spec.pose_range_deg, spec.pose_range_deg);

      for (int d = 0; d < spec.distance_count; ++d) {
        char id[64];
        std::snprintf(id, sizeof id, "s%d_p%d_d%d", s, p, d);
        PairResult pr = render_pair(subjects[size_t(s)], grid[size_t(d)], pose, base_cam);

        Record row;
        row.set("id", id);
        row.set_long("subject", s);
        row.set_long("pose_index", p);
        row.set_double("pitch_deg", pose.pitch_deg);
        row.set_double("yaw_deg", pose.yaw_deg);
        row.set_double("roll_deg", pose.roll_deg);
        row.set_double("distance_cm", grid[size_t(d)]);
        row.set_double("focal_mm", focal_for_distance(grid[size_t(d)]));
        const DistanceLabel label = bin_label(grid[size_t(d)]);
        row.set_long("label", label.index);
        row.set_long("clamped", label.clamped ? 1 : 0);
        row.set("seed", std::to_string(pose_seed));
        if (pr.ok) {
          pr.sample.meta.subject_id = s;
          pr.sample.meta.seed = pose_seed;
          const std::string stem = id;
          write_png(out_dir / (stem + "_near.png"), pr.sample.near_view.color);
          write_png(out_dir / (stem + "_far.png"), pr.sample.far_view.color);
          write_flow(out_dir / (stem + "_flow.flw"), pr.sample.gt_flow);
          row.set("status", "ok");
          row.set("near_png", stem + "_near.png");
          row.set("far_png", stem + "_far.png");
          row.set("flow", stem + "_flow.flw");
        } else {
          row.set("status", "rejected");
          std::string reason = pr.reject_reason;
          for (char& c : reason)
            if (c == ' ') c = '_';
          row.set("reason", reason);
        }
        manifest.records.push_back(std::move(row));
      }
    }
  }

  write_keyvalue(out_dir / "manifest.txt", manifest);
  return manifest;
}

}  // namespace unportrait

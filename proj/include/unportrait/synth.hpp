#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "unportrait/flow.hpp"
#include "unportrait/io.hpp"
#include "unportrait/raster.hpp"

namespace unportrait {

struct PairMeta {
  double distance_cm = kCanonicalDistanceCm;
  Pose pose;
  int subject_id = 0;
  uint64_t seed = 0;
};

// One close-range shot and its canonical counterpart of the same head under
// the same pose, both framed so the right-eye-inner landmark sits on the
// anchor pixel, plus the dense correction flow between them.
struct PairSample {
  RenderOutput near_view;  // at meta.distance_cm with the coupled focal
  RenderOutput far_view;   // at the canonical distance and focal
  FlowMap gt_flow;         // near -> far; validity never leaves the head mask
  PairMeta meta;
};

struct PairResult {
  bool ok = false;
  std::string reject_reason;  // empty iff ok
  PairSample sample;
};

// Renders the two views of a pair. near_cm must lie in [23, 160]. The focal
// follows focal_for_distance for the close view and is canonical for the far
// view; each view's principal point is shifted so the right-eye-inner
// landmark projects exactly onto the anchor (216, 216 at 512, scaled by the
// image size), which is what keeps the eye separation constant across
// distances. base_cam supplies the image size; its focal and principal point
// are overridden. A pair is rejected, not thrown, when the right eye inner
// is occluded (or too close to the camera) in either view.
PairResult render_pair(const TriMesh& mesh, double near_cm, const Pose& pose,
                       const CameraConfig& base_cam);

// Dense displacement from every head pixel of near_view to its location in
// far_view, recovered through the triangle id + barycentric buffers and the
// far camera. Pixels whose surface point lands outside the far frame or
// fails the far depth test (0.5% relative) are marked valid-but-occluded.
// Off-head pixels are invalid. Throws if the two views' poses differ.
FlowMap ground_truth_flow(const RenderOutput& near_view, const RenderOutput& far_view,
                          const TriMesh& mesh);

// n distances log-uniformly spaced over [lo, hi]; both endpoints exact.
std::vector<double> log_uniform_grid(int n, double lo, double hi);

// Sidecar table mapping landmark names to vertex indices, one "name index"
// pair per line, '#' comments allowed. All landmarks must be present.
std::array<int, kLandmarkCount> read_landmark_sidecar(const std::filesystem::path& path);

struct DatasetSpec {
  int subject_count = 2;     // procedurally generated heads
  std::vector<std::filesystem::path> mesh_files;  // extra subjects; each needs
                                                  // a "<file>.landmarks" sidecar
  int poses_per_subject = 10;
  int distance_count = 20;   // log-uniform grid over the distance range
  double min_distance_cm = 23.0;
  double max_distance_cm = kCanonicalDistanceCm;
  double pose_range_deg = 45.0;  // each axis drawn uniformly in +/- this
  int image_size = 256;
  uint64_t master_seed = 1;

  void validate() const;
};

// Renders subjects x poses x distances pairs into out_dir (near/far 8-bit
// images plus the flow file) and writes out_dir/manifest.txt. Every attempt
// gets a manifest row; rejected pairs carry status=rejected and a reason and
// no files. Fully deterministic in master_seed. Returns the manifest.
KeyValueFile generate_dataset(const DatasetSpec& spec, const std::filesystem::path& out_dir);

}  // namespace unportrait

#pragma once

#include "unportrait/core.hpp"

#include <Eigen/Core>
#include <vector>

namespace unportrait {

// Triangulation of a 2D integer point set (pixel coordinates). Triangles are
// counter-clockwise and tile the convex hull of the input exactly; every input
// point is a vertex. Built by a lexicographic sweep, then Lawson flips with
// exact int64 orientation/incircle predicates, so it is robust on lattice
// points (cocircular squares are everywhere).
struct Triangulation {
  std::vector<Eigen::Vector2i> points;     // deduplicated, sorted
  std::vector<Eigen::Vector3i> triangles;  // CCW indices into points
};

// Throws std::invalid_argument when fewer than 3 non-collinear points remain
// after deduplication. Coordinates must fit in +-(1<<13) so the incircle
// determinant stays exact in 64-bit.
Triangulation triangulate_points(std::vector<Eigen::Vector2i> pts);

// Exact orientation predicate: >0 when c lies left of a->b.
long long orient2d(const Eigen::Vector2i& a, const Eigen::Vector2i& b, const Eigen::Vector2i& c);

}  // namespace unportrait

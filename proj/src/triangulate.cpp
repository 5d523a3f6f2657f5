#include "unportrait/triangulate.hpp"

#include <algorithm>
#include <deque>
#include <unordered_map>

namespace unportrait {

long long orient2d(const Eigen::Vector2i& a, const Eigen::Vector2i& b, const Eigen::Vector2i& c) {
  const long long abx = b.x() - a.x(), aby = b.y() - a.y();
  const long long acx = c.x() - a.x(), acy = c.y() - a.y();
  return abx * acy - aby * acx;
}

namespace {

// >0 when d lies strictly inside the circumcircle of CCW triangle (a,b,c).
// Exact for |coordinates| < 1<<13.
long long incircle(const Eigen::Vector2i& a, const Eigen::Vector2i& b, const Eigen::Vector2i& c,
                   const Eigen::Vector2i& d) {
  const long long adx = a.x() - d.x(), ady = a.y() - d.y();
  const long long bdx = b.x() - d.x(), bdy = b.y() - d.y();
  const long long cdx = c.x() - d.x(), cdy = c.y() - d.y();
  const long long ad2 = adx * adx + ady * ady;
  const long long bd2 = bdx * bdx + bdy * bdy;
  const long long cd2 = cdx * cdx + cdy * cdy;
  return adx * (bdy * cd2 - cdy * bd2) - ady * (bdx * cd2 - cdx * bd2) + ad2 * (bdx * cdy - cdx * bdy);
}

uint64_t pack_edge(int a, int b) { return (uint64_t(uint32_t(a)) << 32) | uint32_t(b); }

struct Mesh {
  std::vector<Eigen::Vector2i> pts;
  std::vector<std::array<int, 3>> tri;  // CCW vertices
  std::vector<std::array<int, 3>> nbr;  // nbr[t][e] across directed edge (v[e] -> v[e+1]); -1 boundary

  int add_triangle(int a, int b, int c) {
    tri.push_back({a, b, c});
    nbr.push_back({-1, -1, -1});
    return int(tri.size()) - 1;
  }

  int edge_of(int t, int a, int b) const {
    for (int e = 0; e < 3; ++e)
      if (tri[size_t(t)][size_t(e)] == a && tri[size_t(t)][size_t((e + 1) % 3)] == b) return e;
    return -1;
  }

  // Mutual link across t1's directed edge e1 = (a -> b); t2 holds (b -> a).
  void link(int t1, int e1, int t2) {
    nbr[size_t(t1)][size_t(e1)] = t2;
    if (t2 >= 0) {
      const int a = tri[size_t(t1)][size_t(e1)];
      const int b = tri[size_t(t1)][size_t((e1 + 1) % 3)];
      const int e2 = edge_of(t2, b, a);
      nbr[size_t(t2)][size_t(e2)] = t1;
    }
  }
};

}  // namespace

Triangulation triangulate_points(std::vector<Eigen::Vector2i> pts) {
  std::sort(pts.begin(), pts.end(), [](const Eigen::Vector2i& a, const Eigen::Vector2i& b) {
    return a.x() != b.x() ? a.x() < b.x() : a.y() < b.y();
  });
  pts.erase(std::unique(pts.begin(), pts.end(),
                        [](const Eigen::Vector2i& a, const Eigen::Vector2i& b) { return a == b; }),
            pts.end());
  for (const auto& p : pts)
    if (std::abs(p.x()) >= (1 << 13) || std::abs(p.y()) >= (1 << 13))
      throw std::invalid_argument("triangulate_points: coordinates out of supported range");

  const int n = int(pts.size());
  int first_bend = -1;
  for (int i = 2; i < n && first_bend < 0; ++i)
    if (orient2d(pts[0], pts[1], pts[size_t(i)]) != 0) first_bend = i;
  if (n < 3 || first_bend < 0)
    throw std::invalid_argument("triangulate_points: need at least 3 non-collinear points");

  Mesh m;
  m.pts = pts;

  std::vector<int> hull;  // CCW vertex ring
  // Triangle inside each directed CCW hull edge (a -> b).
  std::unordered_map<uint64_t, int> boundary;
  boundary.reserve(size_t(n));

  // Seed: fan the collinear prefix [0, first_bend) to the first bend point.
  {
    const int p = first_bend;
    const bool left = orient2d(pts[0], pts[1], pts[size_t(p)]) > 0;
    const int k = p;  // prefix length >= 2
    int prev = -1;
    for (int i = 0; i + 1 < k; ++i) {
      const int t = left ? m.add_triangle(i, i + 1, p) : m.add_triangle(i + 1, i, p);
      if (prev >= 0) {
        // consecutive fan triangles share the spoke edge through vertex i.
        for (int e = 0; e < 3; ++e) {
          const int a = m.tri[size_t(t)][size_t(e)], b = m.tri[size_t(t)][size_t((e + 1) % 3)];
          if (m.edge_of(prev, b, a) >= 0) {
            m.link(t, e, prev);
            break;
          }
        }
      }
      prev = t;
    }
    if (left)
      for (int i = 0; i < k; ++i) hull.push_back(i);
    else
      for (int i = k - 1; i >= 0; --i) hull.push_back(i);
    hull.push_back(p);
    for (int t = 0; t < int(m.tri.size()); ++t)
      for (int e = 0; e < 3; ++e)
        if (m.nbr[size_t(t)][size_t(e)] < 0)
          boundary[pack_edge(m.tri[size_t(t)][size_t(e)], m.tri[size_t(t)][size_t((e + 1) % 3)])] = t;
  }

  int last_pos = int(hull.size()) - 1;  // hull position of the previous insertion

  for (int p = first_bend + 1; p < n; ++p) {
    const int hs = int(hull.size());
    auto next = [hs](int i) { return (i + 1) % hs; };
    auto prev = [hs](int i) { return (i - 1 + hs) % hs; };
    auto visible = [&](int i) {
      return orient2d(pts[size_t(hull[size_t(i)])], pts[size_t(hull[size_t(next(i))])],
                      pts[size_t(p)]) < 0;
    };

    // The previous point sits on the hull near the visible chain; scan out from it.
    int start = -1;
    for (int off = 0; off < hs; ++off) {
      const int cand = (last_pos - 1 + off % hs + hs) % hs;
      if (visible(cand)) {
        start = cand;
        break;
      }
    }
    if (start < 0) throw std::logic_error("triangulate_points: no visible hull edge");

    int lo = start, hi = start;
    while (prev(lo) != hi && visible(prev(lo))) lo = prev(lo);
    while (next(hi) != lo && visible(next(hi))) hi = next(hi);

    // Fan new triangles over the visible chain.
    int prev_tri = -1;
    for (int i = lo;; i = next(i)) {
      const int a = hull[size_t(i)], b = hull[size_t(next(i))];
      const int t = m.add_triangle(a, p, b);  // CCW since p is strictly right of (a -> b)
      const auto it = boundary.find(pack_edge(a, b));
      if (it == boundary.end()) throw std::logic_error("triangulate_points: missing boundary edge");
      m.link(t, m.edge_of(t, b, a), it->second);
      boundary.erase(it);
      if (prev_tri >= 0) m.link(t, m.edge_of(t, a, p), prev_tri);
      if (i == lo) boundary[pack_edge(a, p)] = t;
      if (i == hi) {
        boundary[pack_edge(p, b)] = t;
        prev_tri = t;
        break;
      }
      prev_tri = t;
    }

    // New hull: vertices from next(hi) around to lo, then p.
    std::vector<int> nh;
    nh.reserve(size_t(hs) + 1);
    for (int i = next(hi);; i = next(i)) {
      nh.push_back(hull[size_t(i)]);
      if (i == lo) break;
    }
    nh.push_back(p);
    hull = std::move(nh);
    last_pos = int(hull.size()) - 1;
  }

  // Lawson flips toward Delaunay; strict violations only, so lattice
  // cocircularity never loops.
  {
    std::deque<std::pair<int, int>> queue;
    for (int t = 0; t < int(m.tri.size()); ++t)
      for (int e = 0; e < 3; ++e)
        if (m.nbr[size_t(t)][size_t(e)] > t) queue.emplace_back(t, e);
    long flips = 0;
    const long flip_cap = 40L * n + 1000;
    while (!queue.empty() && flips < flip_cap) {
      const auto [t, e] = queue.front();
      queue.pop_front();
      const int u = m.nbr[size_t(t)][size_t(e)];
      if (u < 0) continue;
      const int a = m.tri[size_t(t)][size_t(e)];
      const int b = m.tri[size_t(t)][size_t((e + 1) % 3)];
      const int c = m.tri[size_t(t)][size_t((e + 2) % 3)];
      const int eu = m.edge_of(u, b, a);
      if (eu < 0) continue;  // stale queue entry
      const int d = m.tri[size_t(u)][size_t((eu + 2) % 3)];
      if (incircle(m.pts[size_t(a)], m.pts[size_t(b)], m.pts[size_t(c)], m.pts[size_t(d)]) <= 0)
        continue;
      if (orient2d(m.pts[size_t(a)], m.pts[size_t(d)], m.pts[size_t(c)]) <= 0) continue;
      if (orient2d(m.pts[size_t(d)], m.pts[size_t(b)], m.pts[size_t(c)]) <= 0) continue;

      const int tbc = m.nbr[size_t(t)][size_t((e + 1) % 3)];
      const int tca = m.nbr[size_t(t)][size_t((e + 2) % 3)];
      const int uad = m.nbr[size_t(u)][size_t((eu + 1) % 3)];
      const int udb = m.nbr[size_t(u)][size_t((eu + 2) % 3)];

      m.tri[size_t(t)] = {a, d, c};
      m.tri[size_t(u)] = {d, b, c};
      m.nbr[size_t(t)] = {-1, -1, -1};
      m.nbr[size_t(u)] = {-1, -1, -1};
      m.link(t, 0, uad);  // (a, d)
      m.link(t, 1, u);    // (d, c) new diagonal
      m.link(t, 2, tca);  // (c, a)
      m.link(u, 0, udb);  // (d, b)
      m.link(u, 1, tbc);  // (b, c)
      ++flips;
      for (int k = 0; k < 3; ++k) {
        if (m.nbr[size_t(t)][size_t(k)] >= 0) queue.emplace_back(t, k);
        if (m.nbr[size_t(u)][size_t(k)] >= 0) queue.emplace_back(u, k);
      }
    }
  }

  Triangulation out;
  out.points = std::move(m.pts);
  out.triangles.reserve(m.tri.size());
  for (const auto& t : m.tri) out.triangles.emplace_back(t[0], t[1], t[2]);
  return out;
}

}  // namespace unportrait

#include "dot/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <stdexcept>

#include "dot/io.hpp"

namespace dot {

namespace {

constexpr double kPi = 3.14159265358979323846;

double grade(const MeshSpec& s, double r) {
  const double t = r / s.radius;
  return s.h_interior + (s.h_boundary - s.h_interior) * t * t;
}

struct Ring {
  double r = 0.0;
  int n = 1;
  double offset = 0.0;  // angular offset (rad)
  int first = 0;        // index of first node
};

// Ring radii stepped outward with spacing ~0.866*h(r) (equilateral height),
// then scaled so the outermost ring lands exactly on the rim.
std::vector<double> ring_radii(const MeshSpec& s) {
  std::vector<double> radii{0.0};
  double r = 0.0;
  while (r < s.radius) {
    r += 0.8660254037844386 * grade(s, std::min(r, s.radius));
    radii.push_back(r);
  }
  if (radii.size() < 2) radii.push_back(s.radius);
  const double scale = s.radius / radii.back();
  for (double& x : radii) x *= scale;
  radii.back() = s.radius;
  return radii;
}

int ring_count(const MeshSpec& s, double r) {
  if (r <= 0.0) return 1;
  int n = static_cast<int>(std::lround(2.0 * kPi * r / grade(s, r)));
  n = std::max(n, 6);
  if (n % 2 != 0) ++n;  // even counts keep the node set mirror symmetric
  return n;
}

}  // namespace

void MeshSpec::validate() const {
  if (!(radius > 0.0)) throw std::invalid_argument("MeshSpec: radius must be > 0");
  if (!(h_boundary > 0.0))
    throw std::invalid_argument("MeshSpec: h_boundary must be > 0");
  if (!(h_boundary <= h_interior))
    throw std::invalid_argument("MeshSpec: requires h_boundary <= h_interior");
}

Mesh build_disk_mesh(const MeshSpec& spec) {
  spec.validate();
  const auto radii = ring_radii(spec);

  std::vector<Ring> rings;
  std::size_t total = 0;
  for (std::size_t k = 0; k < radii.size(); ++k) {
    Ring ring;
    ring.r = radii[k];
    ring.n = ring_count(spec, radii[k]);
    // Interior rings stagger by half a spacing for element quality; the rim
    // ring starts at angle zero so optode positions land on the same nodes
    // regardless of refinement.
    ring.offset =
        (k + 1 == radii.size() || k % 2 == 0) ? 0.0 : kPi / ring.n;
    ring.first = static_cast<int>(total);
    total += ring.n;
    rings.push_back(ring);
    if (total > spec.node_cap)
      throw std::runtime_error(
          "build_disk_mesh: node count exceeds cap (" +
          std::to_string(spec.node_cap) + "); increase h_boundary");
  }

  Mesh mesh;
  mesh.radius = spec.radius;
  mesh.nodes.reserve(total);
  for (const Ring& ring : rings) {
    if (ring.r == 0.0) {
      mesh.nodes.push_back({0.0, 0.0});
      continue;
    }
    for (int j = 0; j < ring.n; ++j) {
      const double a = ring.offset + 2.0 * kPi * j / ring.n;
      mesh.nodes.push_back({ring.r * std::cos(a), ring.r * std::sin(a)});
    }
  }

  // Zipper triangulation between consecutive rings: advance whichever ring
  // has the smaller next corner angle (unwrapped).
  auto angle_of = [&](const Ring& ring, int j) {
    return ring.offset + 2.0 * kPi * j / ring.n;
  };
  for (std::size_t k = 0; k + 1 < rings.size(); ++k) {
    const Ring& in = rings[k];
    const Ring& out = rings[k + 1];
    if (in.n == 1) {
      for (int j = 0; j < out.n; ++j)
        mesh.elements.push_back(
            {in.first, out.first + j, out.first + (j + 1) % out.n});
      continue;
    }
    // Start the inner walk at the node angularly nearest the outer start.
    int ai = 0;
    {
      double best = 1e300;
      for (int j = 0; j < in.n; ++j) {
        const double d = std::remainder(angle_of(in, j) - out.offset, 2.0 * kPi);
        if (std::abs(d) < best) {
          best = std::abs(d);
          ai = j;
        }
      }
    }
    // Unwrapped corner angles relative to the outer start node.
    const double in_start =
        std::remainder(angle_of(in, ai) - out.offset, 2.0 * kPi);
    int ia = 0, ob = 0;  // steps taken on each ring
    while (ia < in.n || ob < out.n) {
      const double next_in = in_start + 2.0 * kPi * (ia + 1) / in.n;
      const double next_out = 2.0 * kPi * (ob + 1) / out.n;
      const bool advance_outer =
          ob < out.n && (ia >= in.n || next_out <= next_in + 1e-15);
      const int i0 = in.first + (ai + ia) % in.n;
      const int o0 = out.first + ob % out.n;
      if (advance_outer) {
        const int o1 = out.first + (ob + 1) % out.n;
        mesh.elements.push_back({i0, o0, o1});
        ++ob;
      } else {
        const int i1 = in.first + (ai + ia + 1) % in.n;
        mesh.elements.push_back({i1, i0, o0});
        ++ia;
      }
    }
  }

  // Orient CCW.
  for (auto& e : mesh.elements) {
    if (signed_area2(mesh.nodes[e[0]], mesh.nodes[e[1]], mesh.nodes[e[2]]) < 0.0)
      std::swap(e[1], e[2]);
  }
  // Canonical deterministic ordering.
  std::sort(mesh.elements.begin(), mesh.elements.end(),
            [](const std::array<int, 3>& a, const std::array<int, 3>& b) {
              std::array<int, 3> sa = a, sb = b;
              std::sort(sa.begin(), sa.end());
              std::sort(sb.begin(), sb.end());
              return sa < sb;
            });

  const Ring& rim = rings.back();
  for (int j = 0; j < rim.n; ++j)
    mesh.boundary_edges.push_back({rim.first + j, rim.first + (j + 1) % rim.n});

  mesh.validate();
  return mesh;
}

double Mesh::element_area(int e) const {
  const auto& t = elements[e];
  return 0.5 * signed_area2(nodes[t[0]], nodes[t[1]], nodes[t[2]]);
}

double Mesh::total_area() const {
  double a = 0.0;
  for (int e = 0; e < element_count(); ++e) a += element_area(e);
  return a;
}

double Mesh::min_quality() const {
  double q = 1e300;
  for (const auto& t : elements) {
    const double a = dist2d(nodes[t[1]], nodes[t[2]]);
    const double b = dist2d(nodes[t[0]], nodes[t[2]]);
    const double c = dist2d(nodes[t[0]], nodes[t[1]]);
    const double area =
        0.5 * std::abs(signed_area2(nodes[t[0]], nodes[t[1]], nodes[t[2]]));
    const double s = 0.5 * (a + b + c);
    // 2 * inradius / circumradius = 8 area^2 / (s a b c)
    q = std::min(q, 8.0 * area * area / (s * a * b * c));
  }
  return q;
}

bool Mesh::is_boundary_node(int i) const {
  const double r = norm2d(nodes[i]);
  return std::abs(r - radius) <= 1e-9;
}

void Mesh::validate() const {
  if (nodes.empty() || elements.empty())
    throw std::runtime_error("mesh: empty");
  std::vector<char> used(nodes.size(), 0);
  for (std::size_t e = 0; e < elements.size(); ++e) {
    for (int v : elements[e]) {
      if (v < 0 || v >= node_count())
        throw std::runtime_error("mesh: element node index out of range");
      used[v] = 1;
    }
    if (element_area(static_cast<int>(e)) <= 0.0)
      throw std::runtime_error("mesh: non-positive element area");
  }
  for (std::size_t i = 0; i < used.size(); ++i)
    if (!used[i]) throw std::runtime_error("mesh: orphaned node");

  if (boundary_edges.empty()) throw std::runtime_error("mesh: no boundary");
  std::map<int, int> succ;
  for (const auto& e : boundary_edges) {
    for (int v : e) {
      if (v < 0 || v >= node_count())
        throw std::runtime_error("mesh: boundary index out of range");
      if (std::abs(norm2d(nodes[v]) - radius) > 1e-9)
        throw std::runtime_error("mesh: boundary node off the rim");
    }
    if (!succ.emplace(e[0], e[1]).second)
      throw std::runtime_error("mesh: boundary is not a simple loop");
  }
  // Single closed loop covering every boundary edge.
  int start = boundary_edges.front()[0];
  int cur = start;
  std::size_t steps = 0;
  do {
    auto it = succ.find(cur);
    if (it == succ.end()) throw std::runtime_error("mesh: open boundary loop");
    cur = it->second;
    ++steps;
  } while (cur != start && steps <= boundary_edges.size());
  if (steps != boundary_edges.size())
    throw std::runtime_error("mesh: boundary is not a single closed loop");
}

ElementLocator::ElementLocator(const Mesh& mesh) : mesh_(&mesh) {
  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300, hmax = 0.0;
  for (const auto& p : mesh.nodes) {
    xmin = std::min(xmin, p.x);
    xmax = std::max(xmax, p.x);
    ymin = std::min(ymin, p.y);
    ymax = std::max(ymax, p.y);
  }
  for (const auto& t : mesh.elements) {
    hmax = std::max(hmax, dist2d(mesh.nodes[t[0]], mesh.nodes[t[1]]));
    hmax = std::max(hmax, dist2d(mesh.nodes[t[1]], mesh.nodes[t[2]]));
    hmax = std::max(hmax, dist2d(mesh.nodes[t[2]], mesh.nodes[t[0]]));
  }
  cell_ = std::max(hmax, 1e-12);
  x0_ = xmin - 0.5 * cell_;
  y0_ = ymin - 0.5 * cell_;
  nx_ = static_cast<int>((xmax - x0_) / cell_) + 2;
  ny_ = static_cast<int>((ymax - y0_) / cell_) + 2;
  cells_.assign(static_cast<std::size_t>(nx_) * ny_, {});
  for (int e = 0; e < mesh.element_count(); ++e) {
    const auto& t = mesh.elements[e];
    double exmin = 1e300, exmax = -1e300, eymin = 1e300, eymax = -1e300;
    for (int v : t) {
      exmin = std::min(exmin, mesh.nodes[v].x);
      exmax = std::max(exmax, mesh.nodes[v].x);
      eymin = std::min(eymin, mesh.nodes[v].y);
      eymax = std::max(eymax, mesh.nodes[v].y);
    }
    const int cx0 = std::clamp(static_cast<int>((exmin - x0_) / cell_), 0, nx_ - 1);
    const int cx1 = std::clamp(static_cast<int>((exmax - x0_) / cell_), 0, nx_ - 1);
    const int cy0 = std::clamp(static_cast<int>((eymin - y0_) / cell_), 0, ny_ - 1);
    const int cy1 = std::clamp(static_cast<int>((eymax - y0_) / cell_), 0, ny_ - 1);
    for (int cy = cy0; cy <= cy1; ++cy)
      for (int cx = cx0; cx <= cx1; ++cx)
        cells_[static_cast<std::size_t>(cy) * nx_ + cx].push_back(e);
  }
  // Ascending order so the lowest containing element index wins.
  for (auto& c : cells_) std::sort(c.begin(), c.end());
}

std::array<double, 3> ElementLocator::barycentric(int e, Point2 p) const {
  const auto& t = mesh_->elements[e];
  const Point2 a = mesh_->nodes[t[0]], b = mesh_->nodes[t[1]],
               c = mesh_->nodes[t[2]];
  const double den = signed_area2(a, b, c);
  return {signed_area2(p, b, c) / den, signed_area2(a, p, c) / den,
          signed_area2(a, b, p) / den};
}

std::optional<int> ElementLocator::locate(Point2 p) const {
  const int cx = static_cast<int>((p.x - x0_) / cell_);
  const int cy = static_cast<int>((p.y - y0_) / cell_);
  if (cx < 0 || cx >= nx_ || cy < 0 || cy >= ny_) return std::nullopt;
  for (int e : cells_[static_cast<std::size_t>(cy) * nx_ + cx]) {
    const auto l = barycentric(e, p);
    if (l[0] >= -1e-12 && l[1] >= -1e-12 && l[2] >= -1e-12) return e;
  }
  return std::nullopt;
}

std::optional<int> locate_element(const Mesh& mesh, Point2 p) {
  return ElementLocator(mesh).locate(p);
}

double interpolate(const Mesh& mesh, const ElementLocator& locator,
                   const Eigen::VectorXd& nodal, Point2 p) {
  const auto e = locator.locate(p);
  if (!e) throw std::domain_error("interpolate: point outside the disk");
  const auto l = locator.barycentric(*e, p);
  const auto& t = mesh.elements[*e];
  return l[0] * nodal[t[0]] + l[1] * nodal[t[1]] + l[2] * nodal[t[2]];
}

double interpolate(const Mesh& mesh, const Eigen::VectorXd& nodal, Point2 p) {
  return interpolate(mesh, ElementLocator(mesh), nodal, p);
}

int nearest_node(const Mesh& mesh, Point2 p) {
  int best = 0;
  double bd = 1e300;
  for (int i = 0; i < mesh.node_count(); ++i) {
    const double d = dist2d(mesh.nodes[i], p);
    if (d < bd) {
      bd = d;
      best = i;
    }
  }
  return best;
}

int nearest_boundary_node(const Mesh& mesh, Point2 p) {
  int best = -1;
  double bd = 1e300;
  for (const auto& e : mesh.boundary_edges) {
    const double d = dist2d(mesh.nodes[e[0]], p);
    if (d < bd) {
      bd = d;
      best = e[0];
    }
  }
  return best;
}

std::string serialize_mesh(const Mesh& mesh) {
  std::ostringstream out;
  out << "DOTMESH v1 " << mesh.node_count() << ' ' << mesh.element_count()
      << ' ' << mesh.boundary_edges.size() << '\n';
  for (const auto& p : mesh.nodes)
    out << fmt17(p.x) << ' ' << fmt17(p.y) << '\n';
  for (const auto& t : mesh.elements)
    out << t[0] << ' ' << t[1] << ' ' << t[2] << '\n';
  for (const auto& e : mesh.boundary_edges) out << e[0] << ' ' << e[1] << '\n';
  return out.str();
}

Mesh parse_mesh(const std::string& text) {
  std::istringstream in(text);
  std::string magic, version;
  Mesh mesh;
  std::size_t nn = 0, ne = 0, nb = 0;
  in >> magic >> version >> nn >> ne >> nb;
  if (magic != "DOTMESH" || version != "v1" || !in)
    throw std::runtime_error("parse_mesh: bad header");
  mesh.nodes.resize(nn);
  for (auto& p : mesh.nodes) in >> p.x >> p.y;
  mesh.elements.resize(ne);
  for (auto& t : mesh.elements) in >> t[0] >> t[1] >> t[2];
  mesh.boundary_edges.resize(nb);
  for (auto& e : mesh.boundary_edges) in >> e[0] >> e[1];
  if (!in) throw std::runtime_error("parse_mesh: truncated file");
  double r = 0.0;
  for (const auto& e : mesh.boundary_edges)
    r = std::max(r, norm2d(mesh.nodes[e[0]]));
  mesh.radius = r;
  mesh.validate();
  return mesh;
}

void save_mesh(const Mesh& mesh, const std::string& path) {
  write_text_file(path, serialize_mesh(mesh));
}

Mesh load_mesh(const std::string& path) {
  return parse_mesh(read_text_file(path));
}

std::uint64_t mesh_hash(const Mesh& mesh) {
  return fnv1a64(serialize_mesh(mesh));
}

}  // namespace dot

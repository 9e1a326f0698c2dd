#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "dot/geometry.hpp"

namespace dot {

struct MeshSpec {
  double radius = 70.0;      // mm
  double h_boundary = 2.0;   // target edge length at the rim (mm)
  double h_interior = 5.0;   // target edge length at the center (mm)
  std::size_t node_cap = 200000;

  void validate() const;  // throws std::invalid_argument
};

/// 2D triangular mesh of a disk. Elements are CCW; boundary_edges walk the
/// rim as one closed CCW loop. Immutable after construction.
struct Mesh {
  std::vector<Point2> nodes;                       // mm
  std::vector<std::array<int, 3>> elements;        // node index triples
  std::vector<std::array<int, 2>> boundary_edges;  // node index pairs
  double radius = 0.0;

  int node_count() const { return static_cast<int>(nodes.size()); }
  int element_count() const { return static_cast<int>(elements.size()); }

  double element_area(int e) const;  // signed; positive for valid elements
  double total_area() const;
  /// Min over elements of inradius/circumradius scaled so equilateral = 1.
  double min_quality() const;
  bool is_boundary_node(int i) const;

  /// Checks all structural invariants; throws std::runtime_error on failure.
  void validate() const;
};

Mesh build_disk_mesh(const MeshSpec& spec);

/// Uniform-grid spatial index for point-in-element queries. A point on a
/// shared edge resolves to the lowest containing element index.
class ElementLocator {
 public:
  explicit ElementLocator(const Mesh& mesh);
  std::optional<int> locate(Point2 p) const;
  /// Barycentric coordinates of p in element e.
  std::array<double, 3> barycentric(int e, Point2 p) const;

 private:
  const Mesh* mesh_;
  double x0_ = 0.0, y0_ = 0.0, cell_ = 1.0;
  int nx_ = 0, ny_ = 0;
  std::vector<std::vector<int>> cells_;
};

std::optional<int> locate_element(const Mesh& mesh, Point2 p);

/// P1 interpolation of a nodal field; throws std::domain_error outside the
/// disk.
double interpolate(const Mesh& mesh, const Eigen::VectorXd& nodal, Point2 p);
double interpolate(const Mesh& mesh, const ElementLocator& locator,
                   const Eigen::VectorXd& nodal, Point2 p);

int nearest_node(const Mesh& mesh, Point2 p);
int nearest_boundary_node(const Mesh& mesh, Point2 p);

/// Plain-text DOTMESH v1 serialization; round-trips bit-exactly.
std::string serialize_mesh(const Mesh& mesh);
Mesh parse_mesh(const std::string& text);
void save_mesh(const Mesh& mesh, const std::string& path);
Mesh load_mesh(const std::string& path);

std::uint64_t mesh_hash(const Mesh& mesh);

}  // namespace dot

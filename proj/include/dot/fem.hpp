#pragma once

#include <array>
#include <memory>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include "dot/medium.hpp"
#include "dot/mesh.hpp"

namespace dot {

inline constexpr double kLightSpeedMmPerNs = 299.792458;

/// kappa = 1 / (3 (mua + musp)), in mm.
double diffusion_coefficient(double mua, double musp);

/// Effective reflection coefficient of the tissue-air boundary from Fresnel
/// integrals; ~0.493 for n = 1.4. The Robin mismatch factor is
/// A = (1 + R_eff) / (1 - R_eff).
double effective_reflection_coefficient(double n);
double mismatch_factor(double n);

/// Mesh-derived geometry reused across assemblies: per-element P1 gradients
/// and unit-kappa stiffness, plus the unique node-pair (edge) table shared by
/// the Jacobian contraction and the TV regularizer.
struct AssemblyCache {
  explicit AssemblyCache(const Mesh& mesh);

  struct ElementGeom {
    std::array<int, 3> n;
    double area;
    std::array<double, 6> grad;   // (gx0, gy0, gx1, gy1, gx2, gy2)
    std::array<double, 6> kunit;  // packed symmetric: 00, 11, 22, 01, 02, 12
    std::array<int, 3> edge;      // global edge ids for pairs 01, 02, 12
  };

  struct Edge {
    int a, b;       // a < b
    double length;  // mm
  };

  const Mesh* mesh;
  std::vector<ElementGeom> elems;
  std::vector<Edge> edges;
};

/// P1 Galerkin matrices of the diffusion operator. All sparse symmetric;
/// kappa is piecewise constant per element (nodal parameters averaged).
struct FemSystem {
  Eigen::SparseMatrix<double> stiffness;        // kappa-weighted
  Eigen::SparseMatrix<double> absorption_mass;  // mua-weighted mass
  Eigen::SparseMatrix<double> mass;             // plain mass
  Eigen::SparseMatrix<double> boundary;         // Robin term, 1/(2A) weighted
  Eigen::VectorXd kappa_el;                     // per element
  double mismatch_A = 0.0;
  double v = 0.0;  // speed of light in the medium (mm/ns)
  const Mesh* mesh = nullptr;
  const AssemblyCache* cache = nullptr;

  Eigen::SparseMatrix<double> system() const;  // stiffness + Ma + B
};

FemSystem assemble(const Mesh& mesh, const AssemblyCache& cache,
                   const OpticalField& field);

/// Sparse LDLT with residual checking; solve failures throw with the
/// residual norm in the message.
class Factorization {
 public:
  explicit Factorization(Eigen::SparseMatrix<double> A);
  Eigen::VectorXd solve(const Eigen::VectorXd& b) const;
  const Eigen::SparseMatrix<double>& matrix() const { return A_; }

 private:
  Eigen::SparseMatrix<double> A_;
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt_;
};

}  // namespace dot

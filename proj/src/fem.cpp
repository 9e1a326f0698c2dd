#include "dot/fem.hpp"

#include <cmath>
#include <map>
#include <stdexcept>

namespace dot {

double diffusion_coefficient(double mua, double musp) {
  if (!(mua > 0.0 && musp > 0.0))
    throw std::invalid_argument("diffusion_coefficient: arguments must be > 0");
  return 1.0 / (3.0 * (mua + musp));
}

namespace {

// Unpolarized Fresnel reflectance for light inside the medium (index n)
// hitting the boundary to air at internal angle theta.
double fresnel_internal(double n, double cos_i) {
  const double sin_i2 = 1.0 - cos_i * cos_i;
  const double sin_t2 = n * n * sin_i2;
  if (sin_t2 >= 1.0) return 1.0;  // total internal reflection
  const double cos_t = std::sqrt(1.0 - sin_t2);
  const double rs = (n * cos_i - cos_t) / (n * cos_i + cos_t);
  const double rp = (n * cos_t - cos_i) / (n * cos_t + cos_i);
  return 0.5 * (rs * rs + rp * rp);
}

}  // namespace

double effective_reflection_coefficient(double n) {
  if (n < 1.0) throw std::invalid_argument("n must be >= 1");
  if (n == 1.0) return 0.0;
  // R_phi = int 2 sin cos R, R_j = int 3 sin cos^2 R over internal angles;
  // R_eff = (R_phi + R_j) / (2 - R_phi + R_j).
  const int m = 4000;
  double r_phi = 0.0, r_j = 0.0;
  const double h = (0.5 * 3.14159265358979323846) / m;
  for (int i = 0; i <= m; ++i) {
    const double th = i * h;
    const double w = (i == 0 || i == m) ? 0.5 : 1.0;
    const double s = std::sin(th), c = std::cos(th);
    const double rf = fresnel_internal(n, c);
    r_phi += w * 2.0 * s * c * rf * h;
    r_j += w * 3.0 * s * c * c * rf * h;
  }
  return (r_phi + r_j) / (2.0 - r_phi + r_j);
}

double mismatch_factor(double n) {
  const double r = effective_reflection_coefficient(n);
  return (1.0 + r) / (1.0 - r);
}

AssemblyCache::AssemblyCache(const Mesh& m) : mesh(&m) {
  elems.resize(m.element_count());
  std::map<std::pair<int, int>, int> edge_ids;
  for (int e = 0; e < m.element_count(); ++e) {
    ElementGeom& g = elems[e];
    g.n = m.elements[e];
    const Point2 p0 = m.nodes[g.n[0]], p1 = m.nodes[g.n[1]], p2 = m.nodes[g.n[2]];
    const double det = signed_area2(p0, p1, p2);
    g.area = 0.5 * det;
    // P1 basis gradients: grad N_i = perp of opposite edge / det.
    g.grad = {(p1.y - p2.y) / det, (p2.x - p1.x) / det,
              (p2.y - p0.y) / det, (p0.x - p2.x) / det,
              (p0.y - p1.y) / det, (p1.x - p0.x) / det};
    auto gdot = [&](int a, int b) {
      return g.grad[2 * a] * g.grad[2 * b] + g.grad[2 * a + 1] * g.grad[2 * b + 1];
    };
    g.kunit = {g.area * gdot(0, 0), g.area * gdot(1, 1), g.area * gdot(2, 2),
               g.area * gdot(0, 1), g.area * gdot(0, 2), g.area * gdot(1, 2)};
    const std::array<std::pair<int, int>, 3> pairs{
        std::pair{g.n[0], g.n[1]}, {g.n[0], g.n[2]}, {g.n[1], g.n[2]}};
    for (int k = 0; k < 3; ++k) {
      auto pr = pairs[k];
      if (pr.first > pr.second) std::swap(pr.first, pr.second);
      auto it = edge_ids.find(pr);
      if (it == edge_ids.end()) {
        it = edge_ids.emplace(pr, static_cast<int>(edges.size())).first;
        edges.push_back({pr.first, pr.second,
                         dist2d(m.nodes[pr.first], m.nodes[pr.second])});
      }
      g.edge[k] = it->second;
    }
  }
}

FemSystem assemble(const Mesh& mesh, const AssemblyCache& cache,
                   const OpticalField& field) {
  field.validate(mesh);
  const int nn = mesh.node_count();
  FemSystem sys;
  sys.mesh = &mesh;
  sys.cache = &cache;
  sys.mismatch_A = mismatch_factor(field.n);
  sys.v = kLightSpeedMmPerNs / field.n;
  sys.kappa_el.resize(mesh.element_count());

  using T = Eigen::Triplet<double>;
  std::vector<T> tk, ta, tm, tb;
  tk.reserve(cache.elems.size() * 9);
  ta.reserve(cache.elems.size() * 9);
  tm.reserve(cache.elems.size() * 9);

  for (std::size_t e = 0; e < cache.elems.size(); ++e) {
    const auto& g = cache.elems[e];
    const double mua_sum =
        field.mua[g.n[0]] + field.mua[g.n[1]] + field.mua[g.n[2]];
    const double musp_sum =
        field.musp[g.n[0]] + field.musp[g.n[1]] + field.musp[g.n[2]];
    const double kappa = 1.0 / ((mua_sum + musp_sum));  // = 1/(3*mean)
    sys.kappa_el[e] = kappa;

    auto kunit_at = [&](int a, int b) {
      if (a == b) return g.kunit[a];
      const int lo = std::min(a, b), hi = std::max(a, b);
      return g.kunit[lo == 0 ? (hi == 1 ? 3 : 4) : 5];
    };
    for (int a = 0; a < 3; ++a) {
      for (int b = 0; b < 3; ++b) {
        tk.emplace_back(g.n[a], g.n[b], kappa * kunit_at(a, b));
        // mua-weighted P1 mass: area/60 * (6,2,2 / 2,2,1 pattern)
        double w = 0.0;
        for (int k = 0; k < 3; ++k) {
          int f = 1;
          if (k == a && k == b)
            f = 6;
          else if (k == a || k == b || a == b)
            f = 2;
          w += f * field.mua[g.n[k]];
        }
        ta.emplace_back(g.n[a], g.n[b], g.area / 60.0 * w);
        tm.emplace_back(g.n[a], g.n[b], g.area / 12.0 * (a == b ? 2.0 : 1.0));
      }
    }
  }

  const double robin = 1.0 / (2.0 * sys.mismatch_A);
  for (const auto& be : mesh.boundary_edges) {
    const double len = dist2d(mesh.nodes[be[0]], mesh.nodes[be[1]]);
    tb.emplace_back(be[0], be[0], robin * len / 3.0);
    tb.emplace_back(be[1], be[1], robin * len / 3.0);
    tb.emplace_back(be[0], be[1], robin * len / 6.0);
    tb.emplace_back(be[1], be[0], robin * len / 6.0);
  }

  sys.stiffness.resize(nn, nn);
  sys.absorption_mass.resize(nn, nn);
  sys.mass.resize(nn, nn);
  sys.boundary.resize(nn, nn);
  sys.stiffness.setFromTriplets(tk.begin(), tk.end());
  sys.absorption_mass.setFromTriplets(ta.begin(), ta.end());
  sys.mass.setFromTriplets(tm.begin(), tm.end());
  sys.boundary.setFromTriplets(tb.begin(), tb.end());
  return sys;
}

Eigen::SparseMatrix<double> FemSystem::system() const {
  return stiffness + absorption_mass + boundary;
}

Factorization::Factorization(Eigen::SparseMatrix<double> A) : A_(std::move(A)) {
  ldlt_.compute(A_);
  if (ldlt_.info() != Eigen::Success)
    throw std::runtime_error("Factorization: sparse LDLT failed");
}

Eigen::VectorXd Factorization::solve(const Eigen::VectorXd& b) const {
  Eigen::VectorXd x = ldlt_.solve(b);
  const double bn = b.norm();
  if (bn > 0.0) {
    const double res = (A_ * x - b).norm() / bn;
    if (!(res < 1e-8))
      throw std::runtime_error("linear solve failed, relative residual = " +
                               std::to_string(res));
  }
  return x;
}

}  // namespace dot

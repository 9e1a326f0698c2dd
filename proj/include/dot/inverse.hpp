#pragma once

#include <functional>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Sparse>

#include "dot/forward.hpp"
#include "dot/jacobian.hpp"

namespace dot {

/// Edge-based smoothed total variation on a nodal image:
/// TV_beta(x) = sum_e w_e sqrt((x_a - x_b)^2 + beta^2), w_e = edge length.
class TvRegularizer {
 public:
  TvRegularizer(const AssemblyCache& cache, double beta);

  double value(const Eigen::VectorXd& x) const;
  Eigen::VectorXd gradient(const Eigen::VectorXd& x) const;
  /// Lagged-diffusivity Gauss-Newton approximation of the Hessian.
  Eigen::SparseMatrix<double> hessian(const Eigen::VectorXd& x) const;

 private:
  const AssemblyCache* cache_;
  double beta_;
  double inv_total_ = 1.0;  // 1 / total edge length
};

struct CgResult {
  Eigen::VectorXd x;
  int iterations = 0;
  double rel_residual = 0.0;
  bool converged = false;
};

/// Preconditioned conjugate gradients with a Jacobi preconditioner.
CgResult pcg(const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& apply,
             const Eigen::VectorXd& b, const Eigen::VectorXd& jacobi_diag,
             int max_iter, double rel_tol);

enum class Unknowns { MuaOnly, Joint };
enum class Calibration { None, Reference };

struct ReconSettings {
  int outer_iterations = 20;
  int cg_max_inner = 100;
  double cg_rel_tol = 1e-4;
  double tv_tau = 0.01;
  double tv_beta = 0.01;
  Mode mode = Mode::TD;
  Unknowns unknowns = Unknowns::Joint;
  double ls_shrink = 0.5;
  double ls_armijo = 1e-4;
  int ls_max_backtracks = 10;
  double clamp_min = 1e-5;  // 1/mm, applied to the physical parameters
  int jobs = 1;

  void validate() const;
};

struct IterationRecord {
  int iteration = 0;
  double misfit = 0.0;
  double reg = 0.0;
  double total = 0.0;
  double step_norm = 0.0;
  int cg_iterations = 0;
  int backtracks = 0;
  double wall_ms = 0.0;
};

struct ReconResult {
  OpticalField field;
  std::vector<IterationRecord> trace;
  std::string termination;
};

struct Objective {
  double misfit = 0.0;
  double reg = 0.0;
  double total = 0.0;
};

/// Inputs shared by objective evaluation and the reconstruction driver.
struct ReconProblem {
  const Mesh* mesh = nullptr;
  const AssemblyCache* cache = nullptr;
  const ElementLocator* locator = nullptr;
  OptodeLayout layout;
  TimeGrid grid;  // used when settings.mode == TD
  ForwardOptions forward;
  Measurement data;  // calibrated log-intensity data
  double mua0 = 0.02;
  double musp0 = 0.67;
  double n = 1.4;
};

/// Data misfit plus TV penalty for a candidate field.
Objective objective(const ReconProblem& prob, const OpticalField& field,
                    const ReconSettings& settings);

/// Reference calibration for separate data/model meshes: returns
/// y_data - y_homog(data mesh) + y_homog(model mesh), entrywise on the
/// intersected validity masks. Cancels discretization offsets so the
/// homogeneous model starts at zero residual.
Measurement calibrate_reference(const Measurement& data,
                                const Measurement& homog_data_mesh,
                                const Measurement& homog_model_mesh);

ReconResult gauss_newton(const ReconProblem& prob, const OpticalField& init,
                         const ReconSettings& settings);

std::string trace_to_csv(const std::vector<IterationRecord>& trace);
std::string recon_to_csv(const Mesh& mesh, const OpticalField& field);

}  // namespace dot

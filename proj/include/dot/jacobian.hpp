#pragma once

#include <vector>

#include <Eigen/Core>

#include "dot/forward.hpp"

namespace dot {

/// Log-domain sensitivities of the retained measurement entries with respect
/// to nodal mua and musp. Rows follow the retained-entry order of the
/// measurement; row metadata identifies the (source, detector, bin) tuple.
struct JacobianBlocks {
  Eigen::MatrixXd mua;   // rows x nodes
  Eigen::MatrixXd musp;  // rows x nodes
  std::vector<int> row_src, row_det, row_bin;

  int rows() const { return static_cast<int>(row_src.size()); }
};

/// Adjoint fluences, one column per detector: solves the (self-adjoint)
/// system with a unit nodal source at each detector node.
Eigen::MatrixXd adjoint_fields(const FemSystem& sys, const Probes& probes,
                               int jobs = 1);

/// CW Jacobian from forward and adjoint nodal fields. The mua block carries
/// both the absorption-mass kernel and the kappa chain term (kappa depends on
/// mua + musp), so entries match finite differences of the full model.
JacobianBlocks jacobian_cw(const FemSystem& sys, const Probes& probes,
                           const Eigen::MatrixXd& forward_fields,
                           const Eigen::MatrixXd& adjoint_fields,
                           const Measurement& meas, int jobs = 1);

/// TD Jacobian: exact derivative of the Crank-Nicolson/trapezoid discrete
/// scheme via lag correlation of adjoint impulse responses with windowed
/// forward partial sums.
JacobianBlocks jacobian_td(const FemSystem& sys, const Probes& probes,
                           const TimeGrid& grid,
                           const std::vector<Eigen::MatrixXd>& forward_histories,
                           const Measurement& meas, int jobs = 1);

/// Memory-bounded TD Jacobian: recomputes the per-source forward prefix and
/// per-detector adjoint sequences on the fly instead of holding every
/// history at once. Peak memory O(node_count * n_steps); identical values.
JacobianBlocks jacobian_td_lowmem(const FemSystem& sys, const Probes& probes,
                                  const TimeGrid& grid,
                                  const Measurement& meas, int jobs = 1);

/// Bytes needed by the all-in-memory TD Jacobian path.
std::size_t jacobian_td_bytes(const FemSystem& sys, const Probes& probes,
                              const TimeGrid& grid);

/// Debug CSV dump: row metadata plus entries of both blocks.
std::string jacobian_to_csv(const JacobianBlocks& j);

}  // namespace dot

#include "dot/jacobian.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "dot/io.hpp"
#include "dot/parallel.hpp"

namespace dot {

namespace {

using RowMajorMat =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Accumulates one log-domain Jacobian row from correlation products:
// diag[a] = sum of zeta_a * r_a terms, epair[e] = symmetric cross sums for
// edge e. scale = -1/I (the 1/(2A) readout constant cancels in the log).
void contract_row(const AssemblyCache& cache, const Eigen::VectorXd& kappa_el,
                  const Eigen::VectorXd& diag, const Eigen::VectorXd& epair,
                  double scale, Eigen::VectorXd& mua_row,
                  Eigen::VectorXd& musp_row) {
  mua_row.setZero();
  musp_row.setZero();
  for (std::size_t e = 0; e < cache.elems.size(); ++e) {
    const auto& g = cache.elems[e];
    const double d0 = diag[g.n[0]], d1 = diag[g.n[1]], d2 = diag[g.n[2]];
    const double s01 = epair[g.edge[0]], s02 = epair[g.edge[1]],
                 s12 = epair[g.edge[2]];
    // kappa-weighted stiffness kernel: grad(zeta) . grad(phi) over the element
    const double stiff = g.kunit[0] * d0 + g.kunit[1] * d1 + g.kunit[2] * d2 +
                         g.kunit[3] * s01 + g.kunit[4] * s02 + g.kunit[5] * s12;
    const double dkappa = -kappa_el[e] * kappa_el[e];  // d kappa_e / d mu_node
    const double kterm = scale * dkappa * stiff;
    // absorption mass kernel per node k: (A/60) (6 d_k + 2 s_k. + 2 d_other + s_other)
    const double a60 = scale * g.area / 60.0;
    mua_row[g.n[0]] +=
        a60 * (6.0 * d0 + 2.0 * (s01 + s02) + 2.0 * (d1 + d2) + s12) + kterm;
    mua_row[g.n[1]] +=
        a60 * (6.0 * d1 + 2.0 * (s01 + s12) + 2.0 * (d0 + d2) + s02) + kterm;
    mua_row[g.n[2]] +=
        a60 * (6.0 * d2 + 2.0 * (s02 + s12) + 2.0 * (d0 + d1) + s01) + kterm;
    musp_row[g.n[0]] += kterm;
    musp_row[g.n[1]] += kterm;
    musp_row[g.n[2]] += kterm;
  }
}

// R_b^l = sum_n w^(b)_{n+l} chi^n from the prefix sums X (X^m = sum chi^n)
// and the midpoint averages chi (column n holds chi^n, column 0 unused).
void build_r_column(const Eigen::MatrixXd& X, const Eigen::MatrixXd& chi,
                    int B0, int B1, int l, double dt,
                    Eigen::Ref<Eigen::VectorXd> out) {
  const int hi = B1 - l;
  if (hi < 1) {
    out.setZero();
    return;
  }
  const int lo = std::max(B0 - l, 1);
  Eigen::VectorXd r = X.col(hi) - X.col(lo - 1);
  r -= 0.5 * chi.col(hi);
  if (lo == B0 - l) r -= 0.5 * chi.col(lo);
  out = dt * r;
}

}  // namespace

Eigen::MatrixXd adjoint_fields(const FemSystem& sys, const Probes& probes,
                               int jobs) {
  const int nd = static_cast<int>(probes.det_node.size());
  Factorization fac(sys.system());
  Eigen::MatrixXd psi(sys.mesh->node_count(), nd);
  parallel_for(nd, jobs, [&](int d) {
    Eigen::VectorXd e = Eigen::VectorXd::Zero(sys.mesh->node_count());
    e[probes.det_node[d]] = 1.0;
    psi.col(d) = fac.solve(e);
  });
  return psi;
}

JacobianBlocks jacobian_cw(const FemSystem& sys, const Probes& probes,
                           const Eigen::MatrixXd& forward_fields,
                           const Eigen::MatrixXd& adjoint_fields,
                           const Measurement& meas, int jobs) {
  const AssemblyCache& cache = *sys.cache;
  const int nn = sys.mesh->node_count();

  JacobianBlocks jac;
  for (int s = 0; s < meas.n_sources; ++s)
    for (int d = 0; d < meas.n_detectors; ++d)
      if (meas.valid[meas.index(s, d)]) {
        jac.row_src.push_back(s);
        jac.row_det.push_back(d);
        jac.row_bin.push_back(0);
      }
  jac.mua.resize(jac.rows(), nn);
  jac.musp.resize(jac.rows(), nn);

  const int ne = static_cast<int>(cache.edges.size());
  parallel_for(jac.rows(), jobs, [&](int r) {
    const int s = jac.row_src[r], d = jac.row_det[r];
    const double inten = meas.intensity[meas.index(s, d)];
    if (!(inten > 0.0))
      throw std::runtime_error("jacobian_cw: non-positive intensity");
    const auto phi = forward_fields.col(s);
    const auto psi = adjoint_fields.col(d);
    Eigen::VectorXd diag(nn), epair(ne);
    for (int a = 0; a < nn; ++a) diag[a] = psi[a] * phi[a];
    for (int e = 0; e < ne; ++e) {
      const auto& ed = cache.edges[e];
      epair[e] = psi[ed.a] * phi[ed.b] + psi[ed.b] * phi[ed.a];
    }
    // dy/dp = -c_A psi^T S_p phi / I with c_A = 1/(2A) and I the stored
    // intensity (which already carries c_A).
    const double scale = -1.0 / (2.0 * sys.mismatch_A * inten);
    Eigen::VectorXd mua_row(nn), musp_row(nn);
    contract_row(cache, sys.kappa_el, diag, epair, scale, mua_row, musp_row);
    jac.mua.row(r) = mua_row.transpose();
    jac.musp.row(r) = musp_row.transpose();
  });
  return jac;
}

JacobianBlocks jacobian_td(const FemSystem& sys, const Probes& probes,
                           const TimeGrid& grid,
                           const std::vector<Eigen::MatrixXd>& forward_histories,
                           const Measurement& meas, int jobs) {
  const AssemblyCache& cache = *sys.cache;
  const int nn = sys.mesh->node_count();
  const int nd = static_cast<int>(probes.det_node.size());
  const int N = grid.n_steps;
  const int ws = grid.steps_per_bin();
  const double dt = grid.dt_ns();

  JacobianBlocks jac;
  for (int s = 0; s < meas.n_sources; ++s)
    for (int d = 0; d < meas.n_detectors; ++d)
      for (int b = 0; b < meas.n_bins; ++b)
        if (meas.valid[meas.index(s, d, b)]) {
          jac.row_src.push_back(s);
          jac.row_det.push_back(d);
          jac.row_bin.push_back(b);
        }
  jac.mua.resize(jac.rows(), nn);
  jac.musp.resize(jac.rows(), nn);

  TdStepper stepper(sys, grid);

  // Adjoint impulse responses per detector, node-major over lag so the
  // per-node correlations below are contiguous dots.
  std::vector<RowMajorMat> zeta(nd);
  parallel_for(nd, jobs, [&](int d) {
    RowMajorMat z(nn, N);
    Eigen::VectorXd e = Eigen::VectorXd::Zero(nn);
    e[probes.det_node[d]] = 1.0;
    Eigen::VectorXd cur = stepper.lag_initial(e);
    z.col(0) = cur;
    for (int l = 1; l < N; ++l) {
      cur = stepper.step(cur);
      z.col(l) = cur;
    }
    zeta[d] = std::move(z);
  });

  const int ne = static_cast<int>(cache.edges.size());
  for (int s = 0; s < meas.n_sources; ++s) {
    const Eigen::MatrixXd& hist = forward_histories[s];
    // chi^n = (phi^{n-1} + phi^n)/2, prefix sums X^m = sum_{n<=m} chi^n.
    Eigen::MatrixXd chi(nn, N + 1);
    Eigen::MatrixXd X(nn, N + 1);
    chi.col(0).setZero();
    X.col(0).setZero();
    for (int n = 1; n <= N; ++n) {
      chi.col(n) = 0.5 * (hist.col(n - 1) + hist.col(n));
      X.col(n) = X.col(n - 1) + chi.col(n);
    }

    // R_b^l = sum_n w^{(b)}_{n+l} chi^n: windowed trapezoid partial sums.
    std::vector<RowMajorMat> R(grid.n_bins, RowMajorMat(nn, N));
    for (int b = 0; b < grid.n_bins; ++b) {
      const int B0 = b * ws, B1 = (b + 1) * ws;
      Eigen::VectorXd col(nn);
      for (int l = 0; l < N; ++l) {
        build_r_column(X, chi, B0, B1, l, dt, col);
        R[b].col(l) = col;
      }
    }

    // All rows of this source (detector x valid bin) are independent.
    std::vector<int> rows;
    for (int r = 0; r < jac.rows(); ++r)
      if (jac.row_src[r] == s) rows.push_back(r);
    parallel_for(static_cast<int>(rows.size()), jobs, [&](int ri) {
      const int r = rows[ri];
      const int d = jac.row_det[r], b = jac.row_bin[r];
      const double inten = meas.intensity[meas.index(s, d, b)];
      if (!(inten > 0.0))
        throw std::runtime_error("jacobian_td: non-positive intensity");
      const RowMajorMat& Z = zeta[d];
      const RowMajorMat& Rb = R[b];
      Eigen::VectorXd diag(nn), epair(ne);
      for (int a = 0; a < nn; ++a) diag[a] = Z.row(a).dot(Rb.row(a));
      for (int e = 0; e < ne; ++e) {
        const auto& ed = cache.edges[e];
        epair[e] = Z.row(ed.a).dot(Rb.row(ed.b)) + Z.row(ed.b).dot(Rb.row(ed.a));
      }
      const double scale = -1.0 / (2.0 * sys.mismatch_A * inten);
      Eigen::VectorXd mua_row(nn), musp_row(nn);
      contract_row(cache, sys.kappa_el, diag, epair, scale, mua_row, musp_row);
      jac.mua.row(r) = mua_row.transpose();
      jac.musp.row(r) = musp_row.transpose();
    });
  }
  return jac;
}

std::size_t jacobian_td_bytes(const FemSystem& sys, const Probes& probes,
                              const TimeGrid& grid) {
  const std::size_t nn = sys.mesh->node_count();
  const std::size_t N = grid.n_steps;
  const std::size_t ns = probes.q.size();
  const std::size_t nd = probes.det_node.size();
  // forward histories + adjoint sequences + prefix and windowed sums
  return 8 * nn * ((N + 1) * ns + N * nd + (N + 1) + N * grid.n_bins);
}

JacobianBlocks jacobian_td_lowmem(const FemSystem& sys, const Probes& probes,
                                  const TimeGrid& grid,
                                  const Measurement& meas, int jobs) {
  const AssemblyCache& cache = *sys.cache;
  const int nn = sys.mesh->node_count();
  const int N = grid.n_steps;
  const int ws = grid.steps_per_bin();
  const double dt = grid.dt_ns();

  JacobianBlocks jac;
  for (int s = 0; s < meas.n_sources; ++s)
    for (int d = 0; d < meas.n_detectors; ++d)
      for (int b = 0; b < meas.n_bins; ++b)
        if (meas.valid[meas.index(s, d, b)]) {
          jac.row_src.push_back(s);
          jac.row_det.push_back(d);
          jac.row_bin.push_back(b);
        }
  jac.mua.resize(jac.rows(), nn);
  jac.musp.resize(jac.rows(), nn);

  TdStepper stepper(sys, grid);
  const int ne = static_cast<int>(cache.edges.size());

  for (int s = 0; s < meas.n_sources; ++s) {
    Eigen::MatrixXd chi(nn, N + 1);
    Eigen::MatrixXd X(nn, N + 1);
    {
      Eigen::VectorXd prev = stepper.initial(probes.q[s]);
      chi.col(0).setZero();
      X.col(0).setZero();
      for (int n = 1; n <= N; ++n) {
        Eigen::VectorXd cur = stepper.step(prev);
        chi.col(n) = 0.5 * (prev + cur);
        X.col(n) = X.col(n - 1) + chi.col(n);
        prev = std::move(cur);
      }
    }
    for (int d = 0; d < meas.n_detectors; ++d) {
      std::vector<int> rows;
      for (int r = 0; r < jac.rows(); ++r)
        if (jac.row_src[r] == s && jac.row_det[r] == d) rows.push_back(r);
      if (rows.empty()) continue;

      RowMajorMat Z(nn, N);
      {
        Eigen::VectorXd e = Eigen::VectorXd::Zero(nn);
        e[probes.det_node[d]] = 1.0;
        Eigen::VectorXd cur = stepper.lag_initial(e);
        Z.col(0) = cur;
        for (int l = 1; l < N; ++l) {
          cur = stepper.step(cur);
          Z.col(l) = cur;
        }
      }
      RowMajorMat Rb(nn, N);
      for (int ri : rows) {
        const int b = jac.row_bin[ri];
        const double inten = meas.intensity[meas.index(s, d, b)];
        if (!(inten > 0.0))
          throw std::runtime_error("jacobian_td_lowmem: non-positive intensity");
        Eigen::VectorXd col(nn);
        for (int l = 0; l < N; ++l) {
          build_r_column(X, chi, b * ws, (b + 1) * ws, l, dt, col);
          Rb.col(l) = col;
        }
        Eigen::VectorXd diag(nn), epair(ne);
        parallel_for(nn, jobs,
                     [&](int a) { diag[a] = Z.row(a).dot(Rb.row(a)); });
        parallel_for(ne, jobs, [&](int e) {
          const auto& ed = cache.edges[e];
          epair[e] =
              Z.row(ed.a).dot(Rb.row(ed.b)) + Z.row(ed.b).dot(Rb.row(ed.a));
        });
        const double scale = -1.0 / (2.0 * sys.mismatch_A * inten);
        Eigen::VectorXd mua_row(nn), musp_row(nn);
        contract_row(cache, sys.kappa_el, diag, epair, scale, mua_row, musp_row);
        jac.mua.row(ri) = mua_row.transpose();
        jac.musp.row(ri) = musp_row.transpose();
      }
    }
  }
  return jac;
}

std::string jacobian_to_csv(const JacobianBlocks& j) {
  std::ostringstream out;
  out << "source_id,detector_id,bin_id,block,node_id,value\n";
  for (int r = 0; r < j.rows(); ++r) {
    for (int k = 0; k < j.mua.cols(); ++k)
      out << j.row_src[r] << ',' << j.row_det[r] << ',' << j.row_bin[r]
          << ",mua," << k << ',' << fmt17(j.mua(r, k)) << '\n';
    for (int k = 0; k < j.musp.cols(); ++k)
      out << j.row_src[r] << ',' << j.row_det[r] << ',' << j.row_bin[r]
          << ",musp," << k << ',' << fmt17(j.musp(r, k)) << '\n';
  }
  return out.str();
}

}  // namespace dot

#include "dot/inverse.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "dot/io.hpp"

namespace dot {

namespace {
constexpr double kEdgeWeightGain = 60.0;
}  // namespace

TvRegularizer::TvRegularizer(const AssemblyCache& cache, double beta)
    : cache_(&cache), beta_(beta) {
  if (!(beta > 0.0)) throw std::invalid_argument("TvRegularizer: beta must be > 0");
  // Edge weights are lengths normalized by the total edge length and a fixed
  // dimensionless gain. Raw mm lengths put the lagged-diffusivity weights
  // (length/beta ~ 300 per edge) orders of magnitude above the data
  // curvature, freezing Gauss-Newton at near-constant iterates; the gain was
  // calibrated once on the resolution-sweep family so the tau = 0.01 penalty
  // sits one order below the median data curvature, then frozen.
  double total = 0.0;
  for (const auto& e : cache.edges) total += e.length;
  inv_total_ = kEdgeWeightGain / total;
}

double TvRegularizer::value(const Eigen::VectorXd& x) const {
  double acc = 0.0;
  for (const auto& e : cache_->edges) {
    const double d = x[e.a] - x[e.b];
    acc += e.length * inv_total_ * std::sqrt(d * d + beta_ * beta_);
  }
  return acc;
}

Eigen::VectorXd TvRegularizer::gradient(const Eigen::VectorXd& x) const {
  Eigen::VectorXd g = Eigen::VectorXd::Zero(x.size());
  for (const auto& e : cache_->edges) {
    const double d = x[e.a] - x[e.b];
    const double s =
        e.length * inv_total_ * d / std::sqrt(d * d + beta_ * beta_);
    g[e.a] += s;
    g[e.b] -= s;
  }
  return g;
}

Eigen::SparseMatrix<double> TvRegularizer::hessian(const Eigen::VectorXd& x) const {
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(cache_->edges.size() * 4);
  for (const auto& e : cache_->edges) {
    const double d = x[e.a] - x[e.b];
    const double w =
        e.length * inv_total_ / std::sqrt(d * d + beta_ * beta_);
    trip.emplace_back(e.a, e.a, w);
    trip.emplace_back(e.b, e.b, w);
    trip.emplace_back(e.a, e.b, -w);
    trip.emplace_back(e.b, e.a, -w);
  }
  Eigen::SparseMatrix<double> h(x.size(), x.size());
  h.setFromTriplets(trip.begin(), trip.end());
  return h;
}

CgResult pcg(const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& apply,
             const Eigen::VectorXd& b, const Eigen::VectorXd& jacobi_diag,
             int max_iter, double rel_tol) {
  CgResult out;
  const double bnorm = b.norm();
  out.x = Eigen::VectorXd::Zero(b.size());
  if (bnorm == 0.0) {
    out.converged = true;
    return out;
  }
  Eigen::VectorXd prec = jacobi_diag.cwiseMax(1e-300).cwiseInverse();
  Eigen::VectorXd r = b;
  Eigen::VectorXd z = prec.cwiseProduct(r);
  Eigen::VectorXd p = z;
  double rz = r.dot(z);
  for (int it = 0; it < max_iter; ++it) {
    const Eigen::VectorXd ap = apply(p);
    const double pap = p.dot(ap);
    if (!(pap > 0.0)) break;  // indefinite or numerically null direction
    const double alpha = rz / pap;
    out.x += alpha * p;
    r -= alpha * ap;
    out.iterations = it + 1;
    out.rel_residual = r.norm() / bnorm;
    if (out.rel_residual < rel_tol) {
      out.converged = true;
      return out;
    }
    z = prec.cwiseProduct(r);
    const double rz_new = r.dot(z);
    p = z + (rz_new / rz) * p;
    rz = rz_new;
  }
  out.rel_residual = r.norm() / bnorm;
  return out;
}

void ReconSettings::validate() const {
  if (outer_iterations < 1 || cg_max_inner < 1 || !(cg_rel_tol > 0.0) ||
      !(tv_tau > 0.0) || !(tv_beta > 0.0) || !(ls_shrink > 0.0 && ls_shrink < 1.0) ||
      !(ls_armijo > 0.0) || ls_max_backtracks < 1 || !(clamp_min > 0.0))
    throw std::invalid_argument("ReconSettings: all fields must be positive");
}

namespace {

struct Parameterization {
  int nn = 0;
  bool joint = true;
  double mua0 = 0.0, musp0 = 0.0, n = 1.4;
  Eigen::VectorXd musp_frozen;  // used when !joint

  int size() const { return joint ? 2 * nn : nn; }

  OpticalField field(const Eigen::VectorXd& x, double clamp_min) const {
    OpticalField f;
    f.n = n;
    f.mua = (x.head(nn) * mua0).cwiseMax(clamp_min);
    f.musp = joint ? Eigen::VectorXd((x.tail(nn) * musp0).cwiseMax(clamp_min))
                   : musp_frozen;
    return f;
  }

  Eigen::VectorXd clamp(const Eigen::VectorXd& x, double clamp_min) const {
    Eigen::VectorXd out = x;
    out.head(nn) = out.head(nn).cwiseMax(clamp_min / mua0);
    if (joint) out.tail(nn) = out.tail(nn).cwiseMax(clamp_min / musp0);
    return out;
  }
};

struct ModelEval {
  Measurement meas;
  Eigen::VectorXd residual;  // over data-mask entries, model - data
  JacobianBlocks jac;        // rows aligned with residual
  bool mask_ok = true;
};

// Forward-evaluates the model and aligns validity with the data mask.
// mask_ok=false means some retained data entry fell below the model's
// floors (treated as an infinite objective by the line search).
ModelEval evaluate_model(const ReconProblem& prob, const ReconSettings& st,
                         const OpticalField& field, const Probes& probes,
                         bool with_jacobian) {
  ModelEval ev;
  const FemSystem sys = assemble(*prob.mesh, *prob.cache, field);
  Eigen::MatrixXd fields;
  std::vector<Eigen::MatrixXd> hists;
  // Representability floors apply to data generation; the model side only
  // needs positive intensities on the retained entries. Recomputing floors
  // per iterate would make the mask move under the line search.
  ForwardOptions model_opt = prob.forward;
  model_opt.td_floor_rel = 0.0;
  model_opt.td_floor_global = 0.0;
  // Keeping every TD history in memory is the fast path; past the budget the
  // Jacobian falls back to recomputing sequences source by source.
  const bool lowmem =
      st.mode == Mode::TD && with_jacobian &&
      jacobian_td_bytes(sys, probes, prob.grid) > std::size_t{2} << 30;
  try {
    if (st.mode == Mode::CW) {
      ev.meas = measure_cw(sys, probes, model_opt,
                           with_jacobian ? &fields : nullptr);
    } else {
      ev.meas = measure_td(sys, probes, prob.grid, model_opt,
                           (with_jacobian && !lowmem) ? &hists : nullptr);
    }
  } catch (const std::runtime_error&) {
    // Non-positive exitance or solver failure on a trial iterate: reject it
    // through the line search rather than aborting the reconstruction.
    ev.mask_ok = false;
    return ev;
  }
  for (int i = 0; i < ev.meas.size(); ++i) {
    if (prob.data.valid[i] && !ev.meas.valid[i]) {
      ev.mask_ok = false;
      return ev;
    }
  }
  // Restrict to the data mask so residual and Jacobian rows align.
  ev.meas.valid = prob.data.valid;
  ev.residual.resize(prob.data.valid_count());
  int r = 0;
  for (int i = 0; i < ev.meas.size(); ++i)
    if (prob.data.valid[i]) ev.residual[r++] = ev.meas.y[i] - prob.data.y[i];
  if (with_jacobian) {
    if (st.mode == Mode::CW) {
      const Eigen::MatrixXd adj = adjoint_fields(sys, probes, st.jobs);
      ev.jac = jacobian_cw(sys, probes, fields, adj, ev.meas, st.jobs);
    } else if (lowmem) {
      ev.jac = jacobian_td_lowmem(sys, probes, prob.grid, ev.meas, st.jobs);
    } else {
      ev.jac = jacobian_td(sys, probes, prob.grid, hists, ev.meas, st.jobs);
    }
  }
  return ev;
}

}  // namespace

Objective objective(const ReconProblem& prob, const OpticalField& field,
                    const ReconSettings& settings) {
  field.validate(*prob.mesh);
  const Probes probes =
      make_probes(*prob.mesh, *prob.locator, prob.layout, prob.forward);
  const ModelEval ev = evaluate_model(prob, settings, field, probes, false);
  if (!ev.mask_ok)
    throw std::runtime_error("objective: model lost retained data entries");
  Objective obj;
  obj.misfit = ev.residual.squaredNorm();
  const TvRegularizer tv(*prob.cache, settings.tv_beta);
  obj.reg = settings.tv_tau * tv.value(field.mua / prob.mua0);
  if (settings.unknowns == Unknowns::Joint)
    obj.reg += settings.tv_tau * tv.value(field.musp / prob.musp0);
  obj.total = obj.misfit + obj.reg;
  return obj;
}

Measurement calibrate_reference(const Measurement& data,
                                const Measurement& homog_data_mesh,
                                const Measurement& homog_model_mesh) {
  if (data.size() != homog_data_mesh.size() ||
      data.size() != homog_model_mesh.size())
    throw std::invalid_argument("calibrate_reference: dimension mismatch");
  Measurement out = data;
  for (int i = 0; i < out.size(); ++i) {
    out.valid[i] = data.valid[i] && homog_data_mesh.valid[i] &&
                   homog_model_mesh.valid[i];
    if (out.valid[i]) {
      out.y[i] = data.y[i] - homog_data_mesh.y[i] + homog_model_mesh.y[i];
      out.intensity[i] = std::exp(out.y[i]);
    } else {
      out.y[i] = 0.0;
      out.intensity[i] = 0.0;
    }
  }
  return out;
}

ReconResult gauss_newton(const ReconProblem& prob, const OpticalField& init,
                         const ReconSettings& st) {
  st.validate();
  init.validate(*prob.mesh);
  prob.data.validate();
  const int nn = prob.mesh->node_count();

  Parameterization par;
  par.nn = nn;
  par.joint = st.unknowns == Unknowns::Joint;
  par.mua0 = prob.mua0;
  par.musp0 = prob.musp0;
  par.n = prob.n;
  par.musp_frozen = init.musp;

  Eigen::VectorXd x(par.size());
  x.head(nn) = init.mua / par.mua0;
  if (par.joint) x.tail(nn) = init.musp / par.musp0;
  x = par.clamp(x, st.clamp_min);

  const Probes probes =
      make_probes(*prob.mesh, *prob.locator, prob.layout, prob.forward);
  const TvRegularizer tv(*prob.cache, st.tv_beta);

  auto tv_value = [&](const Eigen::VectorXd& v) {
    double acc = tv.value(v.head(nn));
    if (par.joint) acc += tv.value(v.tail(nn));
    return acc;
  };
  auto tv_gradient = [&](const Eigen::VectorXd& v) {
    Eigen::VectorXd g(par.size());
    g.head(nn) = tv.gradient(v.head(nn));
    if (par.joint) g.tail(nn) = tv.gradient(v.tail(nn));
    return g;
  };

  ReconResult result;
  result.termination = "max_iterations";

  ModelEval ev = evaluate_model(prob, st, par.field(x, st.clamp_min), probes, true);
  if (!ev.mask_ok)
    throw std::runtime_error(
        "gauss_newton: initial model loses retained data entries");
  double misfit = ev.residual.squaredNorm();
  double reg = st.tv_tau * tv_value(x);
  double total = misfit + reg;

  for (int iter = 0; iter < st.outer_iterations; ++iter) {
    const auto t0 = std::chrono::steady_clock::now();

    // Scaled Jacobian: d y / d x = J_phys * mu0 blockwise.
    const int rows = ev.jac.rows();
    Eigen::MatrixXd J(rows, par.size());
    J.leftCols(nn) = ev.jac.mua * par.mua0;
    if (par.joint) J.rightCols(nn) = ev.jac.musp * par.musp0;

    // Full gradient of misfit + tau TV.
    const Eigen::VectorXd g =
        2.0 * (J.transpose() * ev.residual) + st.tv_tau * tv_gradient(x);

    Eigen::SparseMatrix<double> Htv(par.size(), par.size());
    {
      const Eigen::SparseMatrix<double> h1 = tv.hessian(x.head(nn));
      if (par.joint) {
        const Eigen::SparseMatrix<double> h2 = tv.hessian(x.tail(nn));
        std::vector<Eigen::Triplet<double>> trip;
        trip.reserve(h1.nonZeros() + h2.nonZeros());
        for (int k = 0; k < h1.outerSize(); ++k)
          for (Eigen::SparseMatrix<double>::InnerIterator it(h1, k); it; ++it)
            trip.emplace_back(it.row(), it.col(), it.value());
        for (int k = 0; k < h2.outerSize(); ++k)
          for (Eigen::SparseMatrix<double>::InnerIterator it(h2, k); it; ++it)
            trip.emplace_back(nn + it.row(), nn + it.col(), it.value());
        Htv.setFromTriplets(trip.begin(), trip.end());
      } else {
        Htv = h1;
      }
    }

    auto apply = [&](const Eigen::VectorXd& v) -> Eigen::VectorXd {
      return 2.0 * (J.transpose() * (J * v)) + st.tv_tau * (Htv * v);
    };
    Eigen::VectorXd diag = 2.0 * J.colwise().squaredNorm().transpose();
    for (int k = 0; k < par.size(); ++k)
      diag[k] += st.tv_tau * Htv.coeff(k, k);

    const double gnorm = g.lpNorm<Eigen::Infinity>();
    if (gnorm < 1e-12 * std::max(1.0, total)) {
      result.termination = "converged";
      break;
    }

    const CgResult cg = pcg(apply, -g, diag, st.cg_max_inner, st.cg_rel_tol);
    if (!cg.converged && cg.rel_residual >= 0.999) {
      result.termination = "cg_stagnated";
      break;
    }
    const Eigen::VectorXd& delta = cg.x;
    if (delta.lpNorm<Eigen::Infinity>() < 1e-14) {
      result.termination = "converged";
      break;
    }

    // Backtracking line search with projection onto the positivity clamp.
    const double slope = g.dot(delta);
    double alpha = 1.0;
    int backtracks = 0;
    bool accepted = false;
    Eigen::VectorXd x_trial;
    double misfit_t = 0.0, reg_t = 0.0, total_t = 0.0;
    for (; backtracks <= st.ls_max_backtracks; ++backtracks) {
      x_trial = par.clamp(x + alpha * delta, st.clamp_min);
      const ModelEval trial = evaluate_model(
          prob, st, par.field(x_trial, st.clamp_min), probes, false);
      if (trial.mask_ok) {
        misfit_t = trial.residual.squaredNorm();
        reg_t = st.tv_tau * tv_value(x_trial);
        total_t = misfit_t + reg_t;
        if (total_t <= total + st.ls_armijo * alpha * slope) {
          accepted = true;
          break;
        }
      }
      alpha *= st.ls_shrink;
    }
    if (!accepted) {
      result.termination = "line_search_failed";
      break;
    }

    const double step_norm = (x_trial - x).norm();
    x = x_trial;
    misfit = misfit_t;
    reg = reg_t;
    total = total_t;
    ev = evaluate_model(prob, st, par.field(x, st.clamp_min), probes, true);
    if (!ev.mask_ok) {
      result.termination = "mask_violation";
      break;
    }

    IterationRecord rec;
    rec.iteration = iter;
    rec.misfit = misfit;
    rec.reg = reg;
    rec.total = total;
    rec.step_norm = step_norm;
    rec.cg_iterations = cg.iterations;
    rec.backtracks = backtracks;
    rec.wall_ms = std::chrono::duration<double, std::milli>(
                      std::chrono::steady_clock::now() - t0)
                      .count();
    result.trace.push_back(rec);
  }

  result.field = par.field(x, st.clamp_min);
  return result;
}

std::string trace_to_csv(const std::vector<IterationRecord>& trace) {
  std::ostringstream out;
  // Wall times stay out of the CSV so identical runs produce identical bytes;
  // they are reported in the run manifest instead.
  out << "iteration,misfit,reg,total,step_norm,cg_iterations,backtracks\n";
  for (const auto& r : trace)
    out << r.iteration << ',' << fmt17(r.misfit) << ',' << fmt17(r.reg) << ','
        << fmt17(r.total) << ',' << fmt17(r.step_norm) << ','
        << r.cg_iterations << ',' << r.backtracks << '\n';
  return out.str();
}

std::string recon_to_csv(const Mesh& mesh, const OpticalField& field) {
  std::ostringstream out;
  out << "node_id,x,y,mua,musp\n";
  for (int i = 0; i < mesh.node_count(); ++i)
    out << i << ',' << fmt17(mesh.nodes[i].x) << ',' << fmt17(mesh.nodes[i].y)
        << ',' << fmt17(field.mua[i]) << ',' << fmt17(field.musp[i]) << '\n';
  return out.str();
}

}  // namespace dot

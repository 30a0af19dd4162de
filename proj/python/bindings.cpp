#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "penkf/harness.hpp"

namespace py = pybind11;
using namespace penkf;

namespace {

py::dict estimate_to_dict(const PrecisionEstimate& est) {
  py::dict d;
  d["theta"] = est.theta();
  d["w"] = est.w;
  d["edges"] = est.edge_count;
  d["kkt"] = est.kkt;
  d["sweeps"] = est.sweeps;
  return d;
}

GlassoOptions make_options(double tol, int max_sweeps) {
  GlassoOptions o;
  o.tol = tol;
  o.max_sweeps = max_sweeps;
  return o;
}

ObservationOperator make_obs(const Matrix& h, const Vector& r_var) {
  return ObservationOperator::from_dense(h, DiagonalCovariance(r_var));
}

py::dict summary_row(const SummaryRow& r) {
  py::dict d;
  d["method"] = r.method;
  d["q10"] = r.q10;
  d["q50"] = r.q50;
  d["mean"] = r.mean;
  d["q90"] = r.q90;
  d["sd_q10"] = r.sd_q10;
  d["sd_q50"] = r.sd_q50;
  d["sd_mean"] = r.sd_mean;
  d["sd_q90"] = r.sd_q90;
  d["divergent"] = r.divergent;
  return d;
}

}  // namespace

PYBIND11_MODULE(_penkf, m) {
  m.doc() = "Penalized ensemble Kalman filter core";

  py::register_exception<Error>(m, "PenkfError", PyExc_RuntimeError);

  m.def("sample_mean", [](const Matrix& members) { return sample_mean(Ensemble(members)); },
        py::arg("members"), "Mean of the columns of a p x n ensemble.");
  m.def("sample_covariance",
        [](const Matrix& members) { return sample_covariance(Ensemble(members)).matrix(); },
        py::arg("members"), "Unbiased sample covariance of a p x n ensemble.");
  m.def("rmse", &rmse, py::arg("estimate"), py::arg("truth"));

  m.def(
      "glasso",
      [](const Matrix& s, py::object penalty, bool penalize_diagonal, double tol, int max_sweeps) {
        PenaltyMatrix pen;
        if (py::isinstance<py::float_>(penalty) || py::isinstance<py::int_>(penalty)) {
          pen = PenaltyMatrix::scalar(s.rows(), penalty.cast<double>(), penalize_diagonal);
        } else {
          pen = PenaltyMatrix(penalty.cast<Matrix>());
        }
        return estimate_to_dict(glasso_solve(SymmetricMatrix(s), pen, make_options(tol, max_sweeps)));
      },
      py::arg("s"), py::arg("penalty"), py::arg("penalize_diagonal") = true, py::arg("tol") = 1e-6,
      py::arg("max_sweeps") = 200,
      "Penalized precision estimate; penalty is a scalar lambda or a symmetric matrix.");
  m.def("kkt_residual",
        py::overload_cast<const Matrix&, const Matrix&, const Matrix&, const Matrix&>(&kkt_residual),
        py::arg("s"), py::arg("theta"), py::arg("w"), py::arg("penalty"));
  m.def("glasso_objective", &glasso_objective, py::arg("s"), py::arg("theta"), py::arg("penalty"));

  m.def("gaspari_cohn", &gaspari_cohn, py::arg("z"));
  m.def("build_taper", [](Index p, double c, bool cyclic) { return build_taper(p, c, cyclic).matrix(); },
        py::arg("p"), py::arg("c"), py::arg("cyclic") = true);
  m.def("sample_gain",
        [](const Matrix& pf, const Matrix& h, const Vector& r_var) {
          return sample_gain(SymmetricMatrix(pf), make_obs(h, r_var)).matrix;
        },
        py::arg("pf"), py::arg("h"), py::arg("r_var"));
  m.def("precision_form_gain",
        [](const Matrix& theta, const Matrix& h, const Vector& r_var) {
          return precision_form_gain(theta, make_obs(h, r_var));
        },
        py::arg("theta"), py::arg("h"), py::arg("r_var"));

  m.def("lorenz96_derivative", &lorenz96_derivative, py::arg("x"), py::arg("forcing") = 8.0);
  m.def(
      "lorenz96_evolve",
      [](const Vector& x, double forcing, double dt, int steps) {
        Lorenz96Config cfg;
        cfg.p = x.size();
        cfg.forcing = forcing;
        cfg.rk4_dt = dt;
        cfg.steps_per_cycle = steps;
        return lorenz96_model(cfg).evolve(x);
      },
      py::arg("x"), py::arg("forcing") = 8.0, py::arg("dt") = 0.01, py::arg("steps") = 40,
      "Advance one assimilation interval with RK4.");

  m.def("ebic",
        [](const Matrix& theta, const Matrix& s, Index n, double gamma) {
          Index edges = 0;
          for (Index j = 0; j < theta.cols(); ++j)
            for (Index i = j + 1; i < theta.rows(); ++i) edges += theta(i, j) != 0.0;
          const double p = static_cast<double>(theta.rows());
          return -2.0 * gaussian_loglik(theta, s, n) + edges * std::log(static_cast<double>(n)) +
                 4.0 * edges * gamma * std::log(p);
        },
        py::arg("theta"), py::arg("s"), py::arg("n"), py::arg("gamma"));
  m.def(
      "select_penalty",
      [](const Matrix& members, double c_min, double c_max, int points, double noise_variance,
         const std::string& criterion, double gamma, bool standardize) {
        const Ensemble ens(members);
        PathConfig cfg;
        cfg.c_grid = log_spaced_grid(c_min, c_max, points);
        cfg.base_scale = penalty_base_scale(noise_variance, ens.dim(), ens.size());
        cfg.criterion = criterion == "ebic" ? Criterion::ebic
                        : criterion == "bic" ? Criterion::bic
                                             : Criterion::automatic;
        cfg.gamma = gamma;
        cfg.standardize = standardize;
        const Selection sel = select_penalty(ens, cfg);
        py::list path;
        for (const PathPoint& pt : sel.path.points) {
          py::dict d;
          d["c"] = pt.c;
          d["lambda"] = pt.lambda;
          d["edges"] = pt.edges;
          d["loglik"] = pt.loglik;
          d["score"] = pt.score;
          d["kkt_residual"] = pt.kkt;
          path.append(d);
        }
        py::dict out;
        out["c_lambda"] = sel.c_lambda;
        out["chosen_index"] = sel.path.chosen_index;
        out["gamma"] = sel.path.gamma_used;
        out["path"] = path;
        return out;
      },
      py::arg("members"), py::arg("c_min") = 0.1, py::arg("c_max") = 10.0, py::arg("points") = 20,
      py::arg("noise_variance") = 0.5, py::arg("criterion") = "auto", py::arg("gamma") = 0.5,
      py::arg("standardize") = true);

  m.def("normalize_config", [](const std::string& text) { return print_config(parse_config(text)); },
        py::arg("config_json"), "Parse, validate and re-serialize an experiment config.");
  m.def(
      "run_experiment",
      [](const std::string& text, unsigned workers) {
        const ExperimentConfig cfg = parse_config(text);
        ExperimentResult res;
        {
          py::gil_scoped_release release;
          res = run_experiment(cfg, workers);
        }
        py::list summary;
        for (const SummaryRow& r : res.summary) summary.append(summary_row(r));
        py::dict series;
        for (std::size_t mi = 0; mi < res.trials.size(); ++mi) {
          py::list per_trial;
          for (const TrialResult& t : res.trials[mi]) per_trial.append(py::cast(t.rmse_series));
          series[py::str(res.methods[mi].spec.type)] = per_trial;
        }
        py::dict out;
        out["summary"] = summary;
        out["series"] = series;
        out["metadata"] = experiment_metadata(res).dump();
        return out;
      },
      py::arg("config_json"), py::arg("workers") = 0,
      "Run an experiment described by a JSON config; returns summary rows, RMSE series and metadata.");
}

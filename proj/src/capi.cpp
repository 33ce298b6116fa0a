#include "smmd/capi.h"

#include <cstring>
#include <string>

#include <nlohmann/json.hpp>

#include "smmd/dynamics.hpp"
#include "smmd/estimators.hpp"
#include "smmd/figures.hpp"
#include "smmd/io.hpp"
#include "smmd/kernel.hpp"
#include "smmd/net.hpp"
#include "smmd/selftest.hpp"
#include "smmd/types.hpp"

using nlohmann::json;

struct smmd_matrix_s {
  smmd::Matrix m;
};
struct smmd_kernel_s {
  smmd::Kernel k;
};
struct smmd_net_s {
  smmd::Net n;
};

namespace {

thread_local std::string g_last_error;

smmd_status fail(smmd_status code, const std::string& message) {
  g_last_error = message;
  return code;
}

template <typename Fn>
smmd_status guarded(Fn&& fn) {
  try {
    fn();
    return SMMD_OK;
  } catch (const smmd::InputError& e) {
    return fail(SMMD_ERR_INPUT, e.what());
  } catch (const smmd::NumericError& e) {
    return fail(SMMD_ERR_NUMERIC, e.what());
  } catch (const std::exception& e) {
    return fail(SMMD_ERR_INTERNAL, e.what());
  }
}

char* dup_string(const std::string& s) {
  char* out = new char[s.size() + 1];
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

smmd::Matrix require_matrix(const smmd_matrix* m, const char* which) {
  if (!m) throw smmd::InputError(std::string("null matrix argument: ") + which);
  return m->m;
}

}  // namespace

extern "C" {

const char* smmd_last_error(void) { return g_last_error.c_str(); }

void smmd_string_free(char* text) { delete[] text; }

smmd_status smmd_matrix_create(const double* row_major, size_t rows, size_t cols,
                               smmd_matrix** out) {
  return guarded([&] {
    if (!row_major || !out) throw smmd::InputError("null pointer");
    if (rows == 0 || cols == 0) throw smmd::InputError("empty matrix");
    smmd::Matrix m(rows, cols);
    for (size_t i = 0; i < rows; ++i)
      for (size_t j = 0; j < cols; ++j) m(i, j) = row_major[i * cols + j];
    *out = new smmd_matrix_s{std::move(m)};
  });
}

smmd_status smmd_matrix_read_csv(const char* path, smmd_matrix** out) {
  return guarded([&] {
    if (!path || !out) throw smmd::InputError("null pointer");
    *out = new smmd_matrix_s{smmd::read_csv_matrix(path)};
  });
}

size_t smmd_matrix_rows(const smmd_matrix* m) { return m ? m->m.rows() : 0; }
size_t smmd_matrix_cols(const smmd_matrix* m) { return m ? m->m.cols() : 0; }

smmd_status smmd_matrix_get(const smmd_matrix* m, size_t row, size_t col, double* out) {
  return guarded([&] {
    if (!m || !out) throw smmd::InputError("null pointer");
    if (row >= static_cast<size_t>(m->m.rows()) ||
        col >= static_cast<size_t>(m->m.cols()))
      throw smmd::InputError("matrix index out of range");
    *out = m->m(row, col);
  });
}

void smmd_matrix_free(smmd_matrix* m) { delete m; }

smmd_status smmd_kernel_parse(const char* text, smmd_kernel** out) {
  return guarded([&] {
    if (!text || !out) throw smmd::InputError("null pointer");
    *out = new smmd_kernel_s{smmd::Kernel::from_json(text)};
  });
}

smmd_status smmd_kernel_to_json(const smmd_kernel* k, char** json_out) {
  return guarded([&] {
    if (!k || !json_out) throw smmd::InputError("null pointer");
    *json_out = dup_string(k->k.to_json());
  });
}

smmd_status smmd_kernel_eval(const smmd_kernel* k, const double* x, const double* y,
                             size_t dim, double* out) {
  return guarded([&] {
    if (!k || !x || !y || !out) throw smmd::InputError("null pointer");
    const smmd::Vector vx = Eigen::Map<const smmd::Vector>(x, dim);
    const smmd::Vector vy = Eigen::Map<const smmd::Vector>(y, dim);
    *out = k->k.eval(vx, vy);
  });
}

void smmd_kernel_free(smmd_kernel* k) { delete k; }

smmd_status smmd_net_parse(const char* text, smmd_net** out) {
  return guarded([&] {
    if (!text || !out) throw smmd::InputError("null pointer");
    *out = new smmd_net_s{smmd::Net::from_json(text)};
  });
}

smmd_status smmd_net_to_json(const smmd_net* n, char** json_out) {
  return guarded([&] {
    if (!n || !json_out) throw smmd::InputError("null pointer");
    *json_out = dup_string(n->n.to_json());
  });
}

smmd_status smmd_net_forward(const smmd_net* n, const double* x, size_t in_dim,
                             double* out, size_t out_dim) {
  return guarded([&] {
    if (!n || !x || !out) throw smmd::InputError("null pointer");
    if (static_cast<int>(in_dim) != n->n.in_dim() ||
        static_cast<int>(out_dim) != n->n.out_dim())
      throw smmd::InputError("net dimension mismatch");
    const smmd::Vector vx = Eigen::Map<const smmd::Vector>(x, in_dim);
    const smmd::Vector vy = n->n.forward(vx);
    Eigen::Map<smmd::Vector>(out, out_dim) = vy;
  });
}

void smmd_net_free(smmd_net* n) { delete n; }

smmd_status smmd_estimate(const smmd_kernel* k, const smmd_matrix* x,
                          const smmd_matrix* y, const smmd_matrix* mu,
                          const char* options_json, char** result_json) {
  return guarded([&] {
    if (!k || !options_json || !result_json) throw smmd::InputError("null pointer");
    const smmd::Matrix mx = require_matrix(x, "x");
    const smmd::Matrix my = require_matrix(y, "y");
    json opts;
    try {
      opts = json::parse(options_json);
    } catch (const json::exception& e) {
      throw smmd::InputError(std::string("options parse error: ") + e.what());
    }
    const std::string method = opts.value("method", std::string("mmd2_unbiased"));
    const double lambda = opts.value("lambda", 1.0);
    const int support_size = opts.value("support_size", 64);

    auto support = [&]() -> smmd::Matrix {
      if (mu) return mu->m;
      return mx.topRows(std::min<Eigen::Index>(support_size, mx.rows()));
    };

    smmd::DiscrepancyEstimate est;
    if (method == "mmd2_unbiased") {
      est.value = smmd::mmd2_unbiased(k->k, mx, my);
      est.squared = true;
    } else if (method == "mmd2_biased") {
      est.value = smmd::mmd2_biased(k->k, mx, my);
      est.squared = true;
    } else if (method == "mmd2_block") {
      est.value = smmd::mmd2_block(k->k, mx, my, opts.value("blocks", 1));
      est.squared = true;
    } else if (method == "smmd") {
      est = smmd::smmd(k->k, mx, my, support(), lambda);
    } else if (method == "gcmmd") {
      const auto res = smmd::gcmmd2(k->k, mx, my, support(), lambda);
      est.value = std::sqrt(std::max(0.0, res.value2));
      est.squared = false;
      est.diag.mmd2 = res.mmd2;
      est.diag.penalty_bar_p = res.penalty_bar_p;
      est.diag.solver_iters = res.jitter_attempts;
    } else if (method == "gcmmd_lowrank") {
      const auto res = smmd::gcmmd2_lowrank(
          k->k, mx, my, support(), lambda, opts.value("chol_tol", 1e-8),
          opts.value("max_rank", 1 << 20));
      est.value = std::sqrt(std::max(0.0, res.value2));
      est.squared = false;
      est.diag.mmd2 = res.mmd2;
      est.diag.penalty_bar_p = res.penalty_bar_p;
      est.diag.cholesky_rank = res.rank;
      est.diag.rank_warning = res.rank_warning;
    } else if (method == "lipmmd") {
      const smmd::Matrix z =
          smmd::lipmmd_default_grid(mx, my, opts.value("z_points", 0));
      smmd::LipmmdState state;
      const auto res = smmd::lipmmd(k->k, mx, my, z, lambda, &state);
      est.value = res.value;
      est.squared = false;
      est.diag.solver_iters = state.solver_iters;
    } else if (method == "wasserstein1d") {
      if (mx.cols() != 1) throw smmd::InputError("wasserstein1d needs 1-d samples");
      est.value = smmd::wasserstein1d_exact(mx.col(0), my.col(0));
      est.squared = false;
    } else {
      throw smmd::InputError("unknown estimate method '" + method + "'");
    }
    *result_json = dup_string(smmd::estimate_to_json(method, est));
  });
}

smmd_status smmd_dirac_field(const char* spec_json, const char* out_csv_path,
                             const char* trajectories_csv_path) {
  return guarded([&] {
    if (!spec_json || !out_csv_path) throw smmd::InputError("null pointer");
    json j;
    try {
      j = json::parse(spec_json);
    } catch (const json::exception& e) {
      throw smmd::InputError(std::string("field spec parse error: ") + e.what());
    }
    smmd::DiracLossSpec loss;
    loss.kind = smmd::dirac_loss_from_name(j.value("loss", std::string("MMD")));
    loss.lambda = j.value("lambda", 1.0);
    loss.gp_weight = j.value("gp_weight", 1.0);
    smmd::DiracGridSpec grid;
    grid.theta_min = j.value("theta_min", grid.theta_min);
    grid.theta_max = j.value("theta_max", grid.theta_max);
    grid.inv_psi_min = j.value("inv_psi_min", grid.inv_psi_min);
    grid.inv_psi_max = j.value("inv_psi_max", grid.inv_psi_max);
    grid.theta_count = j.value("theta_count", grid.theta_count);
    grid.inv_psi_count = j.value("inv_psi_count", grid.inv_psi_count);
    grid.log_spaced = j.value("log_spaced", true);

    const auto field = smmd::dirac_field(loss, grid);
    smmd::write_csv(out_csv_path, smmd::VectorFieldGrid::csv_header(), field.csv_rows());

    if (trajectories_csv_path && j.contains("simulate")) {
      std::vector<double> rows;
      int traj_id = 0;
      for (const auto& sim : j.at("simulate")) {
        const double theta0 = sim.at("theta").get<double>();
        const double inv_psi0 = sim.at("inv_psi").get<double>();
        const int steps = sim.value("steps", 10000);
        const double h = sim.value("step_size", 0.05);
        const auto traj = smmd::simulate(loss, theta0, 1.0 / inv_psi0, steps, h);
        for (std::size_t s = 0; s < traj.points.size(); ++s) {
          rows.push_back(traj_id);
          rows.push_back(static_cast<double>(s));
          rows.push_back(traj.points[s][0]);
          rows.push_back(1.0 / traj.points[s][1]);
          rows.push_back(traj.diverged ? 1.0 : 0.0);
        }
        ++traj_id;
      }
      smmd::Matrix m(static_cast<Eigen::Index>(rows.size()) / 5, 5);
      for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (int c = 0; c < 5; ++c) m(i, c) = rows[i * 5 + c];
      smmd::write_csv(trajectories_csv_path, "trajectory,step,theta,inv_psi,diverged", m);
    }
  });
}

smmd_status smmd_isolines(const char* spec_json, const char* out_csv_path) {
  return guarded([&] {
    if (!spec_json || !out_csv_path) throw smmd::InputError("null pointer");
    json j;
    try {
      j = json::parse(spec_json);
    } catch (const json::exception& e) {
      throw smmd::InputError(std::string("isolines spec parse error: ") + e.what());
    }
    smmd::IsolineSpec spec;
    if (j.contains("mus")) spec.mus = j.at("mus").get<std::vector<double>>();
    if (j.contains("sigmas")) spec.sigmas = j.at("sigmas").get<std::vector<double>>();
    spec.distance = j.value("distance", spec.distance);
    if (j.contains("bandwidths"))
      spec.bandwidths = j.at("bandwidths").get<std::vector<double>>();
    if (j.contains("psi_grid")) spec.psi_grid = j.at("psi_grid").get<std::vector<double>>();
    spec.lambda = j.value("lambda", spec.lambda);
    spec.n_samples = j.value("n_samples", spec.n_samples);
    spec.support_size = j.value("support_size", spec.support_size);
    spec.seed = j.value("seed", spec.seed);
    spec.p_mean = j.value("p_mean", spec.p_mean);
    spec.p_sigma = j.value("p_sigma", spec.p_sigma);
    smmd::write_csv(out_csv_path, smmd::isolines_csv_header(), smmd::isolines(spec));
  });
}

smmd_status smmd_critic_field(const char* spec_json, const char* out_csv_path) {
  return guarded([&] {
    if (!spec_json || !out_csv_path) throw smmd::InputError("null pointer");
    json j;
    try {
      j = json::parse(spec_json);
    } catch (const json::exception& e) {
      throw smmd::InputError(std::string("critic field spec parse error: ") + e.what());
    }
    smmd::CriticFieldSpec spec;
    auto read_pair = [&](const char* key, double* out) {
      if (j.contains(key)) {
        const auto v = j.at(key).get<std::vector<double>>();
        if (v.size() != 2) throw smmd::InputError(std::string(key) + " needs 2 entries");
        out[0] = v[0];
        out[1] = v[1];
      }
    };
    read_pair("p_mean", spec.p_mean);
    read_pair("p_sigma", spec.p_sigma);
    read_pair("q_mean", spec.q_mean);
    read_pair("q_sigma", spec.q_sigma);
    spec.bandwidth = j.value("bandwidth", spec.bandwidth);
    spec.lambda = j.value("lambda", spec.lambda);
    spec.n_samples = j.value("n_samples", spec.n_samples);
    spec.support_size = j.value("support_size", spec.support_size);
    spec.x0_min = j.value("x0_min", spec.x0_min);
    spec.x0_max = j.value("x0_max", spec.x0_max);
    spec.x1_min = j.value("x1_min", spec.x1_min);
    spec.x1_max = j.value("x1_max", spec.x1_max);
    spec.grid_count = j.value("grid_count", spec.grid_count);
    spec.seed = j.value("seed", spec.seed);
    smmd::write_csv(out_csv_path, smmd::critic_field_csv_header(),
                    smmd::critic_field(spec));
  });
}

smmd_status smmd_train(const char* config_json, const char* out_dir) {
  return guarded([&] {
    if (!config_json || !out_dir) throw smmd::InputError("null pointer");
    const smmd::TrainConfig config = smmd::TrainConfig::from_json(config_json);
    const smmd::TrainHistory hist = smmd::train_toy(config);
    const std::string dir(out_dir);
    smmd::write_csv(dir + "/history.csv", smmd::TrainHistory::csv_header(), hist.rows);
    smmd::write_csv(dir + "/conditioning.csv", smmd::TrainHistory::cond_csv_header(),
                    hist.cond_rows);
    smmd::write_text_file(dir + "/config.json", config.to_json());
    smmd::write_text_file(dir + "/generator.json", hist.final_generator);
    smmd::write_text_file(dir + "/critic.json", hist.final_critic);
    for (const auto& [step, text] : hist.generator_checkpoints)
      smmd::write_text_file(dir + "/generator_step" + std::to_string(step) + ".json", text);
    for (const auto& [step, text] : hist.critic_checkpoints)
      smmd::write_text_file(dir + "/critic_step" + std::to_string(step) + ".json", text);
  });
}

smmd_status smmd_selftest(const char* name_filter, int verbose, int include_slow,
                          int* failures_out) {
  return guarded([&] {
    const int failures = smmd::run_selftest(name_filter ? name_filter : "",
                                            verbose != 0, include_slow != 0);
    if (failures_out) *failures_out = failures;
  });
}

}  // extern "C"

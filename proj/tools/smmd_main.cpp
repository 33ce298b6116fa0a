// Command-line front end. Everything goes through the C API of libsmmd; this
// file only parses flags, assembles spec JSON, and maps status codes to exit
// codes (0 ok, 2 input error, 3 numerical error).

#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "smmd/capi.h"

using nlohmann::json;

namespace {

int report(smmd_status status) {
  if (status != SMMD_OK) {
    const char* kind = status == SMMD_ERR_INPUT ? "input"
                       : status == SMMD_ERR_NUMERIC ? "numerical"
                                                    : "internal";
    const json diag{{"error", smmd_last_error()}, {"kind", kind},
                    {"exit_code", static_cast<int>(status)}};
    std::fprintf(stderr, "%s\n", diag.dump().c_str());
  }
  return static_cast<int>(status);
}

std::string kernel_json_from_flag(const std::string& kernel_flag) {
  // Accepts inline JSON or a path to a JSON file.
  if (!kernel_flag.empty() && kernel_flag.front() == '{') return kernel_flag;
  FILE* f = std::fopen(kernel_flag.c_str(), "rb");
  if (!f) return kernel_flag;  // let the library produce the parse error
  std::string text;
  char buf[4096];
  size_t got;
  while ((got = std::fread(buf, 1, sizeof buf, f)) > 0) text.append(buf, got);
  std::fclose(f);
  return text;
}

struct Handle {
  smmd_matrix* m = nullptr;
  ~Handle() { smmd_matrix_free(m); }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"kernel discrepancies (MMD / SMMD / GCMMD / LipMMD), critic "
               "networks and toy adversarial dynamics"};
  app.require_subcommand(1);

  // ---- estimate ----
  auto* estimate = app.add_subcommand("estimate", "run an estimator on CSV data");
  std::string x_path, y_path, mu_path, kernel_flag = R"({"type":"gaussian","bandwidth":1.0})";
  std::string method = "mmd2_unbiased", out_path;
  double lambda = 1.0, chol_tol = 1e-8;
  int blocks = 1, support_size = 64, max_rank = 1 << 20, z_points = 0;
  estimate->add_option("--x", x_path, "CSV with P samples (headerless, row per sample)")
      ->required();
  estimate->add_option("--y", y_path, "CSV with Q samples")->required();
  estimate->add_option("--mu", mu_path, "CSV with mu samples (default: shares --x)");
  estimate->add_option("--kernel", kernel_flag, "kernel JSON (inline or file path)");
  estimate->add_option("--method", method,
                       "mmd2_unbiased|mmd2_biased|mmd2_block|smmd|gcmmd|"
                       "gcmmd_lowrank|lipmmd|wasserstein1d");
  estimate->add_option("--lambda", lambda, "RKHS regularization weight");
  estimate->add_option("--blocks", blocks, "block count for mmd2_block");
  estimate->add_option("--support-size", support_size,
                       "support points taken from --x when --mu is absent");
  estimate->add_option("--chol-tol", chol_tol, "incomplete Cholesky residual tolerance");
  estimate->add_option("--max-rank", max_rank, "incomplete Cholesky rank cap");
  estimate->add_option("--z-points", z_points, "LipMMD grid points per dimension");
  estimate->add_option("--out", out_path, "write the result JSON here (default stdout)");

  // ---- field ----
  auto* field = app.add_subcommand("field", "DiracGAN parameter-space vector field");
  std::string loss = "MMD", field_out = "field.csv", traj_out;
  double f_lambda = 1.0, gp_weight = 1.0;
  double theta_min = 0.25, theta_max = 20.0, inv_psi_min = 0.25, inv_psi_max = 20.0;
  int theta_count = 40, inv_psi_count = 40;
  bool linear_spaced = false;
  std::vector<std::string> simulate_from;
  int sim_steps = 10000;
  double sim_step_size = 0.5;
  field->add_option("--loss", loss,
                    "MMD|MMD-GP|MMD-GP-Unif|SN-MMD|Sobolev-MMD|"
                    "CenteredSobolev-MMD|LipMMD|GC-MMD|SMMD");
  field->add_option("--lambda", f_lambda, "loss lambda");
  field->add_option("--gp-weight", gp_weight, "penalty weight for GP/Sobolev losses");
  field->add_option("--theta-min", theta_min);
  field->add_option("--theta-max", theta_max);
  field->add_option("--theta-count", theta_count);
  field->add_option("--inv-psi-min", inv_psi_min);
  field->add_option("--inv-psi-max", inv_psi_max);
  field->add_option("--inv-psi-count", inv_psi_count);
  field->add_flag("--linear-spaced", linear_spaced, "linear instead of log spacing");
  field->add_option("--out", field_out, "field CSV path");
  field->add_option("--simulate-from", simulate_from,
                    "theta,inv_psi start (repeatable); writes trajectories CSV");
  field->add_option("--simulate-steps", sim_steps);
  field->add_option("--simulate-step-size", sim_step_size);
  field->add_option("--trajectories-out", traj_out, "trajectories CSV path");

  // ---- isolines ----
  auto* iso = app.add_subcommand("isolines",
                                 "log-distance map between 1-d Gaussians");
  std::string iso_distance = "mmd", iso_out = "isolines.csv";
  std::vector<double> mus, sigmas, bandwidths, psi_grid;
  double iso_lambda = 1.0;
  int iso_n = 1024, iso_support = 64;
  std::uint64_t iso_seed = 0;
  iso->add_option("--distance", iso_distance, "mmd|gcmmd|opt_smmd|opt_gcmmd");
  iso->add_option("--mus", mus, "mu grid values")->expected(-1);
  iso->add_option("--sigmas", sigmas, "sigma grid values")->expected(-1);
  iso->add_option("--bandwidths", bandwidths, "kernel bandwidths (mmd/gcmmd)")
      ->expected(-1);
  iso->add_option("--psi-grid", psi_grid, "psi grid (opt distances)")->expected(-1);
  iso->add_option("--lambda", iso_lambda);
  iso->add_option("--n-samples", iso_n, "samples per cell");
  iso->add_option("--support-size", iso_support);
  iso->add_option("--seed", iso_seed);
  iso->add_option("--out", iso_out);

  // ---- critic-field ----
  auto* cf = app.add_subcommand("critic-field",
                                "gradient field of the GCMMD witness between "
                                "two 2-d Gaussians");
  std::vector<double> p_mean{-1.0, 0.0}, p_sigma{0.5, 0.5}, q_mean{1.0, 0.0},
      q_sigma{0.5, 0.5};
  double cf_bw = 1.0, cf_lambda = 1.0;
  int cf_n = 256, cf_support = 64, cf_grid = 20;
  double x0_min = -3, x0_max = 3, x1_min = -3, x1_max = 3;
  std::uint64_t cf_seed = 0;
  std::string cf_out = "critic_field.csv";
  cf->add_option("--p-mean", p_mean)->expected(2);
  cf->add_option("--p-sigma", p_sigma)->expected(2);
  cf->add_option("--q-mean", q_mean)->expected(2);
  cf->add_option("--q-sigma", q_sigma)->expected(2);
  cf->add_option("--bandwidth", cf_bw);
  cf->add_option("--lambda", cf_lambda);
  cf->add_option("--n-samples", cf_n);
  cf->add_option("--support-size", cf_support);
  cf->add_option("--grid-count", cf_grid);
  cf->add_option("--x0-min", x0_min);
  cf->add_option("--x0-max", x0_max);
  cf->add_option("--x1-min", x1_min);
  cf->add_option("--x1-max", x1_max);
  cf->add_option("--seed", cf_seed);
  cf->add_option("--out", cf_out);

  // ---- train ----
  auto* train = app.add_subcommand("train", "toy adversarial training loop");
  std::string config_path, out_dir = ".";
  train->add_option("--config", config_path, "training config JSON file")->required();
  train->add_option("--out-dir", out_dir, "output directory (must exist)");

  // ---- selftest ----
  auto* selftest = app.add_subcommand("selftest", "run the built-in oracle battery");
  std::string filter;
  bool verbose = false, full = false;
  selftest->add_option("--filter", filter, "run checks whose name contains this");
  selftest->add_flag("--verbose", verbose);
  selftest->add_flag("--full", full, "include the slow training checks");

  CLI11_PARSE(app, argc, argv);

  if (*estimate) {
    Handle x, y, mu;
    if (auto st = smmd_matrix_read_csv(x_path.c_str(), &x.m)) return report(st);
    if (auto st = smmd_matrix_read_csv(y_path.c_str(), &y.m)) return report(st);
    if (!mu_path.empty())
      if (auto st = smmd_matrix_read_csv(mu_path.c_str(), &mu.m)) return report(st);
    smmd_kernel* kernel = nullptr;
    if (auto st = smmd_kernel_parse(kernel_json_from_flag(kernel_flag).c_str(), &kernel))
      return report(st);
    json opts{{"method", method},       {"lambda", lambda},
              {"blocks", blocks},       {"support_size", support_size},
              {"chol_tol", chol_tol},   {"max_rank", max_rank},
              {"z_points", z_points}};
    char* result = nullptr;
    const smmd_status st =
        smmd_estimate(kernel, x.m, y.m, mu.m, opts.dump().c_str(), &result);
    smmd_kernel_free(kernel);
    if (st != SMMD_OK) return report(st);
    if (out_path.empty()) {
      std::printf("%s\n", result);
    } else {
      FILE* f = std::fopen(out_path.c_str(), "wb");
      if (!f) {
        std::fprintf(stderr, "error: cannot write '%s'\n", out_path.c_str());
        smmd_string_free(result);
        return 2;
      }
      std::fprintf(f, "%s\n", result);
      std::fclose(f);
    }
    smmd_string_free(result);
    return 0;
  }

  if (*field) {
    json spec{{"loss", loss},
              {"lambda", f_lambda},
              {"gp_weight", gp_weight},
              {"theta_min", theta_min},
              {"theta_max", theta_max},
              {"theta_count", theta_count},
              {"inv_psi_min", inv_psi_min},
              {"inv_psi_max", inv_psi_max},
              {"inv_psi_count", inv_psi_count},
              {"log_spaced", !linear_spaced}};
    if (!simulate_from.empty()) {
      json sims = json::array();
      for (const auto& s : simulate_from) {
        const auto comma = s.find(',');
        if (comma == std::string::npos) {
          std::fprintf(stderr, "error: --simulate-from expects theta,inv_psi\n");
          return 2;
        }
        sims.push_back(json{{"theta", std::stod(s.substr(0, comma))},
                            {"inv_psi", std::stod(s.substr(comma + 1))},
                            {"steps", sim_steps},
                            {"step_size", sim_step_size}});
      }
      spec["simulate"] = sims;
      if (traj_out.empty()) traj_out = "trajectories.csv";
    }
    return report(smmd_dirac_field(spec.dump().c_str(), field_out.c_str(),
                                   traj_out.empty() ? nullptr : traj_out.c_str()));
  }

  if (*iso) {
    if (mus.empty())
      for (int i = 0; i <= 20; ++i) mus.push_back(-1.0 + 0.1 * i);
    if (sigmas.empty())
      for (int i = 0; i <= 10; ++i) sigmas.push_back(0.02 + 0.05 * i);
    if (bandwidths.empty()) bandwidths = {0.1, 10.0};
    if (psi_grid.empty())
      for (int e = -6; e <= 6; ++e) psi_grid.push_back(std::pow(2.0, e));
    json spec{{"distance", iso_distance}, {"lambda", iso_lambda},
              {"n_samples", iso_n},       {"support_size", iso_support},
              {"seed", iso_seed},         {"mus", mus},
              {"sigmas", sigmas},         {"bandwidths", bandwidths},
              {"psi_grid", psi_grid}};
    return report(smmd_isolines(spec.dump().c_str(), iso_out.c_str()));
  }

  if (*cf) {
    json spec{{"p_mean", p_mean},     {"p_sigma", p_sigma},
              {"q_mean", q_mean},     {"q_sigma", q_sigma},
              {"bandwidth", cf_bw},   {"lambda", cf_lambda},
              {"n_samples", cf_n},    {"support_size", cf_support},
              {"grid_count", cf_grid},{"x0_min", x0_min},
              {"x0_max", x0_max},     {"x1_min", x1_min},
              {"x1_max", x1_max},     {"seed", cf_seed}};
    return report(smmd_critic_field(spec.dump().c_str(), cf_out.c_str()));
  }

  if (*train) {
    FILE* f = std::fopen(config_path.c_str(), "rb");
    if (!f) {
      std::fprintf(stderr, "error: cannot open '%s'\n", config_path.c_str());
      return 2;
    }
    std::string text;
    char buf[4096];
    size_t got;
    while ((got = std::fread(buf, 1, sizeof buf, f)) > 0) text.append(buf, got);
    std::fclose(f);
    return report(smmd_train(text.c_str(), out_dir.c_str()));
  }

  if (*selftest) {
    int failures = 0;
    const smmd_status st = smmd_selftest(filter.empty() ? nullptr : filter.c_str(),
                                         verbose ? 1 : 0, full ? 1 : 0, &failures);
    if (st != SMMD_OK) return report(st);
    return failures == 0 ? 0 : 1;
  }

  return 0;
}

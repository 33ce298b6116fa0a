#include <Eigen/Dense>
#include <cmath>

#include <nlohmann/json.hpp>

#include "smmd/dynamics.hpp"
#include "smmd/rng.hpp"

namespace smmd {

using nlohmann::json;

AdamState make_adam_state(const Net& net) {
  AdamState st;
  for (int l = 0; l < net.depth(); ++l) {
    const Layer& layer = net.layer(l);
    st.mw.push_back(Matrix::Zero(layer.w.rows(), layer.w.cols()));
    st.vw.push_back(Matrix::Zero(layer.w.rows(), layer.w.cols()));
    st.mb.push_back(Vector::Zero(layer.b.size()));
    st.vb.push_back(Vector::Zero(layer.b.size()));
    st.mg.push_back(0.0);
    st.vg.push_back(0.0);
  }
  return st;
}

void adam_step(AdamState& st, Net& net, const NetGrads& grads, double lr,
               double beta1, double beta2, double eps) {
  if (!(beta1 > 0.0 && beta1 < 1.0 && beta2 > 0.0 && beta2 < 1.0))
    throw InputError("adam betas must lie in (0, 1)");
  ++st.t;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(st.t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(st.t));
  NetGrads delta = net.zero_grads();
  for (int l = 0; l < net.depth(); ++l) {
    st.mw[l] = beta1 * st.mw[l] + (1.0 - beta1) * grads.dw[l];
    st.vw[l] = beta2 * st.vw[l] + (1.0 - beta2) * grads.dw[l].cwiseProduct(grads.dw[l]);
    delta.dw[l] = (st.mw[l] / bc1).cwiseQuotient(
        ((st.vw[l] / bc2).cwiseSqrt().array() + eps).matrix());
    st.mb[l] = beta1 * st.mb[l] + (1.0 - beta1) * grads.db[l];
    st.vb[l] = beta2 * st.vb[l] + (1.0 - beta2) * grads.db[l].cwiseProduct(grads.db[l]);
    delta.db[l] = (st.mb[l] / bc1).cwiseQuotient(
        ((st.vb[l] / bc2).cwiseSqrt().array() + eps).matrix());
    st.mg[l] = beta1 * st.mg[l] + (1.0 - beta1) * grads.dgamma[l];
    st.vg[l] = beta2 * st.vg[l] + (1.0 - beta2) * grads.dgamma[l] * grads.dgamma[l];
    delta.dgamma[l] = (st.mg[l] / bc1) / (std::sqrt(st.vg[l] / bc2) + eps);
  }
  net.apply_delta(delta, -lr);
}

Net build_net(const NetSpec& spec, std::uint64_t seed, std::string_view tag) {
  if (spec.widths.size() < 2) throw InputError("net spec needs at least two widths");
  Rng rng = Rng::stream(seed, tag);
  std::vector<Layer> layers;
  for (std::size_t l = 0; l + 1 < spec.widths.size(); ++l) {
    Layer layer;
    const int fan_in = spec.widths[l];
    const int fan_out = spec.widths[l + 1];
    Matrix w = rng.normal_matrix(fan_out, fan_in);
    if (spec.orthogonal_init) {
      // Semi-orthogonal factor of a Gaussian draw.
      if (fan_out <= fan_in) {
        Eigen::HouseholderQR<Matrix> qr(w.transpose());
        w = Matrix(qr.householderQ()).leftCols(fan_out).transpose();
      } else {
        Eigen::HouseholderQR<Matrix> qr(w);
        w = Matrix(qr.householderQ()).leftCols(fan_in);
      }
      layer.w = spec.init_scale * w;
    } else {
      layer.w = spec.init_scale / std::sqrt(static_cast<double>(fan_in)) * w;
    }
    layer.b = Vector::Zero(fan_out);
    layers.push_back(std::move(layer));
  }
  return Net::make(std::move(layers), spec.leak, spec.parametrization);
}

namespace {

json netspec_to_json(const NetSpec& s) {
  return json{{"widths", s.widths},
              {"leak", s.leak},
              {"parametrization",
               s.parametrization == Parametrization::spectral ? "spectral" : "standard"},
              {"init_scale", s.init_scale},
              {"orthogonal_init", s.orthogonal_init}};
}

NetSpec netspec_from_json(const json& j) {
  NetSpec s;
  s.widths = j.at("widths").get<std::vector<int>>();
  if (j.contains("leak")) s.leak = j.at("leak").get<double>();
  if (j.contains("parametrization")) {
    const std::string p = j.at("parametrization").get<std::string>();
    if (p == "spectral")
      s.parametrization = Parametrization::spectral;
    else if (p == "standard")
      s.parametrization = Parametrization::standard;
    else
      throw InputError("unknown parametrization '" + p + "'");
  }
  if (j.contains("init_scale")) s.init_scale = j.at("init_scale").get<double>();
  if (j.contains("orthogonal_init")) s.orthogonal_init = j.at("orthogonal_init").get<bool>();
  return s;
}

}  // namespace

std::string TrainConfig::to_json() const {
  json j;
  j["generator"] = netspec_to_json(generator);
  j["critic"] = netspec_to_json(critic);
  j["loss"] = train_loss_name(loss);
  j["top_kernel"] = top == TopKind::linear ? "linear" : "gaussian";
  j["lambda"] = loss_opts.lambda;
  j["scale_weight"] = loss_opts.scale_weight;
  j["gp_weight"] = loss_opts.gp_weight;
  j["top_bandwidth"] = loss_opts.top_bandwidth;
  j["support_size"] = loss_opts.support_size;
  j["biased_mmd2"] = loss_opts.biased_mmd2;
  j["target"] = json{{"kind", target.kind}, {"sigma", target.sigma}};
  j["latent_dim"] = latent_dim;
  j["batch_size"] = batch_size;
  j["critic_steps"] = critic_steps;
  j["generator_steps"] = generator_steps;
  j["lr"] = lr;
  j["beta1"] = beta1;
  j["beta2"] = beta2;
  j["adam_eps"] = adam_eps;
  j["seed"] = seed;
  j["cond_every"] = cond_every;
  j["checkpoint_every"] = checkpoint_every;
  return j.dump(2);
}

TrainConfig TrainConfig::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw InputError(std::string("train config parse error: ") + e.what());
  }
  TrainConfig c;
  try {
    if (j.contains("generator")) c.generator = netspec_from_json(j.at("generator"));
    if (j.contains("critic")) c.critic = netspec_from_json(j.at("critic"));
    if (j.contains("loss")) c.loss = train_loss_from_name(j.at("loss").get<std::string>());
    if (j.contains("top_kernel")) {
      const std::string t = j.at("top_kernel").get<std::string>();
      if (t == "linear")
        c.top = TopKind::linear;
      else if (t == "gaussian")
        c.top = TopKind::gaussian;
      else
        throw InputError("unknown top kernel '" + t + "'");
    }
    if (j.contains("lambda")) c.loss_opts.lambda = j.at("lambda").get<double>();
    if (j.contains("scale_weight"))
      c.loss_opts.scale_weight = j.at("scale_weight").get<double>();
    if (j.contains("gp_weight")) c.loss_opts.gp_weight = j.at("gp_weight").get<double>();
    if (j.contains("top_bandwidth"))
      c.loss_opts.top_bandwidth = j.at("top_bandwidth").get<double>();
    if (j.contains("support_size"))
      c.loss_opts.support_size = j.at("support_size").get<int>();
    if (j.contains("biased_mmd2")) c.loss_opts.biased_mmd2 = j.at("biased_mmd2").get<bool>();
    if (j.contains("target")) {
      const json& t = j.at("target");
      if (t.contains("kind")) c.target.kind = t.at("kind").get<std::string>();
      if (t.contains("sigma")) c.target.sigma = t.at("sigma").get<double>();
    }
    if (j.contains("latent_dim")) c.latent_dim = j.at("latent_dim").get<int>();
    if (j.contains("batch_size")) c.batch_size = j.at("batch_size").get<int>();
    if (j.contains("critic_steps")) c.critic_steps = j.at("critic_steps").get<int>();
    if (j.contains("generator_steps"))
      c.generator_steps = j.at("generator_steps").get<int>();
    if (j.contains("lr")) c.lr = j.at("lr").get<double>();
    if (j.contains("beta1")) c.beta1 = j.at("beta1").get<double>();
    if (j.contains("beta2")) c.beta2 = j.at("beta2").get<double>();
    if (j.contains("adam_eps")) c.adam_eps = j.at("adam_eps").get<double>();
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("cond_every")) c.cond_every = j.at("cond_every").get<int>();
    if (j.contains("checkpoint_every"))
      c.checkpoint_every = j.at("checkpoint_every").get<int>();
  } catch (const json::exception& e) {
    throw InputError(std::string("train config field error: ") + e.what());
  }
  if (c.batch_size < 2) throw InputError("batch_size must be >= 2");
  if (c.critic_steps < 1) throw InputError("critic_steps must be >= 1");
  if (c.generator_steps < 0) throw InputError("generator_steps must be >= 0");
  if (c.latent_dim < 1) throw InputError("latent_dim must be >= 1");
  return c;
}

namespace {

Matrix mixture4_sample(Rng& rng, int n, double sigma) {
  static const double means[4][2] = {{1, 1}, {1, -1}, {-1, 1}, {-1, -1}};
  Matrix out(n, 2);
  for (int i = 0; i < n; ++i) {
    const auto c = rng.below(4);
    out(i, 0) = means[c][0] + sigma * rng.normal();
    out(i, 1) = means[c][1] + sigma * rng.normal();
  }
  return out;
}

Matrix latent_sample(Rng& rng, int n, int dim) {
  return rng.uniform_matrix(n, dim, -1.0, 1.0);
}

}  // namespace

Matrix sample_generator(const Net& generator, int latent_dim, int n,
                        std::uint64_t seed, std::string_view tag) {
  Rng rng = Rng::stream(seed, tag);
  const Matrix z = latent_sample(rng, n, latent_dim);
  return generator.outputs(generator.forward_batch(z));
}

Matrix sample_target(const TrainConfig& config, int n, std::uint64_t seed,
                     std::string_view tag) {
  if (config.target.kind == "mixture4") {
    Rng rng = Rng::stream(seed, tag);
    return mixture4_sample(rng, n, config.target.sigma);
  }
  if (config.target.kind == "generator_init") {
    const Net frozen = build_net(config.generator, config.seed, "init/generator");
    return sample_generator(frozen, config.latent_dim, n, seed, tag);
  }
  throw InputError("unknown target kind '" + config.target.kind + "'");
}

std::string TrainHistory::csv_header() {
  return "step,critic_loss,gen_loss,mmd2,grad_term,denom,collapse";
}

std::string TrainHistory::cond_csv_header() {
  return "step,layer,cond,spectral_norm";
}

TrainHistory train_toy(const TrainConfig& config) {
  Net generator = build_net(config.generator, config.seed, "init/generator");
  Net critic = build_net(config.critic, config.seed, "init/critic");
  if (generator.in_dim() != config.latent_dim)
    throw InputError("generator input width must equal latent_dim");
  if (critic.in_dim() != generator.out_dim())
    throw InputError("critic input width must match generator output");

  Rng data_rng = Rng::stream(config.seed, "data");
  Rng latent_rng = Rng::stream(config.seed, "latent");
  Rng interp_rng = Rng::stream(config.seed, "interp");
  const Net frozen_init = generator;  // for the generator_init target

  auto draw_target = [&](int n) -> Matrix {
    if (config.target.kind == "mixture4")
      return mixture4_sample(data_rng, n, config.target.sigma);
    if (config.target.kind == "generator_init")
      return frozen_init.outputs(
          frozen_init.forward_batch(latent_sample(data_rng, n, config.latent_dim)));
    throw InputError("unknown target kind '" + config.target.kind + "'");
  };

  AdamState critic_adam = make_adam_state(critic);
  AdamState gen_adam = make_adam_state(generator);

  TrainHistory hist;
  hist.rows.resize(config.generator_steps, 7);
  std::vector<double> cond_rows;

  bool collapsed = false;
  const int n = config.batch_size;

  auto record_conds = [&](int step) {
    const auto conds = critic.layer_condition_numbers();
    for (int l = 0; l < critic.depth(); ++l) {
      cond_rows.push_back(static_cast<double>(step));
      cond_rows.push_back(static_cast<double>(l));
      cond_rows.push_back(conds[l]);
      cond_rows.push_back(critic.layer_spectral_norm(l));
      if (conds[l] > 1e4) collapsed = true;  // logged only, no rollback
    }
  };
  record_conds(0);

  for (int step = 1; step <= config.generator_steps; ++step) {
    double critic_loss_val = 0.0, mmd2 = 0.0, grad_term = 0.0, denom = 0.0;
    for (int cstep = 0; cstep < config.critic_steps; ++cstep) {
      const Matrix x = draw_target(n);
      const Matrix z = latent_sample(latent_rng, n, config.latent_dim);
      const Matrix y = generator.outputs(generator.forward_batch(z));
      Matrix interp;
      const Matrix* interp_ptr = nullptr;
      if (config.loss == TrainLoss::mmd_gp) {
        interp.resize(n, x.cols());
        for (int i = 0; i < n; ++i) {
          const double u = interp_rng.uniform01();
          interp.row(i) = u * x.row(i) + (1.0 - u) * y.row(i);
        }
        interp_ptr = &interp;
      }
      LossEval eval = critic_loss(config.loss, critic, config.top, config.loss_opts,
                                  x, y, interp_ptr, /*want_critic_grads=*/true,
                                  /*want_y_grads=*/false);
      if (!std::isfinite(eval.value))
        throw NumericError("training aborted: non-finite critic loss at step " +
                           std::to_string(step));
      eval.critic_grads.scale(-1.0);  // ascend
      adam_step(critic_adam, critic, eval.critic_grads, config.lr, config.beta1,
                config.beta2, config.adam_eps);
      critic_loss_val = eval.value;
      mmd2 = eval.mmd2;
      grad_term = eval.grad_term;
      denom = eval.denom;
    }

    // Generator step on fresh batches.
    const Matrix x = draw_target(n);
    const Matrix z = latent_sample(latent_rng, n, config.latent_dim);
    const auto gen_cache = generator.forward_batch(z);
    const Matrix y = generator.outputs(gen_cache);
    Matrix interp;
    const Matrix* interp_ptr = nullptr;
    if (config.loss == TrainLoss::mmd_gp) {
      interp.resize(n, x.cols());
      for (int i = 0; i < n; ++i) {
        const double u = interp_rng.uniform01();
        interp.row(i) = u * x.row(i) + (1.0 - u) * y.row(i);
      }
      interp_ptr = &interp;
    }
    LossEval eval = critic_loss(config.loss, critic, config.top, config.loss_opts, x,
                                y, interp_ptr, /*want_critic_grads=*/false,
                                /*want_y_grads=*/true);
    if (!std::isfinite(eval.value))
      throw NumericError("training aborted: non-finite generator loss at step " +
                         std::to_string(step));
    NetGrads gen_grads = generator.zero_grads();
    generator.backward_outputs(gen_cache, eval.dy, &gen_grads);
    generator.reduce_grads(gen_grads);
    adam_step(gen_adam, generator, gen_grads, config.lr, config.beta1, config.beta2,
              config.adam_eps);

    if (config.cond_every > 0 && step % config.cond_every == 0) record_conds(step);
    if (config.checkpoint_every > 0 && step % config.checkpoint_every == 0) {
      hist.generator_checkpoints.emplace_back(step, generator.to_json());
      hist.critic_checkpoints.emplace_back(step, critic.to_json());
    }

    hist.rows(step - 1, 0) = step;
    hist.rows(step - 1, 1) = critic_loss_val;
    hist.rows(step - 1, 2) = eval.value;
    hist.rows(step - 1, 3) = mmd2;
    hist.rows(step - 1, 4) = grad_term;
    hist.rows(step - 1, 5) = denom;
    hist.rows(step - 1, 6) = collapsed ? 1.0 : 0.0;
  }

  hist.cond_rows.resize(static_cast<Eigen::Index>(cond_rows.size()) / 4, 4);
  for (Eigen::Index i = 0; i < hist.cond_rows.rows(); ++i)
    for (int j = 0; j < 4; ++j) hist.cond_rows(i, j) = cond_rows[i * 4 + j];
  hist.final_generator = generator.to_json();
  hist.final_critic = critic.to_json();
  return hist;
}

}  // namespace smmd

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <memory>

#include "smmd/estimators.hpp"
#include "smmd/losses.hpp"
#include "smmd/rng.hpp"

using namespace smmd;

namespace {

Net random_net(Rng& rng, const std::vector<int>& widths,
               Parametrization p = Parametrization::standard) {
  std::vector<Layer> layers;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    Layer layer;
    layer.w = rng.normal_matrix(widths[l + 1], widths[l]) /
              std::sqrt(static_cast<double>(widths[l]));
    layer.b = 0.1 * rng.normal_matrix(widths[l + 1], 1);
    layers.push_back(std::move(layer));
  }
  return Net::make(std::move(layers), 0.2, p);
}

}  // namespace

TEST_CASE("loss name round trip") {
  for (TrainLoss k : {TrainLoss::smmd, TrainLoss::swgan, TrainLoss::mmd_gp,
                      TrainLoss::gcmmd})
    CHECK(train_loss_from_name(train_loss_name(k)) == k);
  CHECK_THROWS_AS(train_loss_from_name("nope"), InputError);
}

TEST_CASE("smmd loss value agrees with the estimator modules") {
  Rng rng(31);
  Net critic = random_net(rng, {2, 6, 1});
  const Matrix x = rng.normal_matrix(10, 2);
  const Matrix y = rng.normal_matrix(9, 2).array() + 0.3;
  LossOptions opts;
  const LossEval eval = critic_loss(TrainLoss::smmd, critic, TopKind::gaussian, opts,
                                    x, y, nullptr, false, false);
  auto shared = std::make_shared<Net>(critic);
  const Kernel k = Kernel::composed(TopKind::gaussian, shared, 1.0);
  const double m2 = mmd2_unbiased(k, x, y);
  const double gbar = critic.jacobian_sq_norm_mean(critic.forward_batch(x));
  CHECK(eval.mmd2 == doctest::Approx(m2).epsilon(1e-12));
  CHECK(eval.value == doctest::Approx(m2 / (1.0 + 10.0 * gbar)).epsilon(1e-12));
  CHECK(eval.grad_term == doctest::Approx(gbar).epsilon(1e-12));
}

TEST_CASE("swgan needs a scalar critic") {
  Rng rng(32);
  Net wide = random_net(rng, {2, 4, 2});
  LossOptions opts;
  CHECK_THROWS_AS(critic_loss(TrainLoss::swgan, wide, TopKind::linear, opts,
                              Matrix::Zero(3, 2), Matrix::Zero(3, 2), nullptr, false,
                              false),
                  InputError);
}

TEST_CASE("mmd_gp requires interpolation points") {
  Rng rng(33);
  Net critic = random_net(rng, {2, 4, 1});
  LossOptions opts;
  CHECK_THROWS_AS(critic_loss(TrainLoss::mmd_gp, critic, TopKind::gaussian, opts,
                              Matrix::Zero(3, 2), Matrix::Zero(3, 2), nullptr, false,
                              false),
                  InputError);
}

TEST_CASE("gcmmd loss agrees with the support-system estimator") {
  Rng rng(34);
  Net critic = random_net(rng, {2, 5, 2});
  const Matrix x = rng.normal_matrix(8, 2);
  const Matrix y = rng.normal_matrix(7, 2).array() + 0.4;
  LossOptions opts;
  opts.lambda = 0.6;
  opts.support_size = 4;
  const LossEval eval = critic_loss(TrainLoss::gcmmd, critic, TopKind::gaussian, opts,
                                    x, y, nullptr, false, false);
  auto shared = std::make_shared<Net>(critic);
  const Kernel k = Kernel::composed(TopKind::gaussian, shared, 1.0);
  const auto ref = gcmmd2(k, x, y, x.topRows(4), opts.lambda);
  CHECK(eval.value == doctest::Approx(ref.value2).epsilon(1e-9));
  CHECK(eval.mmd2 == doctest::Approx(ref.mmd2).epsilon(1e-12));
}

TEST_CASE("gcmmd loss with support_size 0 uses the whole X batch") {
  Rng rng(35);
  Net critic = random_net(rng, {2, 4, 1});
  const Matrix x = rng.normal_matrix(5, 2);
  const Matrix y = rng.normal_matrix(5, 2).array() + 0.2;
  LossOptions opts;
  opts.support_size = 0;
  const LossEval eval = critic_loss(TrainLoss::gcmmd, critic, TopKind::gaussian, opts,
                                    x, y, nullptr, false, false);
  auto shared = std::make_shared<Net>(critic);
  const Kernel k = Kernel::composed(TopKind::gaussian, shared, 1.0);
  const auto ref = gcmmd2(k, x, y, x, opts.lambda);
  CHECK(eval.value == doctest::Approx(ref.value2).epsilon(1e-9));
}

TEST_CASE("spectral critics train through the scaled losses") {
  Rng rng(36);
  Net critic = random_net(rng, {2, 5, 1}, Parametrization::spectral);
  const Matrix x = rng.normal_matrix(8, 2);
  const Matrix y = rng.normal_matrix(8, 2).array() + 0.5;
  LossOptions opts;
  const double h = 1e-6;
  const LossEval eval = critic_loss(TrainLoss::smmd, critic, TopKind::gaussian, opts,
                                    x, y, nullptr, true, false);
  // finite-difference check on gamma of layer 0 (spectral-only parameter)
  NetGrads probe = critic.zero_grads();
  probe.dgamma[0] = 1.0;
  Net np = critic, nm = critic;
  np.apply_delta(probe, h);
  nm.apply_delta(probe, -h);
  const double fp = critic_loss(TrainLoss::smmd, np, TopKind::gaussian, opts, x, y,
                                nullptr, false, false)
                        .value;
  const double fm = critic_loss(TrainLoss::smmd, nm, TopKind::gaussian, opts, x, y,
                                nullptr, false, false)
                        .value;
  const double fd = (fp - fm) / (2 * h);
  CHECK(eval.critic_grads.dgamma[0] ==
        doctest::Approx(fd).epsilon(1e-4).scale(std::max(1.0, std::abs(fd))));
}

TEST_CASE("swgan and linear-top smmd denominators carry the same terms") {
  Rng rng(37);
  Net critic = random_net(rng, {2, 6, 1});
  const Matrix x = rng.normal_matrix(12, 2);
  const Matrix y = rng.normal_matrix(12, 2).array() + 0.3;
  LossOptions opts;
  opts.biased_mmd2 = true;
  const LossEval sw = critic_loss(TrainLoss::swgan, critic, TopKind::linear, opts, x,
                                  y, nullptr, false, false);
  const LossEval sl = critic_loss(TrainLoss::smmd, critic, TopKind::linear, opts, x, y,
                                  nullptr, false, false);
  CHECK(sw.denom == doctest::Approx(sl.denom).epsilon(1e-14));
  CHECK(sw.value * sw.value == doctest::Approx(sl.value).epsilon(1e-12));
}

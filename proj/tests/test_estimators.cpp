#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <memory>

#include "smmd/estimators.hpp"
#include "smmd/rng.hpp"

using namespace smmd;

TEST_CASE("mmd estimators: preconditions and hand values") {
  const Kernel k = Kernel::gaussian(1.0);
  Matrix one = Matrix::Zero(1, 1);
  CHECK_THROWS_AS(mmd2_unbiased(k, one, one), InputError);

  Matrix x = Matrix::Zero(2, 1), y = Matrix::Ones(2, 1);
  CHECK(mmd2_unbiased(k, x, x) == doctest::Approx(0.0));
  CHECK(mmd2_unbiased(k, x, y) ==
        doctest::Approx(2.0 * (1.0 - std::exp(-0.5))).epsilon(1e-14));
  CHECK(mmd2_biased(k, one, one) == doctest::Approx(0.0));
  Matrix y1 = Matrix::Ones(1, 1);
  CHECK(mmd2_biased(k, one, y1) ==
        doctest::Approx(2.0 * (1.0 - std::exp(-0.5))).epsilon(1e-14));

  Matrix xd(2, 1), yd(2, 2);
  xd.setZero();
  yd.setZero();
  CHECK_THROWS_AS(mmd2_biased(k, xd, yd), InputError);
}

TEST_CASE("block estimator composition and errors") {
  Rng rng(21);
  const Kernel k = Kernel::gaussian(1.0);
  const Matrix x = rng.normal_matrix(8, 2), y = rng.normal_matrix(8, 2);
  CHECK(mmd2_block(k, x, y, 1) == doctest::Approx(mmd2_unbiased(k, x, y)));
  // two identical blocks give the same value as either half
  Matrix xx(8, 2), yy(8, 2);
  xx << x.topRows(4), x.topRows(4);
  yy << y.topRows(4), y.topRows(4);
  CHECK(mmd2_block(k, xx, yy, 2) ==
        doctest::Approx(mmd2_unbiased(k, x.topRows(4), y.topRows(4))).epsilon(1e-13));
  CHECK_THROWS_AS(mmd2_block(k, x, y, 3), InputError);   // 8 % 3 != 0
  CHECK_THROWS_AS(mmd2_block(k, x, y, 8), InputError);   // blocks of one sample
  CHECK_THROWS_AS(mmd2_block(k, x, y, 0), InputError);
}

TEST_CASE("smmd estimator and diagnostics") {
  const Kernel k = Kernel::gaussian(1.0);
  Matrix x = Matrix::Zero(4, 1), y = Matrix::Ones(4, 1);
  CHECK_THROWS_AS(smmd::smmd(k, x, y, x, 0.0), InputError);
  CHECK_THROWS_AS(smmd::smmd(k, x, y, x, -1.0), InputError);
  const auto est = smmd::smmd(k, x, x, x, 1.0);
  CHECK(est.value == doctest::Approx(0.0));
  const auto est2 = smmd::smmd(k, x, y, Matrix::Zero(1, 1), 1.0);
  // sigma^2 = 1/(lambda + 1 + 1) for the unit-bandwidth kernel in 1-d
  CHECK(*est2.diag.sigma == doctest::Approx(1.0 / std::sqrt(3.0)).epsilon(1e-14));
  CHECK(est2.value * est2.value ==
        doctest::Approx(2.0 * (1.0 - std::exp(-0.5)) / 3.0).epsilon(1e-13));
  CHECK(!est2.squared);
}

TEST_CASE("gcmmd: identical batches, witness, lambda guard") {
  Rng rng(23);
  const Kernel k = Kernel::gaussian(0.9);
  const Matrix x = rng.normal_matrix(6, 2);
  const Matrix mu = rng.normal_matrix(3, 2);
  CHECK_THROWS_AS(gcmmd2(k, x, x, mu, 0.0), InputError);
  const auto res = gcmmd2(k, x, x, mu, 0.5);
  CHECK(std::abs(res.value2) < 1e-10);

  const Matrix y = rng.normal_matrix(7, 2).array() + 0.4;
  const auto r2 = gcmmd2(k, x, y, mu, 0.5);
  CHECK(r2.value2 >= -1e-8);
  CHECK(r2.penalty_bar_p >= 0.0);
  CHECK(r2.mmd2 >= r2.penalty_bar_p - 1e-12);  // bar_P below ||eta||^2
  // witness reproduces the solved coefficients at the support points
  for (int s = 0; s < mu.rows(); ++s) {
    const Vector t = mu.row(s);
    CHECK(std::abs(r2.witness.eval(t) - r2.witness.alpha(s)) <= 1e-8);
    const Vector g = r2.witness.grad(t);
    CHECK((g - Vector(r2.witness.beta.segment(s * 2, 2))).lpNorm<Eigen::Infinity>() <=
          1e-8);
  }
}

TEST_CASE("gcmmd low-rank paths") {
  Rng rng(24);
  const Kernel k = Kernel::gaussian(1.1);
  const Matrix x = rng.normal_matrix(8, 2);
  const Matrix y = rng.normal_matrix(8, 2).array() + 0.5;
  const Matrix mu = rng.normal_matrix(4, 2);
  const auto full = gcmmd2(k, x, y, mu, 0.7);
  const auto lr = gcmmd2_lowrank(k, x, y, mu, 0.7, 0.0, 1 << 20);
  CHECK(lr.value2 == doctest::Approx(full.value2).epsilon(1e-6));
  CHECK(!lr.rank_warning);

  // rank cap reached with residual above tolerance sets the warning flag
  const auto capped = gcmmd2_lowrank(k, x, y, mu, 0.7, 1e-12, 2);
  CHECK(capped.rank == 2);
  CHECK(capped.rank_warning);

  // infinite tolerance: empty factor, value = mmd2 / lambda
  const auto empty = gcmmd2_lowrank(k, x, y, mu, 0.7,
                                    std::numeric_limits<double>::infinity(), 1 << 20);
  CHECK(empty.rank == 0);
  CHECK(empty.penalty_bar_p == 0.0);
  CHECK(empty.value2 == doctest::Approx(mmd2_biased(k, x, y) / 0.7).epsilon(1e-13));
}

TEST_CASE("lipmmd basics") {
  Rng rng(25);
  const Kernel k = Kernel::gaussian(1.0);
  Matrix x = Matrix::Zero(3, 1), y = Matrix::Constant(3, 1, 1.5);
  const Matrix z = lipmmd_default_grid(x, y, 32);
  CHECK(z.rows() == 32);
  CHECK(z(0, 0) < 0.0);          // inflated below the data range
  CHECK(z(31, 0) > 1.5);         // and above
  CHECK_THROWS_AS(lipmmd(k, x, y, z, 0.0), InputError);
  const auto res = lipmmd(k, x, y, z, 0.25);
  CHECK(res.value > 0.0);
  CHECK(res.value <= 1.5 + 1e-6);  // bounded by W for point masses
  CHECK(res.duals.size() == 32);
  CHECK(res.duals.minCoeff() >= 0.0);
}

TEST_CASE("lipmmd in 2-d: point masses bounded by the euclidean distance") {
  Rng rng(31);
  for (int rep = 0; rep < 3; ++rep) {
    const Matrix a = rng.normal_matrix(1, 2), b = rng.normal_matrix(1, 2);
    const Matrix x = a.replicate(3, 1), y = b.replicate(3, 1);
    const Matrix z = lipmmd_default_grid(x, y, 7);
    REQUIRE(z.rows() == 49);
    const auto res = lipmmd(Kernel::gaussian(1.0), x, y, z, 0.25);
    CHECK(res.value > 0.0);
    CHECK(res.value <= (a - b).norm() + 1e-6);  // W between 2-d point masses
  }
}

TEST_CASE("lipmmd_grad input checks and degenerate-dual flag") {
  const Kernel k = Kernel::gaussian(1.0);
  Matrix x = Matrix::Zero(2, 1), y = Matrix::Ones(2, 1);
  Matrix z(8, 1);
  for (int i = 0; i < 8; ++i) z(i, 0) = -0.5 + 2.0 * i / 7.0;
  LipmmdState st;
  lipmmd(k, x, y, z, 0.5, &st);
  CHECK_THROWS_AS(lipmmd_grad(st, Matrix::Zero(2, 2), Matrix::Zero(8, 4),
                              Matrix::Zero(8, 8)),
                  InputError);
  // artificially zero out an active dual: the differential must refuse
  LipmmdState broken = st;
  broken.duals.setZero();
  bool some_active = false;
  const Eigen::Index np = st.nx + st.ny;
  for (int j = 0; j < st.nz; ++j) {
    Matrix sj(1, np + st.nz);
    sj.leftCols(np) = st.b.row(j);
    sj.rightCols(st.nz) = st.h.row(j);
    double quad = (sj * st.delta).squaredNorm();
    quad += st.lambda * (st.delta.head(np).dot(st.kdata * st.delta.head(np)) +
                         2.0 * st.delta.tail(st.nz).dot(st.b * st.delta.head(np)) +
                         st.delta.tail(st.nz).dot(st.h * st.delta.tail(st.nz)));
    if (quad > 1.0 - 1e-6) some_active = true;
  }
  REQUIRE(some_active);
  CHECK_THROWS_AS(lipmmd_grad(broken, Matrix::Zero(4, 4), Matrix::Zero(8, 4),
                              Matrix::Zero(8, 8)),
                  NumericError);
}

TEST_CASE("witness is antisymmetric under swapping P and Q") {
  Rng rng(27);
  const Kernel k = Kernel::gaussian(0.8);
  const Matrix x = rng.normal_matrix(6, 2);
  const Matrix y = rng.normal_matrix(5, 2).array() + 0.4;
  const Matrix mu = rng.normal_matrix(3, 2);
  const auto pq = gcmmd2(k, x, y, mu, 0.5);
  const auto qp = gcmmd2(k, y, x, mu, 0.5);
  CHECK(pq.value2 == doctest::Approx(qp.value2).epsilon(1e-10));
  for (int rep = 0; rep < 10; ++rep) {
    const Vector t = rng.normal_matrix(2, 1);
    CHECK(pq.witness.eval(t) == doctest::Approx(-qp.witness.eval(t)).epsilon(1e-10));
    CHECK((pq.witness.grad(t) + qp.witness.grad(t)).lpNorm<Eigen::Infinity>() <=
          1e-10 * std::max(1.0, pq.witness.grad(t).lpNorm<Eigen::Infinity>()));
  }
}

TEST_CASE("lipmmd estimate grows with the point-mass separation") {
  // d/dtheta of the estimate is positive for small theta > 0: checked by
  // re-solves and by the KKT differential under the input-point perturbation.
  const Kernel k = Kernel::gaussian(1.0);
  const double lambda = 0.4;
  Matrix z(32, 1);
  for (int i = 0; i < 32; ++i) z(i, 0) = -0.8 + 2.6 * i / 31.0;
  auto solve_at = [&](double theta, LipmmdState* st) {
    Matrix x = Matrix::Zero(2, 1), y = Matrix::Constant(2, 1, theta);
    return lipmmd(k, x, y, z, lambda, st).value;
  };
  const double theta = 0.3, h = 1e-4;
  const double fd = (solve_at(theta + h, nullptr) - solve_at(theta - h, nullptr)) /
                    (2 * h);
  CHECK(fd > 0.0);

  LipmmdState st;
  solve_at(theta, &st);
  auto assemble = [&](double th, Matrix* kd, Matrix* bd, Matrix* hd) {
    Matrix data(4, 1);
    data << 0, 0, th, th;
    *kd = k.gram(data, data);
    bd->resize(32, 4);
    for (int j = 0; j < 32; ++j)
      for (int a = 0; a < 4; ++a)
        (*bd)(j, a) = k.grad_x(Vector(z.row(j)), Vector(data.row(a)))(0);
    hd->resize(32, 32);  // grid points do not move with theta
    for (int j = 0; j < 32; ++j)
      for (int j2 = 0; j2 < 32; ++j2)
        (*hd)(j, j2) = k.grad_xy(Vector(z.row(j)), Vector(z.row(j2)))(0, 0);
  };
  Matrix kp, bp, hp, km, bm, hm;
  assemble(theta + h, &kp, &bp, &hp);
  assemble(theta - h, &km, &bm, &hm);
  const double grad = lipmmd_grad(st, (kp - km) / (2 * h), (bp - bm) / (2 * h),
                                  (hp - hm) / (2 * h));
  CHECK(grad > 0.0);
  CHECK(grad == doctest::Approx(fd).epsilon(1e-3).scale(std::max(1.0, fd)));
}

TEST_CASE("family sweep: sup, argmax, tie-break") {
  CHECK_THROWS_AS(optimize_over_family([](double) { return 0.0; }, {}), InputError);
  const auto flat = optimize_over_family([](double) { return 1.0; }, {4.0, 2.0, 8.0});
  CHECK(flat.sup == 1.0);
  CHECK(flat.arg == 2.0);  // smallest parameter wins ties
  const auto peak =
      optimize_over_family([](double p) { return -(p - 3.0) * (p - 3.0); },
                           {1.0, 2.0, 3.0, 4.0});
  CHECK(peak.arg == 3.0);
}

TEST_CASE("wasserstein1d") {
  Vector x(1), y(1);
  x << 0;
  y << 3;
  CHECK(wasserstein1d_exact(x, y) == 3.0);
  CHECK(wasserstein1d_exact(x, x) == 0.0);
  Vector longer(2);
  longer.setZero();
  CHECK_THROWS_AS(wasserstein1d_exact(x, longer), InputError);
  // order-free: sorted pairing
  Vector a(3), b(3);
  a << 3, 1, 2;
  b << 2, 3, 1;
  CHECK(wasserstein1d_exact(a, b) == 0.0);
}

TEST_CASE("dirac closed forms") {
  CHECK(dirac_mmd2(1.0, 0.0) == 0.0);
  CHECK(dirac_mmd2(1.0, 1.0) ==
        doctest::Approx(2.0 * (1.0 - std::exp(-0.5))).epsilon(1e-15));
  CHECK(dirac_smmd2(1.0, 1.0, 1.0) ==
        doctest::Approx(2.0 * (1.0 - std::exp(-0.5)) / 3.0).epsilon(1e-15));
}

TEST_CASE("polynomial-kernel mmd usable as a KID-style score") {
  Rng rng(26);
  const Kernel kid = Kernel::polynomial(3, 1.0, 1.0 / 2.0);
  const Matrix x = rng.normal_matrix(32, 2);
  const Matrix y = rng.normal_matrix(32, 2);
  const Matrix shifted = rng.normal_matrix(32, 2).array() + 1.0;
  const double near = mmd2_unbiased(kid, x, y);
  const double far = mmd2_unbiased(kid, x, shifted);
  CHECK(far > near);
  CHECK(mmd2_biased(kid, x, x) >= 0.0);
}

TEST_CASE("estimate json serialization") {
  DiscrepancyEstimate e;
  e.value = 0.5;
  e.squared = false;
  e.diag.mmd2 = 0.25;
  e.diag.sigma = 0.1;
  e.diag.cholesky_rank = 7;
  const std::string text = estimate_to_json("smmd", e);
  CHECK(text.find("\"method\":\"smmd\"") != std::string::npos);
  CHECK(text.find("\"value\":0.5") != std::string::npos);
  CHECK(text.find("\"cholesky_rank\":7") != std::string::npos);
}

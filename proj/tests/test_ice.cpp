#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "coreinterp/errors.hpp"
#include "coreinterp/interp_ice.hpp"
#include "support.hpp"

using namespace coreinterp;
using namespace testsupport;

namespace {

// Plain-loop Lee-Seung updates with the documented initialization.
double reference_nmf_loss(const Matrix& V, std::size_t r, std::size_t iters, std::uint64_t seed) {
  const auto N = static_cast<std::size_t>(V.rows()), d = static_cast<std::size_t>(V.cols());
  double mean = 0;
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t j = 0; j < d; ++j) mean += V(i, j);
  mean /= static_cast<double>(N * d);
  const double scale = std::sqrt(mean / static_cast<double>(r));
  std::vector<std::vector<double>> S(N, std::vector<double>(r, scale)), W(r, std::vector<double>(d));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t k = 0; k < r; ++k)
    for (std::size_t j = 0; j < d; ++j) W[k][j] = u(rng) * scale;

  auto product = [&](std::size_t i, std::size_t j) {
    double s = 0;
    for (std::size_t k = 0; k < r; ++k) s += S[i][k] * W[k][j];
    return s;
  };
  for (std::size_t it = 0; it < iters; ++it) {
    auto S_new = S;
    for (std::size_t i = 0; i < N; ++i) {
      for (std::size_t k = 0; k < r; ++k) {
        double num = 0, den = 0;
        for (std::size_t j = 0; j < d; ++j) {
          num += V(i, j) * W[k][j];
          den += product(i, j) * W[k][j];
        }
        S_new[i][k] = S[i][k] * num / (den + 1e-12);
      }
    }
    S = S_new;
    auto W_new = W;
    for (std::size_t k = 0; k < r; ++k) {
      for (std::size_t j = 0; j < d; ++j) {
        double num = 0, den = 0;
        for (std::size_t i = 0; i < N; ++i) {
          num += S[i][k] * V(i, j);
          den += S[i][k] * product(i, j);
        }
        W_new[k][j] = W[k][j] * num / (den + 1e-12);
      }
    }
    W = W_new;
  }
  double loss = 0;
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t j = 0; j < d; ++j) loss += std::pow(V(i, j) - product(i, j), 2);
  return std::sqrt(loss);
}

void check_monotone(const ice::NmfModel& m) {
  for (std::size_t k = 1; k < m.loss_history.size(); ++k) {
    CHECK(m.loss_history[k] <= m.loss_history[k - 1] + 1e-9);
  }
}

}  // namespace

TEST_SUITE("interp_ice") {

TEST_CASE("rank-1 matrix is recovered") {
  std::mt19937_64 rng(1);
  const Matrix s = random_matrix(40, 1, rng, 0.1, 2.0);
  const Matrix w = random_matrix(1, 12, rng, 0.1, 2.0);
  const Matrix V = s * w;
  ice::NmfOptions o;
  o.rank = 1;
  o.max_iter = 1000;
  o.tol = 1e-12;
  const auto m = ice::fit_nmf(V, o);
  CHECK(m.fit_loss < 1e-4 * V.norm());
  CHECK((m.components.array() >= 0).all());
  check_monotone(m);
}

TEST_CASE("zero input") {
  ice::NmfOptions o;
  o.rank = 3;
  const auto m = ice::fit_nmf(Matrix::Zero(20, 6), o);
  CHECK(m.fit_loss == 0.0);
  CHECK(m.components.allFinite());
}

TEST_CASE("input validation") {
  ice::NmfOptions o;
  o.rank = 7;
  CHECK_THROWS_AS(ice::fit_nmf(Matrix::Ones(10, 6), o), ValidationError);
  o.rank = 0;
  CHECK_THROWS_AS(ice::fit_nmf(Matrix::Ones(10, 6), o), ValidationError);
  o.rank = 2;
  Matrix neg = Matrix::Ones(10, 6);
  neg(3, 3) = -0.5;
  CHECK_THROWS_AS(ice::fit_nmf(neg, o), ValidationError);
}

TEST_CASE("matches a plain-loop reference run") {
  std::mt19937_64 rng(2);
  const Matrix V = random_matrix(200, 16, rng, 0.0, 1.0);
  ice::NmfOptions o;
  o.rank = 4;
  o.max_iter = 60;
  o.tol = 0.0;
  o.seed = 17;
  const auto m = ice::fit_nmf(V, o);
  CHECK(m.iterations_run == 60);
  const double ref = reference_nmf_loss(V, 4, 60, 17);
  CHECK(std::abs(m.fit_loss - ref) <= 0.05 * ref);
  check_monotone(m);
}

TEST_CASE("loss is monotone and independent of row order") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 5; ++trial) {
    const Matrix V = random_matrix(120, 10, rng, 0.0, 3.0);
    ice::NmfOptions o;
    o.rank = 2 + static_cast<std::size_t>(trial);
    o.seed = static_cast<std::uint64_t>(trial);
    const auto m = ice::fit_nmf(V, o);
    check_monotone(m);
    CHECK(m.fit_loss >= 0.0);

    std::vector<Eigen::Index> perm(120);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Matrix P(120, 10);
    for (Eigen::Index i = 0; i < 120; ++i) P.row(i) = V.row(perm[static_cast<std::size_t>(i)]);
    CHECK(std::abs(ice::fit_nmf(P, o).fit_loss - m.fit_loss) <= 1e-6);
  }
}

TEST_CASE("interpretation maps") {
  std::mt19937_64 rng(4);
  SUBCASE("identity components reproduce the input") {
    const Tensor4 t = random_tensor({3, 2, 2, 5}, rng, 0.0, 2.0);
    ice::NmfModel m;
    m.components = Matrix::Identity(5, 5);
    m.rank = 5;
    const Tensor4 z = ice::ice_maps(t, m);
    const Matrix diff = flatten(z) - flatten(t);
    CHECK(diff.norm() <= 1e-3 * flatten(t).norm());
  }
  SUBCASE("self reconstruction matches the fit") {
    const Tensor4 t = random_tensor({10, 3, 3, 8}, rng, 0.0, 1.0);
    ice::NmfOptions o;
    o.rank = 3;
    o.max_iter = 3000;
    o.tol = 1e-10;
    const Matrix V = flatten(t);
    const auto m = ice::fit_nmf(V, o);
    ice::ProjectionOptions p;
    p.max_iter = 5000;
    p.tol = 1e-10;
    const Tensor4 z = ice::ice_maps(t, m, p);
    const double err = (flatten(z) - V).norm();
    CHECK(std::abs(err - m.fit_loss) <= 0.01 * m.fit_loss);
  }
  SUBCASE("held-out tensor: nonnegative and converged projection") {
    const Tensor4 train = random_tensor({10, 3, 3, 8}, rng, 0.0, 1.0);
    Tensor4 held = random_tensor({4, 3, 3, 8}, rng, -0.5, 1.0);
    ice::NmfOptions o;
    o.rank = 4;
    const auto m = ice::fit_nmf(flatten(train), o);
    const Tensor4 z = ice::ice_maps(held, m);
    for (double x : z.values()) CHECK(x >= 0.0);
    // oracle: projected gradient NNLS per row, run far past convergence
    const Matrix V = flatten(clamp_nonnegative(held));
    const Matrix& W = m.components;
    const Matrix G = W * W.transpose();
    const double step = 1.0 / Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(Eigen::MatrixXd(G)).eigenvalues().maxCoeff();
    Matrix S = Matrix::Zero(V.rows(), W.rows());
    for (int it = 0; it < 20000; ++it) {
      S = (S - step * (S * G - V * W.transpose())).cwiseMax(0.0);
    }
    const double oracle = (V - S * W).norm();
    const double got = (V - flatten(z)).norm();
    CHECK(got >= oracle - 1e-9);
    CHECK(got <= oracle * 1.01);
  }
  SUBCASE("depth mismatch") {
    ice::NmfModel m;
    m.components = Matrix::Identity(4, 4);
    CHECK_THROWS_AS(ice::ice_maps(Tensor4({1, 1, 1, 5}, 1.0), m), ValidationError);
  }
}

TEST_CASE("per-class fit and persistence") {
  SyntheticConfig cfg;
  cfg.classes = 3;
  cfg.per_class = 8;
  cfg.height = 2;
  cfg.width = 2;
  cfg.depth = 6;
  auto dir = scratch_dir("ice_fit");
  auto ds = Dataset::load(make_synthetic(cfg, dir / "data"));
  ice::NmfOptions o;
  o.rank = 3;
  const auto f = ice::fit_ice(DatasetView::full(ds), ds->last_layer(), o);
  CHECK(f.per_class.size() == 3);
  for (const auto& [c, m] : f.per_class) {
    CHECK(m.components.rows() == 3);
    CHECK((m.components.array() >= 0).all());
  }
  ice::save(f, dir / "feat", {{"tag", "full"}});
  const auto back = ice::load(dir / "feat");
  CHECK(back.per_class.size() == 3);
  CHECK(back.layer_id == f.layer_id);
  for (const auto& [c, m] : f.per_class) {
    CHECK((back.per_class.at(c).components - m.components).cwiseAbs().maxCoeff() < 1e-6);
  }

  // one sample of 2x2 locations cannot carry rank 8: the rank is capped
  const DatasetView tiny(ds, {0, 1, 2});
  o.rank = 8;
  const auto small = ice::fit_ice(tiny, ds->last_layer(), o);
  for (const auto& [c, m] : small.per_class) CHECK(m.rank == 4);
}

}  // TEST_SUITE

#include <doctest.h>

#include <numbers>

#include "coreinterp/errors.hpp"
#include "coreinterp/simeval.hpp"
#include "support.hpp"

using namespace coreinterp;
using namespace coreinterp::simeval;
using namespace testsupport;

namespace {

constexpr double kPi = std::numbers::pi;

// Newton iteration for the orthogonal polar factor; no SVD involved.
Eigen::MatrixXd polar(Eigen::MatrixXd q) {
  for (int it = 0; it < 100; ++it) {
    const Eigen::MatrixXd next = 0.5 * (q + q.inverse().transpose());
    if ((next - q).norm() < 1e-14) return next;
    q = next;
  }
  return q;
}

// Unwhitened alignment by projected gradient ascent from many random starts.
double brute_force_angle(const Matrix& x, const Matrix& y, std::mt19937_64& rng) {
  Eigen::MatrixXd mx = x.rowwise() - x.colwise().mean();
  Eigen::MatrixXd my = y.rowwise() - y.colwise().mean();
  const Eigen::MatrixXd g = my.transpose() * mx;
  const double step = 1.0 / g.norm();
  double best = -1.0;
  for (int restart = 0; restart < 30; ++restart) {
    Eigen::MatrixXd q = random_orthogonal(static_cast<std::size_t>(x.cols()), rng);
    for (int it = 0; it < 400; ++it) q = polar(q + step * g);
    best = std::max(best, (mx.cwiseProduct(my * q)).sum());
  }
  return std::acos(std::clamp(best / (mx.norm() * my.norm()), -1.0, 1.0));
}

Matrix well_conditioned(std::size_t p, std::mt19937_64& rng) {
  Eigen::VectorXd s(static_cast<Eigen::Index>(p));
  for (std::size_t k = 0; k < p; ++k) s(static_cast<Eigen::Index>(k)) = 1.0 + 9.0 * static_cast<double>(k) / static_cast<double>(p - 1);
  return random_orthogonal(p, rng) * s.asDiagonal() * random_orthogonal(p, rng);
}

SimilarityReport report(double rho, double phi, std::string coreset = "moderate") {
  SimilarityReport r;
  r.budget_rho = rho;
  r.phi_mean = phi;
  r.per_class_distance[0] = phi;
  r.interpretation = "ice";
  r.coreset = std::move(coreset);
  r.model = "m";
  return r;
}

}  // namespace

TEST_SUITE("simeval") {

TEST_CASE("flatten ordering") {
  std::mt19937_64 rng(1);
  const Tensor4 one = random_tensor({1, 1, 1, 4}, rng);
  const Matrix row = flatten_maps(one);
  REQUIRE(row.rows() == 1);
  for (std::size_t c = 0; c < 4; ++c) CHECK(row(0, static_cast<Eigen::Index>(c)) == one.at(0, 0, 0, c));

  const Tensor4 t = random_tensor({2, 2, 2, 3}, rng);
  const Matrix m = flatten_maps(t);
  CHECK(m.rows() == 8);
  CHECK(m.cols() == 3);
  for (std::size_t c = 0; c < 3; ++c) CHECK(m(0, static_cast<Eigen::Index>(c)) == t.at(0, 0, 0, c));
  CHECK(m(6, 1) == t.at(1, 1, 0, 1));

  const Tensor4 big = random_tensor({3, 4, 5, 6}, rng);
  const Tensor4 back = unflatten(flatten_maps(big), big.shape());
  CHECK(std::equal(back.values().begin(), back.values().end(), big.values().begin()));
}

TEST_CASE("shape metric properties") {
  std::mt19937_64 rng(2);
  ShapeMetricConfig cfg;

  SUBCASE("identity") {
    for (double alpha : {0.0, 0.5, 1.0}) {
      cfg.alpha = alpha;
      const Matrix x = gaussian_matrix(80, 6, rng);
      CHECK(angular_shape_distance(x, x, cfg) <= 1e-6);
    }
  }
  SUBCASE("rotation and translation") {
    for (double alpha : {0.0, 0.3, 0.5, 1.0}) {
      cfg.alpha = alpha;
      const Matrix x = gaussian_matrix(100, 7, rng);
      const Matrix q = random_orthogonal(7, rng);
      CHECK(angular_shape_distance(x, x * q, cfg) <= 1e-5);
      CHECK(angular_shape_distance(x * q, x, cfg) <= 1e-5);

      const Matrix y = gaussian_matrix(100, 7, rng);
      const Matrix shifted = y.rowwise() + random_matrix(1, 7, rng, -5.0, 5.0).row(0);
      CHECK(std::abs(angular_shape_distance(x, y, cfg) - angular_shape_distance(x, shifted, cfg)) <= 1e-5);
    }
  }
  SUBCASE("range and symmetry") {
    for (int trial = 0; trial < 30; ++trial) {
      cfg.alpha = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
      const Matrix x = gaussian_matrix(40, 5, rng);
      const Matrix y = gaussian_matrix(40, 3, rng);
      const double a = angular_shape_distance(x, y, cfg);
      const double b = angular_shape_distance(y, x, cfg);
      CHECK(a >= 0.0);
      CHECK(a <= kPi);
      CHECK(std::abs(a - b) <= 1e-5);
    }
  }
  SUBCASE("triangle inequality") {
    for (int trial = 0; trial < 100; ++trial) {
      const Matrix x = gaussian_matrix(50, 4, rng);
      const Matrix y = x + 0.7 * gaussian_matrix(50, 4, rng);
      const Matrix z = gaussian_matrix(50, 4, rng);
      const double xz = angular_shape_distance(x, z, cfg);
      const double xy = angular_shape_distance(x, y, cfg);
      const double yz = angular_shape_distance(y, z, cfg);
      CHECK(xz <= xy + yz + 1e-5);
      CHECK(xy <= xz + yz + 1e-5);
    }
  }
  SUBCASE("full whitening removes invertible transforms") {
    cfg.alpha = 0.0;
    for (int trial = 0; trial < 10; ++trial) {
      const Matrix x = gaussian_matrix(80, 8, rng);
      CHECK(angular_shape_distance(x, x * well_conditioned(8, rng), cfg) <= 1e-4);
    }
  }
  SUBCASE("unwhitened alignment against random restarts") {
    cfg.alpha = 1.0;
    for (int trial = 0; trial < 5; ++trial) {
      const Matrix x = gaussian_matrix(50, 4, rng);
      const Matrix y = x * random_orthogonal(4, rng) + 0.8 * gaussian_matrix(50, 4, rng);
      CHECK(std::abs(angular_shape_distance(x, y, cfg) - brute_force_angle(x, y, rng)) <= 1e-4);
    }
  }
  SUBCASE("zero padding keeps the wide side's geometry") {
    // a narrow Y equals X restricted to its leading columns when X has zeros elsewhere
    Matrix x = Matrix::Zero(60, 5);
    x.leftCols(3) = gaussian_matrix(60, 3, rng);
    const Matrix y = x.leftCols(3);
    cfg.alpha = 1.0;
    CHECK(angular_shape_distance(x, y, cfg) <= 1e-6);
  }
  SUBCASE("row subsampling is seeded and shared") {
    const Matrix x = gaussian_matrix(300, 4, rng);
    const Matrix y = gaussian_matrix(300, 4, rng);
    cfg.max_rows = 100;
    const double a = angular_shape_distance(x, y, cfg);
    CHECK(a == angular_shape_distance(x, y, cfg));
    CHECK(angular_shape_distance(x, x, cfg) <= 1e-6);
    cfg.max_rows = 300;
    ShapeMetricConfig whole;
    CHECK(angular_shape_distance(x, y, cfg) == angular_shape_distance(x, y, whole));
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(angular_shape_distance(Matrix::Ones(20, 3), gaussian_matrix(20, 3, rng), cfg),
                    ComputationError);
    CHECK_THROWS_AS(angular_shape_distance(gaussian_matrix(20, 3, rng), gaussian_matrix(21, 3, rng), cfg),
                    ValidationError);
    CHECK_THROWS_AS(angular_shape_distance(gaussian_matrix(4, 4, rng), gaussian_matrix(4, 4, rng), cfg),
                    ValidationError);
    cfg.alpha = 1.5;
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
  }
}

TEST_CASE("class averaging") {
  std::mt19937_64 rng(3);
  SUBCASE("examples") {
    CHECK(phi_from_distances({{4, 0.7}}, {}).phi_mean == 0.7);
    CHECK(std::abs(phi_from_distances({{0, 0.0}, {1, kPi}}, {}).phi_mean - kPi / 2) < 1e-15);
  }
  SUBCASE("five random classes") {
    std::vector<MapPair> pairs;
    for (ClassId c = 0; c < 5; ++c) {
      pairs.push_back({c, random_tensor({4, 3, 3, 4}, rng), random_tensor({4, 3, 3, 4}, rng)});
    }
    ShapeMetricConfig cfg;
    const auto r = phi_average(pairs, cfg);
    CHECK(r.per_class_distance.size() == 5);
    double sum = 0;
    for (const auto& p : pairs) {
      const double d = angular_shape_distance(flatten_maps(p.full), flatten_maps(p.coreset), cfg);
      CHECK(r.per_class_distance.at(p.cls) == d);
      sum += d;
    }
    CHECK(std::abs(r.phi_mean - sum / 5) < 1e-15);
  }
  SUBCASE("degenerate classes are skipped") {
    std::vector<MapPair> pairs;
    pairs.push_back({0, random_tensor({4, 3, 3, 4}, rng), random_tensor({4, 3, 3, 4}, rng)});
    pairs.push_back({1, random_tensor({4, 3, 3, 4}, rng), Tensor4({4, 3, 3, 4})});
    const auto r = phi_average(pairs, ShapeMetricConfig{});
    CHECK(r.per_class_distance.size() == 1);
    REQUIRE(r.skipped.count(1) == 1);
    CHECK(r.skipped.at(1).find("degenerate") != std::string::npos);
    CHECK(r.phi_mean == r.per_class_distance.at(0));

    pairs.erase(pairs.begin());
    CHECK_THROWS_AS(phi_average(pairs, ShapeMetricConfig{}), ComputationError);
  }
  SUBCASE("report json round trip") {
    SimilarityReport r = phi_from_distances({{0, 0.25}, {3, 0.5}}, {{7, "degenerate representation"}});
    r.budget_rho = 0.3;
    r.interpretation = "ice";
    r.coreset = "dgpruning";
    r.model = "resnet";
    const auto back = SimilarityReport::from_json(r.to_json());
    CHECK(back.per_class_distance == r.per_class_distance);
    CHECK(back.skipped == r.skipped);
    CHECK(back.phi_mean == r.phi_mean);
    CHECK(back.coreset == "dgpruning");
    CHECK_THROWS_AS(SimilarityReport::from_json({{"phi_mean", 1.0}}), ValidationError);
  }
}

TEST_CASE("robustness summary") {
  SUBCASE("examples") {
    const auto e = robustness_entry({report(0.1, 1.0), report(0.2, 3.0)});
    CHECK(e.mean == 2.0);
    CHECK(e.std == 1.0);
    CHECK(e.missing_budgets == std::vector<double>{0.3, 0.4, 0.5});

    std::vector<SimilarityReport> flat;
    for (double rho : kRobustnessBudgets) flat.push_back(report(rho, 0.4));
    const auto f = robustness_entry(flat);
    CHECK(f.std == 0.0);
    CHECK(f.missing_budgets.empty());

    CHECK_THROWS_AS(robustness_entry({report(0.1, 1.0)}), ValidationError);
  }
  SUBCASE("two-pass oracle") {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(0.0, kPi);
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<SimilarityReport> reports;
      std::vector<double> phis;
      for (double rho : kRobustnessBudgets) {
        phis.push_back(u(rng));
        reports.push_back(report(rho, phis.back()));
      }
      std::shuffle(reports.begin(), reports.end(), rng);
      double mean = 0;
      for (double p : phis) mean += p;
      mean /= 5;
      double var = 0;
      for (double p : phis) var += (p - mean) * (p - mean);
      const auto e = robustness_entry(reports);
      CHECK(e.mean == doctest::Approx(mean).epsilon(1e-15));
      CHECK(e.std == doctest::Approx(std::sqrt(var / 5)).epsilon(1e-13));
      CHECK(std::is_sorted(e.budgets.begin(), e.budgets.end()));
    }
  }
  SUBCASE("grouping and table") {
    std::vector<SimilarityReport> reports;
    for (double rho : kRobustnessBudgets) {
      reports.push_back(report(rho, rho));
      reports.push_back(report(rho, 2 * rho, "random"));
    }
    reports.push_back(report(0.9, 5.0));  // outside the grid
    const auto r = robustness_summary(reports);
    REQUIRE(r.entries.size() == 2);
    CHECK(r.entries[0].coreset == "moderate");
    CHECK(r.entries[0].mean == doctest::Approx(0.3));
    CHECK(r.entries[1].mean == doctest::Approx(0.6));
    const std::string table = r.to_table();
    CHECK(table.find("0.3000 ± 0.1414") != std::string::npos);
    CHECK(r.to_json()["entries"].size() == 2);
    CHECK_THROWS_AS(robustness_summary({report(0.9, 1.0)}), ValidationError);
  }
}

}  // TEST_SUITE

#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <iterator>

#include "coreinterp/errors.hpp"
#include "coreinterp/viz.hpp"
#include "golden_fixture.hpp"
#include "support.hpp"

using namespace coreinterp;
using namespace coreinterp::viz;
using namespace testsupport;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST_SUITE("viz") {

TEST_CASE("channel scores") {
  Tensor4 t({1, 2, 2, 3});
  for (std::size_t u = 0; u < 2; ++u)
    for (std::size_t v = 0; v < 2; ++v) t.at(0, u, v, 0) = 1.0;
  const Vector s = score_maps(t, 0);
  CHECK(s[0] == 4.0);
  CHECK(s[1] == 0.0);

  std::mt19937_64 rng(1);
  const Tensor4 r = random_tensor({3, 4, 5, 6}, rng);
  const Vector s2 = score_maps(r, 2);
  for (std::size_t j = 0; j < 6; ++j) {
    double sum = 0;
    for (std::size_t u = 0; u < 4; ++u)
      for (std::size_t v = 0; v < 5; ++v) sum += r.at(2, u, v, j);
    CHECK(s2[static_cast<Eigen::Index>(j)] == doctest::Approx(sum).epsilon(1e-14));
  }
  CHECK_THROWS_AS(score_maps(r, 3), ValidationError);
}

TEST_CASE("top channels and max-combine") {
  Vector scores(5);
  scores << 1.0, 3.0, 3.0, 0.5, 2.0;
  CHECK(top_channels(scores, 3) == std::vector<std::size_t>{1, 2, 4});
  CHECK_THROWS_AS(top_channels(scores, 0), ValidationError);
  CHECK_THROWS_AS(top_channels(scores, 6), ValidationError);

  SUBCASE("dominating channel") {
    Tensor4 t({1, 3, 3, 2});
    for (std::size_t u = 0; u < 3; ++u)
      for (std::size_t v = 0; v < 3; ++v) {
        t.at(0, u, v, 0) = 1.0 + static_cast<double>(u * 3 + v);
        t.at(0, u, v, 1) = 0.5 * t.at(0, u, v, 0);
      }
    const Matrix g = max_combine(t, 0, 2);
    for (std::size_t u = 0; u < 3; ++u)
      for (std::size_t v = 0; v < 3; ++v)
        CHECK(g(static_cast<Eigen::Index>(u), static_cast<Eigen::Index>(v)) == t.at(0, u, v, 0));
  }
  SUBCASE("random 7x7x8 against an exhaustive oracle") {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 10; ++trial) {
      const Tensor4 t = random_tensor({2, 7, 7, 8}, rng);
      std::vector<std::pair<double, std::size_t>> ranked;
      for (std::size_t j = 0; j < 8; ++j) {
        double s = 0;
        for (std::size_t u = 0; u < 7; ++u)
          for (std::size_t v = 0; v < 7; ++v) s += t.at(1, u, v, j);
        ranked.push_back({-s, j});
      }
      std::sort(ranked.begin(), ranked.end());
      const Matrix g = max_combine(t, 1, 3);
      for (std::size_t u = 0; u < 7; ++u)
        for (std::size_t v = 0; v < 7; ++v) {
          double best = -1;
          for (std::size_t k = 0; k < 3; ++k) best = std::max(best, t.at(1, u, v, ranked[k].second));
          CHECK(g(static_cast<Eigen::Index>(u), static_cast<Eigen::Index>(v)) == best);
        }
    }
  }
}

TEST_CASE("heatmap composition") {
  std::mt19937_64 rng(3);
  SUBCASE("k = 1 is the resized top channel") {
    const Tensor4 t = random_tensor({1, 5, 5, 4}, rng);
    const auto top = top_channels(score_maps(t, 0), 1)[0];
    Matrix channel(5, 5);
    for (std::size_t u = 0; u < 5; ++u)
      for (std::size_t v = 0; v < 5; ++v)
        channel(static_cast<Eigen::Index>(u), static_cast<Eigen::Index>(v)) = t.at(0, u, v, top);
    const Heatmap h = compose_heatmap(t, 0, 1, 20, 20);
    CHECK((h.values - minmax_normalize(resize_bilinear(channel, 20, 20))).cwiseAbs().maxCoeff() == 0.0);
    CHECK(h.values.minCoeff() == 0.0);
    CHECK(h.values.maxCoeff() == 1.0);
    CHECK(h.k == 1);
  }
  SUBCASE("constant map normalizes to zero") {
    const Heatmap h = compose_heatmap(Tensor4({1, 3, 3, 2}, 0.7), 0, 2, 6, 6);
    CHECK(h.values.cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("resize keeps the peak in its cell") {
    // Peaked maps plus noise. On pure noise an isolated maximum can lose to a
    // 2x2 patch of slightly smaller cells once interpolated.
    std::uniform_int_distribution<int> cell(0, 6);
    for (int trial = 0; trial < 20; ++trial) {
      const int cu = cell(rng), cv = cell(rng);
      Matrix grid = random_matrix(7, 7, rng, 0.0, 0.2);
      for (int u = 0; u < 7; ++u)
        for (int v = 0; v < 7; ++v) grid(u, v) += std::exp(-((u - cu) * (u - cu) + (v - cv) * (v - cv)) / 3.0);
      Eigen::Index pu, pv, qy, qx;
      grid.maxCoeff(&pu, &pv);
      const Matrix big = resize_bilinear(grid, 28, 28);
      big.maxCoeff(&qy, &qx);
      CHECK(qy / 4 == pu);
      CHECK(qx / 4 == pv);
    }
  }
  SUBCASE("resize to the same size is the identity") {
    const Matrix grid = random_matrix(4, 6, rng);
    CHECK((resize_bilinear(grid, 4, 6) - grid).cwiseAbs().maxCoeff() < 1e-15);
  }
  SUBCASE("bad k") {
    CHECK_THROWS_AS(compose_heatmap(Tensor4({1, 2, 2, 3}), 0, 4, 8, 8), ValidationError);
  }
}

TEST_CASE("overlay") {
  const Image card = test_card(16, 12, 0);
  Heatmap h;
  h.values = Matrix::Zero(12, 16);
  SUBCASE("zero heatmap halves the image") {
    const Image out = overlay(h, card);
    for (std::size_t i = 0; i < card.rgb.size(); ++i) {
      CHECK(out.rgb[i] == std::lround(0.5 * card.rgb[i]));
    }
  }
  SUBCASE("saturated pixel takes the hottest colour") {
    h.values(5, 7) = 1.0;
    const Image out = overlay(h, card);
    const auto hot = colormap(1.0);
    for (int ch = 0; ch < 3; ++ch) {
      CHECK(out.pixel(7, 5)[ch] == std::lround(0.5 * card.pixel(7, 5)[ch] + 0.5 * hot[static_cast<std::size_t>(ch)]));
    }
    CHECK(out.pixel(6, 5)[0] == std::lround(0.5 * card.pixel(6, 5)[0]));
  }
  SUBCASE("colormap is perceptually ordered") {
    auto lum = [](std::array<std::uint8_t, 3> c) { return 0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2]; };
    for (int i = 1; i <= 10; ++i) CHECK(lum(colormap(i / 10.0)) > lum(colormap((i - 1) / 10.0)));
  }
  SUBCASE("size mismatch") {
    h.values = Matrix::Zero(3, 3);
    CHECK_THROWS_AS(overlay(h, card), ValidationError);
  }
}

TEST_CASE("png files") {
  const auto dir = scratch_dir("viz_png");
  const Image card = test_card(20, 10, 4);
  write_png(dir / "a.png", card);
  write_png(dir / "b.png", card);
  CHECK(slurp(dir / "a.png") == slurp(dir / "b.png"));
  const Image back = read_png(dir / "a.png");
  CHECK(back.width == 20);
  CHECK(back.height == 10);
  CHECK(back.rgb == card.rgb);

  std::ofstream(dir / "junk.png") << "not an image";
  CHECK_THROWS_AS(read_png(dir / "junk.png"), ValidationError);
  CHECK_THROWS_AS(read_png(dir / "missing.png"), ValidationError);

  Heatmap h;
  h.values = Matrix::Constant(10, 20, 0.5);
  overlay_file(h, dir / "a.png", dir / "o.png");
  CHECK(read_png(dir / "o.png").rgb == overlay(h, card).rgb);
}

TEST_CASE("golden panel") {
  const auto dir = scratch_dir("viz_golden");
  write_png(dir / "panel.png", golden_panel());
  const std::filesystem::path golden = std::filesystem::path(GOLDEN_DIR) / "panel.png";
  if (std::getenv("COREINTERP_UPDATE_GOLDEN")) std::filesystem::copy_file(dir / "panel.png", golden, std::filesystem::copy_options::overwrite_existing);
  REQUIRE(std::filesystem::exists(golden));
  CHECK(slurp(dir / "panel.png") == slurp(golden));
}

TEST_CASE("panel layout") {
  const Image a(4, 3, 10), b(4, 3, 200);
  const Image p = compose_panel({{a, b}, {b, a}}, 2);
  CHECK(p.width == 2 * 4 + 3 * 2);
  CHECK(p.height == 2 * 3 + 3 * 2);
  CHECK(p.pixel(0, 0)[0] == 255);
  CHECK(p.pixel(2, 2)[0] == 10);
  CHECK(p.pixel(8, 2)[0] == 200);
  CHECK(p.pixel(2, 7)[0] == 200);
  CHECK_THROWS_AS(compose_panel({{a, Image(5, 3)}}), ValidationError);
  CHECK_THROWS_AS(compose_panel({}), ValidationError);
}

}  // TEST_SUITE

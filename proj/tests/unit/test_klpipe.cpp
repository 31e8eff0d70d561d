#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numbers>

#include "clustat/klpipe.hpp"

using namespace clustat;
using namespace clustat::kl;

namespace {

Eigen::MatrixXd random_spd(int n, RandomStream& rng) {
  Eigen::MatrixXd A(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) A(i, j) = rng.normal();
  Eigen::MatrixXd C = A * A.transpose() / n;
  C.diagonal().array() += 0.1;
  return C;
}

double ll_reference(const Eigen::VectorXd& y, const Eigen::MatrixXd& C) {
  const Eigen::FullPivLU<Eigen::MatrixXd> lu(C);
  return -0.5 * y.dot(lu.solve(y)) - 0.5 * std::log(lu.determinant());
}

// Small cubic block of cells with uniform shot noise.
struct Block {
  CellLattice lattice;
  OverdensityVector data;
};

Block block(double radius, double noise) {
  Block b;
  b.lattice = hcp_lattice(SurveyRegion{BoxRegion{{0, 0, 0}, {100, 100, 100}}}, radius);
  const auto n = static_cast<Eigen::Index>(b.lattice.size());
  b.data.x = Eigen::VectorXd::Zero(n);
  b.data.noise = Eigen::VectorXd::Constant(n, noise);
  for (std::size_t i = 0; i < b.lattice.size(); ++i) b.data.cells.push_back(i);
  return b;
}

}  // namespace

TEST_CASE("close-packed lattice: spacing, coordination and fill") {
  const double R = 5.0;
  const SurveyRegion box{BoxRegion{{0, 0, 0}, {120, 120, 120}}};
  const auto lat = hcp_lattice(box, R);
  double min_d = 1e300;
  std::size_t interior = 0;
  for (std::size_t i = 0; i < lat.size(); ++i) {
    CHECK(box.contains(lat.centers[i]));
    int neighbours = 0;
    for (std::size_t j = 0; j < lat.size(); ++j) {
      if (i == j) continue;
      const double d = std::hypot(lat.centers[i][0] - lat.centers[j][0], lat.centers[i][1] - lat.centers[j][1],
                                  lat.centers[i][2] - lat.centers[j][2]);
      min_d = std::min(min_d, d);
      if (d < 2 * R * (1 + 1e-9)) ++neighbours;
    }
    const auto& c = lat.centers[i];
    if (c[0] > 15 && c[0] < 105 && c[1] > 15 && c[1] < 105 && c[2] > 15 && c[2] < 105) {
      CHECK(neighbours == 12);
      ++interior;
    }
  }
  CHECK(interior > 0);
  CHECK(min_d == doctest::Approx(2 * R).epsilon(1e-12));
  // Close packing fills pi/sqrt(18) of space.
  const double fill = lat.size() * 4.0 / 3.0 * std::numbers::pi * R * R * R / box.volume();
  CHECK(fill == doctest::Approx(std::numbers::pi / std::sqrt(18.0)).epsilon(0.08));
}

TEST_CASE("wedge regions and tuned lattices") {
  const SurveyRegion wedge{WedgeRegion{}};
  CHECK(wedge.contains(sky_to_cartesian(195, 0, 200)));
  CHECK_FALSE(wedge.contains(sky_to_cartesian(195, 0, 500)));
  CHECK_FALSE(wedge.contains(sky_to_cartesian(100, 0, 200)));
  const double d2r = std::numbers::pi / 180;
  const double vol = (std::pow(400.0, 3) - std::pow(120.0, 3)) / 3 * (90 * d2r) * 2 * std::sin(12.5 * d2r);
  CHECK(wedge.volume() == doctest::Approx(vol).epsilon(1e-9));
  const auto p = sky_to_cartesian(30, 60, 2);
  CHECK(p[2] == doctest::Approx(std::sqrt(3.0)).epsilon(1e-14));
  const auto tuned = build_lattice(wedge, 10.0, std::size_t{600});
  CHECK(std::abs(static_cast<double>(tuned.size()) - 600.0) <= 0.2 * 600);
  const SurveyRegion inverted{WedgeRegion{150, 140, -1, 1, 10, 20}};
  CHECK_THROWS_AS(inverted.validate(), ConfigError);
}

TEST_CASE("kept mode count defaults to a third, as 2000 of 6000") {
  const KeepSpec keep;
  CHECK(keep.resolve(6000) == 2000);
  CHECK(keep.resolve(10) == 4);
  CHECK(keep.resolve(1) == 1);
  CHECK((KeepSpec{std::size_t{50}, 1.0 / 3.0}.resolve(20)) == 20);
  const KeepSpec empty{std::nullopt, 0.0};
  CHECK_THROWS_AS(empty.resolve(5), ConfigError);
}

TEST_CASE("2x2 eigenproblem matches the closed form") {
  const double a = 3.0, b = 1.25, d = 1.0;
  Eigen::Matrix2d C;
  C << a, b, b, d;
  const auto basis = kl_decompose(C, KeepSpec{std::size_t{2}});
  const double mean = 0.5 * (a + d), rad = std::hypot(0.5 * (a - d), b);
  CHECK(basis.eigenvalues[0] == doctest::Approx(mean + rad).epsilon(1e-12));
  CHECK(basis.eigenvalues[1] == doctest::Approx(mean - rad).epsilon(1e-12));
  const double angle = 0.5 * std::atan2(2 * b, a - d);
  CHECK(std::abs(std::abs(basis.vectors(0, 0)) - std::cos(angle)) < 1e-12);
  CHECK(std::abs(std::abs(basis.vectors(1, 0)) - std::sin(angle)) < 1e-12);
}

TEST_CASE("property: eigenbases are orthonormal, sorted and reconstruct the matrix") {
  RandomStream rng(5);
  for (int n : {3, 17, 60, 150}) {
    const auto C = random_spd(n, rng);
    const auto basis = kl_decompose(C);
    const auto& B = basis.vectors;
    CHECK((B.transpose() * B - Eigen::MatrixXd::Identity(n, n)).cwiseAbs().maxCoeff() < 1e-8);
    CHECK((B * basis.eigenvalues.asDiagonal() * B.transpose() - C).cwiseAbs().maxCoeff() < 1e-8 * C.norm());
    for (int k = 1; k < n; ++k) CHECK(basis.eigenvalues[k] <= basis.eigenvalues[k - 1]);
    CHECK(basis.kept.size() == KeepSpec{}.resolve(n));
    CHECK(basis.kept_vectors().cols() == static_cast<Eigen::Index>(basis.kept.size()));
  }
  Eigen::MatrixXd asym = random_spd(4, rng);
  asym(0, 1) += 0.1;
  CHECK_THROWS_AS(kl_decompose(asym), DataError);
}

TEST_CASE("property: projection is linear") {
  RandomStream rng(6);
  const auto basis = kl_decompose(random_spd(40, rng));
  for (int t = 0; t < 20; ++t) {
    Eigen::VectorXd x1(40), x2(40);
    for (int i = 0; i < 40; ++i) {
      x1[i] = rng.normal();
      x2[i] = rng.normal();
    }
    const double a = rng.normal(), b = rng.normal();
    const Eigen::VectorXd lhs = kl_project(a * x1 + b * x2, basis);
    const Eigen::VectorXd rhs = a * kl_project(x1, basis) + b * kl_project(x2, basis);
    CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-12 * (1 + rhs.cwiseAbs().maxCoeff()));
  }
  CHECK_THROWS_AS(kl_project(Eigen::VectorXd::Zero(3), basis), DataError);
}

TEST_CASE("Gaussian log-likelihood agrees with an LU evaluation") {
  RandomStream rng(7);
  for (int n : {1, 5, 30}) {
    const auto C = random_spd(n, rng);
    Eigen::VectorXd y(n);
    for (int i = 0; i < n; ++i) y[i] = rng.normal();
    CHECK(gaussian_log_likelihood(y, C) == doctest::Approx(ll_reference(y, C)).epsilon(1e-10));
  }
  Eigen::Matrix2d bad;
  bad << 1, 2, 2, 1;
  CHECK_THROWS_AS(gaussian_log_likelihood(Eigen::Vector2d(1, 0), bad), NumericError);
}

TEST_CASE("cell covariance: symmetry, noise floor and the top-hat variance") {
  const auto b = block(10.0, 0.02);
  const CovarianceModel model(b.lattice, b.data);
  const cosmo::SpectrumParams p;
  const auto C = model.covariance(p);
  CHECK((C - C.transpose()).cwiseAbs().maxCoeff() == 0.0);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(C);
  CHECK(es.eigenvalues().minCoeff() >= 0.02 * (1 - 1e-9));
  const cosmo::PowerSpectrum pk(p);
  const double var = cosmo::smoothed_variance([&](double k) { return pk(k); }, 10.0);
  CHECK(C(0, 0) == doctest::Approx(var + 0.02).epsilon(1e-12));
  const auto boosted = model.signal(cosmo::SpectrumParams{0.9, 0.2, 1.0, 0.5, 1.2});
  CHECK(boosted(0, 1) == doctest::Approx(model.signal(p)(0, 1) * 1.44 * (1 + 1.0 / 3 + 0.05)).epsilon(1e-12));
}

TEST_CASE("cell-averaged correlation agrees with a Monte-Carlo average over two spheres") {
  const double R = 14.5;
  CellLattice lat;
  lat.radius = R;
  lat.centers = {{0, 0, 0}, {2 * R, 0, 0}, {4 * R, 0, 0}};
  lat.region = {0, 0, 0};
  OverdensityVector ov;
  ov.x = Eigen::VectorXd::Zero(3);
  ov.noise = Eigen::VectorXd::Constant(3, 1.0);
  ov.cells = {0, 1, 2};
  const CovarianceModel model(lat, ov);
  const cosmo::PowerSpectrum pk(cosmo::SpectrumParams{});
  const auto S = model.signal(cosmo::SpectrumParams{});
  const auto point = cosmo::xi_from_pk([&](double k) { return pk(k); }, cosmo::log_spaced(1e-2, 200.0, 2000));
  RandomStream rng(14);
  auto in_ball = [&](const Vec3& c) {
    for (;;) {
      Vec3 v{2 * rng.uniform() - 1, 2 * rng.uniform() - 1, 2 * rng.uniform() - 1};
      if (v[0] * v[0] + v[1] * v[1] + v[2] * v[2] <= 1) return Vec3{c[0] + R * v[0], c[1] + R * v[1], c[2] + R * v[2]};
    }
  };
  for (int j : {1, 2}) {
    double sum = 0;
    const int samples = 200000;
    for (int s = 0; s < samples; ++s) {
      const auto a = in_ball(lat.centers[0]), b = in_ball(lat.centers[j]);
      sum += point.at(std::max(1e-2, std::hypot(a[0] - b[0], a[1] - b[1], a[2] - b[2])));
    }
    CHECK(S(0, j) == doctest::Approx(sum / samples).epsilon(0.05));
  }
}

TEST_CASE("overdensities and shot noise from cell counts") {
  CellCounts c;
  c.n_obs = {12, 3, 9, 5};
  c.n_full = {10, 10, 10, 0};
  c.n_sel = {10, 5, 8, 0};
  c.unconstrained = {0, 0, 0, 1};
  c.distance = {1, 1, 1, 1};
  const auto ov = overdensities(c, 0.75);
  REQUIRE(ov.cells == std::vector<std::size_t>{0, 2});
  CHECK(ov.x[0] == doctest::Approx(0.2).epsilon(1e-15));
  CHECK(ov.x[1] == doctest::Approx(9.0 / 8 - 1).epsilon(1e-15));
  CHECK(ov.noise[1] == doctest::Approx(1.0 / 8).epsilon(1e-15));
  CHECK(overdensities(c, 0.5).cells.size() == 3);
  CHECK_THROWS_AS(overdensities(c, 1.5), ConfigError);
}

TEST_CASE("count assembly normalizes expected counts to the observed total") {
  CellLattice lat;
  lat.radius = 2.0;
  lat.centers = {{10, 0, 0}, {0, 20, 0}, {0, 0, 30}};
  lat.region = {0, 0, 0};
  CellCoverage cov{{1.0, 0.8, 0.0}, {0.5, 0.25, 0.1}, {0, 0, 1}};
  const auto cc = assemble_counts({30, 10, 99}, cov, lat);
  const double vol = 4.0 / 3 * std::numbers::pi * 8;
  CHECK(cc.normalization == doctest::Approx(40 / (vol * (0.5 + 0.8 * 0.25))).epsilon(1e-14));
  CHECK(cc.n_sel[0] + cc.n_sel[1] == doctest::Approx(40).epsilon(1e-14));
  CHECK(cc.completeness(1) == doctest::Approx(0.8).epsilon(1e-14));
  CHECK(cc.n_sel[2] == 0);
  CHECK(cc.distance[2] == 30);
}

TEST_CASE("observed counts place galaxies by their redshift distance") {
  CellLattice lat;
  lat.radius = 5.0;
  const auto centre = sky_to_cartesian(180, 0, 200);
  lat.centers = {centre};
  lat.region = {0};
  const cosmo::DistanceRedshift dz(0.3);
  catalog::Catalog gal(3);
  gal[0].ra = 180, gal[0].dec = 0, gal[0].redshift = dz.redshift(203);
  gal[1].ra = 180, gal[1].dec = 0, gal[1].redshift = dz.redshift(206);
  gal[2].ra = 180, gal[2].dec = 0;  // no redshift
  CHECK(observed_counts(gal, lat, 0.3) == std::vector<double>{1.0});
}

TEST_CASE("likelihood surface nodes equal direct subspace evaluations") {
  auto b = block(12.0, 0.05);
  RandomStream rng(2);
  for (Eigen::Index i = 0; i < b.data.x.size(); ++i) b.data.x[i] = 0.4 * rng.normal();
  const CovarianceModel model(b.lattice, b.data);
  const auto basis = kl_decompose(model.covariance({}));
  const std::vector<RegionData> regions{{kl_project(b.data.x, basis), basis.kept_vectors(), &model}};
  GridAxes axes{{0.6, 0.8, 1.0, 1.2}, {0.15, 0.2, 0.3}, {}};
  const auto s = likelihood_grid(regions, axes, 2);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      cosmo::SpectrumParams p;
      p.sigma8 = axes.sigma8[i];
      p.gamma = axes.gamma[j];
      CHECK(s.at(i, j) == doctest::Approx(log_likelihood(regions[0].y, p, basis, model)).epsilon(1e-9));
    }
  double best = -1e300;
  for (double v : s.lnL) best = std::max(best, v);
  CHECK(s.at(s.peak_sigma8, s.peak_gamma) == best);
  CHECK(s.fisher(0, 1) == doctest::Approx(s.fisher(1, 0)).epsilon(1e-12));
  // Two identical regions double lnL.
  const std::vector<RegionData> twice{regions[0], regions[0]};
  const auto s2 = likelihood_grid(twice, axes, 1);
  CHECK(s2.at(1, 1) == doctest::Approx(2 * s.at(1, 1)).epsilon(1e-12));
  CHECK(s2.per_region.size() == 2);
}

TEST_CASE("basis files round-trip") {
  RandomStream rng(1);
  const auto basis = kl_decompose(random_spd(12, rng), KeepSpec{std::size_t{5}});
  const auto path = (std::filesystem::temp_directory_path() / "clustat_basis.bin").string();
  save_basis(path, basis);
  const auto back = load_basis(path);
  CHECK(back.eigenvalues == basis.eigenvalues);
  CHECK(back.vectors == basis.vectors);
  CHECK(back.kept == basis.kept);
}

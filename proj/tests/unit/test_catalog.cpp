#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "clustat/catalog.hpp"
#include "clustat/mocks.hpp"
#include "clustat/selection.hpp"
#include "clustat/spatial_index.hpp"

using namespace clustat;
using namespace clustat::catalog;

namespace {

std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "clustat_unit";
  std::filesystem::create_directories(dir);
  return dir / name;
}

Catalog sample_catalog(std::size_t n, std::uint64_t seed) {
  StripeLayout layout;
  auto cat = mocks::random_catalog(layout, n, {}, seed);
  RandomStream rng(seed, 9);
  for (std::size_t i = 0; i < cat.size(); ++i) {
    cat[i].mag = 14.0 + 4.0 * rng.uniform();
    if (i % 7 != 0) cat[i].redshift = 0.2 * rng.uniform();
  }
  return cat;
}

}  // namespace

TEST_CASE("record validation names the violated rule") {
  GalaxyRecord ok;
  ok.ra = 10;
  CHECK(validate(ok).empty());
  auto bad = ok;
  bad.ra = 360;
  CHECK(validate(bad) == "ra outside [0,360)");
  bad = ok;
  bad.camcol = 13;
  CHECK_FALSE(validate(bad).empty());
  bad = ok;
  bad.redshift = -0.1;
  CHECK_FALSE(validate(bad).empty());
  bad = ok;
  bad.weight = 1.5;
  CHECK_FALSE(validate(bad).empty());
}

TEST_CASE("catalog text round-trips, missing redshift included, and bad rows are counted") {
  const auto cat = sample_catalog(300, 4);
  const auto path = scratch("cat.csv").string();
  save_catalog(path, cat);
  const auto back = load_catalog(path);
  CHECK(back.rejected == 0);
  CHECK(back.catalog == cat);

  std::ofstream(path) << "dec,ra,redshift,mag,stripe,camcol,field,weight,extra\n"
                      << "1,10,,17,10,3,4,1,x\n"
                      << "1,400,0.1,17,10,3,4,1,x\n"
                      << "1,10,0.1,17,10,3\n";
  const auto mixed = load_catalog(path);
  REQUIRE(mixed.catalog.size() == 1);
  CHECK_FALSE(mixed.catalog[0].redshift.has_value());
  CHECK(mixed.catalog[0].ra == 10);
  CHECK(mixed.rejected == 2);

  std::ofstream(path) << "ra,dec\n1,2\n";
  CHECK_THROWS_AS(load_catalog(path), DataError);
  CHECK_THROWS_AS(load_catalog(scratch("missing.csv").string()), IoError);
}

TEST_CASE("stripe layout geometry") {
  StripeLayout layout;
  CHECK(layout.stripe_width_deg == 2.5);  // stripe width and 12 camcols as observed
  CHECK(layout.camcols == 12);
  const auto unit = layout.locate(151.0, -12.5 + 2.5 * 3 + 0.01);
  REQUIRE(unit.has_value());
  CHECK(unit->stripe == 13);
  CHECK(unit->camcol == 1);
  CHECK(unit->field == 4);
  CHECK(layout.locate(149.0, 0.0) == std::nullopt);
  const auto last = layout.locate(239.999, 12.49);
  REQUIRE(last.has_value());
  CHECK(last->camcol == 12);
  CHECK(layout.locate_clamped(300.0, 40.0).stripe == 19);
  const auto frame = layout.frame(10);
  CHECK(frame.width_arcmin() == doctest::Approx(150.0));
  double x = 0, y = 0, ra = 0, dec = 0;
  frame.to_xy(200.0, -11.0, x, y);
  frame.from_xy(x, y, ra, dec);
  CHECK(ra == doctest::Approx(200.0).epsilon(1e-13));
  CHECK(dec == doctest::Approx(-11.0).epsilon(1e-13));
  // Solid angle of the band: dRA * (sin dec_max - sin dec_min).
  const double d2r = std::numbers::pi / 180;
  CHECK(layout.solid_angle_sr() ==
        doctest::Approx(90 * d2r * (std::sin(12.5 * d2r) - std::sin(-12.5 * d2r))).epsilon(1e-12));
}

TEST_CASE("haversine separation matches the spherical law of cosines and stays accurate at tiny angles") {
  RandomStream rng(2);
  for (int i = 0; i < 500; ++i) {
    const double ra1 = 360 * rng.uniform(), ra2 = 360 * rng.uniform();
    const double d1 = 180 * rng.uniform() - 90, d2 = 180 * rng.uniform() - 90;
    const double r = std::numbers::pi / 180;
    const double c = std::sin(d1 * r) * std::sin(d2 * r) + std::cos(d1 * r) * std::cos(d2 * r) * std::cos((ra1 - ra2) * r);
    CHECK(angular_separation(ra1, d1, ra2, d2) == doctest::Approx(std::acos(std::clamp(c, -1.0, 1.0))).epsilon(1e-9));
  }
  const double tiny = 1e-9;
  CHECK(angular_separation(10, 0, 10 + tiny, 0) == doctest::Approx(tiny * std::numbers::pi / 180).epsilon(1e-9));
  CHECK(angular_separation(0, 90, 123, 90) < 1e-12);
}

TEST_CASE("masks: containment, deduplication and file round-trip") {
  MaskSet masks;
  masks.add({RectRegion{160, 161, -1, 1}, "bright_star"});
  masks.add({CircleRegion{200, 0, 30}, "satellite"});
  masks.add({RectRegion{160, 161, -1, 1}, "bright_star"});
  CHECK(masks.size() == 2);
  CHECK(masks.contains(160.5, 0));
  CHECK(masks.contains(200.3, 0.1));
  CHECK_FALSE(masks.contains(200.6, 0));
  const auto path = scratch("masks.txt").string();
  save_masks(path, masks);
  CHECK(load_masks(path).regions() == masks.regions());
  std::ofstream(path) << "polygon 1 2 3\n";
  CHECK_THROWS_AS(load_masks(path), DataError);
}

TEST_CASE("property: masking and subsampling commute") {
  RandomStream rng(31);
  for (int trial = 0; trial < 20; ++trial) {
    const auto cat = sample_catalog(400, 100 + trial);
    MaskSet masks;
    for (int k = 0; k < 5; ++k) {
      const double ra = 150 + 90 * rng.uniform(), dec = -12 + 24 * rng.uniform();
      if (k % 2)
        masks.add({CircleRegion{ra, dec, 60 * rng.uniform() + 10}});
      else
        masks.add({RectRegion{ra, ra + 10 * rng.uniform(), dec, dec + 5 * rng.uniform()}});
    }
    SubsampleSpec spec;
    spec.mag_min = 15;
    spec.mag_max = 17;
    if (trial % 2) spec.z_max = 0.1;
    if (trial % 3 == 0) spec.stripes = {11, 14, 15};
    CHECK(apply_masks(apply_subsample(cat, spec), masks) == apply_subsample(apply_masks(cat, masks), spec));
  }
}

TEST_CASE("subsample predicates are half-open and redshift predicates drop missing redshifts") {
  GalaxyRecord g;
  g.mag = 16;
  SubsampleSpec s;
  s.mag_min = 16;
  CHECK(s.accepts(g));
  s.mag_max = 16;
  CHECK_FALSE(s.accepts(g));
  SubsampleSpec z;
  z.z_min = 0;
  CHECK_FALSE(z.accepts(g));
  g.redshift = 0.0;
  CHECK(z.accepts(g));
}

TEST_CASE("property: cone counts equal a linear scan and grow with radius") {
  const auto cat = sample_catalog(3000, 8);
  const SpatialIndex index(cat);
  RandomStream rng(17);
  for (int q = 0; q < 40; ++q) {
    const double ra = 140 + 110 * rng.uniform(), dec = -20 + 40 * rng.uniform();
    std::size_t prev = 0;
    for (double r : {1.0, 10.0, 45.0, 120.0, 600.0}) {
      std::size_t brute = 0;
      for (const auto& g : cat)
        if (angular_separation(ra, dec, g.ra, g.dec) <= r * std::numbers::pi / (180 * 60)) ++brute;
      const auto n = cone_count(cat, ra, dec, r);
      CHECK(n == brute);
      CHECK(index.count(ra, dec, r) == brute);
      CHECK(n >= prev);
      prev = n;
    }
  }
  // Wrap-around in RA and the poles.
  Catalog polar;
  for (auto [ra, dec] : {std::pair{359.9, 0.0}, {0.05, 0.0}, {10.0, 89.99}, {190.0, 89.99}}) {
    GalaxyRecord g;
    g.ra = ra;
    g.dec = dec;
    polar.push_back(g);
  }
  CHECK(SpatialIndex(polar).count(0.0, 0.0, 10.0) == 2);
  CHECK(SpatialIndex(polar).count(100.0, 90.0, 1.0) == 2);
}

TEST_CASE("selection table interpolation is exact at knots and keeps phi_cum monotone") {
  const FluxLimitedSelection lf;
  const auto sel = lf.tabulate(10, 1000, 400);
  for (const auto& r : sel.rows()) {
    CHECK(sel.phi(r.dist) == r.phi);
    CHECK(sel.phi_cum(r.dist) == r.phi_cum);
    CHECK(sel.dlnphi_dm(r.dist) == r.dlnphi_dm);
  }
  double prev = -1;
  for (double d = 5; d < 1100; d += 0.37) {
    const double c = sel.phi_cum(d);
    CHECK(c >= prev);
    prev = c;
  }
  CHECK(sel.phi(5000) == 0);
  CHECK_THROWS_AS(sel.dlnphi_dm(2000), DataError);
  for (double u : {0.01, 0.3, 0.5, 0.99}) CHECK(sel.phi_cum(sel.inverse_cum(u)) == doctest::Approx(u).epsilon(1e-9));
}

TEST_CASE("flux-limited selection: dlnphi/dm equals the finite-difference response to a zero-point shift") {
  const FluxLimitedSelection lf;
  for (double d : {50.0, 150.0, 300.0, 450.0}) {
    const double h = 1e-5;
    const double fd = (std::log(lf.phi(d, h)) - std::log(lf.phi(d, -h))) / (2 * h);
    CHECK(lf.dlnphi_dm(d) == doctest::Approx(fd).epsilon(1e-6));
  }
  // Distance modulus with h = 1 distances in Mpc/h: 5 log10(d) + 25.
  CHECK(lf.distance_modulus(100.0) == doctest::Approx(35.0).epsilon(1e-12));
  CHECK(lf.phi(1.0) == doctest::Approx(0.0).epsilon(1e-12));
  // A fainter zero point pushes galaxies past the faint limit.
  CHECK(lf.dlnphi_dm(400) < -3.0);
  RandomStream rng(4);
  for (int i = 0; i < 200; ++i) {
    const double m = lf.draw_magnitude(250.0, rng.uniform());
    CHECK(m >= lf.m_bright);
    CHECK(m <= lf.m_faint);
  }
}

TEST_CASE("selection file round-trip and validation") {
  const auto sel = FluxLimitedSelection{}.tabulate(10, 800, 50);
  const auto path = scratch("sel.csv").string();
  save_selection(path, sel);
  const auto back = load_selection(path);
  REQUIRE(back.rows().size() == sel.rows().size());
  for (std::size_t i = 0; i < sel.rows().size(); ++i) {
    CHECK(back.rows()[i].dist == sel.rows()[i].dist);
    CHECK(back.rows()[i].phi_cum == sel.rows()[i].phi_cum);
  }
  CHECK_THROWS_AS(SelectionFunction({{1, 0.5, 0, 0}, {1, 0.5, 1, 0}}), DataError);
  CHECK_THROWS_AS(SelectionFunction({{1, 1.5, 0, 0}, {2, 0.5, 1, 0}}), DataError);
  CHECK_THROWS_AS(load_selection(scratch("nope.csv").string()), IoError);
}

#include "clustat/pipeline.hpp"

#include <algorithm>
#include <cmath>

#include "clustat/core.hpp"

namespace clustat::pipeline {

void SurveyConfig::validate() const {
  truth.validate();
  fiducial.validate();
  layout.validate();
  if (!(mean_density > 0)) throw ConfigError("mean_density must be positive");
  if (!(grid_spacing > 0)) throw ConfigError("grid_spacing must be positive");
  if (!(box_padding >= 1.0)) throw ConfigError("box_padding must be at least 1");
  if (regions.empty()) throw ConfigError("at least one survey region is required");
  for (const auto& w : regions) kl::SurveyRegion{w}.validate();
  if (!(cell_radius > 0)) throw ConfigError("cell_radius must be positive");
  if (randoms == 0) throw ConfigError("randoms must be positive");
  if (!(threshold > 0 && threshold <= 1)) throw ConfigError("threshold must be in (0, 1]");
  keep.resolve(1);
}

SurveyGeometry prepare_geometry(const SurveyConfig& config, std::uint64_t seed) {
  config.validate();
  mocks::RandomOptions ro;
  ro.overlap_deg = config.random_overlap_deg;
  ro.thin_by_weight = false;  // zero-weight randoms carry the geometric incompleteness
  const auto weights = config.masks.empty() ? mocks::WeightMap{} : mocks::mask_weights(config.masks);
  return prepare_geometry(config, config.luminosity.tabulate(),
                          mocks::random_catalog(config.layout, config.randoms, weights, seed, ro));
}

SurveyGeometry prepare_geometry(const SurveyConfig& config, catalog::SelectionFunction selection,
                                catalog::Catalog randoms) {
  config.validate();
  if (randoms.empty()) throw DataError("random catalog is empty");
  SurveyGeometry g{std::move(selection), std::move(randoms), {}};
  for (std::size_t r = 0; r < config.regions.size(); ++r) {
    RegionGeometry rg;
    rg.lattice = kl::build_lattice(kl::SurveyRegion{config.regions[r]}, config.cell_radius, config.target_cells,
                                   static_cast<int>(r));
    rg.coverage = kl::cell_coverage(g.randoms, rg.lattice, g.selection, config.threads);
    g.regions.push_back(std::move(rg));
  }
  return g;
}

std::vector<std::size_t> surviving_cells(const RegionGeometry& geometry, double threshold) {
  std::vector<std::size_t> cells;
  const auto& c = geometry.coverage;
  for (std::size_t i = 0; i < c.completeness.size(); ++i)
    if (!c.unconstrained[i] && c.phi_mean[i] > 0.0 && c.completeness[i] >= threshold) cells.push_back(i);
  return cells;
}

catalog::Catalog volume_mock(const SurveyConfig& config, const catalog::SelectionFunction& selection,
                             std::uint64_t seed) {
  config.validate();
  kl::Vec3 lo{1e300, 1e300, 1e300}, hi{-1e300, -1e300, -1e300};
  for (const auto& w : config.regions) {
    kl::Vec3 a, b;
    kl::SurveyRegion{w}.bounds(a, b);
    for (int k = 0; k < 3; ++k) {
      lo[k] = std::min(lo[k], a[k] - config.cell_radius);
      hi[k] = std::max(hi[k], b[k] + config.cell_radius);
    }
  }
  mocks::GridSpec grid{{0, 0, 0}, config.grid_spacing};
  mocks::VolumeSampling vs;
  for (int k = 0; k < 3; ++k) {
    const double edge = std::max(config.min_box, config.box_padding * (hi[k] - lo[k]));
    int n = static_cast<int>(std::ceil(edge / config.grid_spacing));
    n += n % 2;
    grid.dims[k] = n;
    vs.origin[k] = 0.5 * (lo[k] + hi[k]) - 0.5 * n * config.grid_spacing;
  }
  vs.selection = &selection;
  vs.luminosity = config.luminosity;
  vs.layout = config.layout;
  vs.omega_m = config.omega_m;
  vs.threads = config.threads;

  const cosmo::PowerSpectrum pk(config.truth);
  const double boost = cosmo::kaiser_boost(config.truth);
  mocks::FieldOptions fo;
  fo.threads = config.threads;
  const auto delta = mocks::density_field([&](double k) { return boost * pk(k); }, grid, seed,
                                          mocks::PositiveDensity::Lognormal, fo);
  auto galaxies = mocks::poisson_sample_volume(delta, grid, config.mean_density, vs, seed);
  if (!config.masks.empty()) galaxies = catalog::apply_masks(galaxies, config.masks);
  return galaxies;
}

RegionAnalysis analyze_region(const RegionGeometry& geometry, const catalog::Catalog& galaxies,
                              const SurveyConfig& config) {
  RegionAnalysis a;
  a.counts = kl::assemble_counts(kl::observed_counts(galaxies, geometry.lattice, config.omega_m), geometry.coverage,
                                 geometry.lattice);
  a.data = kl::overdensities(a.counts, config.threshold);
  a.model = std::make_shared<const kl::CovarianceModel>(geometry.lattice, a.data);
  a.fiducial = a.model->covariance(config.fiducial);
  a.basis = kl::kl_decompose(a.fiducial, config.keep);
  return a;
}

std::vector<kl::RegionData> project(std::span<const RegionAnalysis> regions, std::span<const Eigen::VectorXd> x,
                                    std::span<const kl::KLBasis> bases) {
  if (!x.empty() && x.size() != regions.size()) throw DataError("one data vector per region is required");
  if (!bases.empty() && bases.size() != regions.size()) throw DataError("one basis per region is required");
  std::vector<kl::RegionData> out;
  for (std::size_t r = 0; r < regions.size(); ++r) {
    const auto& basis = bases.empty() ? regions[r].basis : bases[r];
    const auto& v = x.empty() ? regions[r].data.x : x[r];
    out.push_back({kl::kl_project(v, basis), basis.kept_vectors(), regions[r].model.get()});
  }
  return out;
}

StripeMock stripe_mock(const StripeMockConfig& config, const cosmo::SpectrumFn& angular_pk,
                       const catalog::SelectionFunction& radial, std::uint64_t seed) {
  config.layout.validate();
  if (!(config.cell_arcmin > 0)) throw ConfigError("cell_arcmin must be positive");
  if (!(config.padding >= 1.0)) throw ConfigError("stripe mock padding must be at least 1");
  if (!(config.surface_density >= 0)) throw ConfigError("surface_density must be non-negative");
  const auto frame = config.layout.frame(config.stripe);
  StripeMock out;
  auto cells = [&](double extent) {
    int n = static_cast<int>(std::ceil(config.padding * extent / config.cell_arcmin));
    return n + n % 2;
  };
  out.grid = {{cells(frame.length_arcmin()), cells(frame.width_arcmin())}, config.cell_arcmin};
  std::vector<double> delta(out.grid.size(), 0.0);
  if (angular_pk) {
    mocks::FieldOptions fo;
    fo.threads = config.threads;
    delta = mocks::density_field(angular_pk, out.grid, seed, mocks::PositiveDensity::Lognormal, fo);
  }
  mocks::PlaneSampling ps;
  ps.layout = config.layout;
  ps.stripe = config.stripe;
  ps.radial = &radial;
  ps.luminosity = config.luminosity;
  ps.omega_m = config.omega_m;
  out.galaxies = mocks::poisson_sample_plane(delta, out.grid, config.surface_density, ps, seed);
  return out;
}

}  // namespace clustat::pipeline

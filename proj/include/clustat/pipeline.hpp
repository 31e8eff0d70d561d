// End-to-end KL survey analysis on simulated redshift surveys: mock volume
// catalogs, survey geometry (lattice, randoms, coverage) and per-region
// KL projections feeding the likelihood grid.

#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "clustat/catalog.hpp"
#include "clustat/cosmomodel.hpp"
#include "clustat/klpipe.hpp"
#include "clustat/mocks.hpp"
#include "clustat/selection.hpp"

namespace clustat::pipeline {

struct SurveyConfig {
  cosmo::SpectrumParams truth;     // mock input spectrum
  cosmo::SpectrumParams fiducial;  // builds the KL basis
  double mean_density = 0.01;      // (h/Mpc)^3 before selection
  double grid_spacing = 5.0;       // mock density grid, Mpc/h
  double box_padding = 2.0;        // mock box edge / survey extent, per axis
  double min_box = 600.0;          // Mpc/h
  catalog::StripeLayout layout;
  catalog::MaskSet masks;
  catalog::FluxLimitedSelection luminosity;
  std::vector<kl::WedgeRegion> regions{kl::WedgeRegion{}};
  double cell_radius = 14.5;
  std::optional<std::size_t> target_cells;  // per region; tunes the radius
  std::size_t randoms = 1000000;
  double random_overlap_deg = 8.0;
  double threshold = 0.75;
  kl::KeepSpec keep;
  kl::GridAxes axes;
  double omega_m = 0.3;
  unsigned threads = 0;

  void validate() const;
};

struct RegionGeometry {
  kl::CellLattice lattice;
  kl::CellCoverage coverage;
};

struct SurveyGeometry {
  catalog::SelectionFunction selection;
  catalog::Catalog randoms;
  std::vector<RegionGeometry> regions;
};

// Draws `config.randoms` angular randoms; the selection comes from the luminosity function.
SurveyGeometry prepare_geometry(const SurveyConfig& config, std::uint64_t seed);
// Uses the given selection function and random catalog instead.
SurveyGeometry prepare_geometry(const SurveyConfig& config, catalog::SelectionFunction selection,
                                catalog::Catalog randoms);

// Cells that survive the completeness threshold whenever the sample is non-empty.
std::vector<std::size_t> surviving_cells(const RegionGeometry& geometry, double threshold);

// Lognormal realization of the truth spectrum in a box around every region,
// Poisson-sampled through the selection function and the stripe layout.
catalog::Catalog volume_mock(const SurveyConfig& config, const catalog::SelectionFunction& selection,
                             std::uint64_t seed);

struct RegionAnalysis {
  kl::CellCounts counts;
  kl::OverdensityVector data;
  std::shared_ptr<const kl::CovarianceModel> model;
  Eigen::MatrixXd fiducial;  // C at the fiducial parameters
  kl::KLBasis basis;
};

// Counts, overdensities, model and fiducial KL basis of one region.
RegionAnalysis analyze_region(const RegionGeometry& geometry, const catalog::Catalog& galaxies,
                              const SurveyConfig& config);

// Projects x (defaults to each region's own data) onto each region's kept modes.
std::vector<kl::RegionData> project(std::span<const RegionAnalysis> regions,
                                    std::span<const Eigen::VectorXd> x = {},
                                    std::span<const kl::KLBasis> bases = {});

struct StripeMockConfig {
  catalog::StripeLayout layout;
  int stripe = 10;
  double cell_arcmin = 1.0;
  double padding = 2.0;          // grid edge / stripe extent, per axis
  double surface_density = 1.0;  // galaxies per arcmin^2
  catalog::FluxLimitedSelection luminosity;
  double omega_m = 0.3;
  unsigned threads = 0;
};

struct StripeMock {
  catalog::Catalog galaxies;
  mocks::GridSpec grid;  // cell (0,0) at the stripe frame origin, x along the scan
};

// Angular mock of one stripe: a lognormal field with angular power
// `angular_pk` (K in 1/arcmin, power in arcmin^2), or a Poisson field when
// angular_pk is empty.
StripeMock stripe_mock(const StripeMockConfig& config, const cosmo::SpectrumFn& angular_pk,
                       const catalog::SelectionFunction& radial, std::uint64_t seed);

}  // namespace clustat::pipeline

// Karhunen-Loeve likelihood pipeline: spherical cells on a hexagonal
// close-packed lattice, completeness-corrected overdensities, model
// covariance, eigenmode truncation and a likelihood grid with Fisher errors.

#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "clustat/catalog.hpp"
#include "clustat/cosmomodel.hpp"
#include "clustat/selection.hpp"
#include "clustat/spatial_index.hpp"

namespace clustat::kl {

using Vec3 = std::array<double, 3>;

Vec3 sky_to_cartesian(double ra_deg, double dec_deg, double distance);

struct BoxRegion {
  Vec3 lo{0, 0, 0}, hi{0, 0, 0};
};

// Angular rectangle between two comoving distances, observer at the origin.
struct WedgeRegion {
  double ra_min = 150, ra_max = 240, dec_min = -12.5, dec_max = 12.5;
  double d_min = 120, d_max = 400;
};

struct SurveyRegion {
  std::variant<BoxRegion, WedgeRegion> shape;

  void validate() const;
  bool contains(const Vec3& p) const;
  void bounds(Vec3& lo, Vec3& hi) const;
  double volume() const;
};

struct CellLattice {
  std::vector<Vec3> centers;
  double radius = 0.0;
  std::vector<int> region;  // region id per cell

  std::size_t size() const { return centers.size(); }
};

// ABAB-stacked close packing with spacing 2*radius, clipped to the region.
CellLattice hcp_lattice(const SurveyRegion& region, double radius, int region_id = 0);

// With a target count the radius is tuned until the count is within 20%.
CellLattice build_lattice(const SurveyRegion& region, double radius, std::optional<std::size_t> target_count = {},
                          int region_id = 0);

// fn(random index, phi-weighted volume of the random's sight line inside the
// ball) for every random whose direction passes through the ball.
void for_each_chord(const catalog::Catalog& randoms, const catalog::SpatialIndex& index, const Vec3& centre,
                    double radius, const catalog::SelectionFunction& selection,
                    const std::function<void(std::size_t, double)>& fn);

struct CellCounts {
  std::vector<double> n_obs;
  std::vector<double> n_full;
  std::vector<double> n_sel;
  std::vector<double> distance;            // centre distance
  std::vector<std::uint8_t> unconstrained;  // no randoms in the cone
  double normalization = 0.0;              // galaxies per unit volume at phi = 1

  double completeness(std::size_t i) const { return n_full[i] > 0.0 ? n_sel[i] / n_full[i] : 0.0; }
};

struct CountOptions {
  double omega_m = 0.3;
  unsigned threads = 0;
};

// Galaxies inside each cell's sphere (redshift converted to distance).
std::vector<double> observed_counts(const catalog::Catalog& galaxies, const CellLattice& lattice, double omega_m = 0.3);

struct CellCoverage {
  std::vector<double> completeness;  // weighted random fraction
  std::vector<double> phi_mean;      // ball-averaged selection
  std::vector<std::uint8_t> unconstrained;
};

CellCoverage cell_coverage(const catalog::Catalog& randoms, const CellLattice& lattice,
                           const catalog::SelectionFunction& selection, unsigned threads = 0);

// Expected counts scaled so that their total matches the observed total over
// all constrained cells.
CellCounts assemble_counts(const std::vector<double>& n_obs, const CellCoverage& coverage, const CellLattice& lattice);

CellCounts count_cells(const catalog::Catalog& galaxies, const catalog::Catalog& randoms, const CellLattice& lattice,
                       const catalog::SelectionFunction& selection, const CountOptions& options = {});

struct OverdensityVector {
  Eigen::VectorXd x;
  Eigen::VectorXd noise;           // shot-noise variance 1/n_sel
  std::vector<std::size_t> cells;  // lattice index of each entry
};

OverdensityVector overdensities(const CellCounts& counts, double threshold = 0.75);

// Signal correlations of top-hat cell averages plus diagonal shot noise.
class CovarianceModel {
 public:
  CovarianceModel(const CellLattice& lattice, const OverdensityVector& data);

  std::size_t size() const { return static_cast<std::size_t>(noise_.size()); }
  double radius() const { return radius_; }
  double min_separation() const { return min_sep_; }
  double max_separation() const { return max_sep_; }
  const Eigen::VectorXd& noise() const { return noise_; }
  const std::vector<Vec3>& centers() const { return centers_; }

  // Cell-averaged correlation table and variance for a spectrum.
  struct CellXi {
    cosmo::TabulatedXi xi;
    double variance = 0.0;
  };
  CellXi cell_correlation(const cosmo::SpectrumFn& pk) const;

  Eigen::MatrixXd signal(const CellXi& xi, double boost) const;
  Eigen::MatrixXd signal(const cosmo::SpectrumParams& params) const;
  Eigen::MatrixXd covariance(const cosmo::SpectrumParams& params) const;

 private:
  std::vector<Vec3> centers_;
  Eigen::VectorXd noise_;
  double radius_, min_sep_ = 0, max_sep_ = 0;
};

Eigen::MatrixXd build_covariance(const CellLattice& lattice, const OverdensityVector& data,
                                 const cosmo::SpectrumParams& params);

struct KeepSpec {
  std::optional<std::size_t> count;
  double fraction = 1.0 / 3.0;

  std::size_t resolve(std::size_t n) const;
};

struct KLBasis {
  Eigen::VectorXd eigenvalues;  // descending
  Eigen::MatrixXd vectors;      // columns, matching eigenvalues
  std::vector<std::size_t> kept;

  Eigen::MatrixXd kept_vectors() const;
};

KLBasis kl_decompose(const Eigen::MatrixXd& C, const KeepSpec& keep = {});
// Sorted eigensystem with an explicit kept set (used by the systematics filter).
KLBasis make_basis(Eigen::VectorXd eigenvalues, Eigen::MatrixXd vectors, std::vector<std::size_t> kept);

Eigen::VectorXd kl_project(const Eigen::VectorXd& x, const KLBasis& basis);

// -1/2 y^T C^-1 y - 1/2 ln|C| through a Cholesky factorization.
double gaussian_log_likelihood(const Eigen::VectorXd& y, const Eigen::MatrixXd& C);

double log_likelihood(const Eigen::VectorXd& y, const cosmo::SpectrumParams& params, const KLBasis& basis,
                      const CovarianceModel& model);

// One independent region: projected data, kept basis vectors and its model.
struct RegionData {
  Eigen::VectorXd y;
  Eigen::MatrixXd basis;  // n x m kept columns
  const CovarianceModel* model = nullptr;
};

struct GridAxes {
  std::vector<double> sigma8;
  std::vector<double> gamma;
  cosmo::SpectrumParams base;  // n_s, beta, bias
};

struct LikelihoodSurface {
  GridAxes axes;
  std::vector<double> lnL;                     // total, index i*gamma.size()+j
  std::vector<std::vector<double>> per_region;
  std::size_t peak_sigma8 = 0, peak_gamma = 0;
  bool boundary_peak = false;
  double refined_sigma8 = 0, refined_gamma = 0;  // quadratic fit around the peak
  Eigen::Matrix2d fisher = Eigen::Matrix2d::Zero();
  std::array<double, 2> sigma{0, 0};  // marginal 1-sigma from the inverse Fisher matrix

  double at(std::size_t i, std::size_t j) const { return lnL[i * axes.gamma.size() + j]; }
};

// ln L summed over regions at every node, with the Fisher matrix at the peak
// from central differences of step 2% of the grid spacing.
LikelihoodSurface likelihood_grid(std::span<const RegionData> regions, const GridAxes& axes, unsigned threads = 0);

void save_surface(const std::string& path, const LikelihoodSurface& s, int region = -1);
std::string surface_summary(const LikelihoodSurface& s);
void save_basis(const std::string& path, const KLBasis& basis);
KLBasis load_basis(const std::string& path);

}  // namespace clustat::kl

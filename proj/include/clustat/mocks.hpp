// Synthetic catalogs: Gaussian and lognormal density grids, Poisson sampling
// onto stripe geometry, angular random catalogs and zero-point tables.

#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "clustat/catalog.hpp"
#include "clustat/cosmomodel.hpp"
#include "clustat/selection.hpp"

namespace clustat::mocks {

// Row-major grid, last index fastest. spacing in Mpc/h (volume) or arcmin (plane).
struct GridSpec {
  std::vector<int> dims;
  double spacing = 1.0;

  std::size_t size() const;
  double cell_volume() const;
  void validate() const;
};

struct FieldOptions {
  // Modes with |k| above this are zeroed. Default: half the Nyquist wavenumber,
  // i.e. at least four cells per retained wavelength.
  std::optional<double> k_max;
  unsigned threads = 0;
};

// Zero-mean Gaussian field whose ensemble power spectrum is pk below k_max.
std::vector<double> gaussian_field(const cosmo::SpectrumFn& pk, const GridSpec& grid, std::uint64_t seed,
                                   const FieldOptions& options = {});

enum class PositiveDensity { Lognormal, Clip };

// Density contrast >= -1 with correlation function matching that of the
// band-limited pk on the grid (lognormal), or a clipped Gaussian field.
// Where ln(1 + xi) needs negative Gaussian power (beyond the band limit when
// xi(0) is of order one) that power is clipped, adding small-scale variance.
std::vector<double> density_field(const cosmo::SpectrumFn& pk, const GridSpec& grid, std::uint64_t seed,
                                  PositiveDensity mode = PositiveDensity::Lognormal, const FieldOptions& options = {});

// Correlation function of the band-limited pk on the grid lags (same layout as the grid).
std::vector<double> grid_correlation(const cosmo::SpectrumFn& pk, const GridSpec& grid, const FieldOptions& options = {});

// Expected galaxies per cell: n * V * (1+delta)_+ * weight(cell).
std::vector<double> poisson_intensity(const std::vector<double>& delta, const GridSpec& grid, double mean_density,
                                      const std::function<double(std::size_t)>& cell_weight = {});

struct VolumeSampling {
  std::array<double, 3> origin{0, 0, 0};  // corner of cell (0,0,0); observer at the coordinate origin
  const catalog::SelectionFunction* selection = nullptr;  // none: every galaxy kept
  catalog::FluxLimitedSelection luminosity;               // magnitudes
  catalog::StripeLayout layout;
  double omega_m = 0.3;
  unsigned threads = 0;
};

// Poisson-samples a 3D density grid, places galaxies uniformly inside cells and
// keeps those inside the layout. With a selection function, magnitudes are
// drawn within the flux limits; without one, from the full luminosity function.
catalog::Catalog poisson_sample_volume(const std::vector<double>& delta, const GridSpec& grid, double mean_density,
                                       const VolumeSampling& sampling, std::uint64_t seed);

struct PlaneSampling {
  catalog::StripeLayout layout;
  int stripe = 10;
  const catalog::SelectionFunction* radial = nullptr;  // distances for magnitudes/redshifts
  catalog::FluxLimitedSelection luminosity;
  double omega_m = 0.3;
};

// Poisson-samples a 2D grid laid over a stripe frame (x along the scan, arcmin;
// cell (0,0) at the frame origin). Cells outside the stripe are ignored.
catalog::Catalog poisson_sample_plane(const std::vector<double>& delta, const GridSpec& grid, double mean_density,
                                      const PlaneSampling& sampling, std::uint64_t seed);

struct RandomOptions {
  double overlap_deg = 0.0;    // extend the drawing area beyond the layout; outside points get weight 0
  bool thin_by_weight = true;  // keep each point with probability equal to its weight
};

using WeightMap = std::function<double(double ra, double dec)>;

catalog::Catalog random_catalog(const catalog::StripeLayout& layout, std::size_t count, const WeightMap& weights,
                                std::uint64_t seed, const RandomOptions& options = {});

// Weight 0 inside masks, 1 elsewhere.
WeightMap mask_weights(const catalog::MaskSet& masks);

struct ZeroPoint {
  int stripe;
  int camcol;
  double delta_m;
};

class ZeroPointTable {
 public:
  ZeroPointTable() = default;
  ZeroPointTable(const catalog::StripeLayout& layout, std::vector<ZeroPoint> rows);

  const std::vector<ZeroPoint>& rows() const { return rows_; }
  // Shift for (stripe, camcol); throws if the unit is unknown.
  double shift(int stripe, int camcol) const;
  std::size_t unit_index(int stripe, int camcol) const;
  ZeroPointTable scaled(double factor) const;

 private:
  int first_stripe_ = 0, camcols_ = 12;
  std::vector<ZeroPoint> rows_;
};

ZeroPointTable draw_zeropoints(const catalog::StripeLayout& layout, double std_mag, std::uint64_t seed);
void save_zeropoints(const std::string& path, const ZeroPointTable& table);
ZeroPointTable load_zeropoints(const std::string& path, const catalog::StripeLayout& layout);

// Shifts each magnitude by its unit's zero point and re-applies the flux limits.
// Applied to a catalog sampled without a selection function this reproduces the
// zero-point-perturbed flux-limited sample without linearization.
catalog::Catalog apply_flux_limits(const catalog::Catalog& parent, const ZeroPointTable& zp, double m_bright,
                                   double m_faint);

}  // namespace clustat::mocks

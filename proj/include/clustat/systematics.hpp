// Photometric zero-point systematics: per-cell modulation of expected counts
// through the selection function, the ensemble covariance of the modulation
// and KL bases that reject zero-point dominated modes.

#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

#include "clustat/catalog.hpp"
#include "clustat/klpipe.hpp"
#include "clustat/mocks.hpp"
#include "clustat/pipeline.hpp"
#include "clustat/selection.hpp"

namespace clustat::sys {

// Modulation coefficient dln(phi)/dm: the fractional change of the selected
// density per magnitude of zero-point shift.
class ModulationProfile {
 public:
  explicit ModulationProfile(const catalog::SelectionFunction& selection) : selection_(&selection) {}

  double at(double distance) const { return selection_->dlnphi_dm(distance); }
  // phi-weighted mean over a cell; throws when the cell leaves the table.
  double cell(double centre_distance, double radius) const;

 private:
  const catalog::SelectionFunction* selection_;
};

// Couples every data cell to the (stripe, camcol) units it sees.
struct UnitGeometry {
  Eigen::MatrixXd attribution;  // cells x units, rows sum to 1
  Eigen::VectorXd coefficient;  // per-cell modulation coefficient
  std::vector<std::size_t> cells;
  int units = 0;
};

// Attribution weights are the phi-weighted sight-line volumes of the
// in-survey randoms passing through each cell, grouped by unit.
UnitGeometry unit_geometry(const catalog::Catalog& randoms, const kl::CellLattice& lattice,
                           const std::vector<std::size_t>& cells, const ModulationProfile& profile,
                           const catalog::SelectionFunction& selection, const catalog::StripeLayout& layout,
                           unsigned threads = 0);

// Zero points in unit order.
Eigen::VectorXd unit_vector(const mocks::ZeroPointTable& zp, const catalog::StripeLayout& layout);

// First-order change of x = n_obs/n_sel - 1 under the zero points:
// d_i = (n_obs_i / n_sel_i) c_i (A dm)_i.
Eigen::VectorXd modulate_counts(const kl::CellCounts& counts, const mocks::ZeroPointTable& zp,
                                const UnitGeometry& geometry, const catalog::StripeLayout& layout);
// Same with the expected counts as base (n_obs = n_sel).
Eigen::VectorXd modulate_expected(const mocks::ZeroPointTable& zp, const UnitGeometry& geometry,
                                  const catalog::StripeLayout& layout);

struct SystematicsCovariance {
  Eigen::MatrixXd C;
  int realizations = 0;
  double zp_std = 0;
};

// (1/K) sum_k d_k d_k^T over independent zero-point draws. Without counts the
// modulation acts on the expected counts and C_sys is data-independent; with
// counts it acts on the observed ones, as an injected pattern would.
SystematicsCovariance ensemble_sys_covariance(const catalog::StripeLayout& layout, double zp_std, std::uint64_t seed,
                                              int realizations, const UnitGeometry& geometry, unsigned threads = 0,
                                              const kl::CellCounts* counts = nullptr);

void save_sys_covariance(const std::string& path, const SystematicsCovariance& c);
SystematicsCovariance load_sys_covariance(const std::string& path);

enum class FilterRule {
  // Generalized eigenmodes of C_sys against C_fid: reject the directions where
  // the zero-point variance exceeds `whitened_floor` of the fiducial variance.
  Whitened,
  // Eigenmodes b of C_fid + C_sys with b'C_sys b > ratio_threshold * b'C_fid b.
  Ratio,
};

struct FilterOptions {
  FilterRule rule = FilterRule::Whitened;
  double whitened_floor = 1e-6;
  double ratio_threshold = 3.0;
};

struct RejectedMode {
  std::size_t index;  // column in the returned basis
  double score;       // whitened variance or systematics/fiducial ratio
  Eigen::VectorXd direction;
};

struct FilteredBasis {
  kl::KLBasis basis;
  std::vector<RejectedMode> rejected;
};

FilteredBasis build_filtered_basis(const Eigen::MatrixXd& C_fid, const Eigen::MatrixXd& C_sys,
                                   const kl::KeepSpec& keep = {}, const FilterOptions& options = {});

struct ArmResult {
  std::string name;
  double peak_sigma8 = 0, peak_gamma = 0;        // grid node
  double refined_sigma8 = 0, refined_gamma = 0;  // quadratic refinement
  double peak_lnL = 0;
  double bias_sigma8 = 0;  // refined sigma8 minus the matching clean arm
  double delta_lnL = 0;    // peak lnL minus the matching clean arm
};

struct MockBias {
  std::uint64_t seed = 0;
  std::size_t rejected_modes = 0;
  std::vector<ArmResult> arms;  // clean, injected-unfiltered, injected-filtered, clean-filtered
};

struct BiasReport {
  double zp_std = 0;
  int realizations = 0;
  std::vector<MockBias> mocks;
  double median_bias_unfiltered = 0, median_bias_filtered = 0;
  double reduction = 0;  // 1 - filtered/unfiltered median |bias|
};

struct InjectionOptions {
  double zp_std = 0.015;
  int realizations = 100;
  // Injected signal: the expected-count modulation added to the observed
  // counts (x + f), or the proportional change of the observed counts
  // ((1 + x) f).
  bool multiplicative = false;
  bool clustered_base = false;  // build C_sys on the observed counts
  FilterOptions filter;
};

// Per mock: analyze clean, add a drawn zero-point modulation to the data and
// analyze it with the plain and the filtered basis. Filtered biases are taken
// against the clean data seen through the same filtered basis.
BiasReport inject_and_test(const pipeline::SurveyConfig& config, const pipeline::SurveyGeometry& geometry,
                           const std::vector<std::uint64_t>& seeds, const InjectionOptions& options = {});

std::string format_report(const BiasReport& report);

}  // namespace clustat::sys

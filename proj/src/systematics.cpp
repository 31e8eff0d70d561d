#include "clustat/systematics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "clustat/arrayio.hpp"
#include "clustat/core.hpp"
#include "clustat/spatial_index.hpp"

namespace clustat::sys {

namespace {

std::size_t unit_column(const catalog::StripeLayout& layout, int stripe, int camcol) {
  return static_cast<std::size_t>(stripe - layout.first_stripe) * static_cast<std::size_t>(layout.camcols) +
         static_cast<std::size_t>(camcol - 1);
}

// Pairwise (tree) summation of outer-product blocks: the result does not
// depend on how the realizations were scheduled.
Eigen::MatrixXd pairwise_gram(const Eigen::MatrixXd& D, Eigen::Index block) {
  std::vector<std::pair<int, Eigen::MatrixXd>> stack;
  for (Eigen::Index c = 0; c < D.cols(); c += block) {
    const Eigen::Index w = std::min(block, D.cols() - c);
    Eigen::MatrixXd part = D.middleCols(c, w) * D.middleCols(c, w).transpose();
    int level = 0;
    while (!stack.empty() && stack.back().first == level) {
      part = stack.back().second + part;
      stack.pop_back();
      ++level;
    }
    stack.emplace_back(level, std::move(part));
  }
  if (stack.empty()) return Eigen::MatrixXd::Zero(D.rows(), D.rows());
  Eigen::MatrixXd total = std::move(stack.back().second);
  for (auto it = stack.rbegin() + 1; it != stack.rend(); ++it) total = it->second + total;
  return total;
}

}  // namespace

double ModulationProfile::cell(double centre_distance, double radius) const {
  if (!(centre_distance - radius >= selection_->d_min() && centre_distance + radius <= selection_->d_max()))
    throw DataError("cell at distance " + format_double(centre_distance) + " extends outside the selection table [" +
                    format_double(selection_->d_min()) + ", " + format_double(selection_->d_max()) + "]");
  return selection_->ball_average(centre_distance, radius).dlnphi_dm;
}

UnitGeometry unit_geometry(const catalog::Catalog& randoms, const kl::CellLattice& lattice,
                           const std::vector<std::size_t>& cells, const ModulationProfile& profile,
                           const catalog::SelectionFunction& selection, const catalog::StripeLayout& layout,
                           unsigned threads) {
  layout.validate();
  UnitGeometry g;
  g.units = layout.stripe_count * layout.camcols;
  g.cells = cells;
  const auto n = static_cast<Eigen::Index>(cells.size());
  g.attribution = Eigen::MatrixXd::Zero(n, g.units);
  g.coefficient.resize(n);
  const catalog::SpatialIndex index(randoms);
  std::vector<std::string> failures(cells.size());
  parallel_for(cells.size(), threads, [&](std::size_t k) {
    const auto row = static_cast<Eigen::Index>(k);
    if (cells[k] >= lattice.size()) {
      failures[k] = "cell index outside the lattice";
      return;
    }
    const auto& c = lattice.centers[cells[k]];
    const double D = std::sqrt(c[0] * c[0] + c[1] * c[1] + c[2] * c[2]);
    try {
      g.coefficient[row] = profile.cell(D, lattice.radius);
    } catch (const Error& e) {
      failures[k] = e.what();
      return;
    }
    kl::for_each_chord(randoms, index, c, lattice.radius, selection, [&](std::size_t j, double vol) {
      const auto& r = randoms[j];
      if (r.weight <= 0.0) return;
      g.attribution(row, static_cast<Eigen::Index>(unit_column(layout, r.stripe, r.camcol))) += vol * r.weight;
    });
    const double sum = g.attribution.row(row).sum();
    if (!(sum > 0.0)) {
      failures[k] = "cell " + std::to_string(cells[k]) + " maps to no survey unit";
      return;
    }
    g.attribution.row(row) /= sum;
  });
  for (const auto& f : failures)
    if (!f.empty()) throw DataError(f);
  return g;
}

Eigen::VectorXd unit_vector(const mocks::ZeroPointTable& zp, const catalog::StripeLayout& layout) {
  Eigen::VectorXd v = Eigen::VectorXd::Zero(layout.stripe_count * layout.camcols);
  for (const auto& row : zp.rows()) {
    const std::size_t u = unit_column(layout, row.stripe, row.camcol);
    if (u >= static_cast<std::size_t>(v.size())) throw DataError("zero-point unit outside the layout");
    v[static_cast<Eigen::Index>(u)] = row.delta_m;
  }
  return v;
}

Eigen::VectorXd modulate_expected(const mocks::ZeroPointTable& zp, const UnitGeometry& geometry,
                                  const catalog::StripeLayout& layout) {
  return geometry.coefficient.cwiseProduct(geometry.attribution * unit_vector(zp, layout));
}

Eigen::VectorXd modulate_counts(const kl::CellCounts& counts, const mocks::ZeroPointTable& zp,
                                const UnitGeometry& geometry, const catalog::StripeLayout& layout) {
  Eigen::VectorXd d = modulate_expected(zp, geometry, layout);
  for (std::size_t k = 0; k < geometry.cells.size(); ++k) {
    const std::size_t i = geometry.cells[k];
    if (i >= counts.n_obs.size() || !(counts.n_sel[i] > 0.0)) throw DataError("modulated cell has no expected count");
    d[static_cast<Eigen::Index>(k)] *= counts.n_obs[i] / counts.n_sel[i];
  }
  return d;
}

SystematicsCovariance ensemble_sys_covariance(const catalog::StripeLayout& layout, double zp_std, std::uint64_t seed,
                                              int realizations, const UnitGeometry& geometry, unsigned threads,
                                              const kl::CellCounts* counts) {
  if (realizations < 2) throw ConfigError("systematics ensemble needs at least 2 realizations");
  if (!(zp_std >= 0.0)) throw ConfigError("zero-point std must be non-negative");
  const auto n = geometry.coefficient.size();
  Eigen::MatrixXd D(n, realizations);
  parallel_for(static_cast<std::size_t>(realizations), threads, [&](std::size_t k) {
    const auto zp = mocks::draw_zeropoints(layout, zp_std, splitmix64(seed ^ splitmix64(k)));
    D.col(static_cast<Eigen::Index>(k)) =
        counts ? modulate_counts(*counts, zp, geometry, layout) : modulate_expected(zp, geometry, layout);
  });
  SystematicsCovariance out;
  out.C = pairwise_gram(D, 4) / static_cast<double>(realizations);
  out.C = 0.5 * (out.C + out.C.transpose()).eval();
  out.realizations = realizations;
  out.zp_std = zp_std;
  return out;
}

void save_sys_covariance(const std::string& path, const SystematicsCovariance& c) {
  const auto n = static_cast<std::size_t>(c.C.rows());
  DenseArray a{n, n, {}, {{"name", "sys_covariance"}, {"realizations", std::to_string(c.realizations)},
                          {"zp_std", format_double(c.zp_std)}}};
  a.data.resize(n * n);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t k = 0; k < n; ++k) a.data[r * n + k] = c.C(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k));
  write_arrays(path, {a});
}

SystematicsCovariance load_sys_covariance(const std::string& path) {
  const auto arrays = read_arrays(path);
  if (arrays.size() != 1) throw DataError(path + ": expected one array");
  const auto& a = arrays[0];
  if (a.rows != a.cols) throw DataError(path + ": systematics covariance must be square");
  SystematicsCovariance c;
  c.C.resize(static_cast<Eigen::Index>(a.rows), static_cast<Eigen::Index>(a.cols));
  for (std::size_t r = 0; r < a.rows; ++r)
    for (std::size_t k = 0; k < a.cols; ++k)
      c.C(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k)) = a.data[r * a.cols + k];
  if (auto it = a.meta.find("realizations"); it != a.meta.end()) {
    long long k = 0;
    if (!parse_int(it->second, k)) throw DataError(path + ": bad realizations entry");
    c.realizations = static_cast<int>(k);
  }
  if (auto it = a.meta.find("zp_std"); it != a.meta.end() && !parse_double(it->second, c.zp_std))
    throw DataError(path + ": bad zp_std entry");
  return c;
}

FilteredBasis build_filtered_basis(const Eigen::MatrixXd& C_fid, const Eigen::MatrixXd& C_sys,
                                   const kl::KeepSpec& keep, const FilterOptions& options) {
  if (C_fid.rows() != C_sys.rows() || C_fid.cols() != C_sys.cols())
    throw DataError("fiducial and systematics covariances differ in size");
  const Eigen::Index n = C_fid.rows();
  const Eigen::MatrixXd T = C_fid + C_sys;
  auto ratio = [&](const Eigen::VectorXd& b) { return b.dot(C_sys * b) / b.dot(C_fid * b); };

  std::vector<double> values;
  std::vector<Eigen::VectorXd> vectors;
  std::vector<std::uint8_t> rejected;
  std::vector<double> scores;

  if (options.rule == FilterRule::Ratio) {
    if (!(options.ratio_threshold > 0)) throw ConfigError("ratio threshold must be positive");
    const auto full = kl::kl_decompose(T, kl::KeepSpec{static_cast<std::size_t>(n), 1.0});
    for (Eigen::Index i = 0; i < n; ++i) {
      values.push_back(full.eigenvalues[i]);
      vectors.emplace_back(full.vectors.col(i));
      const double s = ratio(vectors.back());
      scores.push_back(s);
      rejected.push_back(s > options.ratio_threshold);
    }
  } else {
    if (!(options.whitened_floor > 0)) throw ConfigError("whitened floor must be positive");
    Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> ges(C_sys, C_fid);
    if (ges.info() != Eigen::Success) throw NumericError("whitened systematics decomposition failed");
    const Eigen::VectorXd& mu = ges.eigenvalues();
    const double floor = std::max(options.whitened_floor, 1e-9 * mu.cwiseAbs().maxCoeff());
    std::vector<Eigen::Index> flagged;
    for (Eigen::Index i = n - 1; i >= 0; --i)
      if (mu[i] > floor) flagged.push_back(i);
    if (flagged.empty()) return {kl::kl_decompose(T, keep), {}};
    const auto r = static_cast<Eigen::Index>(flagged.size());
    if (r >= n) throw DataError("every mode is dominated by systematics");

    // Data-space directions of the flagged modes (C_fid v spans the range of C_sys).
    Eigen::MatrixXd U(n, r);
    for (Eigen::Index j = 0; j < r; ++j) U.col(j) = C_fid * ges.eigenvectors().col(flagged[static_cast<std::size_t>(j)]);
    const Eigen::MatrixXd Q = Eigen::HouseholderQR<Eigen::MatrixXd>(U).householderQ();
    auto rotate = [&](const Eigen::MatrixXd& block, bool is_rejected) {
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(block.transpose() * T * block);
      if (es.info() != Eigen::Success) throw NumericError("filtered subspace decomposition failed");
      const Eigen::MatrixXd V = block * es.eigenvectors();
      for (Eigen::Index i = V.cols() - 1; i >= 0; --i) {
        values.push_back(es.eigenvalues()[i]);
        vectors.emplace_back(V.col(i));
        scores.push_back(is_rejected ? ratio(vectors.back()) : 0.0);
        rejected.push_back(is_rejected);
      }
    };
    rotate(Q.leftCols(r), true);
    rotate(Q.rightCols(n - r), false);
  }

  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] > values[b]; });
  const std::size_t clean = static_cast<std::size_t>(std::count(rejected.begin(), rejected.end(), 0));
  if (clean == 0) throw DataError("every mode is dominated by systematics");
  const std::size_t want = std::min(keep.resolve(static_cast<std::size_t>(n)), clean);

  FilteredBasis out;
  Eigen::VectorXd evals(n);
  Eigen::MatrixXd evecs(n, n);
  std::vector<std::size_t> kept;
  for (std::size_t k = 0; k < order.size(); ++k) {
    const std::size_t src = order[k];
    evals[static_cast<Eigen::Index>(k)] = values[src];
    evecs.col(static_cast<Eigen::Index>(k)) = vectors[src];
    if (rejected[src])
      out.rejected.push_back({k, scores[src], vectors[src]});
    else if (kept.size() < want)
      kept.push_back(k);
  }
  out.basis = kl::make_basis(std::move(evals), std::move(evecs), std::move(kept));
  return out;
}

// ---------------------------------------------------------------------------

namespace {

ArmResult arm_result(const std::string& name, const kl::LikelihoodSurface& s) {
  ArmResult a;
  a.name = name;
  a.peak_sigma8 = s.axes.sigma8[s.peak_sigma8];
  a.peak_gamma = s.axes.gamma[s.peak_gamma];
  a.refined_sigma8 = s.refined_sigma8;
  a.refined_gamma = s.refined_gamma;
  a.peak_lnL = s.at(s.peak_sigma8, s.peak_gamma);
  return a;
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

constexpr std::uint64_t kInjectionSalt = 0x1f2e3d4c5b6a7988ULL;
constexpr std::uint64_t kEnsembleSalt = 0x7c6b5a4938271605ULL;

}  // namespace

BiasReport inject_and_test(const pipeline::SurveyConfig& config, const pipeline::SurveyGeometry& geometry,
                           const std::vector<std::uint64_t>& seeds, const InjectionOptions& options) {
  if (seeds.empty()) throw ConfigError("injection test needs at least one mock seed");
  BiasReport report;
  report.zp_std = options.zp_std;
  report.realizations = options.realizations;
  const ModulationProfile profile(geometry.selection);
  std::vector<double> unf, filt;

  for (std::uint64_t seed : seeds) {
    const auto galaxies = pipeline::volume_mock(config, geometry.selection, seed);
    std::vector<pipeline::RegionAnalysis> regions;
    std::vector<Eigen::VectorXd> injected;
    std::vector<kl::KLBasis> filtered;
    MockBias mb;
    mb.seed = seed;
    for (std::size_t r = 0; r < geometry.regions.size(); ++r) {
      const auto& rg = geometry.regions[r];
      auto ra = pipeline::analyze_region(rg, galaxies, config);
      const auto ug = unit_geometry(geometry.randoms, rg.lattice, ra.data.cells, profile, geometry.selection,
                                    config.layout, config.threads);
      const std::uint64_t salt = splitmix64(seed + r);
      const auto csys = ensemble_sys_covariance(config.layout, options.zp_std, splitmix64(salt ^ kEnsembleSalt),
                                                options.realizations, ug, config.threads,
                                                options.clustered_base ? &ra.counts : nullptr);
      const auto zp = mocks::draw_zeropoints(config.layout, options.zp_std, splitmix64(salt ^ kInjectionSalt));
      injected.push_back(ra.data.x + (options.multiplicative ? modulate_counts(ra.counts, zp, ug, config.layout)
                                                             : modulate_expected(zp, ug, config.layout)));
      auto fb = build_filtered_basis(ra.fiducial, csys.C, config.keep, options.filter);
      mb.rejected_modes += fb.rejected.size();
      filtered.push_back(std::move(fb.basis));
      regions.push_back(std::move(ra));
    }
    auto surface = [&](std::span<const Eigen::VectorXd> x, std::span<const kl::KLBasis> b) {
      const auto data = pipeline::project(regions, x, b);
      return kl::likelihood_grid(data, config.axes, config.threads);
    };
    auto clean = arm_result("clean", surface({}, {}));
    auto inj_unf = arm_result("injected_unfiltered", surface(injected, {}));
    auto inj_filt = arm_result("injected_filtered", surface(injected, filtered));
    auto clean_filt = arm_result("clean_filtered", surface({}, filtered));
    inj_unf.bias_sigma8 = inj_unf.refined_sigma8 - clean.refined_sigma8;
    inj_unf.delta_lnL = inj_unf.peak_lnL - clean.peak_lnL;
    inj_filt.bias_sigma8 = inj_filt.refined_sigma8 - clean_filt.refined_sigma8;
    inj_filt.delta_lnL = inj_filt.peak_lnL - clean_filt.peak_lnL;
    unf.push_back(std::abs(inj_unf.bias_sigma8));
    filt.push_back(std::abs(inj_filt.bias_sigma8));
    mb.arms = {clean, inj_unf, inj_filt, clean_filt};
    report.mocks.push_back(std::move(mb));
  }
  report.median_bias_unfiltered = median(unf);
  report.median_bias_filtered = median(filt);
  report.reduction = report.median_bias_unfiltered > 0 ? 1.0 - report.median_bias_filtered / report.median_bias_unfiltered : 0.0;
  return report;
}

std::string format_report(const BiasReport& r) {
  std::ostringstream o;
  o << "zp_std " << format_double(r.zp_std) << '\n';
  o << "realizations " << r.realizations << '\n';
  o << "mocks " << r.mocks.size() << '\n';
  o << "seed,arm,peak_sigma8,peak_gamma,refined_sigma8,refined_gamma,peak_lnL,bias_sigma8,delta_lnL,rejected_modes\n";
  for (const auto& m : r.mocks)
    for (const auto& a : m.arms)
      o << m.seed << ',' << a.name << ',' << format_double(a.peak_sigma8) << ',' << format_double(a.peak_gamma) << ','
        << format_double(a.refined_sigma8) << ',' << format_double(a.refined_gamma) << ','
        << format_double(a.peak_lnL) << ',' << format_double(a.bias_sigma8) << ',' << format_double(a.delta_lnL)
        << ',' << m.rejected_modes << '\n';
  o << "median_abs_bias_unfiltered " << format_double(r.median_bias_unfiltered) << '\n';
  o << "median_abs_bias_filtered " << format_double(r.median_bias_filtered) << '\n';
  o << "bias_reduction " << format_double(r.reduction) << '\n';
  return o.str();
}

}  // namespace clustat::sys

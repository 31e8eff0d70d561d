#include "cli.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "clustat/angcorr.hpp"
#include "clustat/catalog.hpp"
#include "clustat/core.hpp"
#include "clustat/cosmomodel.hpp"
#include "clustat/klpipe.hpp"
#include "clustat/mocks.hpp"
#include "clustat/pipeline.hpp"
#include "clustat/selection.hpp"
#include "clustat/systematics.hpp"
#include "svg_plot.hpp"

namespace clustat::cli {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// Seed derivation tags, so each consumer of the global seed gets its own stream.
enum : std::uint64_t { kTagRandoms = 1, kTagMock = 2, kTagSys = 3, kTagStripe = 4 };

std::uint64_t derive(std::uint64_t seed, std::uint64_t tag, std::uint64_t index = 0) {
  return splitmix64(seed ^ splitmix64(tag * 0x100000001ULL + index));
}

json params_json(const cosmo::SpectrumParams& p) {
  return {{"sigma8", p.sigma8}, {"gamma", p.gamma}, {"n_s", p.n_s}, {"beta", p.beta}, {"bias", p.bias}};
}

}  // namespace

json default_config() {
  const catalog::StripeLayout layout;
  const catalog::FluxLimitedSelection lf;
  const kl::WedgeRegion wedge;
  const cosmo::SpectrumParams params;
  json c;
  c["seed"] = 1;
  c["layout"] = {{"first_stripe", layout.first_stripe},     {"stripe_count", layout.stripe_count},
                 {"stripe_width_deg", layout.stripe_width_deg}, {"ra_min", layout.ra_min},
                 {"ra_max", layout.ra_max},                 {"dec_min", layout.dec_min},
                 {"camcols", layout.camcols},               {"field_length_deg", layout.field_length_deg}};
  c["luminosity"] = {{"m_star", lf.m_star}, {"sigma_m", lf.sigma_m}, {"m_bright", lf.m_bright}, {"m_faint", lf.m_faint}};
  c["selection_file"] = "";
  c["mask_file"] = "";
  c["omega_m"] = 0.3;
  c["truth"] = params_json(params);
  c["fiducial"] = params_json(params);
  c["mock"] = {{"kind", "volume"},        {"count", 10000},        {"randoms", 0},
               {"stripes", json::array()}, {"surface_density", 1.0}, {"clustered", true},
               {"cell_arcmin", 1.0},       {"padding", 2.0}};
  c["survey"] = {{"regions", json::array({{{"ra_min", wedge.ra_min},
                                           {"ra_max", wedge.ra_max},
                                           {"dec_min", wedge.dec_min},
                                           {"dec_max", wedge.dec_max},
                                           {"d_min", wedge.d_min},
                                           {"d_max", wedge.d_max}}})},
                 {"mean_density", 0.01},
                 {"grid_spacing", 5.0},
                 {"box_padding", 2.0},
                 {"min_box", 600.0},
                 {"cell_radius", 14.5},
                 {"target_cells", nullptr},
                 {"randoms", 1000000},
                 {"random_overlap_deg", 8.0},
                 {"threshold", 0.75},
                 {"keep_fraction", 1.0 / 3.0},
                 {"keep_count", nullptr}};
  c["angcorr"] = {{"catalog", ""},
                  {"stripes", json::array()},
                  {"cell_arcmin", 1.0},
                  {"supersample", 1},
                  {"streak_half_width", 1},
                  {"bins", 20},
                  {"theta_min", nullptr},
                  {"theta_max", nullptr},
                  {"write_maps", false},
                  {"subsamples", json::array({{{"name", "all"}}})}};
  c["kl"] = {{"catalog", ""},
             {"randoms_file", ""},
             {"sigma8", {{"min", 0.5}, {"max", 1.3}, {"step", 0.05}}},
             {"gamma", {{"min", 0.05}, {"max", 0.5}, {"step", 0.025}}},
             {"write_basis", false}};
  c["sys"] = {{"mocks", 10},         {"zp_std", 0.015},           {"realizations", 100},
              {"rule", "whitened"},  {"whitened_floor", 1e-6},     {"ratio_threshold", 3.0},
              {"multiplicative", false}, {"clustered_base", false}};
  return c;
}

namespace {

void check_keys(const json& user, const json& defaults, const std::string& where) {
  if (!user.is_object()) return;
  for (auto it = user.begin(); it != user.end(); ++it) {
    const std::string path = where.empty() ? it.key() : where + "." + it.key();
    if (!defaults.contains(it.key())) throw ConfigError("unknown config key: " + path);
    const auto& d = defaults[it.key()];
    if (d.is_object() && !it->is_object() && !(it.key() == "sigma8" || it.key() == "gamma"))
      throw ConfigError("config key " + path + " must be an object");
    if (d.is_object() && it->is_object() && !(it.key() == "sigma8" || it.key() == "gamma")) check_keys(*it, d, path);
  }
}

}  // namespace

json resolve_config(const json& user) {
  if (!user.is_object()) throw ConfigError("config must be a JSON object");
  auto c = default_config();
  check_keys(user, c, "");
  c.merge_patch(user);
  // merge_patch drops keys set to null; restore the optional ones.
  for (const char* k : {"target_cells", "keep_count"})
    if (!c["survey"].contains(k)) c["survey"][k] = nullptr;
  for (const char* k : {"theta_min", "theta_max"})
    if (!c["angcorr"].contains(k)) c["angcorr"][k] = nullptr;
  return c;
}

namespace {

// ---------------------------------------------------------------------------
// Config -> library types

template <typename T>
T get(const json& j, const char* key) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string("config key '") + key + "' is missing or has the wrong type");
  }
}

catalog::StripeLayout layout_from(const json& c) {
  const auto& j = c.at("layout");
  catalog::StripeLayout l;
  l.first_stripe = get<int>(j, "first_stripe");
  l.stripe_count = get<int>(j, "stripe_count");
  l.stripe_width_deg = get<double>(j, "stripe_width_deg");
  l.ra_min = get<double>(j, "ra_min");
  l.ra_max = get<double>(j, "ra_max");
  l.dec_min = get<double>(j, "dec_min");
  l.camcols = get<int>(j, "camcols");
  l.field_length_deg = get<double>(j, "field_length_deg");
  l.validate();
  return l;
}

catalog::FluxLimitedSelection luminosity_from(const json& c) {
  const auto& j = c.at("luminosity");
  catalog::FluxLimitedSelection lf;
  lf.m_star = get<double>(j, "m_star");
  lf.sigma_m = get<double>(j, "sigma_m");
  lf.m_bright = get<double>(j, "m_bright");
  lf.m_faint = get<double>(j, "m_faint");
  if (!(lf.sigma_m > 0) || !(lf.m_faint > lf.m_bright)) throw ConfigError("luminosity needs sigma_m > 0 and m_faint > m_bright");
  return lf;
}

cosmo::SpectrumParams params_from(const json& j) {
  cosmo::SpectrumParams p;
  p.sigma8 = get<double>(j, "sigma8");
  p.gamma = get<double>(j, "gamma");
  p.n_s = get<double>(j, "n_s");
  p.beta = get<double>(j, "beta");
  p.bias = get<double>(j, "bias");
  p.validate();
  return p;
}

catalog::SelectionFunction selection_from(const json& c) {
  const auto path = get<std::string>(c, "selection_file");
  if (!path.empty()) return catalog::load_selection(path);
  return luminosity_from(c).tabulate();
}

catalog::MaskSet masks_from(const json& c) {
  const auto path = get<std::string>(c, "mask_file");
  return path.empty() ? catalog::MaskSet{} : catalog::load_masks(path);
}

std::vector<double> axis_from(const json& j, const char* name) {
  std::vector<double> v;
  if (j.is_array()) {
    for (const auto& x : j) v.push_back(x.get<double>());
  } else if (j.is_object()) {
    const double lo = get<double>(j, "min"), hi = get<double>(j, "max"), step = get<double>(j, "step");
    if (!(step > 0) || !(hi >= lo)) throw ConfigError(std::string(name) + " axis needs step > 0 and max >= min");
    const auto n = static_cast<long>(std::floor((hi - lo) / step + 1e-9)) + 1;
    for (long i = 0; i < n; ++i) v.push_back(lo + static_cast<double>(i) * step);
  } else {
    throw ConfigError(std::string(name) + " axis must be a list or {min, max, step}");
  }
  if (v.empty()) throw ConfigError(std::string(name) + " axis is empty");
  return v;
}

pipeline::SurveyConfig survey_from(const json& c, unsigned threads) {
  const auto& s = c.at("survey");
  pipeline::SurveyConfig sc;
  sc.truth = params_from(c.at("truth"));
  sc.fiducial = params_from(c.at("fiducial"));
  sc.mean_density = get<double>(s, "mean_density");
  sc.grid_spacing = get<double>(s, "grid_spacing");
  sc.box_padding = get<double>(s, "box_padding");
  sc.min_box = get<double>(s, "min_box");
  sc.layout = layout_from(c);
  sc.masks = masks_from(c);
  sc.luminosity = luminosity_from(c);
  sc.regions.clear();
  for (const auto& r : s.at("regions")) {
    kl::WedgeRegion w;
    w.ra_min = get<double>(r, "ra_min");
    w.ra_max = get<double>(r, "ra_max");
    w.dec_min = get<double>(r, "dec_min");
    w.dec_max = get<double>(r, "dec_max");
    w.d_min = get<double>(r, "d_min");
    w.d_max = get<double>(r, "d_max");
    sc.regions.push_back(w);
  }
  sc.cell_radius = get<double>(s, "cell_radius");
  if (!s.at("target_cells").is_null()) sc.target_cells = get<std::size_t>(s, "target_cells");
  sc.randoms = get<std::size_t>(s, "randoms");
  sc.random_overlap_deg = get<double>(s, "random_overlap_deg");
  sc.threshold = get<double>(s, "threshold");
  sc.keep.fraction = get<double>(s, "keep_fraction");
  if (!s.at("keep_count").is_null()) sc.keep.count = get<std::size_t>(s, "keep_count");
  sc.axes.sigma8 = axis_from(c.at("kl").at("sigma8"), "sigma8");
  sc.axes.gamma = axis_from(c.at("kl").at("gamma"), "gamma");
  sc.axes.base = sc.fiducial;
  sc.omega_m = get<double>(c, "omega_m");
  sc.threads = threads;
  sc.validate();
  return sc;
}

std::vector<int> stripes_from(const json& j, const catalog::StripeLayout& layout) {
  std::vector<int> s;
  for (const auto& v : j) s.push_back(v.get<int>());
  if (s.empty()) s = layout.stripe_ids();
  for (int id : s)
    if (id < layout.first_stripe || id >= layout.first_stripe + layout.stripe_count)
      throw ConfigError("stripe " + std::to_string(id) + " is not in the layout");
  return s;
}

// ---------------------------------------------------------------------------

struct Run {
  json config;
  std::uint64_t seed = 1;
  fs::path out;
  unsigned threads = 1;
  bool dry_run = false;
  std::ostream* log = nullptr;
  std::vector<std::string> planned;  // artifact names, for --dry-run

  std::string path(const std::string& name) const { return (out / name).string(); }
};

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for writing: " + path);
  f << text;
  if (!f) throw IoError("write failed: " + path);
}

void echo_config(const Run& run) { write_text(run.path("config.json"), run.config.dump(2) + "\n"); }

void print_plan(const Run& run, const std::string& command) {
  *run.log << "command " << command << "\nseed " << run.seed << "\nout " << run.out.string() << "\nthreads "
           << run.threads << "\nartifacts:\n";
  for (const auto& a : run.planned) *run.log << "  " << (run.out / a).string() << '\n';
  *run.log << "config:\n" << run.config.dump(2) << '\n';
}

// ---------------------------------------------------------------------------

catalog::Catalog uniform_mock(const catalog::StripeLayout& layout, std::size_t count,
                              const catalog::FluxLimitedSelection& lf, const catalog::SelectionFunction& sel,
                              double omega_m, std::uint64_t seed) {
  if (count == 0) return {};
  mocks::RandomOptions ro;
  auto cat = mocks::random_catalog(layout, count, {}, seed, ro);
  const cosmo::DistanceRedshift dz(omega_m);
  RandomStream rng(seed, 5);
  for (auto& g : cat) {
    const double d = sel.inverse_cum(rng.uniform());
    g.redshift = dz.redshift(d);
    g.mag = lf.draw_magnitude(d, rng.uniform());
  }
  return cat;
}

void cmd_mock(Run& run) {
  const auto& c = run.config;
  const auto& m = c.at("mock");
  const auto kind = get<std::string>(m, "kind");
  if (kind != "volume" && kind != "angular" && kind != "uniform")
    throw ConfigError("mock.kind must be volume, angular or uniform");
  const auto layout = layout_from(c);
  const auto n_randoms = get<std::size_t>(m, "randoms");
  run.planned = {"galaxies.csv", "selection.csv", "config.json"};
  if (n_randoms > 0) run.planned.insert(run.planned.begin() + 1, "randoms.csv");
  if (run.dry_run) return;

  const auto selection = selection_from(c);
  const auto lf = luminosity_from(c);
  const auto masks = masks_from(c);
  catalog::Catalog galaxies;
  if (kind == "uniform") {
    galaxies = uniform_mock(layout, get<std::size_t>(m, "count"), lf, selection, get<double>(c, "omega_m"),
                            derive(run.seed, kTagMock));
  } else if (kind == "volume") {
    auto sc = survey_from(c, run.threads);
    galaxies = pipeline::volume_mock(sc, selection, derive(run.seed, kTagMock));
  } else {
    pipeline::StripeMockConfig smc;
    smc.layout = layout;
    smc.cell_arcmin = get<double>(m, "cell_arcmin");
    smc.padding = get<double>(m, "padding");
    smc.surface_density = get<double>(m, "surface_density");
    smc.luminosity = lf;
    smc.omega_m = get<double>(c, "omega_m");
    smc.threads = run.threads;
    std::optional<cosmo::AngularModel> model;
    cosmo::SpectrumFn angular;
    if (get<bool>(m, "clustered")) {
      const cosmo::PowerSpectrum pk(params_from(c.at("truth")));
      model.emplace([&](double k) { return pk(k); }, selection);
      angular = [&](double K) { return model->power_arcmin(K); };
    }
    for (int stripe : stripes_from(m.at("stripes"), layout)) {
      smc.stripe = stripe;
      auto part = pipeline::stripe_mock(smc, angular, selection, derive(run.seed, kTagStripe, static_cast<std::uint64_t>(stripe)));
      galaxies.insert(galaxies.end(), part.galaxies.begin(), part.galaxies.end());
    }
  }
  if (!masks.empty()) galaxies = catalog::apply_masks(galaxies, masks);

  fs::create_directories(run.out);
  catalog::save_catalog(run.path("galaxies.csv"), galaxies);
  if (n_randoms > 0) {
    const auto weights = masks.empty() ? mocks::WeightMap{} : mocks::mask_weights(masks);
    catalog::save_catalog(run.path("randoms.csv"),
                          mocks::random_catalog(layout, n_randoms, weights, derive(run.seed, kTagRandoms)));
  }
  catalog::save_selection(run.path("selection.csv"), selection);
  echo_config(run);
  *run.log << "mock " << kind << ": " << galaxies.size() << " galaxies\n";
}

// ---------------------------------------------------------------------------

catalog::SubsampleSpec subsample_from(const json& j) {
  catalog::SubsampleSpec s;
  auto opt = [&](const char* k, std::optional<double>& v) {
    if (j.contains(k) && !j.at(k).is_null()) v = get<double>(j, k);
  };
  opt("mag_min", s.mag_min);
  opt("mag_max", s.mag_max);
  opt("z_min", s.z_min);
  opt("z_max", s.z_max);
  opt("min_weight", s.min_weight);
  if (j.contains("stripes"))
    for (const auto& v : j.at("stripes")) s.stripes.push_back(v.get<int>());
  for (auto it = j.begin(); it != j.end(); ++it) {
    static const std::vector<std::string> known{"name", "mag_min", "mag_max", "z_min", "z_max", "min_weight", "stripes"};
    if (std::find(known.begin(), known.end(), it.key()) == known.end())
      throw ConfigError("unknown subsample key: " + it.key());
  }
  return s;
}

void cmd_angcorr(Run& run) {
  const auto& c = run.config;
  const auto& a = c.at("angcorr");
  const auto layout = layout_from(c);
  const auto stripes = stripes_from(a.at("stripes"), layout);
  const auto cat_path = get<std::string>(a, "catalog");
  if (cat_path.empty()) throw ConfigError("angcorr.catalog is required");
  std::vector<std::pair<std::string, catalog::SubsampleSpec>> subs;
  for (const auto& s : a.at("subsamples")) {
    const auto name = get<std::string>(s, "name");
    if (name.empty() || name.find_first_of("/\\ ") != std::string::npos)
      throw ConfigError("subsample names must be non-empty without spaces or slashes");
    for (const auto& [n, _] : subs)
      if (n == name) throw ConfigError("duplicate subsample name: " + name);
    subs.emplace_back(name, subsample_from(s));
  }
  if (subs.empty()) throw ConfigError("angcorr.subsamples is empty");
  const bool maps = get<bool>(a, "write_maps");
  for (const auto& [name, _] : subs) {
    for (int s : stripes) {
      run.planned.push_back("w_theta/" + name + "_stripe" + std::to_string(s) + ".csv");
      if (maps) run.planned.push_back("maps/" + name + "_stripe" + std::to_string(s) + ".arr");
    }
    if (stripes.size() >= 2) run.planned.push_back("w_theta/" + name + "_combined.csv");
    run.planned.push_back(name + ".svg");
  }
  run.planned.push_back("config.json");

  angcorr::StripeOptions so;
  so.grid.cell_arcmin = get<double>(a, "cell_arcmin");
  so.grid.supersample = get<int>(a, "supersample");
  so.streak_half_width = get<int>(a, "streak_half_width");
  const int bins = get<int>(a, "bins");
  if (bins < 1) throw ConfigError("angcorr.bins must be positive");
  const auto defaults = angcorr::default_binning(layout, so.grid.cell_arcmin);
  const double lo = a.at("theta_min").is_null() ? defaults.edges.front() : get<double>(a, "theta_min");
  const double hi = a.at("theta_max").is_null() ? defaults.edges.back() : get<double>(a, "theta_max");
  so.binning = angcorr::ThetaBinning::logarithmic(lo, hi, bins);
  if (run.dry_run) return;

  const auto loaded = catalog::load_catalog(cat_path);
  const auto masks = masks_from(c);
  fs::create_directories(run.out / "w_theta");
  if (maps) fs::create_directories(run.out / "maps");
  for (const auto& [name, spec] : subs) {
    const auto sample = catalog::apply_subsample(loaded.catalog, spec);
    std::vector<angcorr::StripeMeasurement> results(stripes.size());
    parallel_for(stripes.size(), run.threads, [&](std::size_t i) {
      results[i] = angcorr::measure_stripe(sample, masks, layout, stripes[i], so);
    });
    std::vector<plot::Series> series;
    std::vector<angcorr::AngularCorrelation> per;
    for (std::size_t i = 0; i < stripes.size(); ++i) {
      const auto stem = name + "_stripe" + std::to_string(stripes[i]);
      angcorr::save_w_theta(run.path("w_theta/" + stem + ".csv"), results[i].w_theta);
      if (maps) angcorr::save_map(run.path("maps/" + stem + ".arr"), results[i].map);
      per.push_back(results[i].w_theta);
      *run.log << name << " stripe " << stripes[i] << ": " << results[i].galaxies << " galaxies\n";
    }
    const auto& shown = stripes.size() >= 2 ? angcorr::combine_stripes(per) : per.front();
    if (stripes.size() >= 2) angcorr::save_w_theta(run.path("w_theta/" + name + "_combined.csv"), shown);
    series.push_back({stripes.size() >= 2 ? "stripe mean" : "stripe " + std::to_string(stripes[0]), shown.theta, shown.w,
                      shown.err});
    plot::write_svg(run.path(name + ".svg"),
                    plot::loglog_svg(series, "theta [arcmin]", "w(theta)", "angular correlation: " + name));
  }
  echo_config(run);
}

// ---------------------------------------------------------------------------

pipeline::SurveyGeometry geometry_for(const json& c, const pipeline::SurveyConfig& sc, std::uint64_t seed) {
  const auto sel_path = get<std::string>(c, "selection_file");
  const auto rnd_path = get<std::string>(c.at("kl"), "randoms_file");
  if (sel_path.empty() && rnd_path.empty()) return pipeline::prepare_geometry(sc, seed);
  auto selection = selection_from(c);
  catalog::Catalog randoms;
  if (rnd_path.empty()) {
    mocks::RandomOptions ro;
    ro.overlap_deg = sc.random_overlap_deg;
    ro.thin_by_weight = false;
    const auto weights = sc.masks.empty() ? mocks::WeightMap{} : mocks::mask_weights(sc.masks);
    randoms = mocks::random_catalog(sc.layout, sc.randoms, weights, seed, ro);
  } else {
    randoms = catalog::load_catalog(rnd_path).catalog;
  }
  return pipeline::prepare_geometry(sc, std::move(selection), std::move(randoms));
}

void write_cells(const std::string& path, const kl::CellLattice& lattice, const pipeline::RegionAnalysis& a) {
  std::ostringstream o;
  o << "cell,x,y,z,distance,n_obs,n_sel,completeness,overdensity\n";
  for (std::size_t k = 0; k < a.data.cells.size(); ++k) {
    const std::size_t i = a.data.cells[k];
    const auto& p = lattice.centers[i];
    o << i << ',' << format_double(p[0]) << ',' << format_double(p[1]) << ',' << format_double(p[2]) << ','
      << format_double(a.counts.distance[i]) << ',' << format_double(a.counts.n_obs[i]) << ','
      << format_double(a.counts.n_sel[i]) << ',' << format_double(a.counts.completeness(i)) << ','
      << format_double(a.data.x[static_cast<Eigen::Index>(k)]) << '\n';
  }
  write_text(path, o.str());
}

void cmd_kl(Run& run) {
  const auto& c = run.config;
  const auto sc = survey_from(c, run.threads);
  const auto cat_path = get<std::string>(c.at("kl"), "catalog");
  if (cat_path.empty()) throw ConfigError("kl.catalog is required");
  const bool basis = get<bool>(c.at("kl"), "write_basis");
  run.planned = {"surface.csv", "summary.txt", "surface.svg"};
  for (std::size_t r = 0; r < sc.regions.size(); ++r) {
    run.planned.push_back("surface_region" + std::to_string(r) + ".csv");
    run.planned.push_back("cells_region" + std::to_string(r) + ".csv");
    if (basis) run.planned.push_back("basis_region" + std::to_string(r) + ".arr");
  }
  run.planned.push_back("config.json");
  if (run.dry_run) return;

  const auto galaxies = catalog::load_catalog(cat_path).catalog;
  const auto geo = geometry_for(c, sc, derive(run.seed, kTagRandoms));
  std::vector<pipeline::RegionAnalysis> regions;
  for (const auto& rg : geo.regions) regions.push_back(pipeline::analyze_region(rg, galaxies, sc));
  const auto data = pipeline::project(regions);
  const auto surface = kl::likelihood_grid(data, sc.axes, run.threads);

  fs::create_directories(run.out);
  kl::save_surface(run.path("surface.csv"), surface);
  for (std::size_t r = 0; r < regions.size(); ++r) {
    kl::save_surface(run.path("surface_region" + std::to_string(r) + ".csv"), surface, static_cast<int>(r));
    write_cells(run.path("cells_region" + std::to_string(r) + ".csv"), geo.regions[r].lattice, regions[r]);
    if (basis) kl::save_basis(run.path("basis_region" + std::to_string(r) + ".arr"), regions[r].basis);
  }
  std::ostringstream summary;
  for (std::size_t r = 0; r < regions.size(); ++r)
    summary << "region" << r << " cells " << geo.regions[r].lattice.size() << " used " << regions[r].data.cells.size()
            << " kept_modes " << regions[r].basis.kept.size() << " radius " << format_double(geo.regions[r].lattice.radius)
            << '\n';
  summary << kl::surface_summary(surface);
  write_text(run.path("summary.txt"), summary.str());
  const double ps = surface.axes.sigma8[surface.peak_sigma8], pg = surface.axes.gamma[surface.peak_gamma];
  plot::write_svg(run.path("surface.svg"), plot::heatmap_svg(surface.axes.sigma8, surface.axes.gamma, surface.lnL,
                                                             "sigma8", "Gamma", "ln L", &ps, &pg));
  echo_config(run);
  *run.log << summary.str();
}

// ---------------------------------------------------------------------------

void cmd_sys(Run& run) {
  const auto& c = run.config;
  const auto& s = c.at("sys");
  const auto sc = survey_from(c, run.threads);
  const int mocks_n = get<int>(s, "mocks");
  if (mocks_n < 1) throw ConfigError("sys.mocks must be positive");
  sys::InjectionOptions opt;
  opt.zp_std = get<double>(s, "zp_std");
  opt.realizations = get<int>(s, "realizations");
  const auto rule = get<std::string>(s, "rule");
  if (rule == "whitened")
    opt.filter.rule = sys::FilterRule::Whitened;
  else if (rule == "ratio")
    opt.filter.rule = sys::FilterRule::Ratio;
  else
    throw ConfigError("sys.rule must be whitened or ratio");
  opt.filter.whitened_floor = get<double>(s, "whitened_floor");
  opt.filter.ratio_threshold = get<double>(s, "ratio_threshold");
  opt.multiplicative = get<bool>(s, "multiplicative");
  opt.clustered_base = get<bool>(s, "clustered_base");
  if (opt.realizations < 2) throw ConfigError("sys.realizations must be at least 2");
  if (!(opt.zp_std >= 0)) throw ConfigError("sys.zp_std must be non-negative");
  run.planned = {"bias_report.txt", "bias.svg"};
  for (std::size_t r = 0; r < sc.regions.size(); ++r) run.planned.push_back("csys_region" + std::to_string(r) + ".arr");
  run.planned.push_back("config.json");
  if (run.dry_run) return;

  const auto geo = geometry_for(c, sc, derive(run.seed, kTagRandoms));
  std::vector<std::uint64_t> seeds;
  for (int k = 0; k < mocks_n; ++k) seeds.push_back(derive(run.seed, kTagMock, static_cast<std::uint64_t>(k)));
  const auto report = sys::inject_and_test(sc, geo, seeds, opt);

  fs::create_directories(run.out);
  write_text(run.path("bias_report.txt"), sys::format_report(report));
  const sys::ModulationProfile profile(geo.selection);
  for (std::size_t r = 0; r < geo.regions.size(); ++r) {
    const auto& rg = geo.regions[r];
    const auto ug = sys::unit_geometry(geo.randoms, rg.lattice, pipeline::surviving_cells(rg, sc.threshold), profile,
                                       geo.selection, sc.layout, run.threads);
    const auto csys = sys::ensemble_sys_covariance(sc.layout, opt.zp_std, derive(run.seed, kTagSys, r),
                                                   opt.realizations, ug, run.threads);
    sys::save_sys_covariance(run.path("csys_region" + std::to_string(r) + ".arr"), csys);
  }
  plot::write_svg(run.path("bias.svg"),
                  plot::bar_svg({"unfiltered", "filtered"}, {report.median_bias_unfiltered, report.median_bias_filtered},
                                "median |sigma8 bias|", "zero-point injection"));
  echo_config(run);
  *run.log << "median |bias| unfiltered " << format_double(report.median_bias_unfiltered) << " filtered "
           << format_double(report.median_bias_filtered) << " reduction " << format_double(report.reduction) << '\n';
}

int exit_code(const Error& e) {
  switch (e.kind()) {
    case ErrorKind::Config: return kConfigError;
    case ErrorKind::Io: return kIoError;
    case ErrorKind::Data: return kDataError;
    case ErrorKind::Numeric: return kNumericError;
  }
  return kUsage;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"clustering statistics pipeline", "clustat"};
  app.require_subcommand(1);
  struct Flags {
    std::string config, out = "clustat_out";
    std::optional<std::uint64_t> seed;
    unsigned threads = 1;
    bool dry_run = false;
  } flags;
  const std::vector<std::pair<std::string, std::string>> commands{
      {"mock", "write a mock galaxy catalog"},
      {"angcorr", "angular correlation of stripes"},
      {"kl", "KL likelihood surface"},
      {"sys", "zero-point injection test"}};
  for (const auto& [name, help] : commands) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", flags.config, "JSON config file");
    sub->add_option("--seed", flags.seed, "global seed (overrides the config)");
    sub->add_option("--out", flags.out, "output directory");
    sub->add_option("--threads", flags.threads, "worker threads")->check(CLI::Range(1u, 1024u));
    sub->add_flag("--dry-run", flags.dry_run, "print the resolved plan and write nothing");
  }
  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }
  const std::string command = app.get_subcommands().front()->get_name();

  try {
    json user = json::object();
    if (!flags.config.empty()) {
      std::ifstream f(flags.config);
      if (!f) throw IoError("cannot open config: " + flags.config);
      try {
        user = json::parse(f);
      } catch (const json::parse_error& e) {
        throw ConfigError("config " + flags.config + " is not valid JSON: " + e.what());
      }
    }
    Run r;
    r.config = resolve_config(user);
    if (flags.seed) r.config["seed"] = *flags.seed;
    r.seed = get<std::uint64_t>(r.config, "seed");
    r.out = flags.out;
    r.threads = flags.threads;
    r.dry_run = flags.dry_run;
    r.log = &out;
    set_default_threads(r.threads);
    if (command == "mock")
      cmd_mock(r);
    else if (command == "angcorr")
      cmd_angcorr(r);
    else if (command == "kl")
      cmd_kl(r);
    else
      cmd_sys(r);
    if (r.dry_run) print_plan(r, command);
    return kOk;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return exit_code(e);
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kIoError;
  } catch (const json::exception& e) {
    err << "error: config: " << e.what() << '\n';
    return kConfigError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  }
}

}  // namespace clustat::cli

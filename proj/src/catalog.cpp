#include "clustat/catalog.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "clustat/core.hpp"
#include "clustat/spatial_index.hpp"

namespace clustat::catalog {

namespace {

constexpr double kDeg = 3.14159265358979323846 / 180.0;
constexpr const char* kColumns[] = {"ra", "dec", "redshift", "mag", "stripe", "camcol", "field", "weight"};

std::vector<std::string_view> split(std::string_view line, char delim) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(delim, start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

}  // namespace

std::string validate(const GalaxyRecord& rec) {
  if (!(rec.ra >= 0.0 && rec.ra < 360.0)) return "ra outside [0,360)";
  if (!(rec.dec >= -90.0 && rec.dec <= 90.0)) return "dec outside [-90,90]";
  if (rec.redshift && !(*rec.redshift >= 0.0 && std::isfinite(*rec.redshift))) return "negative redshift";
  if (!std::isfinite(rec.mag)) return "non-finite magnitude";
  if (rec.camcol < 1 || rec.camcol > 12) return "camcol outside 1..12";
  if (!(rec.weight >= 0.0 && rec.weight <= 1.0)) return "weight outside [0,1]";
  return {};
}

LoadResult load_catalog(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open catalog: " + path);

  std::string line;
  if (!std::getline(in, line)) throw DataError("catalog has no header: " + path);
  const char delim = line.find(',') != std::string::npos ? ',' : (line.find('\t') != std::string::npos ? '\t' : ',');

  std::map<std::string, std::size_t> column;
  const auto header = split(line, delim);
  for (std::size_t i = 0; i < header.size(); ++i) column[std::string(trim(header[i]))] = i;
  std::size_t idx[8];
  for (int c = 0; c < 8; ++c) {
    auto it = column.find(kColumns[c]);
    if (it == column.end()) throw DataError("catalog " + path + " lacks required column '" + kColumns[c] + "'");
    idx[c] = it->second;
  }

  LoadResult result;
  auto reject = [&](std::size_t lineno, const std::string& why) {
    ++result.rejected;
    if (result.reject_reasons.size() < 20) result.reject_reasons.push_back("line " + std::to_string(lineno) + ": " + why);
  };

  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto fields = split(line, delim);
    if (fields.size() != header.size()) {
      reject(lineno, "expected " + std::to_string(header.size()) + " fields");
      continue;
    }
    GalaxyRecord rec;
    long long stripe = 0, camcol = 0, field = 0;
    double z = 0.0;
    const auto zfield = trim(fields[idx[2]]);
    bool ok = parse_double(fields[idx[0]], rec.ra) && parse_double(fields[idx[1]], rec.dec) &&
              parse_double(fields[idx[3]], rec.mag) && parse_int(fields[idx[4]], stripe) &&
              parse_int(fields[idx[5]], camcol) && parse_int(fields[idx[6]], field) &&
              parse_double(fields[idx[7]], rec.weight);
    if (ok && !zfield.empty()) {
      ok = parse_double(zfield, z);
      rec.redshift = z;
    }
    if (!ok) {
      reject(lineno, "unparseable field");
      continue;
    }
    rec.stripe = static_cast<int>(stripe);
    rec.camcol = static_cast<int>(camcol);
    rec.field = static_cast<int>(field);
    if (auto why = validate(rec); !why.empty()) {
      reject(lineno, why);
      continue;
    }
    result.catalog.push_back(rec);
  }
  return result;
}

void save_catalog(const std::string& path, const Catalog& catalog) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << "ra,dec,redshift,mag,stripe,camcol,field,weight\n";
  for (const auto& r : catalog) {
    out << format_double(r.ra) << ',' << format_double(r.dec) << ','
        << (r.redshift ? format_double(*r.redshift) : std::string()) << ',' << format_double(r.mag) << ','
        << r.stripe << ',' << r.camcol << ',' << r.field << ',' << format_double(r.weight) << '\n';
  }
  if (!out) throw IoError("write failed: " + path);
}

// ---------------------------------------------------------------------------

void StripeLayout::validate() const {
  if (stripe_count <= 0) throw ConfigError("layout: stripe_count must be positive");
  if (!(stripe_width_deg > 0.0)) throw ConfigError("layout: stripe width must be positive");
  if (!(ra_min >= 0.0 && ra_max <= 360.0 && ra_max > ra_min)) throw ConfigError("layout: need 0 <= ra_min < ra_max <= 360");
  if (!(dec_min >= -90.0 && dec_max() <= 90.0)) throw ConfigError("layout: declination range exceeds the sphere");
  if (camcols < 1 || camcols > 12) throw ConfigError("layout: camcols must be in 1..12");
  if (!(field_length_deg > 0.0)) throw ConfigError("layout: field length must be positive");
}

bool StripeLayout::contains(double ra, double dec) const {
  return ra >= ra_min && ra < ra_max && dec >= dec_min && dec < dec_max();
}

std::optional<SurveyUnit> StripeLayout::locate(double ra, double dec) const {
  if (!contains(ra, dec)) return std::nullopt;
  return locate_clamped(ra, dec);
}

SurveyUnit StripeLayout::locate_clamped(double ra, double dec) const {
  const double u = (dec - dec_min) / stripe_width_deg;
  const int s = std::clamp(static_cast<int>(std::floor(u)), 0, stripe_count - 1);
  const double within = std::clamp(u - s, 0.0, 1.0);
  const int c = std::clamp(static_cast<int>(std::floor(within * camcols)), 0, camcols - 1);
  const int f = std::clamp(static_cast<int>(std::floor((ra - ra_min) / field_length_deg)), 0, fields_per_stripe() - 1);
  return {first_stripe + s, c + 1, f};
}

StripeFrame StripeLayout::frame(int stripe) const {
  const int s = stripe - first_stripe;
  if (s < 0 || s >= stripe_count) throw DataError("stripe " + std::to_string(stripe) + " is not in the layout");
  StripeFrame f;
  f.stripe = stripe;
  f.ra_min = ra_min;
  f.ra_max = ra_max;
  f.dec_lo = dec_min + s * stripe_width_deg;
  f.dec_hi = f.dec_lo + stripe_width_deg;
  f.cos_dec = std::cos(0.5 * (f.dec_lo + f.dec_hi) * kDeg);
  return f;
}

std::vector<int> StripeLayout::stripe_ids() const {
  std::vector<int> ids(stripe_count);
  for (int s = 0; s < stripe_count; ++s) ids[s] = first_stripe + s;
  return ids;
}

int StripeLayout::fields_per_stripe() const {
  return std::max(1, static_cast<int>(std::ceil((ra_max - ra_min) / field_length_deg - 1e-9)));
}

double StripeLayout::solid_angle_sr() const {
  return (ra_max - ra_min) * kDeg * (std::sin(dec_max() * kDeg) - std::sin(dec_min * kDeg));
}

// ---------------------------------------------------------------------------

double angular_separation(double ra1, double dec1, double ra2, double dec2) {
  const double p1 = dec1 * kDeg, p2 = dec2 * kDeg;
  const double sdp = std::sin(0.5 * (p2 - p1));
  const double sdl = std::sin(0.5 * (ra2 - ra1) * kDeg);
  const double h = sdp * sdp + std::cos(p1) * std::cos(p2) * sdl * sdl;
  return 2.0 * std::asin(std::min(1.0, std::sqrt(h)));
}

bool MaskRegion::contains(double ra, double dec) const {
  if (const auto* r = std::get_if<RectRegion>(&shape))
    return ra >= r->ra_min && ra <= r->ra_max && dec >= r->dec_min && dec <= r->dec_max;
  const auto& c = std::get<CircleRegion>(shape);
  return angular_separation(ra, dec, c.ra, c.dec) <= c.radius_arcmin / 60.0 * kDeg;
}

MaskSet::MaskSet(std::vector<MaskRegion> regions) {
  for (auto& r : regions) add(std::move(r));
}

void MaskSet::add(MaskRegion region) {
  if (const auto* r = std::get_if<RectRegion>(&region.shape)) {
    if (!(r->ra_max > r->ra_min && r->dec_max > r->dec_min))
      throw DataError("mask rectangle must have positive area");
  } else if (!(std::get<CircleRegion>(region.shape).radius_arcmin > 0.0)) {
    throw DataError("mask circle must have positive radius");
  }
  if (std::find(regions_.begin(), regions_.end(), region) == regions_.end()) regions_.push_back(std::move(region));
}

MaskSet MaskSet::merged(const MaskSet& other) const {
  MaskSet out = *this;
  for (const auto& r : other.regions_) out.add(r);
  return out;
}

bool MaskSet::contains(double ra, double dec) const {
  return std::any_of(regions_.begin(), regions_.end(), [&](const MaskRegion& r) { return r.contains(ra, dec); });
}

MaskSet load_masks(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open mask file: " + path);
  MaskSet masks;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ss(line);
    std::string tag;
    if (!(ss >> tag)) continue;
    auto bad = [&] { return DataError(path + ":" + std::to_string(lineno) + ": malformed " + tag + " region"); };
    MaskRegion region;
    if (tag == "rect") {
      RectRegion r{};
      if (!(ss >> r.ra_min >> r.ra_max >> r.dec_min >> r.dec_max)) throw bad();
      region.shape = r;
    } else if (tag == "circle") {
      CircleRegion c{};
      if (!(ss >> c.ra >> c.dec >> c.radius_arcmin)) throw bad();
      region.shape = c;
    } else {
      throw DataError(path + ":" + std::to_string(lineno) + ": unknown region tag '" + tag + "'");
    }
    std::string reason;
    if (ss >> reason) region.reason = reason;
    masks.add(std::move(region));
  }
  return masks;
}

void save_masks(const std::string& path, const MaskSet& masks) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << "# shape coordinates(deg) [radius(arcmin)] reason\n";
  for (const auto& m : masks.regions()) {
    if (const auto* r = std::get_if<RectRegion>(&m.shape)) {
      out << "rect " << format_double(r->ra_min) << ' ' << format_double(r->ra_max) << ' '
          << format_double(r->dec_min) << ' ' << format_double(r->dec_max);
    } else {
      const auto& c = std::get<CircleRegion>(m.shape);
      out << "circle " << format_double(c.ra) << ' ' << format_double(c.dec) << ' ' << format_double(c.radius_arcmin);
    }
    out << ' ' << m.reason << '\n';
  }
  if (!out) throw IoError("write failed: " + path);
}

// ---------------------------------------------------------------------------

bool SubsampleSpec::accepts(const GalaxyRecord& rec) const {
  if (mag_min && !(rec.mag >= *mag_min)) return false;
  if (mag_max && !(rec.mag < *mag_max)) return false;
  if (z_min || z_max) {
    if (!rec.redshift) return false;
    if (z_min && !(*rec.redshift >= *z_min)) return false;
    if (z_max && !(*rec.redshift < *z_max)) return false;
  }
  if (!stripes.empty() && std::find(stripes.begin(), stripes.end(), rec.stripe) == stripes.end()) return false;
  if (min_weight && !(rec.weight >= *min_weight)) return false;
  return true;
}

Catalog apply_subsample(const Catalog& catalog, const SubsampleSpec& spec) {
  Catalog out;
  std::copy_if(catalog.begin(), catalog.end(), std::back_inserter(out), [&](const auto& r) { return spec.accepts(r); });
  return out;
}

Catalog apply_masks(const Catalog& catalog, const MaskSet& masks) {
  if (masks.empty()) return catalog;
  Catalog out;
  std::copy_if(catalog.begin(), catalog.end(), std::back_inserter(out),
               [&](const auto& r) { return !masks.contains(r.ra, r.dec); });
  return out;
}

std::size_t cone_count(const Catalog& catalog, double ra, double dec, double radius_arcmin) {
  if (!(radius_arcmin > 0.0)) throw std::invalid_argument("cone_count: radius must be positive");
  return SpatialIndex(catalog).count(ra, dec, radius_arcmin);
}

}  // namespace clustat::catalog

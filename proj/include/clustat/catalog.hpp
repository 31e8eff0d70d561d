// Galaxy catalogs, survey stripe geometry, masks and predicate subsamples.

#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace clustat::catalog {

struct GalaxyRecord {
  double ra = 0.0;   // degrees, [0, 360)
  double dec = 0.0;  // degrees, [-90, 90]
  std::optional<double> redshift;
  double mag = 0.0;  // apparent magnitude
  int stripe = 0;
  int camcol = 1;  // 1..12
  int field = 0;
  double weight = 1.0;  // angular completeness, [0, 1]

  friend bool operator==(const GalaxyRecord&, const GalaxyRecord&) = default;
};

using Catalog = std::vector<GalaxyRecord>;

// Empty string when the record is valid, otherwise the first violated rule.
std::string validate(const GalaxyRecord& rec);

struct LoadResult {
  Catalog catalog;
  std::size_t rejected = 0;
  std::vector<std::string> reject_reasons;  // first few, for diagnostics
};

// Delimiter-separated text with a header naming at least
// ra,dec,redshift,mag,stripe,camcol,field,weight (any order, extra columns ignored).
// Malformed or out-of-range rows are skipped and counted; a missing file or
// missing required column throws.
LoadResult load_catalog(const std::string& path);
void save_catalog(const std::string& path, const Catalog& catalog);

// (stripe, camcol, field) identifies the photometric unit of a record.
struct SurveyUnit {
  int stripe = 0;
  int camcol = 1;
  int field = 0;
  friend bool operator==(const SurveyUnit&, const SurveyUnit&) = default;
};

// Flat rectangle frame for one stripe: x along the scan (RA) and y across it,
// both in arcmin, origin at the stripe's (ra_min, dec_lo) corner.
struct StripeFrame {
  int stripe = 0;
  double ra_min = 0, ra_max = 0, dec_lo = 0, dec_hi = 0;
  double cos_dec = 1;

  double length_arcmin() const { return (ra_max - ra_min) * cos_dec * 60.0; }
  double width_arcmin() const { return (dec_hi - dec_lo) * 60.0; }
  void to_xy(double ra, double dec, double& x, double& y) const {
    x = (ra - ra_min) * cos_dec * 60.0;
    y = (dec - dec_lo) * 60.0;
  }
  void from_xy(double x, double y, double& ra, double& dec) const {
    ra = ra_min + x / (cos_dec * 60.0);
    dec = dec_lo + y / 60.0;
  }
};

// Parallel stripes along RA, stacked in declination. Each stripe is split into
// equal-width camcols across the scan and fields of fixed length along it.
struct StripeLayout {
  int first_stripe = 10;
  int stripe_count = 10;
  double stripe_width_deg = 2.5;
  double ra_min = 150.0;
  double ra_max = 240.0;
  double dec_min = -12.5;
  int camcols = 12;
  double field_length_deg = 0.25;

  void validate() const;
  double dec_max() const { return dec_min + stripe_count * stripe_width_deg; }
  bool contains(double ra, double dec) const;
  std::optional<SurveyUnit> locate(double ra, double dec) const;
  // Nearest unit for points outside the layout.
  SurveyUnit locate_clamped(double ra, double dec) const;
  StripeFrame frame(int stripe) const;
  std::vector<int> stripe_ids() const;
  int fields_per_stripe() const;
  double solid_angle_sr() const;
};

struct RectRegion {
  double ra_min, ra_max, dec_min, dec_max;  // degrees
  friend bool operator==(const RectRegion&, const RectRegion&) = default;
};
struct CircleRegion {
  double ra, dec;        // degrees
  double radius_arcmin;  // arcmin
  friend bool operator==(const CircleRegion&, const CircleRegion&) = default;
};

struct MaskRegion {
  std::variant<RectRegion, CircleRegion> shape;
  std::string reason = "unspecified";

  bool contains(double ra, double dec) const;
  friend bool operator==(const MaskRegion&, const MaskRegion&) = default;
};

class MaskSet {
 public:
  MaskSet() = default;
  explicit MaskSet(std::vector<MaskRegion> regions);

  // Adds a region unless an identical one is already present.
  void add(MaskRegion region);
  MaskSet merged(const MaskSet& other) const;

  bool contains(double ra, double dec) const;
  bool empty() const { return regions_.empty(); }
  std::size_t size() const { return regions_.size(); }
  const std::vector<MaskRegion>& regions() const { return regions_; }

 private:
  std::vector<MaskRegion> regions_;
};

// Text format, one region per line, '#' starts a comment:
//   rect   <ra_min> <ra_max> <dec_min> <dec_max> [reason]
//   circle <ra> <dec> <radius_arcmin> [reason]
MaskSet load_masks(const std::string& path);
void save_masks(const std::string& path, const MaskSet& masks);

// Conjunction of optional predicates. Ranges are [min, max). Records without a
// redshift fail any redshift predicate.
struct SubsampleSpec {
  std::optional<double> mag_min, mag_max;
  std::optional<double> z_min, z_max;
  std::vector<int> stripes;  // empty = all
  std::optional<double> min_weight;

  bool accepts(const GalaxyRecord& rec) const;
};

Catalog apply_subsample(const Catalog& catalog, const SubsampleSpec& spec);
Catalog apply_masks(const Catalog& catalog, const MaskSet& masks);

// Great-circle separation in radians (haversine form).
double angular_separation(double ra1_deg, double dec1_deg, double ra2_deg, double dec2_deg);

// Records within radius_arcmin of (ra, dec). Uses a band/bin index; identical
// to a linear scan.
std::size_t cone_count(const Catalog& catalog, double ra, double dec, double radius_arcmin);

}  // namespace clustat::catalog

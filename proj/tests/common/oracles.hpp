// Brute-force reference computations shared by the unit and acceptance tests.

#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "clustat/angcorr.hpp"
#include "clustat/core.hpp"

namespace clustat::oracle {

// Random window (fractional, with holes) and up to max_galaxies galaxies on
// an nx x ny grid. Galaxies fall only on cells with R > 0.
inline angcorr::GridField random_grid(RandomStream& rng, int nx, int ny, int max_galaxies) {
  angcorr::GridField g(nx, ny);
  for (auto& r : g.R) {
    const double u = rng.uniform();
    r = u < 0.15 ? 0.0 : (u < 0.6 ? 1.0 : rng.uniform());
  }
  g.R[0] = 1.0;
  const int n = 1 + static_cast<int>(rng.uniform() * max_galaxies);
  for (int k = 0; k < n; ++k) {
    std::size_t cell = static_cast<std::size_t>(rng.uniform() * static_cast<double>(g.size()));
    cell = std::min(cell, g.size() - 1);
    while (g.R[cell] <= 0.0) cell = (cell + 1) % g.size();
    g.D[cell] += 1.0;
  }
  return g;
}

// O(N^2) lag sums: out[lag(dx,dy)] = sum_x A(x) B(x + (dx,dy)), normalized as
// in the FFT path.
inline angcorr::PairCountSet direct_paircounts(const angcorr::GridField& g) {
  angcorr::PairCountSet pc;
  pc.nx = g.nx;
  pc.ny = g.ny;
  pc.cell_arcmin = g.cell_arcmin;
  double sd = 0, sr = 0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    sd += g.D[i];
    sr += g.R[i];
  }
  pc.sum_d = sd;
  pc.sum_r = sr;
  const std::size_t nl = static_cast<std::size_t>(2 * g.nx - 1) * (2 * g.ny - 1);
  pc.DD.assign(nl, 0.0);
  pc.DR.assign(nl, 0.0);
  pc.RR.assign(nl, 0.0);
  std::vector<int> gal;  // cell of every galaxy, one entry per galaxy
  std::vector<int> win;
  for (int c = 0; c < static_cast<int>(g.size()); ++c) {
    for (int k = 0; k < static_cast<int>(g.D[c]); ++k) gal.push_back(c);
    if (g.R[c] != 0.0) win.push_back(c);
  }
  auto lag = [&](int a, int b) { return pc.lag_index(b / g.ny - a / g.ny, b % g.ny - a % g.ny); };
  for (int a : gal)
    for (int b : gal) pc.DD[lag(a, b)] += 1.0;
  pc.dd_raw = pc.DD;
  for (int a : gal)
    for (int b : win) pc.DR[lag(a, b)] += g.R[b];
  for (int a : win)
    for (int b : win) pc.RR[lag(a, b)] += g.R[a] * g.R[b];
  for (auto& v : pc.DD) v /= sd * sd;
  for (auto& v : pc.DR) v /= sd * sr;
  for (auto& v : pc.RR) v /= sr * sr;
  return pc;
}

// Largest deviation relative to the largest reference entry.
inline double max_rel_dev(const std::vector<double>& got, const std::vector<double>& ref) {
  double dev = 0, scale = 0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    dev = std::max(dev, std::abs(got[i] - ref[i]));
    scale = std::max(scale, std::abs(ref[i]));
  }
  return scale > 0 ? dev / scale : dev;
}

}  // namespace clustat::oracle

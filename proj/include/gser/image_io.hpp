#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "gser/stacks.hpp"

namespace gser {

// Row-major pixel rasters for the portable graymap/pixmap emitters. Values
// stay in physical units until write time; the writers quantize to 8 bits
// over an explicit or auto-computed range, so output bytes are a pure
// function of the input values.
struct PixelGrid {
  int width = 0;
  int height = 0;
  std::vector<double> values;  // width*height, row-major

  double& at(int row, int col) { return values[std::size_t(row) * width + col]; }
  double at(int row, int col) const { return values[std::size_t(row) * width + col]; }
};

struct RgbGrid {
  int width = 0;
  int height = 0;
  std::vector<std::array<double, 3>> pixels;  // width*height, row-major

  std::array<double, 3>& at(int row, int col) { return pixels[std::size_t(row) * width + col]; }
};

namespace detail {

inline int tile_grid_cols(int n_tiles) {
  int cols = 1;
  while (cols * cols < n_tiles) ++cols;
  return cols;
}

inline std::uint8_t quantize(double v, double lo, double hi) {
  if (!(hi > lo)) return 0;
  const double t = (v - lo) / (hi - lo);
  const double c = std::clamp(t, 0.0, 1.0);
  return std::uint8_t(std::lround(c * 255.0));
}

}  // namespace detail

// Lay the n3 axial planes of one volume out as a square-ish montage,
// left-to-right then top-to-bottom, gaps filled with zeros.
inline PixelGrid tile_volume(const ImageStack& x, int q) {
  x.check("tile_volume");
  const GridDims& d = x.dims;
  if (q < 0 || q >= d.nd) throw InputError("tile_volume: volume index out of range");
  const int n3 = d.n3();
  const int cols = detail::tile_grid_cols(n3);
  const int rows = (n3 + cols - 1) / cols;

  PixelGrid grid;
  grid.width = cols * d.n2;
  grid.height = rows * d.n1;
  grid.values.assign(std::size_t(grid.width) * grid.height, 0.0);
  for (int z = 0; z < n3; ++z) {
    const int tile_r = (z / cols) * d.n1;
    const int tile_c = (z % cols) * d.n2;
    for (int r = 0; r < d.n1; ++r)
      for (int c = 0; c < d.n2; ++c)
        grid.at(tile_r + r, tile_c + c) = x.data[d.image_at(q, d.vox_at(z, r, c))];
  }
  return grid;
}

// Same montage layout for per-voxel RGB triples (one volume's worth).
inline RgbGrid tile_rgb_volume(const GridDims& d, const std::vector<std::array<double, 3>>& rgb) {
  if (std::int64_t(rgb.size()) != d.image_voxels())
    throw ShapeError("tile_rgb_volume: rgb size does not match voxel count");
  const int n3 = d.n3();
  const int cols = detail::tile_grid_cols(n3);
  const int rows = (n3 + cols - 1) / cols;

  RgbGrid grid;
  grid.width = cols * d.n2;
  grid.height = rows * d.n1;
  grid.pixels.assign(std::size_t(grid.width) * grid.height, {0.0, 0.0, 0.0});
  for (int z = 0; z < n3; ++z) {
    const int tile_r = (z / cols) * d.n1;
    const int tile_c = (z % cols) * d.n2;
    for (int r = 0; r < d.n1; ++r)
      for (int c = 0; c < d.n2; ++c)
        grid.at(tile_r + r, tile_c + c) = rgb[std::size_t(d.vox_at(z, r, c))];
  }
  return grid;
}

// 8-bit binary graymap. Pass hi <= lo to map [min, max] of the data instead.
inline void write_pgm(const std::string& path, const PixelGrid& grid, double lo = 0.0,
                      double hi = -1.0) {
  if (grid.width < 1 || grid.height < 1 ||
      grid.values.size() != std::size_t(grid.width) * grid.height)
    throw ShapeError("write_pgm: inconsistent grid");
  if (!(hi > lo)) {
    lo = *std::min_element(grid.values.begin(), grid.values.end());
    hi = *std::max_element(grid.values.begin(), grid.values.end());
    if (!(hi > lo)) hi = lo + 1.0;  // flat image: all black
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("write_pgm: cannot open '" + path + "'");
  out << "P5\n" << grid.width << ' ' << grid.height << "\n255\n";
  std::vector<std::uint8_t> row(std::size_t(grid.width));
  for (int r = 0; r < grid.height; ++r) {
    for (int c = 0; c < grid.width; ++c)
      row[std::size_t(c)] = detail::quantize(grid.at(r, c), lo, hi);
    out.write(reinterpret_cast<const char*>(row.data()), grid.width);
  }
  if (!out) throw IoError("write_pgm: write failed for '" + path + "'");
}

// 8-bit binary pixmap; channels share one range (natural for unit-scaled RGB).
inline void write_ppm(const std::string& path, const RgbGrid& grid, double lo = 0.0,
                      double hi = 1.0) {
  if (grid.width < 1 || grid.height < 1 ||
      grid.pixels.size() != std::size_t(grid.width) * grid.height)
    throw ShapeError("write_ppm: inconsistent grid");
  if (!(hi > lo)) throw InputError("write_ppm: hi must exceed lo");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("write_ppm: cannot open '" + path + "'");
  out << "P6\n" << grid.width << ' ' << grid.height << "\n255\n";
  std::vector<std::uint8_t> row(std::size_t(grid.width) * 3);
  for (int r = 0; r < grid.height; ++r) {
    for (int c = 0; c < grid.width; ++c) {
      const auto& px = grid.pixels[std::size_t(r) * grid.width + c];
      for (int ch = 0; ch < 3; ++ch)
        row[std::size_t(c) * 3 + ch] = detail::quantize(px[std::size_t(ch)], lo, hi);
    }
    out.write(reinterpret_cast<const char*>(row.data()), std::streamsize(row.size()));
  }
  if (!out) throw IoError("write_ppm: write failed for '" + path + "'");
}

}  // namespace gser

#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "coughgan/dataset.hpp"

namespace coughgan::plot {

/// Numeric CSV with a header row.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;

  /// Index of a named column or npos.
  std::size_t column(const std::string& name) const;
  std::vector<double> values(std::size_t column) const;
};

/// Throws FormatError naming the line of the first malformed cell.
CsvTable parse_csv(const std::string& text);

struct Series {
  std::string name;
  std::vector<double> y;
};

/// Line chart with one polyline per series over a shared x axis. Output
/// depends only on the inputs.
std::string line_chart_svg(const std::string& title, const std::string& x_label, const std::vector<double>& x,
                           const std::vector<Series>& series);

/// 8-bit grayscale image, row-major.
struct GrayImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;
};

/// Minimal PNG: one IHDR, one zlib IDAT, IEND.
std::string encode_png(const GrayImage& image);

/// Spectrogram tiles in a grid of `cols` columns, low mel bands at the
/// bottom, [-1, 1] mapped to black..white.
GrayImage spectrogram_grid(const LabeledSet& set, const std::vector<std::size_t>& rows, std::size_t cols);

/// The first `per_class` real and synthetic samples of each class: one row
/// of real tiles followed by one row of synthetic tiles per class.
GrayImage comparison_grid(const LabeledSet& real, const LabeledSet& synthetic, std::size_t per_class);

}  // namespace coughgan::plot

#include "coughgan/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include <zlib.h>

#include "coughgan/error.hpp"
#include "coughgan/features.hpp"

namespace coughgan::plot {

namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string tick_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", std::abs(v) < 1e-12 ? 0.0 : v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else if (c == '&') out += "&amp;";
    else out += c;
  }
  return out;
}

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

void put_u32(std::string& out, std::uint32_t v) {
  for (int shift = 24; shift >= 0; shift -= 8) out.push_back(static_cast<char>((v >> shift) & 0xff));
}

void put_chunk(std::string& out, const char* type, const std::string& data) {
  put_u32(out, static_cast<std::uint32_t>(data.size()));
  std::string body(type, 4);
  body += data;
  out += body;
  put_u32(out, static_cast<std::uint32_t>(
                   crc32(0, reinterpret_cast<const Bytef*>(body.data()), static_cast<uInt>(body.size()))));
}

void draw_tile(GrayImage& img, std::span<const double> spec, std::size_t x0, std::size_t y0) {
  using features::kFrames;
  using features::kMels;
  for (std::size_t m = 0; m < kMels; ++m)
    for (std::size_t t = 0; t < kFrames; ++t) {
      const double v = std::clamp(spec[m * kFrames + t], -1.0, 1.0);
      const auto level = static_cast<std::uint8_t>(std::lround((v + 1.0) * 127.5));
      img.pixels[(y0 + kMels - 1 - m) * img.width + x0 + t] = level;
    }
}

constexpr std::size_t kGap = 2;

GrayImage blank_grid(std::size_t rows, std::size_t cols) {
  GrayImage img;
  img.width = cols * features::kFrames + (cols + 1) * kGap;
  img.height = rows * features::kMels + (rows + 1) * kGap;
  img.pixels.assign(img.width * img.height, 128);
  return img;
}

void place(GrayImage& img, std::span<const double> spec, std::size_t r, std::size_t c) {
  draw_tile(img, spec, kGap + c * (features::kFrames + kGap), kGap + r * (features::kMels + kGap));
}

std::vector<std::size_t> first_of_class(const LabeledSet& set, int label, std::size_t n) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < set.size() && out.size() < n; ++i)
    if (set.labels[i] == label) out.push_back(i);
  return out;
}

}  // namespace

std::size_t CsvTable::column(const std::string& name) const {
  const auto it = std::find(header.begin(), header.end(), name);
  return it == header.end() ? std::string::npos : static_cast<std::size_t>(it - header.begin());
}

std::vector<double> CsvTable::values(std::size_t c) const {
  std::vector<double> out;
  out.reserve(rows.size());
  for (const auto& r : rows) out.push_back(r.at(c));
  return out;
}

CsvTable parse_csv(const std::string& text) {
  CsvTable t;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split_line(line);
    if (t.header.empty()) {
      t.header = cells;
      continue;
    }
    if (cells.size() != t.header.size())
      throw FormatError("line " + std::to_string(line_no) + ": expected " + std::to_string(t.header.size()) +
                        " cells, found " + std::to_string(cells.size()));
    std::vector<double> row;
    for (const auto& cell : cells) {
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(cell, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (cell.empty() || used != cell.size() || !std::isfinite(v))
        throw FormatError("line " + std::to_string(line_no) + ": non-numeric cell '" + cell + "'");
      row.push_back(v);
    }
    t.rows.push_back(std::move(row));
  }
  if (t.header.empty()) throw FormatError("CSV has no header row");
  return t;
}

std::string line_chart_svg(const std::string& title, const std::string& x_label, const std::vector<double>& x,
                           const std::vector<Series>& series) {
  constexpr double W = 720, H = 420, L = 70, R = 160, T = 40, B = 50;
  double x_lo = 0, x_hi = 1, y_lo = std::numeric_limits<double>::infinity(), y_hi = -y_lo;
  if (!x.empty()) {
    x_lo = *std::min_element(x.begin(), x.end());
    x_hi = *std::max_element(x.begin(), x.end());
  }
  for (const auto& s : series) {
    if (s.y.size() != x.size()) throw DataError("series '" + s.name + "' length differs from the x axis");
    for (double v : s.y) {
      y_lo = std::min(y_lo, v);
      y_hi = std::max(y_hi, v);
    }
  }
  if (!(y_lo <= y_hi)) y_lo = 0, y_hi = 1;
  if (x_hi == x_lo) x_hi = x_lo + 1;
  if (y_hi == y_lo) y_lo -= 0.5, y_hi += 0.5;
  const double pad = 0.05 * (y_hi - y_lo);
  y_lo -= pad;
  y_hi += pad;
  auto px = [&](double v) { return L + (v - x_lo) / (x_hi - x_lo) * (W - L - R); };
  auto py = [&](double v) { return H - B - (v - y_lo) / (y_hi - y_lo) * (H - T - B); };

  std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt(W) + "\" height=\"" + fmt(H) +
                    "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg += "<text x=\"" + fmt(W / 2) + "\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">" + escape(title) +
         "</text>\n";
  const double x0 = px(x_lo), x1 = px(x_hi), y0 = py(y_lo), y1 = py(y_hi);
  svg += "<rect x=\"" + fmt(x0) + "\" y=\"" + fmt(y1) + "\" width=\"" + fmt(x1 - x0) + "\" height=\"" +
         fmt(y0 - y1) + "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = x_lo + (x_hi - x_lo) * i / 4, yv = y_lo + (y_hi - y_lo) * i / 4;
    svg += "<text x=\"" + fmt(px(xv)) + "\" y=\"" + fmt(y0 + 16) + "\" text-anchor=\"middle\">" + tick_label(xv) +
           "</text>\n";
    svg += "<text x=\"" + fmt(x0 - 6) + "\" y=\"" + fmt(py(yv) + 4) + "\" text-anchor=\"end\">" + tick_label(yv) +
           "</text>\n";
    svg += "<line x1=\"" + fmt(x0) + "\" y1=\"" + fmt(py(yv)) + "\" x2=\"" + fmt(x1) + "\" y2=\"" + fmt(py(yv)) +
           "\" stroke=\"#dddddd\"/>\n";
  }
  svg += "<text x=\"" + fmt((x0 + x1) / 2) + "\" y=\"" + fmt(H - 12) + "\" text-anchor=\"middle\">" +
         escape(x_label) + "</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const char* colour = kPalette[k % std::size(kPalette)];
    svg += "<polyline fill=\"none\" stroke=\"" + std::string(colour) + "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (i) svg += ' ';
      svg += fmt(px(x[i])) + "," + fmt(py(series[k].y[i]));
    }
    svg += "\"/>\n";
    const double ly = T + 10 + 20.0 * static_cast<double>(k);
    svg += "<line x1=\"" + fmt(W - R + 12) + "\" y1=\"" + fmt(ly) + "\" x2=\"" + fmt(W - R + 36) + "\" y2=\"" +
           fmt(ly) + "\" stroke=\"" + colour + "\" stroke-width=\"2\"/>\n";
    svg += "<text x=\"" + fmt(W - R + 42) + "\" y=\"" + fmt(ly + 4) + "\">" + escape(series[k].name) + "</text>\n";
  }
  svg += "</svg>\n";
  return svg;
}

std::string encode_png(const GrayImage& image) {
  if (!image.width || !image.height || image.pixels.size() != image.width * image.height)
    throw DataError("image dimensions disagree with its pixel count");
  std::string raw;
  raw.reserve((image.width + 1) * image.height);
  for (std::size_t y = 0; y < image.height; ++y) {
    raw.push_back('\0');
    raw.append(reinterpret_cast<const char*>(image.pixels.data() + y * image.width), image.width);
  }
  uLongf packed_size = compressBound(static_cast<uLong>(raw.size()));
  std::string packed(packed_size, '\0');
  if (compress2(reinterpret_cast<Bytef*>(packed.data()), &packed_size, reinterpret_cast<const Bytef*>(raw.data()),
                static_cast<uLong>(raw.size()), 9) != Z_OK)
    throw IoError("zlib compression failed");
  packed.resize(packed_size);

  std::string png("\x89PNG\r\n\x1a\n", 8);
  std::string ihdr;
  put_u32(ihdr, static_cast<std::uint32_t>(image.width));
  put_u32(ihdr, static_cast<std::uint32_t>(image.height));
  ihdr += std::string("\x08\x00\x00\x00\x00", 5);  // 8-bit grayscale, deflate, no filter, no interlace
  put_chunk(png, "IHDR", ihdr);
  put_chunk(png, "IDAT", packed);
  put_chunk(png, "IEND", "");
  return png;
}

GrayImage spectrogram_grid(const LabeledSet& set, const std::vector<std::size_t>& rows, std::size_t cols) {
  if (rows.empty()) throw DataError("no spectrograms to plot");
  cols = std::max<std::size_t>(1, std::min(cols, rows.size()));
  GrayImage img = blank_grid((rows.size() + cols - 1) / cols, cols);
  for (std::size_t k = 0; k < rows.size(); ++k) place(img, set.sample(rows[k]), k / cols, k % cols);
  return img;
}

GrayImage comparison_grid(const LabeledSet& real, const LabeledSet& synthetic, std::size_t per_class) {
  const std::size_t n_classes = std::max(real.n_classes, synthetic.n_classes);
  if (!per_class) throw DataError("comparison grid needs at least one sample per class");
  GrayImage img = blank_grid(2 * n_classes, per_class);
  for (std::size_t c = 0; c < n_classes; ++c) {
    const auto r = first_of_class(real, static_cast<int>(c), per_class);
    const auto s = first_of_class(synthetic, static_cast<int>(c), per_class);
    for (std::size_t k = 0; k < r.size(); ++k) place(img, real.sample(r[k]), 2 * c, k);
    for (std::size_t k = 0; k < s.size(); ++k) place(img, synthetic.sample(s[k]), 2 * c + 1, k);
  }
  return img;
}

}  // namespace coughgan::plot

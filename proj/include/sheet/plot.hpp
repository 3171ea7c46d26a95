#pragma once

// Predicted-vs-true scatter plots written as PNG, plus the raw points as CSV.

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "sheet/common.hpp"
#include "sheet/csv.hpp"

namespace sheet {

struct Rgb {
  unsigned char r, g, b;
};

class Canvas {
 public:
  Canvas(int w, int h, Rgb bg = {255, 255, 255}) : w_(w), h_(h), px_(static_cast<std::size_t>(w * h), bg) {}

  void set(int x, int y, Rgb c) {
    if (x >= 0 && x < w_ && y >= 0 && y < h_) px_[static_cast<std::size_t>(y * w_ + x)] = c;
  }
  Rgb get(int x, int y) const { return px_[static_cast<std::size_t>(y * w_ + x)]; }

  void line(int x0, int y0, int x1, int y1, Rgb c) {
    const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
    const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
    int err = dx + dy;
    while (true) {
      set(x0, y0, c);
      if (x0 == x1 && y0 == y1) break;
      const int e2 = 2 * err;
      if (e2 >= dy) {
        err += dy;
        x0 += sx;
      }
      if (e2 <= dx) {
        err += dx;
        y0 += sy;
      }
    }
  }

  void dot(int cx, int cy, int radius, Rgb c) {
    for (int y = -radius; y <= radius; ++y)
      for (int x = -radius; x <= radius; ++x)
        if (x * x + y * y <= radius * radius) set(cx + x, cy + y, c);
  }

  void write_png(const std::string& path) const {
    std::unique_ptr<FILE, decltype(&std::fclose)> fp(std::fopen(path.c_str(), "wb"), &std::fclose);
    if (!fp) throw IoError("cannot write " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
      png_destroy_write_struct(&png, &info);
      throw IoError("libpng initialisation failed");
    }
    if (setjmp(png_jmpbuf(png))) {
      png_destroy_write_struct(&png, &info);
      throw IoError("PNG encoding failed for " + path);
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(w_), static_cast<png_uint_32>(h_), 8, PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<unsigned char> row(static_cast<std::size_t>(w_) * 3);
    for (int y = 0; y < h_; ++y) {
      for (int x = 0; x < w_; ++x) {
        const Rgb c = get(x, y);
        row[static_cast<std::size_t>(3 * x)] = c.r;
        row[static_cast<std::size_t>(3 * x + 1)] = c.g;
        row[static_cast<std::size_t>(3 * x + 2)] = c.b;
      }
      png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
  }

  int width() const { return w_; }
  int height() const { return h_; }

 private:
  int w_, h_;
  std::vector<Rgb> px_;
};

struct ScatterPoint {
  std::string sample_id;
  double truth = 0.0;
  double prediction = 0.0;
};

/// Writes <out_prefix>.png (x = true, y = predicted, both spanning [lo, hi],
/// unit grid lines and the identity line) and <out_prefix>.csv.
inline void visualize_validation(std::span<const ScatterPoint> points, double lo, double hi, const std::string& out_prefix) {
  if (points.empty()) throw std::invalid_argument("visualize_validation: no points");
  if (!(lo < hi)) throw std::invalid_argument("visualize_validation: lo must be < hi");

  std::vector<csv::Row> rows = {{"sample_id", "true_score", "predicted_score"}};
  for (const auto& p : points)
    rows.push_back({p.sample_id, csv::format_double(p.truth), csv::format_double(p.prediction)});
  csv::write(out_prefix + ".csv", rows);

  constexpr int size = 480, margin = 40;
  Canvas c(size, size);
  const int span = size - 2 * margin;
  auto px = [&](double v) { return margin + static_cast<int>(std::lround((std::clamp(v, lo, hi) - lo) / (hi - lo) * span)); };
  auto py = [&](double v) { return size - 1 - px(v); };
  const Rgb grid{225, 225, 225}, axis{0, 0, 0}, ident{200, 60, 60}, pt{40, 90, 200};
  for (double t = std::ceil(lo); t <= hi; t += 1.0) {
    c.line(px(t), py(lo), px(t), py(hi), grid);
    c.line(px(lo), py(t), px(hi), py(t), grid);
  }
  c.line(px(lo), py(lo), px(hi), py(lo), axis);
  c.line(px(lo), py(lo), px(lo), py(hi), axis);
  c.line(px(lo), py(lo), px(hi), py(hi), ident);
  for (const auto& p : points) c.dot(px(p.truth), py(p.prediction), 2, pt);
  c.write_png(out_prefix + ".png");
}

}  // namespace sheet

#pragma once

// Minimal raster charts for reports. Text uses a built-in 5x7 font that
// covers digits, upper-case letters and a little punctuation; lower-case
// input is drawn upper-case.

#include <array>
#include <string>
#include <vector>

#include "msff/evaluation.hpp"
#include "msff/volume.hpp"

namespace msff::plot {

using Color = std::array<float, 3>;

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
  Color color{0.1f, 0.3f, 0.8f};
};

struct Axes {
  std::string title;
  std::string x_label;
  std::string y_label;
  double x_min = 0.0;
  double x_max = 1.0;
  double y_min = 0.0;
  double y_max = 1.0;
  int width = 480;
  int height = 360;
};

Image line_chart(const Axes& axes, const std::vector<Series>& series);

struct Bar {
  std::string label;
  double value = 0.0;
  /// Optional whisker; drawn when low <= high.
  double low = 1.0;
  double high = 0.0;
};

Image bar_chart(const Axes& axes, const std::vector<Bar>& bars);

/// Draws text with its top-left corner at (x, y); `scale` multiplies the
/// glyph size.
void draw_text(Image& image, int x, int y, const std::string& text, const Color& color,
               int scale = 1);

void draw_line(Image& image, int x0, int y0, int x1, int y1, const Color& color,
               int thickness = 1);
void draw_disc(Image& image, double cx, double cy, double radius, const Color& color);

/// Report plots: PCK curve(s), one bar per MSFF count, spread bins.
Image pck_plot(const std::vector<EvalReport>& reports);
Image msff_count_plot(const std::vector<std::pair<int, EvalReport>>& reports);
Image spread_plot(const EvalReport& report);

}  // namespace msff::plot

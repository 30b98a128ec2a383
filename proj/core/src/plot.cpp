#include "msff/plot.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>

namespace msff::plot {

namespace {

using Glyph = std::array<std::uint8_t, 7>;

const std::map<char, Glyph>& font() {
  static const std::map<char, Glyph> glyphs{
      {'0', {0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E}},
      {'1', {0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E}},
      {'2', {0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F}},
      {'3', {0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E}},
      {'4', {0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02}},
      {'5', {0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E}},
      {'6', {0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E}},
      {'7', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08}},
      {'8', {0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E}},
      {'9', {0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C}},
      {'A', {0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11}},
      {'B', {0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E}},
      {'C', {0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E}},
      {'D', {0x1C, 0x12, 0x11, 0x11, 0x11, 0x12, 0x1C}},
      {'E', {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F}},
      {'F', {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10}},
      {'G', {0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F}},
      {'H', {0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11}},
      {'I', {0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E}},
      {'J', {0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C}},
      {'K', {0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11}},
      {'L', {0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F}},
      {'M', {0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11}},
      {'N', {0x11, 0x11, 0x19, 0x15, 0x13, 0x11, 0x11}},
      {'O', {0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}},
      {'P', {0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10}},
      {'Q', {0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D}},
      {'R', {0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11}},
      {'S', {0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E}},
      {'T', {0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04}},
      {'U', {0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}},
      {'V', {0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04}},
      {'W', {0x11, 0x11, 0x11, 0x15, 0x15, 0x15, 0x0A}},
      {'X', {0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11}},
      {'Y', {0x11, 0x11, 0x11, 0x0A, 0x04, 0x04, 0x04}},
      {'Z', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F}},
      {'.', {0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C}},
      {',', {0x00, 0x00, 0x00, 0x00, 0x0C, 0x04, 0x08}},
      {'-', {0x00, 0x00, 0x00, 0x1F, 0x00, 0x00, 0x00}},
      {'+', {0x00, 0x04, 0x04, 0x1F, 0x04, 0x04, 0x00}},
      {'=', {0x00, 0x00, 0x1F, 0x00, 0x1F, 0x00, 0x00}},
      {':', {0x00, 0x0C, 0x0C, 0x00, 0x0C, 0x0C, 0x00}},
      {'@', {0x0E, 0x11, 0x17, 0x15, 0x17, 0x10, 0x0F}},
      {'(', {0x02, 0x04, 0x08, 0x08, 0x08, 0x04, 0x02}},
      {')', {0x08, 0x04, 0x02, 0x02, 0x02, 0x04, 0x08}},
      {'<', {0x02, 0x04, 0x08, 0x10, 0x08, 0x04, 0x02}},
      {'>', {0x08, 0x04, 0x02, 0x01, 0x02, 0x04, 0x08}},
      {'/', {0x00, 0x01, 0x02, 0x04, 0x08, 0x10, 0x00}},
      {'_', {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x1F}},
      {'%', {0x18, 0x19, 0x02, 0x04, 0x08, 0x13, 0x03}},
      {'?', {0x0E, 0x11, 0x01, 0x02, 0x04, 0x00, 0x04}},
  };
  return glyphs;
}

constexpr Color kBlack{0.0f, 0.0f, 0.0f};
constexpr Color kGrid{0.88f, 0.88f, 0.88f};

const std::array<Color, 10> kPalette{{{0.12f, 0.47f, 0.71f},
                                      {1.00f, 0.50f, 0.05f},
                                      {0.17f, 0.63f, 0.17f},
                                      {0.84f, 0.15f, 0.16f},
                                      {0.58f, 0.40f, 0.74f},
                                      {0.55f, 0.34f, 0.29f},
                                      {0.89f, 0.47f, 0.76f},
                                      {0.50f, 0.50f, 0.50f},
                                      {0.74f, 0.74f, 0.13f},
                                      {0.09f, 0.75f, 0.81f}}};

void put(Image& img, int x, int y, const Color& c) {
  if (x < 0 || y < 0 || x >= img.width() || y >= img.height()) return;
  for (int ch = 0; ch < 3; ++ch) img.at(ch, y, x) = c[ch];
}

void fill_rect(Image& img, int x0, int y0, int x1, int y1, const Color& c) {
  for (int y = std::min(y0, y1); y <= std::max(y0, y1); ++y) {
    for (int x = std::min(x0, x1); x <= std::max(x0, x1); ++x) put(img, x, y, c);
  }
}

void line(Image& img, int x0, int y0, int x1, int y1, const Color& c, int thickness = 1) {
  const int dx = std::abs(x1 - x0);
  const int dy = -std::abs(y1 - y0);
  const int sx = x0 < x1 ? 1 : -1;
  const int sy = y0 < y1 ? 1 : -1;
  int err = dx + dy;
  while (true) {
    fill_rect(img, x0, y0, x0 + thickness - 1, y0 + thickness - 1, c);
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

int text_width(const std::string& text, int scale) { return static_cast<int>(text.size()) * 6 * scale; }

std::string format(double v, int decimals) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
  return buf;
}

struct Frame {
  int left = 56;
  int right;
  int top = 34;
  int bottom;
  const Axes* axes;

  Frame(const Axes& a) : right(a.width - 16), bottom(a.height - 40), axes(&a) {}

  int px(double x) const {
    const double t = (x - axes->x_min) / (axes->x_max - axes->x_min);
    return left + static_cast<int>(std::lround(t * (right - left)));
  }
  int py(double y) const {
    const double t = (y - axes->y_min) / (axes->y_max - axes->y_min);
    return bottom - static_cast<int>(std::lround(t * (bottom - top)));
  }
};

Image blank(const Axes& axes) {
  if (axes.width < 160 || axes.height < 120) throw ArgumentError("plot: canvas too small");
  if (!(axes.x_max > axes.x_min) || !(axes.y_max > axes.y_min)) {
    throw ArgumentError("plot: empty axis range");
  }
  Image img(3, axes.height, axes.width);
  img.fill(1.0f);
  return img;
}

void draw_frame(Image& img, const Frame& f, bool x_ticks) {
  const Axes& a = *f.axes;
  constexpr int kTicks = 5;
  for (int i = 0; i <= kTicks; ++i) {
    const double y = a.y_min + (a.y_max - a.y_min) * i / kTicks;
    const int yy = f.py(y);
    line(img, f.left, yy, f.right, yy, kGrid);
    const std::string label = format(y, 2);
    draw_text(img, f.left - 6 - text_width(label, 1), yy - 3, label, kBlack);
    if (x_ticks) {
      const double x = a.x_min + (a.x_max - a.x_min) * i / kTicks;
      const int xx = f.px(x);
      line(img, xx, f.top, xx, f.bottom, kGrid);
      const std::string xl = format(x, 2);
      draw_text(img, xx - text_width(xl, 1) / 2, f.bottom + 6, xl, kBlack);
    }
  }
  line(img, f.left, f.top, f.left, f.bottom, kBlack);
  line(img, f.left, f.bottom, f.right, f.bottom, kBlack);
  draw_text(img, (a.width - text_width(a.title, 2)) / 2, 8, a.title, kBlack, 2);
  draw_text(img, (f.left + f.right - text_width(a.x_label, 1)) / 2, a.height - 14, a.x_label,
            kBlack);
  draw_text(img, 4, f.top - 14, a.y_label, kBlack);
}

}  // namespace

void draw_line(Image& image, int x0, int y0, int x1, int y1, const Color& color, int thickness) {
  line(image, x0, y0, x1, y1, color, thickness);
}

void draw_disc(Image& image, double cx, double cy, double radius, const Color& color) {
  const int y0 = static_cast<int>(std::floor(cy - radius));
  const int x0 = static_cast<int>(std::floor(cx - radius));
  for (int y = y0; y <= static_cast<int>(std::ceil(cy + radius)); ++y) {
    for (int x = x0; x <= static_cast<int>(std::ceil(cx + radius)); ++x) {
      if (std::hypot(x - cx, y - cy) <= radius) put(image, x, y, color);
    }
  }
}

void draw_text(Image& image, int x, int y, const std::string& text, const Color& color,
               int scale) {
  const auto& glyphs = font();
  int cx = x;
  for (char raw : text) {
    const char ch = static_cast<char>(std::toupper(static_cast<unsigned char>(raw)));
    if (ch != ' ') {
      auto it = glyphs.find(ch);
      const Glyph& g = it != glyphs.end() ? it->second : glyphs.at('?');
      for (int row = 0; row < 7; ++row) {
        for (int col = 0; col < 5; ++col) {
          if (g[row] & (0x10 >> col)) {
            fill_rect(image, cx + col * scale, y + row * scale, cx + col * scale + scale - 1,
                      y + row * scale + scale - 1, color);
          }
        }
      }
    }
    cx += 6 * scale;
  }
}

Image line_chart(const Axes& axes, const std::vector<Series>& series) {
  Image img = blank(axes);
  const Frame f(axes);
  draw_frame(img, f, true);
  int legend_y = f.top + 6;
  for (const Series& s : series) {
    if (s.x.size() != s.y.size()) throw ArgumentError("plot: series x/y lengths differ");
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      const int x = f.px(s.x[i]);
      const int y = f.py(s.y[i]);
      fill_rect(img, x - 2, y - 2, x + 2, y + 2, s.color);
      if (i > 0) line(img, f.px(s.x[i - 1]), f.py(s.y[i - 1]), x, y, s.color, 2);
    }
    if (!s.label.empty()) {
      const int lx = f.right - text_width(s.label, 1) - 24;
      fill_rect(img, lx, legend_y + 2, lx + 12, legend_y + 4, s.color);
      draw_text(img, lx + 16, legend_y, s.label, kBlack);
      legend_y += 11;
    }
  }
  return img;
}

Image bar_chart(const Axes& axes, const std::vector<Bar>& bars) {
  Image img = blank(axes);
  const Frame f(axes);
  draw_frame(img, f, false);
  if (bars.empty()) return img;
  const double slot = static_cast<double>(f.right - f.left) / bars.size();
  for (std::size_t i = 0; i < bars.size(); ++i) {
    const Bar& b = bars[i];
    const int x0 = f.left + static_cast<int>(slot * i + slot * 0.2);
    const int x1 = f.left + static_cast<int>(slot * (i + 1) - slot * 0.2);
    const double v = std::clamp(b.value, axes.y_min, axes.y_max);
    fill_rect(img, x0, f.py(v), x1, f.bottom - 1, kPalette[i % kPalette.size()]);
    if (b.low <= b.high) {
      const int xm = (x0 + x1) / 2;
      const int ylo = f.py(std::clamp(b.low, axes.y_min, axes.y_max));
      const int yhi = f.py(std::clamp(b.high, axes.y_min, axes.y_max));
      line(img, xm, ylo, xm, yhi, kBlack);
      line(img, xm - 4, ylo, xm + 4, ylo, kBlack);
      line(img, xm - 4, yhi, xm + 4, yhi, kBlack);
    }
    const std::string value = format(b.value, 2);
    draw_text(img, (x0 + x1 - text_width(value, 1)) / 2, f.py(v) - 10, value, kBlack);
    draw_text(img, (x0 + x1 - text_width(b.label, 1)) / 2, f.bottom + 6, b.label, kBlack);
  }
  return img;
}

Image pck_plot(const std::vector<EvalReport>& reports) {
  Axes axes;
  axes.title = "PCK";
  axes.x_label = "normalized distance tau";
  axes.y_label = "detection rate";
  double x_max = 0.0;
  std::vector<Series> series;
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const EvalReport& r = reports[i];
    series.push_back({r.variant, r.taus, r.pck_curve, kPalette[i % kPalette.size()]});
    if (!r.taus.empty()) x_max = std::max(x_max, *std::max_element(r.taus.begin(), r.taus.end()));
  }
  axes.x_max = x_max > 0.0 ? x_max : 1.0;
  return line_chart(axes, series);
}

Image msff_count_plot(const std::vector<std::pair<int, EvalReport>>& reports) {
  Axes axes;
  axes.title = "MSFF count";
  axes.x_label = "number of MSFF modules";
  std::vector<Bar> bars;
  for (const auto& [n, r] : reports) {
    axes.y_label = "PCK@" + format(r.reference_tau, 2);
    bars.push_back({"N=" + std::to_string(n), r.pck_at(r.reference_tau)});
  }
  return bar_chart(axes, bars);
}

Image spread_plot(const EvalReport& report) {
  Axes axes;
  axes.title = "spread vs accuracy";
  axes.x_label = "spread range";
  axes.y_label = "accuracy@" + format(report.reference_tau, 2);
  axes.width = std::max(480, 110 * static_cast<int>(report.spread_bins.size()) + 80);
  std::vector<Bar> bars;
  for (const SpreadBin& b : report.spread_bins) {
    bars.push_back({format(b.lower, 3) + "-" + format(b.upper, 3), b.mean_accuracy,
                    b.min_accuracy, b.max_accuracy});
  }
  return bar_chart(axes, bars);
}

}  // namespace msff::plot

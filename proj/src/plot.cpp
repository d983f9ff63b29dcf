#include "f4f/plot.hpp"

#include <cmath>
#include <cstdint>
#include <fstream>
#include <vector>

namespace f4f {

namespace {

struct Rgb {
  std::uint8_t r, g, b;
};

double hue_to_channel(double p, double q, double t) {
  if (t < 0.0) t += 1.0;
  if (t > 1.0) t -= 1.0;
  if (t < 1.0 / 6.0) return p + (q - p) * 6.0 * t;
  if (t < 0.5) return q;
  if (t < 2.0 / 3.0) return p + (q - p) * (2.0 / 3.0 - t) * 6.0;
  return p;
}

Rgb hsl_to_rgb(double h, double s, double l) {
  const double q = l < 0.5 ? l * (1.0 + s) : l + s - l * s;
  const double p = 2.0 * l - q;
  auto to8 = [](double v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
  };
  return {to8(hue_to_channel(p, q, h + 1.0 / 3.0)), to8(hue_to_channel(p, q, h)),
          to8(hue_to_channel(p, q, h - 1.0 / 3.0))};
}

Rgb position_color(double x, double y, double extent) {
  const double hue = (std::atan2(y, x) + 3.14159265358979323846) / (2.0 * 3.14159265358979323846);
  const double radius = std::min(std::hypot(x, y) / extent, 1.0);
  return hsl_to_rgb(hue, 0.85, 0.3 + 0.45 * radius);
}

class Canvas {
 public:
  Canvas(int w, int h) : w_(w), h_(h), pix_(static_cast<std::size_t>(w * h) * 3, 255) {}

  void fill_square(int cx, int cy, int half, Rgb c) {
    for (int y = cy - half; y <= cy + half; ++y) {
      for (int x = cx - half; x <= cx + half; ++x) {
        if (x < 0 || y < 0 || x >= w_ || y >= h_) continue;
        const std::size_t o = (static_cast<std::size_t>(y) * w_ + x) * 3;
        pix_[o] = c.r;
        pix_[o + 1] = c.g;
        pix_[o + 2] = c.b;
      }
    }
  }

  void frame(int x0, int y0, int x1, int y1, Rgb c) {
    for (int x = x0; x <= x1; ++x) {
      fill_square(x, y0, 0, c);
      fill_square(x, y1, 0, c);
    }
    for (int y = y0; y <= y1; ++y) {
      fill_square(x0, y, 0, c);
      fill_square(x1, y, 0, c);
    }
  }

  void write_bmp(const std::string& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write image: " + path);
    const int row_bytes = (w_ * 3 + 3) / 4 * 4;
    const std::uint32_t data_size = static_cast<std::uint32_t>(row_bytes * h_);
    const std::uint32_t file_size = 54 + data_size;
    auto u16 = [&](std::uint16_t v) { out.put(static_cast<char>(v & 0xFF)); out.put(static_cast<char>(v >> 8)); };
    auto u32 = [&](std::uint32_t v) {
      for (int i = 0; i < 4; ++i) out.put(static_cast<char>((v >> (8 * i)) & 0xFF));
    };
    out.put('B');
    out.put('M');
    u32(file_size);
    u32(0);
    u32(54);
    u32(40);
    u32(static_cast<std::uint32_t>(w_));
    u32(static_cast<std::uint32_t>(h_));
    u16(1);
    u16(24);
    u32(0);
    u32(data_size);
    u32(2835);
    u32(2835);
    u32(0);
    u32(0);
    std::vector<char> row(static_cast<std::size_t>(row_bytes), 0);
    for (int y = h_ - 1; y >= 0; --y) {
      for (int x = 0; x < w_; ++x) {
        const std::size_t o = (static_cast<std::size_t>(y) * w_ + x) * 3;
        row[static_cast<std::size_t>(x) * 3] = static_cast<char>(pix_[o + 2]);      // B
        row[static_cast<std::size_t>(x) * 3 + 1] = static_cast<char>(pix_[o + 1]);  // G
        row[static_cast<std::size_t>(x) * 3 + 2] = static_cast<char>(pix_[o]);      // R
      }
      out.write(row.data(), row_bytes);
    }
    if (!out) throw std::runtime_error("image write failed: " + path);
  }

 private:
  int w_, h_;
  std::vector<std::uint8_t> pix_;
};

}  // namespace

void render_pair_panels(const Matrix& input, const Matrix& output,
                        const std::string& bmp_path, const PlotStyle& style) {
  if (input.rows() == 0) throw std::invalid_argument("render_pair_panels: empty input");
  if (input.rows() != output.rows()) {
    throw std::invalid_argument("render_pair_panels: row count mismatch");
  }
  const int ps = style.panel_size;
  const int m = style.margin;
  Canvas canvas(2 * ps + 3 * m, ps + 2 * m);

  auto to_px = [&](double v) {
    return static_cast<int>(std::lround((v + style.extent) / (2.0 * style.extent) * (ps - 1)));
  };
  const Rgb border{200, 200, 200};
  canvas.frame(m - 1, m - 1, m + ps, m + ps, border);
  canvas.frame(2 * m + ps - 1, m - 1, 2 * m + 2 * ps, m + ps, border);

  const int half = std::max(0, style.point_px / 2);
  for (Eigen::Index i = 0; i < input.rows(); ++i) {
    const Rgb c = position_color(input(i, 0), input(i, 1), style.extent);
    canvas.fill_square(m + to_px(input(i, 0)), m + ps - 1 - to_px(input(i, 1)), half, c);
    canvas.fill_square(2 * m + ps + to_px(output(i, 0)), m + ps - 1 - to_px(output(i, 1)), half, c);
  }
  canvas.write_bmp(bmp_path);
}

}  // namespace f4f

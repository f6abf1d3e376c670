#include "riskgen/plot.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <stdexcept>

namespace riskgen {

namespace {

constexpr int kWidth = 900;
constexpr int kHeight = 600;
constexpr int kMarginLeft = 80;
constexpr int kMarginRight = 30;
constexpr int kMarginTop = 50;
constexpr int kMarginBottom = 70;

const cv::Scalar kBackground(255, 255, 255);
const cv::Scalar kAxis(60, 60, 60);
const cv::Scalar kGrid(225, 225, 225);

// BGR palette
const std::vector<cv::Scalar>& palette() {
  static const std::vector<cv::Scalar> p = {
      cv::Scalar(180, 119, 31), cv::Scalar(14, 127, 255), cv::Scalar(44, 160, 44),
      cv::Scalar(40, 39, 214),  cv::Scalar(189, 103, 148), cv::Scalar(75, 86, 140)};
  return p;
}

struct Range {
  double lo = 0.0;
  double hi = 1.0;
  void expand(double v) {
    if (std::isfinite(v)) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  void pad() {
    if (hi <= lo) {
      hi = lo + 1.0;
    }
    double m = 0.05 * (hi - lo);
    lo -= m;
    hi += m;
  }
};

std::string tick_label(double v) {
  char buf[32];
  double a = std::abs(v);
  if (v != 0.0 && (a < 1e-3 || a >= 1e4)) {
    std::snprintf(buf, sizeof(buf), "%.1e", v);
  } else {
    std::snprintf(buf, sizeof(buf), "%.3g", v);
  }
  return buf;
}

void draw_frame(cv::Mat& img, const std::string& title, const std::string& x_label,
                const std::string& y_label) {
  cv::rectangle(img, cv::Point(kMarginLeft, kMarginTop),
                cv::Point(kWidth - kMarginRight, kHeight - kMarginBottom), kAxis, 1,
                cv::LINE_8);
  cv::putText(img, title, cv::Point(kMarginLeft, kMarginTop - 18), cv::FONT_HERSHEY_SIMPLEX,
              0.6, kAxis, 1, cv::LINE_8);
  cv::putText(img, x_label, cv::Point(kWidth / 2 - 40, kHeight - 20), cv::FONT_HERSHEY_SIMPLEX,
              0.5, kAxis, 1, cv::LINE_8);
  // vertical-ish y label: draw up the left edge
  cv::putText(img, y_label, cv::Point(8, kMarginTop + 14), cv::FONT_HERSHEY_SIMPLEX, 0.5, kAxis,
              1, cv::LINE_8);
}

void draw_y_ticks(cv::Mat& img, const Range& yr, int plot_h) {
  const int n = 5;
  for (int i = 0; i <= n; ++i) {
    double v = yr.lo + (yr.hi - yr.lo) * i / n;
    int py = kHeight - kMarginBottom - static_cast<int>(std::lround(
                 (v - yr.lo) / (yr.hi - yr.lo) * plot_h));
    cv::line(img, cv::Point(kMarginLeft, py), cv::Point(kWidth - kMarginRight, py), kGrid, 1,
             cv::LINE_8);
    cv::putText(img, tick_label(v), cv::Point(6, py + 4), cv::FONT_HERSHEY_SIMPLEX, 0.4, kAxis,
                1, cv::LINE_8);
  }
  cv::rectangle(img, cv::Point(kMarginLeft, kMarginTop),
                cv::Point(kWidth - kMarginRight, kHeight - kMarginBottom), kAxis, 1,
                cv::LINE_8);
}

void write_png(const cv::Mat& img, const std::filesystem::path& path) {
  std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp.png";
  if (!cv::imwrite(tmp.string(), img)) {
    throw std::runtime_error("plot: failed to write " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace

void write_line_plot(const std::filesystem::path& png_path, const std::string& title,
                     const std::string& x_label, const std::string& y_label,
                     const std::vector<PlotSeries>& series) {
  if (series.empty()) {
    throw std::invalid_argument("write_line_plot: no series");
  }
  Range xr, yr;
  xr.lo = std::numeric_limits<double>::infinity();
  xr.hi = -xr.lo;
  yr.lo = std::numeric_limits<double>::infinity();
  yr.hi = -yr.lo;
  for (const PlotSeries& s : series) {
    if (s.x.size() != s.y.size() || s.x.empty()) {
      throw std::invalid_argument("write_line_plot: series sizes");
    }
    for (double v : s.x) xr.expand(v);
    for (double v : s.y) yr.expand(v);
  }
  xr.pad();
  yr.pad();

  cv::Mat img(kHeight, kWidth, CV_8UC3, kBackground);
  const int plot_w = kWidth - kMarginLeft - kMarginRight;
  const int plot_h = kHeight - kMarginTop - kMarginBottom;
  draw_y_ticks(img, yr, plot_h);
  draw_frame(img, title, x_label, y_label);

  auto px = [&](double v) {
    return kMarginLeft + static_cast<int>(std::lround((v - xr.lo) / (xr.hi - xr.lo) * plot_w));
  };
  auto py = [&](double v) {
    return kHeight - kMarginBottom -
           static_cast<int>(std::lround((v - yr.lo) / (yr.hi - yr.lo) * plot_h));
  };

  // x ticks at the union of series x positions (up to 8)
  std::vector<double> xs = series.front().x;
  std::sort(xs.begin(), xs.end());
  xs.erase(std::unique(xs.begin(), xs.end()), xs.end());
  std::size_t stride = std::max<std::size_t>(1, xs.size() / 8);
  for (std::size_t i = 0; i < xs.size(); i += stride) {
    int p = px(xs[i]);
    cv::line(img, cv::Point(p, kHeight - kMarginBottom),
             cv::Point(p, kHeight - kMarginBottom + 5), kAxis, 1, cv::LINE_8);
    cv::putText(img, tick_label(xs[i]), cv::Point(p - 16, kHeight - kMarginBottom + 22),
                cv::FONT_HERSHEY_SIMPLEX, 0.4, kAxis, 1, cv::LINE_8);
  }

  for (std::size_t si = 0; si < series.size(); ++si) {
    const PlotSeries& s = series[si];
    cv::Scalar color = palette()[si % palette().size()];
    for (std::size_t i = 0; i + 1 < s.x.size(); ++i) {
      cv::line(img, cv::Point(px(s.x[i]), py(s.y[i])), cv::Point(px(s.x[i + 1]), py(s.y[i + 1])),
               color, 2, cv::LINE_8);
    }
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      cv::circle(img, cv::Point(px(s.x[i]), py(s.y[i])), 3, color, cv::FILLED, cv::LINE_8);
    }
    int ly = kMarginTop + 18 + 18 * static_cast<int>(si);
    cv::line(img, cv::Point(kWidth - kMarginRight - 150, ly - 4),
             cv::Point(kWidth - kMarginRight - 125, ly - 4), color, 2, cv::LINE_8);
    cv::putText(img, s.label, cv::Point(kWidth - kMarginRight - 118, ly),
                cv::FONT_HERSHEY_SIMPLEX, 0.45, kAxis, 1, cv::LINE_8);
  }
  write_png(img, png_path);
}

void write_bar_chart(const std::filesystem::path& png_path, const std::string& title,
                     const std::string& y_label, const std::vector<std::string>& group_labels,
                     const std::vector<BarSeries>& series) {
  if (series.empty() || group_labels.empty()) {
    throw std::invalid_argument("write_bar_chart: empty input");
  }
  const std::size_t groups = group_labels.size();
  Range yr;
  yr.lo = 0.0;
  yr.hi = 0.0;
  for (const BarSeries& s : series) {
    if (s.values.size() != groups || (!s.sd.empty() && s.sd.size() != groups)) {
      throw std::invalid_argument("write_bar_chart: series sizes");
    }
    for (std::size_t g = 0; g < groups; ++g) {
      double sd = s.sd.empty() ? 0.0 : s.sd[g];
      yr.expand(s.values[g] + sd);
      yr.expand(s.values[g] - sd);
    }
  }
  yr.pad();

  cv::Mat img(kHeight, kWidth, CV_8UC3, kBackground);
  const int plot_w = kWidth - kMarginLeft - kMarginRight;
  const int plot_h = kHeight - kMarginTop - kMarginBottom;
  draw_y_ticks(img, yr, plot_h);
  draw_frame(img, title, "", y_label);

  auto py = [&](double v) {
    return kHeight - kMarginBottom -
           static_cast<int>(std::lround((v - yr.lo) / (yr.hi - yr.lo) * plot_h));
  };
  const int zero_y = py(std::max(0.0, yr.lo));

  const double group_w = static_cast<double>(plot_w) / static_cast<double>(groups);
  const double bar_w = 0.8 * group_w / static_cast<double>(series.size());
  for (std::size_t g = 0; g < groups; ++g) {
    double gx = kMarginLeft + group_w * (static_cast<double>(g) + 0.1);
    for (std::size_t si = 0; si < series.size(); ++si) {
      const BarSeries& s = series[si];
      cv::Scalar color = palette()[si % palette().size()];
      int x0 = static_cast<int>(std::lround(gx + bar_w * static_cast<double>(si)));
      int x1 = static_cast<int>(std::lround(gx + bar_w * static_cast<double>(si + 1))) - 2;
      int y1 = py(s.values[g]);
      cv::rectangle(img, cv::Point(x0, std::min(zero_y, y1)), cv::Point(x1, std::max(zero_y, y1)),
                    color, cv::FILLED, cv::LINE_8);
      if (!s.sd.empty() && s.sd[g] > 0.0) {
        int cx = (x0 + x1) / 2;
        cv::line(img, cv::Point(cx, py(s.values[g] - s.sd[g])),
                 cv::Point(cx, py(s.values[g] + s.sd[g])), kAxis, 1, cv::LINE_8);
      }
    }
    cv::putText(img, group_labels[g],
                cv::Point(static_cast<int>(gx), kHeight - kMarginBottom + 22),
                cv::FONT_HERSHEY_SIMPLEX, 0.45, kAxis, 1, cv::LINE_8);
  }

  for (std::size_t si = 0; si < series.size(); ++si) {
    cv::Scalar color = palette()[si % palette().size()];
    int ly = kMarginTop + 18 + 18 * static_cast<int>(si);
    cv::rectangle(img, cv::Point(kWidth - kMarginRight - 150, ly - 10),
                  cv::Point(kWidth - kMarginRight - 130, ly), color, cv::FILLED, cv::LINE_8);
    cv::putText(img, series[si].label, cv::Point(kWidth - kMarginRight - 122, ly),
                cv::FONT_HERSHEY_SIMPLEX, 0.45, kAxis, 1, cv::LINE_8);
  }
  write_png(img, png_path);
}

}  // namespace riskgen

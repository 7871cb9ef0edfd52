#include "idpf/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "idpf/error.hpp"

namespace idpf::plot {

namespace {

const cv::Scalar kPalette[] = {{180, 119, 31}, {14, 127, 255}, {44, 160, 44}, {40, 39, 214},
                               {189, 103, 148}, {75, 86, 140}};

std::string tick(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

}  // namespace

void line_plot(const std::filesystem::path& path, const Axes& axes, const std::vector<Series>& series) {
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : series) {
    if (s.x.size() != s.y.size()) fail(ErrorCode::ShapeMismatch, "series " + s.label + " has unequal x/y");
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i]);
      y1 = std::max(y1, s.y[i]);
    }
  }
  if (!(x1 >= x0)) x0 = 0.0, x1 = 1.0, y0 = 0.0, y1 = 1.0;
  if (x1 == x0) x0 -= 0.5, x1 += 0.5;
  if (y1 == y0) y0 -= 0.5, y1 += 0.5;

  const int w = axes.width, h = axes.height;
  const int left = 70, right = 20, top = 40, bottom = 60;
  cv::Mat img(h, w, CV_8UC3, cv::Scalar(255, 255, 255));
  auto px = [&](double x) { return left + static_cast<int>(std::lround((x - x0) / (x1 - x0) * (w - left - right))); };
  auto py = [&](double y) { return h - bottom - static_cast<int>(std::lround((y - y0) / (y1 - y0) * (h - top - bottom))); };

  const cv::Scalar black(0, 0, 0), grid(225, 225, 225);
  const int font = cv::FONT_HERSHEY_SIMPLEX;
  for (int i = 0; i <= 4; ++i) {
    const double xv = x0 + (x1 - x0) * i / 4.0, yv = y0 + (y1 - y0) * i / 4.0;
    cv::line(img, {px(xv), top}, {px(xv), h - bottom}, grid, 1);
    cv::line(img, {left, py(yv)}, {w - right, py(yv)}, grid, 1);
    const std::string xt = tick(xv);
    int base = 0;
    const int tw = cv::getTextSize(xt, font, 0.4, 1, &base).width;
    cv::putText(img, xt, {px(xv) - tw / 2, h - bottom + 18}, font, 0.4, black, 1, cv::LINE_AA);
    cv::putText(img, tick(yv), {8, py(yv) + 4}, font, 0.4, black, 1, cv::LINE_AA);
  }
  cv::rectangle(img, {left, top}, {w - right, h - bottom}, black, 1);
  int base = 0;
  const int title_w = cv::getTextSize(axes.title, font, 0.55, 1, &base).width;
  cv::putText(img, axes.title, {(w - title_w) / 2, 22}, font, 0.55, black, 1, cv::LINE_AA);
  cv::putText(img, axes.xlabel, {w / 2 - 40, h - 15}, font, 0.45, black, 1, cv::LINE_AA);
  cv::putText(img, axes.ylabel, {8, top - 8}, font, 0.45, black, 1, cv::LINE_AA);

  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const cv::Scalar colour = kPalette[k % std::size(kPalette)];
    std::vector<cv::Point> pts;
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (std::isfinite(s.x[i]) && std::isfinite(s.y[i])) pts.emplace_back(px(s.x[i]), py(s.y[i]));
    }
    if (pts.size() > 1) cv::polylines(img, pts, false, colour, 2, cv::LINE_AA);
    if (pts.size() <= 40) {
      for (const auto& p : pts) cv::circle(img, p, 3, colour, cv::FILLED, cv::LINE_AA);
    }
    const int ly = top + 18 + static_cast<int>(k) * 18;
    cv::line(img, {w - right - 150, ly - 4}, {w - right - 130, ly - 4}, colour, 2);
    cv::putText(img, s.label, {w - right - 125, ly}, font, 0.4, black, 1, cv::LINE_AA);
  }
  if (!cv::imwrite(path.string(), img)) fail(ErrorCode::CodecFailure, "cannot write plot " + path.string());
}

}  // namespace idpf::plot

#include "idpf/image.hpp"

#include <algorithm>
#include <cmath>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "idpf/error.hpp"

namespace idpf {

std::string to_string(const ImageShape& shape) {
  return std::to_string(shape.height) + "x" + std::to_string(shape.width) + "x" +
         std::to_string(shape.channels);
}

FaceImage::FaceImage(ImageShape shape, double fill) : shape_(shape), pixels_(shape.size(), fill) {
  if (shape.height <= 0 || shape.width <= 0 || shape.channels <= 0) {
    fail(ErrorCode::ShapeMismatch, "non-positive image shape " + to_string(shape));
  }
}

FaceImage FaceImage::from_pixels(ImageShape shape, std::vector<double> pixels) {
  if (pixels.size() != shape.size()) {
    fail(ErrorCode::ShapeMismatch, "pixel buffer of " + std::to_string(pixels.size()) +
                                       " values does not match shape " + to_string(shape));
  }
  FaceImage image(shape);
  image.pixels_ = std::move(pixels);
  if (!image.in_unit_range()) fail(ErrorCode::InvalidRange, "pixel outside [0,1]");
  return image;
}

void FaceImage::clamp01() {
  for (double& v : pixels_) v = std::clamp(v, 0.0, 1.0);
}

bool FaceImage::in_unit_range() const {
  return std::all_of(pixels_.begin(), pixels_.end(),
                     [](double v) { return v >= 0.0 && v <= 1.0; });
}

FaceImage quantize8(const FaceImage& image) {
  FaceImage out = image;
  for (double& v : out.pixels()) v = std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0;
  return out;
}

static void require_same_shape(const FaceImage& a, const FaceImage& b) {
  if (a.shape() != b.shape()) {
    fail(ErrorCode::ShapeMismatch, to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
}

double linf_distance(const FaceImage& a, const FaceImage& b) {
  require_same_shape(a, b);
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.pixels()[i] - b.pixels()[i]));
  return m;
}

double l2_distance(const FaceImage& a, const FaceImage& b) {
  require_same_shape(a, b);
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a.pixels()[i] - b.pixels()[i];
    s += d * d;
  }
  return std::sqrt(s);
}

double mean_abs_difference(const FaceImage& a, const FaceImage& b) {
  require_same_shape(a, b);
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a.pixels()[i] - b.pixels()[i]);
  return s / static_cast<double>(a.size());
}

namespace {

cv::Mat to_mat8(const FaceImage& image) {
  const int c = image.channels();
  if (c != 1 && c != 3) fail(ErrorCode::CodecFailure, "only 1 or 3 channel images can be encoded");
  cv::Mat mat(image.height(), image.width(), c == 1 ? CV_8UC1 : CV_8UC3);
  for (int y = 0; y < image.height(); ++y) {
    auto* row = mat.ptr<std::uint8_t>(y);
    for (int x = 0; x < image.width(); ++x) {
      for (int ch = 0; ch < c; ++ch) {
        // OpenCV stores BGR; our channel 0 is red.
        const int dst = c == 3 ? 2 - ch : 0;
        const double v = std::clamp(image.at(ch, y, x), 0.0, 1.0);
        row[x * c + dst] = static_cast<std::uint8_t>(std::lround(v * 255.0));
      }
    }
  }
  return mat;
}

FaceImage from_mat8(const cv::Mat& mat) {
  const int c = mat.channels();
  if (mat.depth() != CV_8U || (c != 1 && c != 3)) {
    fail(ErrorCode::CodecFailure, "decoded image is not 8-bit gray or RGB");
  }
  FaceImage image(ImageShape{mat.rows, mat.cols, c});
  for (int y = 0; y < mat.rows; ++y) {
    const auto* row = mat.ptr<std::uint8_t>(y);
    for (int x = 0; x < mat.cols; ++x) {
      for (int ch = 0; ch < c; ++ch) {
        const int src = c == 3 ? 2 - ch : 0;
        image.at(ch, y, x) = row[x * c + src] / 255.0;
      }
    }
  }
  return image;
}

}  // namespace

FaceImage read_image(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) fail(ErrorCode::FileNotFound, path.string());
  cv::Mat mat = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (mat.empty()) fail(ErrorCode::CodecFailure, "cannot decode " + path.string());
  return from_mat8(mat);
}

void write_image(const FaceImage& image, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), to_mat8(image))) {
    fail(ErrorCode::CodecFailure, "cannot write " + path.string());
  }
}

FaceImage jpeg_roundtrip(const FaceImage& image, int quality) {
  if (quality < 1 || quality > 100) {
    fail(ErrorCode::InvalidRange, "JPEG quality must be in [1,100], got " + std::to_string(quality));
  }
  std::vector<std::uint8_t> buffer;
  const std::vector<int> params{cv::IMWRITE_JPEG_QUALITY, quality};
  if (!cv::imencode(".jpg", to_mat8(image), buffer, params)) {
    fail(ErrorCode::CodecFailure, "JPEG encode failed at QF " + std::to_string(quality));
  }
  cv::Mat decoded = cv::imdecode(buffer, cv::IMREAD_UNCHANGED);
  if (decoded.empty()) fail(ErrorCode::CodecFailure, "JPEG decode failed");
  return from_mat8(decoded);
}

}  // namespace idpf

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace idpf {

struct ImageShape {
  int height = 64;
  int width = 64;
  int channels = 3;

  std::size_t size() const {
    return static_cast<std::size_t>(height) * width * channels;
  }
  friend bool operator==(const ImageShape&, const ImageShape&) = default;
};

std::string to_string(const ImageShape& shape);

/// A face crop with pixel values in [0,1], stored planar (channel-major, then
/// row-major) because every consumer downstream is a convolution.
class FaceImage {
 public:
  FaceImage() = default;
  explicit FaceImage(ImageShape shape, double fill = 0.0);

  /// Validates the [0,1] range and the buffer size.
  static FaceImage from_pixels(ImageShape shape, std::vector<double> pixels);

  const ImageShape& shape() const { return shape_; }
  int height() const { return shape_.height; }
  int width() const { return shape_.width; }
  int channels() const { return shape_.channels; }
  std::size_t size() const { return pixels_.size(); }
  bool empty() const { return pixels_.empty(); }

  double& at(int c, int y, int x) {
    return pixels_[(static_cast<std::size_t>(c) * shape_.height + y) * shape_.width + x];
  }
  double at(int c, int y, int x) const {
    return pixels_[(static_cast<std::size_t>(c) * shape_.height + y) * shape_.width + x];
  }

  std::span<double> pixels() { return pixels_; }
  std::span<const double> pixels() const { return pixels_; }

  /// Clamp every pixel into [0,1] in place.
  void clamp01();
  bool in_unit_range() const;

  friend bool operator==(const FaceImage&, const FaceImage&) = default;

 private:
  ImageShape shape_{};
  std::vector<double> pixels_;
};

/// Round every pixel to the nearest 8-bit level (k/255).
FaceImage quantize8(const FaceImage& image);

double linf_distance(const FaceImage& a, const FaceImage& b);
double l2_distance(const FaceImage& a, const FaceImage& b);
double mean_abs_difference(const FaceImage& a, const FaceImage& b);

/// 8-bit PNG/JPEG I/O. Files are RGB on disk (or gray for one channel).
FaceImage read_image(const std::filesystem::path& path);
void write_image(const FaceImage& image, const std::filesystem::path& path);

/// Encode to JPEG at the given quality factor in memory and decode again.
FaceImage jpeg_roundtrip(const FaceImage& image, int quality);

}  // namespace idpf

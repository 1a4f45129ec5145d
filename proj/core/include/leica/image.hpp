#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

namespace leica {

/// H x W x 3 raster with channel values in [0, 1].
///
/// Storage is interleaved row-major: data[(y * width + x) * 3 + c].
struct ImageTensor {
  int height = 0;
  int width = 0;
  std::vector<float> data;

  static constexpr int kChannels = 3;

  ImageTensor() = default;
  ImageTensor(int h, int w, float fill = 0.0f);

  std::size_t index(int y, int x, int c = 0) const {
    return (static_cast<std::size_t>(y) * width + x) * kChannels + c;
  }
  float& at(int y, int x, int c) { return data[index(y, x, c)]; }
  float at(int y, int x, int c) const { return data[index(y, x, c)]; }
  std::size_t pixel_count() const {
    return static_cast<std::size_t>(height) * width;
  }

  // Throws InvalidArgument unless every value is finite and in [0, 1].
  void validate() const;

  bool operator==(const ImageTensor&) const = default;
};

// Binary "P6" PPM with maxval 255; values map to [0,1] by /255.
ImageTensor read_ppm(const std::filesystem::path& path);
void write_ppm(const ImageTensor& img, const std::filesystem::path& path);

double mean_squared_error(const ImageTensor& a, const ImageTensor& b);

}  // namespace leica

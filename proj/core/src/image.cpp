#include "leica/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <string>

#include "leica/errors.hpp"

namespace leica {

ImageTensor::ImageTensor(int h, int w, float fill) : height(h), width(w) {
  if (h <= 0 || w <= 0) throw InvalidArgument("image dimensions must be positive");
  data.assign(static_cast<std::size_t>(h) * w * kChannels, fill);
}

void ImageTensor::validate() const {
  if (height <= 0 || width <= 0) throw InvalidArgument("empty image");
  if (data.size() != pixel_count() * kChannels) {
    throw ShapeError("image buffer size does not match its dimensions");
  }
  for (float v : data) {
    if (!std::isfinite(v) || v < 0.0f || v > 1.0f) {
      throw InvalidArgument("image values must be finite and in [0,1]");
    }
  }
}

namespace {

// Reads one whitespace-delimited header token, skipping '#' comments.
std::string header_token(std::istream& in) {
  std::string tok;
  int ch;
  while ((ch = in.get()) != EOF) {
    if (ch == '#') {
      while ((ch = in.get()) != EOF && ch != '\n') {
      }
      continue;
    }
    if (std::isspace(ch)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(static_cast<char>(ch));
  }
  return tok;
}

int header_int(std::istream& in, const std::filesystem::path& path) {
  const std::string tok = header_token(in);
  if (tok.empty() || !std::all_of(tok.begin(), tok.end(), ::isdigit)) {
    throw FormatError(path.string() + ": malformed PPM header");
  }
  return std::stoi(tok);
}

}  // namespace

ImageTensor read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open image " + path.string());
  if (header_token(in) != "P6") {
    throw FormatError(path.string() + ": not a binary P6 PPM");
  }
  const int width = header_int(in, path);
  const int height = header_int(in, path);
  const int maxval = header_int(in, path);
  if (width <= 0 || height <= 0) throw FormatError(path.string() + ": empty image");
  if (maxval != 255) throw FormatError(path.string() + ": only 8-bit PPM (maxval 255) is supported");

  ImageTensor img(height, width);
  std::vector<unsigned char> raw(img.data.size());
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (in.gcount() != static_cast<std::streamsize>(raw.size())) {
    throw FormatError(path.string() + ": truncated pixel data");
  }
  for (std::size_t i = 0; i < raw.size(); ++i) img.data[i] = raw[i] / 255.0f;
  return img;
}

void write_ppm(const ImageTensor& img, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open for writing: " + path.string());
  out << "P6\n" << img.width << ' ' << img.height << "\n255\n";
  std::vector<unsigned char> raw(img.data.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const float v = std::clamp(img.data[i], 0.0f, 1.0f);
    raw[i] = static_cast<unsigned char>(std::lround(v * 255.0f));
  }
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!out) throw Error("write failed: " + path.string());
}

double mean_squared_error(const ImageTensor& a, const ImageTensor& b) {
  if (a.height != b.height || a.width != b.width) throw ShapeError("MSE of differently sized images");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double d = static_cast<double>(a.data[i]) - b.data[i];
    acc += d * d;
  }
  return acc / static_cast<double>(a.data.size());
}

}  // namespace leica

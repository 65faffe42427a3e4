#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace partdisc {

// Dense (height, width, channels) grid of float32 values stored row-major,
// channel fastest. Houses backbone maps and part-response maps alike.
class FeatureMap {
 public:
  FeatureMap() = default;
  FeatureMap(int height, int width, int channels, float fill = 0.0f);
  FeatureMap(int height, int width, int channels, std::vector<float> data);

  int height() const { return height_; }
  int width() const { return width_; }
  int channels() const { return channels_; }
  int cells() const { return height_ * width_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::size_t index(int y, int x, int c) const {
    return (static_cast<std::size_t>(y) * width_ + x) * channels_ + c;
  }

  float& at(int y, int x, int c) { return data_[index(y, x, c)]; }
  float at(int y, int x, int c) const { return data_[index(y, x, c)]; }

  // Channel vector of one cell.
  std::span<float> cell(int y, int x) {
    return {data_.data() + index(y, x, 0), static_cast<std::size_t>(channels_)};
  }
  std::span<const float> cell(int y, int x) const {
    return {data_.data() + index(y, x, 0), static_cast<std::size_t>(channels_)};
  }
  std::span<const float> cell(int linear) const {
    return {data_.data() + static_cast<std::size_t>(linear) * channels_,
            static_cast<std::size_t>(channels_)};
  }

  std::vector<float>& data() { return data_; }
  const std::vector<float>& data() const { return data_; }

  bool same_shape(const FeatureMap& other) const {
    return height_ == other.height_ && width_ == other.width_ &&
           channels_ == other.channels_;
  }

  bool all_finite() const;
  std::string shape_string() const;

  friend bool operator==(const FeatureMap&, const FeatureMap&) = default;

 private:
  int height_ = 0;
  int width_ = 0;
  int channels_ = 0;
  std::vector<float> data_;
};

// Per-channel bilinear resampling with half-pixel centers (align_corners
// false). Sample coordinates are clamped to the valid range at the borders.
FeatureMap resize_bilinear(const FeatureMap& fm, int out_h, int out_w);

// Channels whose spatial maximum is at or below this value are left alone by
// spatial_max_normalize.
inline constexpr double kDeadChannelEps = 1e-12;

// Divides every channel by its spatial maximum. Input must be non-negative.
FeatureMap spatial_max_normalize(const FeatureMap& fm);

// Boolean h x w mask, row-major.
struct CellMask {
  int height = 0;
  int width = 0;
  std::vector<unsigned char> valid;

  CellMask() = default;
  CellMask(int h, int w, bool value)
      : height(h), width(w), valid(static_cast<std::size_t>(h) * w, value ? 1 : 0) {}

  bool operator()(int y, int x) const {
    return valid[static_cast<std::size_t>(y) * width + x] != 0;
  }
  bool all() const;
  friend bool operator==(const CellMask&, const CellMask&) = default;
};

}  // namespace partdisc

#include "partdisc/feature_map.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "partdisc/errors.hpp"

namespace partdisc {

FeatureMap::FeatureMap(int height, int width, int channels, float fill)
    : height_(height), width_(width), channels_(channels) {
  if (height < 0 || width < 0 || channels < 0) {
    throw UsageError("FeatureMap: negative dimension");
  }
  data_.assign(static_cast<std::size_t>(height) * width * channels, fill);
}

FeatureMap::FeatureMap(int height, int width, int channels, std::vector<float> data)
    : height_(height), width_(width), channels_(channels), data_(std::move(data)) {
  if (height < 0 || width < 0 || channels < 0) {
    throw UsageError("FeatureMap: negative dimension");
  }
  if (data_.size() != static_cast<std::size_t>(height) * width * channels) {
    throw DataError("FeatureMap: data length does not match shape " + shape_string());
  }
}

bool FeatureMap::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
}

std::string FeatureMap::shape_string() const {
  std::ostringstream os;
  os << "(" << height_ << ", " << width_ << ", " << channels_ << ")";
  return os.str();
}

bool CellMask::all() const {
  return std::all_of(valid.begin(), valid.end(), [](unsigned char v) { return v != 0; });
}

namespace {

struct Tap {
  int lo;
  int hi;
  double frac;
};

// Source taps for one output coordinate under the half-pixel convention.
Tap source_tap(int out_index, int in_size, int out_size) {
  double src = (out_index + 0.5) * static_cast<double>(in_size) / out_size - 0.5;
  src = std::clamp(src, 0.0, static_cast<double>(in_size - 1));
  int lo = static_cast<int>(std::floor(src));
  int hi = std::min(lo + 1, in_size - 1);
  return {lo, hi, src - lo};
}

}  // namespace

FeatureMap resize_bilinear(const FeatureMap& fm, int out_h, int out_w) {
  if (out_h < 1 || out_w < 1) {
    throw UsageError("resize_bilinear: zero-size target");
  }
  if (fm.height() < 1 || fm.width() < 1) {
    throw DataError("resize_bilinear: empty source map");
  }
  if (out_h == fm.height() && out_w == fm.width()) return fm;

  const int c = fm.channels();
  FeatureMap out(out_h, out_w, c);
  std::vector<Tap> xs(out_w);
  for (int x = 0; x < out_w; ++x) xs[x] = source_tap(x, fm.width(), out_w);

  for (int y = 0; y < out_h; ++y) {
    const Tap ty = source_tap(y, fm.height(), out_h);
    for (int x = 0; x < out_w; ++x) {
      const Tap& tx = xs[x];
      const double w00 = (1 - ty.frac) * (1 - tx.frac);
      const double w01 = (1 - ty.frac) * tx.frac;
      const double w10 = ty.frac * (1 - tx.frac);
      const double w11 = ty.frac * tx.frac;
      for (int ch = 0; ch < c; ++ch) {
        const double v = w00 * fm.at(ty.lo, tx.lo, ch) + w01 * fm.at(ty.lo, tx.hi, ch) +
                         w10 * fm.at(ty.hi, tx.lo, ch) + w11 * fm.at(ty.hi, tx.hi, ch);
        out.at(y, x, ch) = static_cast<float>(v);
      }
    }
  }
  return out;
}

FeatureMap spatial_max_normalize(const FeatureMap& fm) {
  const int c = fm.channels();
  std::vector<float> maxima(c, 0.0f);
  for (int i = 0; i < fm.cells(); ++i) {
    auto v = fm.cell(i);
    for (int ch = 0; ch < c; ++ch) {
      if (v[ch] < 0.0f || !std::isfinite(v[ch])) {
        throw DataError("spatial_max_normalize: negative or non-finite input value");
      }
      maxima[ch] = std::max(maxima[ch], v[ch]);
    }
  }
  FeatureMap out = fm;
  auto& data = out.data();
  for (std::size_t i = 0; i < data.size(); ++i) {
    const float m = maxima[i % c];
    if (m > kDeadChannelEps) data[i] /= m;
  }
  return out;
}

}  // namespace partdisc

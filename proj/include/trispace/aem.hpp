#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include "trispace/core.hpp"
#include "trispace/trajio.hpp"

namespace trispace::aem {

constexpr std::size_t kNumColumns = 24;
constexpr double kTimeRateGuard = 1e-9;
constexpr double kDirectionBinWidth = 45.0;

/// Per-step series derived from one trajectory. Sizes: TimeDiff, TimeRate,
/// DirectionDiff and EventDiff have M-1 entries, SpeedRate has M-2 (its
/// first defined index is the third point), Speed and DirectionAngle have M.
struct TimeSeriesPair {
  std::vector<double> diff;
  std::vector<double> rate;
};

inline TimeSeriesPair time_features(const std::vector<double>& t) {
  TimeSeriesPair out;
  if (t.size() < 2) return out;
  out.diff.reserve(t.size() - 1);
  out.rate.reserve(t.size() - 1);
  for (std::size_t i = 1; i < t.size(); ++i) {
    double d = t[i] - t[i - 1];
    out.diff.push_back(d);
    double denom = std::abs(t[i - 1]) < kTimeRateGuard ? kTimeRateGuard : t[i - 1];
    out.rate.push_back(d / denom);
  }
  return out;
}

struct GeoFeatures {
  double lon_range = 0.0;
  double lat_range = 0.0;
  double lon_center = 0.0;
  double lat_center = 0.0;
};

inline GeoFeatures geo_features(const std::vector<double>& lon, const std::vector<double>& lat) {
  GeoFeatures g;
  if (lon.empty() || lon.size() != lat.size()) return g;
  auto [lon_min, lon_max] = std::minmax_element(lon.begin(), lon.end());
  auto [lat_min, lat_max] = std::minmax_element(lat.begin(), lat.end());
  g.lon_range = *lon_max - *lon_min;
  g.lat_range = *lat_max - *lat_min;
  for (double v : lon) g.lon_center += v;
  for (double v : lat) g.lat_center += v;
  g.lon_center /= static_cast<double>(lon.size());
  g.lat_center /= static_cast<double>(lat.size());
  return g;
}

struct SpeedSeries {
  std::vector<double> speed;
  std::vector<double> rate;  // starts at the third point
};

inline SpeedSeries speed_features(const std::vector<double>& v,
                                  const std::vector<double>& time_diff) {
  SpeedSeries out;
  out.speed = v;
  if (v.size() < 3) return out;
  out.rate.reserve(v.size() - 2);
  for (std::size_t i = 2; i < v.size(); ++i) {
    double dt = time_diff[i - 1];
    if (std::abs(dt) < kTimeRateGuard) dt = kTimeRateGuard;
    out.rate.push_back((v[i] - v[i - 1]) / dt);
  }
  return out;
}

struct DirectionSeries {
  std::vector<double> diff;
  std::vector<double> angle_bin;
};

/// Signed heading steps plus coarse 45-degree heading buckets. The literal
/// difference keeps wraparound jumps (350 -> 10 gives -340); the wrapped
/// mode folds differences into (-180, 180].
inline DirectionSeries direction_features(const std::vector<double>& heading,
                                          bool wrap = false) {
  DirectionSeries out;
  out.angle_bin.reserve(heading.size());
  for (double h : heading) {
    double bin = std::floor(h / kDirectionBinWidth);
    out.angle_bin.push_back(std::min(bin, 360.0 / kDirectionBinWidth - 1.0));
  }
  if (heading.size() < 2) return out;
  out.diff.reserve(heading.size() - 1);
  for (std::size_t i = 1; i < heading.size(); ++i) {
    double d = heading[i] - heading[i - 1];
    if (wrap) {
      d = std::fmod(d + 180.0, 360.0);
      if (d < 0.0) d += 360.0;
      d -= 180.0;
      if (d == -180.0) d = 180.0;
    }
    out.diff.push_back(d);
  }
  return out;
}

inline std::vector<double> event_features(const std::vector<int>& events) {
  std::vector<double> diff;
  if (events.size() < 2) return diff;
  diff.reserve(events.size() - 1);
  for (std::size_t i = 1; i < events.size(); ++i)
    diff.push_back(static_cast<double>(events[i] - events[i - 1]));
  return diff;
}

struct SeriesStats {
  double mean = 0.0;
  double variance = 0.0;  // population variance
  double max = 0.0;
  double min = 0.0;
};

/// Stats of a possibly-empty series; an empty series yields all zeros.
inline SeriesStats series_stats(const std::vector<double>& v) {
  SeriesStats s;
  if (v.empty()) return s;
  double acc = 0.0;
  double mx = -std::numeric_limits<double>::infinity();
  double mn = std::numeric_limits<double>::infinity();
  for (double x : v) {
    acc += x;
    mx = std::max(mx, x);
    mn = std::min(mn, x);
  }
  s.mean = acc / static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - s.mean) * (x - s.mean);
  s.variance = var / static_cast<double>(v.size());
  s.max = mx;
  s.min = mn;
  return s;
}

inline double series_mean(const std::vector<double>& v) { return series_stats(v).mean; }

inline const std::array<const char*, kNumColumns>& column_names() {
  static const std::array<const char*, kNumColumns> names = {
      "time_diff_mean",       "time_diff_var",       "time_diff_max",
      "time_diff_min",        "time_rate_mean",      "time_rate_var",
      "time_rate_max",        "time_rate_min",       "lon_range",
      "lat_range",            "lon_center",          "lat_center",
      "speed_mean",           "speed_rate_mean",     "speed_rate_var",
      "speed_rate_max",       "speed_rate_min",      "direction_diff_mean",
      "direction_angle_mean", "direction_angle_var", "direction_angle_max",
      "direction_angle_min",  "event_diff_mean",     "length_ratio"};
  return names;
}

/// 24-column statistical embedding of one trajectory. Timestamps are shifted
/// to start at zero first, so the embedding is invariant to time
/// translation. Only the first `cap` points enter, mirroring the padded
/// tensor's truncation.
inline std::array<double, kNumColumns> attribute_embedding(const trajio::Trajectory& traj,
                                                           std::size_t cap,
                                                           bool direction_wrap = false) {
  if (cap == 0) throw UsageError("attribute_embedding: cap must be >= 1");
  if (traj.points.empty()) throw DataError("attribute_embedding: empty trajectory " + traj.id);
  const std::size_t m = std::min(cap, traj.points.size());

  std::vector<double> t(m), lon(m), lat(m), speed(m), heading(m);
  std::vector<int> events(m);
  double t0 = traj.points.front().t;
  for (std::size_t i = 0; i < m; ++i) {
    const auto& p = traj.points[i];
    t[i] = p.t - t0;
    lon[i] = p.lon;
    lat[i] = p.lat;
    speed[i] = p.speed;
    heading[i] = p.heading;
    events[i] = p.event;
  }

  auto time = time_features(t);
  auto geo = geo_features(lon, lat);
  auto spd = speed_features(speed, time.diff);
  auto dir = direction_features(heading, direction_wrap);
  auto evt = event_features(events);

  auto td = series_stats(time.diff);
  auto tr = series_stats(time.rate);
  auto sr = series_stats(spd.rate);
  auto da = series_stats(dir.angle_bin);

  std::array<double, kNumColumns> out{};
  out[0] = td.mean;
  out[1] = td.variance;
  out[2] = td.max;
  out[3] = td.min;
  out[4] = tr.mean;
  out[5] = tr.variance;
  out[6] = tr.max;
  out[7] = tr.min;
  out[8] = geo.lon_range;
  out[9] = geo.lat_range;
  out[10] = geo.lon_center;
  out[11] = geo.lat_center;
  out[12] = series_mean(spd.speed);
  out[13] = sr.mean;
  out[14] = sr.variance;
  out[15] = sr.max;
  out[16] = sr.min;
  out[17] = series_mean(dir.diff);
  out[18] = da.mean;
  out[19] = da.variance;
  out[20] = da.max;
  out[21] = da.min;
  out[22] = series_mean(evt);
  out[23] = static_cast<double>(m) / static_cast<double>(cap);
  return out;
}

inline Matrix attribute_matrix(const std::vector<trajio::Trajectory>& trajs, std::size_t cap,
                               bool direction_wrap = false) {
  Matrix m(trajs.size(), kNumColumns);
  for (std::size_t i = 0; i < trajs.size(); ++i) {
    auto row = attribute_embedding(trajs[i], cap, direction_wrap);
    std::copy(row.begin(), row.end(), m.row(i));
  }
  return m;
}

/// Per-column z-scoring fitted on the training rows; zero-variance columns
/// map to 0.
struct AttributeNormalizer {
  std::array<double, kNumColumns> mean{};
  std::array<double, kNumColumns> stddev{};

  Matrix apply(const Matrix& attr) const {
    if (attr.cols != kNumColumns) throw UsageError("attribute normalizer: column mismatch");
    Matrix out(attr.rows, attr.cols);
    for (std::size_t i = 0; i < attr.rows; ++i)
      for (std::size_t c = 0; c < attr.cols; ++c)
        out.at(i, c) = stddev[c] < 1e-12 ? 0.0 : (attr.at(i, c) - mean[c]) / stddev[c];
    return out;
  }
};

inline AttributeNormalizer fit_attribute_normalizer(const Matrix& attr,
                                                    const std::vector<std::size_t>& rows) {
  if (attr.cols != kNumColumns) throw UsageError("fit_attribute_normalizer: column mismatch");
  if (rows.empty()) throw DataError("fit_attribute_normalizer: no rows");
  AttributeNormalizer norm;
  for (std::size_t c = 0; c < kNumColumns; ++c) {
    double acc = 0.0;
    for (std::size_t r : rows) acc += attr.at(r, c);
    norm.mean[c] = acc / static_cast<double>(rows.size());
    double var = 0.0;
    for (std::size_t r : rows) {
      double d = attr.at(r, c) - norm.mean[c];
      var += d * d;
    }
    norm.stddev[c] = std::sqrt(var / static_cast<double>(rows.size()));
  }
  return norm;
}

inline void write_attribute_matrix(std::ostream& out, const std::vector<std::string>& ids,
                                   const Matrix& attr) {
  if (ids.size() != attr.rows) throw UsageError("write_attribute_matrix: id/row mismatch");
  out << "traj_id";
  for (const char* name : column_names()) out << ',' << name;
  out << "\n";
  for (std::size_t i = 0; i < attr.rows; ++i) {
    out << ids[i];
    for (std::size_t c = 0; c < attr.cols; ++c) out << ',' << format_double(attr.at(i, c));
    out << "\n";
  }
}

}  // namespace trispace::aem

#pragma once

#include <algorithm>
#include <array>
#include <cstdlib>
#include <istream>
#include <limits>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "trispace/core.hpp"

namespace trispace::trajio {

constexpr std::size_t kNumFeatures = 6;  // t, lon, lat, speed, heading, event
constexpr int kNumEventCodes = 6;
constexpr std::size_t kDefaultLengthCap = 2000;

struct TrajectoryPoint {
  double t = 0.0;
  double lon = 0.0;
  double lat = 0.0;
  double speed = 0.0;
  double heading = 0.0;
  int event = 0;

  double feature(std::size_t f) const {
    switch (f) {
      case 0: return t;
      case 1: return lon;
      case 2: return lat;
      case 3: return speed;
      case 4: return heading;
      default: return static_cast<double>(event);
    }
  }
};

struct Trajectory {
  std::string id;
  std::vector<TrajectoryPoint> points;
  std::optional<double> label;  // arrival time, seconds
};

struct RowError {
  std::size_t line = 0;
  std::string message;
};

struct ParseReport {
  std::vector<RowError> rejected_rows;
  std::size_t rows_accepted = 0;
  std::size_t duplicates_dropped = 0;
  std::size_t empty_trajectories_dropped = 0;
};

struct ParseResult {
  std::vector<Trajectory> trajectories;
  ParseReport report;
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  fields.push_back(cur);
  return fields;
}

inline std::string strip_cr(std::string s) {
  if (!s.empty() && s.back() == '\r') s.pop_back();
  return s;
}

inline bool parse_full_double(const std::string& s, double& out) {
  if (s.empty()) return false;
  char* end = nullptr;
  out = std::strtod(s.c_str(), &end);
  return end == s.c_str() + s.size() && std::isfinite(out);
}

inline bool parse_full_int(const std::string& s, long& out) {
  if (s.empty()) return false;
  char* end = nullptr;
  out = std::strtol(s.c_str(), &end, 10);
  return end == s.c_str() + s.size();
}

}  // namespace detail

inline const char* points_header() { return "traj_id,t,lon,lat,speed,heading,event"; }
inline const char* labels_header() { return "traj_id,arrival_time"; }

/// Parses point rows, groups them into trajectories (ordered by first
/// appearance), and sorts each trajectory by timestamp. Malformed rows are
/// reported with their 1-based line number instead of aborting the parse.
/// Duplicate (traj_id, t) rows keep the first occurrence.
inline ParseResult parse_points(std::istream& in) {
  ParseResult result;
  ParseReport& report = result.report;

  std::string line;
  if (!std::getline(in, line)) throw DataError("points csv: empty stream, header expected");
  if (detail::strip_cr(line) != points_header())
    throw DataError("points csv: expected header '" + std::string(points_header()) + "'");

  std::unordered_map<std::string, std::size_t> index_of;
  std::unordered_set<std::string> rejected_ids;
  std::size_t line_no = 1;

  while (std::getline(in, line)) {
    ++line_no;
    line = detail::strip_cr(line);
    if (line.empty()) continue;

    auto fields = detail::split_csv_line(line);
    auto reject = [&](const std::string& why) {
      report.rejected_rows.push_back({line_no, why});
      if (!fields.empty() && !fields[0].empty()) rejected_ids.insert(fields[0]);
    };

    if (fields.size() != 7) {
      reject("expected 7 fields, got " + std::to_string(fields.size()));
      continue;
    }
    if (fields[0].empty()) {
      reject("empty traj_id");
      continue;
    }

    TrajectoryPoint p;
    long event = 0;
    if (!detail::parse_full_double(fields[1], p.t)) { reject("bad t"); continue; }
    if (!detail::parse_full_double(fields[2], p.lon)) { reject("bad lon"); continue; }
    if (!detail::parse_full_double(fields[3], p.lat)) { reject("bad lat"); continue; }
    if (!detail::parse_full_double(fields[4], p.speed)) { reject("bad speed"); continue; }
    if (!detail::parse_full_double(fields[5], p.heading)) { reject("bad heading"); continue; }
    if (!detail::parse_full_int(fields[6], event)) { reject("bad event code"); continue; }
    if (p.speed < 0.0) { reject("speed must be >= 0"); continue; }
    if (p.heading < 0.0 || p.heading >= 360.0) { reject("heading must be in [0,360)"); continue; }
    if (event < 0 || event >= kNumEventCodes) {
      reject("event code must be in [0," + std::to_string(kNumEventCodes - 1) + "]");
      continue;
    }
    p.event = static_cast<int>(event);

    auto it = index_of.find(fields[0]);
    if (it == index_of.end()) {
      index_of.emplace(fields[0], result.trajectories.size());
      result.trajectories.push_back({fields[0], {p}, std::nullopt});
    } else {
      result.trajectories[it->second].points.push_back(p);
    }
    ++report.rows_accepted;
  }

  for (auto& traj : result.trajectories) {
    std::stable_sort(traj.points.begin(), traj.points.end(),
                     [](const TrajectoryPoint& a, const TrajectoryPoint& b) { return a.t < b.t; });
    std::vector<TrajectoryPoint> kept;
    kept.reserve(traj.points.size());
    for (const auto& p : traj.points) {
      if (!kept.empty() && kept.back().t == p.t) {
        ++report.duplicates_dropped;
        continue;
      }
      kept.push_back(p);
    }
    traj.points = std::move(kept);
  }

  for (const auto& id : rejected_ids)
    if (!index_of.count(id)) ++report.empty_trajectories_dropped;

  return result;
}

struct LabelParseResult {
  std::unordered_map<std::string, double> labels;
  ParseReport report;
};

inline LabelParseResult parse_labels(std::istream& in) {
  LabelParseResult result;
  std::string line;
  if (!std::getline(in, line)) throw DataError("labels csv: empty stream, header expected");
  if (detail::strip_cr(line) != labels_header())
    throw DataError("labels csv: expected header '" + std::string(labels_header()) + "'");

  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    line = detail::strip_cr(line);
    if (line.empty()) continue;
    auto fields = detail::split_csv_line(line);
    if (fields.size() != 2 || fields[0].empty()) {
      result.report.rejected_rows.push_back({line_no, "expected traj_id,arrival_time"});
      continue;
    }
    double y = 0.0;
    if (!detail::parse_full_double(fields[1], y)) {
      result.report.rejected_rows.push_back({line_no, "bad arrival_time"});
      continue;
    }
    if (result.labels.count(fields[0])) {
      ++result.report.duplicates_dropped;
      continue;
    }
    result.labels.emplace(fields[0], y);
    ++result.report.rows_accepted;
  }
  return result;
}

/// Attaches labels by traj_id; returns the number of trajectories left
/// without a label.
inline std::size_t attach_labels(std::vector<Trajectory>& trajs,
                                 const std::unordered_map<std::string, double>& labels) {
  std::size_t missing = 0;
  for (auto& t : trajs) {
    auto it = labels.find(t.id);
    if (it == labels.end()) {
      ++missing;
    } else {
      t.label = it->second;
    }
  }
  return missing;
}

inline void write_points(std::ostream& out, const std::vector<Trajectory>& trajs) {
  out << points_header() << "\n";
  for (const auto& traj : trajs)
    for (const auto& p : traj.points)
      out << traj.id << ',' << format_double(p.t) << ',' << format_double(p.lon) << ','
          << format_double(p.lat) << ',' << format_double(p.speed) << ','
          << format_double(p.heading) << ',' << p.event << "\n";
}

inline void write_labels(std::ostream& out, const std::vector<Trajectory>& trajs) {
  out << labels_header() << "\n";
  for (const auto& traj : trajs)
    if (traj.label) out << traj.id << ',' << format_double(*traj.label) << "\n";
}

/// Per-channel min-max parameters. Timestamps are measured from each
/// trajectory's first point before fitting, so channel 0 spans durations.
struct FeatureNormalizer {
  std::array<double, kNumFeatures> mins{};
  std::array<double, kNumFeatures> maxs{};

  static double channel_value(const Trajectory& traj, std::size_t point, std::size_t f) {
    const auto& p = traj.points[point];
    if (f == 0) return p.t - traj.points.front().t;
    return p.feature(f);
  }

  double apply(std::size_t f, double x) const {
    double lo = mins[f], hi = maxs[f];
    if (hi - lo <= 0.0) return 0.5;
    return (x - lo) / (hi - lo);
  }
};

/// Fits min-max bounds per channel over all observed points.
inline FeatureNormalizer fit_normalizer(const std::vector<Trajectory>& trajs) {
  if (trajs.empty()) throw DataError("fit_normalizer: no trajectories");
  FeatureNormalizer norm;
  norm.mins.fill(std::numeric_limits<double>::infinity());
  norm.maxs.fill(-std::numeric_limits<double>::infinity());
  for (const auto& traj : trajs) {
    if (traj.points.empty()) throw DataError("fit_normalizer: empty trajectory " + traj.id);
    for (std::size_t i = 0; i < traj.points.size(); ++i)
      for (std::size_t f = 0; f < kNumFeatures; ++f) {
        double v = FeatureNormalizer::channel_value(traj, i, f);
        norm.mins[f] = std::min(norm.mins[f], v);
        norm.maxs[f] = std::max(norm.maxs[f], v);
      }
  }
  return norm;
}

struct LabelNormalizer {
  double min = 0.0;
  double max = 0.0;

  double apply(double y) const {
    if (max - min <= 0.0) return 0.5;
    return (y - min) / (max - min);
  }
  double invert(double z) const {
    if (max - min <= 0.0) return min;
    return z * (max - min) + min;
  }
};

inline LabelNormalizer fit_label_normalizer(const std::vector<Trajectory>& trajs) {
  LabelNormalizer norm{std::numeric_limits<double>::infinity(),
                       -std::numeric_limits<double>::infinity()};
  std::size_t count = 0;
  for (const auto& t : trajs)
    if (t.label) {
      norm.min = std::min(norm.min, *t.label);
      norm.max = std::max(norm.max, *t.label);
      ++count;
    }
  if (count == 0) throw DataError("fit_label_normalizer: no labeled trajectories");
  return norm;
}

/// Normalized, padded batch. mask[i*steps+t] is 1 for observed steps; padded
/// steps hold the per-trajectory mean of the observed normalized values.
struct TemporalTensor {
  SeqTensor values;
  std::vector<std::uint8_t> mask;
  std::vector<std::size_t> lengths;  // observed (possibly truncated) lengths
  std::vector<std::string> ids;

  bool observed(std::size_t i, std::size_t t) const { return mask[i * values.steps + t] != 0; }
};

/// Normalizes, truncates to `cap` points, and pads every trajectory to a
/// fixed `cap`-step grid.
inline TemporalTensor pad_and_mask(const std::vector<Trajectory>& trajs,
                                   const FeatureNormalizer& norm, std::size_t cap) {
  if (cap == 0) throw UsageError("pad_and_mask: cap must be >= 1");
  TemporalTensor out;
  out.values = SeqTensor(trajs.size(), cap, kNumFeatures);
  out.mask.assign(trajs.size() * cap, 0);
  out.lengths.resize(trajs.size());
  out.ids.resize(trajs.size());

  for (std::size_t i = 0; i < trajs.size(); ++i) {
    const auto& traj = trajs[i];
    if (traj.points.empty()) throw DataError("pad_and_mask: empty trajectory " + traj.id);
    std::size_t m = std::min(cap, traj.points.size());
    out.lengths[i] = m;
    out.ids[i] = traj.id;

    std::array<double, kNumFeatures> mean{};
    for (std::size_t t = 0; t < m; ++t) {
      out.mask[i * cap + t] = 1;
      for (std::size_t f = 0; f < kNumFeatures; ++f) {
        double v = norm.apply(f, FeatureNormalizer::channel_value(traj, t, f));
        out.values.at(i, t, f) = v;
        mean[f] += v;
      }
    }
    for (std::size_t f = 0; f < kNumFeatures; ++f) mean[f] /= static_cast<double>(m);
    for (std::size_t t = m; t < cap; ++t)
      for (std::size_t f = 0; f < kNumFeatures; ++f) out.values.at(i, t, f) = mean[f];
  }
  return out;
}

/// Largest observed length, used to choose a tight padding width.
inline std::size_t max_length(const std::vector<Trajectory>& trajs) {
  std::size_t m = 0;
  for (const auto& t : trajs) m = std::max(m, t.points.size());
  return m;
}

}  // namespace trispace::trajio

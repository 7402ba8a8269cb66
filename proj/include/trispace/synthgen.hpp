#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <random>
#include <string>
#include <vector>

#include "trispace/core.hpp"
#include "trispace/trajio.hpp"

namespace trispace::synthgen {

/// Synthetic fleet generator. Each trajectory follows a waypoint path inside
/// its region; trajectories in the same (region, time bucket) share a
/// congestion multiplier that scales speed and therefore traversal time.
/// Observations are the ground-truth samples minus i.i.d. drops, with noisy
/// speeds and occasional injected error events.
struct SynthConfig {
  std::uint64_t seed = 42;
  std::size_t n_trajectories = 1000;
  double length_mean = 672.54;  // targets the observed point count
  double length_std = 610.85;
  std::size_t length_cap = trajio::kDefaultLengthCap;
  std::size_t n_regions = 3;
  std::size_t congestion_buckets = 3;
  double congestion_strength = 0.5;  // multiplier drawn from [1-s, 1+s]
  double base_speed_kmh = 40.0;
  double region_speed_spread = 0.4;
  double speed_noise = 0.5;  // relative observation noise on speeds
  double drop_prob_min = 0.05;
  double drop_prob_max = 0.4;
  double base_interval_s = 10.0;
  double interval_sigma = 0.5;  // log-scale spread of per-trajectory sampling interval
  double heading_noise_deg = 8.0;
  double event_rate_lon = 0.01;
  double event_rate_lat = 0.01;
  double event_rate_time = 0.01;
  double event_rate_speed = 0.01;
  double event_rate_dir = 0.01;
};

inline void validate(const SynthConfig& cfg) {
  auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (cfg.n_trajectories < 1) throw UsageError("synthgen: n_trajectories must be >= 1");
  if (cfg.n_regions < 1) throw UsageError("synthgen: n_regions must be >= 1");
  if (cfg.congestion_buckets < 1) throw UsageError("synthgen: congestion_buckets must be >= 1");
  if (!(cfg.length_mean > 0.0) || !(cfg.length_std >= 0.0))
    throw UsageError("synthgen: length_mean must be > 0 and length_std >= 0");
  if (cfg.length_cap < 2) throw UsageError("synthgen: length_cap must be >= 2");
  if (!prob(cfg.drop_prob_min) || !prob(cfg.drop_prob_max) ||
      cfg.drop_prob_min > cfg.drop_prob_max)
    throw UsageError("synthgen: drop probabilities must satisfy 0 <= min <= max <= 1");
  if (cfg.drop_prob_max >= 1.0 && cfg.drop_prob_min >= 1.0)
    throw UsageError("synthgen: drop probability 1 leaves no observations");
  if (!(cfg.congestion_strength >= 0.0 && cfg.congestion_strength < 1.0))
    throw UsageError("synthgen: congestion_strength must be in [0,1)");
  if (!(cfg.base_speed_kmh > 0.0)) throw UsageError("synthgen: base_speed_kmh must be > 0");
  if (!(cfg.base_interval_s > 0.0)) throw UsageError("synthgen: base_interval_s must be > 0");
  for (double r : {cfg.event_rate_lon, cfg.event_rate_lat, cfg.event_rate_time,
                   cfg.event_rate_speed, cfg.event_rate_dir})
    if (!prob(r)) throw UsageError("synthgen: event rates must be in [0,1]");
  if (cfg.event_rate_lon + cfg.event_rate_lat + cfg.event_rate_time + cfg.event_rate_speed +
          cfg.event_rate_dir >
      1.0)
    throw UsageError("synthgen: event rates must sum to at most 1");
}

/// Region token of a generated traj_id ("r2_00017" -> "r2").
inline std::string region_of(const std::string& traj_id) {
  auto pos = traj_id.find('_');
  if (pos == std::string::npos || pos == 0)
    throw DataError("region_of: traj_id '" + traj_id + "' has no region prefix");
  return traj_id.substr(0, pos);
}

namespace detail {

constexpr double kKmPerDegree = 111.0;

struct RegionLayout {
  double center_lon;
  double center_lat;
  double half_width;
};

inline RegionLayout region_layout(std::size_t region) {
  return {113.70 + 0.15 * static_cast<double>(region),
          22.45 + 0.06 * static_cast<double>(region), 0.05};
}

inline double wrap_heading(double h) {
  h = std::fmod(h, 360.0);
  if (h < 0.0) h += 360.0;
  return h;
}

}  // namespace detail

inline std::vector<trajio::Trajectory> generate(const SynthConfig& cfg) {
  validate(cfg);

  // shared congestion multipliers per (region, time bucket)
  auto congestion_rng = make_rng(cfg.seed, "congestion");
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<double> congestion(cfg.n_regions * cfg.congestion_buckets);
  for (double& g : congestion)
    g = 1.0 + cfg.congestion_strength * (2.0 * unit(congestion_rng) - 1.0);

  const double cv = cfg.length_std / cfg.length_mean;
  const double ln_sigma = std::sqrt(std::log1p(cv * cv));
  const double ln_mu = std::log(cfg.length_mean) - 0.5 * ln_sigma * ln_sigma;

  std::vector<trajio::Trajectory> out;
  out.reserve(cfg.n_trajectories);

  for (std::size_t idx = 0; idx < cfg.n_trajectories; ++idx) {
    auto rng = make_rng(cfg.seed, "traj-" + std::to_string(idx));
    std::normal_distribution<double> normal(0.0, 1.0);

    const std::size_t region = idx % cfg.n_regions;
    const std::size_t bucket =
        std::uniform_int_distribution<std::size_t>(0, cfg.congestion_buckets - 1)(rng);
    const double g = congestion[region * cfg.congestion_buckets + bucket];

    double target_len = std::exp(ln_mu + ln_sigma * normal(rng));
    target_len = std::clamp(target_len, 2.0, static_cast<double>(cfg.length_cap));
    const double drop_p =
        cfg.drop_prob_min +
        (cfg.drop_prob_max - cfg.drop_prob_min) * unit(rng);
    const double keep_p = 1.0 - drop_p;

    // congestion stretches the sampled trip: the route length is fixed, the
    // truck moves slower, so more samples accrue
    std::size_t gt_len = static_cast<std::size_t>(
        std::llround(std::clamp(target_len / std::max(keep_p, 1e-3) * g, 2.0,
                                3.0 * static_cast<double>(cfg.length_cap))));

    double interval = cfg.base_interval_s * std::exp(cfg.interval_sigma * normal(rng));
    interval = std::clamp(interval, 1.0, 120.0);

    double region_speed = cfg.base_speed_kmh;
    if (cfg.n_regions > 1)
      region_speed *= 1.0 + cfg.region_speed_spread *
                                (static_cast<double>(region) /
                                     static_cast<double>(cfg.n_regions - 1) -
                                 0.5);
    const double cruise_speed = region_speed / g;

    const auto layout = detail::region_layout(region);
    double lon = layout.center_lon + (2.0 * unit(rng) - 1.0) * 0.03;
    double lat = layout.center_lat + (2.0 * unit(rng) - 1.0) * 0.03;
    double heading = 360.0 * unit(rng);
    double t = static_cast<double>(bucket) * 14400.0 + 3600.0 * unit(rng);

    struct GtPoint {
      double t, lon, lat, speed, heading;
    };
    std::vector<GtPoint> path(gt_len);
    for (std::size_t i = 0; i < gt_len; ++i) {
      double speed = cruise_speed *
                     (1.0 + 0.15 * std::sin(2.0 * M_PI * static_cast<double>(i) / 48.0) +
                      0.05 * normal(rng));
      speed = std::max(speed, 0.2 * cruise_speed);
      path[i] = {t, lon, lat, speed, heading};

      double dt = interval * (1.0 + 0.1 * (2.0 * unit(rng) - 1.0));
      double dist_deg = speed * dt / 3600.0 / detail::kKmPerDegree;
      double rad = heading * M_PI / 180.0;
      lon += std::sin(rad) * dist_deg;
      lat += std::cos(rad) * dist_deg;
      t += dt;

      bool outside = std::abs(lon - layout.center_lon) > layout.half_width ||
                     std::abs(lat - layout.center_lat) > layout.half_width;
      if (outside) {
        heading = detail::wrap_heading(
            std::atan2(layout.center_lon - lon, layout.center_lat - lat) * 180.0 / M_PI +
            0.5 * cfg.heading_noise_deg * normal(rng));
      } else {
        heading = detail::wrap_heading(heading + cfg.heading_noise_deg * normal(rng));
      }
    }

    trajio::Trajectory traj;
    char id[40];
    std::snprintf(id, sizeof(id), "r%zu_%05zu", region, idx);
    traj.id = id;
    traj.label = path.back().t - path.front().t;

    std::vector<std::size_t> kept;
    for (std::size_t i = 0; i < gt_len; ++i)
      if (unit(rng) >= drop_p) kept.push_back(i);
    if (kept.empty()) kept.push_back(0);
    if (kept.size() > cfg.length_cap) kept.resize(cfg.length_cap);

    const double th_lon = cfg.event_rate_lon;
    const double th_lat = th_lon + cfg.event_rate_lat;
    const double th_time = th_lat + cfg.event_rate_time;
    const double th_speed = th_time + cfg.event_rate_speed;
    const double th_dir = th_speed + cfg.event_rate_dir;

    traj.points.reserve(kept.size());
    for (std::size_t i : kept) {
      const auto& gt = path[i];
      trajio::TrajectoryPoint p;
      p.t = gt.t;
      p.lon = gt.lon;
      p.lat = gt.lat;
      p.speed = std::max(0.0, gt.speed * (1.0 + cfg.speed_noise * normal(rng)));
      p.heading = detail::wrap_heading(gt.heading + 2.0 * normal(rng));
      p.event = 0;

      double u = unit(rng);
      if (u < th_lon) {
        p.event = 1;
        p.lon += (unit(rng) < 0.5 ? -1.0 : 1.0) * (0.002 + 0.008 * unit(rng));
      } else if (u < th_lat) {
        p.event = 2;
        p.lat += (unit(rng) < 0.5 ? -1.0 : 1.0) * (0.002 + 0.008 * unit(rng));
      } else if (u < th_time) {
        p.event = 3;
        p.t += 0.35 * interval * unit(rng);  // bounded forward jitter keeps order
      } else if (u < th_speed) {
        p.event = 4;
        p.speed *= unit(rng) < 0.5 ? (1.5 + 1.5 * unit(rng)) : (0.1 + 0.4 * unit(rng));
      } else if (u < th_dir) {
        p.event = 5;
        p.heading = detail::wrap_heading(p.heading + 90.0 + 180.0 * unit(rng));
      }
      traj.points.push_back(p);
    }
    out.push_back(std::move(traj));
  }
  return out;
}

}  // namespace trispace::synthgen

// Copyright 2026 The etapost Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Synthetic city and routing-engine simulator.
//
// The routing engine knows trip distance and the time-of-week speed profile
// only. Actual arrival times additionally depend on per-zone congestion,
// request-type multipliers, per-type pickup offsets, a per-zone parking
// penalty and multiplicative log-normal noise:
//
//   re_eta = distance / s(minute_of_week)
//   ata    = re_eta * sqrt(c_o * c_d) * m_type * eps + offset_type + parking_o
//
// Trips beyond two hours are rejected and redrawn.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "etapost/featurize.hpp"
#include "etapost/random.hpp"

namespace etapost::synth {

inline constexpr double kMaxTripSeconds = 7200.0;
inline constexpr double kKmPerDegree = 111.0;

struct WorldConfig {
  std::uint64_t seed = 42;
  int grid = 32;  // Z x Z zones
  double lat_min = 37.2, lng_min = -122.6;
  double box_degrees = 1.0;
  double congestion_sigma = 0.25;  // log-normal(0, sigma) zone factors
  double rides_multiplier = 1.05;
  double delivery_multiplier = 1.30;
  // Per request type, in RequestType order.
  double type_offset_s[kNumRequestTypes] = {240.0, 90.0, 720.0, 360.0};
  // Zone parking penalty ~ parking_scale_s * log-normal(0, parking_sigma).
  double parking_scale_s = 120.0;
  double parking_sigma = 0.8;
  double noise_sigma = 0.15;
  double delivery_fraction = 0.30;
  int dest_radius_zones = 1;  // destination zone within +-radius of origin
  double min_distance_km = 0.2;
  // Speed profile s(tau), km/h.
  double base_speed_kmh = 38.0;
  double night_bonus_kmh = 10.0;
  double am_rush_dip_kmh = 14.0;
  double pm_rush_dip_kmh = 16.0;
  double weekend_midday_dip_kmh = 5.0;
  double min_speed_kmh = 8.0;
  // Timeline: trips are spread evenly over [start, start + span_days).
  std::int64_t start_timestamp = 1631491200;  // 2021-09-13 00:00 UTC, a Monday
  double span_days = 21.0;
  int regions_per_side = 4;

  // Everything multiplicative at 1 and every additive term at 0; the routing
  // engine is then exact.
  static WorldConfig null_world(std::uint64_t seed = 42);

  void check() const;
};

void to_json(nlohmann::json& j, const WorldConfig& c);
void from_json(const nlohmann::json& j, WorldConfig& c);

// Latent factors behind one trip, exposed for oracle evaluation.
struct TripLatents {
  int origin_zone = 0;
  int dest_zone = 0;
  double congestion = 1.0;  // sqrt(c_o * c_d)
  double type_multiplier = 1.0;
  double offset_s = 0.0;  // type offset + parking
  double noise = 1.0;
};

class World {
 public:
  explicit World(const WorldConfig& cfg);

  const WorldConfig& config() const { return cfg_; }
  int num_zones() const { return cfg_.grid * cfg_.grid; }
  double congestion(int zone) const { return congestion_[static_cast<std::size_t>(zone)]; }
  double parking(int zone) const { return parking_[static_cast<std::size_t>(zone)]; }
  const std::vector<double>& congestion_factors() const { return congestion_; }

  double speed_kmh(int minute_of_week) const;
  int zone_of(const geo::GeoPoint& p) const;
  int region_of(int zone) const;

  // Deterministic in (origin, dest, timestamp).
  double routing_eta(const geo::GeoPoint& o, const geo::GeoPoint& d,
                     std::int64_t timestamp) const;

  // Noiseless conditional mean of the arrival time.
  double oracle_mean_ata(const TripRecord& trip, const TripLatents& z) const;

  TripRecord sample_trip(SplitMix64& rng, std::int64_t timestamp,
                         TripLatents* latents = nullptr) const;

  friend bool operator==(const World& a, const World& b) {
    return a.congestion_ == b.congestion_ && a.parking_ == b.parking_ &&
           a.speed_ == b.speed_;
  }

 private:
  WorldConfig cfg_;
  std::vector<double> congestion_;
  std::vector<double> parking_;
  std::vector<double> speed_;  // per minute of week
};

World generate_world(const WorldConfig& cfg);

// n records with non-decreasing timestamps and request ids 0..n-1.
std::vector<TripRecord> generate_trips(const World& world, std::size_t n, std::uint64_t seed,
                                       std::vector<TripLatents>* latents = nullptr);

// Writes the CSV and, next to it, `<path>.world.json` with the world config.
void generate_dataset(const World& world, std::size_t n, std::uint64_t seed,
                      const std::string& path);

}  // namespace etapost::synth

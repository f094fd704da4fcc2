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

#include "etapost/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "etapost/errors.hpp"

namespace etapost::synth {

namespace {

double bump(double x, double center, double width) {
  const double z = (x - center) / width;
  return std::exp(-0.5 * z * z);
}

// Circular distance on a 24h clock.
double hours_apart(double a, double b) {
  const double d = std::abs(a - b);
  return std::min(d, 24.0 - d);
}

}  // namespace

WorldConfig WorldConfig::null_world(std::uint64_t seed) {
  WorldConfig c;
  c.seed = seed;
  c.congestion_sigma = 0.0;
  c.rides_multiplier = 1.0;
  c.delivery_multiplier = 1.0;
  for (double& o : c.type_offset_s) o = 0.0;
  c.parking_scale_s = 0.0;
  c.noise_sigma = 0.0;
  return c;
}

void WorldConfig::check() const {
  if (grid < 2) throw ConfigError("world grid must be at least 2x2");
  if (!(box_degrees > 0.0)) throw ConfigError("world box must have positive size");
  if (lat_min < -90.0 || lat_min + box_degrees > 90.0 || lng_min < -180.0 ||
      lng_min + box_degrees > 180.0) {
    throw ConfigError("world box leaves the valid coordinate range");
  }
  if (congestion_sigma < 0.0 || noise_sigma < 0.0 || parking_sigma < 0.0) {
    throw ConfigError("world sigmas must be >= 0");
  }
  if (!(rides_multiplier > 0.0) || !(delivery_multiplier > 0.0)) {
    throw ConfigError("type multipliers must be > 0");
  }
  for (double o : type_offset_s) {
    if (o < 0.0) throw ConfigError("type offsets must be >= 0");
  }
  if (parking_scale_s < 0.0) throw ConfigError("parking scale must be >= 0");
  if (!(delivery_fraction >= 0.0 && delivery_fraction <= 1.0)) {
    throw ConfigError("delivery fraction must be in [0, 1]");
  }
  if (dest_radius_zones < 0) throw ConfigError("destination radius must be >= 0");
  if (!(base_speed_kmh > 0.0) || !(min_speed_kmh > 0.0)) {
    throw ConfigError("speeds must be > 0");
  }
  if (!(span_days > 0.0)) throw ConfigError("timeline span must be > 0");
  if (regions_per_side < 1 || regions_per_side > grid) {
    throw ConfigError("regions_per_side must be in [1, grid]");
  }
}

void to_json(nlohmann::json& j, const WorldConfig& c) {
  j = {{"seed", c.seed},
       {"grid", c.grid},
       {"lat_min", c.lat_min},
       {"lng_min", c.lng_min},
       {"box_degrees", c.box_degrees},
       {"congestion_sigma", c.congestion_sigma},
       {"rides_multiplier", c.rides_multiplier},
       {"delivery_multiplier", c.delivery_multiplier},
       {"type_offset_s", std::vector<double>(std::begin(c.type_offset_s), std::end(c.type_offset_s))},
       {"parking_scale_s", c.parking_scale_s},
       {"parking_sigma", c.parking_sigma},
       {"noise_sigma", c.noise_sigma},
       {"delivery_fraction", c.delivery_fraction},
       {"dest_radius_zones", c.dest_radius_zones},
       {"min_distance_km", c.min_distance_km},
       {"base_speed_kmh", c.base_speed_kmh},
       {"night_bonus_kmh", c.night_bonus_kmh},
       {"am_rush_dip_kmh", c.am_rush_dip_kmh},
       {"pm_rush_dip_kmh", c.pm_rush_dip_kmh},
       {"weekend_midday_dip_kmh", c.weekend_midday_dip_kmh},
       {"min_speed_kmh", c.min_speed_kmh},
       {"start_timestamp", c.start_timestamp},
       {"span_days", c.span_days},
       {"regions_per_side", c.regions_per_side},
       {"rng", "splitmix64"}};
}

void from_json(const nlohmann::json& j, WorldConfig& c) {
  // Missing keys keep their defaults so partial overrides are allowed.
  c = WorldConfig{};
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("seed", c.seed);
  get("grid", c.grid);
  get("lat_min", c.lat_min);
  get("lng_min", c.lng_min);
  get("box_degrees", c.box_degrees);
  get("congestion_sigma", c.congestion_sigma);
  get("rides_multiplier", c.rides_multiplier);
  get("delivery_multiplier", c.delivery_multiplier);
  if (j.contains("type_offset_s")) {
    const auto v = j.at("type_offset_s").get<std::vector<double>>();
    if (v.size() != kNumRequestTypes) throw ConfigError("type_offset_s needs 4 entries");
    std::copy(v.begin(), v.end(), c.type_offset_s);
  }
  get("parking_scale_s", c.parking_scale_s);
  get("parking_sigma", c.parking_sigma);
  get("noise_sigma", c.noise_sigma);
  get("delivery_fraction", c.delivery_fraction);
  get("dest_radius_zones", c.dest_radius_zones);
  get("min_distance_km", c.min_distance_km);
  get("base_speed_kmh", c.base_speed_kmh);
  get("night_bonus_kmh", c.night_bonus_kmh);
  get("am_rush_dip_kmh", c.am_rush_dip_kmh);
  get("pm_rush_dip_kmh", c.pm_rush_dip_kmh);
  get("weekend_midday_dip_kmh", c.weekend_midday_dip_kmh);
  get("min_speed_kmh", c.min_speed_kmh);
  get("start_timestamp", c.start_timestamp);
  get("span_days", c.span_days);
  get("regions_per_side", c.regions_per_side);
}

World::World(const WorldConfig& cfg) : cfg_(cfg) {
  cfg_.check();
  SplitMix64 rng(cfg_.seed);
  const auto zones = static_cast<std::size_t>(num_zones());
  congestion_.resize(zones);
  parking_.resize(zones);
  for (std::size_t z = 0; z < zones; ++z) congestion_[z] = rng.lognormal(0.0, cfg_.congestion_sigma);
  for (std::size_t z = 0; z < zones; ++z) {
    parking_[z] = cfg_.parking_scale_s * rng.lognormal(0.0, cfg_.parking_sigma);
  }
  speed_.resize(kMinutesPerWeek);
  for (int m = 0; m < kMinutesPerWeek; ++m) {
    const int day = m / 1440;
    const double hour = (m % 1440) / 60.0;
    double s = cfg_.base_speed_kmh;
    s += cfg_.night_bonus_kmh * bump(hours_apart(hour, 3.0), 0.0, 2.0);
    if (day < 5) {
      s -= cfg_.am_rush_dip_kmh * bump(hour, 8.5, 1.0);
      s -= cfg_.pm_rush_dip_kmh * bump(hour, 17.5, 1.25);
    } else {
      s -= cfg_.weekend_midday_dip_kmh * bump(hour, 13.0, 2.5);
    }
    speed_[static_cast<std::size_t>(m)] = std::max(cfg_.min_speed_kmh, s);
  }
}

double World::speed_kmh(int minute) const {
  return speed_.at(static_cast<std::size_t>(minute));
}

int World::zone_of(const geo::GeoPoint& p) const {
  const double side = cfg_.box_degrees / cfg_.grid;
  auto cell = [&](double v, double lo) {
    return std::clamp(static_cast<int>(std::floor((v - lo) / side)), 0, cfg_.grid - 1);
  };
  return cell(p.lat(), cfg_.lat_min) * cfg_.grid + cell(p.lng(), cfg_.lng_min);
}

int World::region_of(int zone) const {
  const int per = (cfg_.grid + cfg_.regions_per_side - 1) / cfg_.regions_per_side;
  const int zy = zone / cfg_.grid, zx = zone % cfg_.grid;
  return (zy / per) * cfg_.regions_per_side + zx / per;
}

double World::routing_eta(const geo::GeoPoint& o, const geo::GeoPoint& d,
                          std::int64_t timestamp) const {
  const double dlat = d.lat() - o.lat();
  const double dlng = d.lng() - o.lng();
  const double km = std::sqrt(dlat * dlat + dlng * dlng) * kKmPerDegree;
  return km / speed_kmh(minute_of_week(timestamp)) * 3600.0;
}

double World::oracle_mean_ata(const TripRecord& trip, const TripLatents& z) const {
  const double noise_mean = std::exp(0.5 * cfg_.noise_sigma * cfg_.noise_sigma);
  return trip.request.re_eta_s * z.congestion * z.type_multiplier * noise_mean + z.offset_s;
}

TripRecord World::sample_trip(SplitMix64& rng, std::int64_t timestamp,
                              TripLatents* latents) const {
  const double side = cfg_.box_degrees / cfg_.grid;
  const int minute = minute_of_week(timestamp);
  const double speed = speed_kmh(minute);
  for (;;) {
    RequestType type;
    if (rng.uniform() < cfg_.delivery_fraction) {
      type = rng.uniform() < 0.5 ? RequestType::kDeliveryPickup : RequestType::kDeliveryDropoff;
    } else {
      type = rng.uniform() < 0.5 ? RequestType::kRidesPickup : RequestType::kRidesDropoff;
    }
    const auto grid = static_cast<std::uint64_t>(cfg_.grid);
    const int oy = static_cast<int>(rng.below(grid));
    const int ox = static_cast<int>(rng.below(grid));
    const auto span = static_cast<std::uint64_t>(2 * cfg_.dest_radius_zones + 1);
    const int dy = std::clamp(oy + static_cast<int>(rng.below(span)) - cfg_.dest_radius_zones, 0,
                              cfg_.grid - 1);
    const int dx = std::clamp(ox + static_cast<int>(rng.below(span)) - cfg_.dest_radius_zones, 0,
                              cfg_.grid - 1);
    const geo::GeoPoint o(cfg_.lat_min + (oy + rng.uniform()) * side,
                          cfg_.lng_min + (ox + rng.uniform()) * side);
    const geo::GeoPoint d(cfg_.lat_min + (dy + rng.uniform()) * side,
                          cfg_.lng_min + (dx + rng.uniform()) * side);
    const double dlat = d.lat() - o.lat(), dlng = d.lng() - o.lng();
    const double km = std::sqrt(dlat * dlat + dlng * dlng) * kKmPerDegree;
    const double eps = rng.lognormal(0.0, cfg_.noise_sigma);
    const double rt_noise = rng.lognormal(0.0, 0.08);
    const double hist_noise = rng.lognormal(0.0, 0.03);
    if (km < cfg_.min_distance_km) continue;

    const int oz = oy * cfg_.grid + ox;
    const int dz = dy * cfg_.grid + dx;
    TripLatents z;
    z.origin_zone = oz;
    z.dest_zone = dz;
    z.congestion = std::sqrt(congestion(oz) * congestion(dz));
    z.type_multiplier = is_delivery(type) ? cfg_.delivery_multiplier : cfg_.rides_multiplier;
    z.offset_s = cfg_.type_offset_s[static_cast<int>(type)] + parking(oz);
    z.noise = eps;

    TripRecord r;
    RawRequest& q = r.request;
    q.timestamp = timestamp;
    q.origin = o;
    q.dest = d;
    q.request_type = type;
    q.region_id = region_of(oz);
    q.distance_m = km * 1000.0;
    q.re_eta_s = routing_eta(o, d, timestamp);
    q.realtime_speed = speed / z.congestion * rt_noise;
    q.historical_speed = speed * hist_noise;
    const double ata = q.re_eta_s * z.congestion * z.type_multiplier * eps + z.offset_s;
    if (!(ata > 0.0) || ata > kMaxTripSeconds) continue;
    r.ata_s = ata;
    if (latents) *latents = z;
    return r;
  }
}

World generate_world(const WorldConfig& cfg) { return World(cfg); }

std::vector<TripRecord> generate_trips(const World& world, std::size_t n, std::uint64_t seed,
                                       std::vector<TripLatents>* latents) {
  if (n < 1) throw ConfigError("dataset size must be >= 1");
  // Offset so that a dataset seed equal to the world seed does not replay
  // the world's own draws.
  SplitMix64 rng(seed ^ 0x6a09e667f3bcc909ULL);
  const WorldConfig& cfg = world.config();
  const double span_s = cfg.span_days * 86400.0;
  const double step = span_s / static_cast<double>(n);
  std::vector<TripRecord> out;
  out.reserve(n);
  if (latents) {
    latents->clear();
    latents->reserve(n);
  }
  for (std::size_t i = 0; i < n; ++i) {
    const double offset = (static_cast<double>(i) + rng.uniform()) * step;
    const std::int64_t ts = cfg.start_timestamp + static_cast<std::int64_t>(std::floor(offset));
    TripLatents z;
    TripRecord r = world.sample_trip(rng, ts, &z);
    r.request_id = static_cast<std::int64_t>(i);
    out.push_back(std::move(r));
    if (latents) latents->push_back(z);
  }
  return out;
}

void generate_dataset(const World& world, std::size_t n, std::uint64_t seed,
                      const std::string& path) {
  const auto rows = generate_trips(world, n, seed);
  write_trip_csv(path, rows);
  nlohmann::json meta = {{"world", world.config()}, {"dataset_seed", seed}, {"n", n}};
  const std::string meta_path = path + ".world.json";
  std::ofstream out(meta_path);
  if (!out) throw IoError("cannot write world config '" + meta_path + "'");
  out << meta.dump(1) << '\n';
  if (!out) throw IoError("write failed for '" + meta_path + "'");
}

}  // namespace etapost::synth

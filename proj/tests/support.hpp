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

// Shared fixtures for the unit tests.

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <unistd.h>

#include "etapost/featurize.hpp"
#include "etapost/model.hpp"
#include "etapost/random.hpp"

namespace etapost::testing {

// A fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("etapost_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::string file(const std::string& name) const { return (path_ / name).string(); }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

// Five hand-made trips with evenly spaced continuous values, so that with
// four bins the edges are the interior grid points.
inline std::vector<TripRecord> fixture_records() {
  std::vector<TripRecord> rows;
  const std::int64_t regions[] = {3, 5, 9, 5, 3};
  for (int i = 0; i < 5; ++i) {
    TripRecord r;
    r.request_id = i;
    r.request.timestamp = 1631491200 + 3600 * i;
    r.request.origin = geo::GeoPoint(37.70 + 0.02 * i, -122.45 + 0.02 * i);
    r.request.dest = geo::GeoPoint(37.80 - 0.02 * i, -122.30 + 0.01 * i);
    r.request.request_type = static_cast<RequestType>(i % kNumRequestTypes);
    r.request.region_id = regions[i];
    r.request.re_eta_s = 600.0 + 300.0 * i;        // edges 900, 1200, 1500
    r.request.distance_m = 4000.0 + 2000.0 * i;    // edges 6000, 8000, 10000
    r.request.realtime_speed = 20.0 + 5.0 * i;     // edges 25, 30, 35
    r.request.historical_speed = 24.0 + 4.0 * i;   // edges 28, 32, 36
    r.ata_s = r.request.re_eta_s + 60.0;
    rows.push_back(r);
  }
  return rows;
}

inline FeatureSchema fixture_schema(std::uint32_t bins_point = 1u << 16,
                                    std::uint32_t bins_pair = 1u << 18) {
  FitOptions fo;
  fo.eta_bins = fo.distance_bins = fo.speed_bins = 4;
  fo.geo.bins_point = bins_point;
  fo.geo.bins_pair = bins_pair;
  const auto rows = fixture_records();
  return fit_schema(rows, fo);
}

inline geo::GeoPoint random_point(SplitMix64& rng, double lat_lo = -90.0, double lat_hi = 90.0,
                                  double lng_lo = -180.0, double lng_hi = 180.0) {
  return geo::GeoPoint(rng.uniform(lat_lo, lat_hi), rng.uniform(lng_lo, lng_hi));
}

// A random valid request around the default synthetic city.
inline RawRequest random_request(SplitMix64& rng) {
  RawRequest r;
  r.timestamp = 1631491200 + static_cast<std::int64_t>(rng.below(21 * 86400));
  r.origin = random_point(rng, 37.2, 38.2, -122.6, -121.6);
  r.dest = random_point(rng, 37.2, 38.2, -122.6, -121.6);
  r.request_type = static_cast<RequestType>(rng.below(kNumRequestTypes));
  r.region_id = static_cast<std::int64_t>(rng.below(20));
  r.realtime_speed = rng.uniform(0.0, 80.0);
  r.historical_speed = rng.uniform(0.0, 80.0);
  r.distance_m = rng.uniform(0.0, 60000.0);
  r.re_eta_s = rng.uniform(1.0, 7000.0);
  return r;
}

// Small model layout for tests that allocate parameters.
inline ModelConfig small_model(const FeatureSchema& schema, int hidden = 16) {
  ModelConfig mc;
  mc.hidden_size = hidden;
  return config_for(schema, mc);
}

}  // namespace etapost::testing

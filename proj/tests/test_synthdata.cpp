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

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "etapost/errors.hpp"
#include "etapost/synthdata.hpp"
#include "support.hpp"

namespace etapost::synth {
namespace {

using etapost::testing::TempDir;

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

TEST(World, Deterministic) {
  WorldConfig c;
  EXPECT_TRUE(World(c) == World(c));
  EXPECT_TRUE(generate_world(c) == World(c));
  WorldConfig d = c;
  d.seed = 43;
  EXPECT_FALSE(World(c) == World(d));
}

TEST(World, FactorsArePositive) {
  const World w{WorldConfig{}};
  for (int z = 0; z < w.num_zones(); ++z) {
    ASSERT_GT(w.congestion(z), 0.0);
    ASSERT_GT(w.parking(z), 0.0);
  }
  for (int m = 0; m < kMinutesPerWeek; ++m) ASSERT_GE(w.speed_kmh(m), WorldConfig{}.min_speed_kmh);
}

TEST(World, ZoneFactorMeanMatchesLognormalMoment) {
  const WorldConfig c;
  const World w(c);
  const auto& f = w.congestion_factors();
  const double n = static_cast<double>(f.size());
  const double mean = std::accumulate(f.begin(), f.end(), 0.0) / n;
  double var = 0.0;
  for (double x : f) var += (x - mean) * (x - mean);
  const double se = std::sqrt(var / (n - 1.0) / n);
  const double expected = std::exp(0.5 * c.congestion_sigma * c.congestion_sigma);
  EXPECT_NEAR(expected, 1.0317, 1e-4);
  EXPECT_LT(std::abs(mean - expected), 3.0 * se);
}

TEST(World, ZeroSigmaMakesZonesIdentical) {
  WorldConfig c;
  c.congestion_sigma = 0.0;
  const World w(c);
  for (double f : w.congestion_factors()) ASSERT_EQ(f, 1.0);
}

TEST(World, SpeedProfileShape) {
  const World w{WorldConfig{}};
  // Monday 08:30 is rush hour, Monday 03:00 is night.
  EXPECT_LT(w.speed_kmh(8 * 60 + 30), w.speed_kmh(3 * 60));
  EXPECT_LT(w.speed_kmh(17 * 60 + 30), w.speed_kmh(12 * 60));
  // Saturday has no morning rush.
  EXPECT_GT(w.speed_kmh(5 * 1440 + 8 * 60 + 30), w.speed_kmh(8 * 60 + 30));
}

TEST(WorldConfig, Validation) {
  WorldConfig c;
  c.grid = 1;
  EXPECT_THROW(World{c}, ConfigError);
  c = WorldConfig{};
  c.noise_sigma = -0.1;
  EXPECT_THROW(c.check(), ConfigError);
  c = WorldConfig{};
  c.lat_min = 89.5;
  EXPECT_THROW(c.check(), ConfigError);
  c = WorldConfig{};
  c.type_offset_s[2] = -1.0;
  EXPECT_THROW(c.check(), ConfigError);
}

TEST(WorldConfig, JsonRoundTripAndPartialOverride) {
  WorldConfig c;
  c.seed = 9;
  c.noise_sigma = 0.3;
  c.type_offset_s[1] = 11.0;
  const nlohmann::json j = c;
  const WorldConfig back = j.get<WorldConfig>();
  EXPECT_EQ(nlohmann::json(back), j);
  const WorldConfig partial = nlohmann::json{{"grid", 8}}.get<WorldConfig>();
  EXPECT_EQ(partial.grid, 8);
  EXPECT_EQ(partial.seed, WorldConfig{}.seed);
  EXPECT_EQ(partial.noise_sigma, WorldConfig{}.noise_sigma);
}

TEST(Trips, NullWorldIsPerfectRoutingEngine) {
  const World w(WorldConfig::null_world());
  const auto rows = generate_trips(w, 5000, 3);
  for (const auto& r : rows) ASSERT_EQ(*r.ata_s, r.request.re_eta_s);
}

TEST(Trips, Invariants) {
  const World w{WorldConfig{}};
  std::vector<TripLatents> lat;
  const auto rows = generate_trips(w, 20000, 5, &lat);
  ASSERT_EQ(rows.size(), 20000u);
  ASSERT_EQ(lat.size(), rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    ASSERT_EQ(r.request_id, static_cast<std::int64_t>(i));
    if (i > 0) ASSERT_LE(rows[i - 1].request.timestamp, r.request.timestamp);
    ASSERT_TRUE(r.ata_s.has_value());
    ASSERT_GT(*r.ata_s, 0.0);
    ASSERT_LE(*r.ata_s, kMaxTripSeconds);
    ASSERT_NO_THROW(validate(r.request));
    ASSERT_EQ(w.routing_eta(r.request.origin, r.request.dest, r.request.timestamp), r.request.re_eta_s);
    ASSERT_EQ(w.zone_of(r.request.origin), lat[i].origin_zone);
    ASSERT_EQ(w.region_of(lat[i].origin_zone), r.request.region_id);
    ASSERT_GT(lat[i].congestion, 0.0);
    ASSERT_GT(lat[i].noise, 0.0);
  }
}

TEST(Trips, DeterministicPerSeed) {
  const World w{WorldConfig{}};
  const auto a = generate_trips(w, 500, 17), b = generate_trips(w, 500, 17), c = generate_trips(w, 500, 18);
  for (std::size_t i = 0; i < a.size(); ++i) ASSERT_EQ(format_csv_row(a[i]), format_csv_row(b[i]));
  EXPECT_NE(format_csv_row(a[10]), format_csv_row(c[10]));
}

std::vector<double> residuals_of(const std::vector<TripRecord>& rows, RequestType t, std::size_t n) {
  std::vector<double> out;
  for (const auto& r : rows) {
    if (r.request.request_type == t && out.size() < n) out.push_back(*r.ata_s - r.request.re_eta_s);
  }
  return out;
}

double ks_statistic(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double x = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= x) ++i;
    while (j < b.size() && b[j] <= x) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / a.size() - static_cast<double>(j) / b.size()));
  }
  return d;
}

TEST(Trips, TypeResidualDistributionsDiffer) {
  const World w{WorldConfig{}};
  // Deliveries are 30% split over two types; 80k trips give > 10^4 of each.
  const auto rows = generate_trips(w, 80000, 23);
  const std::size_t n = 10000;
  std::vector<std::vector<double>> res;
  for (int t = 0; t < kNumRequestTypes; ++t) {
    res.push_back(residuals_of(rows, static_cast<RequestType>(t), n));
    ASSERT_EQ(res.back().size(), n);
  }
  // Two-sample critical value at the 0.999 level: c(alpha) sqrt((n + m) / nm).
  const double crit = 1.9495 * std::sqrt(2.0 / static_cast<double>(n));
  for (int a = 0; a < kNumRequestTypes; ++a) {
    for (int b = a + 1; b < kNumRequestTypes; ++b) {
      EXPECT_GT(ks_statistic(res[a], res[b]), crit) << a << " vs " << b;
    }
  }
  auto mean = [](const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / v.size(); };
  EXPECT_GT(mean(res[2]), mean(res[0]));
  EXPECT_GT(mean(res[3]), mean(res[1]));
}

TEST(Trips, KsStatisticSanity) {
  EXPECT_EQ(ks_statistic({1, 2, 3}, {1, 2, 3}), 0.0);
  EXPECT_EQ(ks_statistic({1, 2}, {3, 4}), 1.0);
  EXPECT_DOUBLE_EQ(ks_statistic({1, 3}, {2, 4}), 0.5);
}

TEST(Trips, ResidualsAreRightSkewed) {
  const World w{WorldConfig{}};
  const auto rows = generate_trips(w, 20000, 29);
  std::vector<double> r;
  for (const auto& t : rows) r.push_back(*t.ata_s - t.request.re_eta_s);
  const double n = static_cast<double>(r.size());
  const double m = std::accumulate(r.begin(), r.end(), 0.0) / n;
  double m2 = 0.0, m3 = 0.0;
  for (double x : r) {
    m2 += (x - m) * (x - m);
    m3 += (x - m) * (x - m) * (x - m);
  }
  m2 /= n;
  m3 /= n;
  EXPECT_GT(m, 0.0);
  EXPECT_GT(m3 / std::pow(m2, 1.5), 0.5);
}

TEST(Trips, OracleBeatsRoutingEngine) {
  const World w{WorldConfig{}};
  std::vector<TripLatents> lat;
  const auto rows = generate_trips(w, 100000, 31, &lat);
  double base = 0.0, oracle = 0.0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const double y = *rows[i].ata_s;
    base += std::abs(y - rows[i].request.re_eta_s);
    oracle += std::abs(y - w.oracle_mean_ata(rows[i], lat[i]));
  }
  EXPECT_GE(base / oracle, 8.0);
}

TEST(Dataset, FileLayoutAndDeterminism) {
  TempDir dir;
  const World w{WorldConfig{}};
  generate_dataset(w, 10, 42, dir.file("a.csv"));
  generate_dataset(w, 10, 42, dir.file("b.csv"));
  const std::string a = slurp(dir.file("a.csv"));
  EXPECT_EQ(a, slurp(dir.file("b.csv")));
  std::istringstream in(a);
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(in, line)) lines.push_back(line);
  ASSERT_EQ(lines.size(), 11u);
  EXPECT_EQ(lines[0], kCsvHeader);
  const auto rows = read_trip_csv(dir.file("a.csv"));
  ASSERT_EQ(rows.size(), 10u);
  for (std::size_t i = 1; i < rows.size(); ++i) {
    EXPECT_LE(rows[i - 1].request.timestamp, rows[i].request.timestamp);
  }
  const auto meta = nlohmann::json::parse(slurp(dir.file("a.csv.world.json")));
  EXPECT_EQ(meta.at("dataset_seed"), 42);
  EXPECT_EQ(meta.at("n"), 10);
  EXPECT_EQ(meta.at("world").get<WorldConfig>().seed, w.config().seed);
}

}  // namespace
}  // namespace etapost::synth

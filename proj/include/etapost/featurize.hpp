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

// Discretization of raw ETA requests into a fixed-length sequence of
// embedding-table indexes.
//
// Every feature becomes one token. Continuous features are bucketized with
// quantile edges fitted on a sample, categorical features go through a
// vocabulary with a reserved unknown slot, and locations become geohash
// tokens that each carry two hash bins. The schema fixes the token order
// and the table each token reads from, so the sequence length is the same
// for every request.

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "etapost/geocode.hpp"

namespace etapost {

inline constexpr int kSchemaVersion = 1;
inline constexpr int kMinutesPerWeek = 10080;

enum class RequestType : int {
  kRidesPickup = 0,
  kRidesDropoff = 1,
  kDeliveryPickup = 2,
  kDeliveryDropoff = 3,
};
inline constexpr int kNumRequestTypes = 4;

std::string_view to_string(RequestType t);
// Throws ValidationError on unknown names.
RequestType parse_request_type(std::string_view name);
inline bool is_delivery(RequestType t) {
  return t == RequestType::kDeliveryPickup ||
         t == RequestType::kDeliveryDropoff;
}

struct RawRequest {
  std::int64_t timestamp = 0;  // unix seconds, UTC
  geo::GeoPoint origin{0.0, 0.0};
  geo::GeoPoint dest{0.0, 0.0};
  RequestType request_type = RequestType::kRidesPickup;
  std::int64_t region_id = 0;
  double realtime_speed = 0.0;    // km/h
  double historical_speed = 0.0;  // km/h
  double distance_m = 0.0;
  double re_eta_s = 1.0;
};

// Throws ValidationError naming every offending field.
void validate(const RawRequest& r);

// Flat JSON object with the CSV column names (minus request_id and ata_s).
nlohmann::json request_to_json(const RawRequest& r);
// Throws ValidationError naming the first missing or malformed field, then
// validates the request.
RawRequest request_from_json(const nlohmann::json& j);

struct TripRecord {
  std::int64_t request_id = 0;
  RawRequest request;
  std::optional<double> ata_s;
};

// Monday = 0 (1970-01-01 was a Thursday).
int day_of_week(std::int64_t unix_seconds);
int minute_of_week(std::int64_t unix_seconds);

// --- Quantile bucketizing -------------------------------------------------

// Interior edges at the k/v quantiles (k = 1..v-1) with linear interpolation
// between order statistics, then deduplicated. Throws ValidationError for an
// empty sample and ConfigError for v < 2.
std::vector<double> fit_quantile_bins(std::span<const double> values, int v);

// Number of edges strictly less than x.
std::uint32_t bucketize(double x, std::span<const double> edges);

// --- Schema -----------------------------------------------------------------

struct ContinuousSpec {
  std::string name;
  std::vector<double> edges;
  int num_bins = 256;  // requested v; table size is edges.size() + 1

  std::uint32_t table_size() const {
    return static_cast<std::uint32_t>(edges.size() + 1);
  }
};

// Either a contiguous identity range [0, range_size) or an explicit
// value -> index map. The unknown slot is the last index.
struct CategoricalSpec {
  std::string name;
  std::optional<std::uint32_t> range_size;
  std::map<std::int64_t, std::uint32_t> vocab;

  std::uint32_t vocab_size() const;
  std::uint32_t unknown_index() const { return vocab_size(); }
  std::uint32_t table_size() const { return vocab_size() + 1; }
  std::uint32_t encode(std::int64_t value) const;
};

struct GeoConfig {
  std::vector<int> resolutions{4, 5, 6, 7};
  std::uint32_t bins_point = 1u << 16;
  std::uint32_t bins_pair = 1u << 18;
  geo::HashSeeds seeds;
};

struct TableSpec {
  std::string name;
  std::uint32_t size = 0;
};

enum class TokenKind { kCategorical, kContinuous, kGeoOrigin, kGeoDest, kGeoPair };

struct TokenSpec {
  std::string name;
  TokenKind kind = TokenKind::kCategorical;
  std::string source;  // feature name for categorical/continuous tokens
  int resolution = 0;  // geohash tokens only
  std::uint32_t table = 0;

  bool hashed() const {
    return kind == TokenKind::kGeoOrigin || kind == TokenKind::kGeoDest ||
           kind == TokenKind::kGeoPair;
  }
};

struct FeatureSchema {
  int version = kSchemaVersion;
  std::vector<ContinuousSpec> continuous;
  std::vector<CategoricalSpec> categorical;
  GeoConfig geo;
  std::vector<TableSpec> tables;
  std::vector<TokenSpec> tokens;
  std::vector<RequestType> request_types;

  std::size_t num_tokens() const { return tokens.size(); }
  std::size_t num_types() const { return request_types.size(); }

  const ContinuousSpec& continuous_spec(std::string_view name) const;
  const CategoricalSpec& categorical_spec(std::string_view name) const;
  // Index into request_types; throws ValidationError if not enumerated.
  int type_id(RequestType t) const;

  // Throws SchemaError when an invariant is broken.
  void check() const;

  // Hex digest of the canonical JSON form.
  std::string hash() const;
};

void to_json(nlohmann::json& j, const FeatureSchema& s);
void from_json(const nlohmann::json& j, FeatureSchema& s);

FeatureSchema load_schema(const std::string& path);
void save_schema(const FeatureSchema& s, const std::string& path);

struct FitOptions {
  int eta_bins = 256;
  int distance_bins = 256;
  int speed_bins = 256;
  GeoConfig geo;
};

// Builds the default layout: minute-of-week, day-of-week, geohash tokens
// (origin, dest, od per resolution), request type, re_eta, distance,
// realtime speed, historical speed, region.
FeatureSchema fit_schema(std::span<const TripRecord> records,
                         const FitOptions& opts = {});

// Name -> index lookup through the schema's categorical spec. Throws
// SchemaError for an unknown feature name.
std::uint32_t encode_categorical(const FeatureSchema& schema,
                                 std::string_view name, std::int64_t value);

// --- Featurization ----------------------------------------------------------

inline constexpr std::uint32_t kNoBin = 0xFFFFFFFFu;

// `alt` is the second hash bin for geohash tokens and kNoBin otherwise.
struct TokenSlot {
  std::uint32_t bin = 0;
  std::uint32_t alt = kNoBin;

  friend bool operator==(const TokenSlot&, const TokenSlot&) = default;
};

struct TokenIndexes {
  std::vector<TokenSlot> slots;
  int type_id = 0;
  double re_eta = 0.0;

  friend bool operator==(const TokenIndexes&, const TokenIndexes&) = default;
};

// Writes schema.num_tokens() slots into `out` and returns the type id.
// Validates the request first.
int featurize_into(const RawRequest& raw, const FeatureSchema& schema,
                   std::span<TokenSlot> out);

TokenIndexes featurize(const RawRequest& raw, const FeatureSchema& schema);

// --- Dataset files ----------------------------------------------------------

inline constexpr std::string_view kCsvHeader =
    "request_id,timestamp,origin_lat,origin_lng,dest_lat,dest_lng,"
    "request_type,region_id,realtime_speed,historical_speed,distance_m,"
    "re_eta_s,ata_s";

std::vector<TripRecord> read_trip_csv(const std::string& path);
void write_trip_csv(const std::string& path, std::span<const TripRecord> rows);
std::string format_csv_row(const TripRecord& row);

// Shortest decimal text that round-trips the double.
std::string format_double(double v);

}  // namespace etapost

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

// Geohash encoding and multiple feature hashing of locations.
//
// A location is mapped to a base32 geohash string of resolution u, and each
// string is mapped to two embedding bins by two MurmurHash3 instances with
// distinct seeds. Origin, destination and origin-destination keys are hashed
// at several resolutions.

#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace etapost::geo {

inline constexpr std::string_view kAlphabet = "0123456789bcdefghjkmnpqrstuvwxyz";
inline constexpr int kMaxResolution = 12;
inline constexpr std::uint32_t kSeed1 = 0x9747b28cu;
inline constexpr std::uint32_t kSeed2 = 0x5bd1e995u;
inline constexpr char kPairSeparator = '|';

class GeoPoint {
 public:
  // Throws ValidationError when lat is outside [-90, 90] or lng outside
  // [-180, 180] (NaN included).
  GeoPoint(double lat, double lng);

  double lat() const { return lat_; }
  double lng() const { return lng_; }

  friend bool operator==(const GeoPoint&, const GeoPoint&) = default;

 private:
  double lat_;
  double lng_;
};

struct UnitCoordinate {
  double lat;
  double lng;
};

class GeohashString {
 public:
  // Validates alphabet membership and 1 <= length <= 12.
  explicit GeohashString(std::string chars);

  const std::string& str() const { return chars_; }
  int resolution() const { return static_cast<int>(chars_.size()); }

  friend bool operator==(const GeohashString&, const GeohashString&) = default;

 private:
  std::string chars_;
};

struct HashBinPair {
  std::uint32_t bin1 = 0;
  std::uint32_t bin2 = 0;
  std::uint32_t num_bins = 0;

  friend bool operator==(const HashBinPair&, const HashBinPair&) = default;
};

struct GeoTriple {
  int resolution = 0;
  HashBinPair origin;
  HashBinPair destination;
  HashBinPair od_pair;
};

struct GeoIndexSet {
  std::vector<GeoTriple> entries;  // one per configured resolution, in order

  std::size_t pair_count() const { return 3 * entries.size(); }
};

struct HashSeeds {
  std::uint32_t seed1 = kSeed1;
  std::uint32_t seed2 = kSeed2;
};

// MurmurHash3_x86_32.
std::uint32_t murmur3_32(std::span<const std::uint8_t> key, std::uint32_t seed);
std::uint32_t murmur3_32(std::string_view key, std::uint32_t seed);

UnitCoordinate normalize_coordinate(const GeoPoint& p);

// floor(f * 2^32), saturating at 2^32 - 1.
std::uint32_t quantize32(double f);

// Bit i of `a` lands at bit 2i+1, bit i of `b` at bit 2i.
std::uint64_t interleave_bits(std::uint32_t a, std::uint32_t b);

GeohashString encode_geohash(const GeoPoint& p, int resolution);

HashBinPair hash_pair(std::string_view key, std::uint32_t num_bins,
                      const HashSeeds& seeds = {});

std::string od_key(const GeohashString& origin, const GeohashString& dest);

GeoTriple geo_feature_indexes(const GeoPoint& origin, const GeoPoint& dest,
                              int resolution, std::uint32_t bins_point,
                              std::uint32_t bins_pair,
                              const HashSeeds& seeds = {});

GeoIndexSet multi_resolution_indexes(const GeoPoint& origin,
                                     const GeoPoint& dest,
                                     std::span<const int> resolutions,
                                     std::uint32_t bins_point,
                                     std::uint32_t bins_pair,
                                     const HashSeeds& seeds = {});

}  // namespace etapost::geo

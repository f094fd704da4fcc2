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

#include "etapost/geocode.hpp"

#include <cmath>
#include <cstring>

#include "etapost/errors.hpp"

namespace etapost::geo {

namespace {

inline std::uint32_t rotl32(std::uint32_t x, int r) {
  return (x << r) | (x >> (32 - r));
}

inline std::uint32_t fmix32(std::uint32_t h) {
  h ^= h >> 16;
  h *= 0x85ebca6bu;
  h ^= h >> 13;
  h *= 0xc2b2ae35u;
  h ^= h >> 16;
  return h;
}

void check_resolution(int u) {
  if (u < 1 || u > kMaxResolution) {
    throw ConfigError("geohash resolution must be in [1, 12], got " +
                      std::to_string(u));
  }
}

}  // namespace

GeoPoint::GeoPoint(double lat, double lng) : lat_(lat), lng_(lng) {
  if (!(lat >= -90.0 && lat <= 90.0)) {
    throw ValidationError("latitude out of range [-90, 90]: " +
                          std::to_string(lat));
  }
  if (!(lng >= -180.0 && lng <= 180.0)) {
    throw ValidationError("longitude out of range [-180, 180]: " +
                          std::to_string(lng));
  }
}

GeohashString::GeohashString(std::string chars) : chars_(std::move(chars)) {
  check_resolution(static_cast<int>(chars_.size()));
  for (char c : chars_) {
    if (kAlphabet.find(c) == std::string_view::npos) {
      throw ValidationError(std::string("invalid geohash character '") + c +
                            "'");
    }
  }
}

std::uint32_t murmur3_32(std::span<const std::uint8_t> key,
                         std::uint32_t seed) {
  constexpr std::uint32_t c1 = 0xcc9e2d51u;
  constexpr std::uint32_t c2 = 0x1b873593u;
  const std::size_t len = key.size();
  const std::size_t nblocks = len / 4;
  std::uint32_t h1 = seed;

  for (std::size_t i = 0; i < nblocks; ++i) {
    const std::uint8_t* p = key.data() + 4 * i;
    // Little-endian block read, independent of host byte order.
    std::uint32_t k1 = std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) |
                       (std::uint32_t(p[2]) << 16) |
                       (std::uint32_t(p[3]) << 24);
    k1 *= c1;
    k1 = rotl32(k1, 15);
    k1 *= c2;
    h1 ^= k1;
    h1 = rotl32(h1, 13);
    h1 = h1 * 5 + 0xe6546b64u;
  }

  const std::uint8_t* tail = key.data() + 4 * nblocks;
  std::uint32_t k1 = 0;
  switch (len & 3) {
    case 3:
      k1 ^= std::uint32_t(tail[2]) << 16;
      [[fallthrough]];
    case 2:
      k1 ^= std::uint32_t(tail[1]) << 8;
      [[fallthrough]];
    case 1:
      k1 ^= tail[0];
      k1 *= c1;
      k1 = rotl32(k1, 15);
      k1 *= c2;
      h1 ^= k1;
  }

  h1 ^= static_cast<std::uint32_t>(len);
  return fmix32(h1);
}

std::uint32_t murmur3_32(std::string_view key, std::uint32_t seed) {
  return murmur3_32(
      std::span(reinterpret_cast<const std::uint8_t*>(key.data()), key.size()),
      seed);
}

UnitCoordinate normalize_coordinate(const GeoPoint& p) {
  return {(p.lat() + 90.0) / 180.0, (p.lng() + 180.0) / 360.0};
}

std::uint32_t quantize32(double f) {
  if (!(f > 0.0)) return 0;
  // ldexp is exact, so floor sees the true product.
  const double scaled = std::floor(std::ldexp(f, 32));
  if (scaled >= 4294967295.0) return 0xFFFFFFFFu;
  return static_cast<std::uint32_t>(scaled);
}

std::uint64_t interleave_bits(std::uint32_t a, std::uint32_t b) {
  auto spread = [](std::uint64_t x) {
    x = (x | (x << 16)) & 0x0000FFFF0000FFFFull;
    x = (x | (x << 8)) & 0x00FF00FF00FF00FFull;
    x = (x | (x << 4)) & 0x0F0F0F0F0F0F0F0Full;
    x = (x | (x << 2)) & 0x3333333333333333ull;
    x = (x | (x << 1)) & 0x5555555555555555ull;
    return x;
  };
  return (spread(a) << 1) | spread(b);
}

GeohashString encode_geohash(const GeoPoint& p, int resolution) {
  check_resolution(resolution);
  const UnitCoordinate f = normalize_coordinate(p);
  const std::uint64_t bits =
      interleave_bits(quantize32(f.lat), quantize32(f.lng));
  std::string out(static_cast<std::size_t>(resolution), '0');
  for (int k = 0; k < resolution; ++k) {
    const int shift = 64 - 5 * (k + 1);
    out[static_cast<std::size_t>(k)] = kAlphabet[(bits >> shift) & 31u];
  }
  return GeohashString(std::move(out));
}

HashBinPair hash_pair(std::string_view key, std::uint32_t num_bins,
                      const HashSeeds& seeds) {
  if (num_bins < 2) {
    throw ConfigError("hash bin count must be >= 2, got " +
                      std::to_string(num_bins));
  }
  return {murmur3_32(key, seeds.seed1) % num_bins,
          murmur3_32(key, seeds.seed2) % num_bins, num_bins};
}

std::string od_key(const GeohashString& origin, const GeohashString& dest) {
  std::string key;
  key.reserve(origin.str().size() + dest.str().size() + 1);
  key += origin.str();
  key += kPairSeparator;
  key += dest.str();
  return key;
}

GeoTriple geo_feature_indexes(const GeoPoint& origin, const GeoPoint& dest,
                              int resolution, std::uint32_t bins_point,
                              std::uint32_t bins_pair,
                              const HashSeeds& seeds) {
  const GeohashString go = encode_geohash(origin, resolution);
  const GeohashString gd = encode_geohash(dest, resolution);
  return {resolution, hash_pair(go.str(), bins_point, seeds),
          hash_pair(gd.str(), bins_point, seeds),
          hash_pair(od_key(go, gd), bins_pair, seeds)};
}

GeoIndexSet multi_resolution_indexes(const GeoPoint& origin,
                                     const GeoPoint& dest,
                                     std::span<const int> resolutions,
                                     std::uint32_t bins_point,
                                     std::uint32_t bins_pair,
                                     const HashSeeds& seeds) {
  if (resolutions.empty()) {
    throw ConfigError("at least one geohash resolution is required");
  }
  GeoIndexSet out;
  out.entries.reserve(resolutions.size());
  for (int u : resolutions) {
    out.entries.push_back(
        geo_feature_indexes(origin, dest, u, bins_point, bins_pair, seeds));
  }
  return out;
}

}  // namespace etapost::geo

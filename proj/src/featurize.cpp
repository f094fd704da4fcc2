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

#include "etapost/featurize.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "etapost/errors.hpp"

namespace etapost {

namespace {

constexpr std::string_view kTypeNames[kNumRequestTypes] = {
    "rides_pickup", "rides_dropoff", "delivery_pickup", "delivery_dropoff"};

std::int64_t floor_div(std::int64_t a, std::int64_t b) {
  std::int64_t q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}

std::int64_t categorical_value(const RawRequest& r, std::string_view name) {
  if (name == "minute_of_week") return minute_of_week(r.timestamp);
  if (name == "day_of_week") return day_of_week(r.timestamp);
  if (name == "request_type") return static_cast<int>(r.request_type);
  if (name == "region_id") return r.region_id;
  throw SchemaError("unknown categorical feature '" + std::string(name) + "'");
}

double continuous_value(const RawRequest& r, std::string_view name) {
  if (name == "re_eta_s") return r.re_eta_s;
  if (name == "distance_m") return r.distance_m;
  if (name == "realtime_speed") return r.realtime_speed;
  if (name == "historical_speed") return r.historical_speed;
  throw SchemaError("unknown continuous feature '" + std::string(name) + "'");
}

std::string_view kind_name(TokenKind k) {
  switch (k) {
    case TokenKind::kCategorical: return "categorical";
    case TokenKind::kContinuous: return "continuous";
    case TokenKind::kGeoOrigin: return "geo_origin";
    case TokenKind::kGeoDest: return "geo_dest";
    case TokenKind::kGeoPair: return "geo_pair";
  }
  return "?";
}

TokenKind parse_kind(std::string_view s) {
  for (TokenKind k : {TokenKind::kCategorical, TokenKind::kContinuous,
                      TokenKind::kGeoOrigin, TokenKind::kGeoDest,
                      TokenKind::kGeoPair}) {
    if (kind_name(k) == s) return k;
  }
  throw SchemaError("unknown token kind '" + std::string(s) + "'");
}

}  // namespace

std::string_view to_string(RequestType t) {
  return kTypeNames[static_cast<int>(t)];
}

RequestType parse_request_type(std::string_view name) {
  for (int i = 0; i < kNumRequestTypes; ++i) {
    if (kTypeNames[i] == name) return static_cast<RequestType>(i);
  }
  throw ValidationError("request_type: unknown value '" + std::string(name) +
                        "'");
}

void validate(const RawRequest& r) {
  std::vector<std::string> bad;
  if (!(r.re_eta_s > 0.0) || !std::isfinite(r.re_eta_s)) bad.push_back("re_eta_s");
  if (!(r.distance_m >= 0.0) || !std::isfinite(r.distance_m)) bad.push_back("distance_m");
  if (!(r.realtime_speed >= 0.0) || !std::isfinite(r.realtime_speed)) bad.push_back("realtime_speed");
  if (!(r.historical_speed >= 0.0) || !std::isfinite(r.historical_speed)) bad.push_back("historical_speed");
  const int t = static_cast<int>(r.request_type);
  if (t < 0 || t >= kNumRequestTypes) bad.push_back("request_type");
  if (bad.empty()) return;
  std::string msg = "invalid request fields:";
  for (const auto& f : bad) msg += " " + f;
  throw ValidationError(msg);
}

nlohmann::json request_to_json(const RawRequest& r) {
  return {{"timestamp", r.timestamp},
          {"origin_lat", r.origin.lat()},
          {"origin_lng", r.origin.lng()},
          {"dest_lat", r.dest.lat()},
          {"dest_lng", r.dest.lng()},
          {"request_type", std::string(to_string(r.request_type))},
          {"region_id", r.region_id},
          {"realtime_speed", r.realtime_speed},
          {"historical_speed", r.historical_speed},
          {"distance_m", r.distance_m},
          {"re_eta_s", r.re_eta_s}};
}

namespace {

const nlohmann::json& field(const nlohmann::json& j, const char* name) {
  const auto it = j.find(name);
  if (it == j.end()) throw ValidationError(std::string("missing field '") + name + "'");
  return *it;
}

double number_field(const nlohmann::json& j, const char* name) {
  const auto& v = field(j, name);
  if (!v.is_number()) throw ValidationError(std::string("field '") + name + "' must be a number");
  return v.get<double>();
}

std::int64_t integer_field(const nlohmann::json& j, const char* name) {
  const auto& v = field(j, name);
  if (v.is_number_integer()) return v.get<std::int64_t>();
  throw ValidationError(std::string("field '") + name + "' must be an integer");
}

geo::GeoPoint point_field(const nlohmann::json& j, const char* lat, const char* lng) {
  const double a = number_field(j, lat);
  const double b = number_field(j, lng);
  if (!(a >= -90.0 && a <= 90.0)) {
    throw ValidationError(std::string("field '") + lat + "' out of range [-90, 90]");
  }
  if (!(b >= -180.0 && b <= 180.0)) {
    throw ValidationError(std::string("field '") + lng + "' out of range [-180, 180]");
  }
  return {a, b};
}

}  // namespace

RawRequest request_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ValidationError("request body must be a JSON object");
  RawRequest r;
  r.timestamp = integer_field(j, "timestamp");
  r.origin = point_field(j, "origin_lat", "origin_lng");
  r.dest = point_field(j, "dest_lat", "dest_lng");
  const auto& type = field(j, "request_type");
  if (!type.is_string()) throw ValidationError("field 'request_type' must be a string");
  r.request_type = parse_request_type(type.get<std::string>());
  r.region_id = integer_field(j, "region_id");
  r.realtime_speed = number_field(j, "realtime_speed");
  r.historical_speed = number_field(j, "historical_speed");
  r.distance_m = number_field(j, "distance_m");
  r.re_eta_s = number_field(j, "re_eta_s");
  validate(r);
  return r;
}

int day_of_week(std::int64_t unix_seconds) {
  const std::int64_t days = floor_div(unix_seconds, 86400);
  return static_cast<int>(((days + 3) % 7 + 7) % 7);
}

int minute_of_week(std::int64_t unix_seconds) {
  const std::int64_t minute_of_day =
      floor_div(unix_seconds - floor_div(unix_seconds, 86400) * 86400, 60);
  return day_of_week(unix_seconds) * 1440 + static_cast<int>(minute_of_day);
}

std::vector<double> fit_quantile_bins(std::span<const double> values, int v) {
  if (values.empty()) throw ValidationError("cannot fit quantile bins on an empty sample");
  if (v < 2) throw ConfigError("quantile bin count must be >= 2");
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const double n1 = static_cast<double>(sorted.size() - 1);
  std::vector<double> edges;
  edges.reserve(static_cast<std::size_t>(v - 1));
  for (int k = 1; k < v; ++k) {
    const double h = n1 * static_cast<double>(k) / static_cast<double>(v);
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = h - static_cast<double>(lo);
    const double q = sorted[lo] + frac * (sorted[hi] - sorted[lo]);
    if (edges.empty() || q > edges.back()) edges.push_back(q);
  }
  // A constant sample has every quantile equal to the sample value; that
  // single edge would separate nothing, so it is dropped.
  if (sorted.front() == sorted.back()) edges.clear();
  return edges;
}

std::uint32_t bucketize(double x, std::span<const double> edges) {
  return static_cast<std::uint32_t>(
      std::lower_bound(edges.begin(), edges.end(), x) - edges.begin());
}

std::uint32_t CategoricalSpec::vocab_size() const {
  return range_size ? *range_size : static_cast<std::uint32_t>(vocab.size());
}

std::uint32_t CategoricalSpec::encode(std::int64_t value) const {
  if (range_size) {
    if (value >= 0 && value < static_cast<std::int64_t>(*range_size)) {
      return static_cast<std::uint32_t>(value);
    }
    return unknown_index();
  }
  auto it = vocab.find(value);
  return it == vocab.end() ? unknown_index() : it->second;
}

const ContinuousSpec& FeatureSchema::continuous_spec(std::string_view name) const {
  for (const auto& c : continuous) {
    if (c.name == name) return c;
  }
  throw SchemaError("no continuous feature '" + std::string(name) + "'");
}

const CategoricalSpec& FeatureSchema::categorical_spec(std::string_view name) const {
  for (const auto& c : categorical) {
    if (c.name == name) return c;
  }
  throw SchemaError("no categorical feature '" + std::string(name) + "'");
}

int FeatureSchema::type_id(RequestType t) const {
  for (std::size_t i = 0; i < request_types.size(); ++i) {
    if (request_types[i] == t) return static_cast<int>(i);
  }
  throw ValidationError("request_type '" + std::string(to_string(t)) +
                        "' is not enumerated by the schema");
}

void FeatureSchema::check() const {
  if (version != kSchemaVersion) {
    throw SchemaError("unsupported schema version " + std::to_string(version));
  }
  for (const auto& c : continuous) {
    for (std::size_t i = 1; i < c.edges.size(); ++i) {
      if (!(c.edges[i - 1] < c.edges[i])) {
        throw SchemaError("bin edges of '" + c.name + "' are not strictly increasing");
      }
    }
  }
  if (geo.resolutions.empty()) throw SchemaError("no geohash resolutions");
  if (geo.bins_point < 2 || geo.bins_pair < 2) throw SchemaError("hash bin count < 2");
  if (tokens.empty()) throw SchemaError("empty token layout");
  for (const auto& t : tokens) {
    if (t.table >= tables.size()) {
      throw SchemaError("token '" + t.name + "' references missing table " +
                        std::to_string(t.table));
    }
    std::uint32_t expected = 0;
    switch (t.kind) {
      case TokenKind::kCategorical: expected = categorical_spec(t.source).table_size(); break;
      case TokenKind::kContinuous: expected = continuous_spec(t.source).table_size(); break;
      case TokenKind::kGeoOrigin:
      case TokenKind::kGeoDest: expected = geo.bins_point; break;
      case TokenKind::kGeoPair: expected = geo.bins_pair; break;
    }
    if (tables[t.table].size != expected) {
      throw SchemaError("table '" + tables[t.table].name + "' has size " +
                        std::to_string(tables[t.table].size) + ", token '" +
                        t.name + "' needs " + std::to_string(expected));
    }
  }
  if (request_types.empty()) throw SchemaError("no request types enumerated");
}

std::string FeatureSchema::hash() const {
  const nlohmann::json j = *this;
  const std::string text = j.dump();
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%08x%08x", geo::murmur3_32(text, geo::kSeed1),
                geo::murmur3_32(text, geo::kSeed2));
  return buf;
}

void to_json(nlohmann::json& j, const FeatureSchema& s) {
  using nlohmann::json;
  json cont = json::array();
  for (const auto& c : s.continuous) {
    cont.push_back({{"name", c.name}, {"num_bins", c.num_bins}, {"edges", c.edges}});
  }
  json cat = json::array();
  for (const auto& c : s.categorical) {
    json e = {{"name", c.name}};
    if (c.range_size) {
      e["range_size"] = *c.range_size;
    } else {
      json vals = json::array();
      // Stored in index order so the map can be rebuilt exactly.
      std::vector<std::int64_t> by_index(c.vocab.size());
      for (const auto& [value, idx] : c.vocab) by_index[idx] = value;
      e["values"] = by_index;
    }
    e["unknown_index"] = c.unknown_index();
    cat.push_back(std::move(e));
  }
  json tables = json::array();
  for (const auto& t : s.tables) tables.push_back({{"name", t.name}, {"size", t.size}});
  json tokens = json::array();
  for (const auto& t : s.tokens) {
    json e = {{"name", t.name}, {"kind", kind_name(t.kind)}, {"table", t.table}};
    if (!t.source.empty()) e["source"] = t.source;
    if (t.hashed()) e["resolution"] = t.resolution;
    tokens.push_back(std::move(e));
  }
  json types = json::array();
  for (auto t : s.request_types) types.push_back(to_string(t));
  j = json{{"version", s.version},
           {"continuous", cont},
           {"categorical", cat},
           {"geo",
            {{"resolutions", s.geo.resolutions},
             {"bins_point", s.geo.bins_point},
             {"bins_pair", s.geo.bins_pair},
             {"seed1", s.geo.seeds.seed1},
             {"seed2", s.geo.seeds.seed2},
             {"hash", "murmur3_x86_32"},
             {"interleave", "lat_odd_bits"},
             {"alphabet", std::string(geo::kAlphabet)},
             {"pair_separator", std::string(1, geo::kPairSeparator)}}},
           {"tables", tables},
           {"tokens", tokens},
           {"request_types", types},
           {"day_of_week_origin", "monday=0,utc"}};
}

void from_json(const nlohmann::json& j, FeatureSchema& s) {
  try {
    s = FeatureSchema{};
    s.version = j.at("version").get<int>();
    for (const auto& c : j.at("continuous")) {
      s.continuous.push_back({c.at("name").get<std::string>(),
                              c.at("edges").get<std::vector<double>>(),
                              c.at("num_bins").get<int>()});
    }
    for (const auto& c : j.at("categorical")) {
      CategoricalSpec spec;
      spec.name = c.at("name").get<std::string>();
      if (c.contains("range_size")) {
        spec.range_size = c.at("range_size").get<std::uint32_t>();
      } else {
        const auto vals = c.at("values").get<std::vector<std::int64_t>>();
        for (std::size_t i = 0; i < vals.size(); ++i) {
          spec.vocab.emplace(vals[i], static_cast<std::uint32_t>(i));
        }
      }
      s.categorical.push_back(std::move(spec));
    }
    const auto& g = j.at("geo");
    s.geo.resolutions = g.at("resolutions").get<std::vector<int>>();
    s.geo.bins_point = g.at("bins_point").get<std::uint32_t>();
    s.geo.bins_pair = g.at("bins_pair").get<std::uint32_t>();
    s.geo.seeds.seed1 = g.at("seed1").get<std::uint32_t>();
    s.geo.seeds.seed2 = g.at("seed2").get<std::uint32_t>();
    for (const auto& t : j.at("tables")) {
      s.tables.push_back({t.at("name").get<std::string>(), t.at("size").get<std::uint32_t>()});
    }
    for (const auto& t : j.at("tokens")) {
      TokenSpec spec;
      spec.name = t.at("name").get<std::string>();
      spec.kind = parse_kind(t.at("kind").get<std::string>());
      spec.table = t.at("table").get<std::uint32_t>();
      spec.source = t.value("source", std::string{});
      spec.resolution = t.value("resolution", 0);
      s.tokens.push_back(std::move(spec));
    }
    for (const auto& t : j.at("request_types")) {
      s.request_types.push_back(parse_request_type(t.get<std::string>()));
    }
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("malformed schema manifest: ") + e.what());
  }
  s.check();
}

FeatureSchema load_schema(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open schema '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError("schema '" + path + "' is not valid JSON: " + e.what());
  }
  return j.get<FeatureSchema>();
}

void save_schema(const FeatureSchema& s, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write schema '" + path + "'");
  out << nlohmann::json(s).dump(1) << '\n';
  if (!out) throw IoError("write failed for '" + path + "'");
}

FeatureSchema fit_schema(std::span<const TripRecord> records, const FitOptions& opts) {
  if (records.empty()) throw ValidationError("cannot fit a schema on zero records");
  FeatureSchema s;
  s.geo = opts.geo;

  auto fit_cont = [&](const std::string& name, int bins) {
    std::vector<double> vals;
    vals.reserve(records.size());
    for (const auto& r : records) vals.push_back(continuous_value(r.request, name));
    s.continuous.push_back({name, fit_quantile_bins(vals, bins), bins});
  };
  fit_cont("re_eta_s", opts.eta_bins);
  fit_cont("distance_m", opts.distance_bins);
  fit_cont("realtime_speed", opts.speed_bins);
  fit_cont("historical_speed", opts.speed_bins);

  s.categorical.push_back({"minute_of_week", kMinutesPerWeek, {}});
  s.categorical.push_back({"day_of_week", 7u, {}});
  s.categorical.push_back({"request_type", std::uint32_t(kNumRequestTypes), {}});
  CategoricalSpec region{"region_id", std::nullopt, {}};
  std::set<std::int64_t> regions;
  for (const auto& r : records) regions.insert(r.request.region_id);
  std::uint32_t next = 0;
  for (auto id : regions) region.vocab.emplace(id, next++);
  s.categorical.push_back(std::move(region));

  auto add_table = [&](std::string name, std::uint32_t size) {
    s.tables.push_back({std::move(name), size});
    return static_cast<std::uint32_t>(s.tables.size() - 1);
  };
  auto add_cat = [&](const std::string& name) {
    const auto t = add_table(name, s.categorical_spec(name).table_size());
    s.tokens.push_back({name, TokenKind::kCategorical, name, 0, t});
  };
  auto add_cont = [&](const std::string& name) {
    const auto t = add_table(name, s.continuous_spec(name).table_size());
    s.tokens.push_back({name, TokenKind::kContinuous, name, 0, t});
  };

  add_cat("minute_of_week");
  add_cat("day_of_week");
  for (int u : s.geo.resolutions) {
    const std::string suffix = ".u" + std::to_string(u);
    auto to = add_table("geo.origin" + suffix, s.geo.bins_point);
    s.tokens.push_back({"geo.origin" + suffix, TokenKind::kGeoOrigin, "", u, to});
    auto td = add_table("geo.dest" + suffix, s.geo.bins_point);
    s.tokens.push_back({"geo.dest" + suffix, TokenKind::kGeoDest, "", u, td});
    auto tp = add_table("geo.od" + suffix, s.geo.bins_pair);
    s.tokens.push_back({"geo.od" + suffix, TokenKind::kGeoPair, "", u, tp});
  }
  add_cat("request_type");
  add_cont("re_eta_s");
  add_cont("distance_m");
  add_cont("realtime_speed");
  add_cont("historical_speed");
  add_cat("region_id");

  for (int i = 0; i < kNumRequestTypes; ++i) {
    s.request_types.push_back(static_cast<RequestType>(i));
  }
  s.check();
  return s;
}

std::uint32_t encode_categorical(const FeatureSchema& schema, std::string_view name,
                                 std::int64_t value) {
  return schema.categorical_spec(name).encode(value);
}

int featurize_into(const RawRequest& raw, const FeatureSchema& schema,
                   std::span<TokenSlot> out) {
  validate(raw);
  if (out.size() != schema.tokens.size()) {
    throw ShapeError("token buffer holds " + std::to_string(out.size()) +
                     " slots, layout has " + std::to_string(schema.tokens.size()));
  }
  // Geohash strings are shared by the three tokens of one resolution.
  int cached_u = -1;
  std::string go, gd;
  for (std::size_t t = 0; t < schema.tokens.size(); ++t) {
    const TokenSpec& tok = schema.tokens[t];
    TokenSlot slot;
    switch (tok.kind) {
      case TokenKind::kCategorical:
        slot.bin = schema.categorical_spec(tok.source).encode(categorical_value(raw, tok.source));
        break;
      case TokenKind::kContinuous:
        slot.bin = bucketize(continuous_value(raw, tok.source),
                             schema.continuous_spec(tok.source).edges);
        break;
      case TokenKind::kGeoOrigin:
      case TokenKind::kGeoDest:
      case TokenKind::kGeoPair: {
        if (tok.resolution != cached_u) {
          go = geo::encode_geohash(raw.origin, tok.resolution).str();
          gd = geo::encode_geohash(raw.dest, tok.resolution).str();
          cached_u = tok.resolution;
        }
        geo::HashBinPair hp;
        if (tok.kind == TokenKind::kGeoOrigin) {
          hp = geo::hash_pair(go, schema.geo.bins_point, schema.geo.seeds);
        } else if (tok.kind == TokenKind::kGeoDest) {
          hp = geo::hash_pair(gd, schema.geo.bins_point, schema.geo.seeds);
        } else {
          std::string key = go;
          key += geo::kPairSeparator;
          key += gd;
          hp = geo::hash_pair(key, schema.geo.bins_pair, schema.geo.seeds);
        }
        slot.bin = hp.bin1;
        slot.alt = hp.bin2;
        break;
      }
    }
    out[t] = slot;
  }
  return schema.type_id(raw.request_type);
}

TokenIndexes featurize(const RawRequest& raw, const FeatureSchema& schema) {
  TokenIndexes ti;
  ti.slots.resize(schema.tokens.size());
  ti.type_id = featurize_into(raw, schema, ti.slots);
  ti.re_eta = raw.re_eta_s;
  return ti;
}

}  // namespace etapost

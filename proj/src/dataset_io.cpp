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

#include <array>
#include <charconv>
#include <fstream>
#include <string>

#include "etapost/errors.hpp"
#include "etapost/featurize.hpp"

namespace etapost {

namespace {

constexpr std::size_t kColumns = 13;

template <typename T>
T parse_number(std::string_view field, std::string_view column) {
  T value{};
  auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
  if (ec != std::errc{} || ptr != field.data() + field.size()) {
    throw ValidationError("column " + std::string(column) + ": cannot parse '" +
                          std::string(field) + "'");
  }
  return value;
}

constexpr std::array<std::string_view, kColumns> kNames = {
    "request_id", "timestamp", "origin_lat", "origin_lng", "dest_lat",
    "dest_lng", "request_type", "region_id", "realtime_speed",
    "historical_speed", "distance_m", "re_eta_s", "ata_s"};

}  // namespace

std::string format_double(double v) {
  std::array<char, 32> buf;
  auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), ptr);
}

std::string format_csv_row(const TripRecord& r) {
  const RawRequest& q = r.request;
  std::string s;
  s.reserve(160);
  s += std::to_string(r.request_id);
  s += ',';
  s += std::to_string(q.timestamp);
  for (double v : {q.origin.lat(), q.origin.lng(), q.dest.lat(), q.dest.lng()}) {
    s += ',';
    s += format_double(v);
  }
  s += ',';
  s += to_string(q.request_type);
  s += ',';
  s += std::to_string(q.region_id);
  for (double v : {q.realtime_speed, q.historical_speed, q.distance_m, q.re_eta_s}) {
    s += ',';
    s += format_double(v);
  }
  s += ',';
  if (r.ata_s) s += format_double(*r.ata_s);
  return s;
}

void write_trip_csv(const std::string& path, std::span<const TripRecord> rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << kCsvHeader << '\n';
  for (const auto& r : rows) out << format_csv_row(r) << '\n';
  out.flush();
  if (!out) throw IoError("write failed for '" + path + "'");
}

std::vector<TripRecord> read_trip_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open dataset '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw ValidationError("'" + path + "' is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kCsvHeader) {
    throw ValidationError("'" + path + "' has an unexpected header: " + line);
  }
  std::vector<TripRecord> rows;
  std::size_t lineno = 1;
  std::array<std::string_view, kColumns> f;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::size_t start = 0, col = 0;
    std::string_view sv(line);
    bool extra = false;
    for (;;) {
      const std::size_t comma = sv.find(',', start);
      const std::string_view field =
          sv.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start);
      if (col < kColumns) {
        f[col] = field;
      } else {
        extra = true;
      }
      ++col;
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    if (col != kColumns || extra) {
      throw ValidationError(path + ": line " + std::to_string(lineno) + ": expected " +
                            std::to_string(kColumns) + " columns, got " + std::to_string(col));
    }
    try {
      TripRecord r;
      r.request_id = parse_number<std::int64_t>(f[0], kNames[0]);
      RawRequest& q = r.request;
      q.timestamp = parse_number<std::int64_t>(f[1], kNames[1]);
      q.origin = geo::GeoPoint(parse_number<double>(f[2], kNames[2]),
                               parse_number<double>(f[3], kNames[3]));
      q.dest = geo::GeoPoint(parse_number<double>(f[4], kNames[4]),
                             parse_number<double>(f[5], kNames[5]));
      q.request_type = parse_request_type(f[6]);
      q.region_id = parse_number<std::int64_t>(f[7], kNames[7]);
      q.realtime_speed = parse_number<double>(f[8], kNames[8]);
      q.historical_speed = parse_number<double>(f[9], kNames[9]);
      q.distance_m = parse_number<double>(f[10], kNames[10]);
      q.re_eta_s = parse_number<double>(f[11], kNames[11]);
      if (!f[12].empty()) r.ata_s = parse_number<double>(f[12], kNames[12]);
      validate(q);
      rows.push_back(std::move(r));
    } catch (const ValidationError& e) {
      throw ValidationError(path + ": line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return rows;
}

}  // namespace etapost

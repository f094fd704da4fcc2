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

// Online inference over a frozen 32-bit checkpoint.
//
// POST /v1/eta takes the CSV columns (minus request_id and ata_s) as a flat
// JSON object and answers {"eta_s", "residual_s", "re_eta_s",
// "model_version"}. GET /healthz answers {"status":"ok", "model_version"}.

#pragma once

#include <atomic>
#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "etapost/featurize.hpp"
#include "etapost/model.hpp"

namespace etapost::serve {

struct ServiceState {
  FeatureSchema schema;
  ModelParams<float> params;
  std::string model_version;
  nlohmann::json manifest;
  double self_test_eta_s = 0.0;  // fixture prediction on the 32-bit path
};

// Loads and verifies the checkpoint against the schema file (an empty path
// uses the schema embedded in the checkpoint), then runs the
// fixture self-test. Throws (CompatibilityError and friends) instead of
// returning a state that should not take traffic.
std::shared_ptr<const ServiceState> load_service(const std::string& checkpoint_path,
                                                 const std::string& schema_path);

// In-memory state, no self-test (tests and benchmarks).
std::shared_ptr<const ServiceState> make_service(FeatureSchema schema, ModelParams<float> params,
                                                 std::string model_version);

// Relative agreement required between the recorded and recomputed fixture.
inline constexpr double kSelfTestTolerance = 1e-3;

struct Response {
  int status = 200;
  std::string body;
};

// Parses, featurizes and runs the 32-bit forward pass. Never throws: client
// errors map to 400 with a message naming the field, anything else to 500.
Response handle_predict(const ServiceState& state, std::string_view body);
Response handle_healthz(const ServiceState& state);

// Per-shard counters; a thread always writes its own shard, readers merge.
class Metrics {
 public:
  void record(int status, double latency_us);
  nlohmann::json snapshot() const;

 private:
  struct alignas(64) Shard {
    std::atomic<std::uint64_t> requests{0};
    std::atomic<std::uint64_t> client_errors{0};
    std::atomic<std::uint64_t> server_errors{0};
    std::atomic<std::uint64_t> latency_ns{0};
  };
  static constexpr std::size_t kShards = 64;
  Shard shards_[kShards];
};

class HttpServer {
 public:
  HttpServer(std::shared_ptr<const ServiceState> state, int threads);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  // Binds (port 0 picks a free port) and serves on a background thread.
  int start(const std::string& host, int port);
  // Blocks in the calling thread.
  void listen(const std::string& host, int port);
  void stop();
  const Metrics& metrics() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// --- benchmarking -----------------------------------------------------------

enum class Transport { kInProcess, kHttp };
Transport parse_transport(std::string_view name);

struct BenchConfig {
  std::vector<double> qps{100.0, 500.0, 1000.0};
  double duration_s = 30.0;
  int concurrency = 8;
  Transport transport = Transport::kInProcess;
  double warmup_s = 1.0;
  int server_threads = 0;  // http only; 0 picks the concurrency
};

struct LevelReport {
  double offered_qps = 0.0;
  double achieved_qps = 0.0;
  std::uint64_t requests = 0;
  std::uint64_t errors = 0;
  double p50_ms = 0.0, p95_ms = 0.0, p99_ms = 0.0, max_ms = 0.0;
  double cpu_ms_per_request = 0.0;
  // The schedule could not be kept: achieved rate below 95% of offered, or
  // the last request finished well past the level's end.
  bool unachievable = false;
  // 0.1 ms bins, as (bin start in ms, count) for non-empty bins.
  std::vector<std::pair<double, std::uint64_t>> histogram;
};

struct LatencyReport {
  std::string transport;
  int concurrency = 0;
  double duration_s = 0.0;
  std::string model_version;
  std::vector<LevelReport> levels;
};

void to_json(nlohmann::json& j, const LevelReport& r);
void to_json(nlohmann::json& j, const LatencyReport& r);

inline constexpr double kHistogramBinMs = 0.1;

// Open-loop load: each of `concurrency` workers owns an evenly staggered
// arrival schedule at qps / concurrency and measures every request from its
// scheduled send time, so a slow response delays nothing but itself in the
// statistics. Request bodies are cycled in order.
LatencyReport bench(std::shared_ptr<const ServiceState> state, const BenchConfig& cfg,
                    const std::vector<std::string>& bodies);

// Back-to-back calls of handle_predict on one thread, in microseconds.
std::vector<double> closed_loop_latencies_us(const ServiceState& state,
                                             const std::vector<std::string>& bodies,
                                             std::size_t count);

struct ProcessMemory {
  std::uint64_t rss_kb = 0;
  std::uint64_t peak_rss_kb = 0;
};
ProcessMemory read_process_memory();

}  // namespace etapost::serve

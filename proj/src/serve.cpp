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

#include "etapost/serve.hpp"

#include <time.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>
#include <thread>

#include <httplib.h>

#include "etapost/errors.hpp"
#include "etapost/trainpipe.hpp"

namespace etapost::serve {

namespace {

using Clock = std::chrono::steady_clock;

nlohmann::json error_body(std::string_view msg) { return {{"error", msg}}; }

double fixture_prediction(const ServiceState& s, const RawRequest& req) {
  Workspace<float> ws;
  std::vector<TokenSlot> slots(s.schema.num_tokens());
  const int type = featurize_into(req, s.schema, slots);
  return predict_tokens(s.params, s.schema, std::span<const TokenSlot>(slots), type, req.re_eta_s,
                        ws)
      .eta_s;
}

}  // namespace

std::shared_ptr<const ServiceState> load_service(const std::string& checkpoint_path,
                                                 const std::string& schema_path) {
  auto state = std::make_shared<ServiceState>();
  state->schema = schema_path.empty() ? checkpoint_schema(read_checkpoint_info(checkpoint_path))
                                      : load_schema(schema_path);
  auto ck = load_checkpoint<float>(checkpoint_path, &state->schema);
  state->params = std::move(ck.params);
  state->model_version = ck.info.model_version;
  state->manifest = std::move(ck.info.manifest);

  const auto it = state->manifest.find("fixture");
  if (it == state->manifest.end()) {
    throw CompatibilityError("checkpoint '" + checkpoint_path + "' records no fixture output");
  }
  const RawRequest req = request_from_json(it->at("request"));
  const double expected = it->at("eta_s").get<double>();
  state->self_test_eta_s = fixture_prediction(*state, req);
  const double err = std::abs(state->self_test_eta_s - expected);
  if (!(err <= kSelfTestTolerance * std::max(std::abs(expected), 1.0))) {
    throw CompatibilityError("self-test failed for '" + checkpoint_path + "': fixture eta " +
                             std::to_string(state->self_test_eta_s) + " s vs recorded " +
                             std::to_string(expected) + " s");
  }
  return state;
}

std::shared_ptr<const ServiceState> make_service(FeatureSchema schema, ModelParams<float> params,
                                                 std::string model_version) {
  check_compatible(params, schema);
  auto state = std::make_shared<ServiceState>();
  state->schema = std::move(schema);
  state->params = std::move(params);
  state->model_version = std::move(model_version);
  state->self_test_eta_s = fixture_prediction(*state, fixture_request());
  return state;
}

Response handle_predict(const ServiceState& state, std::string_view body) {
  thread_local Workspace<float> ws;
  thread_local std::vector<TokenSlot> slots;
  try {
    const auto j = nlohmann::json::parse(body);
    const RawRequest req = request_from_json(j);
    slots.resize(state.schema.num_tokens());
    const int type = featurize_into(req, state.schema, slots);
    const Prediction p = predict_tokens(state.params, state.schema,
                                        std::span<const TokenSlot>(slots), type, req.re_eta_s, ws);
    const nlohmann::json out = {{"eta_s", p.eta_s},
                                {"residual_s", p.residual_s},
                                {"re_eta_s", req.re_eta_s},
                                {"model_version", state.model_version}};
    return {200, out.dump()};
  } catch (const nlohmann::json::parse_error& e) {
    return {400, error_body(std::string("malformed JSON: ") + e.what()).dump()};
  } catch (const ValidationError& e) {
    return {400, error_body(e.what()).dump()};
  } catch (const std::exception& e) {
    return {500, error_body(std::string("internal error: ") + e.what()).dump()};
  } catch (...) {
    return {500, error_body("internal error").dump()};
  }
}

Response handle_healthz(const ServiceState& state) {
  return {200, nlohmann::json{{"status", "ok"}, {"model_version", state.model_version}}.dump()};
}

// --- metrics ----------------------------------------------------------------

void Metrics::record(int status, double latency_us) {
  static std::atomic<std::size_t> next{0};
  thread_local const std::size_t mine = next.fetch_add(1, std::memory_order_relaxed) % kShards;
  Shard& s = shards_[mine];
  s.requests.fetch_add(1, std::memory_order_relaxed);
  if (status >= 500) {
    s.server_errors.fetch_add(1, std::memory_order_relaxed);
  } else if (status >= 400) {
    s.client_errors.fetch_add(1, std::memory_order_relaxed);
  }
  s.latency_ns.fetch_add(static_cast<std::uint64_t>(latency_us * 1000.0), std::memory_order_relaxed);
}

nlohmann::json Metrics::snapshot() const {
  std::uint64_t req = 0, ce = 0, se = 0, ns = 0;
  for (const Shard& s : shards_) {
    req += s.requests.load(std::memory_order_relaxed);
    ce += s.client_errors.load(std::memory_order_relaxed);
    se += s.server_errors.load(std::memory_order_relaxed);
    ns += s.latency_ns.load(std::memory_order_relaxed);
  }
  return {{"requests", req},
          {"client_errors", ce},
          {"server_errors", se},
          {"mean_handler_latency_ms", req ? static_cast<double>(ns) / 1e6 / static_cast<double>(req) : 0.0}};
}

// --- HTTP -------------------------------------------------------------------

struct HttpServer::Impl {
  std::shared_ptr<const ServiceState> state;
  httplib::Server server;
  Metrics metrics;
  std::thread thread;
};

HttpServer::HttpServer(std::shared_ptr<const ServiceState> state, int threads)
    : impl_(std::make_unique<Impl>()) {
  if (!state) throw ConfigError("http server needs a loaded service");
  impl_->state = std::move(state);
  const auto n = static_cast<std::size_t>(std::max(1, threads));
  auto& svr = impl_->server;
  svr.new_task_queue = [n] { return new httplib::ThreadPool(n); };
  svr.set_tcp_nodelay(true);
  svr.set_keep_alive_max_count(1u << 30);
  svr.set_keep_alive_timeout(5);
  Impl* impl = impl_.get();
  svr.Post("/v1/eta", [impl](const httplib::Request& req, httplib::Response& res) {
    const auto t0 = Clock::now();
    const Response r = handle_predict(*impl->state, req.body);
    res.status = r.status;
    res.set_content(r.body, "application/json");
    impl->metrics.record(r.status,
                         std::chrono::duration<double, std::micro>(Clock::now() - t0).count());
  });
  svr.Get("/healthz", [impl](const httplib::Request&, httplib::Response& res) {
    const Response r = handle_healthz(*impl->state);
    res.status = r.status;
    res.set_content(r.body, "application/json");
  });
  svr.Get("/metrics", [impl](const httplib::Request&, httplib::Response& res) {
    res.set_content(impl->metrics.snapshot().dump(), "application/json");
  });
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::start(const std::string& host, int port) {
  auto& svr = impl_->server;
  int bound = port;
  if (port == 0) {
    bound = svr.bind_to_any_port(host);
    if (bound < 0) throw IoError("cannot bind " + host + " to a free port");
  } else if (!svr.bind_to_port(host, port)) {
    throw IoError("cannot bind " + host + ":" + std::to_string(port));
  }
  impl_->thread = std::thread([&svr] { svr.listen_after_bind(); });
  svr.wait_until_ready();
  return bound;
}

void HttpServer::listen(const std::string& host, int port) {
  if (!impl_->server.listen(host, port)) {
    throw IoError("cannot listen on " + host + ":" + std::to_string(port));
  }
}

void HttpServer::stop() {
  if (!impl_) return;
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

const Metrics& HttpServer::metrics() const { return impl_->metrics; }

// --- benchmarking -------------------------------------------------------------

Transport parse_transport(std::string_view name) {
  if (name == "inproc") return Transport::kInProcess;
  if (name == "http") return Transport::kHttp;
  throw ConfigError("unknown transport '" + std::string(name) + "' (inproc|http)");
}

void to_json(nlohmann::json& j, const LevelReport& r) {
  nlohmann::json hist = nlohmann::json::array();
  for (const auto& [start, count] : r.histogram) hist.push_back({start, count});
  j = {{"offered_qps", r.offered_qps},
       {"achieved_qps", r.achieved_qps},
       {"requests", r.requests},
       {"errors", r.errors},
       {"p50_ms", r.p50_ms},
       {"p95_ms", r.p95_ms},
       {"p99_ms", r.p99_ms},
       {"max_ms", r.max_ms},
       {"cpu_ms_per_request", r.cpu_ms_per_request},
       {"unachievable", r.unachievable},
       {"histogram_bin_ms", kHistogramBinMs},
       {"histogram", hist}};
}

void to_json(nlohmann::json& j, const LatencyReport& r) {
  j = {{"transport", r.transport},
       {"concurrency", r.concurrency},
       {"duration_s", r.duration_s},
       {"model_version", r.model_version},
       {"method", "open-loop, latency from scheduled send time"},
       {"levels", r.levels}};
}

namespace {

double process_cpu_seconds() {
  timespec ts{};
  clock_gettime(CLOCK_PROCESS_CPUTIME_ID, &ts);
  return static_cast<double>(ts.tv_sec) + 1e-9 * static_cast<double>(ts.tv_nsec);
}

void wait_until(Clock::time_point t) {
  constexpr auto kSpin = std::chrono::microseconds(200);
  if (t - Clock::now() > kSpin) std::this_thread::sleep_until(t - kSpin);
  while (Clock::now() < t) std::this_thread::yield();
}

double percentile_sorted(const std::vector<double>& v, double p) {
  if (v.empty()) return 0.0;
  auto rank = static_cast<std::size_t>(std::ceil(p / 100.0 * static_cast<double>(v.size()) - 1e-9));
  rank = std::clamp<std::size_t>(rank, 1, v.size());
  return v[rank - 1];
}

// Sends one body and returns the HTTP-style status.
using Sender = std::function<int(const std::string&)>;

struct WorkerResult {
  std::vector<double> latency_ms;
  std::uint64_t errors = 0;
  std::uint64_t skipped = 0;  // scheduled sends abandoned past the deadline
  Clock::time_point last_done{};
};

struct LevelRun {
  std::vector<WorkerResult> workers;
  Clock::time_point start;
  double cpu_s = 0.0;
};

double overrun_limit_s(double duration_s) { return std::max(0.5, 0.1 * duration_s); }

LevelRun run_level(std::vector<Sender>& senders, double qps, double duration_s,
                   const std::vector<std::string>& bodies) {
  const auto c = senders.size();
  const double interval_s = static_cast<double>(c) / qps;
  const auto per_worker =
      std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(duration_s * qps / static_cast<double>(c))));
  LevelRun run;
  run.workers.resize(c);
  run.start = Clock::now() + std::chrono::milliseconds(20);
  // A level that falls this far behind schedule is abandoned and flagged.
  const auto deadline = run.start + std::chrono::duration_cast<Clock::duration>(
                                        std::chrono::duration<double>(duration_s + overrun_limit_s(duration_s)));
  const double cpu0 = process_cpu_seconds();
  std::vector<std::thread> threads;
  for (std::size_t w = 0; w < c; ++w) {
    threads.emplace_back([&, w] {
      WorkerResult& out = run.workers[w];
      out.latency_ms.reserve(per_worker);
      const double offset_s = static_cast<double>(w) / qps;
      for (std::size_t k = 0; k < per_worker; ++k) {
        const auto sched = run.start + std::chrono::duration_cast<Clock::duration>(
                                           std::chrono::duration<double>(
                                               offset_s + static_cast<double>(k) * interval_s));
        if (Clock::now() > deadline) {
          out.skipped = per_worker - k;
          break;
        }
        wait_until(sched);
        const int status = senders[w](bodies[(w + k * c) % bodies.size()]);
        const auto done = Clock::now();
        if (status != 200) ++out.errors;
        out.latency_ms.push_back(std::chrono::duration<double, std::milli>(done - sched).count());
        out.last_done = done;
      }
    });
  }
  for (auto& t : threads) t.join();
  run.cpu_s = process_cpu_seconds() - cpu0;
  return run;
}

}  // namespace

LatencyReport bench(std::shared_ptr<const ServiceState> state, const BenchConfig& cfg,
                    const std::vector<std::string>& bodies) {
  if (!state) throw ConfigError("bench needs a loaded service");
  if (bodies.empty()) throw ConfigError("bench needs at least one request body");
  if (cfg.concurrency < 1) throw ConfigError("concurrency must be >= 1");
  if (!(cfg.duration_s > 0.0)) throw ConfigError("duration must be > 0");
  for (double q : cfg.qps) {
    if (!(q > 0.0)) throw ConfigError("offered QPS levels must be > 0");
  }

  std::unique_ptr<HttpServer> server;
  std::vector<std::unique_ptr<httplib::Client>> clients;
  std::vector<Sender> senders;
  const auto c = static_cast<std::size_t>(cfg.concurrency);
  if (cfg.transport == Transport::kHttp) {
    server = std::make_unique<HttpServer>(
        state, cfg.server_threads > 0 ? cfg.server_threads : cfg.concurrency);
    const int port = server->start("127.0.0.1", 0);
    for (std::size_t w = 0; w < c; ++w) {
      auto cli = std::make_unique<httplib::Client>("127.0.0.1", port);
      cli->set_keep_alive(true);
      cli->set_tcp_nodelay(true);
      httplib::Client* raw = cli.get();
      senders.emplace_back([raw](const std::string& body) {
        const auto res = raw->Post("/v1/eta", body, "application/json");
        return res ? res->status : -1;
      });
      clients.push_back(std::move(cli));
    }
  } else {
    const ServiceState* s = state.get();
    for (std::size_t w = 0; w < c; ++w) {
      senders.emplace_back([s](const std::string& body) { return handle_predict(*s, body).status; });
    }
  }

  LatencyReport report;
  report.transport = cfg.transport == Transport::kHttp ? "http" : "inproc";
  report.concurrency = cfg.concurrency;
  report.duration_s = cfg.duration_s;
  report.model_version = state->model_version;

  for (double qps : cfg.qps) {
    if (cfg.warmup_s > 0.0) run_level(senders, qps, cfg.warmup_s, bodies);
    const LevelRun run = run_level(senders, qps, cfg.duration_s, bodies);
    LevelReport lvl;
    lvl.offered_qps = qps;
    std::vector<double> all;
    Clock::time_point last = run.start;
    std::uint64_t skipped = 0;
    for (const auto& w : run.workers) {
      all.insert(all.end(), w.latency_ms.begin(), w.latency_ms.end());
      lvl.errors += w.errors;
      skipped += w.skipped;
      last = std::max(last, w.last_done);
    }
    std::sort(all.begin(), all.end());
    lvl.requests = all.size();
    const double span_s = std::chrono::duration<double>(last - run.start).count();
    lvl.achieved_qps = span_s > 0.0 ? static_cast<double>(all.size()) / span_s : 0.0;
    lvl.p50_ms = percentile_sorted(all, 50.0);
    lvl.p95_ms = percentile_sorted(all, 95.0);
    lvl.p99_ms = percentile_sorted(all, 99.0);
    lvl.max_ms = all.empty() ? 0.0 : all.back();
    lvl.cpu_ms_per_request = all.empty() ? 0.0 : 1e3 * run.cpu_s / static_cast<double>(all.size());
    const double overrun_s = span_s - cfg.duration_s;
    lvl.unachievable = skipped > 0 || lvl.achieved_qps < 0.95 * qps ||
                       overrun_s > overrun_limit_s(cfg.duration_s);
    for (double ms : all) {
      const double start = std::floor(ms / kHistogramBinMs) * kHistogramBinMs;
      if (lvl.histogram.empty() || lvl.histogram.back().first != start) {
        lvl.histogram.emplace_back(start, 0);
      }
      ++lvl.histogram.back().second;
    }
    report.levels.push_back(std::move(lvl));
  }
  // Close client connections first so the server does not sit out keep-alive.
  clients.clear();
  if (server) server->stop();
  return report;
}

std::vector<double> closed_loop_latencies_us(const ServiceState& state,
                                             const std::vector<std::string>& bodies,
                                             std::size_t count) {
  if (bodies.empty()) throw ConfigError("need at least one request body");
  std::vector<double> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const auto t0 = Clock::now();
    const Response r = handle_predict(state, bodies[i % bodies.size()]);
    const auto t1 = Clock::now();
    if (r.status != 200) throw Error("closed-loop request failed: " + r.body);
    out.push_back(std::chrono::duration<double, std::micro>(t1 - t0).count());
  }
  return out;
}

ProcessMemory read_process_memory() {
  ProcessMemory m;
  std::ifstream in("/proc/self/status");
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string key;
    std::uint64_t kb = 0;
    ls >> key >> kb;
    if (key == "VmRSS:") m.rss_kb = kb;
    if (key == "VmHWM:") m.peak_rss_kb = kb;
  }
  return m;
}

}  // namespace etapost::serve

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

// etapost command line. Machine-readable results go to stdout (or the named
// output file) as JSON; diagnostics go to stderr.
//
// Exit codes: 0 success, 1 invalid input or usage, 2 internal failure.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "etapost/errors.hpp"
#include "etapost/featurize.hpp"
#include "etapost/geocode.hpp"
#include "etapost/gradcheck.hpp"
#include "etapost/model.hpp"
#include "etapost/serve.hpp"
#include "etapost/synthdata.hpp"
#include "etapost/trainpipe.hpp"

namespace {

using namespace etapost;
using nlohmann::json;

int verbosity = 0;

void note(const std::string& msg) {
  if (verbosity > 0) std::cerr << msg << '\n';
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ValidationError("malformed JSON in '" + path + "': " + e.what());
  }
}

void write_json(const json& j, const std::string& path) {
  if (path.empty() || path == "-") {
    std::cout << j.dump(1) << '\n';
    return;
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << j.dump(1) << '\n';
  if (!out) throw IoError("write failed for '" + path + "'");
}

Precision parse_precision_flag(const std::string& s) {
  if (s == "f32") return Precision::kF32;
  if (s == "f64") return Precision::kF64;
  throw ConfigError("precision must be f32 or f64");
}

// Re-emits the exact invocation of the selected subcommand, defaults
// included, as JSON with a replayable argv.
json dump_invocation(const CLI::App& root, const CLI::App& sub) {
  json options = json::object();
  std::vector<std::string> argv{root.get_name(), sub.get_name()};
  for (const CLI::Option* opt : sub.get_options()) {
    const std::string name = opt->get_single_name();
    if (name == "help" || name == "h") continue;
    const std::string flag = "--" + name;
    if (opt->get_type_size() == 0) {
      const bool on = opt->count() > 0;
      options[name] = on;
      if (on) argv.push_back(flag);
      continue;
    }
    std::vector<std::string> values = opt->results();
    if (values.empty()) {
      const std::string def = opt->get_default_str();
      if (def.empty()) continue;
      values.push_back(def);
    }
    options[name] = values.size() == 1 ? json(values[0]) : json(values);
    for (const auto& v : values) {
      argv.push_back(flag);
      argv.push_back(v);
    }
  }
  return {{"subcommand", sub.get_name()}, {"options", options}, {"argv", argv}};
}

std::vector<std::string> request_pool(std::uint64_t seed, std::size_t n) {
  const synth::World world(synth::WorldConfig{});
  std::vector<std::string> bodies;
  for (const auto& r : synth::generate_trips(world, n, seed)) {
    bodies.push_back(request_to_json(r.request).dump());
  }
  return bodies;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"etapost: residual ETA post-processing (data, training, evaluation, serving)",
               "etapost"};
  app.set_help_all_flag("--help-all", "Help for every subcommand");
  app.require_subcommand(0, 1);
  bool dump_config = false;
  app.add_flag("-v,--verbose", verbosity, "Progress on stderr (repeat for more)");
  app.add_flag("--dump-config", dump_config,
               "Print the resolved invocation (all options, defaults included) as JSON and exit");

  // gen-data
  std::uint64_t gd_seed = 42;
  std::size_t gd_n = 0;
  std::string gd_out, gd_world;
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic labeled trip CSV");
  gen->add_option("--seed", gd_seed, "World and dataset seed")->capture_default_str();
  gen->add_option("--n", gd_n, "Number of trips")->required();
  gen->add_option("--out", gd_out, "Output CSV path")->required();
  gen->add_option("--world", gd_world, "World config JSON (missing keys take defaults)");

  // fit-schema
  std::string fs_data, fs_out;
  double fs_train = 0.72;
  FitOptions fs_opts;
  auto* fit = app.add_subcommand("fit-schema", "Fit the feature schema on the training slice");
  fit->add_option("--data", fs_data, "Trip CSV")->required();
  fit->add_option("--out", fs_out, "Schema JSON path")->required();
  fit->add_option("--train-frac", fs_train, "Leading fraction of rows to fit on")->capture_default_str();
  fit->add_option("--eta-bins", fs_opts.eta_bins)->capture_default_str();
  fit->add_option("--distance-bins", fs_opts.distance_bins)->capture_default_str();
  fit->add_option("--speed-bins", fs_opts.speed_bins)->capture_default_str();
  fit->add_option("--bins-point", fs_opts.geo.bins_point, "Hash bins per geohash point table")
      ->capture_default_str();
  fit->add_option("--bins-pair", fs_opts.geo.bins_pair, "Hash bins per origin-destination table")
      ->capture_default_str();

  // train
  std::string tr_data, tr_schema, tr_out, tr_log, tr_precision = "f32";
  double tr_train = 0.72, tr_val = 0.08;
  TrainConfig tc;
  ModelConfig mc;
  auto* trn = app.add_subcommand("train", "Train on the sequential train/validation slices");
  trn->add_option("--data", tr_data, "Trip CSV")->required();
  trn->add_option("--schema", tr_schema, "Schema JSON")->required();
  trn->add_option("--out", tr_out, "Checkpoint path")->required();
  trn->add_option("--epochs", tc.epochs)->capture_default_str();
  trn->add_option("--delta", tc.loss.delta, "Huber delta (s)")->capture_default_str();
  trn->add_option("--omega", tc.loss.omega, "Overprediction weight")->capture_default_str();
  trn->add_option("--seed", tc.seed, "Shuffle seed")->capture_default_str();
  trn->add_option("--init-seed", tc.init_seed, "Initialization seed")->capture_default_str();
  trn->add_option("--batch-size", tc.batch_size)->capture_default_str();
  trn->add_option("--lr", tc.peak_lr, "Peak learning rate")->capture_default_str();
  trn->add_option("--lr-floor", tc.floor_fraction, "Cosine floor as a fraction of the peak")
      ->capture_default_str();
  trn->add_option("--train-frac", tr_train)->capture_default_str();
  trn->add_option("--val-frac", tr_val)->capture_default_str();
  trn->add_option("--hidden", mc.hidden_size, "Decoder hidden width")->capture_default_str();
  trn->add_option("--embed-dim", mc.embed_dim)->capture_default_str();
  trn->add_option("--attn-dim", mc.attn_dim)->capture_default_str();
  trn->add_option("--clamp", mc.residual_clamp, "Residual clamp (s)")->capture_default_str();
  trn->add_option("--precision", tr_precision, "Stored precision: f32 or f64")->capture_default_str();
  trn->add_option("--log", tr_log, "Per-epoch metrics JSON-lines file");
  trn->add_flag("--freeze-embeddings", tc.freeze.embeddings, "Hold embeddings at zero");
  trn->add_flag("--freeze-attention", tc.freeze.attention, "Hold attention weights at zero");
  trn->add_flag("--zero-init", tc.zero_init, "Start from all-zero parameters");

  // eval
  std::string ev_ckpt, ev_data, ev_report, ev_split = "test";
  auto* evl = app.add_subcommand("eval", "Evaluate a checkpoint against RE-ETA");
  evl->add_option("--ckpt", ev_ckpt)->required();
  evl->add_option("--data", ev_data, "Trip CSV")->required();
  evl->add_option("--report", ev_report, "Report JSON path (stdout if omitted)");
  evl->add_option("--split", ev_split,
                  "test: rows after the checkpoint's train and validation slices; all: every row")
      ->check(CLI::IsMember({"test", "all"}))
      ->capture_default_str();

  // serve
  std::string sv_ckpt, sv_schema, sv_host = "127.0.0.1";
  int sv_port = 8080, sv_threads = 8;
  auto* srv = app.add_subcommand("serve", "Serve POST /v1/eta and GET /healthz");
  srv->add_option("--ckpt", sv_ckpt)->required();
  srv->add_option("--schema", sv_schema, "Schema JSON (default: the checkpoint's own)");
  srv->add_option("--host", sv_host)->capture_default_str();
  srv->add_option("--port", sv_port)->capture_default_str();
  srv->add_option("--threads", sv_threads, "Worker threads")->capture_default_str();

  // bench
  std::string bn_ckpt, bn_schema, bn_out, bn_transport = "inproc";
  serve::BenchConfig bc;
  std::uint64_t bn_seed = 42;
  std::size_t bn_requests = 1000;
  auto* bnc = app.add_subcommand("bench", "Open-loop latency and throughput benchmark");
  bnc->add_option("--ckpt", bn_ckpt)->required();
  bnc->add_option("--schema", bn_schema, "Schema JSON (default: the checkpoint's own)");
  bnc->add_option("--qps", bc.qps, "Offered rates")->delimiter(',')->capture_default_str();
  bnc->add_option("--duration", bc.duration_s, "Seconds per level")->capture_default_str();
  bnc->add_option("--concurrency", bc.concurrency)->capture_default_str();
  bnc->add_option("--transport", bn_transport, "inproc or http")
      ->check(CLI::IsMember({"inproc", "http"}))
      ->capture_default_str();
  bnc->add_option("--warmup", bc.warmup_s, "Warmup seconds per level")->capture_default_str();
  bnc->add_option("--requests", bn_requests, "Synthetic request pool size")->capture_default_str();
  bnc->add_option("--seed", bn_seed, "Request pool seed")->capture_default_str();
  bnc->add_option("--out", bn_out, "Report JSON path (stdout if omitted)");

  // geohash
  double gh_lat = 0.0, gh_lng = 0.0;
  int gh_res = 0;
  auto* gh = app.add_subcommand("geohash", "Encode a coordinate");
  gh->add_option("--lat", gh_lat)->required();
  gh->add_option("--lng", gh_lng)->required();
  gh->add_option("--resolution", gh_res, "1..12")->required();

  // grad-check
  int gc_instances = 10;
  std::uint64_t gc_seed = 1;
  auto* gcc = app.add_subcommand("grad-check", "Finite-difference check of every backward pass");
  gcc->add_option("--instances", gc_instances, "Random instances per op")->capture_default_str();
  gcc->add_option("--seed", gc_seed)->capture_default_str();

  // export-embeddings
  std::string ex_ckpt, ex_out;
  std::vector<std::string> ex_tables;
  auto* exp = app.add_subcommand("export-embeddings", "Write embedding tables as TSV");
  exp->add_option("--ckpt", ex_ckpt)->required();
  exp->add_option("--table", ex_tables, "Table name (repeatable; default: all)");
  exp->add_option("--out", ex_out, "TSV file for one table, else a directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    if (code == 0) return 0;
    std::cerr << app.help();
    return 1;
  }

  CLI::App* sub = nullptr;
  for (CLI::App* s : app.get_subcommands()) sub = s;
  if (!sub) {
    std::cerr << app.help();
    return 1;
  }
  if (dump_config) {
    std::cout << dump_invocation(app, *sub).dump(1) << '\n';
    return 0;
  }

  try {
    if (sub == gen) {
      synth::WorldConfig wc;
      wc.seed = gd_seed;
      if (!gd_world.empty()) {
        const json j = read_json_file(gd_world);
        wc = j.contains("world") ? j.at("world").get<synth::WorldConfig>() : j.get<synth::WorldConfig>();
      }
      const synth::World world(wc);
      synth::generate_dataset(world, gd_n, gd_seed, gd_out);
      std::cout << json{{"out", gd_out}, {"n", gd_n}, {"seed", gd_seed}, {"world", wc}}.dump()
                << '\n';
    } else if (sub == fit) {
      const auto rows = read_trip_csv(fs_data);
      const auto split = split_sequential(rows, fs_train, 0.0);
      const FeatureSchema schema = fit_schema(split.train, fs_opts);
      save_schema(schema, fs_out);
      std::cout << json{{"out", fs_out},
                        {"rows", split.train.size()},
                        {"tokens", schema.num_tokens()},
                        {"schema_hash", schema.hash()}}
                       .dump()
                << '\n';
    } else if (sub == trn) {
      const Precision precision = parse_precision_flag(tr_precision);
      const FeatureSchema schema = load_schema(tr_schema);
      const auto rows = read_trip_csv(tr_data);
      const auto split = split_sequential(rows, tr_train, tr_val);
      note("train rows " + std::to_string(split.train.size()) + ", val rows " +
           std::to_string(split.val.size()));
      std::ofstream log;
      TrainHooks hooks;
      if (!tr_log.empty()) {
        log.open(tr_log);
        if (!log) throw IoError("cannot write '" + tr_log + "'");
        hooks.log = &log;
      }
      hooks.on_epoch = [](const EpochRecord& r) { note(json(r).dump()); };
      const TrainResult res = train(split.train, split.val, schema, tc, mc, hooks);
      const json training = {{"config", tc},
                             {"train_frac", tr_train},
                             {"val_frac", tr_val},
                             {"train_rows", split.train.size()},
                             {"val_rows", split.val.size()},
                             {"best_epoch", res.best_epoch},
                             {"steps", res.steps},
                             {"history", res.history}};
      const CheckpointInfo info =
          save_trained(tr_out, res.params, schema, precision, {{"training", training}});
      std::cout << json{{"checkpoint", tr_out},
                        {"model_version", info.model_version},
                        {"best_epoch", res.best_epoch},
                        {"steps", res.steps},
                        {"history", res.history}}
                       .dump()
                << '\n';
    } else if (sub == evl) {
      const CheckpointInfo info = read_checkpoint_info(ev_ckpt);
      const FeatureSchema schema = checkpoint_schema(info);
      const auto ck = load_checkpoint<float>(ev_ckpt, &schema);
      const auto rows = read_trip_csv(ev_data);
      std::vector<TripRecord> test;
      if (ev_split == "all") {
        test = rows;
      } else {
        const auto it = info.manifest.find("training");
        if (it == info.manifest.end()) {
          throw ValidationError("checkpoint records no split fractions; use --split all");
        }
        test = split_sequential(rows, it->at("train_frac").get<double>(),
                                it->at("val_frac").get<double>())
                   .test;
      }
      const EvalReport report = evaluate(ck.params, schema, test);
      json out = report;
      out["model_version"] = info.model_version;
      out["split"] = ev_split;
      write_json(out, ev_report);
    } else if (sub == srv) {
      const auto state = serve::load_service(sv_ckpt, sv_schema);
      serve::HttpServer server(state, sv_threads);
      std::cerr << json{{"status", "listening"},
                        {"host", sv_host},
                        {"port", sv_port},
                        {"model_version", state->model_version},
                        {"self_test_eta_s", state->self_test_eta_s}}
                       .dump()
                << '\n';
      server.listen(sv_host, sv_port);
    } else if (sub == bnc) {
      bc.transport = serve::parse_transport(bn_transport);
      const auto state = serve::load_service(bn_ckpt, bn_schema);
      const auto bodies = request_pool(bn_seed, bn_requests);
      const serve::LatencyReport report = serve::bench(state, bc, bodies);
      json out = report;
      out["seed"] = bn_seed;
      out["requests_in_pool"] = bn_requests;
      write_json(out, bn_out);
    } else if (sub == gh) {
      const geo::GeoPoint p(gh_lat, gh_lng);
      const geo::GeohashString hash = geo::encode_geohash(p, gh_res);
      std::cout << json{{"lat", gh_lat}, {"lng", gh_lng}, {"resolution", gh_res},
                        {"geohash", hash.str()}}
                       .dump()
                << '\n';
    } else if (sub == gcc) {
      const auto results = run_grad_check_suite(gc_instances, gc_seed);
      bool ok = true;
      for (const auto& r : results) {
        ok = ok && r.passed();
        std::cerr << r.op << ": max deviation " << r.max_deviation << '\n';
      }
      std::cout << json{{"ops", results}, {"tolerance", kGradCheckTolerance}, {"passed", ok},
                        {"seed", gc_seed}}
                       .dump(1)
                << '\n';
      return ok ? 0 : 2;
    } else if (sub == exp) {
      const auto ck = load_checkpoint<float>(ex_ckpt);
      std::vector<std::string> tables = ex_tables.empty() ? ck.params.table_names : ex_tables;
      const bool single = ex_tables.size() == 1;
      if (!single) std::filesystem::create_directories(ex_out);
      json written = json::array();
      for (const auto& t : tables) {
        const std::string path =
            single ? ex_out : (std::filesystem::path(ex_out) / (t + ".tsv")).string();
        std::ofstream out(path);
        if (!out) throw IoError("cannot write '" + path + "'");
        export_embeddings(ck.params, t, out);
        written.push_back({{"table", t}, {"path", path}});
      }
      std::cout << json{{"written", written}}.dump() << '\n';
    }
  } catch (const etapost::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}

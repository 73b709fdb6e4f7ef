// Command-line entry point: synth, ingest, train, eval, recommend, bench.
//
// Exit codes: 0 success, 1 internal error, 2 input/data error, 3 config error.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include <opr/opr.hpp>

namespace fs = std::filesystem;

namespace {

// ---------------------------------------------------------------------------
// Config files: `key = value` lines, '#' comments. Keys are long option names
// ('_' and '-' are interchangeable). Command-line flags take precedence.

void apply_config_file(CLI::App& cmd, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw opr::DataError("cannot open config '" + path + "'");
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto trimmed = opr::csv::trim(line);
    if (trimmed.empty()) continue;
    const auto eq = trimmed.find('=');
    if (eq == std::string_view::npos) {
      throw opr::ConfigError(path + ":" + std::to_string(lineno) + ": expected key = value");
    }
    std::string key(opr::csv::trim(trimmed.substr(0, eq)));
    std::string value(opr::csv::trim(trimmed.substr(eq + 1)));
    std::replace(key.begin(), key.end(), '_', '-');
    if (key == "config") throw opr::ConfigError(path + ":" + std::to_string(lineno) + ": nested config");
    CLI::Option* opt = cmd.get_option_no_throw("--" + key);
    if (!opt) throw opr::ConfigError(path + ":" + std::to_string(lineno) + ": unknown key '" + key + "'");
    if (opt->count() > 0) continue;
    try {
      if (opt->get_type_size() == 0) {
        if (value == "true" || value == "1") {
          opt->add_result("true");
        } else if (value != "false" && value != "0") {
          throw opr::ConfigError(path + ":" + std::to_string(lineno) + ": expected true/false for '" + key + "'");
        } else {
          continue;
        }
      } else {
        opt->add_result(value);
      }
      opt->run_callback();
    } catch (const CLI::Error& e) {
      throw opr::ConfigError(path + ":" + std::to_string(lineno) + ": bad value for '" + key + "': " + e.what());
    }
  }
}

/// Seed precedence: flag, config file, OPR_SEED, built-in default.
std::uint64_t resolve_seed(const CLI::Option* opt, std::uint64_t value) {
  if (opt->count() > 0) return value;
  if (const char* env = std::getenv("OPR_SEED")) {
    auto v = opr::csv::to_number<std::uint64_t>(env);
    if (!v) throw opr::ConfigError(std::string("OPR_SEED is not an unsigned integer: '") + env + "'");
    return *v;
  }
  return value;
}

void require_file(const std::string& path, const char* what) {
  if (!fs::is_regular_file(path)) throw opr::DataError(std::string(what) + " '" + path + "' not found");
}

void require_dir(const std::string& path, const char* what) {
  if (!fs::is_directory(path)) throw opr::DataError(std::string(what) + " '" + path + "' not found");
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream os(p, std::ios::binary);
  if (!os) throw opr::DataError("cannot write '" + p.string() + "'");
  return os;
}

fs::path manifest_path(const std::string& checkpoint) {
  fs::path p(checkpoint);
  p.replace_extension(".json");
  return p;
}

struct LoadedModel {
  opr::TrainConfig train;
  opr::ModelParams params;
};

LoadedModel load_model(const std::string& checkpoint, const opr::SpatialGraph& g) {
  require_file(checkpoint, "checkpoint");
  const fs::path mpath = manifest_path(checkpoint);
  require_file(mpath.string(), "checkpoint manifest");
  std::ifstream ms(mpath);
  nlohmann::json manifest;
  try {
    ms >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw opr::DataError("malformed manifest '" + mpath.string() + "': " + e.what());
  }
  LoadedModel m;
  try {
    m.train = manifest.at("train").get<opr::TrainConfig>();
    if (manifest.at("num_vertices").get<std::size_t>() != g.num_vertices()) {
      throw opr::DataError("checkpoint was trained on " +
                           std::to_string(manifest.at("num_vertices").get<std::size_t>()) +
                           " vertices, dataset has " + std::to_string(g.num_vertices()));
    }
  } catch (const nlohmann::json::exception& e) {
    throw opr::DataError("manifest '" + mpath.string() + "' is incomplete: " + e.what());
  }
  m.params = opr::ModelParams::init(m.train.model, g, 0);
  m.params.restore(opr::load_checkpoint(checkpoint));
  return m;
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  opr::SynthConfig cfg;
  double adjacency_m = 50.0;
  std::string out;
  std::string config;
  CLI::Option* seed = nullptr;
};

void add_synth(CLI::App& app, SynthArgs& a) {
  auto* c = app.add_subcommand("synth", "Generate a synthetic occupancy dataset");
  c->add_option("--config", a.config, "key = value config file");
  c->add_option("--out", a.out, "output dataset directory")->required();
  a.seed = c->add_option("--seed", a.cfg.rng_seed, "random seed");
  c->add_option("--locations", a.cfg.num_locations, "number of locations");
  c->add_option("--intervals", a.cfg.num_intervals, "number of intervals");
  c->add_option("--spacing", a.cfg.grid_spacing_m, "grid spacing in meters");
  c->add_option("--base-rate", a.cfg.base_occupancy_rate, "mean occupancy rate");
  c->add_option("--spatial-correlation", a.cfg.spatial_correlation, "neighbor coupling in [0,1]");
  c->add_option("--period", a.cfg.daily_period_intervals, "intervals per day");
  c->add_option("--heterogeneity", a.cfg.heterogeneity, "spread of per-location occupancy levels");
  c->add_option("--turnover-min", a.cfg.turnover_min, "slowest per-location turnover");
  c->add_option("--turnover-max", a.cfg.turnover_max, "fastest per-location turnover");
  c->add_option("--interval", a.cfg.interval_minutes, "minutes per interval");
  c->add_option("--adjacency-m", a.adjacency_m, "edge distance threshold in meters");
  c->callback([c, &a] {
    if (!a.config.empty()) apply_config_file(*c, a.config);
    a.cfg.rng_seed = resolve_seed(a.seed, a.cfg.rng_seed);
    auto data = opr::synth_generate(a.cfg, a.adjacency_m);
    const auto graph = opr::build_adjacency(data.locations, a.adjacency_m);
    opr::write_dataset(a.out, data.matrix, graph);
    std::cout << "wrote " << data.matrix.num_locations() << " locations x " << data.matrix.num_intervals()
              << " intervals, " << graph.edges().size() << " edges to " << a.out << '\n';
  });
}

struct IngestArgs {
  std::string locations, records, format = "space", out;
  double threshold = 0.90, adjacency_m = 50.0;
  opr::IngestOptions opt;
};

void add_ingest(CLI::App& app, IngestArgs& a) {
  auto* c = app.add_subcommand("ingest", "Convert raw parking records into a dataset directory");
  c->add_option("--locations", a.locations, "locations CSV (meter_id,lat,lon)")->required();
  c->add_option("--records", a.records, "records CSV")->required();
  c->add_option("--format", a.format, "space or street")->check(CLI::IsMember({"space", "street"}));
  c->add_option("--out", a.out, "output dataset directory")->required();
  c->add_option("--threshold", a.threshold, "street occupied-ratio threshold (strict)");
  c->add_option("--interval", a.opt.interval_minutes, "minutes per interval");
  c->add_option("--max-missing", a.opt.max_missing_fraction, "drop rows with more missing cells");
  c->add_option("--adjacency-m", a.adjacency_m, "edge distance threshold in meters");
  c->callback([&a] {
    require_file(a.locations, "locations file");
    require_file(a.records, "records file");
    const auto records = opr::csv::read_file(a.records);
    const auto result = a.format == "space" ? opr::parse_space_records(records, a.opt)
                                            : opr::parse_street_records(records, a.threshold, a.opt);
    auto locations = opr::align_locations(result.matrix, opr::parse_locations(opr::csv::read_file(a.locations)));
    const auto graph = opr::build_adjacency(std::move(locations), a.adjacency_m);
    opr::write_dataset(a.out, result.matrix, graph);
    for (const auto& d : result.dropped) std::cout << "dropped " << d << " (too many missing intervals)\n";
    std::cout << "wrote " << result.matrix.num_locations() << " locations x " << result.matrix.num_intervals()
              << " intervals, " << graph.edges().size() << " edges to " << a.out << '\n';
  });
}

struct TrainArgs {
  opr::TrainConfig cfg;
  std::string data, out, config, activation = "relu";
  CLI::Option* seed = nullptr;
};

void add_train(CLI::App& app, TrainArgs& a) {
  auto* c = app.add_subcommand("train", "Train the ranking model");
  c->add_option("--data", a.data, "dataset directory")->required();
  c->add_option("--config", a.config, "key = value config file");
  c->add_option("--out", a.out, "output directory")->required();
  a.seed = c->add_option("--seed", a.cfg.rng_seed, "random seed");
  c->add_option("--steps", a.cfg.steps, "minibatch steps");
  c->add_option("--epochs", a.cfg.epochs, "epochs (overrides --steps when > 0)");
  c->add_option("--batch-size", a.cfg.batch_size, "samples per step");
  c->add_option("--lr", a.cfg.learning_rate, "Adam learning rate");
  c->add_option("--alpha", a.cfg.model.alpha, "turnover events per window");
  c->add_option("--beta", a.cfg.model.beta, "graph convolution rounds");
  c->add_option("--channels", a.cfg.model.channels, "conv channels");
  c->add_option("--width", a.cfg.model.width, "embedding width");
  c->add_option("--kernel-len", a.cfg.model.kernel_len, "conv kernel length");
  c->add_option("--activation", a.activation, "list activation: relu or softmax");
  c->add_option("--duration-scale", a.cfg.model.duration_scale, "divisor for the ongoing run length");
  c->add_option("--horizon", a.cfg.horizon_intervals, "prediction horizon in intervals");
  c->add_option("--lambda", a.cfg.lambda, "softmax-loss weight");
  c->add_option("--l2", a.cfg.l2_coeff, "L2 coefficient");
  c->add_option("--dropout", a.cfg.dropout_rate, "dropout rate");
  c->add_option("--train-fraction", a.cfg.train_fraction, "training split fraction");
  c->add_option("--val-fraction", a.cfg.val_fraction, "validation split fraction");
  c->add_option("--test-fraction", a.cfg.test_fraction, "test split fraction");
  c->add_option("--beta-prox", a.cfg.beta_prox, "label weight of proximity");
  c->add_option("--beta-dur", a.cfg.beta_dur, "label weight of vacancy duration");
  c->add_option("--duration-cap", a.cfg.duration_cap, "vacancy duration cap in intervals");
  c->add_option("--eval-every", a.cfg.eval_every, "steps between validation passes");
  c->add_option("--val-max-samples", a.cfg.val_max_samples, "validation samples per pass");
  c->callback([c, &a] {
    if (!a.config.empty()) apply_config_file(*c, a.config);
    a.cfg.rng_seed = resolve_seed(a.seed, a.cfg.rng_seed);
    a.cfg.model.activation = opr::parse_list_activation(a.activation);
    a.cfg.validate();
    require_dir(a.data, "dataset directory");
    const auto ds = opr::read_dataset(a.data);
    const auto splits = opr::build_dataset(ds.matrix, ds.graph, a.cfg);
    const auto result = opr::train_loop(splits, ds.graph, a.cfg);
    fs::create_directories(a.out);
    const fs::path out(a.out);
    opr::save_checkpoint((out / "model.ckpt").string(), result.best.snapshot());
    nlohmann::json manifest{{"format", "OPRLTR1"},
                            {"num_vertices", ds.graph.num_vertices()},
                            {"parameter_count", result.best.parameter_count()},
                            {"best_step", result.best_step},
                            {"best_val_ndcg1", result.best_val_ndcg1},
                            {"steps", result.steps},
                            {"train_samples", splits.train.size()},
                            {"val_samples", splits.val.size()},
                            {"test_samples", splits.test.size()},
                            {"train", a.cfg}};
    open_out(out / "model.json") << manifest.dump(2) << '\n';
    auto log = open_out(out / "train_log.csv");
    opr::write_train_log(log, result.log);
    std::cout << "trained " << result.steps << " steps; best val NDCG@1 " << result.best_val_ndcg1
              << " at step " << result.best_step << "; wrote " << (out / "model.ckpt").string() << '\n';
  });
}

struct EvalArgs {
  std::string data, checkpoint, out, baselines;
  bool scenarios = false;
  std::size_t max_wait = opr::kDefaultMaxWait;
};

void add_eval(CLI::App& app, EvalArgs& a) {
  auto* c = app.add_subcommand("eval", "Evaluate a checkpoint and baselines on the test split");
  c->add_option("--data", a.data, "dataset directory")->required();
  c->add_option("--checkpoint", a.checkpoint, "model checkpoint (model.ckpt)")->required();
  c->add_option("--out", a.out, "report directory")->required();
  c->add_option("--baselines", a.baselines, "comma-separated: persistence,historical_mean");
  c->add_flag("--scenarios", a.scenarios, "also report workday/weekend/daytime/nighttime slices");
  c->add_option("--max-wait", a.max_wait, "waiting-time cap in intervals");
  c->callback([&a] {
    std::vector<opr::Predictor> predictors;
    if (!a.baselines.empty()) {
      for (const auto& name : opr::csv::split(a.baselines)) predictors.push_back(opr::parse_predictor(name));
    }
    require_dir(a.data, "dataset directory");
    const auto ds = opr::read_dataset(a.data);
    const auto model = load_model(a.checkpoint, ds.graph);
    const auto splits = opr::build_dataset(ds.matrix, ds.graph, model.train);
    if (splits.test.empty()) throw opr::DataError("test split is empty");
    const std::size_t h = model.train.horizon_intervals;

    std::vector<std::pair<std::string, std::vector<opr::RankedQueryResult>>> runs;
    runs.emplace_back("opr-ltr", opr::rank_samples(model.params, splits.test, ds.graph, h));
    const std::size_t train_end = opr::usable_range(ds.matrix, model.train).first +
                                  opr::split_sizes(splits.train.size() + splits.val.size() + splits.test.size(),
                                                   model.train).train;
    const opr::HistoricalMean history(ds.matrix, train_end);
    for (auto p : predictors) {
      std::vector<opr::RankedQueryResult> results;
      for (const auto& s : splits.test) {
        auto r = opr::baseline_predict_then_recommend(ds.matrix, ds.graph, s.time_index, h, p, &history, s.labels);
        results.insert(results.end(), r.begin(), r.end());
      }
      runs.emplace_back(opr::to_string(p), std::move(results));
    }
    std::vector<opr::MetricsReport> reports;
    for (const auto& [name, results] : runs) {
      if (a.scenarios) {
        for (auto& r : opr::slice_scenarios(results, ds.matrix, name, a.max_wait)) reports.push_back(std::move(r));
      } else {
        reports.push_back(opr::summarize(results, ds.matrix, name, "all", a.max_wait));
      }
    }
    fs::create_directories(a.out);
    const fs::path out(a.out);
    open_out(out / "metrics.json") << nlohmann::json{{"reports", reports}}.dump(2) << '\n';
    {
      auto os = open_out(out / "metrics.csv");
      opr::write_metrics_csv(os, reports);
    }
    {
      auto os = open_out(out / "plot_data.csv");
      opr::write_plot_data(os, reports);
    }
    for (const auto& r : reports) {
      if (r.scenario != "all") continue;
      std::printf("%-16s NDCG@1 %.4f  NDCG@5 %.4f  MAP@1 %.4f  MAP@5 %.4f  AWTP@1 %.3f  RNWTR@1 %.4f\n",
                  r.model.c_str(), r.ndcg1.mean, r.ndcg5.mean, r.map1.mean, r.map5.mean, r.awtp[0], r.rnwtr[0]);
    }
  });
}

struct RecommendArgs {
  std::string checkpoint, data, vertex, time;
  std::size_t top = 5;
};

void add_recommend(CLI::App& app, RecommendArgs& a) {
  auto* c = app.add_subcommand("recommend", "Print the ranked recommendation list for one query");
  c->add_option("--checkpoint", a.checkpoint, "model checkpoint (model.ckpt)")->required();
  c->add_option("--data", a.data, "dataset directory")->required();
  c->add_option("--vertex", a.vertex, "destination meter id or vertex index")->required();
  c->add_option("--time", a.time, "query interval index or ISO-8601 timestamp")->required();
  c->add_option("--top", a.top, "list length")->check(CLI::PositiveNumber);
  c->callback([&a] {
    require_dir(a.data, "dataset directory");
    const auto ds = opr::read_dataset(a.data);
    const auto model = load_model(a.checkpoint, ds.graph);
    std::size_t d = 0;
    if (auto idx = ds.matrix.index_of(a.vertex)) {
      d = *idx;
    } else if (auto n = opr::csv::to_number<std::size_t>(a.vertex); n && *n < ds.graph.num_vertices()) {
      d = *n;
    } else {
      throw opr::DataError("unknown vertex '" + a.vertex + "'");
    }
    std::size_t t = 0;
    if (auto ts = opr::parse_timestamp(a.time)) {
      const opr::Minutes off = *ts - ds.matrix.start_time();
      if (off < 0 || off / ds.matrix.interval_minutes() >= static_cast<opr::Minutes>(ds.matrix.num_intervals())) {
        throw opr::DataError("time '" + a.time + "' is outside the dataset");
      }
      t = static_cast<std::size_t>(off / ds.matrix.interval_minutes());
    } else if (auto n = opr::csv::to_number<std::size_t>(a.time); n && *n < ds.matrix.num_intervals()) {
      t = *n;
    } else {
      throw opr::DataError("invalid time '" + a.time + "'");
    }
    const std::size_t N = ds.graph.num_vertices();
    const opr::Tensor adjacency({N, N}, opr::normalized_adjacency(ds.graph));
    const opr::RunIndex runs(ds.matrix);
    const auto scores = opr::predict_scores(model.params, runs.window_at(t, model.train.model.alpha), adjacency);
    const std::span<const double> row(scores.data() + d * N, N);
    const auto hops = opr::hop_distances(ds.graph, d);
    for (std::size_t j : opr::recommend_top_n(row, a.top, hops)) {
      std::printf("%s,%.6f\n", ds.matrix.meter_ids()[j].c_str(), row[j]);
    }
  });
}

struct BenchArgs {
  std::string data, out;
  std::size_t alpha = 5, points = 20;
};

void add_bench(CLI::App& app, BenchArgs& a) {
  auto* c = app.add_subcommand("bench", "Compare grid and event-path storage and access costs");
  c->add_option("--data", a.data, "dataset directory")->required();
  c->add_option("--alpha", a.alpha, "events reviewed per location")->check(CLI::PositiveNumber);
  c->add_option("--out", a.out, "report directory")->required();
  c->add_option("--points", a.points, "prefix lengths in the storage curve")->check(CLI::PositiveNumber);
  c->callback([&a] {
    require_dir(a.data, "dataset directory");
    const auto ds = opr::read_dataset(a.data);
    const auto report = opr::bench_complexity(ds.matrix, a.alpha);
    fs::create_directories(a.out);
    const fs::path out(a.out);
    open_out(out / "complexity.json") << nlohmann::json(report).dump(2) << '\n';
    auto os = open_out(out / "storage_curve.csv");
    os << "n,f_ST,f_ES\n";
    for (const auto& p : opr::storage_curve(ds.matrix, a.points)) os << p.n << ',' << p.f_st << ',' << p.f_es << '\n';
    std::cout << "stgraph_cells " << report.stgraph_cells << "  esgraph_nodes " << report.esgraph_nodes
              << "  esgraph_edges " << report.esgraph_edges << '\n';
  });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"On-street parking recommendation with event-path graphs and listwise ranking"};
  app.require_subcommand(1);
  SynthArgs synth;
  IngestArgs ingest;
  TrainArgs train;
  EvalArgs eval;
  RecommendArgs recommend;
  BenchArgs bench;
  add_synth(app, synth);
  add_ingest(app, ingest);
  add_train(app, train);
  add_eval(app, eval);
  add_recommend(app, recommend);
  add_bench(app, bench);
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 3;
  } catch (const opr::DataError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const opr::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

// metagame: dataset generation, enumeration, digraph evaluation, self-play
// and run aggregation.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "metagame/drl.hpp"
#include "metagame/error.hpp"

namespace fs = std::filesystem;
using namespace metagame;

namespace {

constexpr const char* kCacheEnv = "METAGAME_CACHE_DIR";

[[noreturn]] void usage(const std::string& message) { throw Error(ErrorKind::kUsage, message); }

nlohmann::json read_json(const std::string& file) {
  std::ifstream in(file);
  if (!in) throw Error(ErrorKind::kIo, "cannot open '" + file + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorKind::kIo, "malformed JSON in '" + file + "': " + ex.what());
  }
}

void write_text(const fs::path& file, const std::string& text) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw Error(ErrorKind::kIo, "cannot write '" + file.string() + "'");
  out << text;
  if (!out) throw Error(ErrorKind::kIo, "write failed for '" + file.string() + "'");
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw Error(ErrorKind::kIo, "cannot create directory '" + dir.string() + "'");
}

/// A preset name (game1, game2, tiny) or a path to a config file.
GameConfig resolve_config(const std::string& name) {
  if (fs::exists(name)) return load_config(name);
  fs::path preset = fs::path(METAGAME_PRESET_DIR) / (name + ".json");
  if (fs::exists(preset)) return load_config(preset.string());
  throw Error(ErrorKind::kIo, "no config file or preset named '" + name + "'");
}

Dataset resolve_dataset(const GameConfig& config, const std::string& dir) {
  Dataset ds = dir.empty() ? make_default_dataset(config) : load_dataset(dir);
  auto problems = validate_dataset(config, ds);
  if (!problems.empty()) {
    std::string msg = "dataset does not fit the game config:";
    for (const auto& p : problems) msg += "\n  " + p;
    throw Error(ErrorKind::kSchema, msg);
  }
  return ds;
}

ScoreSpec resolve_spec(const std::string& file) {
  ScoreSpec spec = file.empty() ? ScoreSpec{} : ScoreSpec::from_json(read_json(file));
  spec.validate();
  return spec;
}

RegressorHyper resolve_hyper(const std::string& file, const std::string& family) {
  RegressorHyper h = file.empty() ? RegressorHyper{} : RegressorHyper::from_json(read_json(file));
  if (family == "ridge") h.family = RegressorFamily::kRidgeWindow;
  else if (family == "mlp") h.family = RegressorFamily::kMlpWindow;
  return h;
}

std::string resolve_cache_dir(const std::string& flag) {
  if (!flag.empty()) return flag;
  const char* env = std::getenv(kCacheEnv);
  return env ? std::string(env) : std::string();
}

/// "a->b,c->d" (commas or whitespace) into an edge set.
EdgeBits parse_edges(const GameConfig& config, const std::string& text) {
  EdgeBits bits;
  std::string spaced = text;
  for (char& c : spaced)
    if (c == ',' || c == ';') c = ' ';
  std::istringstream in(spaced);
  std::string token;
  while (in >> token) {
    auto arrow = token.find("->");
    if (arrow == std::string::npos) usage("edge '" + token + "' is not of the form source->target");
    auto from = config.find_node(token.substr(0, arrow));
    auto to = config.find_node(token.substr(arrow + 2));
    if (!from || !to) throw Error(ErrorKind::kInvalidArgument, "unknown node in edge '" + token + "'");
    int e = config.edge_index(*from, *to);
    if (e < 0) throw Error(ErrorKind::kInvalidArgument, "'" + token + "' is not a candidate edge of " + config.name());
    bits.set(e);
  }
  return bits;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// ---------------------------------------------------------------- gen-data

struct GenDataArgs {
  std::string config = "game1";
  std::string out;
  std::uint64_t seed = kDefaultDatasetSeed;
  int n_train = 50;
  int n_test = 150;
  int steps = 200;
  double noise = 0.0;
  std::string truth = "linear";
  std::string storage = "binary";
};

int cmd_gen_data(const GenDataArgs& a) {
  if (a.n_train < 2) usage("--n-train must be at least 2");
  if (a.n_test < 1) usage("--n-test must be at least 1");
  if (a.steps < 2) usage("--steps must be at least 2");
  if (a.noise < 0.0) usage("--noise must be non-negative");
  GameConfig config = resolve_config(a.config);
  TruthModel truth = default_truth();
  if (a.truth == "damage") truth.kind = TruthKind::kDamageFriction;
  truth.noise = a.noise;
  truth.seed = a.seed;
  LoadingProtocol protocol;
  protocol.steps = a.steps;
  ensure_dir(a.out);

  Dataset ds = make_dataset(config, truth, a.n_train, a.n_test, a.seed, protocol);
  nlohmann::json generator{{"seed", a.seed},     {"truth", truth.to_json()}, {"steps", a.steps},
                           {"n_train", a.n_train}, {"n_test", a.n_test},     {"config", config.name()}};
  save_dataset(ds, a.out, a.storage == "csv" ? StorageMode::kCsv : StorageMode::kBinary, generator);
  std::printf("paths=%zu steps=%d train=%zu test=%zu storage=%s fingerprint=%016llx\n", ds.paths.size(), a.steps,
              ds.train_ids.size(), ds.test_ids.size(), a.storage.c_str(),
              static_cast<unsigned long long>(ds.fingerprint()));
  return 0;
}

// --------------------------------------------------------------- enumerate

struct EnumerateArgs {
  std::string config = "game1";
  std::uint64_t budget = 0;
  std::string out;
};

int cmd_enumerate(const EnumerateArgs& a) {
  GameConfig config = resolve_config(a.config);
  if (!a.out.empty()) ensure_dir(fs::absolute(a.out).parent_path());
  EnumerationOptions opt;
  opt.budget = a.budget;
  opt.collect_admissible = !a.out.empty();
  auto r = enumerate(config, opt);
  const char* rel = r.exact ? "=" : ">=";
  std::printf("states%s%llu admissible%s%llu\n", rel, static_cast<unsigned long long>(r.state_count), rel,
              static_cast<unsigned long long>(r.admissible_count));
  if (!a.out.empty()) {
    std::string text;
    for (const auto& bits : r.admissible_sets) text += bits.to_hex() + "\n";
    write_text(a.out, text);
  }
  return 0;
}

// ---------------------------------------------------------------- evaluate

struct EvaluateArgs {
  std::string config = "game1";
  std::string data;
  std::string edges;
  std::string digraph;
  std::string spec;
  std::string hyper;
  std::string regressor;
  std::string cache_dir;
  std::string out;
  std::string model_out;
};

int cmd_evaluate(const EvaluateArgs& a) {
  GameConfig config = resolve_config(a.config);
  if (a.edges.empty() == a.digraph.empty()) usage("give exactly one of --edges or --digraph");
  EdgeBits bits = a.digraph.empty() ? parse_edges(config, a.edges) : EdgeBits::from_hex(a.digraph);
  std::string why = admissibility_violation(config, bits);
  if (!why.empty()) throw Error(ErrorKind::kInadmissible, "digraph is not admissible: " + why);
  Dataset ds = resolve_dataset(config, a.data);
  ScoreSpec spec = resolve_spec(a.spec);
  RegressorHyper hyper = resolve_hyper(a.hyper, a.regressor);
  std::string cache_dir = resolve_cache_dir(a.cache_dir);
  for (const auto& f : {a.out, a.model_out})
    if (!f.empty()) ensure_dir(fs::absolute(f).parent_path());

  ScoreCache cache = cache_dir.empty() ? ScoreCache() : ScoreCache(cache_dir);
  bool hit = false;
  ScoreReport r = evaluate_digraph(config, bits, ds, ds.fingerprint(), spec, hyper, &cache, &hit);
  std::printf("score=%s a_calibration=%s a_prediction=%s a_consistency=%d cache=%s digraph=%s\n", fmt(r.score).c_str(),
              fmt(r.a_calibration).c_str(), fmt(r.a_prediction).c_str(), r.a_consistency, hit ? "hit" : "miss",
              r.digraph.c_str());
  if (!a.out.empty()) write_text(a.out, r.to_json().dump(2) + "\n");
  if (!a.model_out.empty()) {
    auto model = calibrate(config, extract_plan(config, bits, hyper.window), ds.split(Split::kTrain), hyper);
    save_model(model, a.model_out);
  }
  return 0;
}

// ---------------------------------------------------------------- selfplay

struct SelfplayArgs {
  std::string config = "game1";
  std::string data;
  std::string spec;
  std::string hyper;
  std::string regressor;
  std::string schedule;
  std::string out;
  std::string cache_dir;
  std::optional<std::uint64_t> seed;
  std::optional<int> iterations;
  std::optional<int> games;
  std::optional<int> simulations;
  int threads = 1;
  bool resume = false;
};

void write_report_files(const fs::path& dir, const RunReport& report) {
  auto tmp = dir / "report.json.tmp";
  write_text(tmp, report.to_json().dump(2) + "\n");
  fs::rename(tmp, dir / "report.json");
  std::ostringstream csv;
  write_iterations_csv(csv, report);
  write_text(dir / "iterations.csv", csv.str());
}

int cmd_selfplay(const SelfplayArgs& a) {
  if (a.threads < 1) usage("--threads must be at least 1");
  GameConfig config = resolve_config(a.config);
  DrlSchedule schedule = a.schedule.empty() ? DrlSchedule{} : DrlSchedule::from_json(read_json(a.schedule));
  if (a.seed) schedule.seed = *a.seed;
  if (a.iterations) schedule.explore_iterations = *a.iterations;
  if (a.games) schedule.games_per_iteration = *a.games;
  if (a.simulations) schedule.search.simulations = *a.simulations;
  schedule.validate();
  Dataset ds = resolve_dataset(config, a.data);
  ScoreSpec spec = resolve_spec(a.spec);
  RegressorHyper hyper = resolve_hyper(a.hyper, a.regressor);
  std::string cache_dir = resolve_cache_dir(a.cache_dir);
  const fs::path out(a.out);
  ensure_dir(out);

  ScoreCache cache = cache_dir.empty() ? ScoreCache() : ScoreCache(cache_dir);
  RunOptions opt;
  opt.threads = a.threads;
  opt.checkpoint_dir = out.string();
  opt.resume = a.resume;
  opt.on_iteration = [&](const RunReport& partial) {
    write_report_files(out, partial);
    const auto& it = partial.iterations.back();
    std::fprintf(stderr, "iteration %d tau=%g mean=%.4f max=%.4f replay=%zu\n", it.iteration, it.tau, it.mean, it.max,
                 it.replay_size);
  };
  RunReport report = run_drl(config, ds, spec, hyper, schedule, cache, opt);
  write_report_files(out, report);

  EdgeBits best = EdgeBits::from_hex(report.best_digraph);
  auto model = calibrate(config, extract_plan(config, best, hyper.window), ds.split(Split::kTrain), hyper);
  save_model(model, (out / "best_model.bin").string());

  std::string edges;
  for (const auto& e : report.best_edges) edges += (edges.empty() ? "" : ",") + e;
  std::printf("iterations=%zu best_score=%s best_edges=%s\n", report.iterations.size(), fmt(report.best_score).c_str(),
              edges.c_str());
  return 0;
}

// ------------------------------------------------------------------ report

struct ReportArgs {
  std::vector<std::string> inputs;
  std::string out_csv;
  std::string out_json;
};

int cmd_report(const ReportArgs& a) {
  std::vector<RunReport> runs;
  for (const auto& in : a.inputs) {
    fs::path file = fs::is_directory(in) ? fs::path(in) / "report.json" : fs::path(in);
    runs.push_back(RunReport::from_json(read_json(file.string())));
  }
  if (runs.empty()) usage("no run reports given");
  auto without_seed = [](nlohmann::json schedule) {
    schedule.erase("seed");
    return schedule;
  };
  for (const auto& r : runs) {
    if (without_seed(r.schedule) != without_seed(runs[0].schedule) || r.config != runs[0].config ||
        r.iterations.size() != runs[0].iterations.size()) {
      throw Error(ErrorKind::kInvalidArgument, "run reports have mismatched configs or schedules");
    }
  }

  // Per iteration: statistics of the per-run mean SCOREs, plus pooled games.
  std::string csv = "iteration,tau,runs,games,mean,std,q1,median,q3,min,max,pooled_mean\n";
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t i = 0; i < runs[0].iterations.size(); ++i) {
    IterationRecord across;
    double pooled = 0.0;
    std::size_t games = 0;
    for (const auto& r : runs) {
      across.scores.push_back(r.iterations[i].mean);
      for (double s : r.iterations[i].scores) pooled += s;
      games += r.iterations[i].scores.size();
    }
    summarize(across);
    pooled /= static_cast<double>(games);
    const auto& first = runs[0].iterations[i];
    csv += std::to_string(first.iteration) + "," + fmt(first.tau) + "," + std::to_string(runs.size()) + "," +
           std::to_string(games) + "," + fmt(across.mean) + "," + fmt(across.stddev) + "," + fmt(across.q1) + "," +
           fmt(across.median) + "," + fmt(across.q3) + "," + fmt(across.min) + "," + fmt(across.max) + "," +
           fmt(pooled) + "\n";
    rows.push_back({{"iteration", first.iteration}, {"tau", first.tau},  {"runs", runs.size()},
                    {"games", games},               {"mean", across.mean}, {"std", across.stddev},
                    {"q1", across.q1},              {"median", across.median}, {"q3", across.q3},
                    {"min", across.min},            {"max", across.max}, {"pooled_mean", pooled}});
  }
  if (!a.out_csv.empty()) write_text(a.out_csv, csv);
  if (!a.out_json.empty()) write_text(a.out_json, nlohmann::json{{"config", runs[0].config}, {"iterations", rows}}.dump(2) + "\n");
  if (a.out_csv.empty() && a.out_json.empty()) std::fputs(csv.c_str(), stdout);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Constitutive-model meta-modeling game: data, enumeration, scoring and self-play"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "metagame 1.0");

  GenDataArgs gen;
  auto* g = app.add_subcommand("gen-data", "Generate a synthetic planted-truth dataset");
  g->add_option("--config", gen.config, "Preset name or config file")->capture_default_str();
  g->add_option("--out", gen.out, "Output directory")->required();
  g->add_option("--seed", gen.seed, "Generator seed")->capture_default_str();
  g->add_option("--n-train", gen.n_train, "Training paths")->capture_default_str();
  g->add_option("--n-test", gen.n_test, "Test paths")->capture_default_str();
  g->add_option("--steps", gen.steps, "Steps per path")->capture_default_str();
  g->add_option("--noise", gen.noise, "Noise level")->capture_default_str();
  g->add_option("--truth", gen.truth, "Planted truth")->check(CLI::IsMember({"linear", "damage"}))->capture_default_str();
  g->add_option("--storage", gen.storage, "File layout")->check(CLI::IsMember({"csv", "binary"}))->capture_default_str();

  EnumerateArgs en;
  auto* e = app.add_subcommand("enumerate", "Count reachable and admissible game states");
  e->add_option("config", en.config, "Preset name or config file")->capture_default_str();
  e->add_option("--budget", en.budget, "Maximum states to visit (0 = exhaustive)")->capture_default_str();
  e->add_option("--out", en.out, "Write admissible digraphs (hex, one per line)");

  EvaluateArgs ev;
  auto* v = app.add_subcommand("evaluate", "Calibrate and score one digraph");
  v->add_option("--config", ev.config, "Preset name or config file")->capture_default_str();
  v->add_option("--data", ev.data, "Dataset directory (default: regenerated default dataset)");
  v->add_option("--edges", ev.edges, "Edge list, e.g. \"delta_nm->CN,CN->t_nm\"");
  v->add_option("--digraph", ev.digraph, "Edge set as hex key");
  v->add_option("--spec", ev.spec, "Score spec JSON");
  v->add_option("--hyper", ev.hyper, "Regressor hyperparameter JSON");
  v->add_option("--regressor", ev.regressor, "Regressor family")->check(CLI::IsMember({"ridge", "mlp"}));
  v->add_option("--cache-dir", ev.cache_dir, std::string("Score cache directory (env ") + kCacheEnv + ")");
  v->add_option("--out", ev.out, "Write the score report JSON");
  v->add_option("--model-out", ev.model_out, "Write the calibrated model");

  SelfplayArgs sp;
  auto* s = app.add_subcommand("selfplay", "Run self-play improvement");
  s->add_option("--config", sp.config, "Preset name or config file")->capture_default_str();
  s->add_option("--data", sp.data, "Dataset directory (default: regenerated default dataset)");
  s->add_option("--spec", sp.spec, "Score spec JSON");
  s->add_option("--hyper", sp.hyper, "Regressor hyperparameter JSON");
  s->add_option("--regressor", sp.regressor, "Regressor family")->check(CLI::IsMember({"ridge", "mlp"}));
  s->add_option("--schedule", sp.schedule, "Schedule JSON");
  s->add_option("--out", sp.out, "Output directory")->required();
  s->add_option("--cache-dir", sp.cache_dir, std::string("Score cache directory (env ") + kCacheEnv + ")");
  s->add_option("--seed", sp.seed, "Run seed (overrides the schedule)");
  s->add_option("--iterations", sp.iterations, "Exploration iterations");
  s->add_option("--games", sp.games, "Games per iteration");
  s->add_option("--simulations", sp.simulations, "MCTS simulations per move");
  s->add_option("--threads", sp.threads, "Concurrent games (1 = bitwise reproducible)")->capture_default_str();
  s->add_flag("--resume", sp.resume, "Continue from the checkpoint in --out");

  ReportArgs rp;
  auto* r = app.add_subcommand("report", "Aggregate run reports per iteration");
  r->add_option("inputs", rp.inputs, "report.json files or run directories")->required();
  r->add_option("--out-csv", rp.out_csv, "Write the aggregate CSV");
  r->add_option("--out-json", rp.out_json, "Write the aggregate JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::CallForAllHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::CallForVersion& ex) {
    return app.exit(ex);
  } catch (const CLI::ParseError& ex) {
    std::fprintf(stderr, "error: usage: %s\n", ex.what());
    return 2;
  }

  try {
    if (*g) return cmd_gen_data(gen);
    if (*e) return cmd_enumerate(en);
    if (*v) return cmd_evaluate(ev);
    if (*s) return cmd_selfplay(sp);
    if (*r) return cmd_report(rp);
  } catch (const Error& ex) {
    std::fprintf(stderr, "error: %s: %s\n", std::string(to_string(ex.kind())).c_str(), ex.what());
    return ex.kind() == ErrorKind::kUsage ? 2 : 1;
  } catch (const std::exception& ex) {
    std::fprintf(stderr, "error: internal: %s\n", ex.what());
    return 1;
  }
  return 0;
}

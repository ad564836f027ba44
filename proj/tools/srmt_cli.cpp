// srmt: map generation, training, evaluation and memory analysis.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "srmt/errors.hpp"
#include "srmt/evalkit.hpp"
#include "srmt/maps.hpp"
#include "srmt/numkit/params.hpp"
#include "srmt/scenario.hpp"
#include "srmt/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace srmt;

namespace {

enum Exit { kOk = 0, kConfig = 2, kRuntime = 3, kIo = 4 };

std::string read_text(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read " + path.string());
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

void make_dirs(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

// Writes and reads back, so a truncated or malformed file is caught here.
void write_json(const fs::path& path, const json& doc) {
  {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write " + path.string());
    f << doc.dump(2) << '\n';
    if (!f) throw IoError("failed writing " + path.string());
  }
  if (json::parse(read_text(path), nullptr, false) != doc) throw IoError(path.string() + ": read-back mismatch");
}

// Every line must have as many fields as the header.
void check_csv(const fs::path& path, const std::string& header_prefix) {
  std::istringstream in(read_text(path));
  std::string line;
  if (!std::getline(in, line) || line.rfind(header_prefix, 0) != 0)
    throw IoError(path.string() + ": unexpected header");
  const auto fields = std::count(line.begin(), line.end(), ',');
  int n = 1;
  while (std::getline(in, line)) {
    ++n;
    if (std::count(line.begin(), line.end(), ',') != fields)
      throw IoError(path.string() + ": line " + std::to_string(n) + " has the wrong field count");
  }
}

std::string numbered(const std::string& stem, std::size_t i, const std::string& suffix) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%03zu", i);
  return stem + "_" + buf + suffix + ".json";
}

int clamp_workers(int workers) {
  if (workers > 0) return workers;
  return static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
}

// ---------------------------------------------------------------------------
// gen-maps

struct GenMapsArgs {
  std::string kind, out, lengths = "3..30", input;
  std::uint64_t seed = 0;
  int count = 16, size = 20, width = 0, height = 0, room_size = 5, agents = 0;
  double density = 0.3;
  bool fixed_placement = false;
};

int gen_maps(const GenMapsArgs& a) {
  const fs::path out(a.out);
  make_dirs(out);
  const int w = a.width > 0 ? a.width : a.size, h = a.height > 0 ? a.height : a.size;
  json manifest{{"kind", a.kind}, {"seed", a.seed}, {"files", json::array()}};
  auto emit = [&](const std::string& file, const maps::MapInstance& inst, json extra) {
    maps::save_instance(out / file, inst);
    maps::load_instance(out / file);  // schema check on the written file
    extra["file"] = file;
    manifest["files"].push_back(std::move(extra));
  };
  // Optional random agent placement for generated grids.
  auto with_agents = [&](GridMap map, std::uint64_t seed) {
    maps::MapInstance inst{std::move(map), {}, {}};
    if (a.agents > 0) place_agents(inst.map, a.agents, seed, inst.starts, inst.goals);
    return inst;
  };
  std::mt19937_64 rng(a.seed);

  if (a.kind == "bottleneck") {
    std::vector<int> lengths;
    if (a.lengths.find("..") != std::string::npos) {
      const auto dots = a.lengths.find("..");
      int lo = 0, hi = 0;
      try {
        lo = std::stoi(a.lengths.substr(0, dots));
        hi = std::stoi(a.lengths.substr(dots + 2));
      } catch (const std::exception&) {
        throw ConfigError("--lengths: expected a..b or a comma list, got '" + a.lengths + "'");
      }
      lengths = maps::sample_corridor_lengths(a.count, lo, hi, a.seed);
    } else {
      lengths = eval::parse_range(a.lengths);
    }
    manifest["room_size"] = a.room_size;
    manifest["fixed_placement"] = a.fixed_placement;
    for (std::size_t i = 0; i < lengths.size(); ++i) {
      auto inst = maps::gen_bottleneck({lengths[i], a.room_size}, rng(), a.fixed_placement);
      inst.map.name = "bottleneck-" + std::to_string(lengths[i]);
      emit(numbered("bottleneck", i, "_L" + std::to_string(lengths[i])), inst, {{"corridor_length", lengths[i]}});
    }
  } else if (a.kind == "random" || a.kind == "maze") {
    if (a.count < 1) throw ConfigError("--count must be positive");
    manifest["width"] = w;
    manifest["height"] = h;
    if (a.kind == "random") manifest["density"] = a.density;
    manifest["agents"] = a.agents;
    for (int i = 0; i < a.count; ++i) {
      const auto map_seed = rng(), agent_seed = rng();
      GridMap g = a.kind == "random" ? maps::gen_random(w, h, a.density, map_seed) : maps::gen_maze(w, h, map_seed);
      g.name = a.kind + "-" + std::to_string(i);
      emit(numbered(a.kind, static_cast<std::size_t>(i), ""), with_agents(std::move(g), agent_seed), json::object());
    }
  } else if (a.kind == "movingai-import") {
    if (a.input.empty()) throw ConfigError("--kind movingai-import needs --in FILE");
    const fs::path in(a.input);
    GridMap g = maps::parse_movingai(read_text(in)).to_grid();
    g.name = in.stem().string();
    manifest["source"] = in.filename().string();
    manifest["agents"] = a.agents;
    emit(in.stem().string() + ".json", with_agents(std::move(g), rng()), json::object());
  } else {
    throw ConfigError("--kind must be bottleneck, random, maze or movingai-import");
  }
  write_json(out / "manifest.json", manifest);
  std::cout << manifest["files"].size() << " map(s) written to " << out.string() << '\n';
  return kOk;
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  std::string config, resume, out;
  int workers = 0;
};

int train_cmd(const TrainArgs& a, int workers) {
  auto cfg = train::ExperimentConfig::load(a.config);
  if (!a.out.empty()) cfg.output_dir = a.out;
  const fs::path out(cfg.output_dir);
  for (const char* sub : {"configs", "checkpoints", "logs", "reports"}) make_dirs(out / sub);
  write_json(out / "configs" / "experiment.json", cfg.to_json());

  train::Trainer trainer(cfg, workers);
  if (!a.resume.empty()) {
    trainer.load(a.resume);
    std::cerr << "resumed at iteration " << trainer.iteration() << ", " << trainer.env_steps() << " env steps\n";
  }
  trainer.run(out, [&](const train::IterationLog& log) {
    std::fprintf(stderr, "iter %5d  steps %10lld  reward %+.4f  csr %.3f  kl %.5f  lr %.2e  %.1fs\n", log.iteration,
                 static_cast<long long>(log.env_steps), log.reward_mean, log.csr, log.update.kl, log.update.lr,
                 log.seconds);
  });
  std::cout << "final checkpoint: " << (out / "checkpoints" / "final.ckpt").string() << '\n';
  return kOk;
}

// ---------------------------------------------------------------------------
// eval

struct EvalArgs {
  std::string ckpt, maps_dir, sweep, out, mode;
  int seeds = 10, episode_length = 0, agents = 0, room_size = 0;
  std::uint64_t seed = 0;
  bool record_memory = false, greedy = false;
};

std::vector<eval::InstanceSpec> load_instances(const fs::path& dir, int agents, std::uint64_t seed) {
  if (!fs::is_directory(dir)) throw IoError(dir.string() + " is not a directory");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ".json" && e.path().filename() != "manifest.json") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::vector<eval::InstanceSpec> out;
  for (std::size_t i = 0; i < files.size(); ++i) {
    auto inst = maps::load_instance(files[i]);
    eval::InstanceSpec spec;
    spec.id = files[i].stem().string();
    if (agents > 0) {
      place_agents(inst.map, agents, seed + i, spec.starts, spec.goals);
    } else if (!inst.starts.empty()) {
      spec.starts = inst.starts;
      spec.goals = inst.goals;
    } else {
      throw ConfigError(files[i].string() + " has no agents; pass --agents N");
    }
    spec.map = std::make_shared<const GridMap>(std::move(inst.map));
    out.push_back(std::move(spec));
  }
  if (out.empty()) throw ConfigError("no map JSON files in " + dir.string());
  return out;
}

int eval_cmd(const EvalArgs& a, int workers) {
  if (a.maps_dir.empty() == a.sweep.empty()) throw ConfigError("eval needs exactly one of --maps or --sweep-corridors");
  if (a.seeds < 1) throw ConfigError("--seeds must be positive");
  const auto ckpt = nk::load_checkpoint(a.ckpt);
  if (!ckpt.meta.contains("config")) throw IoError(a.ckpt + " does not record an experiment configuration");
  const auto exp = train::ExperimentConfig::from_json(ckpt.meta["config"]);
  policy::Policy pol(exp.policy);
  nk::restore_params(pol.params(), ckpt);

  std::vector<std::uint64_t> seeds;
  for (int k = 0; k < a.seeds; ++k) seeds.push_back(a.seed + static_cast<std::uint64_t>(k));
  eval::SweepOptions opt;
  opt.greedy = a.greedy;
  opt.record_memory = a.record_memory;
  opt.threads = workers;
  opt.room_size = a.room_size > 0 ? a.room_size : exp.maps.room_size;

  const fs::path out(a.out);
  for (const char* sub : {"configs", "reports"}) make_dirs(out / sub);
  json effective{{"checkpoint", a.ckpt},   {"seed", a.seed},         {"seeds", a.seeds},
                 {"greedy", a.greedy},     {"record_memory", a.record_memory},
                 {"experiment", exp.to_json()}};

  eval::SweepResult result;
  if (!a.sweep.empty()) {
    const auto lengths = eval::parse_range(a.sweep);
    effective["sweep_corridors"] = lengths;
    effective["room_size"] = opt.room_size;
    write_json(out / "configs" / "eval.json", effective);
    result = eval::sweep_corridors(pol, lengths, seeds, opt);
  } else {
    env::EnvConfig env = exp.env;
    if (!a.mode.empty()) env.mode = env::mode_from_string(a.mode);
    if (a.episode_length > 0) env.episode_length = a.episode_length;
    auto instances = load_instances(a.maps_dir, a.agents, a.seed);
    effective["maps"] = a.maps_dir;
    effective["agents"] = a.agents;
    effective["mode"] = env::to_string(env.mode);
    effective["episode_length"] = env.episode_length;
    write_json(out / "configs" / "eval.json", effective);
    result = eval::evaluate_instances(pol, instances, seeds, env, opt);
  }

  const auto csv = out / "reports" / "metrics.csv";
  eval::write_report_csv(csv, result.report);
  check_csv(csv, result.report.key_name + ",metric,value,ci95,n");
  write_json(out / "reports" / "metrics.json", result.report.to_json());

  if (a.record_memory) {
    make_dirs(out / "reports" / "episodes");
    make_dirs(out / "reports" / "memory");
    for (std::size_t i = 0; i < result.episodes.size(); ++i) {
      const auto& ep = result.episodes[i];
      const std::string stem = ep.map_id + "_seed" + std::to_string(seeds[i % seeds.size()]);
      write_json(out / "reports" / "episodes" / (stem + ".json"), ep.to_json());
      const auto trace = out / "reports" / "memory" / (stem + ".csv");
      eval::write_trace_csv(trace, eval::memory_trace(ep));
      check_csv(trace, "step,agent_a,agent_b");
    }
  }
  for (const auto& r : result.report.rows)
    std::printf("%-24s %-12s %12.6g  ±%.4g  (n=%d)\n", r.key.c_str(), r.metric.c_str(), r.value, r.ci95, r.n);
  return kOk;
}

// ---------------------------------------------------------------------------
// analyze-memory

int analyze_memory(const std::string& trace_path, const std::string& out_path) {
  const auto doc = json::parse(read_text(trace_path), nullptr, false);
  if (doc.is_discarded()) throw ConfigError(trace_path + ": not valid JSON");
  const auto ep = eval::EpisodeRecord::from_json(doc);
  if (ep.memory.empty()) throw ConfigError(trace_path + ": episode has no recorded memory (eval --record-memory)");
  const fs::path out(out_path);
  if (out.has_parent_path()) make_dirs(out.parent_path());
  const auto rows = eval::memory_trace(ep);
  eval::write_trace_csv(out, rows);
  check_csv(out, "step,agent_a,agent_b");
  std::cout << rows.size() << " rows written to " << out.string() << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Shared recurrent memory agents for grid pathfinding"};
  app.require_subcommand(1);
  int workers = 0;
  app.add_option("--workers", workers, "Thread cap for all parallel work (default: all cores)")->check(CLI::NonNegativeNumber);

  GenMapsArgs gm;
  auto* gen = app.add_subcommand("gen-maps", "Generate or import maps as JSON");
  gen->add_option("--kind", gm.kind, "bottleneck | random | maze | movingai-import")
      ->required()
      ->check(CLI::IsMember({"bottleneck", "random", "maze", "movingai-import"}));
  gen->add_option("--out", gm.out, "Output directory")->required();
  gen->add_option("--seed", gm.seed, "Generator seed");
  gen->add_option("--lengths", gm.lengths, "Corridor lengths: a..b samples --count lengths uniformly, a,b,c lists them");
  gen->add_option("--count", gm.count, "Number of maps");
  gen->add_option("--room-size", gm.room_size, "Bottleneck room side");
  gen->add_flag("--fixed-placement", gm.fixed_placement, "Bottleneck agents at the corridor ends");
  gen->add_option("--size", gm.size, "Square side for random and maze maps");
  gen->add_option("--width", gm.width, "Width (overrides --size)");
  gen->add_option("--height", gm.height, "Height (overrides --size)");
  gen->add_option("--density", gm.density, "Obstacle density for random maps");
  gen->add_option("--agents", gm.agents, "Place this many agents on each generated map");
  gen->add_option("--in", gm.input, "MovingAI .map file to import");

  TrainArgs ta;
  auto* tr = app.add_subcommand("train", "Train a policy from an experiment config");
  tr->add_option("--config", ta.config, "Experiment JSON")->required();
  tr->add_option("--resume", ta.resume, "Checkpoint to resume from");
  tr->add_option("--out", ta.out, "Output directory (overrides output_dir)");

  EvalArgs ea;
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
  ev->add_option("--ckpt", ea.ckpt, "Checkpoint file")->required();
  auto* maps_opt = ev->add_option("--maps", ea.maps_dir, "Directory of map JSON files");
  auto* sweep_opt = ev->add_option("--sweep-corridors", ea.sweep, "Corridor lengths, e.g. 5..1000 or 11,20,30");
  maps_opt->excludes(sweep_opt);
  ev->add_option("--seeds", ea.seeds, "Evaluation seeds");
  ev->add_option("--seed", ea.seed, "First evaluation seed");
  ev->add_flag("--record-memory", ea.record_memory, "Write episodes and memory traces");
  ev->add_flag("--greedy", ea.greedy, "Argmax actions instead of sampling");
  ev->add_option("--out", ea.out, "Output directory")->required();
  ev->add_option("--episode-length", ea.episode_length, "Step budget for --maps (default: training value)");
  ev->add_option("--mode", ea.mode, "classical | lifelong for --maps (default: training value)");
  ev->add_option("--agents", ea.agents, "Re-place this many agents on every map");
  ev->add_option("--room-size", ea.room_size, "Room side for the corridor sweep (default: training value)");

  std::string trace_in, trace_out;
  auto* am = app.add_subcommand("analyze-memory", "Distance table from a recorded episode");
  am->add_option("--trace", trace_in, "Episode JSON written by eval --record-memory")->required();
  am->add_option("--out", trace_out, "Output CSV")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    const int threads = clamp_workers(workers);
    if (gen->parsed()) return gen_maps(gm);
    if (tr->parsed()) return train_cmd(ta, threads);
    if (ev->parsed()) return eval_cmd(ea, threads);
    if (am->parsed()) return analyze_memory(trace_in, trace_out);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << '\n';
    return kConfig;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return kIo;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return kIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntime;
  }
  return kOk;
}

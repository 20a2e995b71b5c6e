#include <cstdio>
#include <filesystem>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "dail/dail.hpp"

namespace fs = std::filesystem;
using namespace dail;

namespace {

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

RunConfig base_config(const std::string& path, const std::string& env_path = "") {
  RunConfig c = path.empty() ? RunConfig{} : load_run_config(path);
  if (!env_path.empty()) c.env = load_env_config(env_path);
  apply_seed_override(c);
  return c;
}

// --- gen-data ------------------------------------------------------------------

struct GenDataArgs {
  std::string config, env_config, out;
  int num_instructions = 16;
  std::size_t n_traj = 1024;
  double success_ratio = 0.5;
  std::uint64_t seed = 0, mapping_seed = 0;
  bool expert = false;
};

int cmd_gen_data(const GenDataArgs& a, const CLI::App& sub) {
  RunConfig c = base_config(a.config, a.env_config);
  if (sub.count("--num-instructions")) c.data.num_instructions = a.num_instructions;
  if (sub.count("--n-traj")) c.data.n_traj = a.n_traj;
  if (sub.count("--success-ratio")) c.data.success_ratio = a.success_ratio;
  if (sub.count("--seed")) c.data.seed = a.seed;
  if (sub.count("--mapping-seed")) c.data.mapping_seed = a.mapping_seed;
  validate(c);
  const GridWorld env(c.env);
  const InstructionMapping mapping = make_mapping(c.data.num_instructions, c.data.mapping_seed);
  const OfflineDataset ds = a.expert ? collect_expert(env, mapping, c.data.n_traj, c.data.seed)
                                     : collect_mixed(env, mapping, c.data.n_traj, c.data.success_ratio, c.data.seed);
  save_dataset(ds, a.out);
  std::size_t successes = 0;
  for (const auto& t : ds.trajectories) successes += t.success;
  std::cout << "n_traj=" << ds.size() << " successes=" << successes
            << " success_ratio=" << format_real(ds.meta.success_ratio) << " transitions=" << ds.num_transitions()
            << " num_instructions=" << ds.meta.num_instructions << '\n';
  return 0;
}

// --- train -----------------------------------------------------------------------

struct TrainArgs {
  std::string config, env_config, data, out;
  std::size_t epochs = 0;
  std::uint64_t seed = 0;
  bool ablate_distributional = false, ablate_alignment = false;
};

int cmd_train(const TrainArgs& a, const CLI::App& sub) {
  RunConfig c = base_config(a.config, a.env_config);
  const OfflineDataset ds = load_dataset(a.data);
  if (!a.config.empty() && c.data.num_instructions != ds.meta.num_instructions)
    throw InvalidArgument("config has " + std::to_string(c.data.num_instructions) + " instructions but dataset " +
                          a.data + " has " + std::to_string(ds.meta.num_instructions));
  c.data.num_instructions = ds.meta.num_instructions;
  c.data.mapping_seed = ds.meta.mapping_seed;
  c.data.seed = ds.meta.collection_seed;
  c.data.n_traj = ds.size();
  c.data.success_ratio = ds.meta.success_ratio;
  if (sub.count("--epochs")) c.train.epochs = a.epochs;
  if (sub.count("--seed")) c.train.seed = a.seed;
  if (a.ablate_distributional) c.train.distributional = false;
  if (a.ablate_alignment) c.train.alignment = false;
  c.out_dir = a.out;
  validate(c);
  const GridWorld env(c.env);
  if (ds.meta.observation_size != env.config().observation_size())
    throw InvalidArgument("dataset observation size does not match the environment");
  const InstructionMapping mapping = make_mapping(ds.meta.num_instructions, ds.meta.mapping_seed);
  const TrainResult res = train(c.train, ds, env, mapping);
  fs::create_directories(a.out);
  save_agent(res.agent, a.out);
  write_json_file(to_json(c), (fs::path(a.out) / "config.json").string());
  write_metrics_csv(res.metrics, (fs::path(a.out) / "metrics.csv").string());
  std::cout << "epochs=" << res.metrics.rows.size() << " gradient_steps=" << res.agent.gradient_steps
            << " final_success=" << format_real(res.metrics.final_success) << '\n';
  return 0;
}

// --- eval / analyze helpers -----------------------------------------------------------

struct LoadedRun {
  RunConfig config;
  TrainedAgent agent;
  InstructionMapping mapping;
};

LoadedRun load_run(const std::string& dir) {
  if (!fs::exists(fs::path(dir) / "checkpoint.bin")) throw std::runtime_error("no checkpoint in " + dir);
  RunConfig c = load_run_config((fs::path(dir) / "config.json").string());
  TrainedAgent agent = load_agent(dir);
  InstructionMapping mapping = make_mapping(agent.num_instructions, agent.mapping_seed);
  return {std::move(c), std::move(agent), std::move(mapping)};
}

struct EvalArgs {
  std::string run;
  int episodes = kDefaultEvalEpisodes;
  std::uint64_t seed = 0;
};

int cmd_eval(const EvalArgs& a, const CLI::App& sub) {
  const LoadedRun r = load_run(a.run);
  const int n = sub.count("--episodes") ? a.episodes : r.config.analysis.n_episodes;
  const std::uint64_t seed = sub.count("--seed") ? a.seed : r.config.analysis.seed;
  const GridWorld env(r.config.env);
  std::cout << "success_rate=" << format_real(evaluate(r.agent, env, r.mapping, n, seed)) << " episodes=" << n
            << '\n';
  return 0;
}

struct AnalyzeArgs {
  std::string run, mode = "all";
  int n = 100, trials = 500, n_states = 200;
  double delta = 1.0, d = 1.0;
  std::uint64_t seed = 0;
};

int analyze_mc(const AnalyzeArgs& a, const CLI::App& sub) {
  AnalysisThresholds th;
  th.delta = a.delta;
  th.d = a.d;
  const Sampler bimodal = discrete_sampler({-1.0, 1.0}, {0.5, 0.5});
  const Sampler point = discrete_sampler({0.0}, {1.0});
  const std::uint64_t seed = sub.count("--seed") ? a.seed : 0;
  const DetectionRates r = mc_theorem_check(bimodal, point, a.n, a.trials, th, seed);
  std::cout << "w1_detect_rate=" << format_real(r.w1_detect_rate)
            << " mean_detect_rate=" << format_real(r.mean_detect_rate) << " n=" << a.n << " trials=" << a.trials
            << '\n';
  return 0;
}

int cmd_analyze(const AnalyzeArgs& a, const CLI::App& sub) {
  static const std::set<std::string> modes{"all", "disambiguation", "embeddings", "silhouette", "mc-theorem"};
  if (!modes.count(a.mode)) throw CLI::ValidationError("--mode", "unknown mode " + a.mode);
  if (a.mode == "mc-theorem") return analyze_mc(a, sub);
  if (a.run.empty()) throw CLI::RequiredError("--run");
  const LoadedRun r = load_run(a.run);
  const GridWorld env(r.config.env);
  const fs::path dir(a.run);
  if (a.mode == "disambiguation" || a.mode == "all") {
    AnalysisThresholds th = r.config.analysis.thresholds;
    if (sub.count("--delta")) th.delta = a.delta;
    if (sub.count("--d")) th.d = a.d;
    const int n_states = sub.count("--n-states") ? a.n_states : r.config.analysis.n_states;
    const std::uint64_t seed = sub.count("--seed") ? a.seed : r.config.analysis.seed;
    const auto rep = disambiguation_report(r.agent, env, r.mapping, th, n_states, seed);
    write_disambiguation_csv(rep, r.mapping, (dir / "disambiguation.csv").string());
    std::cout << "disambiguation.csv written (" << rep.num_instructions << "x" << rep.num_instructions << ")\n";
  }
  if (a.mode == "embeddings" || a.mode == "all") {
    write_embeddings_csv(r.agent, r.mapping, (dir / "embeddings.csv").string());
    std::cout << "embeddings.csv written\n";
  }
  if (a.mode == "silhouette" || a.mode == "all")
    std::cout << "silhouette=" << format_real(instruction_silhouette(r.agent, r.mapping)) << '\n';
  if (a.mode == "all") analyze_mc(a, sub);
  return 0;
}

// --- sweep / plot ------------------------------------------------------------------

struct SweepArgs {
  std::string config, env_config, out, counts, algs, seeds;
  unsigned jobs = std::max(1u, std::thread::hardware_concurrency());
  long grad_steps = 0;
  bool resume = false;
};

int cmd_sweep(const SweepArgs& a, const CLI::App& sub) {
  RunConfig c = base_config(a.config, a.env_config);
  if (!a.counts.empty()) {
    c.sweep.counts.clear();
    for (const auto& s : split_list(a.counts)) c.sweep.counts.push_back(std::stoi(s));
  }
  if (!a.algs.empty()) c.sweep.algorithms = split_list(a.algs);
  if (!a.seeds.empty()) {
    c.sweep.seeds.clear();
    for (const auto& s : split_list(a.seeds)) c.sweep.seeds.push_back(std::stoull(s));
  }
  if (sub.count("--grad-steps")) c.sweep.grad_steps = a.grad_steps;
  if (!a.out.empty()) c.out_dir = a.out;
  validate(c);
  const fs::path dir(c.out_dir);
  fs::create_directories(dir);
  const std::string csv = (dir / "sweep.csv").string();

  std::vector<SweepRow> done;
  if (a.resume && fs::exists(csv))
    for (auto& r : read_sweep_csv(csv))
      if (r.status == "ok") done.push_back(std::move(r));
  std::vector<SweepCell> todo;
  for (const auto& cell : sweep_grid(c.sweep.counts, c.sweep.algorithms, c.sweep.seeds)) {
    const bool have = std::any_of(done.begin(), done.end(), [&](const SweepRow& r) { return same_cell(r.cell, cell); });
    if (!have) todo.push_back(cell);
  }
  write_json_file(to_json(c), (dir / "config.json").string());

  SweepSettings s;
  s.env = c.env;
  s.train = c.train;
  s.success_ratio = c.data.success_ratio;
  s.grad_steps = c.sweep.grad_steps;
  s.eval_episodes = c.analysis.n_episodes;
  std::vector<SweepRow> rows = done;
  ambiguity_sweep(s, todo, a.jobs, [&](const SweepRow& r) {
    rows.push_back(r);
    write_sweep_csv(rows, csv);
    std::cerr << sweep_row_line(r) << '\n';
  });
  write_sweep_csv(rows, csv);
  write_sweep_plot(rows, (dir / "plot.svg").string());
  int failed = 0;
  for (const auto& r : rows) failed += r.status != "ok";
  for (const auto& m : aggregate(rows))
    std::cout << "count=" << m.count << " algorithm=" << m.algorithm << " mean_success=" << format_real(m.mean_success)
              << " mean_silhouette=" << format_real(m.mean_silhouette) << '\n';
  if (failed > 0) {
    std::cerr << "error: " << failed << " sweep cell(s) failed\n";
    return 1;
  }
  return 0;
}

struct PlotArgs {
  std::string sweep, out;
};

int cmd_plot(const PlotArgs& a) {
  write_sweep_plot(read_sweep_csv(a.sweep), a.out);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Offline instruction-conditioned RL laboratory"};
  app.require_subcommand(1);

  GenDataArgs g;
  auto* gen = app.add_subcommand("gen-data", "collect an offline dataset");
  gen->add_option("--config", g.config, "run config JSON");
  gen->add_option("--env-config", g.env_config, "environment JSON, overrides the config's env section");
  gen->add_option("--num-instructions", g.num_instructions)->check(CLI::PositiveNumber);
  gen->add_option("--n-traj", g.n_traj)->check(CLI::PositiveNumber);
  gen->add_option("--success-ratio", g.success_ratio)->check(CLI::Range(0.0, 1.0));
  gen->add_option("--seed", g.seed, "collection seed");
  gen->add_option("--mapping-seed", g.mapping_seed);
  gen->add_flag("--expert", g.expert, "expert trajectories only");
  gen->add_option("--out", g.out, "output JSONL")->required();

  TrainArgs t;
  auto* tr = app.add_subcommand("train", "train an agent on a dataset");
  tr->add_option("--config", t.config);
  tr->add_option("--env-config", t.env_config);
  tr->add_option("--data", t.data)->required();
  tr->add_option("--out", t.out, "run directory")->required();
  tr->add_option("--epochs", t.epochs);
  tr->add_option("--seed", t.seed);
  tr->add_flag("--ablate-distributional", t.ablate_distributional);
  tr->add_flag("--ablate-alignment", t.ablate_alignment);

  EvalArgs e;
  auto* ev = app.add_subcommand("eval", "greedy success rate of a trained run");
  ev->add_option("--run", e.run)->required();
  ev->add_option("--episodes", e.episodes)->check(CLI::PositiveNumber);
  ev->add_option("--seed", e.seed);

  SweepArgs sw;
  auto* swc = app.add_subcommand("sweep", "instruction-count ambiguity sweep");
  swc->add_option("--config", sw.config);
  swc->add_option("--env-config", sw.env_config);
  swc->add_option("--counts", sw.counts, "comma-separated instruction counts");
  swc->add_option("--algs", sw.algs, "comma-separated algorithms");
  swc->add_option("--seeds", sw.seeds, "comma-separated seeds");
  swc->add_option("--jobs", sw.jobs)->check(CLI::PositiveNumber);
  swc->add_option("--grad-steps", sw.grad_steps)->check(CLI::PositiveNumber);
  swc->add_option("--out", sw.out, "output directory");
  swc->add_flag("--resume", sw.resume, "skip cells already in sweep.csv");

  AnalyzeArgs an;
  auto* anc = app.add_subcommand("analyze", "disambiguation, embeddings, silhouette, mc-theorem");
  anc->add_option("--run", an.run);
  anc->add_option("--mode", an.mode)->check(CLI::IsMember({"all", "disambiguation", "embeddings", "silhouette", "mc-theorem"}));
  anc->add_option("--n", an.n)->check(CLI::Range(2, 1 << 30));
  anc->add_option("--trials", an.trials)->check(CLI::PositiveNumber);
  anc->add_option("--n-states", an.n_states)->check(CLI::PositiveNumber);
  anc->add_option("--delta", an.delta)->check(CLI::PositiveNumber);
  anc->add_option("--d", an.d)->check(CLI::PositiveNumber);
  anc->add_option("--seed", an.seed);

  PlotArgs p;
  auto* pl = app.add_subcommand("plot", "SVG plot from sweep.csv");
  pl->add_option("--sweep", p.sweep)->required();
  pl->add_option("--out", p.out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(g, *gen);
    if (tr->parsed()) return cmd_train(t, *tr);
    if (ev->parsed()) return cmd_eval(e, *ev);
    if (swc->parsed()) return cmd_sweep(sw, *swc);
    if (anc->parsed()) return cmd_analyze(an, *anc);
    if (pl->parsed()) return cmd_plot(p);
  } catch (const CLI::ParseError& err) {
    std::cerr << "usage error: " << err.what() << '\n';
    return 2;
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << '\n';
    return 1;
  }
  return 2;
}

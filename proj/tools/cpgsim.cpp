// cpgsim: build, train, run, modulate, decode and check spiking CPG networks.
//
// Exit codes: 0 ok (training that does not converge is still ok), 1 usage or
// configuration error, 2 calibration error or failed check, 3 numeric/resource error.

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <mutex>
#include <new>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "spikecpg/cpg.hpp"
#include "spikecpg/decode.hpp"
#include "spikecpg/io.hpp"
#include "spikecpg/resume.hpp"

namespace fs = std::filesystem;
using namespace spikecpg;

namespace {

struct Common {
  std::optional<std::uint64_t> seed;
  std::optional<double> dt_ms;
  std::string out_dir;
  std::string config;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--seed", c.seed, "Seed override");
  app->add_option("--dt-ms", c.dt_ms, "Integration step in ms")->check(CLI::PositiveNumber);
  app->add_option("--out-dir", c.out_dir, std::string("Output directory (default: config out_dir, then $") +
                                              kOutDirEnv + ", then .)");
  app->add_option("--config", c.config, "Config file");
}

// Settings shared by the non-training commands, read from --config.
struct CommandConfig {
  std::string out_dir;
  std::optional<double> dt_ms;
  std::optional<std::uint64_t> seed;
  std::vector<double> frequencies;
  std::optional<int> cycles;
  std::optional<double> switch_fraction;
  std::string text;  // raw contents, hashed into output headers
};

CommandConfig load_command_config(const std::string& path) {
  CommandConfig c;
  if (path.empty()) return c;
  c.text = read_file(path);
  const auto doc = KvDocument::parse(c.text, path);
  if (doc.sections.size() > 1) throw ParseError(path, doc.sections[1].line, "command configs have no sections");
  KvFields f(doc.sections[0], path);
  c.out_dir = f.text("out_dir", "");
  if (f.has("dt_ms")) c.dt_ms = f.number("dt_ms");
  if (f.has("seed")) c.seed = static_cast<std::uint64_t>(f.integer("seed"));
  c.frequencies = f.numbers("frequencies");
  if (f.has("cycles")) c.cycles = static_cast<int>(f.integer("cycles"));
  if (f.has("switch_fraction")) c.switch_fraction = f.number("switch_fraction");
  f.finish();
  return c;
}

double pick_dt(const Common& cli, std::optional<double> cfg) {
  if (cli.dt_ms) return *cli.dt_ms;
  if (cfg) return *cfg;
  return 0.1;
}

struct Output {
  fs::path dir;
  OutputHeader header;

  void write(const std::string& name, const std::string& body) const {
    write_file(dir / name, header.line() + body);
    std::cout << "wrote " << (dir / name).string() << "\n";
  }
};

// A snapshot or, for convenience, a spec file that is calibrated on the fly.
CpgNetwork load_network(const std::string& path, const std::string& text) {
  if (text.rfind("snapshot", 0) == 0 || text.find("\nsnapshot 1") != std::string::npos)
    return parse_snapshot(text, path);
  return build_calibrated(parse_spec(text, path));
}

std::string describe_calibration(const CalibrationResult& r) {
  std::ostringstream o;
  o << "candidates_tried = " << r.candidates_tried << "\n";
  o << "t_counts = " << join(std::vector<double>(r.t_counts.begin(), r.t_counts.end())) << "\n";
  o << "driven_durations_ms = " << join(r.oscillation.driven_durations_ms) << "\n";
  o << "target_durations_ms = " << join(r.oscillation.target_durations_ms) << "\n";
  o << "cycles_after_removal = " << r.oscillation.cycles_after_removal << "\n";
  o << "exclusive = " << (r.oscillation.exclusive ? "true" : "false") << "\n";
  o << "oscillation_pass = " << (r.oscillation.pass ? "true" : "false") << "\n";
  o << "pfn_firing_fraction = " << join(r.pfn_firing_fraction) << "\n";
  return o.str();
}

// ---------------------------------------------------------------------------

int cmd_build(const Common& cli, const std::string& spec_path) {
  const auto cfg = load_command_config(cli.config);
  const auto text = read_file(spec_path);
  auto spec = parse_spec(text, spec_path);
  if (cli.seed) spec.seed = *cli.seed;
  else if (cfg.seed) spec.seed = *cfg.seed;
  CalibrationOptions opt;
  opt.dt_ms = pick_dt(cli, cfg.dt_ms);
  CalibrationResult res;
  const auto cpg = build_calibrated(spec, &res, {}, opt);
  Output out{resolve_out_dir(cli.out_dir, cfg.out_dir), {spec.seed, OutputHeader::hash_inputs({text, cfg.text})}};
  out.write("network.snap", write_snapshot(cpg));
  out.write("calibration.txt", describe_calibration(res));
  return 0;
}

struct TrainJob {
  int pool = 0;
  int index = 0;
  std::uint64_t seed = 0;
  TrainingReport report;
};

int cmd_train(const Common& cli, std::string config_path) {
  if (config_path.empty()) config_path = cli.config;
  if (config_path.empty()) throw ConfigError("train needs an experiment config (--config FILE)");
  const auto cfg_text = read_file(config_path);
  const auto cfg = parse_experiment(cfg_text, config_path);
  const fs::path base = fs::path(config_path).parent_path();
  auto rel = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : base / p; };
  const double dt = pick_dt(cli, cfg.dt_ms);
  std::uint64_t seed0 = cli.seed ? *cli.seed : (cfg.seeds.empty() ? 1 : cfg.seeds.front());

  std::vector<std::string> inputs{cfg_text};
  std::string net_text = cfg.snapshot_path.empty() ? read_file(rel(cfg.cpg_spec_path)) : read_file(rel(cfg.snapshot_path));
  inputs.push_back(net_text);
  std::string teacher_text;
  if (!cfg.teacher_path.empty()) {
    teacher_text = read_file(rel(cfg.teacher_path));
    inputs.push_back(teacher_text);
  }
  Output out{resolve_out_dir(cli.out_dir, cfg.out_dir), {seed0, OutputHeader::hash_inputs(inputs)}};
  TrainOptions topt;
  topt.dt_ms = dt;
  topt.frequency_schedule = cfg.frequencies;

  if (!cfg.batch()) {
    CpgNetwork cpg = cfg.snapshot_path.empty() ? build_calibrated(parse_spec(net_text, cfg.cpg_spec_path))
                                               : parse_snapshot(net_text, cfg.snapshot_path);
    if (!cpg.motor) throw ConfigError("network has no motor pool to train");
    TeacherPattern teacher;
    if (cfg.random_teacher) {
      auto p = *cfg.random_teacher;
      if (p.motor_neurons == 0) p.motor_neurons = cpg.motor->count;
      p.cycle_length_ms = cpg.spec.cycle_length_ms();
      teacher = random_teacher(p, seed0);
    } else {
      teacher = parse_teacher(teacher_text, cfg.teacher_path);
    }
    const double f = cfg.frequencies.empty() ? cpg.spec.tonic_frequency_default : cfg.frequencies.front();
    const auto rep = train(cpg, teacher, cfg.hp, f, topt);
    out.write("teacher.txt", write_teacher(teacher));
    out.write("trained.snap", write_snapshot(cpg));
    out.write("training_report.txt", write_training_report(rep, "trained.snap"));
    out.write("errors.csv", write_error_csv(rep));
    out.write("raster.csv", write_raster_csv(rep));
    std::cout << "converged=" << (rep.converged ? "true" : "false") << " final_error_ms=" << fmt(rep.errors_ms.back())
              << " epochs_used=" << rep.epochs_used << "\n";
    return 0;
  }

  // Batch: every pool size gets its own calibrated build; teachers are seeded seed0 + k.
  auto spec = parse_spec(net_text, cfg.cpg_spec_path);
  std::vector<TrainJob> jobs;
  std::vector<CpgNetwork> nets;
  for (int pool : cfg.batch_pool_sizes) {
    auto s = spec;
    s.motor_neuron_count = pool;
    std::cout << "calibrating pool size " << pool << "\n";
    nets.push_back(build_calibrated(s));
    for (int k = 0; k < cfg.batch_teachers; ++k)
      jobs.push_back({pool, k, seed0 + static_cast<std::uint64_t>(k), {}});
  }
  std::atomic<std::size_t> next{0};
  std::mutex err_mu;
  std::exception_ptr err;
  auto worker = [&] {
    for (std::size_t i; (i = next++) < jobs.size();) {
      try {
        auto& j = jobs[i];
        const auto pi = static_cast<std::size_t>(
            std::find(cfg.batch_pool_sizes.begin(), cfg.batch_pool_sizes.end(), j.pool) - cfg.batch_pool_sizes.begin());
        auto cpg = nets[pi];
        auto p = *cfg.random_teacher;
        p.motor_neurons = j.pool;
        p.cycle_length_ms = cpg.spec.cycle_length_ms();
        const double f = cfg.frequencies.empty() ? cpg.spec.tonic_frequency_default : cfg.frequencies.front();
        j.report = train(cpg, random_teacher(p, j.seed), cfg.hp, f, topt);
      } catch (...) {
        std::lock_guard lk(err_mu);
        if (!err) err = std::current_exception();
      }
    }
  };
  const unsigned n = std::max(1u, std::min<unsigned>(std::thread::hardware_concurrency(), static_cast<unsigned>(jobs.size())));
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < n; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (err) std::rethrow_exception(err);

  std::string csv = "pool_size,teacher,seed,converged,epochs_used,initial_error_ms,final_error_ms\n";
  std::ostringstream summary;
  for (int pool_size : cfg.batch_pool_sizes) {
    int ok = 0, total = 0;
    std::vector<double> finals;
    for (const auto& j : jobs) {
      if (j.pool != pool_size) continue;
      ++total;
      const double fin = j.report.errors_ms.back();
      finals.push_back(fin);
      ok += fin <= 3.0;
    }
    std::sort(finals.begin(), finals.end());
    summary << "pool_size = " << pool_size << "\n";
    summary << "  runs = " << total << "\n  within_3ms = " << ok << "\n  median_final_error_ms = "
            << fmt(finals[finals.size() / 2]) << "\n";
  }
  for (const auto& j : jobs)
    csv += std::to_string(j.pool) + "," + std::to_string(j.index) + "," + std::to_string(j.seed) + "," +
           (j.report.converged ? "true" : "false") + "," + std::to_string(j.report.epochs_used) + "," +
           fmt(j.report.errors_ms.front()) + "," + fmt(j.report.errors_ms.back()) + "\n";
  out.write("batch_summary.csv", csv);
  out.write("batch_summary.txt", summary.str());
  std::cout << summary.str();
  return 0;
}

int cmd_run(const Common& cli, const std::string& net_path, std::optional<double> freq, std::optional<double> duration,
            const std::string& record) {
  const auto cfg = load_command_config(cli.config);
  const auto text = read_file(net_path);
  auto cpg = load_network(net_path, text);
  if (cli.seed) cpg.spec.seed = *cli.seed;
  else if (cfg.seed) cpg.spec.seed = *cfg.seed;
  const double dt = pick_dt(cli, cfg.dt_ms);
  const double f = freq ? *freq : (cfg.frequencies.empty() ? cpg.spec.tonic_frequency_default : cfg.frequencies.front());
  const double dur = duration ? *duration : cpg.spec.cycle_length_ms() * cfg.cycles.value_or(4);
  CpgRun run{dur, dt, constant_tonic(f, 0.0, dur), {}};
  if (record == "all") {
    run.record = cpg.net.populations();
  } else if (record == "motor") {
    for (const auto& p : cpg.phases) run.record.push_back(p.h);
    if (cpg.motor) run.record.push_back(*cpg.motor);
  } else if (record == "npg") {
    run.record = cpg.npg_populations();
  } else {
    throw ConfigError("--record must be all, motor or npg");
  }
  const auto r = simulate(cpg, run);
  Output out{resolve_out_dir(cli.out_dir, cfg.out_dir), {cpg.spec.seed, OutputHeader::hash_inputs({text, cfg.text})}};
  out.write("spikes.csv", write_spikes_csv(r));
  return 0;
}

int cmd_modulate(const Common& cli, const std::string& net_path, std::vector<double> freqs,
                 std::optional<double> switch_fraction, std::optional<int> cycles_opt) {
  const auto cfg = load_command_config(cli.config);
  if (freqs.empty()) freqs = cfg.frequencies;
  if (freqs.empty()) throw CLI::ValidationError("--frequencies", "frequency list is empty");
  for (double f : freqs)
    if (!(f > 0.0)) throw ConfigError("frequencies must be positive");
  const auto text = read_file(net_path);
  auto cpg = load_network(net_path, text);
  if (cli.seed) cpg.spec.seed = *cli.seed;
  else if (cfg.seed) cpg.spec.seed = *cfg.seed;
  const double dt = pick_dt(cli, cfg.dt_ms);
  const int cycles = cycles_opt ? *cycles_opt : cfg.cycles.value_or(4);
  const double fraction = switch_fraction ? *switch_fraction : cfg.switch_fraction.value_or(0.5);
  Output out{resolve_out_dir(cli.out_dir, cfg.out_dir), {cpg.spec.seed, OutputHeader::hash_inputs({text, cfg.text})}};

  std::vector<PopulationHandle> rec;
  for (const auto& p : cpg.phases) rec.push_back(p.h);
  if (cpg.motor) rec.push_back(*cpg.motor);
  const double dur = cpg.spec.cycle_length_ms() * (cycles + 1);
  std::vector<CycleMetrics> metrics;
  std::ostringstream rep;
  for (std::size_t i = 0; i < freqs.size(); ++i) {
    const auto r = simulate(cpg, {dur, dt, constant_tonic(freqs[i], 0.0, dur), rec});
    out.write("spikes_" + std::to_string(i) + "_F" + fmt(freqs[i]) + ".csv", write_spikes_csv(r));
    metrics.push_back(cycle_metrics(r, cpg));
  }
  // Cross-frequency similarity: last complete cycle of each run against the first frequency.
  for (std::size_t i = 0; i < freqs.size(); ++i) {
    const auto& m = metrics[i];
    rep << "\n[frequency]\nfrequency_hz = " << fmt(freqs[i]) << "\n";
    rep << "cycle_period_ms = " << fmt(m.cycle_period_ms) << "\n";
    rep << "period_ratio = " << fmt(m.cycle_period_ms / metrics[0].cycle_period_ms) << "\n";
    const double sim = spike_order_correlation(metrics[0].motor_cycles.back(), m.motor_cycles.back());
    rep << "similarity_to_first = " << (std::isnan(sim) ? std::string("nan") : fmt(sim)) << "\n";
  }
  if (freqs.size() >= 2) {
    const auto sw = mid_cycle_switch(cpg, freqs[0], freqs[1], fraction, dt);
    rep << "\n[switch]\nfrom_hz = " << fmt(freqs[0]) << "\nto_hz = " << fmt(freqs[1]) << "\nfraction = " << fmt(fraction)
        << "\nswitch_ms = " << fmt(sw.switch_ms) << "\nremaining_control_ms = " << fmt(sw.remaining_control_ms)
        << "\nremaining_switched_ms = " << fmt(sw.remaining_switched_ms) << "\n";
  }
  out.write("modulation.txt", rep.str().substr(1));
  return 0;
}

int cmd_decode(const Common& cli, const std::string& net_path, const std::string& map_path, std::optional<double> freq,
               std::optional<int> cycles_opt) {
  const auto cfg = load_command_config(cli.config);
  const auto text = read_file(net_path);
  const auto map_text = read_file(map_path);
  auto cpg = load_network(net_path, text);
  if (cli.seed) cpg.spec.seed = *cli.seed;
  else if (cfg.seed) cpg.spec.seed = *cfg.seed;
  const auto map = parse_joint_map(map_text, map_path);
  if (!cpg.motor) throw ConfigError("network has no motor pool");
  if (static_cast<int>(map.neuron_count()) != cpg.motor->count)
    throw ConfigError("joint map covers " + std::to_string(map.neuron_count()) + " neurons but the motor pool has " +
                      std::to_string(cpg.motor->count));
  for (const auto& j : map.joints)
    for (int n : j.neurons)
      if (n >= cpg.motor->count) throw ConfigError("joint map refers to neuron " + std::to_string(n) + " beyond the pool");
  const double dt = pick_dt(cli, cfg.dt_ms);
  const double f = freq ? *freq : (cfg.frequencies.empty() ? cpg.spec.tonic_frequency_default : cfg.frequencies.front());
  const int cycles = cycles_opt ? *cycles_opt : cfg.cycles.value_or(2);
  const double dur = cpg.spec.cycle_length_ms() * (cycles + 2);
  std::vector<PopulationHandle> rec{cpg.phases.front().h, *cpg.motor};
  const auto r = simulate(cpg, {dur, dt, constant_tonic(f, 0.0, dur), rec});
  const auto on = burst_onsets(r.train(cpg.phases.front().h.first));
  // Complete cycles from the second onset; a network without rhythm is decoded from 0.
  double from = 0.0, to = cpg.spec.cycle_length_ms() * cycles;
  if (on.size() >= static_cast<std::size_t>(cycles) + 2) {
    from = on[1];
    to = on[1 + static_cast<std::size_t>(cycles)];
  }
  const auto tr = decode_angles(r, map, cpg.motor->first, from, to);
  Output out{resolve_out_dir(cli.out_dir, cfg.out_dir),
             {cpg.spec.seed, OutputHeader::hash_inputs({text, map_text, cfg.text})}};
  out.write("trajectory.csv", write_trajectory_csv(tr));
  return 0;
}

int cmd_check(const Common& cli, const std::string& net_path, std::optional<double> freq, std::optional<int> cycles_opt) {
  const auto cfg = load_command_config(cli.config);
  const auto text = read_file(net_path);
  auto cpg = load_network(net_path, text);
  const double dt = pick_dt(cli, cfg.dt_ms);
  const double f = freq ? *freq : (cfg.frequencies.empty() ? cpg.spec.tonic_frequency_default : cfg.frequencies.front());
  const int cycles = cycles_opt ? *cycles_opt : cfg.cycles.value_or(5);
  const auto osc = validate_oscillation(cpg, f, cycles, dt);
  std::vector<SpikeViolation> viol;
  if (cpg.has_pattern_layer()) {
    const auto ss = single_spike_report(cpg, cpg.spec.cycle_length_ms() * (cycles + 1.2), f, dt);
    viol = ss.violations;
  }
  std::ostringstream o;
  o << "tonic_frequency_hz = " << fmt(f) << "\n";
  o << "driven_durations_ms = " << join(osc.driven_durations_ms) << "\n";
  o << "cycles_after_removal = " << osc.cycles_after_removal << "\n";
  o << "exclusive = " << (osc.exclusive ? "true" : "false") << "\n";
  o << "free_durations_within_15pct = " << (osc.free_durations_within_tolerance ? "true" : "false") << "\n";
  o << "oscillation_pass = " << (osc.pass ? "true" : "false") << "\n";
  o << "single_spike_violations = " << viol.size() << "\n";
  for (const auto& v : viol)
    o << "violation = " << v.neuron_id << ", " << v.cycle << ", " << v.spikes << "\n";
  const bool pass = osc.pass && osc.free_durations_within_tolerance && viol.empty();
  o << "pass = " << (pass ? "true" : "false") << "\n";
  Output out{resolve_out_dir(cli.out_dir, cfg.out_dir), {cpg.spec.seed, OutputHeader::hash_inputs({text, cfg.text})}};
  out.write("check.txt", o.str());
  std::cout << (pass ? "check passed\n" : "check FAILED\n");
  return pass ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spiking central pattern generator toolkit"};
  app.set_version_flag("--version", std::string("cpgsim ") + kToolVersion);
  app.require_subcommand(1);
  Common common;

  std::string spec_path, config_path, net_path, map_path, record = "motor";
  std::optional<double> freq, duration, fraction;
  std::optional<int> cycles;
  std::vector<double> freqs;

  auto* build = app.add_subcommand("build", "Build and calibrate a network from a spec file");
  build->add_option("spec", spec_path, "CpgSpec file")->required();
  add_common(build, common);

  auto* trainc = app.add_subcommand("train", "Train motor synapses (single run or batch)");
  trainc->add_option("config_file", config_path, "Experiment config (same as --config)");
  add_common(trainc, common);

  auto* run = app.add_subcommand("run", "Simulate a network and export spikes");
  run->add_option("network", net_path, "Snapshot (or spec) file")->required();
  run->add_option("--frequency", freq, "Tonic frequency in spikes/s");
  run->add_option("--duration-ms", duration, "Simulated time")->check(CLI::PositiveNumber);
  run->add_option("--record", record, "all | motor | npg");
  add_common(run, common);

  auto* mod = app.add_subcommand("modulate", "Compare rhythm and pattern across tonic frequencies");
  mod->add_option("network", net_path, "Snapshot (or spec) file")->required();
  mod->add_option("--frequencies", freqs, "Comma-separated tonic frequencies")->delimiter(',');
  mod->add_option("--switch-fraction", fraction, "Cycle fraction at which to switch to the second frequency");
  mod->add_option("--cycles", cycles, "Cycles per frequency")->check(CLI::Range(2, 1000));
  add_common(mod, common);

  auto* dec = app.add_subcommand("decode", "Decode motor spikes into joint angles");
  dec->add_option("network", net_path, "Snapshot (or spec) file")->required();
  dec->add_option("joint_map", map_path, "Joint map file")->required();
  dec->add_option("--frequency", freq, "Tonic frequency in spikes/s");
  dec->add_option("--cycles", cycles, "Cycles to decode")->check(CLI::Range(1, 1000));
  add_common(dec, common);

  auto* chk = app.add_subcommand("check", "Oscillation and single-spike checks");
  chk->add_option("network", net_path, "Snapshot (or spec) file")->required();
  chk->add_option("--frequency", freq, "Tonic frequency in spikes/s");
  chk->add_option("--cycles", cycles, "Cycles after input removal / single-spike cycles")->check(CLI::Range(1, 1000));
  add_common(chk, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (*build) return cmd_build(common, spec_path);
    if (*trainc) return cmd_train(common, config_path);
    if (*run) return cmd_run(common, net_path, freq, duration, record);
    if (*mod) return cmd_modulate(common, net_path, freqs, fraction, cycles);
    if (*dec) return cmd_decode(common, net_path, map_path, freq, cycles);
    if (*chk) return cmd_check(common, net_path, freq, cycles);
  } catch (const CLI::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const CalibrationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::bad_alloc&) {
    std::cerr << "error: out of memory\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 1;
}

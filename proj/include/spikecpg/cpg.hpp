#pragma once

// Assembly of the three-layer CPG: phase generator (H, Q and T-chain neurons per
// phase), pattern forming networks with their inhibiting partners, and the
// motor pool whose input synapses are the only plastic ones.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "spikecpg/error.hpp"
#include "spikecpg/network.hpp"

namespace spikecpg {

struct PhaseSpec {
  double duration_ms = 500.0;
  int pfn_size = 300;
  int t_neuron_count = 0;  // 0: derived by calibration

  bool operator==(const PhaseSpec&) const = default;
};

struct CpgSpec {
  static constexpr int kFormatVersion = 1;
  static constexpr int kMinPfnSize = 50;
  static constexpr int kMaxPfnSize = 5000;

  int format_version = kFormatVersion;
  std::vector<PhaseSpec> phases;
  int motor_neuron_count = 25;
  double tonic_frequency_default = 250.0;
  std::uint64_t seed = 1;

  double cycle_length_ms() const {
    double s = 0.0;
    for (const auto& p : phases) s += p.duration_ms;
    return s;
  }

  void validate() const {
    if (format_version != kFormatVersion)
      throw ConfigError("unsupported format_version " + std::to_string(format_version));
    if (phases.size() < 2)
      throw ConfigError("a CPG needs at least 2 phases (got " + std::to_string(phases.size()) + ")");
    if (motor_neuron_count < 1) throw ConfigError("motor_neuron_count must be at least 1");
    if (!std::isfinite(tonic_frequency_default) || tonic_frequency_default <= 0.0)
      throw ConfigError("tonic_frequency_default must be positive");
    for (std::size_t m = 0; m < phases.size(); ++m) {
      const auto& p = phases[m];
      const std::string where = "phase " + std::to_string(m + 1) + ": ";
      if (!std::isfinite(p.duration_ms) || p.duration_ms <= 0.0)
        throw ConfigError(where + "duration_ms must be positive");
      if (p.pfn_size < kMinPfnSize || p.pfn_size > kMaxPfnSize)
        throw ConfigError(where + "pfn_size must lie in [" + std::to_string(kMinPfnSize) + ", " +
                          std::to_string(kMaxPfnSize) + "]");
      if (p.t_neuron_count < 0) throw ConfigError(where + "t_neuron_count must be positive");
    }
  }

  bool operator==(const CpgSpec&) const = default;
};

// Every fixed (non-learned) weight of the architecture, in pA. Calibration
// searches over a subset of these and the result travels with the network.
struct CpgWeights {
  // phase generator
  double h_autapse = 1500.0;
  double h_to_q = 2000.0;
  double q_to_other_h = -1000.0;
  double h_to_first_t = 2000.0;
  double q_to_first_t = -6000.0;  // keeps the chain head one-shot while H keeps firing
  double t_chain = 1500.0;
  double t_self = -3000.0;        // stops a relay from firing twice on one volley
  double t_to_next_h = 12000.0;
  double t_to_own_h = -20000.0;
  double tonic_to_start_h = 400.0;
  double tonic_to_h = 50.0;
  double tonic_to_t = 30.0;
  // pattern forming + inhibiting networks
  double h_to_pfn = 20.0;
  double t_to_pfn = 1000.0;
  int t_to_pfn_window = 12;  // consecutive relays feeding one PFN neuron
  int t_to_pfn_lead = 0;     // relays between window start and the intended firing relay
  double tonic_to_pfn = 10.0;
  double pfn_to_in = 6000.0;
  double in_autapse = 1500.0;
  double in_to_pfn = -15000.0;
  double q_to_in = -3000.0;
  double q_to_pfn = -800.0;  // holds near-spontaneous PFN neurons outside their phase
  double hold_margin_pA = 100.0;
  // PFN -> IN -> PFN must close before the PFN neuron leaves refractoriness
  double in_loop_delay_ms = 0.3;
  // motor pool
  double tonic_to_motor = 50.0;
  // relay time used to derive T-chain lengths before measurement
  double relay_step_ms = 4.3;

  bool operator==(const CpgWeights&) const = default;

  template <typename F>
  void for_each_field(F&& f) {
    f("h_autapse", h_autapse);
    f("h_to_q", h_to_q);
    f("q_to_other_h", q_to_other_h);
    f("h_to_first_t", h_to_first_t);
    f("q_to_first_t", q_to_first_t);
    f("t_chain", t_chain);
    f("t_self", t_self);
    f("t_to_next_h", t_to_next_h);
    f("t_to_own_h", t_to_own_h);
    f("tonic_to_start_h", tonic_to_start_h);
    f("tonic_to_h", tonic_to_h);
    f("tonic_to_t", tonic_to_t);
    f("h_to_pfn", h_to_pfn);
    f("t_to_pfn", t_to_pfn);
    double window = t_to_pfn_window;
    f("t_to_pfn_window", window);
    t_to_pfn_window = static_cast<int>(std::lround(window));
    double lead = t_to_pfn_lead;
    f("t_to_pfn_lead", lead);
    t_to_pfn_lead = static_cast<int>(std::lround(lead));
    f("tonic_to_pfn", tonic_to_pfn);
    f("pfn_to_in", pfn_to_in);
    f("in_autapse", in_autapse);
    f("in_to_pfn", in_to_pfn);
    f("q_to_in", q_to_in);
    f("q_to_pfn", q_to_pfn);
    f("hold_margin_pA", hold_margin_pA);
    f("in_loop_delay_ms", in_loop_delay_ms);
    f("tonic_to_motor", tonic_to_motor);
    f("relay_step_ms", relay_step_ms);
  }
};

// Where a PFN neuron taps the T-chain: first relay of its window and the
// conduction delay of those synapses.
struct PfnWiring {
  int start_relay = 0;
  double delay_ms = 1.0;

  bool operator==(const PfnWiring&) const = default;
};

using PfnLayout = std::vector<std::vector<PfnWiring>>;  // per phase, per PFN neuron

struct PhaseHandles {
  PopulationHandle h, q, t, pfn, in;
};

struct CpgNetwork {
  CpgSpec spec;
  CpgWeights weights;
  std::vector<int> t_counts;  // resolved T-chain length per phase
  Network net;
  PopulationHandle tonic;
  std::vector<PhaseHandles> phases;
  std::optional<PopulationHandle> motor;  // absent for generator-only builds
  std::vector<char> pfn_inhibitory;       // per neuron id, 1 if the PFN neuron projects inhibitory to motor
  PfnLayout pfn_layout;

  int phase_count() const { return static_cast<int>(phases.size()); }
  bool has_pattern_layer() const { return !phases.empty() && phases.front().pfn.count > 0; }

  std::vector<std::size_t> plastic_synapses() const {
    std::vector<std::size_t> out;
    const auto& syn = net.synapses();
    for (std::size_t i = 0; i < syn.size(); ++i)
      if (syn[i].plastic) out.push_back(i);
    return out;
  }

  std::vector<PopulationHandle> npg_populations() const {
    std::vector<PopulationHandle> v;
    for (const auto& p : phases) {
      v.push_back(p.h);
      v.push_back(p.q);
      v.push_back(p.t);
    }
    return v;
  }

  std::vector<PopulationHandle> pfn_populations() const {
    std::vector<PopulationHandle> v;
    for (const auto& p : phases)
      if (p.pfn.count > 0) v.push_back(p.pfn);
    return v;
  }

  int first_h() const { return phases.front().h.first; }
};

namespace detail {

inline int derived_t_count(const PhaseSpec& p, const CpgWeights& w) {
  if (p.t_neuron_count > 0) return p.t_neuron_count;
  return std::max(2, static_cast<int>(std::lround(p.duration_ms / w.relay_step_ms)));
}

// Bias current within `margin` of the rheobase C (V_th - E_L) / tau_m.
inline bool near_spontaneous(const NeuronParams& p, double margin_pA) {
  const double rheobase = p.membrane_capacity_pF * (p.spike_threshold_mV - p.resting_potential_mV) /
                          p.membrane_time_constant_ms;
  return p.external_current_pA + margin_pA >= rheobase;
}

inline void add(Network& net, int pre, int post, double w, double delay = 1.0) {
  net.add_synapse({pre, post, w, w >= 0.0 ? SignClass::excitatory : SignClass::inhibitory, false, delay});
}

}  // namespace detail

struct BuildOptions {
  bool pattern_layer = true;  // PFN + IN
  bool motor_pool = true;
};

// Builds the network. t_counts overrides the T-chain length per phase when given.
// A given layout replaces the default stratified T-chain taps of the PFN neurons.
inline CpgNetwork build(const CpgSpec& spec, const CpgWeights& w, std::vector<int> t_counts = {},
                        BuildOptions opts = {}, const PfnLayout& layout = {}) {
  spec.validate();
  const int phases = static_cast<int>(spec.phases.size());
  if (!t_counts.empty() && static_cast<int>(t_counts.size()) != phases)
    throw ConfigError("t_counts must list one chain length per phase");
  if (t_counts.empty())
    for (const auto& p : spec.phases) t_counts.push_back(detail::derived_t_count(p, w));
  for (int c : t_counts)
    if (c < 2) throw ConfigError("T-chain needs at least 2 neurons (one relay plus the transition neuron)");

  if (!layout.empty()) {
    if (layout.size() != spec.phases.size()) throw ConfigError("PFN layout must list every phase");
    for (std::size_t m = 0; m < layout.size(); ++m) {
      if (static_cast<int>(layout[m].size()) != spec.phases[m].pfn_size)
        throw ConfigError("PFN layout size differs from pfn_size in phase " + std::to_string(m + 1));
      for (const auto& x : layout[m])
        if (x.start_relay < 0 || x.start_relay >= t_counts[m] - 1 || !(x.delay_ms > 0.0))
          throw ConfigError("PFN layout entry out of range in phase " + std::to_string(m + 1));
    }
  }
  CpgNetwork cpg{spec, w, t_counts, Network(spec.seed), {}, {}, std::nullopt, {}, {}};
  Network& net = cpg.net;
  cpg.tonic = net.add_population(1, ParamRange::cpg(), Role::tonic_source);

  cpg.phases.resize(static_cast<std::size_t>(phases));
  for (int m = 0; m < phases; ++m) {
    auto& ph = cpg.phases[static_cast<std::size_t>(m)];
    ph.h = net.add_population(1, ParamRange::cpg(), Role::npg_h);
    ph.q = net.add_population(1, ParamRange::cpg(), Role::npg_q);
    ph.t = net.add_population(t_counts[static_cast<std::size_t>(m)], ParamRange::cpg(), Role::npg_t);
  }

  // Phase generator wiring.
  const int tonic = cpg.tonic.first;
  for (int m = 0; m < phases; ++m) {
    const auto& ph = cpg.phases[static_cast<std::size_t>(m)];
    const auto& next = cpg.phases[static_cast<std::size_t>((m + 1) % phases)];
    const int h = ph.h.first, q = ph.q.first;
    detail::add(net, h, h, w.h_autapse);
    detail::add(net, h, q, w.h_to_q);
    for (int j = 0; j < phases; ++j)
      if (j != m) detail::add(net, q, cpg.phases[static_cast<std::size_t>(j)].h.first, w.q_to_other_h);
    detail::add(net, tonic, h, m == 0 ? w.tonic_to_start_h : w.tonic_to_h);

    detail::add(net, h, ph.t.first, w.h_to_first_t);
    detail::add(net, q, ph.t.first, w.q_to_first_t);
    for (int i = 0; i < ph.t.count; ++i) {
      detail::add(net, ph.t.id(i), ph.t.id(i), w.t_self);
      if (i + 1 < ph.t.count) {
        detail::add(net, ph.t.id(i), ph.t.id(i + 1), w.t_chain);
        detail::add(net, tonic, ph.t.id(i), w.tonic_to_t);
      }
    }
    const int last = ph.t.id(ph.t.count - 1);
    detail::add(net, last, next.h.first, w.t_to_next_h);
    detail::add(net, last, h, w.t_to_own_h);
  }

  if (opts.pattern_layer) {
    for (int m = 0; m < phases; ++m) {
      auto& ph = cpg.phases[static_cast<std::size_t>(m)];
      const int size = spec.phases[static_cast<std::size_t>(m)].pfn_size;
      ph.pfn = net.add_population(size, ParamRange::pfn(), Role::pfn);
      ph.in = net.add_population(size, ParamRange::cpg(), Role::in);
    }
    for (int m = 0; m < phases; ++m) {
      const auto& ph = cpg.phases[static_cast<std::size_t>(m)];
      const auto& next = cpg.phases[static_cast<std::size_t>((m + 1) % phases)];
      net.connect(ph.pfn, ph.pfn, Pattern::random_pairwise(0.10), {-3.0, -1.0}, SignClass::inhibitory, false);
      net.connect(ph.pfn, ph.in, Pattern::one_to_one(), WeightRange::constant(w.pfn_to_in),
                  SignClass::excitatory, false, w.in_loop_delay_ms);
      net.connect(ph.in, ph.in, Pattern::one_to_one(), WeightRange::constant(w.in_autapse),
                  SignClass::excitatory, false);
      net.connect(ph.in, ph.pfn, Pattern::one_to_one(), WeightRange::constant(w.in_to_pfn),
                  SignClass::inhibitory, false, w.in_loop_delay_ms);
      net.connect(next.q, ph.in, Pattern::all_to_all(), WeightRange::constant(w.q_to_in),
                  SignClass::inhibitory, false);
      // Outside its phase a PFN neuron's partner IN is held in reset, so neurons
      // whose own bias current nearly reaches threshold would fire repeatedly.
      // Only those get the hold from the other phases' Q neurons; holding every
      // neuron would leave the whole population hyperpolarized at phase onset.
      for (int id : ph.pfn.ids())
        if (detail::near_spontaneous(net.params(id), w.hold_margin_pA))
          for (int j = 0; j < phases; ++j)
            if (j != m) detail::add(net, cpg.phases[static_cast<std::size_t>(j)].q.first, id, w.q_to_pfn);
      net.connect(ph.h, ph.pfn, Pattern::all_to_all(), WeightRange::constant(w.h_to_pfn),
                  SignClass::excitatory, false);
      net.connect(cpg.tonic, ph.pfn, Pattern::all_to_all(), WeightRange::constant(w.tonic_to_pfn),
                  SignClass::excitatory, false);
      // Each PFN neuron listens to a run of consecutive intermediate relays ending
      // a little after its target relay. Targets are stratified over the chain
      // (jittered, randomly assigned) so spikes cover the phase without gaps.
      const int relays = ph.t.count - 1;
      const int window = std::clamp(w.t_to_pfn_window, 1, relays);
      std::vector<int> order = ph.pfn.ids();
      net.rng().shuffle(order);
      // The fractional part of the target becomes extra conduction delay, which
      // spreads firing between relay ticks.
      std::vector<PfnWiring> taps(static_cast<std::size_t>(ph.pfn.count));
      for (int k = 0; k < ph.pfn.count; ++k) {
        const double pos = (k + net.rng().unit()) / ph.pfn.count * relays;
        const int target = std::min(relays - 1, static_cast<int>(pos));
        taps[static_cast<std::size_t>(order[static_cast<std::size_t>(k)] - ph.pfn.first)] = {
            std::clamp(target - w.t_to_pfn_lead, 0, relays - 1), 1.0 + (pos - target) * w.relay_step_ms};
      }
      if (!layout.empty()) taps = layout[static_cast<std::size_t>(m)];
      for (int k = 0; k < ph.pfn.count; ++k) {
        const auto& tap = taps[static_cast<std::size_t>(k)];
        const int stop = std::min(tap.start_relay + window, relays);
        for (int i = tap.start_relay; i < stop; ++i) detail::add(net, ph.t.id(i), ph.pfn.id(k), w.t_to_pfn, tap.delay_ms);
      }
      cpg.pfn_layout.push_back(std::move(taps));
    }
  }

  if (opts.pattern_layer && opts.motor_pool) {
    const auto motor = net.add_population(spec.motor_neuron_count, ParamRange::motor(), Role::motor);
    cpg.motor = motor;
    cpg.pfn_inhibitory.assign(static_cast<std::size_t>(net.neuron_count()), 0);
    for (const auto& ph : cpg.phases) {
      // A fixed fraction of each PFN, chosen uniformly, is inhibitory toward the pool.
      std::vector<int> ids = ph.pfn.ids();
      net.rng().shuffle(ids);
      const auto n_inh = static_cast<std::size_t>(std::lround(0.20 * ph.pfn.count));
      for (std::size_t k = 0; k < n_inh; ++k) cpg.pfn_inhibitory[static_cast<std::size_t>(ids[k])] = 1;
      for (int id : ph.pfn.ids()) {
        const int one[] = {id};
        const auto posts = motor.ids();
        if (cpg.pfn_inhibitory[static_cast<std::size_t>(id)])
          net.connect(one, posts, Pattern::all_to_all(), {-25.0, -1.0}, SignClass::inhibitory, true);
        else
          net.connect(one, posts, Pattern::all_to_all(), {1.0, 5.0}, SignClass::excitatory, true);
      }
    }
    net.connect(cpg.tonic, motor, Pattern::all_to_all(), WeightRange::constant(w.tonic_to_motor),
                SignClass::excitatory, false);
  }
  return cpg;
}

// ---------------------------------------------------------------------------
// Running and measuring

struct CpgRun {
  double duration_ms = 3000.0;
  double dt_ms = 0.1;
  std::vector<TonicSource> tonic;  // consecutive segments; empty = no input
  std::vector<PopulationHandle> record;
};

inline std::vector<TonicSource> constant_tonic(double frequency_hz, double start_ms, double stop_ms) {
  if (frequency_hz <= 0.0 || stop_ms <= start_ms) return {};
  return {TonicSource{frequency_hz, start_ms, stop_ms, TonicMode::regular, 0}};
}

inline SimulationResult simulate(const CpgNetwork& cpg, const CpgRun& run) {
  RunConfig cfg;
  cfg.duration_ms = run.duration_ms;
  cfg.dt_ms = run.dt_ms;
  cfg.record = run.record;
  cfg.seed = cpg.spec.seed;
  if (!run.tonic.empty()) cfg.drives.push_back(tonic_drive(cpg.tonic.first, run.tonic));
  return cpg.net.run(cfg);
}

// Onsets of activity bursts: spikes preceded by at least `gap_ms` of silence.
inline std::vector<double> burst_onsets(const SpikeTrain& t, double gap_ms = 20.0) {
  std::vector<double> out;
  const auto& s = t.spike_times_ms;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (i == 0 || s[i] - s[i - 1] > gap_ms) out.push_back(s[i]);
  return out;
}

struct PhaseInterval {
  int phase;
  double onset_ms;
  double duration_ms;  // onset of the following phase minus this onset
};

// Phase sequence read from the H neurons; only intervals closed by a later onset are listed.
inline std::vector<PhaseInterval> phase_intervals(const CpgNetwork& cpg, const SimulationResult& r) {
  std::vector<std::pair<double, int>> on;
  for (int m = 0; m < cpg.phase_count(); ++m)
    for (double t : burst_onsets(r.train(cpg.phases[static_cast<std::size_t>(m)].h.first)))
      on.push_back({t, m});
  std::sort(on.begin(), on.end());
  std::vector<PhaseInterval> out;
  for (std::size_t i = 0; i + 1 < on.size(); ++i)
    out.push_back({on[i].second, on[i].first, on[i + 1].first - on[i].first});
  return out;
}

inline std::vector<double> cycle_onsets(const CpgNetwork& cpg, const SimulationResult& r) {
  return burst_onsets(r.train(cpg.first_h()));
}

struct PhaseReport {
  double tonic_frequency_hz = 0.0;
  double tonic_stop_ms = 0.0;
  std::vector<double> target_durations_ms;
  std::vector<double> driven_durations_ms;            // per phase, with continuous input
  std::vector<std::vector<double>> free_durations_ms;  // per cycle after input removal, per phase
  std::vector<double> onsets_ms;                       // cycle onsets in the removal run
  int cycles_after_removal = 0;
  bool exclusive = true;
  bool durations_within_tolerance = false;  // driven vs target, +-10 %
  bool free_durations_within_tolerance = false;  // free vs driven, +-15 %
  std::size_t npg_spikes = 0;
  bool pass = false;
};

namespace detail {

// Exclusive activity: H spikes, read in time order, form runs that follow the
// cyclic phase order, and no run other than the first and the last is shorter
// than the transition window.
inline bool exclusive_activity(const CpgNetwork& cpg, const SimulationResult& r, double window_ms = 20.0) {
  std::vector<std::pair<double, int>> all;
  for (int m = 0; m < cpg.phase_count(); ++m)
    for (double t : r.train(cpg.phases[static_cast<std::size_t>(m)].h.first).spike_times_ms)
      all.push_back({t, m});
  std::sort(all.begin(), all.end());
  struct RunSpan {
    int phase;
    double from, to;
  };
  std::vector<RunSpan> runs;
  for (const auto& [t, m] : all) {
    if (runs.empty() || runs.back().phase != m)
      runs.push_back({m, t, t});
    else
      runs.back().to = t;
  }
  const int p = cpg.phase_count();
  for (std::size_t i = 1; i < runs.size(); ++i) {
    if (runs[i].phase != (runs[i - 1].phase + 1) % p) return false;
    if (i + 1 < runs.size() && runs[i].to - runs[i].from < window_ms) return false;
  }
  return true;
}

// Mean per-phase duration over complete cycles that start at or after `from`.
inline std::vector<double> mean_phase_durations(const CpgNetwork& cpg, const std::vector<PhaseInterval>& iv,
                                                double from, double to) {
  std::vector<double> sum(static_cast<std::size_t>(cpg.phase_count()), 0.0);
  std::vector<int> n(sum.size(), 0);
  for (const auto& x : iv) {
    if (x.onset_ms < from || x.onset_ms + x.duration_ms > to) continue;
    sum[static_cast<std::size_t>(x.phase)] += x.duration_ms;
    ++n[static_cast<std::size_t>(x.phase)];
  }
  for (std::size_t m = 0; m < sum.size(); ++m) sum[m] = n[m] ? sum[m] / n[m] : NAN;
  return sum;
}

}  // namespace detail

// Runs the phase generator driven for one cycle, then without input, and checks
// that it keeps oscillating for `cycles` further cycles with one active phase at a time.
inline PhaseReport validate_oscillation(const CpgNetwork& cpg, double tonic_hz, int cycles, double dt_ms = 0.1) {
  PhaseReport rep;
  rep.tonic_frequency_hz = tonic_hz;
  for (const auto& p : cpg.spec.phases) rep.target_durations_ms.push_back(p.duration_ms);
  const double cycle = cpg.spec.cycle_length_ms();
  const auto npg = cpg.npg_populations();

  // Reference: continuous input.
  {
    CpgRun run{cycle * 3.0 + 100.0, dt_ms, constant_tonic(tonic_hz, 0.0, cycle * 3.0 + 100.0), npg};
    const auto r = simulate(cpg, run);
    const auto iv = phase_intervals(cpg, r);
    const auto on = cycle_onsets(cpg, r);
    // skip the start-up cycle when a later one is complete
    const double from = on.size() >= 3 ? on[1] : (on.empty() ? 0.0 : on[0]);
    rep.driven_durations_ms = detail::mean_phase_durations(cpg, iv, from, run.duration_ms);
  }
  bool durations_ok = !rep.driven_durations_ms.empty();
  for (std::size_t m = 0; m < rep.driven_durations_ms.size(); ++m) {
    const double d = rep.driven_durations_ms[m];
    if (!std::isfinite(d) || std::abs(d - rep.target_durations_ms[m]) > 0.10 * rep.target_durations_ms[m])
      durations_ok = false;
  }
  rep.durations_within_tolerance = durations_ok;

  // Removal run: input for the first cycle only.
  if (tonic_hz > 0.0) {
    CpgRun probe{cycle * 1.5 + 50.0, dt_ms, constant_tonic(tonic_hz, 0.0, cycle * 1.5 + 50.0), {cpg.phases[0].h}};
    const auto on = cycle_onsets(cpg, simulate(cpg, probe));
    rep.tonic_stop_ms = on.size() >= 2 ? on[1] : cycle + 50.0;
  }
  const double total = rep.tonic_stop_ms + (cycles + 1.5) * cycle * 1.3;
  CpgRun run{total, dt_ms, constant_tonic(tonic_hz, 0.0, rep.tonic_stop_ms), npg};
  const auto r = simulate(cpg, run);
  rep.npg_spikes = r.total_spikes();
  rep.onsets_ms = cycle_onsets(cpg, r);
  rep.exclusive = detail::exclusive_activity(cpg, r);
  const auto iv = phase_intervals(cpg, r);

  // Complete free-running cycles: onset pairs at or after input removal.
  std::vector<double> free_onsets;
  for (double t : rep.onsets_ms)
    if (t >= rep.tonic_stop_ms - 1e-9) free_onsets.push_back(t);
  rep.cycles_after_removal = free_onsets.size() >= 2 ? static_cast<int>(free_onsets.size()) - 1 : 0;
  bool free_ok = rep.cycles_after_removal > 0;
  for (std::size_t c = 0; c + 1 < free_onsets.size(); ++c) {
    std::vector<double> durs(static_cast<std::size_t>(cpg.phase_count()), NAN);
    for (const auto& x : iv)
      if (x.onset_ms >= free_onsets[c] && x.onset_ms < free_onsets[c + 1])
        durs[static_cast<std::size_t>(x.phase)] = x.duration_ms;
    for (std::size_t m = 0; m < durs.size(); ++m) {
      const double ref = rep.driven_durations_ms.empty() ? NAN : rep.driven_durations_ms[m];
      if (!std::isfinite(durs[m]) || !std::isfinite(ref) || std::abs(durs[m] - ref) > 0.15 * ref)
        free_ok = false;
    }
    rep.free_durations_ms.push_back(std::move(durs));
  }
  rep.free_durations_within_tolerance = free_ok;
  rep.pass = tonic_hz > 0.0 && rep.exclusive && rep.cycles_after_removal >= cycles;
  return rep;
}

struct SpikeViolation {
  int neuron_id;
  int cycle;  // 0-based, counted from the first phase-1 onset
  int spikes;

  bool operator==(const SpikeViolation&) const = default;
};

struct SingleSpikeReport {
  std::vector<SpikeViolation> violations;
  std::vector<double> onsets_ms;
  // fraction of PFN neurons that fired in each complete cycle, per phase
  std::vector<std::vector<double>> firing_fraction;
};

inline SingleSpikeReport single_spike_report(const CpgNetwork& cpg, double duration_ms, double tonic_hz,
                                             double dt_ms = 0.1) {
  if (!cpg.has_pattern_layer()) throw ConfigError("network has no pattern forming layer");
  auto record = cpg.pfn_populations();
  record.push_back(cpg.phases[0].h);
  const auto r = simulate(cpg, {duration_ms, dt_ms, constant_tonic(tonic_hz, 0.0, duration_ms), record});
  SingleSpikeReport rep;
  rep.onsets_ms = cycle_onsets(cpg, r);
  const auto& on = rep.onsets_ms;
  for (std::size_t c = 0; c < on.size(); ++c) {
    const double from = on[c];
    const double to = c + 1 < on.size() ? on[c + 1] : r.total_duration_ms + 1.0;
    std::vector<double> frac;
    for (const auto& pfn : cpg.pfn_populations()) {
      int fired = 0;
      for (int id = pfn.first; id < pfn.end(); ++id) {
        const auto n = r.train(id).count_in(from, to);
        if (n > 1) rep.violations.push_back({id, static_cast<int>(c), static_cast<int>(n)});
        if (n > 0) ++fired;
      }
      frac.push_back(static_cast<double>(fired) / pfn.count);
    }
    if (c + 1 < on.size()) rep.firing_fraction.push_back(std::move(frac));
  }
  return rep;
}

inline std::vector<SpikeViolation> single_spike_check(const CpgNetwork& cpg, double duration_ms,
                                                      double dt_ms = 0.1) {
  return single_spike_report(cpg, duration_ms, cpg.spec.tonic_frequency_default, dt_ms).violations;
}

// ---------------------------------------------------------------------------
// Fault injection (used to show that each inhibiting-network mechanism is needed)

enum class Fault { in_to_pfn_zeroed, in_autapse_removed };

inline CpgNetwork inject_fault(CpgNetwork cpg, Fault f) {
  std::vector<char> is_in(static_cast<std::size_t>(cpg.net.neuron_count()), 0), is_pfn(is_in.size(), 0);
  for (const auto& ph : cpg.phases) {
    for (int id = ph.in.first; id < ph.in.end(); ++id) is_in[static_cast<std::size_t>(id)] = 1;
    for (int id = ph.pfn.first; id < ph.pfn.end(); ++id) is_pfn[static_cast<std::size_t>(id)] = 1;
  }
  const auto& syn = cpg.net.synapses();
  for (std::size_t i = 0; i < syn.size(); ++i) {
    const auto& s = syn[i];
    if (f == Fault::in_to_pfn_zeroed && is_in[static_cast<std::size_t>(s.pre)] &&
        is_pfn[static_cast<std::size_t>(s.post)])
      cpg.net.set_weight(i, 0.0);
  }
  if (f == Fault::in_autapse_removed)
    cpg.net.remove_synapses_if([&](const SynapseSpec& s) {
      return s.pre == s.post && is_in[static_cast<std::size_t>(s.pre)];
    });
  return cpg;
}

// ---------------------------------------------------------------------------
// PFN timing

// Moves each PFN neuron's tap on the T-chain so that, at the given input
// frequency, the population fires on evenly spaced slots across its phase.
// Latency after the first tapped relay is measured per neuron (it varies with
// the random neuron parameters) and compensated through window start and delay.
inline PfnLayout scatter_pfn_timing(const CpgNetwork& cpg, double tonic_hz, double dt_ms = 0.1, int iterations = 3) {
  if (!cpg.has_pattern_layer()) throw ConfigError("network has no pattern forming layer");
  PfnLayout layout = cpg.pfn_layout;
  const double cycle = cpg.spec.cycle_length_ms();
  std::vector<std::vector<double>> slot(layout.size());  // target firing time after phase onset, NaN = unassigned
  for (int it = 0; it < iterations; ++it) {
    const auto net = build(cpg.spec, cpg.weights, cpg.t_counts, {true, false}, layout);
    auto rec = net.npg_populations();
    for (const auto& p : net.pfn_populations()) rec.push_back(p);
    const double duration = cycle * 2.6 + 100.0;
    const auto r = simulate(net, {duration, dt_ms, constant_tonic(tonic_hz, 0.0, duration), rec});
    const auto on = cycle_onsets(net, r);
    if (on.size() < 3) return layout;
    const auto iv = phase_intervals(net, r);
    for (int m = 0; m < net.phase_count(); ++m) {
      const auto mi = static_cast<std::size_t>(m);
      const auto& ph = net.phases[mi];
      const auto iv_it = std::find_if(iv.begin(), iv.end(), [&](const PhaseInterval& x) {
        return x.phase == m && x.onset_ms >= on[1] - 1e-9 && x.onset_ms < on[2];
      });
      if (iv_it == iv.end()) return layout;
      const double o = iv_it->onset_ms, next = o + iv_it->duration_ms;
      const int relays = ph.t.count - 1;
      std::vector<double> relay_t(static_cast<std::size_t>(relays));
      for (int i = 0; i < relays; ++i) {
        const auto v = r.train(ph.t.id(i)).window(o, next);
        if (v.empty()) return layout;
        relay_t[static_cast<std::size_t>(i)] = v.front();
      }
      auto& taps = layout[mi];
      std::vector<double> lat(taps.size(), NAN);
      for (std::size_t k = 0; k < taps.size(); ++k) {
        const auto v = r.train(ph.pfn.id(static_cast<int>(k))).window(o, next);
        if (!v.empty()) lat[k] = v.front() - relay_t[static_cast<std::size_t>(taps[k].start_relay)] - taps[k].delay_ms;
      }
      if (slot[mi].empty()) {
        // Fastest neurons take the earliest slots.
        std::vector<std::size_t> idx;
        for (std::size_t k = 0; k < lat.size(); ++k)
          if (std::isfinite(lat[k])) idx.push_back(k);
        if (idx.empty()) continue;
        std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return lat[a] < lat[b]; });
        const double lo = relay_t.front() + 1.0 + std::max(0.0, lat[idx.front()]);
        const double hi = next - o;
        slot[mi].assign(taps.size(), NAN);
        for (std::size_t j = 0; j < idx.size(); ++j)
          slot[mi][idx[j]] = lo + (static_cast<double>(j) + 0.5) / static_cast<double>(idx.size()) * (hi - lo);
      }
      for (std::size_t k = 0; k < taps.size(); ++k) {
        if (!std::isfinite(lat[k]) || !std::isfinite(slot[mi][k])) continue;
        const double lambda = std::max(0.0, lat[k]);
        const double target = slot[mi][k];
        int s = 0;
        for (int i = relays - 1; i >= 0; --i)
          if (relay_t[static_cast<std::size_t>(i)] + 1.0 + lambda <= target) {
            s = i;
            break;
          }
        double d = std::max(1.0, target - relay_t[static_cast<std::size_t>(s)] - lambda);
        d = std::max(dt_ms, std::round(d / dt_ms) * dt_ms);
        taps[k] = {s, d};
      }
    }
  }
  return layout;
}

// ---------------------------------------------------------------------------
// Calibration

struct CalibrationResult {
  CpgWeights weights;
  std::vector<int> t_counts;
  PhaseReport oscillation;
  PfnLayout pfn_layout;
  std::vector<double> pfn_firing_fraction;  // worst cycle, per phase
  int candidates_tried = 0;
};

struct CalibrationOptions {
  double dt_ms = 0.1;
  int persistence_cycles = 5;
  int pattern_cycles = 5;
  double min_pfn_firing = 0.60;
  double duration_fit = 0.02;  // T-chain length refinement target
};

namespace detail {

// Candidate generator weights in a fixed order, starting from the defaults.
inline std::vector<CpgWeights> npg_grid(const CpgWeights& base) {
  std::vector<CpgWeights> out;
  for (double h_auto : {1.0, 1.3, 0.8})
    for (double chain : {1.0, 1.2, 0.87})
      for (double next : {1.0, 1.5})
        for (double q : {1.0, 1.5})
          for (double tonic : {1.0, 0.67, 1.33}) {
            CpgWeights w = base;
            w.h_autapse *= h_auto;
            w.t_chain *= chain;
            w.t_to_next_h *= next;
            w.q_to_other_h *= q;
            w.tonic_to_t *= tonic;
            out.push_back(w);
          }
  return out;
}

inline std::vector<CpgWeights> pattern_grid(const CpgWeights& base) {
  std::vector<CpgWeights> out;
  for (double drive : {1.0, 0.75, 1.5})
    for (double hold : {1.0, 1.5, 0.6})
      for (double in_scale : {1.0, 1.5}) {
        CpgWeights w = base;
        w.t_to_pfn *= drive;
        w.q_to_pfn *= hold;
        w.in_to_pfn *= in_scale;
        w.pfn_to_in *= in_scale;
        out.push_back(w);
      }
  return out;
}

// Adjusts derived T-chain lengths until driven phase durations sit close to the
// targets. Returns the failing phase index, or -1.
inline int fit_chain_lengths(const CpgSpec& spec, const CpgWeights& w, std::vector<int>& counts,
                             const CalibrationOptions& opt) {
  const double cycle = spec.cycle_length_ms();
  const double f = spec.tonic_frequency_default;
  for (int iter = 0; iter < 5; ++iter) {
    const auto cpg = build(spec, w, counts, {false, false});
    CpgRun run{cycle * 3.0 + 100.0, opt.dt_ms, constant_tonic(f, 0.0, cycle * 3.0 + 100.0), cpg.npg_populations()};
    const auto r = simulate(cpg, run);
    const auto iv = phase_intervals(cpg, r);
    const auto on = cycle_onsets(cpg, r);
    const double from = on.size() >= 3 ? on[1] : (on.empty() ? 0.0 : on[0]);
    const auto d = mean_phase_durations(cpg, iv, from, run.duration_ms);
    bool all_close = true;
    for (std::size_t m = 0; m < d.size(); ++m) {
      if (!std::isfinite(d[m])) return static_cast<int>(m);
      const double target = spec.phases[m].duration_ms;
      if (std::abs(d[m] - target) > opt.duration_fit * target) {
        all_close = false;
        if (spec.phases[m].t_neuron_count == 0)
          counts[m] = std::max(2, static_cast<int>(std::lround(counts[m] * target / d[m])));
      }
    }
    if (all_close) return -1;
  }
  return -1;  // final tolerance is judged by validate_oscillation
}

inline int first_bad_phase(const PhaseReport& rep) {
  for (std::size_t m = 0; m < rep.driven_durations_ms.size(); ++m) {
    const double d = rep.driven_durations_ms[m];
    if (!std::isfinite(d) || std::abs(d - rep.target_durations_ms[m]) > 0.10 * rep.target_durations_ms[m])
      return static_cast<int>(m);
  }
  for (const auto& cyc : rep.free_durations_ms)
    for (std::size_t m = 0; m < cyc.size(); ++m)
      if (!std::isfinite(cyc[m])) return static_cast<int>(m);
  return 0;
}

}  // namespace detail

// Deterministic grid search for the fixed weights. The generator is tuned first
// (duration, persistence, exclusivity), then the pattern forming layer (single
// spike per cycle with enough neurons taking part).
inline CalibrationResult calibrate(const CpgSpec& spec, const CpgWeights& base = {}, CalibrationOptions opt = {}) {
  spec.validate();
  CalibrationResult res;
  int failing_phase = 0;
  std::string reason = "no generator configuration met the phase duration and persistence constraints";
  bool npg_ok = false;
  for (const auto& w : detail::npg_grid(base)) {
    ++res.candidates_tried;
    std::vector<int> counts;
    for (const auto& p : spec.phases) counts.push_back(detail::derived_t_count(p, w));
    const int bad = detail::fit_chain_lengths(spec, w, counts, opt);
    if (bad >= 0) {
      failing_phase = bad;
      continue;
    }
    const auto npg = build(spec, w, counts, {false, false});
    auto rep = validate_oscillation(npg, spec.tonic_frequency_default, opt.persistence_cycles, opt.dt_ms);
    if (rep.pass && rep.durations_within_tolerance) {
      res.weights = w;
      res.t_counts = counts;
      res.oscillation = std::move(rep);
      npg_ok = true;
      break;
    }
    failing_phase = detail::first_bad_phase(rep);
  }
  if (!npg_ok) throw CalibrationError(failing_phase + 1, reason);

  const double cycle = spec.cycle_length_ms();
  // Pattern layer search uses a motor-free build; motor wiring does not feed back.
  for (const auto& w : detail::pattern_grid(res.weights)) {
    ++res.candidates_tried;
    const auto draft = build(spec, w, res.t_counts, {true, false});
    auto layout = scatter_pfn_timing(draft, spec.tonic_frequency_default, opt.dt_ms);
    const auto cpg = build(spec, w, res.t_counts, {true, false}, layout);
    const auto rep = single_spike_report(cpg, cycle * (opt.pattern_cycles + 1.2), spec.tonic_frequency_default, opt.dt_ms);
    if (!rep.violations.empty() || static_cast<int>(rep.firing_fraction.size()) < opt.pattern_cycles) continue;
    std::vector<double> worst(static_cast<std::size_t>(cpg.phase_count()), 1.0);
    for (const auto& c : rep.firing_fraction)
      for (std::size_t m = 0; m < c.size(); ++m) worst[m] = std::min(worst[m], c[m]);
    if (*std::min_element(worst.begin(), worst.end()) < opt.min_pfn_firing) {
      failing_phase = static_cast<int>(std::min_element(worst.begin(), worst.end()) - worst.begin());
      continue;
    }
    res.weights = w;
    res.pfn_layout = std::move(layout);
    res.pfn_firing_fraction = worst;
    return res;
  }
  throw CalibrationError(failing_phase + 1,
                         "no inhibiting-network configuration gave one spike per cycle with >= " +
                             std::to_string(static_cast<int>(opt.min_pfn_firing * 100)) + "% of PFN neurons firing");
}

inline CpgNetwork build_calibrated(const CpgSpec& spec, CalibrationResult* out = nullptr,
                                   const CpgWeights& base = {}, CalibrationOptions opt = {}) {
  auto res = calibrate(spec, base, opt);
  auto cpg = build(spec, res.weights, res.t_counts, {}, res.pfn_layout);
  if (out) *out = std::move(res);
  return cpg;
}

}  // namespace spikecpg

#pragma once

// ReSuMe supervised learning on the PFN -> motor synapses.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "spikecpg/cpg.hpp"
#include "spikecpg/error.hpp"
#include "spikecpg/rng.hpp"

namespace spikecpg {

// Desired spike times per motor neuron, indexed by position in the motor pool.
struct TeacherPattern {
  double cycle_length_ms = 1000.0;
  std::vector<std::vector<double>> spikes;

  std::size_t total_spikes() const {
    std::size_t n = 0;
    for (const auto& s : spikes) n += s.size();
    return n;
  }

  void validate(double min_gap_ms = 2.0) const {
    if (!std::isfinite(cycle_length_ms) || cycle_length_ms <= 0.0)
      throw ConfigError("teacher cycle_length_ms must be positive");
    for (std::size_t i = 0; i < spikes.size(); ++i) {
      const auto& s = spikes[i];
      for (std::size_t k = 0; k < s.size(); ++k) {
        if (!std::isfinite(s[k]) || s[k] < 0.0 || s[k] >= cycle_length_ms)
          throw ConfigError("teacher spike of motor neuron " + std::to_string(i) + " lies outside the cycle");
        if (k > 0 && s[k] - s[k - 1] < min_gap_ms - 1e-9)
          throw ConfigError("teacher spikes of motor neuron " + std::to_string(i) +
                            " are closer than the refractory period");
      }
    }
  }

  bool operator==(const TeacherPattern&) const = default;
};

struct ResumeHyperparams {
  double a = 3.0;
  double A_d = 6.0;
  double A_l = 6.0;
  double tau_d_ms = 2.0;
  double tau_l_ms = 2.0;
  double window_cutoff_ms = 3.0;
  int epochs = 200;
  double target_error_ms = 2.5;
  // Scales a, A_d and A_l together; with the constants above a rate of 2 trains well.
  double learning_rate = 2.0;
  double excitatory_max_pA = 5000.0;  // excitatory weights live in [0, max]
  double inhibitory_min_pA = -5000.0;  // inhibitory weights live in [min, 0]

  void validate() const {
    for (double v : {a, A_d, A_l, tau_d_ms, tau_l_ms, window_cutoff_ms, target_error_ms, learning_rate,
                     excitatory_max_pA, inhibitory_min_pA})
      if (!std::isfinite(v)) throw NumericError("non-finite learning hyperparameter");
    if (!(tau_d_ms > 0.0) || !(tau_l_ms > 0.0)) throw ConfigError("learning window time constants must be positive");
    if (a < 0.0 || A_d < 0.0 || A_l < 0.0)
      throw ConfigError("a, A_d and A_l are magnitudes; the synapse class supplies the sign");
    if (window_cutoff_ms < 0.0) throw ConfigError("window cutoff must be non-negative");
    if (epochs < 0) throw ConfigError("epochs must be non-negative");
    if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
    if (excitatory_max_pA < 0.0 || inhibitory_min_pA > 0.0) throw ConfigError("weight bounds must bracket 0");
  }

  bool operator==(const ResumeHyperparams&) const = default;
};

namespace detail {

// Sum over pre spikes at 0 < t - t_pre <= cutoff of A exp(-(t - t_pre)/tau).
inline double window_sum(std::span<const double> pre, double t, double amp, double tau, double cutoff) {
  auto hi = std::lower_bound(pre.begin(), pre.end(), t);  // strictly before t
  double s = 0.0;
  for (auto it = hi; it != pre.begin();) {
    --it;
    const double lag = t - *it;
    if (lag > cutoff) break;
    s += amp * std::exp(-lag / tau);
  }
  return s;
}

}  // namespace detail

// Change in efficacy |w| for one pass over the trains. For the inhibitory class
// the expression is negated: a desired spike weakens inhibition onto the neuron,
// so in signed terms both classes move the weight by the same amount.
inline double resume_delta(std::span<const double> pre, std::span<const double> teacher,
                           std::span<const double> post, const ResumeHyperparams& hp, SignClass sign) {
  // Separate sums so identical teacher and output trains cancel exactly.
  double up = 0.0, down = 0.0;
  for (double td : teacher) up += hp.a + detail::window_sum(pre, td, hp.A_d, hp.tau_d_ms, hp.window_cutoff_ms);
  for (double tl : post) down += hp.a + detail::window_sum(pre, tl, hp.A_l, hp.tau_l_ms, hp.window_cutoff_ms);
  const double d = up - down;
  return sign == SignClass::excitatory ? d : -d;
}

inline double resume_delta(const SpikeTrain& pre, const SpikeTrain& teacher, const SpikeTrain& post,
                           const ResumeHyperparams& hp, SignClass sign) {
  return resume_delta(pre.spike_times_ms, teacher.spike_times_ms, post.spike_times_ms, hp, sign);
}

// ---------------------------------------------------------------------------
// Spike-shift error

struct ShiftErrorOptions {
  double miss_penalty_ms = 10.0;
  double miss_window_ms = 10.0;
};

struct TeacherSpikeOutcome {
  int motor_index;
  double time_ms;
  bool matched;
  double shift_ms;  // |actual - teacher| when matched
};

struct ShiftErrorBreakdown {
  double error_ms = 0.0;
  std::size_t items = 0;
  std::size_t matched = 0;
  std::size_t missed = 0;    // teacher spikes without a partner
  std::size_t spurious = 0;  // actual spikes without a partner
  std::vector<TeacherSpikeOutcome> teacher_spikes;
};

namespace detail {

// Minimum-cost one-to-one matching of two sorted lists where a pair costs
// |a - b| (allowed only within `window`) and any unpaired element costs `penalty`.
// Order-preserving matchings are optimal for this cost, so a DP over prefixes suffices.
inline std::vector<int> match_sorted(std::span<const double> t, std::span<const double> a, double window,
                                     double penalty) {
  const std::size_t n = t.size(), m = a.size();
  std::vector<double> cost((n + 1) * (m + 1), 0.0);
  auto at = [&](std::size_t i, std::size_t j) -> double& { return cost[i * (m + 1) + j]; };
  for (std::size_t i = 0; i <= n; ++i)
    for (std::size_t j = 0; j <= m; ++j) {
      if (i == 0 && j == 0) continue;
      double best = std::numeric_limits<double>::infinity();
      if (i > 0) best = std::min(best, at(i - 1, j) + penalty);
      if (j > 0) best = std::min(best, at(i, j - 1) + penalty);
      if (i > 0 && j > 0) {
        const double d = std::abs(t[i - 1] - a[j - 1]);
        if (d <= window) best = std::min(best, at(i - 1, j - 1) + d);
      }
      at(i, j) = best;
    }
  // Walk back to recover the pairing; partner[i] = index into a, or -1.
  std::vector<int> partner(n, -1);
  std::size_t i = n, j = m;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0) {
      const double d = std::abs(t[i - 1] - a[j - 1]);
      if (d <= window && at(i, j) == at(i - 1, j - 1) + d) {
        partner[i - 1] = static_cast<int>(j - 1);
        --i, --j;
        continue;
      }
    }
    if (i > 0 && at(i, j) == at(i - 1, j) + penalty)
      --i;
    else
      --j;
  }
  return partner;
}

}  // namespace detail

// `actual` and `teacher` are indexed by motor neuron; times are cycle-relative.
inline ShiftErrorBreakdown spike_shift_breakdown(const std::vector<std::vector<double>>& actual,
                                                 const TeacherPattern& teacher, ShiftErrorOptions opt = {}) {
  ShiftErrorBreakdown b;
  double total = 0.0;
  const std::size_t n = std::max(actual.size(), teacher.spikes.size());
  static const std::vector<double> none;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& t = i < teacher.spikes.size() ? teacher.spikes[i] : none;
    const auto& a = i < actual.size() ? actual[i] : none;
    const auto partner = detail::match_sorted(t, a, opt.miss_window_ms, opt.miss_penalty_ms);
    std::size_t paired = 0;
    for (std::size_t k = 0; k < t.size(); ++k) {
      if (partner[k] >= 0) {
        const double d = std::abs(t[k] - a[static_cast<std::size_t>(partner[k])]);
        total += d;
        ++paired;
        b.teacher_spikes.push_back({static_cast<int>(i), t[k], true, d});
      } else {
        total += opt.miss_penalty_ms;
        ++b.missed;
        b.teacher_spikes.push_back({static_cast<int>(i), t[k], false, opt.miss_penalty_ms});
      }
    }
    b.matched += paired;
    b.spurious += a.size() - paired;
    total += static_cast<double>(a.size() - paired) * opt.miss_penalty_ms;
  }
  b.items = b.matched + b.missed + b.spurious;
  b.error_ms = b.items ? total / static_cast<double>(b.items) : 0.0;
  return b;
}

inline double spike_shift_error(const std::vector<std::vector<double>>& actual, const TeacherPattern& teacher,
                                ShiftErrorOptions opt = {}) {
  return spike_shift_breakdown(actual, teacher, opt).error_ms;
}

// ---------------------------------------------------------------------------
// Random teachers

struct RandomTeacherParams {
  int motor_neurons = 25;
  int spikes_min = 1;
  int spikes_max = 4;
  double min_separation_ms = 5.0;
  double cycle_length_ms = 1000.0;
};

inline TeacherPattern random_teacher(const RandomTeacherParams& p, std::uint64_t seed) {
  if (p.motor_neurons < 1) throw ConfigError("random teacher needs at least one motor neuron");
  if (p.spikes_min < 0 || p.spikes_max < p.spikes_min) throw ConfigError("invalid spikes-per-neuron range");
  if (p.spikes_max * p.min_separation_ms >= p.cycle_length_ms)
    throw ConfigError("cycle too short for the requested spikes per neuron");
  Rng rng(seed);
  TeacherPattern t{p.cycle_length_ms, {}};
  for (int i = 0; i < p.motor_neurons; ++i) {
    const int k = p.spikes_min + static_cast<int>(rng.below(static_cast<std::uint64_t>(p.spikes_max - p.spikes_min + 1)));
    std::vector<double> s;
    // rejection sampling on the separation constraint; cheap for sparse trains
    while (static_cast<int>(s.size()) < k) {
      // round to the simulation grid so the target is representable
      const double x = std::round(rng.uniform(0.0, p.cycle_length_ms) * 10.0) / 10.0;
      if (x >= p.cycle_length_ms) continue;
      bool ok = true;
      for (double y : s)
        if (std::abs(x - y) < p.min_separation_ms) ok = false;
      if (ok) s.push_back(x);
    }
    std::sort(s.begin(), s.end());
    t.spikes.push_back(std::move(s));
  }
  return t;
}

// ---------------------------------------------------------------------------
// Training

struct TrainingReport {
  std::vector<double> errors_ms;  // one entry per simulated cycle, starting with the untrained network
  int epochs_used = 0;            // == errors_ms.size()
  int updates_applied = 0;
  bool converged = false;
  std::vector<std::pair<std::size_t, double>> final_weights;  // (synapse index, weight)
  ShiftErrorBreakdown final_breakdown;
  std::vector<std::vector<double>> final_output;  // cycle-relative motor spikes of the last evaluation
  TeacherPattern aligned_teacher;                 // teacher as registered against the last evaluated cycle
  std::vector<double> cycle_length_ms;            // measured cycle per schedule entry
};

struct TrainOptions {
  // Tonic frequency per epoch, cycled. Empty means the spec default.
  std::vector<double> frequency_schedule;
  double dt_ms = 0.1;
  ShiftErrorOptions metric;
};

namespace detail {

// Presynaptic activity of one recorded steady-state cycle, replayed onto the motor pool.
struct CycleRecording {
  double onset_ms = 0.0;
  double cycle_ms = 0.0;
  double replay_from_ms = 0.0;
  std::map<int, std::vector<double>> emissions;  // original neuron id -> spike times
};

inline CycleRecording record_cycle(const CpgNetwork& cpg, double tonic_hz, double dt_ms) {
  const double nominal = cpg.spec.cycle_length_ms();
  std::vector<PopulationHandle> rec = cpg.pfn_populations();
  rec.push_back(cpg.phases[0].h);
  rec.push_back(cpg.tonic);
  const double duration = nominal * 2.6 + 100.0;
  const auto r = simulate(cpg, {duration, dt_ms, constant_tonic(tonic_hz, 0.0, duration), rec});
  const auto on = cycle_onsets(cpg, r);
  if (on.size() < 3)
    throw CalibrationError(1, "phase generator did not complete two cycles at " + std::to_string(tonic_hz) +
                                  " spikes/s; cannot train");
  CycleRecording c;
  // The second cycle is used: the first one starts from rest.
  c.onset_ms = on[1];
  c.cycle_ms = on[2] - on[1];
  c.replay_from_ms = std::max(0.0, c.onset_ms - 100.0);
  for (const auto& [id, t] : r.trains) {
    if (id == cpg.first_h()) continue;
    std::vector<double> v;
    for (double x : t.spike_times_ms)
      if (x >= c.replay_from_ms && x < c.onset_ms + c.cycle_ms) v.push_back(x - c.replay_from_ms);
    c.emissions[id] = std::move(v);
  }
  return c;
}

// Motor pool alone, driven by source neurons that replay the recorded inputs.
// The pool has no efferents, so this reproduces the full network's motor output.
struct Replay {
  Network net;
  std::vector<std::size_t> plastic_map;  // replay synapse index -> original synapse index
  std::vector<SourceDrive> drives;
  PopulationHandle motor;
  double window_from = 0.0;  // cycle start in replay time
};

inline Replay make_replay(const CpgNetwork& cpg, const CycleRecording& rec) {
  Replay rp{Network(cpg.spec.seed), {}, {}, {}, rec.onset_ms - rec.replay_from_ms};
  const auto& motor = *cpg.motor;
  // Pool keeps its parameters; sources are appended in increasing original id,
  // so input summation order matches the full network.
  int first = -1;
  for (int i = 0; i < motor.count; ++i) {
    const auto h = rp.net.add_neuron(cpg.net.params(motor.id(i)), Role::motor);
    if (i == 0) first = h.first;
  }
  rp.motor = {0, first, motor.count, Role::motor};
  std::map<int, int> source_of;
  const auto& syn = cpg.net.synapses();
  for (const auto& s : syn)
    if (motor.contains(s.post) && !source_of.count(s.pre)) source_of[s.pre] = -1;
  for (auto& [orig, id] : source_of) {
    id = rp.net.add_neuron(cpg.net.params(orig), Role::tonic_source).first;
    auto it = rec.emissions.find(orig);
    rp.drives.push_back({id, it == rec.emissions.end() ? std::vector<double>{} : it->second});
  }
  for (std::size_t i = 0; i < syn.size(); ++i) {
    const auto& s = syn[i];
    if (!motor.contains(s.post)) continue;
    SynapseSpec c = s;
    c.pre = source_of.at(s.pre);
    c.post = first + (s.post - motor.first);
    const auto idx = rp.net.add_synapse(c);
    if (s.plastic) {
      if (rp.plastic_map.size() <= idx) rp.plastic_map.resize(idx + 1, SIZE_MAX);
      rp.plastic_map[idx] = i;
    }
  }
  return rp;
}

}  // namespace detail

// Scales a teacher onto a measured cycle so that it spans exactly one cycle.
inline TeacherPattern align_teacher(const TeacherPattern& t, double measured_cycle_ms) {
  TeacherPattern out{measured_cycle_ms, t.spikes};
  const double k = measured_cycle_ms / t.cycle_length_ms;
  for (auto& s : out.spikes)
    for (auto& x : s) x = std::round(x * k * 1e6) / 1e6;
  return out;
}

inline TrainingReport train(CpgNetwork& cpg, const TeacherPattern& teacher, const ResumeHyperparams& hp,
                            double tonic_hz, TrainOptions opt = {}) {
  hp.validate();
  teacher.validate();
  if (!cpg.motor) throw ConfigError("network has no motor pool");
  const auto& motor = *cpg.motor;
  if (static_cast<int>(teacher.spikes.size()) != motor.count)
    throw ConfigError("teacher lists " + std::to_string(teacher.spikes.size()) + " motor neurons, pool has " +
                      std::to_string(motor.count));
  const double nominal = cpg.spec.cycle_length_ms();
  if (std::abs(teacher.cycle_length_ms - nominal) > 0.10 * nominal)
    throw ConfigError("teacher cycle_length_ms " + std::to_string(teacher.cycle_length_ms) +
                      " differs from the network cycle " + std::to_string(nominal) + " by more than 10%");
  if (opt.frequency_schedule.empty()) opt.frequency_schedule.push_back(tonic_hz);

  struct Stage {
    detail::CycleRecording rec;
    detail::Replay replay;
    TeacherPattern teacher;
  };
  std::vector<Stage> stages;
  for (double f : opt.frequency_schedule) {
    auto rec = detail::record_cycle(cpg, f, opt.dt_ms);
    auto rp = detail::make_replay(cpg, rec);
    auto t = align_teacher(teacher, rec.cycle_ms);
    stages.push_back({std::move(rec), std::move(rp), std::move(t)});
  }

  // Current plastic weights, kept in replay order.
  const auto plastic = cpg.plastic_synapses();
  TrainingReport rep;
  for (const auto& s : stages) rep.cycle_length_ms.push_back(s.rec.cycle_ms);

  for (int epoch = 0;; ++epoch) {
    Stage& st = stages[static_cast<std::size_t>(epoch) % stages.size()];
    auto& rp = st.replay;
    // Sync replay weights with the network.
    for (std::size_t i = 0; i < rp.plastic_map.size(); ++i)
      if (rp.plastic_map[i] != SIZE_MAX) rp.net.set_weight(i, cpg.net.synapses()[rp.plastic_map[i]].weight);
    RunConfig cfg;
    cfg.duration_ms = rp.window_from + st.rec.cycle_ms + 1.0;
    cfg.dt_ms = opt.dt_ms;
    cfg.drives = rp.drives;
    cfg.record = {rp.motor};
    cfg.seed = cpg.spec.seed;
    const auto r = rp.net.run(cfg);
    std::vector<std::vector<double>> out(static_cast<std::size_t>(motor.count));
    for (int i = 0; i < motor.count; ++i)
      out[static_cast<std::size_t>(i)] = r.train(rp.motor.id(i)).window(rp.window_from, rp.window_from + st.rec.cycle_ms);
    auto br = spike_shift_breakdown(out, st.teacher, opt.metric);
    rep.errors_ms.push_back(br.error_ms);
    const bool done = br.error_ms <= hp.target_error_ms;
    if (done || epoch >= hp.epochs) {
      rep.converged = done;
      rep.final_breakdown = std::move(br);
      rep.final_output = std::move(out);
      rep.aligned_teacher = st.teacher;
      break;
    }
    // Batch update from this cycle. Arrival times (emission + delay) in cycle time.
    const auto& syn = cpg.net.synapses();
    std::vector<double> arrivals;
    for (std::size_t idx : plastic) {
      const auto& s = syn[idx];
      const auto& em = st.rec.emissions.at(s.pre);
      arrivals.clear();
      for (double x : em) arrivals.push_back(x + s.delay_ms - rp.window_from);
      const auto m = static_cast<std::size_t>(s.post - motor.first);
      const double d = hp.learning_rate * resume_delta(arrivals, st.teacher.spikes[m], out[m], hp, s.sign_class);
      if (d == 0.0) continue;
      double w = s.weight + (s.sign_class == SignClass::excitatory ? d : -d);
      w = s.sign_class == SignClass::excitatory ? std::clamp(w, 0.0, hp.excitatory_max_pA)
                                                : std::clamp(w, hp.inhibitory_min_pA, 0.0);
      cpg.net.set_weight(idx, w);
    }
    ++rep.updates_applied;
  }
  rep.epochs_used = static_cast<int>(rep.errors_ms.size());
  for (std::size_t idx : plastic) rep.final_weights.push_back({idx, cpg.net.synapses()[idx].weight});
  return rep;
}

}  // namespace spikecpg

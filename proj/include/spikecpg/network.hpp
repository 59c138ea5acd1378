#pragma once

// Population/synapse container and the fixed-step event loop around the LIF engine.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "spikecpg/error.hpp"
#include "spikecpg/lif.hpp"
#include "spikecpg/rng.hpp"
#include "spikecpg/spike_train.hpp"

namespace spikecpg {

enum class Role { npg_h, npg_q, npg_t, pfn, in, motor, tonic_source };

inline const char* to_string(Role r) {
  switch (r) {
    case Role::npg_h: return "NPG_H";
    case Role::npg_q: return "NPG_Q";
    case Role::npg_t: return "NPG_T";
    case Role::pfn: return "PFN";
    case Role::in: return "IN";
    case Role::motor: return "MOTOR";
    case Role::tonic_source: return "TONIC_SOURCE";
  }
  return "?";
}

struct PopulationHandle {
  int population_id = -1;
  int first = 0;
  int count = 0;
  Role role = Role::motor;

  int id(int k) const { return first + k; }
  int end() const { return first + count; }
  bool contains(int neuron) const { return neuron >= first && neuron < first + count; }

  std::vector<int> ids() const {
    std::vector<int> v(static_cast<std::size_t>(count));
    for (int k = 0; k < count; ++k) v[static_cast<std::size_t>(k)] = first + k;
    return v;
  }

  bool operator==(const PopulationHandle&) const = default;
};

// Per-field [min, max] ranges; min == max gives a fixed value.
struct ParamRange {
  struct Interval {
    double min, max;
    double draw(Rng& rng) const { return min == max ? min : rng.uniform(min, max); }
  };

  Interval external_current_pA{0.0, 0.0};
  Interval resting_potential_mV{-70.0, -70.0};
  Interval membrane_capacity_pF{250.0, 250.0};
  Interval membrane_time_constant_ms{10.0, 10.0};
  Interval spike_threshold_mV{-55.0, -55.0};
  Interval reset_potential_mV{-70.0, -70.0};
  double refractory_period_ms = 2.0;
  double syn_time_constant_ms = 2.0;

  static ParamRange fixed(const NeuronParams& p) {
    ParamRange r;
    r.external_current_pA = {p.external_current_pA, p.external_current_pA};
    r.resting_potential_mV = {p.resting_potential_mV, p.resting_potential_mV};
    r.membrane_capacity_pF = {p.membrane_capacity_pF, p.membrane_capacity_pF};
    r.membrane_time_constant_ms = {p.membrane_time_constant_ms, p.membrane_time_constant_ms};
    r.spike_threshold_mV = {p.spike_threshold_mV, p.spike_threshold_mV};
    r.reset_potential_mV = {p.reset_potential_mV, p.reset_potential_mV};
    r.refractory_period_ms = p.refractory_period_ms;
    r.syn_time_constant_ms = p.syn_time_constant_excitatory_ms;
    return r;
  }

  // Table of neuron properties: NPG ("CPG") and motor neurons share fixed
  // values, PFN neurons are drawn uniformly per field.
  static ParamRange cpg() { return {}; }
  static ParamRange motor() { return {}; }
  static ParamRange pfn() {
    ParamRange r;
    r.external_current_pA = {0.0, 150.0};
    r.resting_potential_mV = {-90.0, -70.0};
    r.membrane_capacity_pF = {100.0, 300.0};
    r.membrane_time_constant_ms = {9.0, 30.0};
    r.spike_threshold_mV = {-50.0, -30.0};
    r.reset_potential_mV = {-90.0, -60.0};
    return r;
  }

  void validate() const {
    for (const Interval* iv : {&external_current_pA, &resting_potential_mV, &membrane_capacity_pF,
                               &membrane_time_constant_ms, &spike_threshold_mV, &reset_potential_mV}) {
      if (!(iv->min <= iv->max)) throw ConfigError("parameter range has min > max");
    }
  }

  NeuronParams draw(Rng& rng) const {
    NeuronParams p;
    p.external_current_pA = external_current_pA.draw(rng);
    p.resting_potential_mV = resting_potential_mV.draw(rng);
    p.membrane_capacity_pF = membrane_capacity_pF.draw(rng);
    p.membrane_time_constant_ms = membrane_time_constant_ms.draw(rng);
    p.spike_threshold_mV = spike_threshold_mV.draw(rng);
    p.reset_potential_mV = reset_potential_mV.draw(rng);
    p.refractory_period_ms = refractory_period_ms;
    p.syn_time_constant_excitatory_ms = syn_time_constant_ms;
    p.syn_time_constant_inhibitory_ms = syn_time_constant_ms;
    return p;
  }
};

struct SynapseSpec {
  int pre = -1;
  int post = -1;
  double weight = 0.0;  // pA at the alpha-kernel peak, signed
  SignClass sign_class = SignClass::excitatory;
  bool plastic = false;
  double delay_ms = 1.0;

  bool sign_ok() const {
    return sign_class == SignClass::excitatory ? weight >= 0.0 : weight <= 0.0;
  }

  bool operator==(const SynapseSpec&) const = default;
};

struct WeightRange {
  double lo, hi;
  static WeightRange constant(double w) { return {w, w}; }
  double draw(Rng& rng) const { return lo == hi ? lo : rng.uniform(lo, hi); }
};

struct Pattern {
  enum class Kind { one_to_one, all_to_all, random_pairwise };
  Kind kind = Kind::all_to_all;
  double probability = 1.0;

  static Pattern one_to_one() { return {Kind::one_to_one, 1.0}; }
  static Pattern all_to_all() { return {Kind::all_to_all, 1.0}; }
  static Pattern random_pairwise(double p) { return {Kind::random_pairwise, p}; }
};

// Contiguous block of synapse indices produced by one connect() call.
struct SynapseRange {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const { return end - begin; }
};

enum class TonicMode { regular, poisson };

struct TonicSource {
  double frequency_hz = 250.0;  // spikes per second
  double start_ms = 0.0;
  double stop_ms = 0.0;
  TonicMode mode = TonicMode::regular;
  std::uint64_t seed = 0;

  void validate() const {
    if (!std::isfinite(frequency_hz) || frequency_hz < 0.0)
      throw ConfigError("tonic frequency must be finite and non-negative");
    if (!(start_ms < stop_ms)) throw ConfigError("tonic source needs start < stop");
  }

  // Regular mode: start + k * 1000/F for k = 1 .. floor((stop - start) F / 1000).
  std::vector<double> spike_times() const {
    validate();
    std::vector<double> out;
    if (frequency_hz == 0.0) return out;
    const double period = 1000.0 / frequency_hz;
    if (mode == TonicMode::regular) {
      const auto n = static_cast<long long>(std::floor((stop_ms - start_ms) * frequency_hz / 1000.0 + 1e-9));
      out.reserve(static_cast<std::size_t>(std::max(0LL, n)));
      for (long long k = 1; k <= n; ++k) out.push_back(start_ms + static_cast<double>(k) * period);
    } else {
      Rng rng(seed);
      double t = start_ms;
      for (;;) {
        t += -std::log1p(-rng.unit()) * period;
        if (t > stop_ms) break;
        out.push_back(t);
      }
    }
    return out;
  }
};

// Explicit spike schedule for a source neuron.
struct SourceDrive {
  int neuron_id = -1;
  std::vector<double> spike_times_ms;
};

struct RunConfig {
  double duration_ms = 1000.0;
  double dt_ms = 0.1;
  std::vector<SourceDrive> drives;
  std::vector<PopulationHandle> record;
  std::uint64_t seed = 0;
  // Upper bound on the delay ring buffer, in bytes.
  std::size_t max_queue_bytes = std::size_t{1} << 29;
};

class Network {
public:
  explicit Network(std::uint64_t seed = 0) : rng_(seed), seed_(seed) {}

  std::uint64_t seed() const { return seed_; }
  Rng& rng() { return rng_; }

  PopulationHandle add_population(int n, const ParamRange& sampler, Role role) {
    if (n < 1) throw ConfigError("population size must be at least 1");
    sampler.validate();
    PopulationHandle h{static_cast<int>(populations_.size()), neuron_count(), n, role};
    for (int k = 0; k < n; ++k) {
      NeuronParams p = sampler.draw(rng_);
      if (role != Role::tonic_source) p.validate();
      params_.push_back(p);
      is_source_.push_back(role == Role::tonic_source);
    }
    populations_.push_back(h);
    return h;
  }

  // Appends a neuron with explicit parameters to a new single population.
  PopulationHandle add_neuron(const NeuronParams& p, Role role) {
    return add_population(1, ParamRange::fixed(p), role);
  }

  SynapseRange connect(std::span<const int> pre, std::span<const int> post, Pattern pattern,
                       WeightRange weights, SignClass sign, bool plastic, double delay_ms = 1.0) {
    check_weight_range(weights, sign);
    SynapseRange r{synapses_.size(), synapses_.size()};
    auto emit = [&](int a, int b) {
      synapses_.push_back({a, b, weights.draw(rng_), sign, plastic, delay_ms});
    };
    switch (pattern.kind) {
      case Pattern::Kind::one_to_one:
        if (pre.size() != post.size())
          throw ConfigError("one_to_one requires populations of equal size (" +
                            std::to_string(pre.size()) + " vs " + std::to_string(post.size()) + ")");
        for (std::size_t i = 0; i < pre.size(); ++i) emit(pre[i], post[i]);
        break;
      case Pattern::Kind::all_to_all:
        for (int a : pre)
          for (int b : post) emit(a, b);
        break;
      case Pattern::Kind::random_pairwise:
        if (!(pattern.probability >= 0.0 && pattern.probability <= 1.0))
          throw ConfigError("connection probability must lie in [0, 1]");
        for (int a : pre)
          for (int b : post)
            if (a != b && rng_.bernoulli(pattern.probability)) emit(a, b);
        break;
    }
    r.end = synapses_.size();
    return r;
  }

  SynapseRange connect(const PopulationHandle& pre, const PopulationHandle& post, Pattern pattern,
                       WeightRange weights, SignClass sign, bool plastic, double delay_ms = 1.0) {
    const auto a = pre.ids();
    const auto b = post.ids();
    return connect(a, b, pattern, weights, sign, plastic, delay_ms);
  }

  std::size_t add_synapse(const SynapseSpec& s) {
    if (!valid_neuron(s.pre) || !valid_neuron(s.post)) throw ConfigError("synapse refers to unknown neuron");
    if (!s.sign_ok()) throw ConfigError("synapse weight violates its sign class");
    synapses_.push_back(s);
    return synapses_.size() - 1;
  }

  void set_weight(std::size_t index, double w) {
    SynapseSpec& s = synapses_.at(index);
    SynapseSpec probe = s;
    probe.weight = w;
    if (!probe.sign_ok()) throw ConfigError("weight update violates the synapse sign class");
    s.weight = w;
  }

  template <typename Pred>
  std::size_t remove_synapses_if(Pred pred) {
    const auto before = synapses_.size();
    std::erase_if(synapses_, pred);
    return before - synapses_.size();
  }

  int neuron_count() const { return static_cast<int>(params_.size()); }
  const std::vector<NeuronParams>& params() const { return params_; }
  const NeuronParams& params(int id) const { return params_.at(static_cast<std::size_t>(id)); }
  void set_params(int id, const NeuronParams& p) {
    p.validate();
    params_.at(static_cast<std::size_t>(id)) = p;
  }
  bool is_source(int id) const { return is_source_.at(static_cast<std::size_t>(id)); }
  const std::vector<PopulationHandle>& populations() const { return populations_; }
  const std::vector<SynapseSpec>& synapses() const { return synapses_; }
  std::span<const SynapseSpec> synapses(SynapseRange r) const {
    return std::span<const SynapseSpec>(synapses_).subspan(r.begin, r.size());
  }

  bool valid_neuron(int id) const { return id >= 0 && id < neuron_count(); }

  SimulationResult run(const RunConfig& cfg) const;

  // Rebuilds a network from serialized parts (used by snapshot loading).
  static Network from_parts(std::uint64_t seed, std::vector<NeuronParams> params,
                            std::vector<bool> is_source, std::vector<PopulationHandle> pops,
                            std::vector<SynapseSpec> syns) {
    Network n(seed);
    n.params_ = std::move(params);
    n.is_source_ = std::move(is_source);
    n.populations_ = std::move(pops);
    for (const auto& s : syns) n.add_synapse(s);
    return n;
  }

private:
  static void check_weight_range(WeightRange w, SignClass sign) {
    if (!(w.lo <= w.hi)) throw ConfigError("weight range has lo > hi");
    if (sign == SignClass::excitatory && w.lo < 0.0)
      throw ConfigError("excitatory synapses need non-negative weights");
    if (sign == SignClass::inhibitory && w.hi > 0.0)
      throw ConfigError("inhibitory synapses need non-positive weights");
  }

  Rng rng_;
  std::uint64_t seed_;
  std::vector<NeuronParams> params_;
  std::vector<bool> is_source_;
  std::vector<PopulationHandle> populations_;
  std::vector<SynapseSpec> synapses_;
};

inline SimulationResult Network::run(const RunConfig& cfg) const {
  if (!std::isfinite(cfg.duration_ms) || !(cfg.duration_ms > 0.0))
    throw ConfigError("run duration must be positive");
  if (!std::isfinite(cfg.dt_ms) || !(cfg.dt_ms > 0.0)) throw ConfigError("time step must be positive");
  const double dt = cfg.dt_ms;
  const int n = neuron_count();
  const auto steps = static_cast<long long>(std::llround(cfg.duration_ms / dt));

  std::vector<Propagator> props(static_cast<std::size_t>(n));
  std::vector<int> refractory_steps(static_cast<std::size_t>(n), 0);
  for (int i = 0; i < n; ++i) {
    if (is_source_[static_cast<std::size_t>(i)]) continue;
    const auto& p = params_[static_cast<std::size_t>(i)];
    check_step_size(p, dt);
    props[static_cast<std::size_t>(i)] = Propagator(p, dt);
    refractory_steps[static_cast<std::size_t>(i)] = static_cast<int>(std::llround(p.refractory_period_ms / dt));
  }

  // Outgoing adjacency in CSR form.
  struct Edge {
    int post;
    int delay_steps;
    double weight;
    bool excitatory;
  };
  std::vector<std::size_t> offsets(static_cast<std::size_t>(n) + 1, 0);
  int max_delay = 1;
  for (const auto& s : synapses_) {
    if (s.delay_ms < dt * (1.0 - 1e-9))
      throw ConfigError("synapse delay " + std::to_string(s.delay_ms) + " ms is shorter than dt");
    if (!std::isfinite(s.weight)) throw NumericError("non-finite synaptic weight");
    ++offsets[static_cast<std::size_t>(s.pre) + 1];
  }
  for (int i = 0; i < n; ++i) offsets[static_cast<std::size_t>(i) + 1] += offsets[static_cast<std::size_t>(i)];
  std::vector<Edge> edges(synapses_.size());
  {
    std::vector<std::size_t> fill(offsets.begin(), offsets.end() - 1);
    for (const auto& s : synapses_) {
      const int d = std::max(1, static_cast<int>(std::llround(s.delay_ms / dt)));
      max_delay = std::max(max_delay, d);
      edges[fill[static_cast<std::size_t>(s.pre)]++] = {s.post, d, s.weight,
                                                        s.sign_class == SignClass::excitatory};
    }
  }

  // Delay ring: slot k holds summed weights arriving at time index k (mod size).
  const std::size_t slots = static_cast<std::size_t>(max_delay) + 2;
  const std::size_t bytes = slots * static_cast<std::size_t>(n) * 2 * sizeof(double);
  if (bytes > cfg.max_queue_bytes)
    throw ResourceError("spike delivery queue needs " + std::to_string(bytes) +
                        " bytes, above the configured capacity");
  std::vector<double> ring_ex(slots * static_cast<std::size_t>(n), 0.0);
  std::vector<double> ring_in(slots * static_cast<std::size_t>(n), 0.0);

  auto deliver = [&](int pre, long long index) {
    for (std::size_t e = offsets[static_cast<std::size_t>(pre)]; e < offsets[static_cast<std::size_t>(pre) + 1]; ++e) {
      const Edge& ed = edges[e];
      const std::size_t slot = static_cast<std::size_t>((index + ed.delay_steps) % static_cast<long long>(slots));
      auto& ring = ed.excitatory ? ring_ex : ring_in;
      ring[slot * static_cast<std::size_t>(n) + static_cast<std::size_t>(ed.post)] += ed.weight;
    }
  };

  std::vector<char> recorded(static_cast<std::size_t>(n), 0);
  SimulationResult result;
  result.total_duration_ms = static_cast<double>(steps) * dt;
  result.dt_ms = dt;
  result.seed = cfg.seed;
  for (const auto& h : cfg.record) {
    if (h.first < 0 || h.end() > n) throw ConfigError("recorded population is not part of this network");
    for (int id = h.first; id < h.end(); ++id) {
      recorded[static_cast<std::size_t>(id)] = 1;
      result.trains[id].neuron_id = id;
    }
  }
  std::vector<SpikeTrain*> rec_ptr(static_cast<std::size_t>(n), nullptr);
  for (auto& [id, t] : result.trains) rec_ptr[static_cast<std::size_t>(id)] = &t;

  // Source schedules quantized to the grid and merged into one sorted list.
  struct SourceEvent {
    long long index;
    int neuron;
  };
  std::vector<SourceEvent> source_events;
  for (const auto& d : cfg.drives) {
    if (!valid_neuron(d.neuron_id) || !is_source_[static_cast<std::size_t>(d.neuron_id)])
      throw ConfigError("drive targets neuron " + std::to_string(d.neuron_id) + " which is not a source");
    for (double t : d.spike_times_ms) {
      if (!std::isfinite(t) || t < 0.0) throw NumericError("source spike time must be finite and >= 0");
      const long long idx = std::llround(t / dt);
      if (idx <= steps) source_events.push_back({idx, d.neuron_id});
    }
  }
  std::stable_sort(source_events.begin(), source_events.end(),
                   [](const SourceEvent& a, const SourceEvent& b) {
                     return a.index != b.index ? a.index < b.index : a.neuron < b.neuron;
                   });
  std::size_t next_source = 0;

  std::vector<NeuronState> state(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) state[static_cast<std::size_t>(i)] = NeuronState::at_rest(params_[static_cast<std::size_t>(i)]);
  std::vector<int> refractory_left(static_cast<std::size_t>(n), 0);

  auto emit_sources_at = [&](long long index) {
    while (next_source < source_events.size() && source_events[next_source].index == index) {
      const int id = source_events[next_source].neuron;
      if (auto* t = rec_ptr[static_cast<std::size_t>(id)]) {
        const double time = static_cast<double>(index) * dt;
        if (t->spike_times_ms.empty() || t->spike_times_ms.back() < time) t->spike_times_ms.push_back(time);
      }
      deliver(id, index);
      ++next_source;
    }
  };

  for (long long k = 0; k < steps; ++k) {
    emit_sources_at(k);
    const std::size_t slot = static_cast<std::size_t>(k % static_cast<long long>(slots));
    double* ex = &ring_ex[slot * static_cast<std::size_t>(n)];
    double* in = &ring_in[slot * static_cast<std::size_t>(n)];
    for (int i = 0; i < n; ++i) {
      const auto ui = static_cast<std::size_t>(i);
      if (is_source_[ui]) {
        ex[ui] = in[ui] = 0.0;
        continue;
      }
      NeuronState& s = state[ui];
      const Propagator& pr = props[ui];
      if (ex[ui] != 0.0) pr.kick(s.excitatory, SignClass::excitatory, ex[ui]);
      if (in[ui] != 0.0) pr.kick(s.inhibitory, SignClass::inhibitory, in[ui]);
      ex[ui] = in[ui] = 0.0;
      const bool clamped = refractory_left[ui] > 0;
      pr.advance(s, params_[ui], clamped);
      if (clamped) {
        --refractory_left[ui];
        s.membrane_potential_mV = params_[ui].reset_potential_mV;
      } else if (s.membrane_potential_mV >= params_[ui].spike_threshold_mV) {
        s.membrane_potential_mV = params_[ui].reset_potential_mV;
        refractory_left[ui] = refractory_steps[ui];
        if (auto* t = rec_ptr[ui]) t->spike_times_ms.push_back(static_cast<double>(k + 1) * dt);
        deliver(i, k + 1);
      }
    }
  }
  emit_sources_at(steps);

  for (int i = 0; i < n; ++i) {
    const auto& s = state[static_cast<std::size_t>(i)];
    if (!std::isfinite(s.membrane_potential_mV) || !std::isfinite(s.excitatory.current_pA) ||
        !std::isfinite(s.inhibitory.current_pA))
      throw NumericError("neuron " + std::to_string(i) + " reached a non-finite state");
  }
  return result;
}

// Builds the drive list for one tonic source neuron from consecutive segments.
inline SourceDrive tonic_drive(int neuron_id, std::span<const TonicSource> segments) {
  SourceDrive d{neuron_id, {}};
  for (const auto& seg : segments) {
    auto t = seg.spike_times();
    d.spike_times_ms.insert(d.spike_times_ms.end(), t.begin(), t.end());
  }
  std::sort(d.spike_times_ms.begin(), d.spike_times_ms.end());
  return d;
}

}  // namespace spikecpg

#pragma once

// Leaky integrate-and-fire neuron with alpha-shaped synaptic currents.
//
// Membrane:   C dV/dt = -C/tau_m (V - E_L) + I_ex + I_in + I_e
// Synapses:   each channel is the linear pair  dJ/dt = -J/tau_s,  dI/dt = J - I/tau_s.
//             A spike of weight w adds w*e/tau_s to J, so I(t) = w (e/tau_s) t exp(-t/tau_s)
//             and the current peaks at exactly w when t = tau_s.
//
// The whole system is linear between spikes, so one step applies its exact
// propagator matrix. Threshold is tested at step ends only.

#include <cmath>
#include <numbers>
#include <span>
#include <string>

#include "spikecpg/error.hpp"

namespace spikecpg {

enum class SignClass { excitatory, inhibitory };

inline const char* to_string(SignClass s) {
  return s == SignClass::excitatory ? "excitatory" : "inhibitory";
}

struct NeuronParams {
  double resting_potential_mV = -70.0;
  double membrane_capacity_pF = 250.0;
  double membrane_time_constant_ms = 10.0;
  double spike_threshold_mV = -55.0;
  double reset_potential_mV = -70.0;
  double external_current_pA = 0.0;
  double refractory_period_ms = 2.0;
  double syn_time_constant_excitatory_ms = 2.0;
  double syn_time_constant_inhibitory_ms = 2.0;

  // Throws NumericError for non-finite values and ConfigError for violated
  // invariants. A threshold of +inf is accepted and disables spiking.
  void validate() const {
    auto finite = [](double v, const char* name) {
      if (!std::isfinite(v)) throw NumericError(std::string("non-finite neuron parameter: ") + name);
    };
    finite(resting_potential_mV, "resting_potential_mV");
    finite(membrane_capacity_pF, "membrane_capacity_pF");
    finite(membrane_time_constant_ms, "membrane_time_constant_ms");
    if (std::isnan(spike_threshold_mV) || spike_threshold_mV == -INFINITY)
      throw NumericError("non-finite neuron parameter: spike_threshold_mV");
    finite(reset_potential_mV, "reset_potential_mV");
    finite(external_current_pA, "external_current_pA");
    finite(refractory_period_ms, "refractory_period_ms");
    finite(syn_time_constant_excitatory_ms, "syn_time_constant_excitatory_ms");
    finite(syn_time_constant_inhibitory_ms, "syn_time_constant_inhibitory_ms");
    if (!(spike_threshold_mV > reset_potential_mV))
      throw ConfigError("spike threshold must exceed reset potential");
    if (!(membrane_capacity_pF > 0.0) || !(membrane_time_constant_ms > 0.0))
      throw ConfigError("membrane capacity and time constant must be positive");
    if (refractory_period_ms < 0.0) throw ConfigError("refractory period must be non-negative");
    if (!(syn_time_constant_excitatory_ms > 0.0) || !(syn_time_constant_inhibitory_ms > 0.0))
      throw ConfigError("synaptic time constants must be positive");
  }

  bool operator==(const NeuronParams&) const = default;
};

struct SynapticState {
  double derivative_pA_per_ms = 0.0;
  double current_pA = 0.0;

  bool operator==(const SynapticState&) const = default;
};

struct NeuronState {
  double membrane_potential_mV = -70.0;
  SynapticState excitatory;
  SynapticState inhibitory;
  double refractory_remaining_ms = 0.0;

  static NeuronState at_rest(const NeuronParams& p) {
    NeuronState s;
    s.membrane_potential_mV = p.resting_potential_mV;
    return s;
  }

  bool operator==(const NeuronState&) const = default;
};

struct WeightedSpike {
  double weight_pA;  // signed: inhibitory input carries a non-positive weight
  SignClass sign;
};

namespace detail {

// Contribution of one synaptic channel to V over a step of length h.
struct ChannelPropagator {
  double decay = 0.0;          // exp(-h/tau_s), applies to both J and I
  double current_from_deriv = 0.0;  // h exp(-h/tau_s)
  double v_from_deriv = 0.0;
  double v_from_current = 0.0;
  double kick_scale = 0.0;     // e / tau_s

  ChannelPropagator() = default;

  ChannelPropagator(double tau_s, double tau_m, double cap, double h) {
    decay = std::exp(-h / tau_s);
    current_from_deriv = h * decay;
    kick_scale = std::numbers::e / tau_s;
    const double em = std::exp(-h / tau_m);
    const double a = 1.0 / tau_m - 1.0 / tau_s;
    const double ah = a * h;
    // int_0^h e^{a s} ds and int_0^h s e^{a s} ds, with series near a = 0
    double i0, i1;
    if (std::abs(ah) < 1e-4) {
      i0 = h * (1.0 + ah / 2.0 + ah * ah / 6.0);
      i1 = h * h * (0.5 + ah / 3.0 + ah * ah / 8.0);
    } else {
      const double ex = std::expm1(ah);
      i0 = ex / a;
      i1 = (ah * (ex + 1.0) - ex) / (a * a);
    }
    v_from_current = em * i0 / cap;
    v_from_deriv = em * i1 / cap;
  }
};

}  // namespace detail

// Exact one-step propagator for a given parameter set and step size.
class Propagator {
public:
  Propagator() = default;

  Propagator(const NeuronParams& p, double dt_ms) : dt_(dt_ms) {
    const double tau_m = p.membrane_time_constant_ms;
    const double cap = p.membrane_capacity_pF;
    membrane_decay_ = std::exp(-dt_ms / tau_m);
    v_from_ie_ = -tau_m / cap * std::expm1(-dt_ms / tau_m);
    ex_ = detail::ChannelPropagator(p.syn_time_constant_excitatory_ms, tau_m, cap, dt_ms);
    in_ = detail::ChannelPropagator(p.syn_time_constant_inhibitory_ms, tau_m, cap, dt_ms);
  }

  double dt() const { return dt_; }

  void kick(SynapticState& ch, SignClass sign, double weight_pA) const {
    const auto& c = sign == SignClass::excitatory ? ex_ : in_;
    ch.derivative_pA_per_ms += weight_pA * c.kick_scale;
  }

  // Advance synaptic currents by one step and the membrane too unless clamped.
  void advance(NeuronState& s, const NeuronParams& p, bool clamp_membrane) const {
    if (!clamp_membrane) {
      const double el = p.resting_potential_mV;
      s.membrane_potential_mV = el + (s.membrane_potential_mV - el) * membrane_decay_ +
                                p.external_current_pA * v_from_ie_ +
                                ex_.v_from_deriv * s.excitatory.derivative_pA_per_ms +
                                ex_.v_from_current * s.excitatory.current_pA +
                                in_.v_from_deriv * s.inhibitory.derivative_pA_per_ms +
                                in_.v_from_current * s.inhibitory.current_pA;
    }
    advance_channel(s.excitatory, ex_);
    advance_channel(s.inhibitory, in_);
  }

private:
  static void advance_channel(SynapticState& ch, const detail::ChannelPropagator& c) {
    const double j = ch.derivative_pA_per_ms;
    ch.current_pA = c.current_from_deriv * j + c.decay * ch.current_pA;
    ch.derivative_pA_per_ms = c.decay * j;
  }

  double dt_ = 0.0;
  double membrane_decay_ = 1.0;
  double v_from_ie_ = 0.0;
  detail::ChannelPropagator ex_;
  detail::ChannelPropagator in_;
};

struct StepResult {
  NeuronState state;
  bool spiked = false;
};

inline void check_step_size(const NeuronParams& p, double dt_ms) {
  if (!std::isfinite(dt_ms) || !(dt_ms > 0.0)) throw NumericError("time step must be positive and finite");
  const double limit = std::min({p.membrane_time_constant_ms, p.syn_time_constant_excitatory_ms,
                                 p.syn_time_constant_inhibitory_ms}) / 5.0;
  if (dt_ms > limit * (1.0 + 1e-12))
    throw ConfigError("time step " + std::to_string(dt_ms) + " ms exceeds min(tau)/5 = " +
                      std::to_string(limit) + " ms");
}

// Pure single-neuron update. Incoming spikes land at the start of the step;
// the refractory clock counts down while the membrane is held at reset.
inline StepResult step(const NeuronState& state, const NeuronParams& params,
                       std::span<const WeightedSpike> incoming, double dt_ms) {
  params.validate();
  check_step_size(params, dt_ms);
  if (!std::isfinite(state.membrane_potential_mV) ||
      !std::isfinite(state.excitatory.current_pA) ||
      !std::isfinite(state.excitatory.derivative_pA_per_ms) ||
      !std::isfinite(state.inhibitory.current_pA) ||
      !std::isfinite(state.inhibitory.derivative_pA_per_ms) ||
      !std::isfinite(state.refractory_remaining_ms) || state.refractory_remaining_ms < 0.0)
    throw NumericError("non-finite or invalid neuron state");

  const Propagator prop(params, dt_ms);
  StepResult r{state, false};
  for (const auto& in : incoming) {
    if (!std::isfinite(in.weight_pA)) throw NumericError("non-finite synaptic weight");
    prop.kick(in.sign == SignClass::excitatory ? r.state.excitatory : r.state.inhibitory, in.sign,
              in.weight_pA);
  }
  // Half a step of slack absorbs rounding in the repeated subtraction.
  const bool refractory = r.state.refractory_remaining_ms > dt_ms * 0.5;
  prop.advance(r.state, params, refractory);
  if (refractory) {
    r.state.refractory_remaining_ms = std::max(0.0, r.state.refractory_remaining_ms - dt_ms);
    r.state.membrane_potential_mV = params.reset_potential_mV;
  } else {
    r.state.refractory_remaining_ms = 0.0;
    if (r.state.membrane_potential_mV >= params.spike_threshold_mV) {
      r.spiked = true;
      r.state.membrane_potential_mV = params.reset_potential_mV;
      r.state.refractory_remaining_ms = params.refractory_period_ms;
    }
  }
  return r;
}

// Sub-threshold membrane trajectory under a constant current, starting at rest.
inline double closed_form_lif(const NeuronParams& p, double external_current_pA, double t_ms) {
  const double tau = p.membrane_time_constant_ms;
  return p.resting_potential_mV -
         external_current_pA * tau / p.membrane_capacity_pF * std::expm1(-t_ms / tau);
}

}  // namespace spikecpg

#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <vector>

namespace spikecpg {

struct SpikeTrain {
  int neuron_id = -1;
  std::vector<double> spike_times_ms;  // strictly increasing

  bool empty() const { return spike_times_ms.empty(); }
  std::size_t size() const { return spike_times_ms.size(); }

  bool strictly_increasing() const {
    return std::adjacent_find(spike_times_ms.begin(), spike_times_ms.end(),
                              [](double a, double b) { return !(a < b); }) == spike_times_ms.end();
  }

  // Spikes in [from, to), shifted so that `from` becomes 0.
  std::vector<double> window(double from, double to) const {
    std::vector<double> out;
    auto lo = std::lower_bound(spike_times_ms.begin(), spike_times_ms.end(), from);
    auto hi = std::lower_bound(lo, spike_times_ms.end(), to);
    out.reserve(static_cast<std::size_t>(hi - lo));
    for (auto it = lo; it != hi; ++it) out.push_back(*it - from);
    return out;
  }

  std::size_t count_in(double from, double to) const {
    auto lo = std::lower_bound(spike_times_ms.begin(), spike_times_ms.end(), from);
    auto hi = std::lower_bound(lo, spike_times_ms.end(), to);
    return static_cast<std::size_t>(hi - lo);
  }

  bool operator==(const SpikeTrain&) const = default;
};

using SpikeMap = std::map<int, SpikeTrain>;

struct SimulationResult {
  SpikeMap trains;
  double total_duration_ms = 0.0;
  double dt_ms = 0.0;
  std::uint64_t seed = 0;

  const SpikeTrain& train(int neuron_id) const {
    static const SpikeTrain empty_train{};
    auto it = trains.find(neuron_id);
    return it == trains.end() ? empty_train : it->second;
  }

  std::size_t total_spikes() const {
    std::size_t n = 0;
    for (const auto& [id, t] : trains) n += t.size();
    return n;
  }

  bool operator==(const SimulationResult&) const = default;
};

}  // namespace spikecpg

#pragma once

// Population-rate decoding of motor spikes into joint angles, the inverse
// encoding used to build teachers from angle targets, and rhythm metrics.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <set>
#include <string>
#include <vector>

#include "spikecpg/cpg.hpp"
#include "spikecpg/error.hpp"
#include "spikecpg/resume.hpp"
#include "spikecpg/rng.hpp"

namespace spikecpg {

// Joint -> motor neurons. Neuron ids are positions in the motor pool.
struct JointMap {
  struct Joint {
    int joint_id = 0;
    std::vector<int> neurons;

    bool operator==(const Joint&) const = default;
  };

  std::vector<Joint> joints;
  double decode_window_ms = 50.0;

  std::size_t joint_count() const { return joints.size(); }

  std::size_t neuron_count() const {
    std::size_t n = 0;
    for (const auto& j : joints) n += j.neurons.size();
    return n;
  }

  // Consecutive blocks of `per_joint` neurons, joints numbered from 0.
  static JointMap blocks(int joints, int per_joint, double window_ms = 50.0) {
    JointMap m;
    m.decode_window_ms = window_ms;
    for (int j = 0; j < joints; ++j) {
      Joint jt{j, {}};
      for (int k = 0; k < per_joint; ++k) jt.neurons.push_back(j * per_joint + k);
      m.joints.push_back(std::move(jt));
    }
    return m;
  }

  void validate() const {
    if (!std::isfinite(decode_window_ms) || decode_window_ms <= 0.0)
      throw ConfigError("decode_window_ms must be positive");
    std::set<int> ids, seen;
    for (const auto& j : joints) {
      if (!ids.insert(j.joint_id).second) throw ConfigError("duplicate joint id " + std::to_string(j.joint_id));
      if (j.neurons.empty()) throw ConfigError("joint " + std::to_string(j.joint_id) + " has no neurons");
      for (int n : j.neurons) {
        if (n < 0) throw ConfigError("negative neuron id in joint " + std::to_string(j.joint_id));
        if (!seen.insert(n).second)
          throw ConfigError("neuron " + std::to_string(n) + " belongs to more than one joint");
      }
    }
  }

  bool operator==(const JointMap&) const = default;
};

struct JointTrajectory {
  double window_ms = 50.0;
  std::vector<int> joint_ids;
  std::vector<double> window_start_ms;
  std::vector<std::vector<double>> angle_rad;  // [joint][window]

  std::size_t windows() const { return window_start_ms.size(); }
};

// theta = pi * n / N, with n the number of the joint's neurons that spiked at
// least once in the window. `id_offset` maps pool positions to network ids.
// Windows tile [from_ms, to_ms); a trailing partial window is dropped.
inline JointTrajectory decode_angles(const SimulationResult& spikes, const JointMap& map, int id_offset = 0,
                                     double from_ms = 0.0, double to_ms = -1.0) {
  map.validate();
  if (to_ms < 0.0) to_ms = spikes.total_duration_ms;
  for (const auto& j : map.joints)
    for (int n : j.neurons)
      if (!spikes.trains.count(n + id_offset))
        throw ConfigError("joint " + std::to_string(j.joint_id) + " refers to neuron " + std::to_string(n) +
                          " which is not in the recording");
  JointTrajectory tr;
  tr.window_ms = map.decode_window_ms;
  const double w = map.decode_window_ms;
  const auto count = static_cast<std::size_t>(std::max(0.0, std::floor((to_ms - from_ms) / w + 1e-9)));
  for (std::size_t k = 0; k < count; ++k) tr.window_start_ms.push_back(from_ms + static_cast<double>(k) * w);
  for (const auto& j : map.joints) {
    tr.joint_ids.push_back(j.joint_id);
    std::vector<double> angles;
    angles.reserve(count);
    const double n_total = static_cast<double>(j.neurons.size());
    for (double start : tr.window_start_ms) {
      int active = 0;
      for (int n : j.neurons)
        if (spikes.train(n + id_offset).count_in(start, start + w) > 0) ++active;
      angles.push_back(std::numbers::pi * active / n_total);
    }
    tr.angle_rad.push_back(std::move(angles));
  }
  return tr;
}

// Desired angles ([joint][window], in map order) -> one teacher spike at the
// window midpoint for round(theta N / pi) distinct, randomly chosen neurons.
inline TeacherPattern encode_target(const std::vector<std::vector<double>>& angles, const JointMap& map,
                                    std::uint64_t seed, int motor_neurons) {
  map.validate();
  if (angles.size() != map.joints.size()) throw ConfigError("angle table must have one row per joint");
  const std::size_t windows = angles.empty() ? 0 : angles.front().size();
  for (const auto& row : angles) {
    if (row.size() != windows) throw ConfigError("angle rows differ in length");
    for (double th : row)
      if (!(th >= 0.0 && th <= std::numbers::pi))
        throw DomainError("desired angle " + std::to_string(th) + " lies outside [0, pi]");
  }
  for (const auto& j : map.joints)
    for (int n : j.neurons)
      if (n >= motor_neurons) throw ConfigError("joint map refers to neuron " + std::to_string(n) + " beyond the pool");
  TeacherPattern t{static_cast<double>(windows) * map.decode_window_ms,
                   std::vector<std::vector<double>>(static_cast<std::size_t>(motor_neurons))};
  Rng rng(seed);
  for (std::size_t ji = 0; ji < map.joints.size(); ++ji) {
    const auto& j = map.joints[ji];
    const double n_total = static_cast<double>(j.neurons.size());
    for (std::size_t k = 0; k < windows; ++k) {
      const auto n = static_cast<std::size_t>(std::lround(angles[ji][k] * n_total / std::numbers::pi));
      std::vector<int> pick = j.neurons;
      rng.shuffle(pick);
      const double mid = (static_cast<double>(k) + 0.5) * map.decode_window_ms;
      for (std::size_t q = 0; q < n; ++q) t.spikes[static_cast<std::size_t>(pick[q])].push_back(mid);
    }
  }
  for (auto& s : t.spikes) std::sort(s.begin(), s.end());
  return t;
}

// ---------------------------------------------------------------------------
// Rhythm metrics

namespace detail {

inline std::vector<double> average_ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double rank = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = rank;
    i = j + 1;
  }
  return r;
}

}  // namespace detail

inline double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw ConfigError("rank correlation needs paired samples");
  if (x.size() < 2) return std::numeric_limits<double>::quiet_NaN();
  const auto rx = detail::average_ranks(x), ry = detail::average_ranks(y);
  const double n = static_cast<double>(x.size());
  const double mean = (n + 1.0) / 2.0;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mean) * (ry[i] - mean);
    sxx += (rx[i] - mean) * (rx[i] - mean);
    syy += (ry[i] - mean) * (ry[i] - mean);
  }
  if (sxx == 0.0 || syy == 0.0) return std::numeric_limits<double>::quiet_NaN();
  return sxy / std::sqrt(sxx * syy);
}

// Rank correlation of motor spike order between two cycles. Events are paired
// by (neuron, k-th spike of that neuron in the cycle); unpaired events are ignored.
inline double spike_order_correlation(const std::vector<std::vector<double>>& a,
                                      const std::vector<std::vector<double>>& b) {
  std::vector<double> x, y;
  for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i)
    for (std::size_t k = 0; k < std::min(a[i].size(), b[i].size()); ++k) {
      x.push_back(a[i][k]);
      y.push_back(b[i][k]);
    }
  return spearman(x, y);
}

// Neurons needed to read rhythm from a recording.
struct RhythmIds {
  std::vector<int> h;  // one H neuron per phase, in phase order
  std::vector<int> motor;

  static RhythmIds of(const CpgNetwork& cpg) {
    RhythmIds r;
    for (const auto& p : cpg.phases) r.h.push_back(p.h.first);
    if (cpg.motor)
      for (int id : cpg.motor->ids()) r.motor.push_back(id);
    return r;
  }
};

struct CycleMetrics {
  std::vector<double> onsets_ms;                       // phase-1 onsets
  double cycle_period_ms = 0.0;                        // mean over complete cycles
  std::vector<std::vector<double>> phase_durations_ms;  // [cycle][phase]
  std::vector<double> pattern_similarity;               // consecutive cycle pairs
  std::vector<std::vector<std::vector<double>>> motor_cycles;  // [cycle][motor][spike], cycle-relative
};

inline CycleMetrics cycle_metrics(const SimulationResult& spikes, const RhythmIds& ids) {
  if (ids.h.empty()) throw ConfigError("rhythm ids list no H neurons");
  CycleMetrics m;
  m.onsets_ms = burst_onsets(spikes.train(ids.h.front()));
  if (m.onsets_ms.size() < 3)
    throw InsufficientDataError("need at least 2 complete cycles, recording has " +
                                std::to_string(m.onsets_ms.size() < 2 ? 0 : m.onsets_ms.size() - 1));
  const auto& on = m.onsets_ms;
  m.cycle_period_ms = (on.back() - on.front()) / static_cast<double>(on.size() - 1);
  std::vector<std::vector<double>> phase_on;
  for (int h : ids.h) phase_on.push_back(burst_onsets(spikes.train(h)));
  for (std::size_t c = 0; c + 1 < on.size(); ++c) {
    // Phase p starts at its first onset inside the cycle and ends at the next phase's onset.
    std::vector<double> starts;
    for (const auto& po : phase_on) {
      auto it = std::lower_bound(po.begin(), po.end(), on[c] - 1e-9);
      starts.push_back(it != po.end() && *it < on[c + 1] ? *it : NAN);
    }
    std::vector<double> d;
    for (std::size_t p = 0; p < starts.size(); ++p)
      d.push_back((p + 1 < starts.size() ? starts[p + 1] : on[c + 1]) - starts[p]);
    m.phase_durations_ms.push_back(std::move(d));
    std::vector<std::vector<double>> cyc;
    for (int id : ids.motor) cyc.push_back(spikes.train(id).window(on[c], on[c + 1]));
    m.motor_cycles.push_back(std::move(cyc));
  }
  for (std::size_t c = 0; c + 1 < m.motor_cycles.size(); ++c)
    m.pattern_similarity.push_back(spike_order_correlation(m.motor_cycles[c], m.motor_cycles[c + 1]));
  return m;
}

inline CycleMetrics cycle_metrics(const SimulationResult& spikes, const CpgNetwork& cpg) {
  return cycle_metrics(spikes, RhythmIds::of(cpg));
}

// Speed change inside a cycle: both runs share the tonic history up to the
// switch point, placed at `fraction` of the cycle that starts at the third
// phase-1 onset. Remaining duration = next phase-1 onset - switch time.
struct SpeedSwitchResult {
  double cycle_onset_ms = 0.0;
  double switch_ms = 0.0;
  double remaining_control_ms = 0.0;
  double remaining_switched_ms = 0.0;
};

inline SpeedSwitchResult mid_cycle_switch(const CpgNetwork& cpg, double from_hz, double to_hz, double fraction = 0.5,
                                          double dt_ms = 0.1) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw ConfigError("switch fraction must lie in (0, 1)");
  const double cycle = cpg.spec.cycle_length_ms();
  const double total = 6.0 * cycle;
  const PopulationHandle h0 = cpg.phases.front().h;
  const auto control = simulate(cpg, {total, dt_ms, constant_tonic(from_hz, 0.0, total), {h0}});
  const auto on = burst_onsets(control.train(h0.first));
  if (on.size() < 4) throw InsufficientDataError("control run produced fewer than 3 complete cycles");
  SpeedSwitchResult r;
  r.cycle_onset_ms = on[2];
  r.switch_ms = on[2] + fraction * (on[3] - on[2]);
  r.remaining_control_ms = on[3] - r.switch_ms;
  auto tonic = constant_tonic(from_hz, 0.0, r.switch_ms);
  auto tail = constant_tonic(to_hz, r.switch_ms, total);
  tonic.insert(tonic.end(), tail.begin(), tail.end());
  const auto sw = simulate(cpg, {total, dt_ms, tonic, {h0}});
  const auto on2 = burst_onsets(sw.train(h0.first));
  auto it = std::upper_bound(on2.begin(), on2.end(), r.switch_ms);
  if (it == on2.end()) throw InsufficientDataError("switched run never reached the next cycle");
  r.remaining_switched_ms = *it - r.switch_ms;
  return r;
}

// Dynamic-time-warping distance between two trajectories after mapping each
// onto normalized time with `samples` points per joint. Angles are divided by
// pi, and the path cost is averaged over path length and joints, so 0 means
// identical shape and 1 is the maximum.
inline double trajectory_dtw(const JointTrajectory& a, const JointTrajectory& b, std::size_t samples = 100) {
  if (a.joint_ids != b.joint_ids) throw ConfigError("trajectories cover different joints");
  if (a.windows() == 0 || b.windows() == 0) throw InsufficientDataError("empty trajectory");
  auto resample = [&](const std::vector<double>& v) {
    std::vector<double> out(samples);
    for (std::size_t i = 0; i < samples; ++i) {
      const double pos = (static_cast<double>(i) + 0.5) / static_cast<double>(samples) * static_cast<double>(v.size());
      out[i] = v[std::min(v.size() - 1, static_cast<std::size_t>(pos))] / std::numbers::pi;
    }
    return out;
  };
  double total = 0.0;
  for (std::size_t j = 0; j < a.joint_ids.size(); ++j) {
    const auto x = resample(a.angle_rad[j]), y = resample(b.angle_rad[j]);
    const std::size_t n = samples;
    constexpr double inf = std::numeric_limits<double>::infinity();
    std::vector<double> cost((n + 1) * (n + 1), inf);
    std::vector<int> len((n + 1) * (n + 1), 0);
    auto at = [&](std::size_t r, std::size_t c) { return r * (n + 1) + c; };
    cost[at(0, 0)] = 0.0;
    for (std::size_t r = 1; r <= n; ++r)
      for (std::size_t c = 1; c <= n; ++c) {
        std::size_t best = at(r - 1, c - 1);
        if (cost[at(r - 1, c)] < cost[best]) best = at(r - 1, c);
        if (cost[at(r, c - 1)] < cost[best]) best = at(r, c - 1);
        cost[at(r, c)] = cost[best] + std::abs(x[r - 1] - y[c - 1]);
        len[at(r, c)] = len[best] + 1;
      }
    total += cost[at(n, n)] / len[at(n, n)];
  }
  return total / static_cast<double>(a.joint_ids.size());
}

}  // namespace spikecpg

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "spikecpg/cpg.hpp"
#include "spikecpg/decode.hpp"

using namespace spikecpg;

namespace {

CpgSpec two_phase(int pfn = 300, int motor = 25, std::uint64_t seed = 1) {
  CpgSpec s;
  s.phases = {{500, pfn, 0}, {500, pfn, 0}};
  s.motor_neuron_count = motor;
  s.seed = seed;
  return s;
}

std::size_t count_edges(const CpgNetwork& c, const PopulationHandle& a, const PopulationHandle& b) {
  std::size_t n = 0;
  for (const auto& s : c.net.synapses()) n += a.contains(s.pre) && b.contains(s.post);
  return n;
}

double mean_period(const CpgNetwork& c, double f) {
  const double dur = 5 * c.spec.cycle_length_ms();
  const auto r = simulate(c, {dur, 0.1, constant_tonic(f, 0, dur), {c.phases[0].h}});
  const auto on = burst_onsets(r.train(c.phases[0].h.first));
  if (on.size() < 3) return INFINITY;
  return (on.back() - on[1]) / static_cast<double>(on.size() - 2);
}

}  // namespace

TEST(Spec, Validation) {
  auto s = two_phase();
  EXPECT_NO_THROW(s.validate());
  EXPECT_DOUBLE_EQ(s.cycle_length_ms(), 1000.0);
  auto one = s;
  one.phases.pop_back();
  EXPECT_THROW(one.validate(), ConfigError);
  auto small = s;
  small.phases[1].pfn_size = 49;
  EXPECT_THROW(small.validate(), ConfigError);
  small.phases[1].pfn_size = 5001;
  EXPECT_THROW(small.validate(), ConfigError);
  small.phases[1].pfn_size = 5000;
  EXPECT_NO_THROW(small.validate());
  auto dur = s;
  dur.phases[0].duration_ms = 0;
  EXPECT_THROW(dur.validate(), ConfigError);
  auto ver = s;
  ver.format_version = 2;
  EXPECT_THROW(ver.validate(), ConfigError);
  auto motor = s;
  motor.motor_neuron_count = 0;
  EXPECT_THROW(motor.validate(), ConfigError);
}

TEST(Structure, PopulationsAndWiring) {
  const auto spec = two_phase(77, 9);
  const auto c = build(spec, {}, {20, 30});
  ASSERT_EQ(c.phase_count(), 2);
  EXPECT_EQ(c.phases[0].t.count, 20);
  EXPECT_EQ(c.phases[1].t.count, 30);
  for (int m = 0; m < 2; ++m) {
    const auto& ph = c.phases[static_cast<std::size_t>(m)];
    const auto& next = c.phases[static_cast<std::size_t>(1 - m)];
    EXPECT_EQ(ph.h.count, 1);
    EXPECT_EQ(ph.q.count, 1);
    EXPECT_EQ(ph.pfn.count, 77);
    EXPECT_EQ(ph.in.count, 77);
    // PFN_k <-> IN_k one-to-one in both directions, plus the IN autapse.
    EXPECT_EQ(count_edges(c, ph.pfn, ph.in), 77u);
    EXPECT_EQ(count_edges(c, ph.in, ph.pfn), 77u);
    std::size_t autapses = 0;
    for (const auto& s : c.net.synapses())
      if (ph.in.contains(s.pre) && s.pre == s.post) {
        ++autapses;
        EXPECT_EQ(s.sign_class, SignClass::excitatory);
      }
    EXPECT_EQ(autapses, 77u);
    for (const auto& s : c.net.synapses())
      if (ph.in.contains(s.pre) && ph.pfn.contains(s.post)) {
        EXPECT_EQ(s.post - ph.pfn.first, s.pre - ph.in.first);
        EXPECT_EQ(s.sign_class, SignClass::inhibitory);
      }
    // The next phase's Q resets this phase's IN.
    EXPECT_EQ(count_edges(c, next.q, ph.in), 77u);
    EXPECT_EQ(count_edges(c, ph.q, ph.in), 0u);
    // Q inhibits the other phase's H, H drives its own Q, the last T hands over.
    EXPECT_EQ(count_edges(c, ph.q, next.h), 1u);
    EXPECT_EQ(count_edges(c, ph.h, ph.q), 1u);
    for (const auto& s : c.net.synapses())
      if (s.pre == ph.t.end() - 1 && s.post == next.h.first) EXPECT_EQ(s.sign_class, SignClass::excitatory);
  }
}

TEST(Structure, OnlyMotorInputsArePlastic) {
  const auto spec = two_phase(60, 7);
  const auto c = build(spec, {}, {20, 20});
  ASSERT_TRUE(c.motor.has_value());
  EXPECT_EQ(c.motor->count, 7);
  std::size_t plastic = 0;
  for (const auto& s : c.net.synapses()) {
    if (!s.plastic) continue;
    ++plastic;
    EXPECT_TRUE(c.motor->contains(s.post));
    EXPECT_TRUE(c.phases[0].pfn.contains(s.pre) || c.phases[1].pfn.contains(s.pre));
    EXPECT_EQ(s.sign_class == SignClass::inhibitory, c.pfn_inhibitory[static_cast<std::size_t>(s.pre)] != 0);
  }
  EXPECT_EQ(plastic, 2u * 60u * 7u);
  EXPECT_EQ(c.plastic_synapses().size(), plastic);
}

TEST(Structure, InhibitoryDesignationPerPhase) {
  for (int size : {50, 77, 123, 300}) {
    const auto c = build(two_phase(size, 3), {}, {20, 20});
    for (const auto& ph : c.phases) {
      int inh = 0;
      for (int id = ph.pfn.first; id < ph.pfn.end(); ++id) inh += c.pfn_inhibitory[static_cast<std::size_t>(id)];
      EXPECT_EQ(inh, static_cast<int>(std::lround(0.2 * size))) << "size " << size;
    }
  }
}

TEST(Structure, SameSeedSameNetwork) {
  const auto a = build(two_phase(80, 5, 7), {}, {20, 20});
  const auto b = build(two_phase(80, 5, 7), {}, {20, 20});
  const auto c = build(two_phase(80, 5, 8), {}, {20, 20});
  EXPECT_EQ(a.net.synapses(), b.net.synapses());
  EXPECT_EQ(a.net.params(), b.net.params());
  EXPECT_NE(a.net.synapses(), c.net.synapses());
}

TEST(Structure, GeneratorOnlyBuild) {
  const auto c = build(two_phase(), {}, {30, 30}, {false, false});
  EXPECT_FALSE(c.has_pattern_layer());
  EXPECT_FALSE(c.motor.has_value());
  EXPECT_TRUE(c.plastic_synapses().empty());
  EXPECT_THROW(build(two_phase(), {}, {30}), ConfigError);
  EXPECT_THROW(build(two_phase(), {}, {1, 30}), ConfigError);
}

TEST(BurstOnsets, GapDefinesBursts) {
  SpikeTrain t{0, {5, 6, 7, 30, 31, 100}};
  EXPECT_EQ(burst_onsets(t), (std::vector<double>{5, 30, 100}));
  EXPECT_EQ(burst_onsets(t, 50), (std::vector<double>{5, 100}));
  EXPECT_TRUE(burst_onsets(SpikeTrain{}).empty());
}

TEST(Calibration, ImpossiblePhaseNamesThePhase) {
  CpgSpec s;
  s.phases = {{500, 100, 0}, {10, 100, 0}};
  try {
    calibrate(s);
    FAIL() << "expected a calibration error";
  } catch (const CalibrationError& e) {
    EXPECT_EQ(e.phase(), 2);
    EXPECT_NE(std::string(e.what()).find("phase 2"), std::string::npos);
  }
}

// ---------------------------------------------------------------------------

class Calibrated : public ::testing::Test {
protected:
  static void SetUpTestSuite() {
    res_ = new CalibrationResult;
    cpg_ = new CpgNetwork(build_calibrated(two_phase(), res_));
  }
  static void TearDownTestSuite() {
    delete cpg_;
    delete res_;
  }
  static CpgNetwork* cpg_;
  static CalibrationResult* res_;
};
CpgNetwork* Calibrated::cpg_ = nullptr;
CalibrationResult* Calibrated::res_ = nullptr;

TEST_F(Calibrated, OscillatesWithinTolerance) {
  const auto rep = validate_oscillation(*cpg_, 250, 5);
  EXPECT_TRUE(rep.pass);
  EXPECT_TRUE(rep.exclusive);
  EXPECT_TRUE(rep.durations_within_tolerance);
  for (std::size_t m = 0; m < 2; ++m) EXPECT_NEAR(rep.driven_durations_ms[m], 500.0, 50.0);
}

TEST_F(Calibrated, PersistsAfterInputRemoval) {
  const auto rep = validate_oscillation(*cpg_, 250, 5);
  EXPECT_GE(rep.cycles_after_removal, 5);
  EXPECT_TRUE(rep.free_durations_within_tolerance);
  for (const auto& cyc : rep.free_durations_ms)
    for (std::size_t m = 0; m < cyc.size(); ++m)
      EXPECT_LE(std::abs(cyc[m] - rep.driven_durations_ms[m]), 0.15 * rep.driven_durations_ms[m]);
}

TEST_F(Calibrated, NoInputNoActivity) {
  const auto r = simulate(*cpg_, {2000, 0.1, {}, cpg_->npg_populations()});
  EXPECT_EQ(r.total_spikes(), 0u);
  const auto rep = validate_oscillation(*cpg_, 0, 5);
  EXPECT_FALSE(rep.pass);
}

TEST_F(Calibrated, HigherTonicRateShortensTheCycle) {
  double prev = INFINITY;
  for (double f : {200.0, 250.0, 375.0, 500.0}) {
    const double p = mean_period(*cpg_, f);
    EXPECT_LT(p, prev) << "F = " << f;
    prev = p;
  }
}

TEST_F(Calibrated, SingleSpikePerCycle) {
  const auto rep = single_spike_report(*cpg_, 5 * 1000 + 1200, 250);
  EXPECT_TRUE(rep.violations.empty());
  ASSERT_GE(rep.firing_fraction.size(), 5u);
  for (const auto& c : rep.firing_fraction)
    for (double f : c) EXPECT_GE(f, 0.6);
}

TEST_F(Calibrated, FaultsBreakSingleSpike) {
  for (auto f : {Fault::in_to_pfn_zeroed, Fault::in_autapse_removed}) {
    const auto broken = inject_fault(*cpg_, f);
    EXPECT_FALSE(single_spike_check(broken, 5 * 1000 + 1200).empty());
  }
}

TEST_F(Calibrated, ActivityIsPhaseExclusive) {
  const double dur = 4000;
  std::vector<PopulationHandle> rec{cpg_->phases[0].h, cpg_->phases[1].h};
  const auto r = simulate(*cpg_, {dur, 0.1, constant_tonic(250, 0, dur), rec});
  EXPECT_TRUE(detail::exclusive_activity(*cpg_, r));
  // H spikes of the two phases never fall into the same 20 ms window after start-up.
  const auto& a = r.train(cpg_->phases[0].h.first).spike_times_ms;
  const auto& b = r.train(cpg_->phases[1].h.first).spike_times_ms;
  int overlaps = 0;
  for (double w = 100; w + 20 <= dur; w += 20) {
    const bool ha = std::any_of(a.begin(), a.end(), [&](double x) { return x >= w && x < w + 20; });
    const bool hb = std::any_of(b.begin(), b.end(), [&](double x) { return x >= w && x < w + 20; });
    overlaps += ha && hb;
  }
  // Hand-over windows are the only place both may be active.
  EXPECT_LE(overlaps, 2 * static_cast<int>(dur / 1000) + 2);
}

TEST_F(Calibrated, CalibrationIsDeterministic) {
  CalibrationResult again;
  const auto c = build_calibrated(two_phase(), &again);
  EXPECT_EQ(c.net.synapses(), cpg_->net.synapses());
  EXPECT_EQ(again.t_counts, res_->t_counts);
  EXPECT_EQ(again.pfn_layout, res_->pfn_layout);
}

TEST_F(Calibrated, PfnSpikesSpreadOverThePhase) {
  const double dur = 3000;
  auto rec = cpg_->pfn_populations();
  rec.push_back(cpg_->phases[0].h);
  rec.push_back(cpg_->phases[1].h);
  const auto r = simulate(*cpg_, {dur, 0.1, constant_tonic(250, 0, dur), rec});
  const auto iv = phase_intervals(*cpg_, r);
  for (const auto& p : iv) {
    const double start = p.onset_ms, end = p.onset_ms + p.duration_ms;
    if (start < 900 || end > 2900) continue;
    const auto& pfn = cpg_->phases[static_cast<std::size_t>(p.phase)].pfn;
    std::set<int> bins;
    for (int id = pfn.first; id < pfn.end(); ++id)
      for (double x : r.train(id).window(start, end)) bins.insert(static_cast<int>(x / 50));
    EXPECT_GE(bins.size(), static_cast<std::size_t>(p.duration_ms / 50) - 1) << "phase " << p.phase;
  }
}

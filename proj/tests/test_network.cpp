#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "spikecpg/network.hpp"

using namespace spikecpg;

namespace {

// A neuron that fires on the step a strong excitatory input arrives.
NeuronParams hair_trigger() {
  NeuronParams p;
  p.spike_threshold_mV = -69.99;
  return p;
}

NeuronParams source_params() {
  NeuronParams p;
  p.spike_threshold_mV = INFINITY;
  return p;
}

}  // namespace

TEST(Connect, PatternCounts) {
  Network net(3);
  auto a = net.add_population(10, ParamRange::cpg(), Role::pfn);
  auto b = net.add_population(10, ParamRange::cpg(), Role::in);
  auto c = net.add_population(4, ParamRange::cpg(), Role::motor);
  EXPECT_EQ(net.connect(a, b, Pattern::one_to_one(), WeightRange::constant(5), SignClass::excitatory, false).size(), 10u);
  EXPECT_EQ(net.connect(a, c, Pattern::all_to_all(), WeightRange::constant(5), SignClass::excitatory, false).size(), 40u);
  const auto r = net.connect(a, a, Pattern::random_pairwise(1.0), WeightRange::constant(-1), SignClass::inhibitory, false);
  EXPECT_EQ(r.size(), 90u);  // no self-connections
  for (const auto& s : net.synapses(r)) EXPECT_NE(s.pre, s.post);
  EXPECT_EQ(net.connect(a, a, Pattern::random_pairwise(0.0), WeightRange::constant(-1), SignClass::inhibitory, false).size(),
            0u);
}

TEST(Connect, RandomPairwiseDensity) {
  Network net(7);
  auto a = net.add_population(200, ParamRange::cpg(), Role::pfn);
  const auto r = net.connect(a, a, Pattern::random_pairwise(0.1), WeightRange{-3, -1}, SignClass::inhibitory, false);
  const double frac = static_cast<double>(r.size()) / (200.0 * 199.0);
  EXPECT_NEAR(frac, 0.1, 0.01);
  for (const auto& s : net.synapses(r)) {
    EXPECT_GE(s.weight, -3.0);
    EXPECT_LE(s.weight, -1.0);
  }
}

TEST(Connect, Errors) {
  Network net(1);
  auto a = net.add_population(3, ParamRange::cpg(), Role::pfn);
  auto b = net.add_population(4, ParamRange::cpg(), Role::pfn);
  EXPECT_THROW(net.connect(a, b, Pattern::one_to_one(), WeightRange::constant(1), SignClass::excitatory, false), ConfigError);
  EXPECT_THROW(net.connect(a, b, Pattern::all_to_all(), WeightRange::constant(-1), SignClass::excitatory, false), ConfigError);
  EXPECT_THROW(net.connect(a, b, Pattern::all_to_all(), WeightRange::constant(1), SignClass::inhibitory, false), ConfigError);
  EXPECT_THROW(net.connect(a, b, Pattern::random_pairwise(1.5), WeightRange::constant(1), SignClass::excitatory, false),
               ConfigError);
  EXPECT_THROW(net.add_synapse({0, 99, 1.0, SignClass::excitatory, false, 1.0}), ConfigError);
  EXPECT_THROW(net.add_population(0, ParamRange::cpg(), Role::pfn), ConfigError);
  const auto idx = net.add_synapse({0, 1, 1.0, SignClass::excitatory, true, 1.0});
  EXPECT_THROW(net.set_weight(idx, -0.5), ConfigError);
  net.set_weight(idx, 0.0);
  EXPECT_EQ(net.synapses()[idx].weight, 0.0);
}

TEST(Populations, SameSeedSameParameters) {
  Network a(42), b(42), c(43);
  a.add_population(50, ParamRange::pfn(), Role::pfn);
  b.add_population(50, ParamRange::pfn(), Role::pfn);
  c.add_population(50, ParamRange::pfn(), Role::pfn);
  EXPECT_EQ(a.params(), b.params());
  EXPECT_NE(a.params(), c.params());
  for (const auto& p : a.params()) {
    EXPECT_GE(p.external_current_pA, 0.0);
    EXPECT_LE(p.external_current_pA, 150.0);
    EXPECT_GE(p.membrane_time_constant_ms, 9.0);
    EXPECT_LE(p.membrane_time_constant_ms, 30.0);
  }
}

TEST(Tonic, RegularScheduleCount) {
  TonicSource t{250.0, 0.0, 1000.0};
  const auto s = t.spike_times();
  ASSERT_EQ(s.size(), 250u);
  EXPECT_DOUBLE_EQ(s.front(), 4.0);
  EXPECT_DOUBLE_EQ(s.back(), 1000.0);
  EXPECT_TRUE((TonicSource{0.0, 0.0, 1000.0}.spike_times().empty()));
  EXPECT_THROW((TonicSource{-1.0, 0.0, 10.0}.spike_times()), ConfigError);
  EXPECT_THROW((TonicSource{10.0, 5.0, 5.0}.spike_times()), ConfigError);
}

TEST(Tonic, PoissonIsSeeded) {
  TonicSource a{300.0, 0.0, 2000.0, TonicMode::poisson, 17};
  auto b = a;
  auto c = a;
  c.seed = 18;
  EXPECT_EQ(a.spike_times(), b.spike_times());
  EXPECT_NE(a.spike_times(), c.spike_times());
  EXPECT_NEAR(static_cast<double>(a.spike_times().size()), 600.0, 4 * std::sqrt(600.0));
}

TEST(Run, DelayedDeliveryTiming) {
  // Source fires at 10 ms; target sees the input after the 2 ms delay and
  // fires on that step, recorded at the end of the step.
  Network net(1);
  auto src = net.add_neuron(source_params(), Role::tonic_source);
  auto tgt = net.add_neuron(hair_trigger(), Role::motor);
  net.add_synapse({src.first, tgt.first, 5000.0, SignClass::excitatory, false, 2.0});
  RunConfig cfg;
  cfg.duration_ms = 30.0;
  cfg.drives = {{src.first, {10.0}}};
  cfg.record = {src, tgt};
  const auto r = net.run(cfg);
  ASSERT_EQ(r.train(src.first).size(), 1u);
  EXPECT_DOUBLE_EQ(r.train(src.first).spike_times_ms[0], 10.0);
  ASSERT_GE(r.train(tgt.first).size(), 1u);
  EXPECT_NEAR(r.train(tgt.first).spike_times_ms[0], 12.1, 1e-9);
}

TEST(Run, ChainAddsOneStepPerHop) {
  Network net(1);
  auto src = net.add_neuron(source_params(), Role::tonic_source);
  auto a = net.add_neuron(hair_trigger(), Role::npg_t);
  auto b = net.add_neuron(hair_trigger(), Role::npg_t);
  net.add_synapse({src.first, a.first, 5000.0, SignClass::excitatory, false, 1.0});
  net.add_synapse({a.first, b.first, 5000.0, SignClass::excitatory, false, 1.0});
  RunConfig cfg;
  cfg.duration_ms = 20.0;
  cfg.drives = {{src.first, {5.0}}};
  cfg.record = {a, b};
  const auto r = net.run(cfg);
  ASSERT_FALSE(r.train(a.first).empty());
  ASSERT_FALSE(r.train(b.first).empty());
  EXPECT_NEAR(r.train(a.first).spike_times_ms[0], 6.1, 1e-9);
  EXPECT_NEAR(r.train(b.first).spike_times_ms[0], 7.2, 1e-9);
}

TEST(Run, SilentRecordedNeuronsHaveEmptyTrains) {
  Network net(1);
  auto a = net.add_population(3, ParamRange::cpg(), Role::motor);
  RunConfig cfg;
  cfg.duration_ms = 10.0;
  cfg.record = {a};
  const auto r = net.run(cfg);
  EXPECT_EQ(r.trains.size(), 3u);
  EXPECT_EQ(r.total_spikes(), 0u);
  EXPECT_TRUE(r.train(12345).empty());
}

TEST(Run, DeterministicAcrossRuns) {
  Network net(5);
  auto src = net.add_neuron(source_params(), Role::tonic_source);
  auto pop = net.add_population(40, ParamRange::pfn(), Role::pfn);
  net.connect(src, pop, Pattern::all_to_all(), WeightRange{50, 300}, SignClass::excitatory, false);
  net.connect(pop, pop, Pattern::random_pairwise(0.2), WeightRange{-40, -1}, SignClass::inhibitory, false, 1.5);
  RunConfig cfg;
  cfg.duration_ms = 500.0;
  const TonicSource seg{400.0, 0.0, 500.0};
  cfg.drives = {tonic_drive(src.first, {&seg, 1})};
  cfg.record = {pop};
  const auto r1 = net.run(cfg);
  const auto r2 = net.run(cfg);
  EXPECT_EQ(r1, r2);
  EXPECT_GT(r1.total_spikes(), 0u);
}

TEST(Run, Errors) {
  Network net(1);
  auto src = net.add_neuron(source_params(), Role::tonic_source);
  auto a = net.add_neuron(NeuronParams{}, Role::motor);
  net.add_synapse({src.first, a.first, 10.0, SignClass::excitatory, false, 1.0});
  RunConfig cfg;
  cfg.duration_ms = 10.0;
  cfg.drives = {{a.first, {1.0}}};
  EXPECT_THROW(net.run(cfg), ConfigError);  // drive on a non-source
  cfg.drives = {{src.first, {NAN}}};
  EXPECT_THROW(net.run(cfg), NumericError);
  cfg.drives.clear();
  cfg.dt_ms = 1.0;  // above tau/5
  EXPECT_THROW(net.run(cfg), ConfigError);
  cfg.dt_ms = 0.1;
  cfg.max_queue_bytes = 8;
  EXPECT_THROW(net.run(cfg), ResourceError);
  cfg.max_queue_bytes = std::size_t{1} << 29;
  cfg.duration_ms = -1.0;
  EXPECT_THROW(net.run(cfg), ConfigError);

  Network short_delay(1);
  auto x = short_delay.add_population(2, ParamRange::cpg(), Role::motor);
  short_delay.add_synapse({x.first, x.first + 1, 1.0, SignClass::excitatory, false, 0.05});
  RunConfig c2;
  c2.duration_ms = 5.0;
  EXPECT_THROW(short_delay.run(c2), ConfigError);
}

TEST(Synapses, RemoveIf) {
  Network net(1);
  auto a = net.add_population(4, ParamRange::cpg(), Role::pfn);
  net.connect(a, a, Pattern::all_to_all(), WeightRange::constant(1), SignClass::excitatory, false);
  EXPECT_EQ(net.remove_synapses_if([](const SynapseSpec& s) { return s.pre == s.post; }), 4u);
  EXPECT_EQ(net.synapses().size(), 12u);
}

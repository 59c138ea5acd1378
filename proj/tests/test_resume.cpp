#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "spikecpg/resume.hpp"

using namespace spikecpg;

namespace {

// Pair-loop reference for the learning rule, written from the definition:
// every (teacher, pre) and (post, pre) pair inside the window contributes.
double brute_delta(const std::vector<double>& pre, const std::vector<double>& teacher, const std::vector<double>& post,
                   const ResumeHyperparams& hp, SignClass sign) {
  double d = 0.0;
  for (double td : teacher) {
    d += hp.a;
    for (double tp : pre) {
      const double s = td - tp;
      if (s > 0 && s <= hp.window_cutoff_ms) d += hp.A_d * std::exp(-s / hp.tau_d_ms);
    }
  }
  for (double tl : post) {
    d -= hp.a;
    for (double tp : pre) {
      const double s = tl - tp;
      if (s > 0 && s <= hp.window_cutoff_ms) d -= hp.A_l * std::exp(-s / hp.tau_l_ms);
    }
  }
  return sign == SignClass::excitatory ? d : -d;
}

std::vector<double> random_train(Rng& rng, int max_n, double span) {
  std::vector<double> v(rng.below(static_cast<std::uint64_t>(max_n) + 1));
  for (auto& x : v) x = std::round(rng.uniform(0, span) * 10) / 10;  // grid times produce exact ties
  std::sort(v.begin(), v.end());
  return v;
}

// Exhaustive minimum over all one-to-one partial matchings (not just order-preserving ones).
double brute_shift_cost(const std::vector<double>& t, const std::vector<double>& a, double window, double penalty,
                        std::size_t& items) {
  std::vector<char> used(a.size(), 0);
  double best = INFINITY;
  std::size_t best_items = 0;
  std::function<void(std::size_t, double, std::size_t)> go = [&](std::size_t i, double cost, std::size_t paired) {
    if (i == t.size()) {
      const double total = cost + static_cast<double>(a.size() - paired) * penalty;
      if (total < best) {
        best = total;
        best_items = t.size() + a.size() - paired;
      }
      return;
    }
    go(i + 1, cost + penalty, paired);
    for (std::size_t j = 0; j < a.size(); ++j)
      if (!used[j] && std::abs(t[i] - a[j]) <= window) {
        used[j] = 1;
        go(i + 1, cost + std::abs(t[i] - a[j]), paired + 1);
        used[j] = 0;
      }
  };
  go(0, 0.0, 0);
  items = best_items;
  return best;
}

}  // namespace

TEST(ResumeDelta, TeacherSpikeAfterPre) {
  const ResumeHyperparams hp;
  const std::vector<double> pre{10.0}, teacher{11.0}, none;
  EXPECT_NEAR(resume_delta(pre, teacher, none, hp, SignClass::excitatory), 3 + 6 * std::exp(-0.5), 1e-12);
  EXPECT_NEAR(resume_delta(pre, teacher, none, hp, SignClass::excitatory), 6.6392, 1e-4);
}

TEST(ResumeDelta, OutputSpikeIsAntiSymmetric) {
  const ResumeHyperparams hp;
  const std::vector<double> pre{10.0}, post{11.0}, none;
  EXPECT_NEAR(resume_delta(pre, none, post, hp, SignClass::excitatory), -(3 + 6 * std::exp(-0.5)), 1e-12);
}

TEST(ResumeDelta, CutoffExcludesDistantPre) {
  const ResumeHyperparams hp;
  const std::vector<double> pre{5.0}, teacher{10.0}, none;
  EXPECT_DOUBLE_EQ(resume_delta(pre, teacher, none, hp, SignClass::excitatory), hp.a);
  // Boundary: a lag equal to the cutoff is still inside the window.
  const std::vector<double> edge{7.0};
  EXPECT_NEAR(resume_delta(edge, teacher, none, hp, SignClass::excitatory), 3 + 6 * std::exp(-1.5), 1e-12);
  // Simultaneous pre and teacher spikes do not pair.
  const std::vector<double> same{10.0};
  EXPECT_DOUBLE_EQ(resume_delta(same, teacher, none, hp, SignClass::excitatory), hp.a);
}

TEST(ResumeDelta, InhibitoryClassFlipsSign) {
  const ResumeHyperparams hp;
  const std::vector<double> pre{10.0}, teacher{11.0}, none;
  EXPECT_NEAR(resume_delta(pre, teacher, none, hp, SignClass::inhibitory), -(3 + 6 * std::exp(-0.5)), 1e-12);
}

TEST(ResumeDelta, IdenticalTeacherAndOutputCancel) {
  Rng rng(4);
  ResumeHyperparams hp;
  for (int trial = 0; trial < 500; ++trial) {
    const auto pre = random_train(rng, 50, 200);
    const auto t = random_train(rng, 50, 200);
    EXPECT_EQ(resume_delta(pre, t, t, hp, SignClass::excitatory), 0.0);
    EXPECT_EQ(resume_delta(pre, t, t, hp, SignClass::inhibitory), 0.0);
  }
}

TEST(ResumeDelta, MatchesPairLoopReference) {
  Rng rng(2024);
  for (int trial = 0; trial < 1000; ++trial) {
    ResumeHyperparams hp;
    hp.a = rng.uniform(0, 5);
    hp.A_d = rng.uniform(0, 10);
    hp.A_l = rng.uniform(0, 10);
    hp.tau_d_ms = rng.uniform(0.5, 5);
    hp.tau_l_ms = rng.uniform(0.5, 5);
    hp.window_cutoff_ms = rng.uniform(0, 10);
    const auto pre = random_train(rng, 50, 100);
    const auto t = random_train(rng, 50, 100);
    const auto p = random_train(rng, 50, 100);
    const auto sign = trial % 2 ? SignClass::excitatory : SignClass::inhibitory;
    const double ref = brute_delta(pre, t, p, hp, sign);
    EXPECT_NEAR(resume_delta(pre, t, p, hp, sign), ref, 1e-12 * std::max(1.0, std::abs(ref))) << "trial " << trial;
  }
}

TEST(ShiftError, WorkedExample) {
  const TeacherPattern t{100.0, {{10.0, 20.0}}};
  const auto b = spike_shift_breakdown({{12.0}}, t);
  EXPECT_DOUBLE_EQ(b.error_ms, 6.0);
  EXPECT_EQ(b.matched, 1u);
  EXPECT_EQ(b.missed, 1u);
  EXPECT_EQ(b.spurious, 0u);
}

TEST(ShiftError, EdgeCases) {
  const TeacherPattern t{100.0, {{10.0}, {}}};
  EXPECT_DOUBLE_EQ(spike_shift_error({{10.0}, {}}, t), 0.0);
  EXPECT_DOUBLE_EQ(spike_shift_error({{}, {}}, t), 10.0);                // silent output
  EXPECT_DOUBLE_EQ(spike_shift_error({{25.0}, {}}, t), 10.0);            // outside the window: miss + spurious
  EXPECT_DOUBLE_EQ(spike_shift_error({{10.0}, {50.0}}, t), 5.0);         // one perfect, one spurious
  EXPECT_DOUBLE_EQ(spike_shift_error({{}, {}}, TeacherPattern{100.0, {{}, {}}}), 0.0);
}

TEST(ShiftError, MatchesExhaustiveMatching) {
  Rng rng(77);
  for (int trial = 0; trial < 400; ++trial) {
    const auto t = random_train(rng, 5, 60);
    const auto a = random_train(rng, 5, 60);
    std::size_t items = 0;
    const double cost = brute_shift_cost(t, a, 10.0, 10.0, items);
    const auto b = spike_shift_breakdown({a}, TeacherPattern{100.0, {t}});
    EXPECT_NEAR(b.error_ms * static_cast<double>(b.items), cost, 1e-9) << "trial " << trial;
  }
}

TEST(RandomTeacher, RespectsDistribution) {
  const RandomTeacherParams p{40, 1, 4, 5.0, 1000.0};
  const auto t = random_teacher(p, 9);
  ASSERT_EQ(t.spikes.size(), 40u);
  for (const auto& s : t.spikes) {
    EXPECT_GE(s.size(), 1u);
    EXPECT_LE(s.size(), 4u);
    for (std::size_t k = 1; k < s.size(); ++k) EXPECT_GE(s[k] - s[k - 1], 5.0 - 1e-9);
    for (double x : s) {
      EXPECT_GE(x, 0.0);
      EXPECT_LT(x, 1000.0);
    }
  }
  EXPECT_EQ(t, random_teacher(p, 9));
  EXPECT_NE(t, random_teacher(p, 10));
  EXPECT_NO_THROW(t.validate());
  EXPECT_THROW(random_teacher({5, 3, 2, 5.0, 1000.0}, 1), ConfigError);
  EXPECT_THROW(random_teacher({5, 1, 4, 300.0, 1000.0}, 1), ConfigError);
}

TEST(Teacher, Validation) {
  EXPECT_THROW((TeacherPattern{100.0, {{120.0}}}.validate()), ConfigError);
  EXPECT_THROW((TeacherPattern{100.0, {{10.0, 11.0}}}.validate()), ConfigError);
  EXPECT_THROW((TeacherPattern{-1.0, {}}.validate()), ConfigError);
  ResumeHyperparams hp;
  hp.tau_d_ms = 0.0;
  EXPECT_THROW(hp.validate(), ConfigError);
  hp = {};
  hp.a = NAN;
  EXPECT_THROW(hp.validate(), NumericError);
}

// ---------------------------------------------------------------------------
// Training on a calibrated two-phase network

class Training : public ::testing::Test {
protected:
  static void SetUpTestSuite() {
    CpgSpec s;
    s.phases = {{500, 300, 0}, {500, 300, 0}};
    s.motor_neuron_count = 25;
    base_ = new CpgNetwork(build_calibrated(s));
  }
  static void TearDownTestSuite() { delete base_; }
  static CpgNetwork* base_;
};
CpgNetwork* Training::base_ = nullptr;

TEST_F(Training, ZeroEpochsReportsInitialErrorOnly) {
  auto c = *base_;
  ResumeHyperparams hp;
  hp.epochs = 0;
  const auto rep = train(c, random_teacher({25, 1, 4, 5.0, 1000.0}, 1), hp, 250);
  EXPECT_EQ(rep.errors_ms.size(), 1u);
  EXPECT_EQ(rep.epochs_used, 1);
  EXPECT_EQ(rep.updates_applied, 0);
  EXPECT_EQ(c.net.synapses(), base_->net.synapses());
}

TEST_F(Training, OnlyPlasticWeightsChange) {
  auto c = *base_;
  ResumeHyperparams hp;
  hp.epochs = 5;
  hp.target_error_ms = 0.0;
  const auto rep = train(c, random_teacher({25, 1, 4, 5.0, 1000.0}, 2), hp, 250);
  EXPECT_EQ(rep.epochs_used, static_cast<int>(rep.errors_ms.size()));
  const auto& before = base_->net.synapses();
  const auto& after = c.net.synapses();
  ASSERT_EQ(before.size(), after.size());
  std::size_t changed = 0;
  for (std::size_t i = 0; i < before.size(); ++i) {
    if (!before[i].plastic) {
      EXPECT_EQ(before[i], after[i]) << "synapse " << i;
    } else {
      changed += before[i].weight != after[i].weight;
      EXPECT_TRUE(after[i].sign_ok());
      EXPECT_TRUE(base_->motor->contains(after[i].post));
    }
  }
  EXPECT_GT(changed, 0u);
  EXPECT_EQ(base_->net.params(), c.net.params());
}

TEST_F(Training, ReplayMatchesFullNetwork) {
  auto c = *base_;
  ResumeHyperparams hp;
  hp.epochs = 30;
  const auto teacher = random_teacher({25, 1, 4, 5.0, 1000.0}, 3);
  auto rep = train(c, teacher, hp, 250);
  // Evaluate the trained weights once more without updating, then compare with a full simulation.
  hp.epochs = 0;
  auto probe = c;
  rep = train(probe, teacher, hp, 250);
  const double dur = 2.6 * 1000 + 100;
  std::vector<PopulationHandle> rec{c.phases[0].h, c.phases[1].h, *c.motor};
  const auto r = simulate(c, {dur, 0.1, constant_tonic(250, 0, dur), rec});
  const auto cyc = detail::record_cycle(c, 250, 0.1);
  for (int i = 0; i < c.motor->count; ++i) {
    const auto full = r.train(c.motor->id(i)).window(cyc.onset_ms, cyc.onset_ms + cyc.cycle_ms);
    const auto& replay = rep.final_output[static_cast<std::size_t>(i)];
    ASSERT_EQ(full.size(), replay.size()) << "motor " << i;
    for (std::size_t k = 0; k < full.size(); ++k) EXPECT_NEAR(full[k], replay[k], 1e-6);
  }
}

TEST_F(Training, ErrorTrendIsMonotoneInMedian) {
  const std::vector<int> probes{1, 5, 10, 20};
  std::vector<std::vector<double>> at(probes.size());
  for (int k = 0; k < 20; ++k) {
    auto c = *base_;
    ResumeHyperparams hp;
    hp.epochs = 20;
    const auto rep = train(c, random_teacher({25, 1, 4, 5.0, 1000.0}, 500 + static_cast<std::uint64_t>(k)), hp, 250);
    for (std::size_t p = 0; p < probes.size(); ++p) {
      const auto e = std::min(static_cast<std::size_t>(probes[p]), rep.errors_ms.size() - 1);
      at[p].push_back(rep.errors_ms[e]);
    }
  }
  std::vector<double> med;
  for (auto& v : at) {
    std::sort(v.begin(), v.end());
    med.push_back((v[9] + v[10]) / 2);
  }
  for (std::size_t p = 1; p < med.size(); ++p) EXPECT_LE(med[p], med[p - 1]) << "epochs " << probes[p];
}

TEST_F(Training, TeacherShapeMismatchIsConfigError) {
  auto c = *base_;
  EXPECT_THROW(train(c, random_teacher({24, 1, 4, 5.0, 1000.0}, 1), {}, 250), ConfigError);
  EXPECT_THROW(train(c, random_teacher({25, 1, 4, 5.0, 600.0}, 1), {}, 250), ConfigError);
}

TEST_F(Training, Deterministic) {
  auto a = *base_, b = *base_;
  ResumeHyperparams hp;
  hp.epochs = 10;
  const auto t = random_teacher({25, 1, 4, 5.0, 1000.0}, 8);
  const auto ra = train(a, t, hp, 250);
  const auto rb = train(b, t, hp, 250);
  EXPECT_EQ(ra.errors_ms, rb.errors_ms);
  EXPECT_EQ(a.net.synapses(), b.net.synapses());
}

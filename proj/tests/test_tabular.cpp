#include <gtest/gtest.h>

#include <cmath>

#include "drl/tabular.hpp"

using namespace drl;

namespace {

// Pearson chi-square statistic of observed counts against equal expectation.
double chi_square_uniform(const std::vector<std::size_t>& counts) {
  double total = 0;
  for (auto c : counts) total += c;
  const double expected = total / counts.size();
  double chi = 0;
  for (auto c : counts) chi += (c - expected) * (c - expected) / expected;
  return chi;
}

}  // namespace

TEST(QLearningUpdate, TerminalTargetIsReward) {
  QTable q(2, 2);
  q_learning_update(q, {0, 1, 1.0, 1, true}, {0.5, 0.9, 0.1, 0});
  EXPECT_DOUBLE_EQ(q.at(0, 1), 0.5);
}

TEST(QLearningUpdate, BootstrapsFromNextStateMax) {
  QTable q(2, 2);
  q.at(1, 0) = 2.0;
  q.at(1, 1) = -1.0;
  q_learning_update(q, {0, 0, 1.0, 1, false}, {0.5, 0.9, 0.1, 0});
  EXPECT_DOUBLE_EQ(q.at(0, 0), 0.5 * (1 + 0.9 * 2));
  EXPECT_DOUBLE_EQ(q.at(0, 0), 1.4);
}

TEST(QLearningUpdate, ZeroStepSizeLeavesTable) {
  QTable q(3, 2);
  q.at(2, 1) = 0.7;
  const QTable before = q;
  q_learning_update(q, {1, 0, 5.0, 2, false}, 0.0, 0.9);
  EXPECT_EQ(q, before);
}

TEST(QLearningUpdate, IndexOutOfRange) {
  QTable q(2, 2);
  EXPECT_THROW(q_learning_update(q, {2, 0, 1.0, 0, true}, 0.5, 0.9), UsageError);
  EXPECT_THROW(q_learning_update(q, {0, 3, 1.0, 0, true}, 0.5, 0.9), UsageError);
}

TEST(TabularConfig, RangesValidated) {
  EXPECT_THROW((TabularConfig{0.0, 0.9, 0.1, 0}.validate()), ConfigError);
  EXPECT_THROW((TabularConfig{0.5, 1.1, 0.1, 0}.validate()), ConfigError);
  EXPECT_THROW((TabularConfig{0.5, 0.9, -0.1, 0}.validate()), ConfigError);
}

TEST(DoubleQUpdate, CrossEvaluatesSelectedAction) {
  DoubleQTable t(2, 2);
  t.qa.at(1, 0) = 5;
  t.qb.at(1, 0) = 1;
  t.qb.at(1, 1) = 3;
  double_q_update(t, {0, 0, 1.0, 1, false}, 1.0, 0.9, Head::a);
  EXPECT_DOUBLE_EQ(t.qa.at(0, 0), 1.9);  // QB at a* = 0, not QB's own max
  EXPECT_EQ(t.qb.at(0, 0), 0.0);
}

TEST(DoubleQUpdate, HeadBSwapsRoles) {
  DoubleQTable t(2, 2);
  t.qa.at(1, 0) = 5;
  t.qb.at(1, 0) = 1;
  t.qb.at(1, 1) = 3;
  double_q_update(t, {0, 0, 1.0, 1, false}, 1.0, 0.9, Head::b);
  // b* = argmax QB(s', .) = 1, evaluated by QA(s', 1) = 0.
  EXPECT_DOUBLE_EQ(t.qb.at(0, 0), 1.0);
  EXPECT_EQ(t.qa.at(0, 0), 0.0);
}

TEST(DoubleQUpdate, TerminalUsesReward) {
  DoubleQTable t(2, 2);
  t.qb.at(1, 0) = 100;
  double_q_update(t, {0, 1, -0.1, 1, true}, 1.0, 0.9, Head::a);
  EXPECT_DOUBLE_EQ(t.qa.at(0, 1), -0.1);
}

TEST(DoubleQUpdate, NeverReadsOwnValueAtNextState) {
  Rng rng(4);
  for (int trial = 0; trial < 500; ++trial) {
    DoubleQTable t(4, 3);
    t.qa.randomize(1.0, rng);
    t.qb.randomize(1.0, rng);
    const Head coin = coin_flip(rng) ? Head::a : Head::b;
    const TabularTransition tr{uniform_index(rng, 4), uniform_index(rng, 3), uniform01(rng), 3, false};
    DoubleQTable moved = t;
    // Shift the selector table's row at s' by a constant: argmax unchanged,
    // own values changed. The update must not notice.
    QTable& sel = coin == Head::a ? moved.qa : moved.qb;
    if (tr.state == 3) continue;
    for (std::size_t a = 0; a < 3; ++a) sel.at(3, a) += 10.0;
    double_q_update(t, tr, 0.3, 0.9, coin);
    double_q_update(moved, tr, 0.3, 0.9, coin);
    const auto& x = coin == Head::a ? t.qa : t.qb;
    const auto& y = coin == Head::a ? moved.qa : moved.qb;
    EXPECT_EQ(x.at(tr.state, tr.action), y.at(tr.state, tr.action));
  }
}

TEST(TabularUpdates, ChangeExactlyOneCell) {
  Rng rng(8);
  for (int trial = 0; trial < 300; ++trial) {
    DoubleQTable t(5, 3);
    t.qa.randomize(1.0, rng);
    t.qb.randomize(1.0, rng);
    const DoubleQTable before = t;
    const TabularTransition tr{uniform_index(rng, 5), uniform_index(rng, 3), uniform01(rng) + 0.5,
                               uniform_index(rng, 5), coin_flip(rng)};
    if (trial % 2) {
      q_learning_update(t.qa, tr, 0.5, 0.9);
    } else {
      double_q_update(t, tr, 0.5, 0.9, coin_flip(rng) ? Head::a : Head::b);
    }
    std::size_t changed = 0;
    for (std::size_t i = 0; i < 15; ++i) {
      changed += t.qa.values()[i] != before.qa.values()[i];
      changed += t.qb.values()[i] != before.qb.values()[i];
    }
    EXPECT_EQ(changed, 1u);
  }
}

TEST(EpsilonGreedy, GreedyWithLowestIndexTieBreak) {
  Rng rng(0);
  EXPECT_EQ(epsilon_greedy_action(std::vector<double>{1, 3, 2}, 0.0, rng), 1u);
  EXPECT_EQ(epsilon_greedy_action(std::vector<double>{2, 2, 1}, 0.0, rng), 0u);
  EXPECT_THROW(epsilon_greedy_action(std::vector<double>{}, 0.0, rng), UsageError);
}

TEST(EpsilonGreedy, FullExplorationIsUniform) {
  Rng rng(12345);
  std::vector<std::size_t> counts(3, 0);
  const std::vector<double> q{0, 10, 0};
  for (int i = 0; i < 30000; ++i) ++counts[epsilon_greedy_action(q, 1.0, rng)];
  for (auto c : counts) {
    EXPECT_GE(c / 30000.0, 0.32);
    EXPECT_LE(c / 30000.0, 0.347);
  }
  EXPECT_LT(chi_square_uniform(counts), 9.210);  // chi2(2) at p = 0.01
}

TEST(GreedyPolicy, TieBreaksAndSimpleRows) {
  QTable zero(4, 3);
  for (auto a : greedy_policy(zero)) EXPECT_EQ(a, 0u);
  QTable q(1, 2);
  q.at(0, 1) = 1;
  EXPECT_EQ(greedy_policy(q)[0], 1u);
}

TEST(GreedyPolicy, ConvergedGridworldFollowsShortestPaths) {
  // Converge by sweeping q-learning updates over the exact model.
  const EnvSpec spec{EnvId::gridworld4x4, 0, {}};
  auto env = make_env(spec);
  QTable q(env->num_states(), env->action_count());
  for (int sweep = 0; sweep < 400; ++sweep) {
    for (std::size_t s = 0; s < env->num_states(); ++s) {
      if (env->is_terminal_state(s)) continue;
      for (std::size_t a = 0; a < env->action_count(); ++a) {
        const auto o = env->outcomes(s, a)[0];
        q_learning_update(q, {s, a, o.reward, o.next, o.terminal}, 0.5, 0.9);
      }
    }
  }
  const auto v = optimal_state_values(spec, 0.9);
  const auto qstar = optimal_q_values(spec, 0.9);
  const auto policy = greedy_policy(q);
  for (std::size_t s = 0; s < env->num_states(); ++s) {
    if (env->is_terminal_state(s)) continue;
    EXPECT_NEAR(qstar[s][policy[s]], v[s], 1e-9) << "state " << s;
  }
}

TEST(TabularLearner, BootstrapsThroughStepCapTruncation) {
  auto env = make_env({EnvId::gridworld4x4, 0, {{"step_cap", "1"}}});
  TabularLearner learner(TabularAlgo::q_learning, {0.1, 0.9, 0.0, 0}, 16, 4);
  for (auto& v : learner.tables().qa.values()) v = 1.0;
  learner.run_steps(*env, 1);
  // North at (0,0) is a no-op; the cap ends the episode but the target
  // still bootstraps: 1 + 0.1 (0.9 * 1 - 1).
  EXPECT_DOUBLE_EQ(learner.q().at(0, Gridworld::north), 0.99);
}

TEST(TabularLearner, DoubleQActsOnSumOfTables) {
  TabularLearner learner(TabularAlgo::double_q, {0.1, 0.9, 0.0, 0}, 1, 3);
  learner.tables().qa.at(0, 0) = 1.0;
  learner.tables().qb.at(0, 1) = 0.6;
  learner.tables().qa.at(0, 1) = 0.6;
  EXPECT_EQ(learner.act(0), 1u);
}

TEST(TabularLearner, RunStepsReportsEpisodes) {
  auto env = make_env({EnvId::overest_mdp, 1, {}});
  TabularLearner learner(TabularAlgo::q_learning, {0.1, 0.95, 0.1, 1}, 3, 8);
  std::size_t episodes = 0;
  learner.run_steps(*env, 1000, [&](double) { ++episodes; });
  EXPECT_GE(episodes, 500u);
  EXPECT_LE(episodes, 1000u);
}

TEST(BiasStudy, DoubleQUnderestimatesRelativeToQLearning) {
  BiasConfig bc;
  bc.episodes = 10000;
  double q_mean = 0, dq_mean = 0;
  std::size_t dq_right = 0;
  constexpr int seeds = 30;
  for (int s = 0; s < seeds; ++s) {
    q_mean += run_bias_seed(TabularAlgo::q_learning, s, bc).estimate_b / seeds;
    const auto d = run_bias_seed(TabularAlgo::double_q, s, bc);
    dq_mean += d.estimate_b / seeds;
    dq_right += !d.greedy_left;
  }
  EXPECT_LT(dq_mean, q_mean);
  EXPECT_GT(dq_right, seeds * 8 / 10);
}

TEST(BiasStudy, SeededRunsAreReproducible) {
  BiasConfig bc;
  bc.episodes = 500;
  const auto a = run_bias_seed(TabularAlgo::double_q, 3, bc);
  const auto b = run_bias_seed(TabularAlgo::double_q, 3, bc);
  EXPECT_EQ(a.estimate_b, b.estimate_b);
  EXPECT_EQ(a.frac_left_chosen, b.frac_left_chosen);
}

#include "mie/agent.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mie/errors.hpp"

namespace mie {

BeliefState BeliefState::categorical(std::vector<double> probs, int depth) {
  BeliefState b;
  b.kind = BeliefKind::categorical;
  b.probs = std::move(probs);
  b.depth = depth;
  return b;
}

BeliefState BeliefState::uniform(std::size_t n, int depth) {
  if (n == 0) throw UsageError("uniform belief needs at least one hypothesis");
  return categorical(std::vector<double>(n, 1.0 / double(n)), depth);
}

BeliefState BeliefState::gaussian(std::vector<double> mean, std::vector<double> covariance) {
  BeliefState b;
  b.kind = BeliefKind::gaussian;
  b.mean = std::move(mean);
  b.covariance = std::move(covariance);
  return b;
}

std::span<const double> BeliefState::values() const {
  return kind == BeliefKind::categorical ? std::span<const double>(probs) : std::span<const double>(mean);
}

std::span<double> BeliefState::values() {
  return kind == BeliefKind::categorical ? std::span<double>(probs) : std::span<double>(mean);
}

void validate_belief(const BeliefState& belief) {
  if (belief.depth < 0 || belief.depth > kMaxBeliefDepth)
    throw UsageError("belief depth " + std::to_string(belief.depth) + " outside [0, " +
                     std::to_string(kMaxBeliefDepth) + "]");
  if (belief.kind == BeliefKind::categorical) {
    if (belief.probs.empty()) throw UsageError("categorical belief is empty");
    double sum = 0.0;
    for (double p : belief.probs) {
      if (!(p >= 0.0)) throw UsageError("categorical belief has a negative entry");
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw UsageError("categorical belief sums to " + std::to_string(sum));
  } else {
    const std::size_t n = belief.mean.size();
    if (!belief.covariance.empty() && belief.covariance.size() != n * n)
      throw UsageError("gaussian belief covariance must be n x n");
    for (double m : belief.mean)
      if (!std::isfinite(m)) throw UsageError("gaussian belief mean is not finite");
  }
  const std::size_t expected_nested = belief.depth >= 2 ? 1 : 0;
  if (belief.nested.size() != expected_nested)
    throw UsageError("depth " + std::to_string(belief.depth) + " belief needs " + std::to_string(expected_nested) +
                     " nested belief(s)");
  for (const auto& n : belief.nested) validate_belief(n);
}

void validate_policy(const Policy& policy) {
  require_distribution_rows(policy.table, 1e-9, "policy");
  if (!std::isfinite(policy.beta) || policy.beta < 0.0) throw UsageError("policy beta must be finite and >= 0");
}

std::vector<double> softmax(std::span<const double> logits, double beta) {
  std::vector<double> out(logits.size());
  if (logits.empty()) return out;
  double hi = -std::numeric_limits<double>::infinity();
  for (double l : logits) hi = std::max(hi, beta * l);
  double sum = 0.0;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    out[k] = std::exp(beta * logits[k] - hi);
    sum += out[k];
  }
  for (double& p : out) p /= sum;
  return out;
}

std::size_t argmax(std::span<const double> values) {
  if (values.empty()) throw UsageError("argmax of an empty vector");
  return std::size_t(std::max_element(values.begin(), values.end()) - values.begin());
}

std::size_t act(const MultilevelAgentState& agent, std::size_t s, Rng& rng) {
  if (s >= agent.policy.table.num_states) throw UsageError("act: state out of range");
  return sample_index(agent.policy.table.row(s), rng);
}

namespace {

bool fully_masked(const Observation& o) {
  return !o.state && !o.next_state && !o.opponent_actions && !o.reward && !o.signal;
}

void posterior_in_place(std::vector<double>& probs, std::span<const double> likelihood) {
  if (likelihood.size() != probs.size()) throw UsageError("likelihood size does not match the belief");
  double sum = 0.0;
  for (std::size_t k = 0; k < probs.size(); ++k) {
    if (!(likelihood[k] >= 0.0)) throw UsageError("likelihood must be nonnegative");
    probs[k] *= likelihood[k];
    sum += probs[k];
  }
  if (!(sum > 0.0)) throw InconsistencyError("observation has zero likelihood under every hypothesis");
  for (double& p : probs) p /= sum;
}

}  // namespace

BeliefState belief_update_F(const BeliefState& belief, const Observation& o, std::span<const double> likelihood,
                            std::span<const double> nested_likelihood) {
  if (belief.kind != BeliefKind::categorical) throw UsageError("Bayes update needs a categorical belief");
  if (belief.depth == 0 || fully_masked(o)) return belief;
  BeliefState out = belief;
  posterior_in_place(out.probs, likelihood);
  out.count += 1.0;
  if (out.depth >= 2 && !nested_likelihood.empty() && !out.nested.empty())
    posterior_in_place(out.nested[0].probs, nested_likelihood);
  return out;
}

BeliefState frequency_update(const BeliefState& belief, std::size_t observed, double rate) {
  if (belief.kind != BeliefKind::categorical) throw UsageError("frequency update needs a categorical belief");
  if (observed >= belief.probs.size()) throw UsageError("observed index outside the belief support");
  if (belief.depth == 0) return belief;
  BeliefState out = belief;
  const double eta = rate > 0.0 ? rate : 1.0 / (belief.count + 1.0);
  for (std::size_t k = 0; k < out.probs.size(); ++k)
    out.probs[k] += eta * ((k == observed ? 1.0 : 0.0) - out.probs[k]);
  out.count += 1.0;
  return out;
}

NeuralParams neural_update_G(const NeuralParams& theta, const LearningSignal& signal) {
  if (signal.index >= theta.values.size()) throw UsageError("learning signal index out of range");
  NeuralParams out = theta;
  out.values[signal.index] += theta.learning_rate * signal.delta;
  return out;
}

LearningSignal td_error(const NeuralParams& q, std::size_t num_actions, std::size_t s, std::size_t a, double reward,
                        std::size_t next_state, double gamma) {
  const std::size_t idx = s * num_actions + a;
  if (a >= num_actions || idx >= q.values.size() || (next_state + 1) * num_actions > q.values.size())
    throw UsageError("td_error: index outside the Q table");
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t b = 0; b < num_actions; ++b) best = std::max(best, q.values[next_state * num_actions + b]);
  const double future = gamma == 0.0 ? 0.0 : gamma * best;
  return {reward + future - q.values[idx], idx};
}

std::vector<double> expected_stage_payoffs(const TabularMarkovGame& game, std::size_t agent, std::size_t s,
                                           std::span<const double> opponent) {
  if (game.num_agents() != 2) throw UsageError("expected_stage_payoffs needs a 2-agent game");
  const std::size_t other = 1 - agent;
  if (opponent.size() != game.actions_per_agent[other]) throw UsageError("opponent distribution has the wrong size");
  std::vector<double> out(game.actions_per_agent[agent], 0.0);
  JointAction joint(2);
  for (std::size_t a = 0; a < out.size(); ++a) {
    joint[agent] = a;
    for (std::size_t b = 0; b < opponent.size(); ++b) {
      if (opponent[b] == 0.0) continue;
      joint[other] = b;
      out[a] += opponent[b] * game.reward(s, game.joint_index(joint), agent);
    }
  }
  return out;
}

std::vector<double> predicted_opponent_distribution(const BeliefState& belief, const AgentModel& model,
                                                    const TabularMarkovGame& game, std::size_t agent,
                                                    std::size_t s, double beta) {
  if (game.num_agents() != 2) throw UsageError("opponent prediction needs a 2-agent game");
  const std::size_t other = 1 - agent;
  const std::size_t n = game.actions_per_agent[other];
  if (model.belief_rule == BeliefRule::bayes_types) {
    if (model.opponent_types.size() != belief.probs.size())
      throw UsageError("one opponent type per belief hypothesis required");
    std::vector<double> out(n, 0.0);
    for (std::size_t k = 0; k < belief.probs.size(); ++k)
      for (std::size_t b = 0; b < n; ++b) out[b] += belief.probs[k] * model.opponent_types[k](s, b);
    return out;
  }
  if (belief.depth >= 2 && !belief.nested.empty()) {
    const auto payoffs = expected_stage_payoffs(game, other, s, belief.nested[0].probs);
    return softmax(payoffs, beta);
  }
  if (belief.probs.size() != n) throw UsageError("belief does not range over the opponent's actions");
  return belief.probs;
}

Policy policy_refresh_H(const Policy& policy, const NeuralParams& theta, const BeliefState& belief,
                        const AgentModel& model, const TabularMarkovGame& game, std::size_t agent) {
  if (model.policy_rule == PolicyRule::fixed) return policy;
  Policy out = policy;
  const std::size_t A = game.actions_per_agent[agent];
  for (std::size_t s = 0; s < game.num_states; ++s) {
    std::vector<double> logits(A, 0.0);
    if (model.policy_rule == PolicyRule::softmax_q) {
      if (theta.values.size() != game.num_states * A) throw UsageError("Q table has the wrong size");
      for (std::size_t a = 0; a < A; ++a) logits[a] = theta.values[s * A + a];
      if (policy.belief_weight != 0.0 && game.num_agents() == 2) {
        const auto opp = predicted_opponent_distribution(belief, model, game, agent, s, policy.beta);
        const auto pay = expected_stage_payoffs(game, agent, s, opp);
        for (std::size_t a = 0; a < A; ++a) logits[a] += policy.belief_weight * pay[a];
      }
    } else {
      const auto opp = predicted_opponent_distribution(belief, model, game, agent, s, policy.beta);
      logits = expected_stage_payoffs(game, agent, s, opp);
    }
    const auto row = softmax(logits, policy.beta);
    std::copy(row.begin(), row.end(), out.table.row(s).begin());
  }
  return out;
}

Observation observe(const AgentModel& model, std::size_t agent, std::size_t s, std::span<const std::size_t> actions,
                    std::span<const double> rewards, std::size_t next_state) {
  Observation o;
  o.state = s;
  o.next_state = next_state;
  if (model.observe_opponent) {
    std::vector<std::size_t> others;
    for (std::size_t i = 0; i < actions.size(); ++i)
      if (i != agent) others.push_back(actions[i]);
    o.opponent_actions = std::move(others);
  }
  if (model.observe_reward) o.reward = rewards[agent];
  return o;
}

MultilevelAgentState update_agent(const MultilevelAgentState& agent, const AgentModel& model,
                                  const TabularMarkovGame& game, std::size_t index, const Observation& o,
                                  std::size_t own_action, std::uint64_t t, const OperatorSchedule& schedule) {
  MultilevelAgentState out = agent;

  if (schedule.belief_due(t) && o.opponent_actions && !o.opponent_actions->empty() && o.state) {
    const std::size_t opp = o.opponent_actions->front();
    switch (model.belief_rule) {
      case BeliefRule::none:
        break;
      case BeliefRule::empirical_frequency: {
        BeliefState next = frequency_update(out.belief, opp, model.belief_rate);
        if (next.depth >= 2 && !next.nested.empty())
          next.nested[0] = frequency_update(next.nested[0], own_action, model.belief_rate);
        out.belief = std::move(next);
        break;
      }
      case BeliefRule::bayes_types: {
        std::vector<double> likelihood(model.opponent_types.size());
        for (std::size_t k = 0; k < likelihood.size(); ++k) likelihood[k] = model.opponent_types[k](*o.state, opp);
        out.belief = belief_update_F(out.belief, o, likelihood);
        break;
      }
    }
  }

  if (schedule.neural_due(t) && model.neural_rule == NeuralRule::q_learning && o.reward && o.state && o.next_state) {
    const std::size_t A = game.actions_per_agent[index];
    const auto signal = td_error(out.theta, A, *o.state, own_action, *o.reward, *o.next_state, model.td_discount);
    out.theta = neural_update_G(out.theta, signal);
  }

  if (schedule.policy_due(t)) out.policy = policy_refresh_H(out.policy, out.theta, out.belief, model, game, index);
  return out;
}

std::vector<MultilevelAgentState> apply_transition(const TabularMarkovGame& game, std::span<const AgentModel> models,
                                                   std::span<const MultilevelAgentState> agents, std::size_t s,
                                                   std::span<const std::size_t> actions, std::size_t next_state,
                                                   std::uint64_t t, const OperatorSchedule& schedule,
                                                   std::vector<Observation>* observations) {
  const std::size_t j = game.joint_index(actions);
  std::vector<double> rewards(game.num_agents());
  for (std::size_t i = 0; i < game.num_agents(); ++i) rewards[i] = game.reward(s, j, i);
  std::vector<MultilevelAgentState> out;
  out.reserve(agents.size());
  if (observations) observations->clear();
  for (std::size_t i = 0; i < agents.size(); ++i) {
    const Observation o = observe(models[i], i, s, actions, rewards, next_state);
    out.push_back(update_agent(agents[i], models[i], game, i, o, actions[i], t, schedule));
    if (observations) observations->push_back(o);
  }
  return out;
}

PhiResult joint_step_Phi(const TabularMarkovGame& game, std::span<const AgentModel> models,
                         std::span<const MultilevelAgentState> agents, std::size_t s, RngStreams& rng,
                         std::uint64_t t, const OperatorSchedule& schedule) {
  if (agents.size() != game.num_agents() || models.size() != game.num_agents())
    throw UsageError("joint_step_Phi: one agent state and model per game agent required");
  if (rng.agents.size() < agents.size()) throw UsageError("joint_step_Phi: missing agent random streams");
  PhiResult result;
  result.record.state = s;
  result.record.actions.resize(agents.size());
  for (std::size_t i = 0; i < agents.size(); ++i) result.record.actions[i] = act(agents[i], s, rng.agents[i]);
  const auto outcome = step(game, s, result.record.actions, rng.environment);
  result.record.rewards = outcome.rewards;
  result.record.next_state = outcome.next_state;
  result.next_state = outcome.next_state;
  result.agents = apply_transition(game, models, agents, s, result.record.actions, outcome.next_state, t, schedule,
                                   &result.record.observations);
  return result;
}

}  // namespace mie

#include "preflab/acquisition.hpp"

#include <cmath>

#include "preflab/error.hpp"

namespace preflab {

std::string_view to_string(StrategyKind k) {
  switch (k) {
    case StrategyKind::Random: return "random";
    case StrategyKind::Uncertainty: return "uncertainty";
    case StrategyKind::Thompson: return "thompson";
    case StrategyKind::Variance: return "variance";
  }
  return "random";
}

StrategyKind parse_strategy(std::string_view text) {
  if (text == "random") return StrategyKind::Random;
  if (text == "uncertainty") return StrategyKind::Uncertainty;
  if (text == "thompson") return StrategyKind::Thompson;
  if (text == "variance") return StrategyKind::Variance;
  throw Error(ErrorCode::InvalidArgument, "unknown strategy '" + std::string(text) + "'");
}

std::string_view to_string(ThompsonPairScore s) {
  return s == ThompsonPairScore::MaxItemReward ? "max_item" : "preferred_item";
}

ThompsonPairScore parse_thompson_score(std::string_view text) {
  if (text == "max_item") return ThompsonPairScore::MaxItemReward;
  if (text == "preferred_item") return ThompsonPairScore::PreferredItemReward;
  throw Error(ErrorCode::InvalidArgument, "unknown Thompson pair score '" + std::string(text) + "'");
}

namespace {

double thompson_score(const RewardModel& m, const ComparisonPair& pair, ThompsonPairScore mode) {
  const double a = reward(m, pair.first);
  const double b = reward(m, pair.second);
  if (mode == ThompsonPairScore::MaxItemReward) return std::max(a, b);
  // Reward of the item this member ranks first; equal to the max by construction.
  const bool prefers_first = a >= b;
  return prefers_first ? a : b;
}

}  // namespace

std::vector<double> score_pool(const AcquisitionStrategy& strategy, const Ensemble& ensemble,
                               std::span<const ComparisonPair* const> pool, Rng& rng) {
  if (pool.empty()) throw Error(ErrorCode::EmptyInput, "empty candidate pool");
  std::vector<double> scores;
  scores.reserve(pool.size());
  switch (strategy.kind) {
    case StrategyKind::Random:
      for (std::size_t i = 0; i < pool.size(); ++i) scores.push_back(uniform01(rng));
      break;
    case StrategyKind::Uncertainty:
      for (const auto* p : pool) scores.push_back(-std::abs(aggregate_prob(ensemble, *p) - 0.5));
      break;
    case StrategyKind::Thompson: {
      const RewardModel& m = ensemble.member(uniform_index(rng, ensemble.size()));
      for (const auto* p : pool) scores.push_back(thompson_score(m, *p, strategy.thompson_pair_score));
      break;
    }
    case StrategyKind::Variance:
      for (const auto* p : pool) scores.push_back(epistemic_variance(ensemble, *p));
      break;
  }
  return scores;
}

std::size_t argmax_first(std::span<const double> scores) {
  if (scores.empty()) throw Error(ErrorCode::EmptyInput, "empty score list");
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i)
    if (scores[i] > scores[best]) best = i;
  return best;
}

std::size_t select(const AcquisitionStrategy& strategy, const Ensemble& ensemble,
                   std::span<const ComparisonPair* const> pool, Rng& rng) {
  return argmax_first(score_pool(strategy, ensemble, pool, rng));
}

}  // namespace preflab

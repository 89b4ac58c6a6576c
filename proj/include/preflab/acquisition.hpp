#pragma once

#include <vector>

#include "preflab/ensemble.hpp"

namespace preflab {

enum class StrategyKind { Random, Uncertainty, Thompson, Variance };
enum class ThompsonPairScore { MaxItemReward, PreferredItemReward };

std::string_view to_string(StrategyKind k);
StrategyKind parse_strategy(std::string_view text);
std::string_view to_string(ThompsonPairScore s);
ThompsonPairScore parse_thompson_score(std::string_view text);

struct AcquisitionStrategy {
  StrategyKind kind = StrategyKind::Random;
  ThompsonPairScore thompson_pair_score = ThompsonPairScore::MaxItemReward;

  bool operator==(const AcquisitionStrategy&) const = default;
};

/// Higher is more preferred.
///  Random      uniform draws from rng
///  Uncertainty -|aggregate_prob - 0.5|  (least confident first)
///  Thompson    one member drawn per call; that member's pair score
///  Variance    epistemic_variance
std::vector<double> score_pool(const AcquisitionStrategy& strategy, const Ensemble& ensemble,
                               std::span<const ComparisonPair* const> pool, Rng& rng);

/// Index of the first maximum in `scores`.
std::size_t argmax_first(std::span<const double> scores);

/// argmax of score_pool, ties broken by lowest index.
std::size_t select(const AcquisitionStrategy& strategy, const Ensemble& ensemble,
                   std::span<const ComparisonPair* const> pool, Rng& rng);

}  // namespace preflab

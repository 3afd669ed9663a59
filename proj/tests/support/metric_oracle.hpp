#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mafin/rng.hpp"

namespace mafin::testing {

/// Naive metric transcriptions over plain doc-id lists. Shares no code with the library.
std::optional<double> naive_recall(const std::vector<std::string>& ranked,
                                   const std::map<std::string, int>& judged, std::size_t k);
double naive_dcg(const std::vector<int>& rels, std::size_t k);
std::optional<double> naive_ndcg(const std::vector<std::string>& ranked,
                                 const std::map<std::string, int>& judged, std::size_t k);

struct MetricInstance {
  std::vector<std::string> ranked;  ///< doc ids in rank order
  std::vector<double> scores;       ///< non-increasing, matching `ranked`
  std::map<std::string, int> judged;
};

/// Random ranking over up to 30 docs with graded labels 0..3, some unjudged.
MetricInstance random_metric_instance(Rng& rng);

}  // namespace mafin::testing

#pragma once

#include <vector>

#include "afci/features.hpp"
#include "afci/signal.hpp"

namespace afci {

// Featurizes every trace of the suite in recipe order. `trace_of_row`, when
// given, receives the recipe index of each row.
FeatureDataset featurize_suite(const SyntheticSuite& suite, const FeatureConfig& cfg,
                               std::vector<std::size_t>* trace_of_row = nullptr);

// Featurizes a list of traces.
FeatureDataset featurize_traces(const std::vector<SignalTrace>& traces, const FeatureConfig& cfg);

}  // namespace afci

#include "afci/dataset.hpp"

namespace afci {

FeatureDataset featurize_suite(const SyntheticSuite& suite, const FeatureConfig& cfg,
                               std::vector<std::size_t>* trace_of_row) {
  const Featurizer featurizer(cfg);
  FeatureDataset out;
  out.dim = cfg.dim();
  for (std::size_t i = 0; i < suite.recipes.size(); ++i) {
    const auto before = out.size();
    append_trace_features(out, suite.materialize(i), featurizer);
    if (trace_of_row) trace_of_row->insert(trace_of_row->end(), out.size() - before, i);
  }
  return out;
}

FeatureDataset featurize_traces(const std::vector<SignalTrace>& traces, const FeatureConfig& cfg) {
  const Featurizer featurizer(cfg);
  FeatureDataset out;
  out.dim = cfg.dim();
  for (const auto& t : traces) append_trace_features(out, t, featurizer);
  return out;
}

}  // namespace afci

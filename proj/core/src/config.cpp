#include "sla/config.hpp"

#include <stdexcept>

namespace sla {

void validate_config(const SlaConfig& cfg) {
  if (!(cfg.k_h > 0.0 && cfg.k_h <= 100.0))
    throw std::invalid_argument("config: k_h must be in (0, 100]");
  if (!(cfg.k_l >= 0.0 && cfg.k_l < 100.0))
    throw std::invalid_argument("config: k_l must be in [0, 100)");
  if (cfg.k_h + cfg.k_l > 100.0)
    throw std::invalid_argument("config: k_h + k_l must be <= 100");
  if (cfg.group_size < 1)
    throw std::invalid_argument("config: group size must be >= 1");
  if (!(cfg.auto_direct_max >= 0.0 && cfg.auto_complement_min <= 1.0 &&
        cfg.auto_direct_max <= cfg.auto_complement_min))
    throw std::invalid_argument("config: auto-select thresholds out of order");
}

const char* to_string(Dtype d) { return d == Dtype::f32 ? "f32" : "f64"; }

const char* to_string(FeatureMapKind k) {
  switch (k) {
    case FeatureMapKind::elu1: return "elu1";
    case FeatureMapKind::relu: return "relu";
    case FeatureMapKind::feat_softmax: return "softmax";
  }
  return "?";
}

const char* to_string(AggregationKind k) {
  switch (k) {
    case AggregationKind::direct: return "direct";
    case AggregationKind::complement: return "complement";
    case AggregationKind::four_russians: return "four-russians";
    case AggregationKind::auto_select: return "auto";
  }
  return "?";
}

Dtype parse_dtype(const std::string& s) {
  if (s == "f32") return Dtype::f32;
  if (s == "f64") return Dtype::f64;
  throw std::invalid_argument("unknown dtype: " + s);
}

FeatureMapKind parse_feature_map(const std::string& s) {
  if (s == "elu1") return FeatureMapKind::elu1;
  if (s == "relu") return FeatureMapKind::relu;
  if (s == "softmax") return FeatureMapKind::feat_softmax;
  throw std::invalid_argument("unknown feature map: " + s);
}

AggregationKind parse_aggregation(const std::string& s) {
  if (s == "direct") return AggregationKind::direct;
  if (s == "complement") return AggregationKind::complement;
  if (s == "four-russians") return AggregationKind::four_russians;
  if (s == "auto") return AggregationKind::auto_select;
  throw std::invalid_argument("unknown aggregation strategy: " + s);
}

}  // namespace sla

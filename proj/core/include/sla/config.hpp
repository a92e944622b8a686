#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

namespace sla {

enum class Dtype { f32, f64 };

/// Feature map applied to Q and K on the linear-attention path.
enum class FeatureMapKind {
  elu1,         // x+1 for x >= 0, exp(x) for x < 0; strictly positive
  relu,         // max(x, 0); non-negative, can zero a whole row
  feat_softmax  // per-row softmax over the d features; rows sum to 1
};

/// Strategy for forming per-row sums of block summaries.
enum class AggregationKind { direct, complement, four_russians, auto_select };

struct SlaConfig {
  double k_h = 25.0;  // percentage of critical blocks per row, (0, 100]
  double k_l = 25.0;  // percentage of negligible blocks per row, [0, 100)
  FeatureMapKind phi = FeatureMapKind::elu1;
  AggregationKind aggregation = AggregationKind::direct;
  std::size_t group_size = 4;  // Four-Russians group size g
  Dtype dtype = Dtype::f32;
  std::uint64_t seed = 0;
  // auto_select thresholds on the global marginal block fraction
  double auto_direct_max = 0.25;
  double auto_complement_min = 0.75;
};

/// Throws std::invalid_argument on out-of-range percentages or group size.
void validate_config(const SlaConfig& cfg);

const char* to_string(Dtype d);
const char* to_string(FeatureMapKind k);
const char* to_string(AggregationKind k);

/// Parse CLI spellings ("elu1" | "relu" | "softmax", "direct" | "complement"
/// | "four-russians" | "auto", "f32" | "f64"). Throws on unknown names.
Dtype parse_dtype(const std::string& s);
FeatureMapKind parse_feature_map(const std::string& s);
AggregationKind parse_aggregation(const std::string& s);

}  // namespace sla

#pragma once

#include <filesystem>
#include <vector>

#include "adn/data.hpp"
#include "adn/network.hpp"

namespace adn {

/// One row of the sub-network table: skip string, analytic MACs, executed
/// parameter count, top-1 accuracy, Pareto flag.
struct SubnetRecord {
  std::string skip;
  uint64_t flops = 0;
  uint64_t params = 0;
  double top1 = 0.0;
  bool pareto = false;
};

struct BlockProfileRow {
  int stage = 0;
  int block = 0;
  bool skippable = false;
  double ratio = 0.0;       // mean ||F(h)||_2 / ||h||_2
  int64_t samples = 0;
  int64_t skipped_small = 0;  // inputs with ||h||_2 < 1e-12, excluded and counted
};

/// Top-1 accuracy of one sub-network. Eval mode throughout: running
/// statistics are used and never updated; argmax ties break to the lowest
/// class index. Deterministic.
double evaluate(AdaptiveDepthNetwork& net, const SkipConfig& skip,
                const data::LabeledImageSet& set, const data::Normalization& norm,
                int batch_size = 256);

/// One record per enumerate_subnets config, in that order.
std::vector<SubnetRecord> evaluate_all(AdaptiveDepthNetwork& net,
                                       const data::LabeledImageSet& set,
                                       const data::Normalization& norm, int batch_size = 256);

/// Pareto annotation: a record is optimal iff no other has flops <= and
/// top1 >= with at least one strict. Returns records sorted by ascending
/// flops (ties by skip string).
std::vector<SubnetRecord> pareto_report(std::vector<SubnetRecord> records);

/// Mean residual magnitude ratio per executed block over up to max_batches
/// batches of the dataset.
std::vector<BlockProfileRow> residual_profile(AdaptiveDepthNetwork& net, const SkipConfig& skip,
                                              const data::LabeledImageSet& set,
                                              const data::Normalization& norm, int max_batches,
                                              int batch_size = 256);

void write_subnets_csv(const std::filesystem::path& path,
                       const std::vector<SubnetRecord>& records);
void write_profile_csv(const std::filesystem::path& path,
                       const std::vector<BlockProfileRow>& rows);

}  // namespace adn

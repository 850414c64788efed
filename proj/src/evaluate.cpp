#include "adn/evaluate.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>

namespace adn {

double evaluate(AdaptiveDepthNetwork& net, const SkipConfig& skip,
                const data::LabeledImageSet& set, const data::Normalization& norm,
                int batch_size) {
  if (set.n == 0) throw ValueError("evaluate: empty dataset");
  NoGradGuard ng;
  int64_t correct = 0;
  std::vector<int64_t> indices(static_cast<size_t>(batch_size));
  for (int64_t start = 0; start < set.n; start += batch_size) {
    const int64_t b = std::min<int64_t>(batch_size, set.n - start);
    indices.resize(static_cast<size_t>(b));
    std::iota(indices.begin(), indices.end(), start);
    std::vector<int> labels;
    Tensor x = data::normalize(data::gather_batch(set, indices, &labels), norm);
    Tensor logits = net.forward(x, skip, false).logits;
    const int64_t C = logits.dim(1);
    for (int64_t i = 0; i < b; ++i) {
      const float* row = logits.data() + i * C;
      int best = 0;
      for (int64_t c = 1; c < C; ++c)
        if (row[c] > row[best]) best = static_cast<int>(c);  // ties keep the lowest index
      if (best == labels[static_cast<size_t>(i)]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(set.n);
}

std::vector<SubnetRecord> evaluate_all(AdaptiveDepthNetwork& net,
                                       const data::LabeledImageSet& set,
                                       const data::Normalization& norm, int batch_size) {
  std::vector<SubnetRecord> records;
  for (const auto& cfg : enumerate_subnets(net.num_stages())) {
    SubnetRecord r;
    r.skip = cfg.str();
    r.flops = net.flops(cfg);
    r.params = net.param_count(cfg);
    r.top1 = evaluate(net, cfg, set, norm, batch_size);
    records.push_back(std::move(r));
  }
  return records;
}

std::vector<SubnetRecord> pareto_report(std::vector<SubnetRecord> records) {
  if (records.empty()) throw ValueError("pareto_report: no records");
  for (auto& r : records) {
    r.pareto = true;
    for (const auto& o : records) {
      const bool leq = o.flops <= r.flops && o.top1 >= r.top1;
      const bool strict = o.flops < r.flops || o.top1 > r.top1;
      if (leq && strict) {
        r.pareto = false;
        break;
      }
    }
  }
  std::sort(records.begin(), records.end(), [](const SubnetRecord& a, const SubnetRecord& b) {
    if (a.flops != b.flops) return a.flops < b.flops;
    return a.skip < b.skip;
  });
  return records;
}

std::vector<BlockProfileRow> residual_profile(AdaptiveDepthNetwork& net, const SkipConfig& skip,
                                              const data::LabeledImageSet& set,
                                              const data::Normalization& norm, int max_batches,
                                              int batch_size) {
  if (set.n == 0) throw ValueError("residual_profile: empty dataset");
  NoGradGuard ng;
  ForwardProbe probe;
  int batches = 0;
  std::vector<int64_t> indices;
  for (int64_t start = 0; start < set.n && batches < max_batches; start += batch_size, ++batches) {
    const int64_t b = std::min<int64_t>(batch_size, set.n - start);
    indices.resize(static_cast<size_t>(b));
    std::iota(indices.begin(), indices.end(), start);
    Tensor x = data::normalize(data::gather_batch(set, indices, nullptr), norm);
    net.forward(x, skip, false, &probe);
  }
  std::vector<BlockProfileRow> rows;
  rows.reserve(probe.blocks.size());
  for (const auto& b : probe.blocks)
    rows.push_back(BlockProfileRow{b.stage, b.block, b.skippable, b.mean(), b.count,
                                   b.skipped_small});
  return rows;
}

void write_subnets_csv(const std::filesystem::path& path,
                       const std::vector<SubnetRecord>& records) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string());
  out << "skip,flops,params,top1,pareto\n";
  char line[160];
  for (const auto& r : records) {
    std::snprintf(line, sizeof line, "%s,%llu,%llu,%.6f,%d\n", r.skip.c_str(),
                  static_cast<unsigned long long>(r.flops),
                  static_cast<unsigned long long>(r.params), r.top1, r.pareto ? 1 : 0);
    out << line;
  }
}

void write_profile_csv(const std::filesystem::path& path,
                       const std::vector<BlockProfileRow>& rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string());
  out << "stage,block,skippable,ratio\n";
  char line[96];
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "%d,%d,%d,%.6f\n", r.stage, r.block, r.skippable ? 1 : 0,
                  r.ratio);
    out << line;
  }
}

}  // namespace adn

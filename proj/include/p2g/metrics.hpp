#pragma once

#include <fstream>

#include "p2g/pipeline.hpp"

namespace p2g {

std::string format_metric(double v);

// step,split,accuracy,mean_loss,n,ablation_flags,seed,wall_clock_ms
// wall_clock_ms is written as 0 unless include_wall_clock is set, keeping
// metric CSVs byte-reproducible across re-runs; real timings go to the run
// metadata file.
class MetricsCsv {
 public:
  MetricsCsv(const std::string& path, bool include_wall_clock);
  void write(const MetricRow& row);

 private:
  std::ofstream out_;
  bool include_wall_clock_;
};

// instance,gold,predicted,correct,score_0..score_{m-1}
void write_per_instance_csv(const std::string& path, const std::vector<EvalRecord>& records);

// step,split,loss
void write_pretrain_csv(const std::string& path,
                        const std::vector<std::pair<int, double>>& train_log,
                        double held_out_loss, bool has_held_out);

}  // namespace p2g

#include "p2g/metrics.hpp"

#include <cstdio>

namespace p2g {

std::string format_metric(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return std::string(buf);
}

MetricsCsv::MetricsCsv(const std::string& path, bool include_wall_clock)
    : out_(path), include_wall_clock_(include_wall_clock) {
  if (!out_) throw io_error("cannot write metrics CSV: " + path);
  out_ << "step,split,accuracy,mean_loss,n,ablation_flags,seed,wall_clock_ms\n";
}

void MetricsCsv::write(const MetricRow& row) {
  out_ << row.step << ',' << row.split << ',' << format_metric(row.accuracy) << ','
       << format_metric(row.mean_loss) << ',' << row.n << ',' << row.ablation_flags << ','
       << row.seed << ',' << (include_wall_clock_ ? row.wall_clock_ms : 0) << '\n';
  out_.flush();
}

void write_per_instance_csv(const std::string& path, const std::vector<EvalRecord>& records) {
  std::ofstream out(path);
  if (!out) throw io_error("cannot write per-instance CSV: " + path);
  const int m = records.empty() ? 0 : static_cast<int>(records.front().scores.size());
  out << "instance,gold,predicted,correct";
  for (int j = 0; j < m; ++j) out << ",score_" << j;
  out << '\n';
  for (const EvalRecord& r : records) {
    out << r.index << ',' << r.gold << ',' << r.predicted << ','
        << (r.predicted == r.gold ? 1 : 0);
    for (int j = 0; j < m; ++j) out << ',' << format_metric(r.scores[j]);
    out << '\n';
  }
}

void write_pretrain_csv(const std::string& path,
                        const std::vector<std::pair<int, double>>& train_log,
                        double held_out_loss, bool has_held_out) {
  std::ofstream out(path);
  if (!out) throw io_error("cannot write pretrain CSV: " + path);
  out << "step,split,loss\n";
  for (const auto& [step, loss] : train_log)
    out << step << ",train," << format_metric(loss) << '\n';
  if (has_held_out)
    out << (train_log.empty() ? 0 : train_log.back().first) << ",dev,"
        << format_metric(held_out_loss) << '\n';
}

}  // namespace p2g

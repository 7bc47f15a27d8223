#pragma once

// metrics.csv: one row per optimisation step (plus a step-0 row for the
// starting model of a fine-tuning run). Validation columns are empty on rows
// where no validation was run.
//
//   step,epoch,phase,train_loss,valid_bleu,valid_fbert,epoch_end

#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace berttune {

struct MetricRow {
  std::size_t step = 0;
  std::size_t epoch = 0;
  std::string phase;
  std::optional<double> train_loss;
  std::optional<double> valid_bleu;
  std::optional<double> valid_fbert;
  bool epoch_end = false;

  bool operator==(const MetricRow&) const = default;
};

class MetricsFormatError : public std::runtime_error {
 public:
  MetricsFormatError(const std::string& what, std::size_t line)
      : std::runtime_error(what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

inline constexpr const char* kMetricsHeader =
    "step,epoch,phase,train_loss,valid_bleu,valid_fbert,epoch_end";

void write_metrics_csv(std::span<const MetricRow> rows, const std::filesystem::path& path);
/// Throws MetricsFormatError naming the 1-based line of the first bad row.
std::vector<MetricRow> read_metrics_csv(const std::filesystem::path& path);

}  // namespace berttune

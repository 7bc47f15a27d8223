#include "berttune/metrics_log.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace berttune {

namespace {

std::string cell(const std::optional<double>& v) {
  if (!v) return {};
  std::ostringstream out;
  out.precision(17);
  out << *v;
  return out.str();
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::size_t parse_count(const std::string& s, const char* what, std::size_t line) {
  std::size_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc{} || ptr != s.data() + s.size()) {
    throw MetricsFormatError("metrics.csv line " + std::to_string(line) + ": bad " + what + " '" +
                                 s + "'",
                             line);
  }
  return v;
}

std::optional<double> parse_value(const std::string& s, const char* what, std::size_t line) {
  if (s.empty()) return std::nullopt;
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  throw MetricsFormatError(
      "metrics.csv line " + std::to_string(line) + ": bad " + what + " '" + s + "'", line);
}

}  // namespace

void write_metrics_csv(std::span<const MetricRow> rows, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << kMetricsHeader << '\n';
  for (const auto& r : rows) {
    out << r.step << ',' << r.epoch << ',' << r.phase << ',' << cell(r.train_loss) << ','
        << cell(r.valid_bleu) << ',' << cell(r.valid_fbert) << ',' << (r.epoch_end ? 1 : 0)
        << '\n';
  }
  if (!out) throw std::runtime_error("error writing " + path.string());
}

std::vector<MetricRow> read_metrics_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kMetricsHeader) {
    throw MetricsFormatError("metrics.csv line 1: expected header '" + std::string(kMetricsHeader) +
                                 "'",
                             1);
  }
  std::vector<MetricRow> rows;
  std::size_t number = 1;
  while (std::getline(in, line)) {
    ++number;
    if (line.empty()) continue;
    const auto f = split_fields(line);
    if (f.size() != 7) {
      throw MetricsFormatError("metrics.csv line " + std::to_string(number) + ": expected 7 fields, got " +
                                   std::to_string(f.size()),
                               number);
    }
    MetricRow r;
    r.step = parse_count(f[0], "step", number);
    r.epoch = parse_count(f[1], "epoch", number);
    r.phase = f[2];
    r.train_loss = parse_value(f[3], "train_loss", number);
    r.valid_bleu = parse_value(f[4], "valid_bleu", number);
    r.valid_fbert = parse_value(f[5], "valid_fbert", number);
    if (f[6] != "0" && f[6] != "1") {
      throw MetricsFormatError(
          "metrics.csv line " + std::to_string(number) + ": bad epoch_end '" + f[6] + "'", number);
    }
    r.epoch_end = f[6] == "1";
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace berttune

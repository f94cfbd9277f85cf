// SPDX-License-Identifier: Apache-2.0
#include "pecop/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "json.hpp"
#include "pecop/trainer.hpp"

namespace pecop {

std::vector<double> fractional_ranks(std::span<const double> values) {
  const size_t n = values.size();
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(n);
  for (size_t i = 0; i < n;) {
    size_t j = i;
    while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
    const double avg = (static_cast<double>(i + j) / 2.0) + 1.0;
    for (size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw MetricError("correlation: length mismatch");
  if (x.size() < 2) throw MetricError("correlation needs at least two values");
  const auto n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw MetricError("correlation undefined for a constant vector");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

double spearman(std::span<const double> pred, std::span<const double> truth) {
  if (pred.size() != truth.size()) throw MetricError("spearman: length mismatch");
  if (pred.size() < 2) throw MetricError("spearman needs at least two values");
  for (double v : pred)
    if (!std::isfinite(v)) throw MetricError("spearman: non-finite prediction");
  const auto rp = fractional_ranks(pred);
  const auto rt = fractional_ranks(truth);
  return pearson(rp, rt);
}

EvalResult evaluate_predictions(const std::vector<ManifestRecord>& records, const std::vector<double>& predictions) {
  if (records.size() != predictions.size()) throw MetricError("evaluate: prediction count mismatch");
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> by_task;
  for (size_t i = 0; i < records.size(); ++i) {
    auto& [p, t] = by_task[records[i].task];
    p.push_back(predictions[i]);
    t.push_back(records[i].score);
  }
  EvalResult result;
  for (const auto& [task, pt] : by_task) {
    result.n_videos[task] = static_cast<int64_t>(pt.first.size());
    if (pt.first.size() < 2) {
      result.warnings.push_back("task " + task + " skipped: fewer than two videos");
      continue;
    }
    try {
      result.per_task[task] = 100.0 * spearman(pt.first, pt.second);
    } catch (const MetricError& e) {
      result.warnings.push_back("task " + task + " skipped: " + e.what());
    }
  }
  if (!result.per_task.empty()) {
    double sum = 0.0;
    for (const auto& [task, s] : result.per_task) sum += s;
    result.average = sum / static_cast<double>(result.per_task.size());
  }
  return result;
}

EvalResult evaluate_model(Model& model, const RunConfig& cfg, const LoadedDataset& eval,
                          const LoadedDataset* exemplars) {
  if (eval.videos.empty()) throw DataError("evaluate: dataset is empty");
  return evaluate_predictions(eval.records, predict_scores(model, cfg, eval, exemplars));
}

std::string to_json(const EvalResult& r) {
  nlohmann::ordered_json j;
  j["per_task"] = r.per_task;
  j["n_videos"] = r.n_videos;
  j["average"] = r.average;
  j["warnings"] = r.warnings;
  return j.dump();
}

EvalResult eval_result_from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    EvalResult r;
    r.per_task = j.at("per_task").get<std::map<std::string, double>>();
    r.n_videos = j.at("n_videos").get<std::map<std::string, int64_t>>();
    r.average = j.at("average").get<double>();
    r.warnings = j.at("warnings").get<std::vector<std::string>>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed evaluation record: ") + e.what());
  }
}

namespace {

std::string format_fixed(double v, int digits) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(digits);
  os << v;
  return os.str();
}

std::string human_bytes(int64_t bytes) {
  const char* units[] = {"B", "KB", "MB", "GB"};
  double v = static_cast<double>(bytes);
  int u = 0;
  while (v >= 1024.0 && u < 3) {
    v /= 1024.0;
    ++u;
  }
  return format_fixed(v, u == 0 ? 0 : 2) + units[u];
}

}  // namespace

ComparisonReport comparison_report(const std::vector<RunSummary>& runs) {
  std::set<std::string> task_set;
  for (const auto& r : runs)
    for (const auto& [task, s] : r.eval.per_task) task_set.insert(task);
  const std::vector<std::string> tasks(task_set.begin(), task_set.end());

  std::vector<std::string> header{"label", "#trainable", "#epochs", "size"};
  for (const auto& t : tasks) header.push_back("S:" + t);
  if (!tasks.empty()) header.push_back("avg S");

  std::vector<std::vector<std::string>> cells{header};
  ComparisonReport report;
  for (const auto& r : runs) {
    std::vector<std::string> row{r.label, std::to_string(r.trainability.trainable), std::to_string(r.epochs),
                                 human_bytes(r.checkpoint_bytes)};
    for (const auto& t : tasks) {
      auto it = r.eval.per_task.find(t);
      row.push_back(it == r.eval.per_task.end() ? "-" : format_fixed(it->second, 2));
    }
    if (!tasks.empty()) row.push_back(r.eval.per_task.empty() ? "-" : format_fixed(r.eval.average, 2));
    cells.push_back(std::move(row));

    nlohmann::ordered_json j;
    j["label"] = r.label;
    j["trainable_params"] = r.trainability.trainable;
    j["total_params"] = r.trainability.total;
    j["epochs"] = r.epochs;
    j["checkpoint_bytes"] = r.checkpoint_bytes;
    j["per_task"] = r.eval.per_task;
    if (!r.eval.per_task.empty()) j["average"] = r.eval.average;
    report.records.push_back(j.dump());
  }

  std::vector<size_t> width(header.size(), 0);
  for (const auto& row : cells)
    for (size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  std::ostringstream os;
  for (size_t i = 0; i < cells.size(); ++i) {
    for (size_t c = 0; c < cells[i].size(); ++c) {
      if (c) os << "  ";
      const auto pad = std::string(width[c] - cells[i][c].size(), ' ');
      os << (c == 0 ? cells[i][c] + pad : pad + cells[i][c]);
    }
    os << '\n';
    if (i == 0) {
      size_t total = 0;
      for (size_t c = 0; c < width.size(); ++c) total += width[c] + (c ? 2 : 0);
      os << std::string(total, '-') << '\n';
    }
  }
  report.table = os.str();
  return report;
}

}  // namespace pecop

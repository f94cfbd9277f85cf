// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "oracles.hpp"
#include "pecop/metrics.hpp"

using namespace pecop;

namespace {

std::vector<ManifestRecord> records(const std::vector<std::pair<std::string, int>>& rows) {
  std::vector<ManifestRecord> out;
  for (size_t i = 0; i < rows.size(); ++i)
    out.push_back({"v" + std::to_string(i), rows[i].first, rows[i].second, "s" + std::to_string(i), 10, "test"});
  return out;
}

}  // namespace

TEST_CASE("spearman closed forms") {
  const std::vector<double> a{1, 2, 3, 4}, b{1, 3, 2, 4}, r{4, 3, 2, 1};
  CHECK(spearman(a, a) == doctest::Approx(1.0));
  CHECK(spearman(a, r) == doctest::Approx(-1.0));
  CHECK(spearman(a, b) == doctest::Approx(0.8).epsilon(1e-12));
  // 1 - 6 * sum d^2 / (n (n^2 - 1)) with sum d^2 = 2.
  CHECK(1.0 - 6.0 * 2.0 / (4.0 * 15.0) == doctest::Approx(0.8));
}

TEST_CASE("spearman errors") {
  CHECK_THROWS_AS(spearman(std::vector<double>{1}, std::vector<double>{1}), MetricError);
  CHECK_THROWS_AS(spearman(std::vector<double>{1, 1, 1}, std::vector<double>{1, 2, 3}), MetricError);
  CHECK_THROWS_AS(spearman(std::vector<double>{1, 2}, std::vector<double>{1, 2, 3}), MetricError);
}

TEST_CASE("fractional ranks share tied positions") {
  const auto r = fractional_ranks(std::vector<double>{10, 20, 10, 30, 20, 20});
  CHECK(r == std::vector<double>{1.5, 4.0, 1.5, 6.0, 4.0, 4.0});
}

TEST_CASE("spearman matches rank-then-pearson on tied integer vectors") {
  std::mt19937_64 rng(1);
  int checked = 0;
  while (checked < 1000) {
    const int n = std::uniform_int_distribution<int>(2, 8)(rng);
    std::vector<double> x(n), y(n);
    for (auto& v : x) v = std::uniform_int_distribution<int>(0, 4)(rng);
    for (auto& v : y) v = std::uniform_int_distribution<int>(0, 4)(rng);
    if (std::all_of(x.begin(), x.end(), [&](double v) { return v == x[0]; }) ||
        std::all_of(y.begin(), y.end(), [&](double v) { return v == y[0]; }))
      continue;
    CHECK(std::abs(spearman(x, y) - oracle::spearman(x, y)) < 1e-12);
    CHECK(spearman(x, y) == doctest::Approx(spearman(y, x)).epsilon(1e-12));
    ++checked;
  }
}

TEST_CASE("spearman is invariant under increasing transforms") {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 100; ++t) {
    std::vector<double> x(7), y(7);
    for (auto& v : x) v = std::normal_distribution<double>()(rng);
    for (auto& v : y) v = std::normal_distribution<double>()(rng);
    const double base = spearman(x, y);
    std::vector<double> e(7), a(7), c(7);
    for (int i = 0; i < 7; ++i) {
      e[i] = std::exp(x[i]);
      a[i] = 3.0 * x[i] - 1.0;
      c[i] = x[i] * x[i] * x[i];
    }
    CHECK(spearman(e, y) == doctest::Approx(base).epsilon(1e-12));
    CHECK(spearman(a, y) == doctest::Approx(base).epsilon(1e-12));
    CHECK(spearman(c, y) == doctest::Approx(base).epsilon(1e-12));
    CHECK(spearman(x, e) == doctest::Approx(spearman(x, x)).epsilon(1e-12));
  }
}

TEST_CASE("per-task evaluation and the unweighted average") {
  const auto recs = records({{"gait", 1}, {"gait", 2}, {"gait", 3}, {"gait", 4}, {"tap", 1}, {"tap", 2},
                             {"tap", 3}, {"tap", 4}, {"tap", 5}});
  const std::vector<double> preds{1, 3, 2, 4, 3, 2, 1, 4, 5};
  const EvalResult r = evaluate_predictions(recs, preds);
  CHECK(r.per_task.at("gait") == doctest::Approx(80.0));
  CHECK(r.per_task.at("tap") == doctest::Approx(60.0));
  CHECK(r.average == doctest::Approx(70.0));
  CHECK(r.n_videos.at("tap") == 5);
  CHECK(r.warnings.empty());

  std::vector<double> perfect;
  for (const auto& rec : recs) perfect.push_back(rec.score);
  const EvalResult p = evaluate_predictions(recs, perfect);
  for (const auto& [task, s] : p.per_task) CHECK(s == doctest::Approx(100.0));
  CHECK(evaluate_predictions(recs, preds) == r);
}

TEST_CASE("degenerate tasks are skipped with a warning") {
  const auto recs = records({{"gait", 1}, {"gait", 2}, {"gait", 3}, {"solo", 2}, {"flat", 1}, {"flat", 1}});
  const EvalResult r = evaluate_predictions(recs, {1, 2, 3, 2, 0.5, 0.7});
  CHECK(r.per_task.size() == 1);
  CHECK(r.average == doctest::Approx(100.0));
  CHECK(r.warnings.size() == 2);
  CHECK_THROWS_AS(evaluate_predictions(recs, {1, 2}), Error);
}

TEST_CASE("eval results round-trip through JSON") {
  const auto recs = records({{"gait", 1}, {"gait", 2}, {"gait", 3}, {"solo", 1}});
  const EvalResult r = evaluate_predictions(recs, {1, 3, 2, 0});
  CHECK(eval_result_from_json(to_json(r)) == r);
}

TEST_CASE("comparison report") {
  RunSummary pecop{"pecop", {}, 8, 4000, {}};
  pecop.trainability.trainable = 1000;
  pecop.eval.per_task = {{"gait", 85.0}, {"tap", 75.0}};
  pecop.eval.average = 80.0;
  RunSummary hpt{"hpt", {}, 8, 54000, {}};
  hpt.trainability.trainable = 13000;
  hpt.eval.per_task = {{"gait", 82.0}, {"tap", 70.0}};
  hpt.eval.average = 76.0;

  const auto one = comparison_report({pecop});
  CHECK(one.records.size() == 1);
  std::istringstream lines(one.table);
  std::string line;
  int n = 0;
  while (std::getline(lines, line))
    if (!line.empty()) ++n;
  CHECK(n == 3);  // header, rule, one row
  CHECK(one.table.find("S:gait") != std::string::npos);

  const auto both = comparison_report({pecop, hpt});
  CHECK(both.records.size() == 2);
  CHECK(both.records[0].find("\"trainable_params\":1000") != std::string::npos);
  CHECK(both.table.find("13000") != std::string::npos);

  RunSummary bare{"bare", {}, 1, 10, {}};
  const auto empty = comparison_report({bare});
  CHECK(empty.table.find("S:") == std::string::npos);
  CHECK(empty.table.find("avg S") == std::string::npos);
  CHECK(empty.table.find("bare") != std::string::npos);
}

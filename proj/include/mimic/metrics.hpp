#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "mimic/error.hpp"
#include "mimic/ranked.hpp"

namespace mimic {

// Retrieval task flavor of a query (text-to-text, text-to-image, ...).
enum class TaskTag { T2T, T2I, TI2T, mixed };

inline std::string to_string(TaskTag t) {
  switch (t) {
    case TaskTag::T2T: return "T2T";
    case TaskTag::T2I: return "T2I";
    case TaskTag::TI2T: return "TI2T";
    case TaskTag::mixed: return "mixed";
  }
  return "?";
}

inline TaskTag parse_task_tag(const std::string& s) {
  if (s == "T2T") return TaskTag::T2T;
  if (s == "T2I") return TaskTag::T2I;
  if (s == "TI2T") return TaskTag::TI2T;
  if (s == "mixed") return TaskTag::mixed;
  throw Error(ErrorKind::parse, "unknown task tag '" + s + "'");
}

struct QueryJudgment {
  std::string query_id;
  std::set<std::string> positives;
  TaskTag task_tag = TaskTag::mixed;
};

namespace detail {
inline void require_judgment(const QueryJudgment& j, int k) {
  if (j.positives.empty()) throw Error(ErrorKind::judgment, "judgment has no positives");
  if (k < 1) throw Error(ErrorKind::judgment, "k must be >= 1");
}
}  // namespace detail

// |top-k intersect positives| / |positives|. The denominator is the full
// positive count, so R@1 on a 2-positive query caps at 0.5.
inline double recall_at_k(const RankedList& ranked, const QueryJudgment& judgment, int k) {
  detail::require_judgment(judgment, k);
  const std::size_t cutoff = std::min<std::size_t>(ranked.entries.size(), static_cast<std::size_t>(k));
  std::size_t hits = 0;
  for (std::size_t i = 0; i < cutoff; ++i) {
    if (judgment.positives.count(ranked.entries[i].doc_id)) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(judgment.positives.size());
}

// Reciprocal rank of the first positive within the top k, else 0.
inline double mrr_at_k(const RankedList& ranked, const QueryJudgment& judgment, int k) {
  detail::require_judgment(judgment, k);
  const std::size_t cutoff = std::min<std::size_t>(ranked.entries.size(), static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < cutoff; ++i) {
    if (judgment.positives.count(ranked.entries[i].doc_id)) {
      return 1.0 / static_cast<double>(i + 1);
    }
  }
  return 0.0;
}

// Binary-gain NDCG: DCG@k / IDCG@k with the ideal placing min(|positives|, k)
// relevant items at the top.
inline double ndcg_at_k(const RankedList& ranked, const QueryJudgment& judgment, int k) {
  detail::require_judgment(judgment, k);
  const std::size_t cutoff = std::min<std::size_t>(ranked.entries.size(), static_cast<std::size_t>(k));
  double dcg = 0.0;
  for (std::size_t i = 0; i < cutoff; ++i) {
    if (judgment.positives.count(ranked.entries[i].doc_id)) {
      dcg += 1.0 / std::log2(static_cast<double>(i + 2));
    }
  }
  const std::size_t ideal = std::min<std::size_t>(judgment.positives.size(), static_cast<std::size_t>(k));
  double idcg = 0.0;
  for (std::size_t i = 0; i < ideal; ++i) idcg += 1.0 / std::log2(static_cast<double>(i + 2));
  return dcg / idcg;
}

// --------------------------------------------------------------------------
// Aggregation
// --------------------------------------------------------------------------

enum class Metric { recall, mrr, ndcg };

inline std::string to_string(Metric m) {
  switch (m) {
    case Metric::recall: return "R";
    case Metric::mrr: return "MRR";
    case Metric::ndcg: return "NDCG";
  }
  return "?";
}

struct MetricsSpec {
  std::vector<int> recall_ks{1, 5, 20, 100};
  std::vector<int> mrr_ks{10, 20};
  std::vector<int> ndcg_ks{10, 20};
};

inline constexpr const char* kOverallTask = "overall";

struct MetricsReport {
  // (metric, k, task) -> mean value; task is a tag name or "overall".
  std::map<std::tuple<std::string, int, std::string>, double> values;
  std::map<std::string, int> query_counts;

  double at(Metric m, int k, const std::string& task = kOverallTask) const {
    auto it = values.find({std::string(to_string(m)), k, task});
    if (it == values.end()) throw Error(ErrorKind::lookup, "metric not in report");
    return it->second;
  }

  std::string to_csv() const {
    std::ostringstream out;
    out << "metric,k,task,value\n";
    for (const auto& [key, value] : values) {
      out << std::get<0>(key) << ',' << std::get<1>(key) << ',' << std::get<2>(key) << ','
          << value << '\n';
    }
    return out.str();
  }

  std::string to_table() const {
    std::ostringstream out;
    std::vector<std::string> tasks;
    std::set<std::pair<std::string, int>> rows;
    for (const auto& [key, value] : values) {
      const auto& task = std::get<2>(key);
      if (std::find(tasks.begin(), tasks.end(), task) == tasks.end()) tasks.push_back(task);
      rows.insert({std::get<0>(key), std::get<1>(key)});
    }
    std::sort(tasks.begin(), tasks.end());
    out << "metric";
    for (const auto& t : tasks) out << '\t' << t << "(n=" << query_counts.at(t) << ')';
    out << '\n';
    for (const auto& [metric, k] : rows) {
      out << metric << '@' << k;
      for (const auto& t : tasks) {
        auto it = values.find({metric, k, t});
        out << '\t';
        if (it != values.end()) {
          out << it->second;
        } else {
          out << '-';
        }
      }
      out << '\n';
    }
    return out.str();
  }
};

// Means per metric per task tag plus a query-weighted overall row. Every
// judged query must have a ranked list; extra ranked lists are ignored.
inline MetricsReport evaluate_run(const std::vector<RankedList>& ranked_lists,
                                  const std::vector<QueryJudgment>& judgments,
                                  const MetricsSpec& spec = MetricsSpec{}) {
  std::map<std::string, const RankedList*> by_id;
  for (const auto& r : ranked_lists) by_id[r.query_id] = &r;

  struct Accum {
    std::map<std::pair<std::string, int>, double> sums;
    int count = 0;
  };
  std::map<std::string, Accum> per_task;

  for (const auto& j : judgments) {
    auto it = by_id.find(j.query_id);
    if (it == by_id.end()) {
      throw Error(ErrorKind::coverage, "judged query " + j.query_id + " has no ranked list");
    }
    const RankedList& r = *it->second;
    std::map<std::pair<std::string, int>, double> row;
    for (int k : spec.recall_ks) row[{"R", k}] = recall_at_k(r, j, k);
    for (int k : spec.mrr_ks) row[{"MRR", k}] = mrr_at_k(r, j, k);
    for (int k : spec.ndcg_ks) row[{"NDCG", k}] = ndcg_at_k(r, j, k);
    for (const std::string task : {to_string(j.task_tag), std::string(kOverallTask)}) {
      auto& acc = per_task[task];
      acc.count += 1;
      for (const auto& [key, value] : row) acc.sums[key] += value;
    }
  }

  MetricsReport report;
  for (const auto& [task, acc] : per_task) {
    report.query_counts[task] = acc.count;
    for (const auto& [key, sum] : acc.sums) {
      report.values[{key.first, key.second, task}] = sum / acc.count;
    }
  }
  return report;
}

}  // namespace mimic

#include "dualkg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

namespace dualkg {

int hits_at_1(std::span<const double> distribution, std::span<const std::size_t> answers) {
  if (answers.empty()) throw std::invalid_argument("hits_at_1: empty answer set");
  if (distribution.empty()) return 0;
  // max_element returns the first maximum, i.e. the lowest index.
  const auto best = static_cast<std::size_t>(std::max_element(distribution.begin(), distribution.end()) -
                                             distribution.begin());
  return std::find(answers.begin(), answers.end(), best) != answers.end() ? 1 : 0;
}

double f1_score(std::span<const std::size_t> predicted, std::span<const std::size_t> answers) {
  if (answers.empty()) throw std::invalid_argument("f1_score: empty answer set");
  const std::set<std::size_t> pred(predicted.begin(), predicted.end());
  const std::set<std::size_t> gold(answers.begin(), answers.end());
  if (pred.empty()) return 0.0;
  std::size_t overlap = 0;
  for (std::size_t p : pred) overlap += gold.count(p);
  if (overlap == 0) return 0.0;
  const double precision = static_cast<double>(overlap) / static_cast<double>(pred.size());
  const double recall = static_cast<double>(overlap) / static_cast<double>(gold.size());
  return 2.0 * precision * recall / (precision + recall);
}

std::vector<std::size_t> select_answers(std::span<const double> distribution, double ratio) {
  if (!(ratio > 0.0 && ratio <= 1.0)) throw std::invalid_argument("select_answers: ratio must be in (0, 1]");
  std::vector<std::size_t> out;
  if (distribution.empty()) return out;
  const double peak = *std::max_element(distribution.begin(), distribution.end());
  for (std::size_t i = 0; i < distribution.size(); ++i)
    if (distribution[i] >= ratio * peak) out.push_back(i);
  return out;
}

double transe_score(const Tensor& entities, const Tensor& relations, std::span<const std::size_t> fact_head,
                    std::span<const std::size_t> fact_tail, std::span<const std::size_t> fact_node) {
  if (fact_head.size() != fact_tail.size() || fact_head.size() != fact_node.size()) {
    throw std::invalid_argument("transe_score: fact index lists differ in length");
  }
  if (entities.rank() != 2 || relations.rank() != 2 || entities.cols() != relations.cols()) {
    throw ShapeError("transe_score: entity " + shape_string(entities.shape()) + " and relation " +
                     shape_string(relations.shape()) + " embeddings must be [*, d]");
  }
  if (fact_head.empty()) return 0.0;
  const std::size_t d = entities.cols();
  double total = 0.0;
  for (std::size_t f = 0; f < fact_head.size(); ++f) {
    double dot = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      dot += relations.at(fact_node[f], j) * (entities.at(fact_tail[f], j) - entities.at(fact_head[f], j));
    }
    total += std::abs(dot);
  }
  return total / static_cast<double>(fact_head.size()) / static_cast<double>(d);
}

EvalSummary summarize(std::span<const QuestionResult> results) {
  EvalSummary s;
  s.questions = results.size();
  if (results.empty()) return s;
  for (const auto& r : results) {
    s.hits_at_1 += r.hits;
    s.f1 += r.f1;
    s.transe += r.transe;
  }
  const double n = static_cast<double>(results.size());
  s.hits_at_1 /= n;
  s.f1 /= n;
  s.transe /= n;
  return s;
}

std::string to_string(GroupKey key) {
  switch (key) {
    case GroupKey::kRelationCount: return "relation-count";
    case GroupKey::kFactCount: return "fact-count";
    case GroupKey::kRelationEntityRatio: return "relation/entity";
    case GroupKey::kFactEntityRatio: return "fact/entity";
  }
  return "?";
}

double group_key_value(const QuestionResult& r, GroupKey key) {
  const double entities = r.entity_count ? static_cast<double>(r.entity_count) : 1.0;
  switch (key) {
    case GroupKey::kRelationCount: return static_cast<double>(r.relation_count);
    case GroupKey::kFactCount: return static_cast<double>(r.fact_count);
    case GroupKey::kRelationEntityRatio: return static_cast<double>(r.relation_count) / entities;
    case GroupKey::kFactEntityRatio: return static_cast<double>(r.fact_count) / entities;
  }
  return 0.0;
}

std::vector<QuantileGroup> quantile_report(std::span<const QuestionResult> results, GroupKey key) {
  constexpr std::size_t kGroups = 4;
  if (results.size() < kGroups) throw std::invalid_argument("quantile_report: need at least 4 questions");
  std::vector<std::size_t> order(results.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return group_key_value(results[a], key) < group_key_value(results[b], key);
  });
  const std::size_t n = results.size();
  std::vector<QuantileGroup> groups(kGroups);
  for (std::size_t g = 0; g < kGroups; ++g) {
    const std::size_t begin = g * n / kGroups;
    const std::size_t end = (g + 1) * n / kGroups;
    QuantileGroup& out = groups[g];
    out.size = end - begin;
    out.key_min = group_key_value(results[order[begin]], key);
    out.key_max = group_key_value(results[order[end - 1]], key);
    for (std::size_t i = begin; i < end; ++i) {
      out.mean_f1 += results[order[i]].f1;
      out.mean_transe += results[order[i]].transe;
    }
    out.mean_f1 /= static_cast<double>(out.size);
    out.mean_transe /= static_cast<double>(out.size);
  }
  return groups;
}

std::string format_quantile_table(std::span<const QuantileGroup> groups, GroupKey key) {
  std::ostringstream out;
  out << "grouped by " << to_string(key) << '\n';
  out << std::left << std::setw(8) << "group" << std::right << std::setw(8) << "size" << std::setw(20) << "key range"
      << std::setw(10) << "F1" << std::setw(10) << "TransE" << '\n';
  out << std::fixed;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    std::ostringstream range;
    range << std::fixed << std::setprecision(2) << groups[g].key_min << "-" << groups[g].key_max;
    out << std::left << std::setw(8) << ("Q" + std::to_string(g + 1)) << std::right << std::setw(8) << groups[g].size
        << std::setw(20) << range.str() << std::setw(10) << std::setprecision(4) << groups[g].mean_f1
        << std::setw(10) << groups[g].mean_transe << '\n';
  }
  return out.str();
}

}  // namespace dualkg

#pragma once

#include <span>
#include <string>
#include <vector>

#include "dualkg/tensor.hpp"

namespace dualkg {

/// 1 if the argmax entity is an answer. Ties go to the lowest entity index.
int hits_at_1(std::span<const double> distribution, std::span<const std::size_t> answers);

/// Harmonic mean of precision and recall; 0 when predicted is empty.
double f1_score(std::span<const std::size_t> predicted, std::span<const std::size_t> answers);

/// { e : p_e >= ratio * max(p) }, ascending.
std::vector<std::size_t> select_answers(std::span<const double> distribution, double ratio = 0.5);

/// Mean over facts of |<r, e_tail - e_head>| / d, using the final entity and
/// relation embeddings. `fact_node` maps each fact to its relation row.
double transe_score(const Tensor& entities, const Tensor& relations, std::span<const std::size_t> fact_head,
                    std::span<const std::size_t> fact_tail, std::span<const std::size_t> fact_node);

/// Per-question evaluation record.
struct QuestionResult {
  std::string id;
  std::size_t relation_count = 0;
  std::size_t fact_count = 0;
  std::size_t entity_count = 0;
  int hits = 0;
  double f1 = 0.0;
  double transe = 0.0;
};

struct EvalSummary {
  std::size_t questions = 0;
  double hits_at_1 = 0.0;
  double f1 = 0.0;
  double transe = 0.0;
};

EvalSummary summarize(std::span<const QuestionResult> results);

enum class GroupKey { kRelationCount, kFactCount, kRelationEntityRatio, kFactEntityRatio };

std::string to_string(GroupKey key);
double group_key_value(const QuestionResult& r, GroupKey key);

struct QuantileGroup {
  std::size_t size = 0;
  double key_min = 0.0;
  double key_max = 0.0;
  double mean_f1 = 0.0;
  double mean_transe = 0.0;
};

/// Stable sort by key (ties keep question order), then four contiguous groups
/// whose sizes differ by at most one; group g holds positions
/// [g*n/4, (g+1)*n/4). Needs at least 4 questions.
std::vector<QuantileGroup> quantile_report(std::span<const QuestionResult> results, GroupKey key);

/// Aligned text table of the four groups.
std::string format_quantile_table(std::span<const QuantileGroup> groups, GroupKey key);

}  // namespace dualkg

#pragma once

// Iterative reasoning network over a primal entity graph and its dual
// relation graph. Each reasoning step runs, in order:
//
//   generate_instruction -> primal_reason_step -> dual_propagate ->
//   entity_aware_relation_update -> relation_aware_entity_update ->
//   decode -> adapt_instruction
//
// Weights use the row-vector convention y = x W + b with W stored as
// [in, out], so rank-1 and rank-2 inputs share one code path.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dualkg/autodiff.hpp"
#include "dualkg/graph.hpp"
#include "dualkg/parameters.hpp"
#include "dualkg/tensor.hpp"

namespace dualkg {

enum class EntityInit { kRelationDerived, kLookup };
enum class DualMode { kAttention, kCooccurrence, kOff };

std::string to_string(EntityInit mode);
std::string to_string(DualMode mode);
EntityInit parse_entity_init(const std::string& text);
DualMode parse_dual_mode(const std::string& text);

struct ModelConfig {
  std::size_t hidden = 128;
  std::size_t steps = 3;
  double focal_gamma = 2.0;
  EntityInit entity_init = EntityInit::kRelationDerived;
  DualMode dual_mode = DualMode::kAttention;
  bool interaction = true;
  DualEdgeRule dual_edge_rule = DualEdgeRule::kAnySharedEntity;
  bool inverse_facts = true;

  void validate() const;
};

/// Vocabulary sizes the parameter shapes depend on.
struct ModelSizes {
  std::size_t tokens = 0;
  /// Base relation vocabulary; the relation table holds 2x this for inverses.
  std::size_t relations = 0;
  /// Only used by EntityInit::kLookup.
  std::size_t entities = 0;
};

/// Registers every parameter the configuration uses, each exactly once.
void init_parameters(ParameterStore& params, const ModelConfig& config, const ModelSizes& sizes, std::uint64_t seed);

/// Subgraph plus the index vectors and constant operators the network needs.
struct ReasoningGraph {
  SubGraph subgraph;
  DualGraph dual;
  /// Per fact: local head, local tail, dual node of its relation.
  std::vector<std::size_t> fact_head;
  std::vector<std::size_t> fact_tail;
  std::vector<std::size_t> fact_node;
  /// Row of the relation table for each dual node.
  std::vector<std::size_t> relation_rows;
  /// Row of the entity table for each local entity (lookup mode).
  std::vector<std::size_t> entity_rows;
  /// [R] 1 / |F_r|.
  Tensor inverse_fact_count;
  /// [N, R] averaging operators over the distinct relations an entity heads,
  /// tails, or touches in either role. Empty roles give all-zero rows.
  Tensor head_mean;
  Tensor tail_mean;
  Tensor incident_mean;
  /// [R, R] dual adjacency (with self-loops) and row-normalized co-occurrence.
  Tensor dual_mask;
  Tensor cooccurrence;
  /// [N] uniform over topic entities.
  Tensor initial_distribution;

  std::size_t entity_count() const { return subgraph.entity_count(); }
  std::size_t relation_count() const { return dual.size(); }
};

/// Builds the reasoning graph. `sg` must not be augmented yet; inverse facts
/// are added when the configuration asks for them. `entity_table_rows` bounds
/// entity_rows (out-of-range ids map to row 0).
ReasoningGraph prepare_graph(SubGraph sg, const ModelConfig& config, std::size_t base_relation_count,
                             std::size_t entity_table_rows = 0);

struct QuestionEncoding {
  /// [l + 1, d]: row 0 is the summary state, rows 1..l the token states.
  ad::Var states;
  /// [d] summary vector (row 0 of states).
  ad::Var summary;
};

QuestionEncoding encode_question(ad::Tape& tape, const ParameterStore& params, std::span<const std::uint32_t> tokens);

struct Instruction {
  ad::Var vector;     // [d]
  ad::Var attention;  // [l]
};

/// step is 1-based.
Instruction generate_instruction(ad::Tape& tape, const ParameterStore& params, std::size_t step, ad::Var question,
                                 ad::Var previous, ad::Var states);

/// Neighborhood aggregation gated by the instruction; returns the [N, d]
/// intermediate entity representation.
ad::Var primal_reason_step(ad::Tape& tape, const ParameterStore& params, const ReasoningGraph& graph,
                           ad::Var entities, ad::Var relations, ad::Var distribution, ad::Var instruction);

struct DualPropagation {
  ad::Var relations;  // [R, d]
  /// [R, R] edge weights; invalid when propagation is off.
  ad::Var attention;
};

DualPropagation dual_propagate(ad::Tape& tape, const ParameterStore& params, const ReasoningGraph& graph,
                               ad::Var relations, DualMode mode);

ad::Var entity_aware_relation_update(ad::Tape& tape, const ParameterStore& params, const ReasoningGraph& graph,
                                     ad::Var previous_entities, ad::Var propagated_relations, bool enabled);

ad::Var relation_aware_entity_update(ad::Tape& tape, const ParameterStore& params, const ReasoningGraph& graph,
                                     ad::Var relations, ad::Var primal_entities);

ad::Var decode(ad::Tape& tape, const ParameterStore& params, ad::Var entities);

ad::Var adapt_instruction(ad::Tape& tape, const ParameterStore& params, ad::Var instruction, ad::Var entities,
                          std::span<const std::size_t> topics);

/// Plain values of everything a forward pass produced.
struct ModelState {
  std::vector<Tensor> entities;       // E^(0..n), each [N, d]
  std::vector<Tensor> relations;      // R^(0..n), each [R, d]
  std::vector<Tensor> instructions;   // adapted i^(1..n), each [d]
  std::vector<Tensor> distributions;  // p^(0..n), each [N]
  std::vector<Tensor> word_attention; // per step, [l]
  std::vector<Tensor> dual_attention; // per step, [R, R]; empty when off

  const Tensor& final_distribution() const { return distributions.back(); }
};

struct ForwardPass {
  ModelState state;
  ad::Var final_distribution;
};

ForwardPass forward(ad::Tape& tape, const ParameterStore& params, const ModelConfig& config,
                    const ReasoningGraph& graph, std::span<const std::uint32_t> tokens);

inline constexpr double kFocalEpsilon = 1e-12;

/// -(1/|A|) sum_a (1 - p_a)^gamma log(p_a + eps) over local answer indices.
ad::Var focal_loss(ad::Var distribution, std::span<const std::size_t> answers, double gamma);

/// Parameter names, shared with tests and the gradient checker.
namespace param {
inline const std::string kTokenEmbedding = "encoder.embedding";
inline const std::string kRelationEmbedding = "relation.embedding";
inline const std::string kEntityEmbedding = "entity.embedding";
inline const std::string kEntityInit = "entity.init.W";
inline const std::string kWordAttention = "instruction.W_alpha";
std::string instruction_weight(std::size_t step);
std::string instruction_bias(std::size_t step);
inline const std::string kMatch = "primal.W_R";
inline const std::string kAttention = "dual.W_att";
inline const std::string kDualWeight = "dual.W_r";
inline const std::string kDualBias = "dual.b_r";
inline const std::string kInteractionWeight = "interaction.W_e";
inline const std::string kInteractionBias = "interaction.b_e";
inline const std::string kHeadProjector = "interaction.W_head";
inline const std::string kTailProjector = "interaction.W_tail";
inline const std::string kAdaptWeight = "adapt.W_i";
inline const std::string kGateInput = "adapt.gate.W_z";
inline const std::string kGateState = "adapt.gate.U_z";
inline const std::string kGateBias = "adapt.gate.b_z";
}  // namespace param

}  // namespace dualkg

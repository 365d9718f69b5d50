#include "dualkg/model.hpp"

#include <algorithm>
#include <set>
#include <stdexcept>

namespace dualkg {

using ad::Var;

std::string to_string(EntityInit mode) {
  return mode == EntityInit::kLookup ? "lookup" : "relation-derived";
}

std::string to_string(DualMode mode) {
  switch (mode) {
    case DualMode::kAttention: return "attention";
    case DualMode::kCooccurrence: return "cooc";
    case DualMode::kOff: return "off";
  }
  return "attention";
}

EntityInit parse_entity_init(const std::string& text) {
  if (text == "relation-derived") return EntityInit::kRelationDerived;
  if (text == "lookup") return EntityInit::kLookup;
  throw std::invalid_argument("unknown entity-init mode '" + text + "' (expected relation-derived or lookup)");
}

DualMode parse_dual_mode(const std::string& text) {
  if (text == "attention") return DualMode::kAttention;
  if (text == "cooc") return DualMode::kCooccurrence;
  if (text == "off") return DualMode::kOff;
  throw std::invalid_argument("unknown dual mode '" + text + "' (expected attention, cooc or off)");
}

void ModelConfig::validate() const {
  if (hidden < 1) throw std::invalid_argument("ModelConfig: hidden size must be >= 1");
  if (steps < 1) throw std::invalid_argument("ModelConfig: reasoning steps must be >= 1");
  if (!(focal_gamma >= 0.0)) throw std::invalid_argument("ModelConfig: focal gamma must be >= 0");
}

namespace param {
std::string instruction_weight(std::size_t step) { return "instruction.step" + std::to_string(step) + ".W"; }
std::string instruction_bias(std::size_t step) { return "instruction.step" + std::to_string(step) + ".b"; }
}  // namespace param

namespace {

const std::string kGru = "encoder.gru.";
const std::string kPrimalMlp = "primal.mlp";
const std::string kEntityMlp = "entity_update.mlp";
const std::string kDecoderMlp = "decoder.mlp";

void add_linear(ParameterStore& p, const std::string& weight, const std::string& bias, std::size_t in,
                std::size_t out, Rng& rng) {
  p.add_uniform(weight, {in, out}, in, rng);
  if (!bias.empty()) p.add_zeros(bias, {out});
}

// Two-layer MLP in -> d -> out with ReLU in between.
void add_mlp(ParameterStore& p, const std::string& prefix, std::size_t in, std::size_t d, std::size_t out,
             bool output_bias, Rng& rng) {
  add_linear(p, prefix + ".W1", prefix + ".b1", in, d, rng);
  if (out == 1) {
    p.add_uniform(prefix + ".W2", {d}, d, rng);
  } else {
    add_linear(p, prefix + ".W2", output_bias ? prefix + ".b2" : "", d, out, rng);
  }
}

Var linear(ad::Tape& tape, const ParameterStore& params, const std::string& weight, const std::string& bias, Var x) {
  Var y = ad::matmul(x, tape.parameter(params, weight));
  return bias.empty() ? y : ad::add(y, tape.parameter(params, bias));
}

Var mlp(ad::Tape& tape, const ParameterStore& params, const std::string& prefix, Var x) {
  Var hidden = ad::relu(linear(tape, params, prefix + ".W1", prefix + ".b1", x));
  const std::string b2 = prefix + ".b2";
  return linear(tape, params, prefix + ".W2", params.contains(b2) ? b2 : "", hidden);
}

Var row_of(Var m, std::size_t r) {
  const std::size_t idx[] = {r};
  return ad::reshape(ad::row_select(m, idx), {m.shape()[1]});
}

Var as_row(Var v) { return ad::reshape(v, {1, v.shape()[0]}); }

}  // namespace

void init_parameters(ParameterStore& params, const ModelConfig& config, const ModelSizes& sizes, std::uint64_t seed) {
  config.validate();
  if (sizes.tokens == 0 || sizes.relations == 0) {
    throw std::invalid_argument("init_parameters: token and relation vocabularies must be nonempty");
  }
  const std::size_t d = config.hidden;
  Rng rng(seed);

  // Lookup tables see one-hot inputs, so their fan-in is 1.
  params.add_uniform(param::kTokenEmbedding, {sizes.tokens, d}, 1, rng);
  for (const char* gate : {"z", "r", "n"}) {
    params.add_uniform(kGru + "W_" + gate, {d, d}, d, rng);
    params.add_uniform(kGru + "U_" + gate, {d, d}, d, rng);
    params.add_zeros(kGru + "b_" + gate, {d});
  }

  params.add_uniform(param::kWordAttention, {d}, d, rng);
  for (std::size_t k = 1; k <= config.steps; ++k) {
    add_linear(params, param::instruction_weight(k), param::instruction_bias(k), 2 * d, d, rng);
  }

  params.add_uniform(param::kRelationEmbedding, {2 * sizes.relations, d}, 1, rng);
  if (config.entity_init == EntityInit::kLookup) {
    params.add_uniform(param::kEntityEmbedding, {std::max<std::size_t>(sizes.entities, 1), d}, 1, rng);
  } else {
    params.add_uniform(param::kEntityInit, {d, d}, d, rng);
  }

  params.add_uniform(param::kMatch, {d, d}, d, rng);
  add_mlp(params, kPrimalMlp, 2 * d, d, d, true, rng);

  if (config.dual_mode == DualMode::kAttention) params.add_uniform(param::kAttention, {d, d}, d, rng);
  if (config.dual_mode != DualMode::kOff) add_linear(params, param::kDualWeight, param::kDualBias, 2 * d, d, rng);

  if (config.interaction) add_linear(params, param::kInteractionWeight, param::kInteractionBias, 2 * d, d, rng);
  params.add_uniform(param::kHeadProjector, {d, d}, d, rng);
  params.add_uniform(param::kTailProjector, {d, d}, d, rng);
  add_mlp(params, kEntityMlp, 2 * d, d, d, true, rng);

  // Softmax is shift invariant, so the scalar logit has no output bias.
  add_mlp(params, kDecoderMlp, d, d, 1, false, rng);

  params.add_uniform(param::kAdaptWeight, {4 * d, d}, 4 * d, rng);
  params.add_uniform(param::kGateInput, {d, d}, d, rng);
  params.add_uniform(param::kGateState, {d, d}, d, rng);
  params.add_zeros(param::kGateBias, {d});
}

ReasoningGraph prepare_graph(SubGraph sg, const ModelConfig& config, std::size_t base_relation_count,
                             std::size_t entity_table_rows) {
  if (sg.inverse_augmented) throw std::invalid_argument("prepare_graph: subgraph is already augmented");
  if (sg.topics.empty()) throw DataError("prepare_graph: question has no topic entity in its subgraph");
  if (sg.facts.empty()) throw DataError("prepare_graph: question subgraph has no facts");
  sg.base_relation_count = base_relation_count;
  for (const Triple& t : sg.facts) {
    if (t.relation >= base_relation_count) {
      throw DataError("prepare_graph: relation id " + std::to_string(t.relation) + " outside vocabulary of " +
                      std::to_string(base_relation_count));
    }
  }
  if (config.inverse_facts) sg = add_inverse_facts(std::move(sg));

  ReasoningGraph g;
  g.dual = build_dual_graph(sg, config.dual_edge_rule);
  const std::size_t n = sg.entity_count();
  const std::size_t r = g.dual.size();

  std::vector<double> fact_count(r, 0.0);
  std::vector<std::set<std::size_t>> heads_of(n), tails_of(n);
  for (const Triple& t : sg.facts) {
    const std::size_t node = g.dual.node_of(t.relation);
    g.fact_head.push_back(t.head);
    g.fact_tail.push_back(t.tail);
    g.fact_node.push_back(node);
    fact_count[node] += 1.0;
    heads_of[t.head].insert(node);
    tails_of[t.tail].insert(node);
  }
  for (RelationId rel : g.dual.relations) g.relation_rows.push_back(rel);
  for (EntityId e : sg.entities) g.entity_rows.push_back(e < entity_table_rows ? e : 0);

  g.inverse_fact_count = Tensor(Shape{r});
  for (std::size_t i = 0; i < r; ++i) g.inverse_fact_count[i] = 1.0 / fact_count[i];

  g.head_mean = Tensor(Shape{n, r});
  g.tail_mean = Tensor(Shape{n, r});
  g.incident_mean = Tensor(Shape{n, r});
  for (std::size_t e = 0; e < n; ++e) {
    for (std::size_t node : heads_of[e]) g.head_mean.at(e, node) = 1.0 / static_cast<double>(heads_of[e].size());
    for (std::size_t node : tails_of[e]) g.tail_mean.at(e, node) = 1.0 / static_cast<double>(tails_of[e].size());
    std::set<std::size_t> incident = heads_of[e];
    incident.insert(tails_of[e].begin(), tails_of[e].end());
    for (std::size_t node : incident) g.incident_mean.at(e, node) = 1.0 / static_cast<double>(incident.size());
  }

  g.dual_mask = Tensor(Shape{r, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j : g.dual.neighbors[i]) g.dual_mask.at(i, j) = 1.0;
  g.cooccurrence = Tensor(Shape{r, r}, normalized_cooccurrence(g.dual));

  g.initial_distribution = Tensor(Shape{n});
  for (std::size_t t : sg.topics) g.initial_distribution[t] = 1.0 / static_cast<double>(sg.topics.size());

  g.subgraph = std::move(sg);
  return g;
}

QuestionEncoding encode_question(ad::Tape& tape, const ParameterStore& params, std::span<const std::uint32_t> tokens) {
  if (tokens.empty()) throw std::invalid_argument("encode_question: empty token sequence");
  Var table = tape.parameter(params, param::kTokenEmbedding);
  const std::size_t vocab = table.shape()[0];
  const std::size_t d = table.shape()[1];
  std::vector<std::size_t> rows;
  for (std::uint32_t t : tokens) rows.push_back(t < vocab ? t : 0);
  Var x = ad::row_select(table, rows);

  // Input projections for every token at once.
  Var xz = ad::matmul(x, tape.parameter(params, kGru + "W_z"));
  Var xr = ad::matmul(x, tape.parameter(params, kGru + "W_r"));
  Var xn = ad::matmul(x, tape.parameter(params, kGru + "W_n"));
  Var uz = tape.parameter(params, kGru + "U_z");
  Var ur = tape.parameter(params, kGru + "U_r");
  Var un = tape.parameter(params, kGru + "U_n");
  Var bz = tape.parameter(params, kGru + "b_z");
  Var br = tape.parameter(params, kGru + "b_r");
  Var bn = tape.parameter(params, kGru + "b_n");

  Var h = tape.constant(Tensor(Shape{d}));
  std::vector<Var> rows_out;
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    Var z = ad::sigmoid(row_of(xz, t) + ad::matmul(h, uz) + bz);
    Var r = ad::sigmoid(row_of(xr, t) + ad::matmul(h, ur) + br);
    Var cand = ad::tanh(row_of(xn, t) + ad::matmul(r * h, un) + bn);
    h = ad::add_scalar(ad::neg(z), 1.0) * cand + z * h;
    rows_out.push_back(as_row(h));
  }
  rows_out.insert(rows_out.begin(), as_row(h));
  return {ad::concat(rows_out, 0), h};
}

Instruction generate_instruction(ad::Tape& tape, const ParameterStore& params, std::size_t step, Var question,
                                 Var previous, Var states) {
  const std::size_t l = states.shape().at(0) - 1;
  std::vector<std::size_t> token_rows(l);
  for (std::size_t j = 0; j < l; ++j) token_rows[j] = j + 1;
  Var tokens = ad::row_select(states, token_rows);
  Var step_query = linear(tape, params, param::instruction_weight(step), param::instruction_bias(step),
                          ad::concat({question, previous}, 0));
  Var logits = ad::matmul(ad::mul(tokens, step_query), tape.parameter(params, param::kWordAttention));
  Var attention = ad::softmax(logits, 0);
  return {ad::matmul(attention, tokens), attention};
}

Var primal_reason_step(ad::Tape& tape, const ParameterStore& params, const ReasoningGraph& graph, Var entities,
                       Var relations, Var distribution, Var instruction) {
  Var projected = ad::matmul(relations, tape.parameter(params, param::kMatch));
  Var match = ad::sigmoid(ad::mul(ad::row_select(projected, graph.fact_node), instruction));
  Var weighted = ad::scale_rows(match, ad::row_select(distribution, graph.fact_tail));
  Var aggregated = ad::scatter_add(weighted, graph.fact_head, graph.entity_count());
  return mlp(tape, params, kPrimalMlp, ad::concat({entities, aggregated}, 1));
}

DualPropagation dual_propagate(ad::Tape& tape, const ParameterStore& params, const ReasoningGraph& graph,
                               Var relations, DualMode mode) {
  if (mode == DualMode::kOff) return {relations, Var()};
  Var weights;
  if (mode == DualMode::kAttention) {
    Var scores = ad::matmul(ad::matmul(relations, tape.parameter(params, param::kAttention)), ad::transpose(relations));
    weights = ad::masked_softmax(scores, graph.dual_mask);
  } else {
    weights = tape.constant(graph.cooccurrence);
  }
  Var neighborhood = ad::matmul(weights, relations);
  Var updated = ad::sigmoid(
      linear(tape, params, param::kDualWeight, param::kDualBias, ad::concat({neighborhood, relations}, 1)));
  return {updated, weights};
}

Var entity_aware_relation_update(ad::Tape& tape, const ParameterStore& params, const ReasoningGraph& graph,
                                 Var previous_entities, Var propagated_relations, bool enabled) {
  if (!enabled) return propagated_relations;
  Var differences =
      ad::row_select(previous_entities, graph.fact_tail) - ad::row_select(previous_entities, graph.fact_head);
  Var pooled = ad::scale_rows(ad::scatter_add(differences, graph.fact_node, graph.relation_count()),
                              tape.constant(graph.inverse_fact_count));
  return ad::sigmoid(linear(tape, params, param::kInteractionWeight, param::kInteractionBias,
                            ad::concat({pooled, propagated_relations}, 1)));
}

Var relation_aware_entity_update(ad::Tape& tape, const ParameterStore& params, const ReasoningGraph& graph,
                                 Var relations, Var primal_entities) {
  Var as_head = ad::matmul(tape.constant(graph.head_mean),
                           ad::matmul(relations, tape.parameter(params, param::kHeadProjector)));
  Var as_tail = ad::matmul(tape.constant(graph.tail_mean),
                           ad::matmul(relations, tape.parameter(params, param::kTailProjector)));
  return ad::sigmoid(mlp(tape, params, kEntityMlp, ad::concat({as_head + as_tail, primal_entities}, 1)));
}

Var decode(ad::Tape& tape, const ParameterStore& params, Var entities) {
  return ad::softmax(mlp(tape, params, kDecoderMlp, entities), 0);
}

Var adapt_instruction(ad::Tape& tape, const ParameterStore& params, Var instruction, Var entities,
                      std::span<const std::size_t> topics) {
  if (topics.empty()) throw std::invalid_argument("adapt_instruction: no topic entities");
  Var topic_sum = ad::sum(ad::row_select(entities, topics), 0);
  Var features = ad::concat({instruction, topic_sum, instruction - topic_sum, instruction * topic_sum}, 0);
  Var candidate = ad::matmul(features, tape.parameter(params, param::kAdaptWeight));
  Var gate = ad::sigmoid(ad::matmul(candidate, tape.parameter(params, param::kGateInput)) +
                         ad::matmul(instruction, tape.parameter(params, param::kGateState)) +
                         tape.parameter(params, param::kGateBias));
  return ad::add_scalar(ad::neg(gate), 1.0) * instruction + gate * candidate;
}

ForwardPass forward(ad::Tape& tape, const ParameterStore& params, const ModelConfig& config,
                    const ReasoningGraph& graph, std::span<const std::uint32_t> tokens) {
  config.validate();
  ForwardPass out;
  ModelState& state = out.state;

  QuestionEncoding question = encode_question(tape, params, tokens);

  Var relations = ad::row_select(tape.parameter(params, param::kRelationEmbedding), graph.relation_rows);
  Var entities;
  if (config.entity_init == EntityInit::kLookup) {
    entities = ad::row_select(tape.parameter(params, param::kEntityEmbedding), graph.entity_rows);
  } else {
    entities = ad::matmul(tape.constant(graph.incident_mean),
                          ad::matmul(relations, tape.parameter(params, param::kEntityInit)));
  }
  Var distribution = tape.constant(graph.initial_distribution);
  Var instruction = question.summary;

  state.entities.push_back(entities.value());
  state.relations.push_back(relations.value());
  state.distributions.push_back(distribution.value());

  for (std::size_t k = 1; k <= config.steps; ++k) {
    Instruction step = generate_instruction(tape, params, k, question.summary, instruction, question.states);
    Var primal = primal_reason_step(tape, params, graph, entities, relations, distribution, step.vector);
    DualPropagation dual = dual_propagate(tape, params, graph, relations, config.dual_mode);
    Var next_relations =
        entity_aware_relation_update(tape, params, graph, entities, dual.relations, config.interaction);
    Var next_entities = relation_aware_entity_update(tape, params, graph, next_relations, primal);
    distribution = decode(tape, params, next_entities);
    instruction = adapt_instruction(tape, params, step.vector, next_entities, graph.subgraph.topics);
    entities = next_entities;
    relations = next_relations;

    state.entities.push_back(entities.value());
    state.relations.push_back(relations.value());
    state.instructions.push_back(instruction.value());
    state.distributions.push_back(distribution.value());
    state.word_attention.push_back(step.attention.value());
    state.dual_attention.push_back(dual.attention.valid() ? dual.attention.value() : Tensor());
  }
  out.final_distribution = distribution;
  return out;
}

Var focal_loss(Var distribution, std::span<const std::size_t> answers, double gamma) {
  if (answers.empty()) throw std::invalid_argument("focal_loss: empty answer set");
  const std::size_t n = distribution.shape().at(0);
  for (std::size_t a : answers) {
    if (a >= n) throw std::out_of_range("focal_loss: answer index " + std::to_string(a) + " outside distribution");
  }
  Var picked = ad::row_select(distribution, answers);
  Var weight = ad::pow_scalar(ad::add_scalar(ad::neg(picked), 1.0), gamma);
  Var log_p = ad::log(ad::add_scalar(picked, kFocalEpsilon));
  return ad::mul_scalar(ad::sum_all(weight * log_p), -1.0 / static_cast<double>(answers.size()));
}

}  // namespace dualkg

#include "dualkg/training.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>

#include <json.hpp>

namespace dualkg {

using nlohmann::json;

ModelSizes model_sizes(const Vocabularies& vocab) {
  return {vocab.tokens.size(), vocab.relations.size(), vocab.entities.size()};
}

PreparedExample prepare_example(const QAExample& example, const ModelConfig& config, const ModelSizes& sizes) {
  PreparedExample p;
  p.id = example.id;
  p.tokens = example.tokens;
  p.answers = example.answers;
  p.graph = prepare_graph(example.subgraph, config, sizes.relations, sizes.entities);
  return p;
}

std::vector<PreparedExample> prepare_examples(const std::vector<QAExample>& examples, const ModelConfig& config,
                                              const ModelSizes& sizes) {
  std::vector<PreparedExample> out;
  out.reserve(examples.size());
  for (const QAExample& ex : examples) {
    try {
      out.push_back(prepare_example(ex, config, sizes));
    } catch (const DataError& e) {
      throw DataError("question '" + ex.id + "': " + e.what());
    }
  }
  return out;
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch size must be >= 1");
  if (!(learning_rate >= 0.0)) throw std::invalid_argument("TrainConfig: learning rate must be >= 0");
  if (eval_every < 1) throw std::invalid_argument("TrainConfig: eval-every must be >= 1");
  if (!(tau > 0.0 && tau <= 1.0)) throw std::invalid_argument("TrainConfig: tau must be in (0, 1]");
}

std::string TrainingReport::to_jsonl() const {
  std::ostringstream out;
  for (const EpochRecord& e : epochs) {
    json j = {{"epoch", e.epoch}, {"loss", e.loss}};
    if (e.evaluated) {
      j["dev_hits@1"] = e.dev_hits;
      j["dev_f1"] = e.dev_f1;
    }
    out << j.dump() << '\n';
  }
  return out.str();
}

double example_loss(const PreparedExample& example, const ParameterStore& params, const ModelConfig& config,
                    ad::GradientMap* grads) {
  if (example.answers.empty()) throw DataError("question '" + example.id + "' has no answer inside its subgraph");
  ad::Tape tape(ad::Tape::Options{.track_gradients = grads != nullptr});
  ForwardPass pass = forward(tape, params, config, example.graph, example.tokens);
  ad::Var loss = focal_loss(pass.final_distribution, example.answers, config.focal_gamma);
  if (grads) {
    tape.backward(loss);
    tape.add_parameter_gradients(params, *grads);
  }
  return loss.value().item();
}

TrainingReport train(const std::vector<PreparedExample>& train_set, const std::vector<PreparedExample>& dev_set,
                     const TrainConfig& config, const ModelConfig& model, ParameterStore& params) {
  config.validate();
  model.validate();
  if (train_set.empty()) throw DataError("train: empty training set");
  std::vector<const PreparedExample*> usable;
  for (const auto& ex : train_set)
    if (!ex.answers.empty()) usable.push_back(&ex);
  if (usable.empty()) throw DataError("train: no training question has an answer inside its subgraph");

  Rng rng(config.seed);
  AdamConfig adam;
  adam.learning_rate = config.learning_rate;
  TrainingReport report;
  ParameterStore best = params;
  bool have_best = false;
  std::size_t since_improvement = 0;

  std::vector<std::size_t> order(usable.size());
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(std::span<std::size_t>(order));
    double loss_total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      ad::GradientMap grads;
      for (std::size_t i = start; i < end; ++i) loss_total += example_loss(*usable[order[i]], params, model, &grads);
      const double scale = 1.0 / static_cast<double>(end - start);
      for (auto& [name, g] : grads)
        for (double& v : g.data()) v *= scale;
      adam_step(params, grads, adam);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.loss = loss_total / static_cast<double>(order.size());
    if (!std::isfinite(rec.loss)) throw NumericError("train: loss became non-finite at epoch " + std::to_string(epoch));
    const bool eval_now = !dev_set.empty() && (epoch % config.eval_every == 0 || epoch == config.epochs);
    if (eval_now) {
      const EvalSummary dev = evaluate(dev_set, params, model, config.tau).summary;
      rec.evaluated = true;
      rec.dev_hits = dev.hits_at_1;
      rec.dev_f1 = dev.f1;
      const bool improved = !have_best || dev.hits_at_1 > report.best_dev_hits ||
                            (dev.hits_at_1 == report.best_dev_hits && dev.f1 > report.best_dev_f1);
      if (improved) {
        have_best = true;
        best = params;
        report.best_epoch = epoch;
        report.best_dev_hits = dev.hits_at_1;
        report.best_dev_f1 = dev.f1;
        since_improvement = 0;
        if (config.checkpoint) save_checkpoint(*config.checkpoint, params, config.checkpoint_metadata);
      } else {
        ++since_improvement;
      }
    }
    report.epochs.push_back(rec);
    if (config.on_epoch) config.on_epoch(rec);
    if (eval_now && config.patience > 0 && since_improvement >= config.patience) {
      report.stopped_early = true;
      break;
    }
  }

  if (have_best) {
    params = std::move(best);
  } else {
    report.best_epoch = report.epochs.empty() ? 0 : report.epochs.back().epoch;
    if (config.checkpoint) save_checkpoint(*config.checkpoint, params, config.checkpoint_metadata);
  }
  return report;
}

ModelState infer(const PreparedExample& example, const ParameterStore& params, const ModelConfig& config) {
  ad::Tape tape(ad::Tape::Options{.track_gradients = false});
  return forward(tape, params, config, example.graph, example.tokens).state;
}

double transe_score(const ModelState& state, const ReasoningGraph& graph) {
  return transe_score(state.entities.back(), state.relations.back(), graph.fact_head, graph.fact_tail,
                      graph.fact_node);
}

QuestionResult evaluate_example(const PreparedExample& example, const ParameterStore& params,
                                const ModelConfig& config, double tau) {
  const ModelState state = infer(example, params, config);
  const Tensor& p = state.final_distribution();
  QuestionResult r;
  r.id = example.id;
  r.relation_count = example.graph.relation_count();
  r.fact_count = example.graph.subgraph.original_fact_count();
  r.entity_count = example.graph.entity_count();
  if (config.inverse_facts) r.relation_count = (r.relation_count + 1) / 2;
  if (!example.answers.empty()) {
    r.hits = hits_at_1(p.data(), example.answers);
    r.f1 = f1_score(select_answers(p.data(), tau), example.answers);
  }
  r.transe = transe_score(state, example.graph);
  return r;
}

Evaluation evaluate(const std::vector<PreparedExample>& examples, const ParameterStore& params,
                    const ModelConfig& config, double tau) {
  Evaluation e;
  e.results.reserve(examples.size());
  for (const auto& ex : examples) e.results.push_back(evaluate_example(ex, params, config, tau));
  e.summary = summarize(e.results);
  return e;
}

// ---------------------------------------------------------------------------

std::vector<Variant> ablation_variants(const ModelConfig& full) {
  std::vector<Variant> out;
  out.push_back({"full", full});
  ModelConfig no_dual = full;
  no_dual.dual_mode = DualMode::kOff;
  out.push_back({"-dual", no_dual});
  ModelConfig no_interaction = full;
  no_interaction.interaction = false;
  out.push_back({"-interaction", no_interaction});
  ModelConfig cooc = full;
  cooc.dual_mode = DualMode::kCooccurrence;
  out.push_back({"-attention", cooc});
  return out;
}

std::vector<Variant> step_variants(const ModelConfig& base, std::span<const std::size_t> steps) {
  std::vector<Variant> out;
  for (std::size_t n : steps) {
    ModelConfig c = base;
    c.steps = n;
    out.push_back({"steps=" + std::to_string(n), c});
  }
  return out;
}

std::vector<VariantOutcome> run_variants(const EncodedSplits& data, const std::vector<Variant>& variants,
                                         const TrainConfig& train_config, std::span<const std::uint64_t> seeds) {
  if (seeds.empty()) throw std::invalid_argument("run_variants: no seeds");
  const ModelSizes sizes = model_sizes(data.vocab);
  const auto& eval_split = data.test.empty() ? data.dev : data.test;
  std::vector<VariantOutcome> out;
  for (const Variant& v : variants) {
    v.config.validate();
    const auto train_set = prepare_examples(data.train, v.config, sizes);
    const auto dev_set = prepare_examples(data.dev, v.config, sizes);
    const auto eval_set = prepare_examples(eval_split, v.config, sizes);
    VariantOutcome o;
    o.name = v.name;
    for (std::uint64_t seed : seeds) {
      ParameterStore params;
      init_parameters(params, v.config, sizes, seed);
      TrainConfig tc = train_config;
      tc.seed = seed;
      tc.checkpoint.reset();
      train(train_set, dev_set, tc, v.config, params);
      o.per_seed.push_back(evaluate(eval_set, params, v.config, tc.tau).summary);
    }
    o.mean.questions = o.per_seed.front().questions;
    for (const EvalSummary& s : o.per_seed) {
      o.mean.hits_at_1 += s.hits_at_1;
      o.mean.f1 += s.f1;
      o.mean.transe += s.transe;
    }
    const double n = static_cast<double>(o.per_seed.size());
    o.mean.hits_at_1 /= n;
    o.mean.f1 /= n;
    o.mean.transe /= n;
    out.push_back(std::move(o));
  }
  return out;
}

std::string format_variant_table(const std::vector<VariantOutcome>& outcomes) {
  std::ostringstream out;
  out << std::left << std::setw(16) << "variant" << std::right << std::setw(8) << "seeds" << std::setw(10) << "Hits@1"
      << std::setw(10) << "F1" << std::setw(10) << "TransE" << '\n';
  out << std::fixed << std::setprecision(4);
  for (const VariantOutcome& o : outcomes) {
    out << std::left << std::setw(16) << o.name << std::right << std::setw(8) << o.per_seed.size() << std::setw(10)
        << o.mean.hits_at_1 << std::setw(10) << o.mean.f1 << std::setw(10) << o.mean.transe << '\n';
  }
  return out.str();
}

// ---------------------------------------------------------------------------

std::string checkpoint_metadata(const ModelConfig& c, const Vocabularies& vocab) {
  json j = {
      {"model",
       {{"hidden", c.hidden},
        {"steps", c.steps},
        {"focal_gamma", c.focal_gamma},
        {"entity_init", to_string(c.entity_init)},
        {"dual_mode", to_string(c.dual_mode)},
        {"interaction", c.interaction},
        {"dual_edge_rule", c.dual_edge_rule == DualEdgeRule::kRoleMatched ? "role-matched" : "any-shared"},
        {"inverse_facts", c.inverse_facts}}},
      {"vocab",
       {{"tokens", vocab.tokens.names()},
        {"entities", vocab.entities.names()},
        {"relations", vocab.relations.names()}}},
  };
  return j.dump();
}

void parse_checkpoint_metadata(const std::string& text, ModelConfig& c, Vocabularies& vocab) {
  json j;
  try {
    j = json::parse(text);
    const json& m = j.at("model");
    c.hidden = m.at("hidden").get<std::size_t>();
    c.steps = m.at("steps").get<std::size_t>();
    c.focal_gamma = m.at("focal_gamma").get<double>();
    c.entity_init = parse_entity_init(m.at("entity_init").get<std::string>());
    c.dual_mode = parse_dual_mode(m.at("dual_mode").get<std::string>());
    c.interaction = m.at("interaction").get<bool>();
    c.dual_edge_rule =
        m.at("dual_edge_rule").get<std::string>() == "role-matched" ? DualEdgeRule::kRoleMatched
                                                                     : DualEdgeRule::kAnySharedEntity;
    c.inverse_facts = m.at("inverse_facts").get<bool>();
    Vocabularies v;
    v.tokens = Vocabulary();
    v.relations = Vocabulary();
    for (const auto& name : j.at("vocab").at("tokens")) v.tokens.add(name.get<std::string>());
    for (const auto& name : j.at("vocab").at("entities")) v.entities.add(name.get<std::string>());
    for (const auto& name : j.at("vocab").at("relations")) v.relations.add(name.get<std::string>());
    v.frozen = true;
    vocab = std::move(v);
  } catch (const json::exception& e) {
    throw DataError(std::string("checkpoint metadata: ") + e.what());
  }
}

// ---------------------------------------------------------------------------

GradientCheckReport gradient_check(ParameterStore& params, const LossBuilder& loss,
                                   const GradientCheckOptions& options) {
  GradientCheckReport report;
  report.tolerance = options.tolerance;
  if (params.size() == 0) return report;

  ad::GradientMap analytic;
  {
    ad::Tape tape;
    ad::Var l = loss(tape, params);
    tape.backward(l);
    analytic = tape.parameter_gradients(params);
  }
  if (options.tamper) options.tamper(analytic);

  auto evaluate_loss = [&] {
    ad::Tape tape(ad::Tape::Options{.track_gradients = false});
    return loss(tape, params).value().item();
  };
  const double denominator_floor = options.absolute_floor / options.tolerance;

  for (const std::string& name : params.names()) {
    GradientCheckEntry entry;
    entry.name = name;
    Tensor& value = params.get(name);
    const Tensor& grad = analytic.at(name);
    entry.elements = value.numel();
    for (std::size_t i = 0; i < value.numel(); ++i) {
      const double saved = value[i];
      value[i] = saved + options.step;
      const double up = evaluate_loss();
      value[i] = saved - options.step;
      const double down = evaluate_loss();
      value[i] = saved;
      const double numeric = (up - down) / (2.0 * options.step);
      const double error = std::abs(grad[i] - numeric);
      const double scale = std::max({std::abs(grad[i]), std::abs(numeric), denominator_floor});
      entry.max_absolute_error = std::max(entry.max_absolute_error, error);
      entry.max_relative_error = std::max(entry.max_relative_error, error / scale);
    }
    entry.passed = entry.max_relative_error <= options.tolerance;
    report.passed = report.passed && entry.passed;
    report.entries.push_back(std::move(entry));
  }
  return report;
}

LossBuilder example_loss_builder(const PreparedExample& example, const ModelConfig& config) {
  return [&example, &config](ad::Tape& tape, const ParameterStore& params) {
    ForwardPass pass = forward(tape, params, config, example.graph, example.tokens);
    return focal_loss(pass.final_distribution, example.answers, config.focal_gamma);
  };
}

TinyInstance make_tiny_instance(std::uint64_t seed, std::optional<ModelConfig> config) {
  QARecord record;
  record.id = "tiny";
  record.question_tokens = {"which", "r1", "of", "the", "r0", "of", "a"};
  record.triples = {{"a", "r0", "b"}, {"b", "r1", "c"}, {"a", "r2", "d"}, {"d", "r1", "e"}, {"c", "r2", "e"}};
  record.topic_entities = {"a"};
  record.answers = {"c"};

  TinyInstance tiny;
  if (config) {
    tiny.config = *config;
  } else {
    tiny.config.hidden = 8;
    tiny.config.steps = 2;
  }
  Vocabularies vocab;
  QAExample ex = encode_record(record, vocab);
  const ModelSizes sizes = model_sizes(vocab);
  init_parameters(tiny.params, tiny.config, sizes, seed);
  // The regular initialization leaves most gradients near 1e-10, below what
  // central differences resolve. Redraw everything from U(-1, 1).
  Rng rng(seed ^ 0x9e3779b97f4a7c15ULL);
  for (const std::string& name : tiny.params.names())
    for (double& v : tiny.params.get(name).data()) v = rng.uniform(-1.0, 1.0);
  tiny.example = prepare_example(ex, tiny.config, sizes);
  return tiny;
}

}  // namespace dualkg

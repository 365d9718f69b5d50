#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dualkg/autodiff.hpp"
#include "dualkg/data.hpp"
#include "dualkg/metrics.hpp"
#include "dualkg/model.hpp"
#include "dualkg/parameters.hpp"

namespace dualkg {

/// A question ready for the network: reasoning graph, token ids and local
/// answer indices.
struct PreparedExample {
  std::string id;
  std::vector<std::uint32_t> tokens;
  ReasoningGraph graph;
  std::vector<std::size_t> answers;
};

ModelSizes model_sizes(const Vocabularies& vocab);
PreparedExample prepare_example(const QAExample& example, const ModelConfig& config, const ModelSizes& sizes);
std::vector<PreparedExample> prepare_examples(const std::vector<QAExample>& examples, const ModelConfig& config,
                                              const ModelSizes& sizes);

struct EpochRecord {
  std::size_t epoch = 0;
  double loss = 0.0;
  bool evaluated = false;
  double dev_hits = 0.0;
  double dev_f1 = 0.0;
};

struct TrainConfig {
  std::size_t batch_size = 8;
  double learning_rate = 7e-4;
  std::size_t epochs = 200;
  std::uint64_t seed = 1;
  /// Dev evaluation period in epochs.
  std::size_t eval_every = 1;
  /// Stop after this many dev evaluations without improvement; 0 disables.
  std::size_t patience = 10;
  /// Answer-selection ratio for dev F1.
  double tau = 0.5;
  /// When set, the best-dev parameters are written here on every improvement.
  std::optional<std::filesystem::path> checkpoint;
  std::string checkpoint_metadata;
  /// Called after every epoch (progress output).
  std::function<void(const EpochRecord&)> on_epoch;

  void validate() const;
};

struct TrainingReport {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double best_dev_hits = 0.0;
  double best_dev_f1 = 0.0;
  bool stopped_early = false;

  /// One JSON object per epoch.
  std::string to_jsonl() const;
};

/// Loss of one example and, when grads is non-null, its parameter gradients
/// added into *grads.
double example_loss(const PreparedExample& example, const ParameterStore& params, const ModelConfig& config,
                    ad::GradientMap* grads);

/// Mini-batch Adam over `train`. Batch members' gradients are accumulated in
/// order and averaged. With a nonempty dev set the parameters holding the best
/// dev Hits@1 (F1 breaks ties) are restored before returning.
TrainingReport train(const std::vector<PreparedExample>& train_set, const std::vector<PreparedExample>& dev_set,
                     const TrainConfig& config, const ModelConfig& model, ParameterStore& params);

struct Evaluation {
  std::vector<QuestionResult> results;
  EvalSummary summary;
};

/// Inference-only forward pass; returns the full state.
ModelState infer(const PreparedExample& example, const ParameterStore& params, const ModelConfig& config);
QuestionResult evaluate_example(const PreparedExample& example, const ParameterStore& params,
                                const ModelConfig& config, double tau);
Evaluation evaluate(const std::vector<PreparedExample>& examples, const ParameterStore& params,
                    const ModelConfig& config, double tau);

/// TransE-score of a forward state over the graph's facts.
double transe_score(const ModelState& state, const ReasoningGraph& graph);

// ---------------------------------------------------------------------------
// Variant comparisons (ablations, reasoning-step sweeps)

struct Variant {
  std::string name;
  ModelConfig config;
};

struct VariantOutcome {
  std::string name;
  std::vector<EvalSummary> per_seed;
  EvalSummary mean;
};

/// full, -dual propagation, -interaction, -attention (co-occurrence weights).
std::vector<Variant> ablation_variants(const ModelConfig& full);
/// One variant per reasoning depth, named "steps=<n>".
std::vector<Variant> step_variants(const ModelConfig& base, std::span<const std::size_t> steps);

/// Trains every variant once per seed (the seed drives initialization and
/// shuffling) and evaluates on test, or on dev when test is empty.
std::vector<VariantOutcome> run_variants(const EncodedSplits& data, const std::vector<Variant>& variants,
                                         const TrainConfig& train_config, std::span<const std::uint64_t> seeds);

std::string format_variant_table(const std::vector<VariantOutcome>& outcomes);

// ---------------------------------------------------------------------------
// Checkpoint metadata

std::string checkpoint_metadata(const ModelConfig& config, const Vocabularies& vocab);
void parse_checkpoint_metadata(const std::string& text, ModelConfig& config, Vocabularies& vocab);

// ---------------------------------------------------------------------------
// Gradient verification

struct GradientCheckEntry {
  std::string name;
  std::size_t elements = 0;
  /// max over elements of |a - n| / max(|a|, |n|, abs_floor / tolerance)
  double max_relative_error = 0.0;
  double max_absolute_error = 0.0;
  bool passed = true;
};

struct GradientCheckReport {
  std::vector<GradientCheckEntry> entries;
  double tolerance = 0.0;
  bool passed = true;
};

struct GradientCheckOptions {
  double tolerance = 1e-3;
  double absolute_floor = 1e-8;
  double step = 1e-5;
  /// Test hook applied to the analytic gradients before comparison.
  std::function<void(ad::GradientMap&)> tamper;
};

using LossBuilder = std::function<ad::Var(ad::Tape&, const ParameterStore&)>;

/// focal_loss of forward on one example. Keeps references to its arguments.
LossBuilder example_loss_builder(const PreparedExample& example, const ModelConfig& config);

/// Compares reverse-mode gradients of `loss` with central differences for
/// every element of every parameter. `params` is perturbed and restored.
GradientCheckReport gradient_check(ParameterStore& params, const LossBuilder& loss,
                                   const GradientCheckOptions& options = {});

struct TinyInstance {
  ModelConfig config;
  ParameterStore params;
  PreparedExample example;
};

/// Fixed 5-entity, 3-relation question with d = 8 and two reasoning steps.
/// Parameters are drawn from U(-1, 1) rather than the training initializer.
TinyInstance make_tiny_instance(std::uint64_t seed = 7, std::optional<ModelConfig> config = std::nullopt);

}  // namespace dualkg

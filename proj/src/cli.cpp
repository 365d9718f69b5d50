#include "dualkg/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "dualkg/training.hpp"

namespace dualkg {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct ModelFlags {
  std::size_t steps = 3;
  std::size_t hidden = 128;
  double gamma = 2.0;
  std::string dual_mode = "attention";
  std::string interaction = "on";
  std::string entity_init = "relation-derived";

  ModelConfig config() const {
    ModelConfig c;
    c.steps = steps;
    c.hidden = hidden;
    c.focal_gamma = gamma;
    c.dual_mode = parse_dual_mode(dual_mode);
    c.interaction = interaction == "on";
    c.entity_init = parse_entity_init(entity_init);
    c.validate();
    return c;
  }
};

void add_model_flags(CLI::App* cmd, ModelFlags& f) {
  cmd->add_option("--steps", f.steps, "Reasoning steps")->capture_default_str()->check(CLI::PositiveNumber);
  cmd->add_option("--hidden", f.hidden, "Hidden size d")->capture_default_str()->check(CLI::PositiveNumber);
  cmd->add_option("--gamma", f.gamma, "Focal loss gamma")->capture_default_str()->check(CLI::NonNegativeNumber);
  cmd->add_option("--dual-mode", f.dual_mode, "Dual propagation")
      ->capture_default_str()
      ->check(CLI::IsMember({"attention", "cooc", "off"}));
  cmd->add_option("--interaction", f.interaction, "Entity-aware relation update")
      ->capture_default_str()
      ->check(CLI::IsMember({"on", "off"}));
  cmd->add_option("--entity-init", f.entity_init, "Initial entity embeddings")
      ->capture_default_str()
      ->check(CLI::IsMember({"relation-derived", "lookup"}));
}

struct TrainFlags {
  double lr = 7e-4;
  std::size_t batch = 8;
  double tau = 0.5;
  std::size_t epochs = 200;
  std::size_t patience = 10;
  std::size_t eval_every = 1;

  TrainConfig config(std::uint64_t seed) const {
    TrainConfig t;
    t.learning_rate = lr;
    t.batch_size = batch;
    t.tau = tau;
    t.epochs = epochs;
    t.patience = patience;
    t.eval_every = eval_every;
    t.seed = seed;
    t.validate();
    return t;
  }
};

void add_train_flags(CLI::App* cmd, TrainFlags& f) {
  cmd->add_option("--lr", f.lr, "Adam learning rate")->capture_default_str();
  cmd->add_option("--batch", f.batch, "Batch size")->capture_default_str()->check(CLI::PositiveNumber);
  cmd->add_option("--tau", f.tau, "Answer selection ratio")->capture_default_str();
  cmd->add_option("--epochs", f.epochs, "Maximum epochs")->capture_default_str();
  cmd->add_option("--patience", f.patience, "Dev evaluations without improvement before stopping (0: never)")
      ->capture_default_str();
  cmd->add_option("--eval-every", f.eval_every, "Dev evaluation period in epochs")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
}

json summary_json(const EvalSummary& s) {
  return {{"questions", s.questions}, {"hits@1", s.hits_at_1}, {"f1", s.f1}, {"transe", s.transe}};
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError(path.string() + ": cannot open for writing");
  out << text;
  if (!out) throw DataError(path.string() + ": write failed");
}

const std::vector<QARecord>& pick_split(const Splits& s, const std::string& name) {
  const std::vector<QARecord>& records = name == "train" ? s.train : name == "dev" ? s.dev : s.test;
  if (records.empty()) throw DataError("split '" + name + "' is missing or empty");
  return records;
}

struct LoadedModel {
  ModelConfig config;
  Vocabularies vocab;
  ParameterStore params;
};

LoadedModel load_model(const fs::path& path) {
  if (!fs::exists(path)) throw DataError(path.string() + ": not found");
  Checkpoint ck = load_checkpoint(path);
  LoadedModel m;
  parse_checkpoint_metadata(ck.metadata, m.config, m.vocab);
  m.params = std::move(ck.params);
  return m;
}

std::vector<std::size_t> parse_size_list(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    std::size_t used = 0;
    const unsigned long long v = std::stoull(item, &used);
    if (used != item.size()) throw std::invalid_argument("bad list element '" + item + "'");
    out.push_back(static_cast<std::size_t>(v));
  }
  if (out.empty()) throw std::invalid_argument("empty list");
  return out;
}

// Name of a dual node's relation; inverse relations get a "^-1" suffix.
std::string relation_label(const Vocabularies& vocab, RelationId r) {
  const std::size_t base = vocab.relations.size();
  if (r < base) return vocab.relations.name(r);
  return vocab.relations.name(r - static_cast<RelationId>(base)) + "^-1";
}

// ---------------------------------------------------------------------------

int cmd_gen_data(const fs::path& dir, const SynthConfig& cfg, std::ostream& out) {
  const Splits splits = generate(cfg);
  write_dataset(dir, splits, cfg);
  const EncodedSplits enc = encode_splits(splits);
  const DatasetStats stats = dataset_stats(enc.train);
  out << "wrote " << splits.train.size() << " train, " << splits.dev.size() << " dev, " << splits.test.size()
      << " test questions to " << dir.string() << '\n';
  out << std::fixed << std::setprecision(2) << "train means: entities " << stats.mean_entities << ", facts "
      << stats.mean_facts << ", relations " << stats.mean_relations << ", answers " << stats.mean_answers << '\n';
  return kExitOk;
}

int cmd_train(const fs::path& data_dir, const fs::path& out_dir, const ModelConfig& mcfg, TrainConfig tcfg,
              bool quiet, std::ostream& out) {
  const EncodedSplits data = encode_splits(load_splits(data_dir));
  const ModelSizes sizes = model_sizes(data.vocab);
  const auto train_set = prepare_examples(data.train, mcfg, sizes);
  const auto dev_set = prepare_examples(data.dev, mcfg, sizes);

  ParameterStore params;
  init_parameters(params, mcfg, sizes, tcfg.seed);
  fs::create_directories(out_dir);
  tcfg.checkpoint = out_dir / "model.ckpt";
  tcfg.checkpoint_metadata = checkpoint_metadata(mcfg, data.vocab);
  if (!quiet) {
    tcfg.on_epoch = [&out](const EpochRecord& e) {
      out << "epoch " << e.epoch << " loss " << std::setprecision(6) << e.loss;
      if (e.evaluated) out << " dev_hits@1 " << std::setprecision(4) << e.dev_hits << " dev_f1 " << e.dev_f1;
      out << std::endl;
    };
  }
  const TrainingReport report = train(train_set, dev_set, tcfg, mcfg, params);
  write_text(out_dir / "report.jsonl", report.to_jsonl());
  json summary = {{"best_epoch", report.best_epoch},
                  {"best_dev_hits@1", report.best_dev_hits},
                  {"best_dev_f1", report.best_dev_f1},
                  {"epochs_run", report.epochs.size()},
                  {"stopped_early", report.stopped_early},
                  {"parameters", params.element_count()}};
  write_text(out_dir / "summary.json", summary.dump(2) + "\n");
  out << "best epoch " << report.best_epoch << " dev_hits@1 " << std::fixed << std::setprecision(4)
      << report.best_dev_hits << " dev_f1 " << report.best_dev_f1 << '\n';
  out << "checkpoint " << (out_dir / "model.ckpt").string() << '\n';
  return kExitOk;
}

int cmd_eval(const fs::path& data_dir, const fs::path& ckpt, const std::string& split, double tau,
             const std::string& json_path, std::ostream& out) {
  LoadedModel m = load_model(ckpt);
  const Splits splits = load_splits(data_dir);
  const auto examples = encode_records(pick_split(splits, split), m.vocab);
  const auto prepared = prepare_examples(examples, m.config, model_sizes(m.vocab));
  const Evaluation ev = evaluate(prepared, m.params, m.config, tau);

  out << "split " << split << " (" << ev.summary.questions << " questions)\n";
  out << std::fixed << std::setprecision(4) << "Hits@1 " << ev.summary.hits_at_1 << "\nF1     " << ev.summary.f1
      << "\nTransE " << ev.summary.transe << "\n";
  json groups = json::object();
  if (ev.results.size() >= 4) {
    for (GroupKey key : {GroupKey::kRelationCount, GroupKey::kFactCount, GroupKey::kRelationEntityRatio,
                         GroupKey::kFactEntityRatio}) {
      const auto report = quantile_report(ev.results, key);
      out << '\n' << format_quantile_table(report, key);
      json rows = json::array();
      for (const QuantileGroup& g : report) {
        rows.push_back({{"size", g.size}, {"key_min", g.key_min}, {"key_max", g.key_max}, {"f1", g.mean_f1},
                        {"transe", g.mean_transe}});
      }
      groups[to_string(key)] = rows;
    }
  } else {
    out << "\n(quantile tables need at least 4 questions)\n";
  }
  if (!json_path.empty()) {
    json j = summary_json(ev.summary);
    j["split"] = split;
    j["groups"] = groups;
    write_text(json_path, j.dump(2) + "\n");
  }
  return kExitOk;
}

int cmd_ablate(const fs::path& data_dir, const ModelConfig& mcfg, const TrainConfig& tcfg,
               const std::vector<std::uint64_t>& seeds, const std::string& steps_sweep, const std::string& json_path,
               std::ostream& out) {
  const EncodedSplits data = encode_splits(load_splits(data_dir));
  std::vector<Variant> variants;
  if (steps_sweep.empty()) {
    variants = ablation_variants(mcfg);
  } else {
    const auto steps = parse_size_list(steps_sweep);
    variants = step_variants(mcfg, steps);
  }
  const auto outcomes = run_variants(data, variants, tcfg, seeds);
  out << (data.test.empty() ? "dev" : "test") << " split, mean over " << seeds.size() << " seed(s)\n";
  out << format_variant_table(outcomes);
  if (!json_path.empty()) {
    json rows = json::array();
    for (const VariantOutcome& o : outcomes) {
      json per_seed = json::array();
      for (const EvalSummary& s : o.per_seed) per_seed.push_back(summary_json(s));
      rows.push_back({{"variant", o.name}, {"mean", summary_json(o.mean)}, {"per_seed", per_seed}});
    }
    write_text(json_path, json{{"seeds", seeds}, {"variants", rows}}.dump(2) + "\n");
  }
  return kExitOk;
}

int cmd_gradcheck(std::uint64_t seed, const ModelConfig& mcfg, const GradientCheckOptions& opts, std::ostream& out) {
  TinyInstance tiny = make_tiny_instance(seed, mcfg);
  const GradientCheckReport report =
      gradient_check(tiny.params, example_loss_builder(tiny.example, tiny.config), opts);
  out << std::left << std::setw(28) << "parameter" << std::right << std::setw(10) << "elements" << std::setw(14)
      << "max rel err" << std::setw(14) << "max abs err" << std::setw(8) << "status" << '\n';
  out << std::scientific << std::setprecision(3);
  for (const GradientCheckEntry& e : report.entries) {
    out << std::left << std::setw(28) << e.name << std::right << std::setw(10) << e.elements << std::setw(14)
        << e.max_relative_error << std::setw(14) << e.max_absolute_error << std::setw(8) << (e.passed ? "ok" : "FAIL")
        << '\n';
  }
  out << (report.passed ? "gradcheck passed" : "gradcheck FAILED") << " (" << report.entries.size()
      << " parameters, tolerance " << report.tolerance << ")\n";
  return report.passed ? kExitOk : kExitVerification;
}

int cmd_dump_attention(const fs::path& data_dir, const fs::path& ckpt, const std::string& split, std::size_t limit,
                       const fs::path& out_path, std::ostream& out) {
  LoadedModel m = load_model(ckpt);
  const Splits splits = load_splits(data_dir);
  const auto& records = pick_split(splits, split);
  const auto examples = encode_records(records, m.vocab);
  const ModelSizes sizes = model_sizes(m.vocab);
  const std::size_t n = limit == 0 ? examples.size() : std::min(limit, examples.size());

  json questions = json::array();
  for (std::size_t q = 0; q < n; ++q) {
    const PreparedExample ex = prepare_example(examples[q], m.config, sizes);
    const ModelState state = infer(ex, m.params, m.config);
    std::vector<std::string> labels;
    for (RelationId r : ex.graph.dual.relations) labels.push_back(relation_label(m.vocab, r));
    json steps = json::array();
    for (std::size_t k = 0; k < state.word_attention.size(); ++k) {
      json words = json::array();
      const Tensor& w = state.word_attention[k];
      for (std::size_t t = 0; t < w.numel(); ++t) words.push_back({{"token", records[q].question_tokens[t]}, {"weight", w[t]}});
      json step = {{"step", k + 1}, {"word_attention", words}};
      if (k < state.dual_attention.size() && state.dual_attention[k].numel() > 0) {
        const Tensor& a = state.dual_attention[k];
        json dual = json::object();
        for (std::size_t i = 0; i < a.rows(); ++i) {
          json row = json::object();
          for (std::size_t j = 0; j < a.cols(); ++j)
            if (a.at(i, j) != 0.0) row[labels[j]] = a.at(i, j);
          dual[labels[i]] = row;
        }
        step["dual_attention"] = dual;
      }
      steps.push_back(step);
    }
    questions.push_back({{"id", examples[q].id}, {"question_tokens", records[q].question_tokens}, {"steps", steps}});
  }
  json doc = {{"split", split}, {"dual_mode", to_string(m.config.dual_mode)}, {"questions", questions}};
  write_text(out_path, doc.dump(2) + "\n");
  out << "wrote attention for " << n << " questions to " << out_path.string() << '\n';
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Dual relation graph reasoning for multi-hop KBQA", "dualkg"};
  app.require_subcommand(1);
  std::uint64_t seed = 1;
  ModelFlags model;
  TrainFlags trainf;
  std::string data_dir, out_dir, ckpt, split = "test", json_path, seeds_text = "1,2,3", steps_sweep;
  bool quiet = false;
  double tau = 0.5;
  std::size_t limit = 0;

  SynthConfig synth;
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic multi-hop dataset");
  gen->add_option("--out", out_dir, "Output directory")->required();
  gen->add_option("--seed", seed, "Random seed")->capture_default_str();
  gen->add_option("--entities", synth.entities, "Entities per world")->capture_default_str();
  gen->add_option("--relations", synth.relations, "Relation types")->capture_default_str();
  gen->add_option("--facts", synth.facts, "Facts per world")->capture_default_str();
  gen->add_option("--hops", synth.hops, "Question hops (1-3)")->capture_default_str();
  gen->add_option("--constraint-prob", synth.constraint_probability, "Probability of a second topic constraint")
      ->capture_default_str();
  gen->add_option("--templates", synth.templates, "Question phrasings (1-4)")->capture_default_str();
  gen->add_option("--train", synth.train, "Train questions")->capture_default_str();
  gen->add_option("--dev", synth.dev, "Dev questions")->capture_default_str();
  gen->add_option("--test", synth.test, "Test questions")->capture_default_str();
  gen->add_flag("--stress", synth.corelation_stress, "Co-relation stress mode (inverse relation pairs)");

  auto* tr = app.add_subcommand("train", "Train a model");
  tr->add_option("--data", data_dir, "Dataset directory")->required();
  tr->add_option("--out", out_dir, "Output directory for checkpoint and report")->required();
  tr->add_option("--seed", seed, "Random seed")->capture_default_str();
  tr->add_flag("--quiet", quiet, "No per-epoch output");
  add_model_flags(tr, model);
  add_train_flags(tr, trainf);

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
  ev->add_option("--data", data_dir, "Dataset directory")->required();
  ev->add_option("--checkpoint", ckpt, "Checkpoint file")->required();
  ev->add_option("--split", split, "Split to evaluate")->capture_default_str()->check(
      CLI::IsMember({"train", "dev", "test"}));
  ev->add_option("--tau", tau, "Answer selection ratio")->capture_default_str();
  ev->add_option("--json", json_path, "Also write metrics as JSON");
  ev->add_option("--seed", seed, "Random seed (evaluation is deterministic)");

  auto* ab = app.add_subcommand("ablate", "Compare the full model with its ablations or reasoning depths");
  ab->add_option("--data", data_dir, "Dataset directory")->required();
  ab->add_option("--seeds", seeds_text, "Comma-separated seeds")->capture_default_str();
  ab->add_option("--seed", seed, "Single seed (overrides --seeds)");
  ab->add_option("--steps-sweep", steps_sweep, "Comma-separated reasoning depths instead of ablations");
  ab->add_option("--json", json_path, "Also write the table as JSON");
  add_model_flags(ab, model);
  add_train_flags(ab, trainf);

  GradientCheckOptions gopts;
  ModelFlags tiny_model;
  tiny_model.steps = 2;
  tiny_model.hidden = 8;
  auto* gc = app.add_subcommand("gradcheck", "Compare reverse-mode gradients with finite differences");
  gc->add_option("--seed", seed, "Parameter initialization seed")->capture_default_str();
  gc->add_option("--tolerance", gopts.tolerance, "Relative error tolerance")->capture_default_str();
  gc->add_option("--floor", gopts.absolute_floor, "Absolute error floor")->capture_default_str();
  gc->add_option("--step", gopts.step, "Finite difference step")->capture_default_str();
  add_model_flags(gc, tiny_model);

  auto* da = app.add_subcommand("dump-attention", "Write per-step word and dual attention as JSON");
  da->add_option("--data", data_dir, "Dataset directory")->required();
  da->add_option("--checkpoint", ckpt, "Checkpoint file")->required();
  da->add_option("--out", out_dir, "Output JSON file")->required();
  da->add_option("--split", split, "Split")->capture_default_str()->check(CLI::IsMember({"train", "dev", "test"}));
  da->add_option("--limit", limit, "Number of questions (0: all)")->capture_default_str();
  da->add_option("--seed", seed, "Random seed (inference is deterministic)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*gen) {
      synth.seed = seed;
      return cmd_gen_data(out_dir, synth, out);
    }
    if (*tr) return cmd_train(data_dir, out_dir, model.config(), trainf.config(seed), quiet, out);
    if (*ev) return cmd_eval(data_dir, ckpt, split, tau, json_path, out);
    if (*ab) {
      std::vector<std::uint64_t> seeds;
      if (ab->count("--seed")) {
        seeds = {seed};
      } else {
        for (std::size_t s : parse_size_list(seeds_text)) seeds.push_back(s);
      }
      return cmd_ablate(data_dir, model.config(), trainf.config(seeds.front()), seeds, steps_sweep, json_path, out);
    }
    if (*gc) return cmd_gradcheck(seed, tiny_model.config(), gopts, out);
    if (*da) return cmd_dump_attention(data_dir, ckpt, split, limit, out_dir, out);
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::invalid_argument& e) {
    err << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitUsage;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<const char*> argv{"dualkg"};
  for (const std::string& a : args) argv.push_back(a.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace dualkg

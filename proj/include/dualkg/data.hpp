#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "dualkg/graph.hpp"
#include "dualkg/random.hpp"

namespace dualkg {

/// One JSON-lines question record, kept at the string level so that
/// load/save round-trips exactly.
struct QARecord {
  std::string id;  // optional; written only when nonempty
  std::vector<std::string> question_tokens;
  std::vector<std::array<std::string, 3>> triples;
  std::vector<std::string> topic_entities;
  std::vector<std::string> answers;

  friend bool operator==(const QARecord&, const QARecord&) = default;
};

/// Reads a JSON-lines file. Blank lines are skipped. Throws DataError with
/// "path:line:" context on malformed input and on an empty file.
std::vector<QARecord> load_records(const std::filesystem::path& path);
void save_records(const std::filesystem::path& path, const std::vector<QARecord>& records);
QARecord parse_record(const std::string& line);
std::string format_record(const QARecord& record);

/// Token, entity and relation vocabularies shared by every split. Index 0 of
/// the token and relation vocabularies is the reserved "<unk>" entry; once
/// frozen, unseen tokens and relations map to it. Entities are never frozen.
struct Vocabularies {
  static inline const std::string kUnknown = "<unk>";

  Vocabularies();

  Vocabulary tokens;
  Vocabulary entities;
  Vocabulary relations;
  bool frozen = false;

  std::uint32_t token_id(const std::string& name);
  std::uint32_t relation_id(const std::string& name);
  std::uint32_t entity_id(const std::string& name) { return entities.add(name); }

  friend bool operator==(const Vocabularies&, const Vocabularies&) = default;
};

/// A question in id space. The subgraph holds global entity ids in
/// `entities`; facts and topics use local indices. Local order: topics, then
/// triple entities in first-occurrence order, then answers not seen before.
struct QAExample {
  std::string id;
  std::vector<std::uint32_t> tokens;
  SubGraph subgraph;
  std::vector<std::size_t> answers;
};

QAExample encode_record(const QARecord& record, Vocabularies& vocab);
std::vector<QAExample> encode_records(const std::vector<QARecord>& records, Vocabularies& vocab);

struct DatasetStats {
  std::size_t questions = 0;
  double mean_entities = 0.0;
  double mean_facts = 0.0;
  double mean_relations = 0.0;
  double mean_answers = 0.0;
};

DatasetStats dataset_stats(const std::vector<QAExample>& examples);

struct Splits {
  std::vector<QARecord> train;
  std::vector<QARecord> dev;
  std::vector<QARecord> test;
};

/// Splits in id space with one vocabulary built over train, dev, test (in
/// that order).
struct EncodedSplits {
  Vocabularies vocab;
  std::vector<QAExample> train;
  std::vector<QAExample> dev;
  std::vector<QAExample> test;
};

EncodedSplits encode_splits(const Splits& splits);

/// Reads train.jsonl, dev.jsonl and test.jsonl from a dataset directory.
/// Missing dev/test files yield empty splits; a missing train file is an error.
Splits load_splits(const std::filesystem::path& dir);

// ---------------------------------------------------------------------------
// Synthetic generation

struct SynthConfig {
  /// Entities, relation types and facts of each question's world.
  std::size_t entities = 40;
  std::size_t relations = 8;
  std::size_t facts = 80;
  /// Path length of every question (1-3).
  std::size_t hops = 2;
  /// Probability of a second topic entity that the answer must link to.
  double constraint_probability = 0.3;
  /// Number of distinct phrasing templates (1-4).
  std::size_t templates = 3;
  std::size_t train = 500;
  std::size_t dev = 100;
  std::size_t test = 100;
  std::uint64_t seed = 1;
  /// Relations come in pairs (2k, 2k+1) with every 2k fact mirrored as an
  /// inverse 2k+1 fact, so paired relations share their head/tail sets.
  bool corelation_stress = false;
  std::size_t max_attempts = 1000;

  void validate() const;
};

/// One question's world before serialization. Exposed for oracle tests.
struct SynthQuestion {
  KnowledgeGraph world;
  EntityId topic;
  std::vector<RelationId> path;
  /// Second topic and the relation the answer must have towards it.
  bool constrained = false;
  EntityId constraint_entity = 0;
  RelationId constraint_relation = 0;
  std::vector<EntityId> answers;  // sorted
  QARecord record;
};

/// Entities reached from `start` by following `path` (set semantics).
std::vector<EntityId> follow_path(const KnowledgeGraph& kg, EntityId start, std::span<const RelationId> path);

/// Draws one question; throws DataError after max_attempts failed samples.
SynthQuestion generate_question(const SynthConfig& config, Rng& rng, const std::string& id);

Splits generate(const SynthConfig& config);

/// Writes train/dev/test JSONL plus manifest.json (config and seed).
void write_dataset(const std::filesystem::path& dir, const Splits& splits, const SynthConfig& config);

std::string entity_name(std::size_t index);
std::string relation_name(std::size_t index);

}  // namespace dualkg

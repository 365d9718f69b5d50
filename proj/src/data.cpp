#include "dualkg/data.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <unordered_map>

#include <json.hpp>

namespace dualkg {

using nlohmann::json;

namespace {

std::vector<std::string> string_list(const json& j, const char* field) {
  if (!j.contains(field)) throw DataError(std::string("missing field '") + field + "'");
  const json& v = j.at(field);
  if (!v.is_array()) throw DataError(std::string("field '") + field + "' must be a list");
  std::vector<std::string> out;
  for (const json& item : v) {
    if (!item.is_string()) throw DataError(std::string("field '") + field + "' must contain only strings");
    out.push_back(item.get<std::string>());
  }
  return out;
}

}  // namespace

QARecord parse_record(const std::string& line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    throw DataError(std::string("invalid JSON: ") + e.what());
  }
  if (!j.is_object()) throw DataError("record must be a JSON object");
  QARecord r;
  if (j.contains("id")) {
    if (!j.at("id").is_string()) throw DataError("field 'id' must be a string");
    r.id = j.at("id").get<std::string>();
  }
  r.question_tokens = string_list(j, "question_tokens");
  r.topic_entities = string_list(j, "topic_entities");
  r.answers = string_list(j, "answers");
  if (!j.contains("triples") || !j.at("triples").is_array()) throw DataError("field 'triples' must be a list");
  for (const json& t : j.at("triples")) {
    if (!t.is_array() || t.size() != 3 || !t[0].is_string() || !t[1].is_string() || !t[2].is_string()) {
      throw DataError("each triple must be [head, relation, tail] strings");
    }
    r.triples.push_back({t[0].get<std::string>(), t[1].get<std::string>(), t[2].get<std::string>()});
  }
  if (r.question_tokens.empty()) throw DataError("question_tokens is empty");
  if (r.topic_entities.empty()) throw DataError("topic_entities is empty");
  return r;
}

std::string format_record(const QARecord& r) {
  json j = json::object();
  if (!r.id.empty()) j["id"] = r.id;
  j["question_tokens"] = r.question_tokens;
  json triples = json::array();
  for (const auto& t : r.triples) triples.push_back({t[0], t[1], t[2]});
  j["triples"] = std::move(triples);
  j["topic_entities"] = r.topic_entities;
  j["answers"] = r.answers;
  return j.dump();
}

std::vector<QARecord> load_records(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError(path.string() + ": cannot open file");
  std::vector<QARecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(parse_record(line));
    } catch (const DataError& e) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (out.empty()) throw DataError(path.string() + ": no records");
  return out;
}

void save_records(const std::filesystem::path& path, const std::vector<QARecord>& records) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError(path.string() + ": cannot open for writing");
  for (const QARecord& r : records) out << format_record(r) << '\n';
  if (!out) throw DataError(path.string() + ": write failed");
}

Vocabularies::Vocabularies() {
  tokens.add(kUnknown);
  relations.add(kUnknown);
}

std::uint32_t Vocabularies::token_id(const std::string& name) {
  if (!frozen) return tokens.add(name);
  return tokens.find(name).value_or(0);
}

std::uint32_t Vocabularies::relation_id(const std::string& name) {
  if (!frozen) return relations.add(name);
  return relations.find(name).value_or(0);
}

QAExample encode_record(const QARecord& record, Vocabularies& vocab) {
  QAExample ex;
  ex.id = record.id;
  for (const auto& t : record.question_tokens) ex.tokens.push_back(vocab.token_id(t));
  SubGraph& sg = ex.subgraph;
  std::unordered_map<EntityId, std::size_t> local;
  auto local_of = [&](const std::string& name) {
    const EntityId id = vocab.entity_id(name);
    auto [it, inserted] = local.emplace(id, sg.entities.size());
    if (inserted) sg.entities.push_back(id);
    return it->second;
  };
  for (const auto& t : record.topic_entities) sg.topics.push_back(local_of(t));
  for (const auto& t : record.triples) {
    const std::size_t h = local_of(t[0]);
    const RelationId r = vocab.relation_id(t[1]);
    const std::size_t tail = local_of(t[2]);
    sg.facts.push_back({static_cast<EntityId>(h), r, static_cast<EntityId>(tail)});
  }
  for (const auto& a : record.answers) ex.answers.push_back(local_of(a));
  for (auto* ids : {&sg.topics, &ex.answers}) {
    std::sort(ids->begin(), ids->end());
    ids->erase(std::unique(ids->begin(), ids->end()), ids->end());
  }
  return ex;
}

std::vector<QAExample> encode_records(const std::vector<QARecord>& records, Vocabularies& vocab) {
  std::vector<QAExample> out;
  out.reserve(records.size());
  for (const QARecord& r : records) out.push_back(encode_record(r, vocab));
  return out;
}

DatasetStats dataset_stats(const std::vector<QAExample>& examples) {
  DatasetStats s;
  s.questions = examples.size();
  if (examples.empty()) return s;
  for (const QAExample& ex : examples) {
    s.mean_entities += static_cast<double>(ex.subgraph.entity_count());
    s.mean_facts += static_cast<double>(ex.subgraph.facts.size());
    std::set<RelationId> rels;
    for (const Triple& t : ex.subgraph.facts) rels.insert(t.relation);
    s.mean_relations += static_cast<double>(rels.size());
    s.mean_answers += static_cast<double>(ex.answers.size());
  }
  const double n = static_cast<double>(examples.size());
  s.mean_entities /= n;
  s.mean_facts /= n;
  s.mean_relations /= n;
  s.mean_answers /= n;
  return s;
}

EncodedSplits encode_splits(const Splits& splits) {
  EncodedSplits out;
  out.train = encode_records(splits.train, out.vocab);
  out.dev = encode_records(splits.dev, out.vocab);
  out.test = encode_records(splits.test, out.vocab);
  return out;
}

Splits load_splits(const std::filesystem::path& dir) {
  Splits s;
  const auto train = dir / "train.jsonl";
  if (!std::filesystem::exists(train)) throw DataError(train.string() + ": not found");
  s.train = load_records(train);
  if (std::filesystem::exists(dir / "dev.jsonl")) s.dev = load_records(dir / "dev.jsonl");
  if (std::filesystem::exists(dir / "test.jsonl")) s.test = load_records(dir / "test.jsonl");
  return s;
}

// ---------------------------------------------------------------------------
// Synthetic generation

std::string entity_name(std::size_t index) { return "e" + std::to_string(index); }
std::string relation_name(std::size_t index) { return "r" + std::to_string(index); }

void SynthConfig::validate() const {
  if (entities < 2) throw std::invalid_argument("SynthConfig: need at least 2 entities");
  if (relations < 1) throw std::invalid_argument("SynthConfig: need at least 1 relation type");
  if (corelation_stress && relations % 2 != 0) {
    throw std::invalid_argument("SynthConfig: co-relation stress mode needs an even relation count");
  }
  if (facts < 1) throw std::invalid_argument("SynthConfig: need at least 1 fact");
  if (facts > entities * (entities - 1) * relations) throw std::invalid_argument("SynthConfig: too many facts");
  if (hops < 1 || hops > 3) throw std::invalid_argument("SynthConfig: hop count must be 1-3");
  if (constraint_probability < 0.0 || constraint_probability > 1.0) {
    throw std::invalid_argument("SynthConfig: constraint probability must be in [0, 1]");
  }
  if (templates < 1 || templates > 4) throw std::invalid_argument("SynthConfig: templates must be 1-4");
  if (train < 1) throw std::invalid_argument("SynthConfig: train split must be nonempty");
}

std::vector<EntityId> follow_path(const KnowledgeGraph& kg, EntityId start, std::span<const RelationId> path) {
  std::set<EntityId> frontier{start};
  for (RelationId r : path) {
    std::set<EntityId> next;
    for (EntityId e : frontier)
      for (std::size_t f : kg.facts_with_head(e))
        if (kg.triples()[f].relation == r) next.insert(kg.triples()[f].tail);
    frontier = std::move(next);
  }
  return {frontier.begin(), frontier.end()};
}

namespace {

KnowledgeGraph random_world(const SynthConfig& c, Rng& rng) {
  std::set<Triple> facts;
  std::size_t guard = 0;
  while (facts.size() < c.facts && guard++ < c.facts * 100) {
    const auto h = static_cast<EntityId>(rng.below(c.entities));
    auto t = static_cast<EntityId>(rng.below(c.entities - 1));
    if (t >= h) ++t;
    if (c.corelation_stress) {
      const auto r = static_cast<RelationId>(2 * rng.below(c.relations / 2));
      if (facts.size() + 2 > c.facts) break;
      facts.insert({h, r, t});
      facts.insert({t, r + 1, h});
    } else {
      facts.insert({h, static_cast<RelationId>(rng.below(c.relations)), t});
    }
  }
  return KnowledgeGraph(c.entities, c.relations, {facts.begin(), facts.end()});
}

// Phrasings read the path from the last relation back to the topic.
std::vector<std::string> phrase(std::size_t tmpl, const std::vector<std::string>& rels, const std::string& topic) {
  static const std::vector<std::vector<std::string>> kPrefix = {
      {"what", "is", "the"}, {"which", "is", "the"}, {"name", "the"}, {"tell", "me", "the"}};
  std::vector<std::string> out = kPrefix[tmpl];
  for (std::size_t i = rels.size(); i-- > 0;) {
    out.push_back(rels[i]);
    out.push_back("of");
    if (i > 0) out.push_back("the");
  }
  out.push_back(topic);
  return out;
}

}  // namespace

SynthQuestion generate_question(const SynthConfig& c, Rng& rng, const std::string& id) {
  for (std::size_t attempt = 0; attempt < c.max_attempts; ++attempt) {
    KnowledgeGraph world = random_world(c, rng);
    const auto topic = static_cast<EntityId>(rng.below(c.entities));
    // Random walk along outgoing facts picks a path that reaches something.
    std::vector<RelationId> path;
    EntityId at = topic;
    bool stuck = false;
    for (std::size_t h = 0; h < c.hops; ++h) {
      auto out = world.facts_with_head(at);
      if (out.empty()) {
        stuck = true;
        break;
      }
      const Triple& f = world.triples()[out[rng.below(out.size())]];
      path.push_back(f.relation);
      at = f.tail;
    }
    if (stuck) continue;
    std::vector<EntityId> reach = follow_path(world, topic, path);
    if (reach.empty() || std::binary_search(reach.begin(), reach.end(), topic)) continue;

    SynthQuestion q{std::move(world), topic, path, false, 0, 0, {}, {}};
    q.answers = reach;
    if (rng.bernoulli(c.constraint_probability)) {
      // Candidate constraints: (y, rc, C) for y in reach, C outside reach and
      // not the topic. Prefer ones that actually narrow the answer set.
      std::vector<std::pair<RelationId, EntityId>> candidates, narrowing;
      for (EntityId y : reach) {
        for (std::size_t f : q.world.facts_with_head(y)) {
          const Triple& t = q.world.triples()[f];
          if (t.tail == topic || std::binary_search(reach.begin(), reach.end(), t.tail)) continue;
          candidates.emplace_back(t.relation, t.tail);
        }
      }
      if (candidates.empty()) continue;
      for (const auto& [rc, ce] : candidates) {
        std::size_t satisfied = 0;
        for (EntityId y : reach)
          for (std::size_t f : q.world.facts_with_head(y))
            if (q.world.triples()[f].relation == rc && q.world.triples()[f].tail == ce) ++satisfied;
        if (satisfied < reach.size()) narrowing.emplace_back(rc, ce);
      }
      const auto& pool = narrowing.empty() ? candidates : narrowing;
      const auto [rc, ce] = pool[rng.below(pool.size())];
      q.constrained = true;
      q.constraint_relation = rc;
      q.constraint_entity = ce;
      std::vector<EntityId> kept;
      for (EntityId y : reach) {
        for (std::size_t f : q.world.facts_with_head(y)) {
          const Triple& t = q.world.triples()[f];
          if (t.relation == rc && t.tail == ce) {
            kept.push_back(y);
            break;
          }
        }
      }
      q.answers = std::move(kept);
    }

    std::vector<EntityId> topics{topic};
    if (q.constrained) topics.push_back(q.constraint_entity);
    SubGraph sg = extract_subgraph(q.world, topics, static_cast<int>(c.hops));

    QARecord& r = q.record;
    r.id = id;
    std::vector<std::string> rels;
    for (RelationId rel : path) rels.push_back(relation_name(rel));
    r.question_tokens = phrase(rng.below(c.templates), rels, entity_name(topic));
    if (q.constrained) {
      for (const std::string& tok : {std::string("and"), std::string("has"), relation_name(q.constraint_relation),
                                     entity_name(q.constraint_entity)}) {
        r.question_tokens.push_back(tok);
      }
    }
    for (const Triple& t : sg.facts) {
      r.triples.push_back({entity_name(sg.entities[t.head]), relation_name(t.relation), entity_name(sg.entities[t.tail])});
    }
    for (EntityId t : topics) r.topic_entities.push_back(entity_name(t));
    for (EntityId a : q.answers) r.answers.push_back(entity_name(a));
    return q;
  }
  throw DataError("generate: no satisfiable question after " + std::to_string(c.max_attempts) + " attempts");
}

Splits generate(const SynthConfig& config) {
  config.validate();
  Rng rng(config.seed);
  Splits s;
  auto fill = [&](std::vector<QARecord>& out, std::size_t n, const char* prefix) {
    for (std::size_t i = 0; i < n; ++i) {
      out.push_back(generate_question(config, rng, std::string(prefix) + "-" + std::to_string(i)).record);
    }
  };
  fill(s.train, config.train, "train");
  fill(s.dev, config.dev, "dev");
  fill(s.test, config.test, "test");
  return s;
}

void write_dataset(const std::filesystem::path& dir, const Splits& splits, const SynthConfig& c) {
  std::filesystem::create_directories(dir);
  save_records(dir / "train.jsonl", splits.train);
  if (!splits.dev.empty()) save_records(dir / "dev.jsonl", splits.dev);
  if (!splits.test.empty()) save_records(dir / "test.jsonl", splits.test);
  json manifest = {
      {"generator", "dualkg synthetic multi-hop"},
      {"seed", c.seed},
      {"entities", c.entities},
      {"relations", c.relations},
      {"facts", c.facts},
      {"hops", c.hops},
      {"constraint_probability", c.constraint_probability},
      {"templates", c.templates},
      {"corelation_stress", c.corelation_stress},
      {"splits", {{"train", splits.train.size()}, {"dev", splits.dev.size()}, {"test", splits.test.size()}}},
  };
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  if (!out) throw DataError((dir / "manifest.json").string() + ": cannot open for writing");
  out << manifest.dump(2) << '\n';
}

}  // namespace dualkg

#include "dualkg/graph.hpp"

#include <algorithm>
#include <deque>
#include <iterator>

namespace dualkg {

std::uint32_t Vocabulary::add(const std::string& name) {
  if (auto it = ids_.find(name); it != ids_.end()) return it->second;
  const auto id = static_cast<std::uint32_t>(names_.size());
  names_.push_back(name);
  ids_.emplace(name, id);
  return id;
}

std::optional<std::uint32_t> Vocabulary::find(const std::string& name) const {
  if (auto it = ids_.find(name); it != ids_.end()) return it->second;
  return std::nullopt;
}

std::uint32_t Vocabulary::at(const std::string& name) const {
  if (auto id = find(name)) return *id;
  throw DataError("unknown vocabulary entry '" + name + "'");
}

KnowledgeGraph::KnowledgeGraph(std::size_t entity_count, std::size_t relation_count, std::vector<Triple> triples)
    : entity_count_(entity_count),
      relation_count_(relation_count),
      triples_(std::move(triples)),
      by_head_(entity_count),
      by_tail_(entity_count) {
  for (std::size_t i = 0; i < triples_.size(); ++i) {
    const Triple& t = triples_[i];
    if (t.head >= entity_count_ || t.tail >= entity_count_ || t.relation >= relation_count_) {
      throw DataError("KnowledgeGraph: triple " + std::to_string(i) + " (" + std::to_string(t.head) + ", " +
                      std::to_string(t.relation) + ", " + std::to_string(t.tail) + ") has an out-of-range id");
    }
    by_head_[t.head].push_back(i);
    by_tail_[t.tail].push_back(i);
  }
}

std::optional<std::size_t> SubGraph::find_local(EntityId global) const {
  auto it = std::find(entities.begin(), entities.end(), global);
  if (it == entities.end()) return std::nullopt;
  return static_cast<std::size_t>(it - entities.begin());
}

std::size_t SubGraph::local_index(EntityId global) const {
  if (auto i = find_local(global)) return *i;
  throw DataError("entity " + std::to_string(global) + " is not in the subgraph");
}

SubGraph extract_subgraph(const KnowledgeGraph& kg, std::span<const EntityId> topics, int hops) {
  if (topics.empty()) throw std::invalid_argument("extract_subgraph: no topic entities");
  if (hops < 0) throw std::invalid_argument("extract_subgraph: negative hop count");
  constexpr int kUnseen = -1;
  std::vector<int> distance(kg.entity_count(), kUnseen);
  SubGraph sg;
  sg.base_relation_count = kg.relation_count();
  std::deque<EntityId> frontier;
  for (EntityId t : topics) {
    if (t >= kg.entity_count()) throw DataError("extract_subgraph: unknown topic entity " + std::to_string(t));
    if (distance[t] == kUnseen) {
      distance[t] = 0;
      sg.entities.push_back(t);
      frontier.push_back(t);
    }
  }
  while (!frontier.empty()) {
    const EntityId e = frontier.front();
    frontier.pop_front();
    if (distance[e] == hops) continue;
    auto visit = [&](EntityId next) {
      if (distance[next] != kUnseen) return;
      distance[next] = distance[e] + 1;
      sg.entities.push_back(next);
      frontier.push_back(next);
    };
    for (std::size_t f : kg.facts_with_head(e)) visit(kg.triples()[f].tail);
    for (std::size_t f : kg.facts_with_tail(e)) visit(kg.triples()[f].head);
  }
  std::vector<std::size_t> local(kg.entity_count(), SIZE_MAX);
  for (std::size_t i = 0; i < sg.entities.size(); ++i) local[sg.entities[i]] = i;
  for (const Triple& t : kg.triples()) {
    if (local[t.head] != SIZE_MAX && local[t.tail] != SIZE_MAX) {
      sg.facts.push_back({static_cast<EntityId>(local[t.head]), t.relation, static_cast<EntityId>(local[t.tail])});
    }
  }
  for (EntityId t : topics) sg.topics.push_back(local[t]);
  std::sort(sg.topics.begin(), sg.topics.end());
  sg.topics.erase(std::unique(sg.topics.begin(), sg.topics.end()), sg.topics.end());
  return sg;
}

SubGraph add_inverse_facts(SubGraph sg) {
  if (sg.inverse_augmented) throw std::logic_error("add_inverse_facts: subgraph is already augmented");
  const std::size_t n = sg.facts.size();
  sg.facts.reserve(2 * n);
  for (std::size_t i = 0; i < n; ++i) {
    const Triple t = sg.facts[i];
    sg.facts.push_back({t.tail, static_cast<RelationId>(t.relation + sg.base_relation_count), t.head});
  }
  sg.inverse_augmented = true;
  return sg;
}

std::size_t DualGraph::node_of(RelationId r) const {
  auto it = std::lower_bound(relations.begin(), relations.end(), r);
  if (it == relations.end() || *it != r) throw std::out_of_range("relation " + std::to_string(r) + " not in dual graph");
  return static_cast<std::size_t>(it - relations.begin());
}

bool DualGraph::adjacent(std::size_t i, std::size_t j) const {
  return std::binary_search(neighbors.at(i).begin(), neighbors.at(i).end(), j);
}

std::vector<std::size_t> DualGraph::pooled_entities(std::size_t i) const {
  std::vector<std::size_t> out;
  std::set_union(heads[i].begin(), heads[i].end(), tails[i].begin(), tails[i].end(), std::back_inserter(out));
  return out;
}

namespace {

bool intersects(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
  auto ia = a.begin();
  auto ib = b.begin();
  while (ia != a.end() && ib != b.end()) {
    if (*ia == *ib) return true;
    if (*ia < *ib) ++ia;
    else ++ib;
  }
  return false;
}

std::size_t intersection_size(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
  std::vector<std::size_t> out;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out.size();
}

}  // namespace

DualGraph build_dual_graph(const SubGraph& sg, DualEdgeRule rule) {
  if (sg.facts.empty()) throw std::invalid_argument("build_dual_graph: subgraph has no facts");
  DualGraph dg;
  for (const Triple& t : sg.facts) dg.relations.push_back(t.relation);
  std::sort(dg.relations.begin(), dg.relations.end());
  dg.relations.erase(std::unique(dg.relations.begin(), dg.relations.end()), dg.relations.end());
  const std::size_t n = dg.relations.size();
  dg.heads.resize(n);
  dg.tails.resize(n);
  for (const Triple& t : sg.facts) {
    const std::size_t node = dg.node_of(t.relation);
    dg.heads[node].push_back(t.head);
    dg.tails[node].push_back(t.tail);
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (auto* set : {&dg.heads[i], &dg.tails[i]}) {
      std::sort(set->begin(), set->end());
      set->erase(std::unique(set->begin(), set->end()), set->end());
    }
  }
  std::vector<std::vector<std::size_t>> pooled(n);
  for (std::size_t i = 0; i < n; ++i) pooled[i] = dg.pooled_entities(i);
  dg.neighbors.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      bool linked = i == j;
      if (!linked) {
        linked = rule == DualEdgeRule::kAnySharedEntity
                     ? intersects(pooled[i], pooled[j])
                     : intersects(dg.heads[i], dg.heads[j]) || intersects(dg.tails[i], dg.tails[j]);
      }
      if (linked) dg.neighbors[i].push_back(j);
    }
  }
  return dg;
}

std::map<std::pair<std::size_t, std::size_t>, double> cooccurrence_weights(const DualGraph& dg) {
  std::map<std::pair<std::size_t, std::size_t>, double> weights;
  std::vector<std::vector<std::size_t>> pooled(dg.size());
  for (std::size_t i = 0; i < dg.size(); ++i) pooled[i] = dg.pooled_entities(i);
  for (std::size_t i = 0; i < dg.size(); ++i) {
    for (std::size_t j : dg.neighbors[i]) {
      const std::size_t common = intersection_size(pooled[i], pooled[j]);
      const std::size_t total = pooled[i].size() + pooled[j].size() - common;
      weights[{i, j}] = total == 0 ? 0.0 : static_cast<double>(common) / static_cast<double>(total);
    }
  }
  return weights;
}

std::vector<double> normalized_cooccurrence(const DualGraph& dg) {
  const std::size_t n = dg.size();
  std::vector<double> matrix(n * n, 0.0);
  for (const auto& [edge, w] : cooccurrence_weights(dg)) matrix[edge.first * n + edge.second] = w;
  for (std::size_t i = 0; i < n; ++i) {
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) total += matrix[i * n + j];
    if (total > 0)
      for (std::size_t j = 0; j < n; ++j) matrix[i * n + j] /= total;
  }
  return matrix;
}

}  // namespace dualkg

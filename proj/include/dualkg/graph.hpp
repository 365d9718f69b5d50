#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace dualkg {

using EntityId = std::uint32_t;
using RelationId = std::uint32_t;

/// Raised for malformed or inconsistent graph and dataset content.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A directed labeled fact (head, relation, tail).
struct Triple {
  EntityId head = 0;
  RelationId relation = 0;
  EntityId tail = 0;

  friend auto operator<=>(const Triple&, const Triple&) = default;
};

/// Bidirectional name <-> id map assigning ids in first-occurrence order.
class Vocabulary {
 public:
  std::uint32_t add(const std::string& name);
  std::optional<std::uint32_t> find(const std::string& name) const;
  std::uint32_t at(const std::string& name) const;
  const std::string& name(std::uint32_t id) const { return names_.at(id); }
  std::size_t size() const noexcept { return names_.size(); }
  const std::vector<std::string>& names() const noexcept { return names_; }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.names_ == b.names_; }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, std::uint32_t> ids_;
};

class KnowledgeGraph {
 public:
  KnowledgeGraph(std::size_t entity_count, std::size_t relation_count, std::vector<Triple> triples);

  std::size_t entity_count() const noexcept { return entity_count_; }
  std::size_t relation_count() const noexcept { return relation_count_; }
  const std::vector<Triple>& triples() const noexcept { return triples_; }

  /// Indices into triples() of facts with the entity as head / as tail.
  std::span<const std::size_t> facts_with_head(EntityId e) const { return by_head_.at(e); }
  std::span<const std::size_t> facts_with_tail(EntityId e) const { return by_tail_.at(e); }

 private:
  std::size_t entity_count_;
  std::size_t relation_count_;
  std::vector<Triple> triples_;
  std::vector<std::vector<std::size_t>> by_head_;
  std::vector<std::vector<std::size_t>> by_tail_;
};

/// Question-specific primal entity graph. Facts use local entity indices
/// (positions in `entities`) and global relation ids.
struct SubGraph {
  std::vector<EntityId> entities;
  std::vector<Triple> facts;
  std::vector<std::size_t> topics;
  /// Relation vocabulary size; inverse relation ids are r + base_relation_count.
  std::size_t base_relation_count = 0;
  bool inverse_augmented = false;

  std::size_t entity_count() const noexcept { return entities.size(); }
  std::size_t local_index(EntityId global) const;
  std::optional<std::size_t> find_local(EntityId global) const;
  /// Number of facts before inverse augmentation.
  std::size_t original_fact_count() const noexcept { return inverse_augmented ? facts.size() / 2 : facts.size(); }
};

/// Entities within `hops` undirected steps of any topic, plus every fact among
/// them. Local entity order is BFS discovery order, starting with the topics.
SubGraph extract_subgraph(const KnowledgeGraph& kg, std::span<const EntityId> topics, int hops);

/// Appends (t, r + base, h) for every fact (h, r, t).
SubGraph add_inverse_facts(SubGraph sg);

enum class DualEdgeRule {
  /// Edge iff the pooled head/tail sets intersect.
  kAnySharedEntity,
  /// Edge iff the head sets intersect or the tail sets intersect.
  kRoleMatched,
};

/// Dual relation graph: one node per relation type occurring in a subgraph.
struct DualGraph {
  /// Global relation ids in ascending order; node i is relations[i].
  std::vector<RelationId> relations;
  /// Sorted neighbor lists including the node itself.
  std::vector<std::vector<std::size_t>> neighbors;
  /// Local entity indices appearing as head / tail of each relation.
  std::vector<std::vector<std::size_t>> heads;
  std::vector<std::vector<std::size_t>> tails;

  std::size_t size() const noexcept { return relations.size(); }
  std::size_t node_of(RelationId r) const;
  bool adjacent(std::size_t i, std::size_t j) const;
  /// Sorted union of heads[i] and tails[i].
  std::vector<std::size_t> pooled_entities(std::size_t i) const;
};

DualGraph build_dual_graph(const SubGraph& sg, DualEdgeRule rule = DualEdgeRule::kAnySharedEntity);

/// Jaccard overlap of pooled head/tail sets for every dual edge, keyed by node
/// index pair (both orders present). Self-loops are 1.
std::map<std::pair<std::size_t, std::size_t>, double> cooccurrence_weights(const DualGraph& dg);

/// Row-normalized dense [n, n] co-occurrence matrix used for propagation.
std::vector<double> normalized_cooccurrence(const DualGraph& dg);

}  // namespace dualkg

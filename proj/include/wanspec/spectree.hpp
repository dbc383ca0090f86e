#pragma once

#include "wanspec/types.hpp"

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <vector>

namespace wanspec {

/// Identifier of a tree node, unique and stable for the node's lifetime
/// within one tree. kRootId names the implicit root anchored at the last
/// committed token; it is never a stored node.
using NodeId = std::uint32_t;
constexpr NodeId kRootId = 0;

enum class NodeOrigin : std::uint8_t { worker, controller };

struct SpecNode {
  NodeId id = 0;
  TokenId token = 0;
  double prob = 0.0;       // draft probability of this token given its prefix
  double entropy = 0.0;    // draft entropy at this position
  NodeId parent = kRootId;
  NodeOrigin origin = NodeOrigin::worker;
  std::uint32_t depth = 0;  // root children have depth 1
  double path_prob = 0.0;   // product of probs along the root path
  std::vector<NodeId> children;
};

/// What one target step decided: the accepted candidate prefix plus the
/// target model's own next token (always present).
struct ValidationResult {
  std::vector<TokenId> accepted;
  TokenId bonus_token = 0;
  double final_entropy = 0.0;  // target entropy at the bonus position

  std::size_t length() const { return accepted.size() + 1; }

  bool operator==(const ValidationResult&) const = default;
};

struct PruneOutcome {
  std::uint64_t advanced_by = 0;
  std::optional<NodeId> survivor;
};

struct CandidateIn {
  TokenId token = 0;
  double prob = 0.0;
  double entropy = 0.0;

  bool operator==(const CandidateIn&) const = default;
};

/// Speculative token tree. Paths from the root are candidate continuations
/// of the committed output. Both protocol endpoints own one; the two trees
/// are kept consistent by content (tokens), never by shared node ids.
class SpecTree {
 public:
  explicit SpecTree(std::size_t max_nodes = 64) : max_nodes_(max_nodes) {}

  std::uint64_t committed_len() const { return committed_len_; }
  std::size_t node_count() const { return nodes_.size(); }
  std::uint32_t depth() const { return depth_; }
  bool empty() const { return nodes_.empty(); }
  bool contains(NodeId id) const { return nodes_.count(id) != 0; }
  const SpecNode& node(NodeId id) const { return nodes_.at(id); }

  /// Absolute sequence position a new child of `id` would occupy.
  std::uint64_t extension_position(NodeId id) const {
    return id == kRootId ? committed_len_ : committed_len_ + node(id).depth;
  }

  /// Child of `parent` holding `token`, if any. kRootId addresses the root.
  std::optional<NodeId> child_by_token(NodeId parent, TokenId token) const {
    NodeId c = find_child(parent, token);
    if (c == kRootId) return std::nullopt;
    return c;
  }

  /// Walks token content from the root; nullopt when the path leaves the tree.
  std::optional<NodeId> resolve_path(std::span<const TokenId> tokens) const {
    NodeId cur = kRootId;
    for (TokenId t : tokens) {
      NodeId next = find_child(cur, t);
      if (next == kRootId) return std::nullopt;
      cur = next;
    }
    return cur;
  }

  /// Tokens along the root path, root child first, `id` inclusive.
  std::vector<TokenId> path_tokens(NodeId id) const {
    std::vector<TokenId> out;
    for (NodeId cur = id; cur != kRootId; cur = nodes_.at(cur).parent)
      out.push_back(nodes_.at(cur).token);
    std::reverse(out.begin(), out.end());
    return out;
  }

  /// Adds one child per candidate under `parent`, deduplicating against
  /// existing children by token (the existing node's id is returned in that
  /// case). Returns nullopt when the parent is unknown, i.e. the speculation
  /// is stale and the caller should drop it. Capacity eviction runs after
  /// the whole batch: lowest path-probability leaves go first.
  std::optional<std::vector<NodeId>> append(NodeId parent,
                                            std::span<const CandidateIn> candidates,
                                            NodeOrigin origin) {
    if (parent != kRootId && !contains(parent)) return std::nullopt;
    std::vector<NodeId> ids;
    ids.reserve(candidates.size());
    for (const CandidateIn& c : candidates) {
      if (NodeId existing = find_child(parent, c.token); existing != kRootId) {
        ids.push_back(existing);
        continue;
      }
      const NodeId id = next_id_++;
      SpecNode n;
      n.id = id;
      n.token = c.token;
      n.prob = c.prob;
      n.entropy = c.entropy;
      n.parent = parent;
      n.origin = origin;
      if (parent == kRootId) {
        n.depth = 1;
        n.path_prob = c.prob;
        root_children_.push_back(n.id);
      } else {
        SpecNode& p = nodes_.at(parent);
        n.depth = p.depth + 1;
        n.path_prob = p.path_prob * c.prob;
        p.children.push_back(n.id);
      }
      depth_ = std::max(depth_, n.depth);
      nodes_.emplace(id, std::move(n));
      ids.push_back(id);
    }
    evict_over_capacity();
    return ids;
  }

  /// Walks accepted tokens then the bonus token from the root. Matching
  /// prefix nodes become committed; everything off the accepted path is
  /// discarded. If the full walk stays in the tree the bonus node survives
  /// as the new root anchor (keeping its subtree); any divergence or
  /// exhaustion empties the tree. Total: never fails, always advances the
  /// committed length by validation.length().
  PruneOutcome prune(const ValidationResult& v) {
    std::vector<TokenId> walk = v.accepted;
    walk.push_back(v.bonus_token);

    NodeId cur = kRootId;
    bool complete = true;
    for (TokenId t : walk) {
      NodeId next = find_child(cur, t);
      if (next == kRootId) {
        complete = false;
        break;
      }
      cur = next;
    }

    committed_len_ += walk.size();
    PruneOutcome out;
    out.advanced_by = walk.size();
    if (complete) {
      out.survivor = cur;
      reroot_at(cur);
    } else {
      clear_nodes();
    }
    return out;
  }

  /// Up to `s` leaves ranked by descending path probability (ties: shallower
  /// first, then ascending id). An empty tree yields the root anchor, which
  /// means "extend from the committed sequence".
  std::vector<NodeId> frontier(std::size_t s) const {
    if (nodes_.empty()) return {kRootId};
    std::vector<NodeId> leaves;
    for (const auto& [id, n] : nodes_)
      if (n.children.empty()) leaves.push_back(id);
    std::sort(leaves.begin(), leaves.end(),
              [this](NodeId a, NodeId b) { return rank_before(nodes_.at(a), nodes_.at(b)); });
    if (leaves.size() > s) leaves.resize(s);
    return leaves;
  }

  struct PathStep {
    NodeId id;
    TokenId token;
  };

  /// The length-k prefix of the highest path-probability root path reaching
  /// depth k, or nullopt when the tree is not deep enough yet.
  std::optional<std::vector<PathStep>> best_path(std::size_t k) const {
    if (depth_ < k) return std::nullopt;
    const SpecNode* best = nullptr;
    for (const auto& [id, n] : nodes_) {
      if (n.depth != k) continue;
      if (!best || rank_before(n, *best)) best = &n;
    }
    if (!best) return std::nullopt;  // unreachable: depth_ >= k implies a node at k
    std::vector<PathStep> path(k);
    for (NodeId cur = best->id; cur != kRootId;) {
      const SpecNode& n = nodes_.at(cur);
      path[n.depth - 1] = {n.id, n.token};
      cur = n.parent;
    }
    return path;
  }

  /// Deterministic depth-first rendering used by golden tests and debugging.
  std::string dump() const {
    std::ostringstream os;
    os << "tree committed=" << committed_len_ << " nodes=" << nodes_.size()
       << " depth=" << depth_ << "\n";
    dump_children(os, root_children_, 1);
    return os.str();
  }

 private:
  NodeId find_child(NodeId parent, TokenId token) const {
    const std::vector<NodeId>& kids =
        parent == kRootId ? root_children_ : nodes_.at(parent).children;
    for (NodeId c : kids)
      if (nodes_.at(c).token == token) return c;
    return kRootId;
  }

  // Frontier/best-path ordering; eviction removes the last-ranked leaf.
  bool rank_before(const SpecNode& a, const SpecNode& b) const {
    if (a.path_prob != b.path_prob) return a.path_prob > b.path_prob;
    if (a.depth != b.depth) return a.depth < b.depth;
    return a.id < b.id;
  }

  void evict_over_capacity() {
    while (nodes_.size() > max_nodes_) {
      const SpecNode* worst = nullptr;
      for (const auto& [id, n] : nodes_) {
        if (!n.children.empty()) continue;
        if (!worst || rank_before(*worst, n)) worst = &n;
      }
      erase_leaf(worst->id);
    }
  }

  void erase_leaf(NodeId id) {
    const SpecNode& n = nodes_.at(id);
    std::vector<NodeId>& kids =
        n.parent == kRootId ? root_children_ : nodes_.at(n.parent).children;
    kids.erase(std::find(kids.begin(), kids.end(), id));
    nodes_.erase(id);
    recompute_depth();
  }

  void clear_nodes() {
    nodes_.clear();
    root_children_.clear();
    depth_ = 0;
  }

  void reroot_at(NodeId survivor) {
    // Keep only the survivor's subtree; its children become root children.
    SpecNode sv = nodes_.at(survivor);
    std::map<NodeId, SpecNode> kept;
    collect_subtree(survivor, kept);
    kept.erase(survivor);
    nodes_ = std::move(kept);
    root_children_ = sv.children;
    depth_ = 0;
    for (NodeId c : root_children_) rebase(c, kRootId, 0, 1.0);
  }

  void collect_subtree(NodeId id, std::map<NodeId, SpecNode>& out) const {
    const SpecNode& n = nodes_.at(id);
    out.emplace(id, n);
    for (NodeId c : n.children) collect_subtree(c, out);
  }

  void rebase(NodeId id, NodeId parent, std::uint32_t parent_depth,
              double parent_path_prob) {
    SpecNode& n = nodes_.at(id);
    n.parent = parent;
    n.depth = parent_depth + 1;
    n.path_prob = parent_path_prob * n.prob;
    depth_ = std::max(depth_, n.depth);
    for (NodeId c : n.children) rebase(c, id, n.depth, n.path_prob);
  }

  void recompute_depth() {
    depth_ = 0;
    for (const auto& [id, n] : nodes_) depth_ = std::max(depth_, n.depth);
  }

  void dump_children(std::ostringstream& os, const std::vector<NodeId>& kids,
                     int indent) const {
    std::vector<NodeId> ordered = kids;
    std::sort(ordered.begin(), ordered.end(), [this](NodeId a, NodeId b) {
      return rank_before(nodes_.at(a), nodes_.at(b));
    });
    for (NodeId id : ordered) {
      const SpecNode& n = nodes_.at(id);
      os << std::string(static_cast<std::size_t>(indent) * 2, ' ') << "tok="
         << n.token << " p=" << n.prob << " pp=" << n.path_prob << "\n";
      dump_children(os, n.children, indent + 1);
    }
  }

  std::map<NodeId, SpecNode> nodes_;  // ordered: deterministic iteration
  std::vector<NodeId> root_children_;
  NodeId next_id_ = 1;
  std::uint64_t committed_len_ = 0;
  std::uint32_t depth_ = 0;
  std::size_t max_nodes_;
};

}  // namespace wanspec

#include "wanspec/spectree.hpp"

#include "wanspec/rng.hpp"

#include <doctest.h>

#include <map>
#include <set>

using namespace wanspec;

namespace {

std::vector<NodeId> append_one(SpecTree& t, NodeId parent, TokenId tok, double prob) {
  CandidateIn c{tok, prob, 0.3};
  auto ids = t.append(parent, std::span<const CandidateIn>(&c, 1), NodeOrigin::worker);
  REQUIRE(ids.has_value());
  return *ids;
}

std::vector<NodeId> append_two(SpecTree& t, NodeId parent, TokenId ta, double pa,
                               TokenId tb, double pb) {
  std::vector<CandidateIn> cs{{ta, pa, 0.3}, {tb, pb, 0.3}};
  auto ids = t.append(parent, cs, NodeOrigin::worker);
  REQUIRE(ids.has_value());
  return *ids;
}

}  // namespace

TEST_CASE("append onto the empty tree makes a depth-1 tree") {
  SpecTree t;
  append_one(t, kRootId, 10, 0.9);
  CHECK(t.depth() == 1);
  CHECK(t.node_count() == 1);
}

TEST_CASE("append deduplicates by token under one parent") {
  SpecTree t;
  NodeId a = append_one(t, kRootId, 10, 0.9)[0];
  NodeId b = append_one(t, kRootId, 10, 0.9)[0];
  CHECK(a == b);
  CHECK(t.node_count() == 1);
}

TEST_CASE("append to an unknown parent reports staleness") {
  SpecTree t;
  CandidateIn c{5, 0.5, 0.1};
  CHECK_FALSE(t.append(77, std::span<const CandidateIn>(&c, 1), NodeOrigin::worker)
                  .has_value());
}

TEST_CASE("capacity eviction drops the lowest path-probability leaves") {
  // Hand-enumerated path products:
  //   a=.9  b=.4  c=a*.8=.72  d=a*.5=.45  e=c*.6=.432  f=c*.3=.216
  // After inserting six nodes with max_nodes=4 the two worst leaves by path
  // probability are f (.216) and b (.4); d (.45) and e (.432) survive.
  SpecTree t(4);
  auto ab = append_two(t, kRootId, 10, 0.9, 11, 0.4);
  auto cd = append_two(t, ab[0], 20, 0.8, 21, 0.5);
  auto ef = append_two(t, cd[0], 30, 0.6, 31, 0.3);
  CHECK(t.node_count() == 4);
  CHECK(t.contains(ab[0]));
  CHECK(t.contains(cd[0]));
  CHECK(t.contains(cd[1]));
  CHECK(t.contains(ef[0]));
  CHECK_FALSE(t.contains(ab[1]));
  CHECK_FALSE(t.contains(ef[1]));
}

TEST_CASE("prune over a fully matching linear tree advances and survives") {
  SpecTree t;
  NodeId n0 = append_one(t, kRootId, 100, 0.9)[0];
  NodeId n1 = append_one(t, n0, 101, 0.8)[0];
  NodeId n2 = append_one(t, n1, 102, 0.7)[0];

  ValidationResult v;
  v.accepted = {100, 101};
  v.bonus_token = 102;
  PruneOutcome out = t.prune(v);
  CHECK(out.advanced_by == 3);
  REQUIRE(out.survivor.has_value());
  CHECK(*out.survivor == n2);
  CHECK(t.committed_len() == 3);
  CHECK(t.node_count() == 0);  // nothing below the survivor yet
}

TEST_CASE("prune keeps the sibling branch the bonus token names") {
  SpecTree t;
  auto pair = append_two(t, kRootId, 7, 0.6, 8, 0.3);
  NodeId under = append_one(t, pair[1], 9, 0.5)[0];

  ValidationResult v;
  v.accepted = {};
  v.bonus_token = 8;
  PruneOutcome out = t.prune(v);
  REQUIRE(out.survivor.has_value());
  CHECK(*out.survivor == pair[1]);
  CHECK(t.committed_len() == 1);
  CHECK(t.node_count() == 1);
  CHECK(t.contains(under));
  CHECK(t.node(under).depth == 1);
  CHECK(t.node(under).path_prob == doctest::Approx(0.5));
}

TEST_CASE("prune with an unknown bonus empties the tree") {
  SpecTree t;
  append_one(t, kRootId, 5, 0.9);
  ValidationResult v;
  v.accepted = {};
  v.bonus_token = 999;
  PruneOutcome out = t.prune(v);
  CHECK(out.advanced_by == 1);
  CHECK_FALSE(out.survivor.has_value());
  CHECK(t.node_count() == 0);
  CHECK(t.committed_len() == 1);
}

TEST_CASE("frontier of a linear tree is its single leaf") {
  SpecTree t;
  NodeId n0 = append_one(t, kRootId, 1, 0.9)[0];
  NodeId n1 = append_one(t, n0, 2, 0.8)[0];
  NodeId n2 = append_one(t, n1, 3, 0.7)[0];
  CHECK(t.frontier(4) == std::vector<NodeId>{n2});
}

TEST_CASE("frontier of an empty tree is the root anchor") {
  SpecTree t;
  CHECK(t.frontier(3) == std::vector<NodeId>{kRootId});
}

TEST_CASE("frontier picks the higher path probability first") {
  SpecTree t;
  auto ab = append_two(t, kRootId, 1, 0.9, 2, 0.3);
  NodeId hi = append_one(t, ab[0], 3, 0.9)[0];  // .81
  NodeId lo = append_one(t, ab[1], 4, 0.3)[0];  // .09
  (void)lo;
  CHECK(t.frontier(1) == std::vector<NodeId>{hi});
}

TEST_CASE("frontier orders a balanced tree by path products with the tie rule") {
  // Leaves: a.6*.6=.36, a.6*.4=.24, b.4*.6=.24, b.4*.4=.16.
  // The two .24 leaves tie at equal depth, so the lower node id wins.
  SpecTree t;
  auto ab = append_two(t, kRootId, 1, 0.6, 2, 0.4);
  auto a_kids = append_two(t, ab[0], 3, 0.6, 4, 0.4);
  auto b_kids = append_two(t, ab[1], 5, 0.6, 6, 0.4);
  std::vector<NodeId> want{a_kids[0], a_kids[1], b_kids[0]};
  CHECK(t.frontier(3) == want);
}

TEST_CASE("best_path gates on depth") {
  SpecTree t;
  append_one(t, kRootId, 1, 0.9);
  CHECK_FALSE(t.best_path(2).has_value());
}

TEST_CASE("best_path returns the k-prefix of a deeper chain") {
  SpecTree t;
  NodeId n0 = append_one(t, kRootId, 1, 0.9)[0];
  NodeId n1 = append_one(t, n0, 2, 0.8)[0];
  append_one(t, n1, 3, 0.7);
  auto path = t.best_path(2);
  REQUIRE(path.has_value());
  REQUIRE(path->size() == 2);
  CHECK((*path)[0].id == n0);
  CHECK((*path)[1].id == n1);
  CHECK((*path)[0].token == 1);
  CHECK((*path)[1].token == 2);
}

TEST_CASE("best_path picks the higher product branch") {
  // .8*.7=.56 beats .9*.6=.54.
  SpecTree t;
  auto ab = append_two(t, kRootId, 1, 0.9, 2, 0.8);
  append_one(t, ab[0], 3, 0.6);
  NodeId deep = append_one(t, ab[1], 4, 0.7)[0];
  auto path = t.best_path(2);
  REQUIRE(path.has_value());
  CHECK((*path)[0].id == ab[1]);
  CHECK((*path)[1].id == deep);
}

TEST_CASE("resolve_path walks token content from the root") {
  SpecTree t;
  NodeId n0 = append_one(t, kRootId, 1, 0.9)[0];
  NodeId n1 = append_one(t, n0, 2, 0.8)[0];
  std::vector<TokenId> good{1, 2};
  std::vector<TokenId> bad{1, 99};
  CHECK(t.resolve_path(good) == n1);
  CHECK_FALSE(t.resolve_path(bad).has_value());
  CHECK(t.resolve_path(std::vector<TokenId>{}) == kRootId);
  CHECK(t.path_tokens(n1) == good);
}

TEST_CASE("dump renders deterministically") {
  SpecTree t;
  auto ab = append_two(t, kRootId, 5, 0.75, 6, 0.25);
  append_one(t, ab[0], 7, 0.5);
  CHECK(t.dump() ==
        "tree committed=0 nodes=3 depth=2\n"
        "  tok=5 p=0.75 pp=0.75\n"
        "    tok=7 p=0.5 pp=0.375\n"
        "  tok=6 p=0.25 pp=0.25\n");
}

// Reference model for the prune property: a plain map of edges rebuilt from
// the tree before each prune, walked independently.
namespace {

struct RefTree {
  std::map<NodeId, std::pair<NodeId, TokenId>> parent_token;  // id -> (parent, token)
  std::map<NodeId, std::vector<NodeId>> children;

  static RefTree capture(const SpecTree& t, const std::vector<NodeId>& ids) {
    RefTree r;
    for (NodeId id : ids) {
      if (!t.contains(id)) continue;
      const SpecNode& n = t.node(id);
      r.parent_token[id] = {n.parent, n.token};
      r.children[n.parent].push_back(id);
    }
    return r;
  }

  std::optional<NodeId> walk(const std::vector<TokenId>& toks) const {
    NodeId cur = kRootId;
    for (TokenId tok : toks) {
      NodeId next = 0;
      bool found = false;
      auto it = children.find(cur);
      if (it != children.end()) {
        for (NodeId c : it->second) {
          if (parent_token.at(c).second == tok) {
            next = c;
            found = true;
            break;
          }
        }
      }
      if (!found) return std::nullopt;
      cur = next;
    }
    return cur;
  }

  void descendants(NodeId id, std::set<NodeId>& out) const {
    auto it = children.find(id);
    if (it == children.end()) return;
    for (NodeId c : it->second) {
      out.insert(c);
      descendants(c, out);
    }
  }
};

}  // namespace

TEST_CASE("prune is total and agrees with an independent walk (property)") {
  std::mt19937_64 rng(1234);
  for (int iter = 0; iter < 10000; ++iter) {
    SpecTree t(24);
    std::vector<NodeId> all_ids;
    std::uint64_t committed_before_all = 0;

    int appends = 1 + static_cast<int>(uniform_below(rng, 12));
    for (int a = 0; a < appends; ++a) {
      NodeId parent = kRootId;
      if (!all_ids.empty() && uniform_below(rng, 4) != 0) {
        NodeId cand = all_ids[uniform_below(rng, all_ids.size())];
        if (t.contains(cand)) parent = cand;
      }
      std::vector<CandidateIn> cs;
      int n = 1 + static_cast<int>(uniform_below(rng, 2));
      for (int i = 0; i < n; ++i)
        cs.push_back({static_cast<TokenId>(uniform_below(rng, 12)),
                      0.05 + 0.9 * uniform_unit(rng), uniform_unit(rng)});
      auto ids = t.append(parent, cs, NodeOrigin::worker);
      REQUIRE(ids.has_value());
      for (NodeId id : *ids) all_ids.push_back(id);
    }

    RefTree ref = RefTree::capture(t, all_ids);
    committed_before_all = t.committed_len();

    ValidationResult v;
    int acc = static_cast<int>(uniform_below(rng, 4));
    for (int i = 0; i < acc; ++i)
      v.accepted.push_back(static_cast<TokenId>(uniform_below(rng, 12)));
    v.bonus_token = static_cast<TokenId>(uniform_below(rng, 12));

    std::vector<TokenId> walk = v.accepted;
    walk.push_back(v.bonus_token);
    std::optional<NodeId> expected_survivor = ref.walk(walk);

    PruneOutcome out = t.prune(v);  // must never throw
    CHECK(out.advanced_by == v.length());
    CHECK(t.committed_len() == committed_before_all + v.length());
    CHECK(out.survivor == expected_survivor);

    if (expected_survivor) {
      std::set<NodeId> want;
      ref.descendants(*expected_survivor, want);
      CHECK(t.node_count() == want.size());
      for (NodeId id : want) CHECK(t.contains(id));
    } else {
      CHECK(t.node_count() == 0);
    }
  }
}

TEST_CASE("identical append and validation streams keep two trees identical") {
  std::mt19937_64 rng(99);
  for (int iter = 0; iter < 200; ++iter) {
    SpecTree a(16), b(16);
    for (int step = 0; step < 20; ++step) {
      if (uniform_below(rng, 3) == 0) {
        ValidationResult v;
        int acc = static_cast<int>(uniform_below(rng, 3));
        for (int i = 0; i < acc; ++i)
          v.accepted.push_back(static_cast<TokenId>(uniform_below(rng, 6)));
        v.bonus_token = static_cast<TokenId>(uniform_below(rng, 6));
        a.prune(v);
        b.prune(v);
      } else {
        std::vector<TokenId> path;
        for (int i = 0; i < 3 && uniform_below(rng, 2); ++i)
          path.push_back(static_cast<TokenId>(uniform_below(rng, 6)));
        std::vector<CandidateIn> cs{{static_cast<TokenId>(uniform_below(rng, 6)),
                                     0.1 + 0.8 * uniform_unit(rng), 0.2}};
        auto pa = a.resolve_path(path);
        auto pb = b.resolve_path(path);
        CHECK(pa.has_value() == pb.has_value());
        if (pa) {
          a.append(*pa, cs, NodeOrigin::worker);
          b.append(*pb, cs, NodeOrigin::worker);
        }
      }
      CHECK(a.committed_len() == b.committed_len());
      CHECK(a.dump() == b.dump());
    }
  }
}

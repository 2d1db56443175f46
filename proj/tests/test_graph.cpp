#include "test_util.hpp"

using namespace cirp;
using cirp::test::letters;
using cirp::test::TempDir;

namespace {
ItemGraph graph_of(const std::vector<Interaction>& log, std::size_t n = 3, GraphBuildOptions opt = {}) {
  return build_graph(log, letters(n), opt);
}
}  // namespace

TEST(BuildGraph, PairWithinWindow) {
  const auto g = graph_of({{"u", "a", 0}, {"u", "b", 3600}});
  EXPECT_EQ(g.edge_count(), 1u);
  ASSERT_TRUE(g.has_edge(0, 1));
  EXPECT_EQ(g.neighbors(0)[0].weight, 1u);
}

TEST(BuildGraph, GapBeyondWindow) {
  EXPECT_EQ(graph_of({{"u", "a", 0}, {"u", "b", 2 * 86400}}).edge_count(), 0u);
}

TEST(BuildGraph, OnlyAdjacentPurchasesLink) {
  const auto g = graph_of({{"u", "a", 0}, {"u", "b", 36000}, {"u", "c", 72000}});
  EXPECT_EQ(g.edge_count(), 2u);
  EXPECT_TRUE(g.has_edge(0, 1));
  EXPECT_TRUE(g.has_edge(1, 2));
  EXPECT_FALSE(g.has_edge(0, 2));
}

TEST(BuildGraph, AllWithinWindowRuleLinksEveryPair) {
  const auto g = graph_of({{"u", "a", 0}, {"u", "b", 36000}, {"u", "c", 72000}}, 3,
                          {86400, PairRule::all_within_window});
  EXPECT_EQ(g.edge_count(), 3u);
}

TEST(BuildGraph, UnsortedInputAndTies) {
  // Sorted by time: b(0) c(0) a(10): ties keep input order.
  const auto g = graph_of({{"u", "b", 0}, {"u", "a", 10}, {"u", "c", 0}});
  EXPECT_TRUE(g.has_edge(1, 2));
  EXPECT_TRUE(g.has_edge(0, 2));
  EXPECT_FALSE(g.has_edge(0, 1));
}

TEST(BuildGraph, RepeatsAccumulateWeightAndSelfPairsAreSkipped) {
  const auto g = graph_of({{"u", "a", 0}, {"u", "b", 1}, {"v", "b", 0}, {"v", "a", 5}, {"w", "a", 0}, {"w", "a", 1}});
  EXPECT_EQ(g.edge_count(), 1u);
  EXPECT_EQ(g.neighbors(0)[0].weight, 2u);
  EXPECT_EQ(g.total_weight(), 2u);
}

TEST(BuildGraph, UnknownItemIsNamed) {
  try {
    graph_of({{"u", "zz", 0}});
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("zz"), std::string::npos);
  }
}

TEST(BuildGraph, InvalidWindow) {
  EXPECT_THROW(graph_of({}, 3, {0, PairRule::consecutive}), ConfigError);
}

TEST(BuildGraph, UserOrderDoesNotMatter) {
  Rng rng(21);
  std::vector<Interaction> log;
  for (int u = 0; u < 40; ++u)
    for (int k = 0; k < 6; ++k)
      log.push_back({"u" + std::to_string(u), std::string(1, static_cast<char>('a' + rng.below(8))),
                     static_cast<std::int64_t>(rng.below(200000))});
  const auto base = graph_of(log, 8);
  // Group users and permute the groups, keeping each user's own order.
  std::map<std::string, std::vector<Interaction>> groups;
  for (const auto& x : log) groups[x.user_id].push_back(x);
  std::vector<std::string> users;
  for (const auto& [u, _] : groups) users.push_back(u);
  for (int trial = 0; trial < 5; ++trial) {
    rng.shuffle(users.begin(), users.end());
    std::vector<Interaction> perm;
    for (const auto& u : users) perm.insert(perm.end(), groups[u].begin(), groups[u].end());
    EXPECT_TRUE(graph_of(perm, 8) == base);
  }
}

TEST(BuildGraph, TotalWeightCountsQualifyingPairs) {
  Rng rng(4);
  std::vector<Interaction> log;
  for (int u = 0; u < 30; ++u)
    for (int k = 0; k < 5; ++k)
      log.push_back({"u" + std::to_string(u), std::string(1, static_cast<char>('a' + rng.below(6))),
                     static_cast<std::int64_t>(rng.below(300000))});
  // Independent count: per user sort by time (stable), count adjacent qualifying pairs.
  std::map<std::string, std::vector<std::pair<std::int64_t, std::string>>> seq;
  for (const auto& x : log) seq[x.user_id].emplace_back(x.timestamp, x.item_id);
  std::uint64_t expected = 0;
  for (auto& [u, s] : seq) {
    std::stable_sort(s.begin(), s.end(), [](auto& x, auto& y) { return x.first < y.first; });
    for (std::size_t k = 1; k < s.size(); ++k)
      expected += (s[k].first - s[k - 1].first <= 86400) && s[k].second != s[k - 1].second;
  }
  const auto g = graph_of(log, 6);
  EXPECT_EQ(g.total_weight(), expected);
  EXPECT_TRUE(is_valid_graph(g));
}

TEST(Graph, InvariantsOnRandomGraphs) {
  Rng rng(1);
  for (int t = 0; t < 20; ++t) {
    const auto g = cirp::test::random_graph(1 + rng.below(25), 0.3, rng);
    EXPECT_NO_THROW(validate_graph(g));
    std::size_t deg_sum = 0;
    for (ItemId i = 0; i < g.num_items(); ++i) {
      deg_sum += g.degree(i);
      for (std::size_t k = 1; k < g.neighbors(i).size(); ++k)
        EXPECT_LT(g.neighbors(i)[k - 1].index, g.neighbors(i)[k].index);
      for (const auto& n : g.neighbors(i)) {
        EXPECT_NE(n.index, i);
        EXPECT_TRUE(g.has_edge(n.index, i));
      }
    }
    EXPECT_EQ(deg_sum, 2 * g.edge_count());
  }
}

TEST(Graph, RejectsSelfLoopsAndBadIndices) {
  EXPECT_THROW(ItemGraph::from_edges(3, {{1, 1, 1}}), DataError);
  EXPECT_THROW(ItemGraph::from_edges(3, {{0, 3, 1}}), DataError);
}

TEST(GraphStatsTest, EmptyAndTriangle) {
  const auto empty = graph_stats(ItemGraph::from_edges(4, {}));
  EXPECT_EQ(empty.num_items, 4u);
  EXPECT_EQ(empty.edge_count, 0u);
  EXPECT_TRUE(empty.degree_histogram.empty());
  EXPECT_EQ(empty.isolated, 4u);
  const auto tri = graph_stats(ItemGraph::from_edges(3, {{0, 1, 1}, {1, 2, 1}, {0, 2, 1}}));
  EXPECT_EQ(tri.edge_count, 3u);
  EXPECT_EQ(tri.degree_histogram, (std::map<std::size_t, std::size_t>{{2, 3}}));
  EXPECT_EQ(tri.isolated, 0u);
}

TEST(EdgesFile, TriangleRoundTrip) {
  TempDir dir("edges");
  const auto idx = letters(3);
  const auto g = ItemGraph::from_edges(3, {{0, 1, 2}, {1, 2, 1}, {2, 0, 5}});
  write_edges(g, idx, dir / "e.tsv");
  EXPECT_EQ(cirp::test::slurp(dir / "e.tsv"), "a\tb\t2\na\tc\t5\nb\tc\t1\n");
  EXPECT_TRUE(read_edges(dir / "e.tsv", idx) == g);
}

TEST(EdgesFile, SelfLoopIsRejected) {
  std::istringstream in("a\ta\t1\n");
  EXPECT_THROW(parse_edges(in, letters(2)), DataError);
}

TEST(EdgesFile, SingleListingIsSymmetrized) {
  std::istringstream in("b\ta\t3\n");
  const auto g = parse_edges(in, letters(2));
  EXPECT_TRUE(g.has_edge(0, 1));
  EXPECT_TRUE(g.has_edge(1, 0));
  EXPECT_EQ(g.neighbors(1)[0].weight, 3u);
}

TEST(EdgesFile, AsymmetricWeightsAndDuplicates) {
  std::istringstream both("a\tb\t1\nb\ta\t1\n"), asym("a\tb\t1\nb\ta\t2\n"), dup("a\tb\t1\na\tb\t1\n");
  EXPECT_EQ(parse_edges(both, letters(2)).edge_count(), 1u);
  EXPECT_THROW(parse_edges(asym, letters(2)), DataError);
  EXPECT_THROW(parse_edges(dup, letters(2)), DataError);
}

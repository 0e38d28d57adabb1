//
// Copyright 2026 The TUL Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
//

#include "tul/graph.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <vector>

#include "tul/rng.hpp"

namespace tul {
namespace {

// Record over the last masks.size() of L conv layers with the given masks.
ImportanceRecord Record(std::size_t target, std::size_t L,
                        const std::vector<std::vector<bool>>& masks) {
  ImportanceRecord rec;
  rec.target = target;
  rec.num_conv_layers = L;
  rec.n_ref = 1;
  rec.delta = 0.5;
  for (std::size_t j = 0; j < masks.size(); ++j) {
    LayerImportance li;
    li.layer = L - masks.size() + j;
    li.mask = masks[j];
    for (std::size_t k = 0; k < masks[j].size(); ++k)
      li.alpha.push_back(masks[j][k] ? 1.0f + 0.125f * float(k) : -0.25f * float(k));
    rec.layers.push_back(std::move(li));
  }
  return rec;
}

std::vector<std::vector<bool>> RandomMasks(SplitMix64& rng, const std::vector<std::size_t>& widths) {
  std::vector<std::vector<bool>> out;
  for (std::size_t w : widths) {
    std::vector<bool> m(w);
    for (std::size_t k = 0; k < w; ++k) m[k] = rng.Bernoulli(0.4);
    out.push_back(std::move(m));
  }
  return out;
}

TargetKind KindOf(std::size_t t, const std::vector<std::size_t>& u) {
  return std::find(u.begin(), u.end(), t) != u.end() ? TargetKind::kUnlearning
                                                      : TargetKind::kRemaining;
}

TEST(NodeValueTest, ThreeBranches) {
  EXPECT_EQ(NodeValue(true, TargetKind::kUnlearning, 3), 3);
  EXPECT_EQ(NodeValue(true, TargetKind::kRemaining, 3), -1);
  EXPECT_EQ(NodeValue(true, TargetKind::kRemaining, 7), -1);
  EXPECT_EQ(NodeValue(false, TargetKind::kUnlearning, 3), 0);
  EXPECT_EQ(NodeValue(false, TargetKind::kRemaining, 5), 0);
  EXPECT_THROW(NodeValue(true, TargetKind::kUnlearning, 1), Error);
}

TEST(BuildGraphTest, SingleLayerHasNoEdges) {
  const EssentialGraph g = BuildGraph(Record(0, 4, {{true, false, true}}), TargetKind::kUnlearning, 3, 1);
  EXPECT_TRUE(g.edges.empty());
  EXPECT_EQ(g.layers, (std::vector<std::size_t>{3}));
  EXPECT_EQ(g.values[0], (std::vector<int>{3, 0, 3}));
}

TEST(BuildGraphTest, CompleteBipartiteBetweenImportantNodes) {
  const EssentialGraph g = BuildGraph(
      Record(1, 3, {{true, false, true, false}, {true, true, false, true, false}}),
      TargetKind::kRemaining, 4, 2);
  EXPECT_EQ(g.edges.size(), 6u);
  for (const GraphEdge& e : g.edges) {
    EXPECT_EQ(e.layer_pos, 0u);
    EXPECT_TRUE(e.from == 0 || e.from == 2);
    EXPECT_TRUE(e.to == 0 || e.to == 1 || e.to == 3);
  }
  EXPECT_EQ(g.values[1], (std::vector<int>{-1, -1, 0, -1, 0}));
}

TEST(BuildGraphTest, EmptyMasksGiveZeroValues) {
  const EssentialGraph g =
      BuildGraph(Record(0, 2, {{false, false}, {false, false, false}}), TargetKind::kUnlearning, 3, 2);
  for (const auto& layer : g.values)
    for (int v : layer) EXPECT_EQ(v, 0);
  EXPECT_TRUE(g.edges.empty());
}

TEST(BuildGraphTest, RandomGraphsSatisfyInvariants) {
  SplitMix64 rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t L = 1 + rng.Below(5), sigma = 1 + rng.Below(L);
    std::vector<std::size_t> widths;
    for (std::size_t j = 0; j < sigma; ++j) widths.push_back(1 + rng.Below(8));
    const auto masks = RandomMasks(rng, widths);
    const std::size_t Y = 2 + rng.Below(3);
    const TargetKind kind = rng.Bernoulli(0.5) ? TargetKind::kUnlearning : TargetKind::kRemaining;
    const EssentialGraph g = BuildGraph(Record(0, L, masks), kind, Y, sigma);
    ASSERT_EQ(g.values.size(), sigma);
    for (std::size_t p = 0; p < sigma; ++p) {
      ASSERT_EQ(g.values[p].size(), widths[p]);
      for (int v : g.values[p]) EXPECT_TRUE(v == int(Y) || v == -1 || v == 0);
    }
    std::size_t expected_edges = 0;
    for (std::size_t p = 0; p + 1 < sigma; ++p) {
      expected_edges += std::size_t(std::count(masks[p].begin(), masks[p].end(), true)) *
                        std::size_t(std::count(masks[p + 1].begin(), masks[p + 1].end(), true));
    }
    EXPECT_EQ(g.edges.size(), expected_edges);
    for (const GraphEdge& e : g.edges) {
      ASSERT_LT(e.layer_pos + 1, sigma);
      EXPECT_TRUE(masks[e.layer_pos][e.from]);
      EXPECT_TRUE(masks[e.layer_pos + 1][e.to]);
    }
  }
}

TEST(BuildGraphTest, LayerMismatchIsAnError) {
  const ImportanceRecord rec = Record(0, 5, {{true}, {true}});
  EXPECT_THROW(BuildGraph(rec, TargetKind::kUnlearning, 3, 3), Error);
  EXPECT_THROW(BuildGraph(rec, TargetKind::kUnlearning, 3, 6), Error);
  ImportanceRecord no_mask = rec;
  no_mask.layers[0].mask.clear();
  EXPECT_THROW(BuildGraph(no_mask, TargetKind::kUnlearning, 3, 2), Error);
}

// One unlearning target (0) and two remaining targets over a 4-channel layer.
TEST(BalanceTest, WorkedSums) {
  const std::vector<std::vector<bool>> m0{{true, true, false, true}};
  const std::vector<std::vector<bool>> m1{{false, true, true, false}};
  const std::vector<std::vector<bool>> m2{{false, true, false, false}};
  std::vector<EssentialGraph> gs{
      BuildGraph(Record(0, 3, m0), TargetKind::kUnlearning, 3, 1),
      BuildGraph(Record(1, 3, m1), TargetKind::kRemaining, 3, 1),
      BuildGraph(Record(2, 3, m2), TargetKind::kRemaining, 3, 1)};
  const BalancedGraph b = Balance(gs, {0}, {1, 2});
  EXPECT_EQ(b.values[0], (std::vector<int>{3, 1, -1, 3}));
  EXPECT_EQ(ComputePruneSet(b), (PruneSet{{2, {0, 3}}}));
  EXPECT_EQ(b.importance.size(), 3u);
}

TEST(BalanceTest, TwoUnlearningTargetsExceedThreshold) {
  const std::vector<std::vector<bool>> on{{true, false}};
  const std::vector<std::vector<bool>> off{{false, false}};
  std::vector<EssentialGraph> gs{
      BuildGraph(Record(0, 1, on), TargetKind::kUnlearning, 3, 1),
      BuildGraph(Record(1, 1, on), TargetKind::kUnlearning, 3, 1),
      BuildGraph(Record(2, 1, on), TargetKind::kRemaining, 3, 1)};
  const BalancedGraph b = Balance(gs, {1, 0}, {2});
  EXPECT_EQ(b.values[0][0], 5);
  EXPECT_EQ(ComputePruneSet(b), (PruneSet{{0, {0}}}));
  gs[2] = BuildGraph(Record(2, 1, off), TargetKind::kRemaining, 3, 1);
  EXPECT_EQ(Balance(gs, {0, 1}, {2}).values[0][0], 6);
}

TEST(BalanceTest, RejectsInconsistentInputs) {
  const std::vector<std::vector<bool>> m{{true, false}};
  std::vector<EssentialGraph> gs{
      BuildGraph(Record(0, 2, m), TargetKind::kUnlearning, 3, 1),
      BuildGraph(Record(1, 2, m), TargetKind::kRemaining, 3, 1),
      BuildGraph(Record(2, 2, m), TargetKind::kRemaining, 3, 1)};
  EXPECT_THROW(Balance(gs, {0, 1, 2}, {}), Error);      // D_u = all
  EXPECT_THROW(Balance(gs, {}, {0, 1, 2}), Error);      // D_u empty
  EXPECT_THROW(Balance(gs, {0}, {1}), Error);           // not a partition
  EXPECT_THROW(Balance(gs, {1}, {0, 2}), Error);        // kinds disagree
  EXPECT_THROW(Balance({gs[0], gs[1]}, {0}, {1, 2}), Error);
  auto wide = gs;
  wide[2] = BuildGraph(Record(2, 2, {{true, false, true}}), TargetKind::kRemaining, 3, 1);
  EXPECT_THROW(Balance(wide, {0}, {1, 2}), Error);
  auto dup = gs;
  dup[2] = dup[1];
  EXPECT_THROW(Balance(dup, {0}, {1, 2}), Error);
}

// Brute-force oracle: Y * (#unlearning targets marking it) - (#remaining
// targets marking it), and prune iff that is at least Y. With one unlearning
// target the prune set is "important for it and for no remaining target".
TEST(BalanceTest, MatchesEnumerationOnRandomMasks) {
  SplitMix64 rng(2026);
  for (int trial = 0; trial < 400; ++trial) {
    const std::size_t Y = 2 + rng.Below(3);
    const std::size_t L = 1 + rng.Below(4), sigma = 1 + rng.Below(L);
    std::vector<std::size_t> widths;
    for (std::size_t j = 0; j < sigma; ++j) widths.push_back(1 + rng.Below(8));
    std::vector<std::size_t> all(Y);
    for (std::size_t t = 0; t < Y; ++t) all[t] = t;
    Shuffle(std::span<std::size_t>(all), rng);
    const std::size_t nu = 1 + rng.Below(Y - 1);
    std::vector<std::size_t> u(all.begin(), all.begin() + nu), r(all.begin() + nu, all.end());
    std::vector<std::vector<std::vector<bool>>> masks;
    std::vector<EssentialGraph> gs;
    for (std::size_t t = 0; t < Y; ++t) {
      masks.push_back(RandomMasks(rng, widths));
      gs.push_back(BuildGraph(Record(t, L, masks.back()), KindOf(t, u), Y, sigma));
    }
    const BalancedGraph b = Balance(gs, u, r);
    const PruneSet prune = ComputePruneSet(b);
    for (std::size_t p = 0; p < sigma; ++p) {
      for (std::size_t k = 0; k < widths[p]; ++k) {
        int nu_hits = 0, nr_hits = 0;
        for (std::size_t t = 0; t < Y; ++t) {
          if (!masks[t][p][k]) continue;
          (KindOf(t, u) == TargetKind::kUnlearning ? nu_hits : nr_hits)++;
        }
        EXPECT_EQ(b.values[p][k], int(Y) * nu_hits - nr_hits);
        const std::size_t layer = L - sigma + p;
        const bool pruned = prune.count(layer) &&
                            std::count(prune.at(layer).begin(), prune.at(layer).end(), k);
        EXPECT_EQ(pruned, int(Y) * nu_hits - nr_hits >= int(Y));
        if (nu == 1) EXPECT_EQ(pruned, nu_hits == 1 && nr_hits == 0);
      }
    }

    // Input order does not matter.
    auto permuted = gs;
    Shuffle(std::span<EssentialGraph>(permuted), rng);
    EXPECT_EQ(Balance(permuted, u, r), b);

    // Edges never influence the prune set.
    BalancedGraph rewired = b;
    rewired.edges.clear();
    for (int e = 0; e < 5 && sigma > 1; ++e) {
      const std::size_t p = rng.Below(sigma - 1);
      rewired.edges.insert({p, rng.Below(widths[p]), rng.Below(widths[p + 1])});
    }
    EXPECT_EQ(ComputePruneSet(rewired), prune);
  }
}

TEST(ImportantUnionTest, CollectsListedTargets) {
  const std::vector<ImportanceRecord> recs{
      Record(0, 2, {{true, false, false}, {false, true}}),
      Record(1, 2, {{false, false, true}, {false, true}}),
      Record(2, 2, {{false, true, false}, {true, false}})};
  EXPECT_EQ(ImportantUnion(recs, {0, 1}), (PruneSet{{0, {0, 2}}, {1, {1}}}));
  EXPECT_EQ(ImportantUnion(recs, {2}, 1), (PruneSet{{1, {0}}}));
}

BalancedGraph SampleBalanced() {
  std::vector<EssentialGraph> gs{
      BuildGraph(Record(0, 3, {{true, false}, {true, true, false}}), TargetKind::kUnlearning, 3, 2),
      BuildGraph(Record(1, 3, {{false, true}, {true, false, false}}), TargetKind::kRemaining, 3, 2),
      BuildGraph(Record(2, 3, {{false, false}, {false, false, true}}), TargetKind::kRemaining, 3, 2)};
  return Balance(gs, {0}, {1, 2});
}

TEST(GraphExportTest, DotOmitsZeroNodes) {
  const std::string dot = GraphToDot(SampleBalanced(), "essential");
  const std::string expected =
      "digraph essential {\n"
      "  rankdir=LR;\n"
      "  node [shape=box];\n"
      "  subgraph cluster_l1 {\n"
      "    label=\"layer 1\";\n"
      "    l1c0 [label=\"l1c0=3\"];\n"
      "    l1c1 [label=\"l1c1=-1\"];\n"
      "  }\n"
      "  subgraph cluster_l2 {\n"
      "    label=\"layer 2\";\n"
      "    l2c0 [label=\"l2c0=2\"];\n"
      "    l2c1 [label=\"l2c1=3\"];\n"
      "    l2c2 [label=\"l2c2=-1\"];\n"
      "  }\n"
      "  l1c0 -> l2c0;\n"
      "  l1c0 -> l2c1;\n"
      "  l1c1 -> l2c0;\n"
      "}\n";
  EXPECT_EQ(dot, expected);
}

TEST(GraphExportTest, SingleLayerDotHasNoEdgeLines) {
  const EssentialGraph g = BuildGraph(Record(0, 2, {{true, true}}), TargetKind::kUnlearning, 3, 1);
  const std::string dot = GraphToDot(g, "essential");
  EXPECT_EQ(dot.find("->"), std::string::npos);
  EXPECT_NE(dot.find("subgraph cluster_l1"), std::string::npos);
}

TEST(GraphExportTest, JsonRoundTrip) {
  const BalancedGraph b = SampleBalanced();
  const std::string text = DumpJson(GraphToJson(b));
  EXPECT_EQ(BalancedGraphFromJson(text), b);
  EXPECT_EQ(DumpJson(GraphToJson(BalancedGraphFromJson(text))), text);
  const EssentialGraph e = BuildGraph(Record(1, 4, {{true, false, true}, {false, true}}),
                                      TargetKind::kRemaining, 4, 2);
  EXPECT_EQ(EssentialGraphFromJson(DumpJson(GraphToJson(e))), e);
  EXPECT_THROW(EssentialGraphFromJson(text), Error);
}

TEST(GraphExportTest, JsonVersionAndMalformedInput) {
  Json j = GraphToJson(SampleBalanced());
  EXPECT_EQ(j.at("tulg_version"), 1);
  j["tulg_version"] = 2;
  try {
    BalancedGraphFromJson(j.dump());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kVersionMismatch);
  }
  try {
    BalancedGraphFromJson("{not json");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kValidation);
  }
}

TEST(GraphExportTest, ExportWritesBothFormats) {
  const auto dir = std::filesystem::temp_directory_path();
  const BalancedGraph b = SampleBalanced();
  ExportGraph(b, GraphFormat::kDot, (dir / "tul_graph_test.dot").string());
  ExportGraph(b, GraphFormat::kJson, (dir / "tul_graph_test.json").string());
  EXPECT_EQ(ReadFileText((dir / "tul_graph_test.dot").string()), GraphToDot(b, "essential"));
  EXPECT_EQ(BalancedGraphFromJson(ReadFileText((dir / "tul_graph_test.json").string())), b);
  std::filesystem::remove(dir / "tul_graph_test.dot");
  std::filesystem::remove(dir / "tul_graph_test.json");
}

}  // namespace
}  // namespace tul

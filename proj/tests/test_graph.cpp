#include <doctest.h>

#include <algorithm>
#include <set>

#include "imgtrace/errors.hpp"
#include "imgtrace/graph.hpp"
#include "oracles.hpp"

using namespace imgtrace;

namespace {

annotate::AnnotatedCluster cluster_with(int64_t id, std::vector<std::string> entities,
                                        std::vector<std::string> domains = {}) {
    annotate::AnnotatedCluster a;
    a.cluster_id = id;
    a.image_count = 1;
    for (const std::string& e : entities) a.detection.entities.emplace_back(e, 0.5);
    if (!entities.empty()) a.top_entity = entities.front();
    a.domains = std::move(domains);
    return a;
}

graph::WeightedGraph two_cliques(int size_a, int size_b) {
    graph::WeightedGraph g;
    for (int i = 0; i < size_a + size_b; ++i)
        g.add_node("n" + std::to_string(i), graph::NodeKind::cluster, "");
    auto clique = [&](int from, int to) {
        for (int i = from; i < to; ++i)
            for (int j = i + 1; j < to; ++j)
                g.add_edge(static_cast<uint32_t>(i), static_cast<uint32_t>(j), 1.0);
    };
    clique(0, size_a);
    clique(size_a, size_a + size_b);
    g.add_edge(0, static_cast<uint32_t>(size_a), 1.0);  // the bridge
    return g;
}

std::set<std::set<uint32_t>> as_sets(const std::vector<int32_t>& community_of) {
    std::map<int32_t, std::set<uint32_t>> by;
    for (uint32_t i = 0; i < community_of.size(); ++i) by[community_of[i]].insert(i);
    std::set<std::set<uint32_t>> out;
    for (auto& [c, nodes] : by) out.insert(std::move(nodes));
    return out;
}

}  // namespace

TEST_CASE("graph construction guards") {
    graph::WeightedGraph g;
    g.add_node("a", graph::NodeKind::cluster, "");
    g.add_node("b", graph::NodeKind::cluster, "");
    CHECK_THROWS_AS(g.add_node("a", graph::NodeKind::cluster, ""), ConfigError);
    CHECK_THROWS_AS(g.add_edge(0, 0, 0.5), ConfigError);   // self loop
    CHECK_THROWS_AS(g.add_edge(0, 5, 0.5), ConfigError);   // out of range
    CHECK_THROWS_AS(g.add_edge(0, 1, 0.0), ConfigError);   // weight out of (0,1]
    CHECK_THROWS_AS(g.add_edge(0, 1, 1.5), ConfigError);
    g.add_edge(1, 0, 1.0);
    CHECK_THROWS_AS(g.add_edge(0, 1, 0.5), ConfigError);   // duplicate pair
    CHECK(g.edges.size() == 1);
    CHECK(g.edges[0].u == 0);  // stored with u < v
    CHECK(g.find("b") == 1);
    CHECK(g.find("missing") == UINT32_MAX);
}

TEST_CASE("similarity edges follow the Jaccard threshold exactly") {
    // J = 2/5 = 0.4 -> kept; J = 399/1000 -> dropped.
    std::vector<std::string> a, b;
    for (int i = 0; i < 399; ++i) {  // 399 shared labels
        a.push_back("s" + std::to_string(i));
        b.push_back("s" + std::to_string(i));
    }
    for (int i = 0; i < 300; ++i) a.push_back("a" + std::to_string(i));
    for (int i = 0; i < 301; ++i) b.push_back("b" + std::to_string(i));
    // shared 399, union 399 + 300 + 301 = 1000 -> J = 0.399, one hair under
    const auto below = std::vector<annotate::AnnotatedCluster>{
        cluster_with(0, a), cluster_with(1, b)};
    CHECK(graph::cluster_similarity_graph(below, 0.4).edges.empty());

    const auto at = std::vector<annotate::AnnotatedCluster>{
        cluster_with(0, {"x", "y", "p"}), cluster_with(1, {"x", "y", "q", "r"})};
    // shared {x,y} = 2, union 5 -> J = 0.4 exactly
    const graph::WeightedGraph kept = graph::cluster_similarity_graph(at, 0.4);
    REQUIRE(kept.edges.size() == 1);
    CHECK(kept.edges[0].weight == doctest::Approx(0.4));

    // empty entity sets never connect (J(empty, empty) = 0)
    const auto empty = std::vector<annotate::AnnotatedCluster>{
        cluster_with(0, {}), cluster_with(1, {})};
    CHECK(graph::cluster_similarity_graph(empty, 0.0).edges.empty());

    CHECK_THROWS_AS(graph::cluster_similarity_graph(at, 1.5), ConfigError);
}

TEST_CASE("entity-domain graph weights normalize by the max count") {
    std::vector<annotate::AnnotatedCluster> rows;
    rows.push_back(cluster_with(0, {"Putin"}, {"pinterest.com", "reddit.com"}));
    rows.push_back(cluster_with(1, {"Putin"}, {"pinterest.com"}));
    rows.push_back(cluster_with(2, {"Trump"}, {"reddit.com"}));
    const graph::WeightedGraph g = graph::entity_domain_graph(rows);

    REQUIRE(g.find("entity:Putin") != UINT32_MAX);
    REQUIRE(g.find("domain:pinterest.com") != UINT32_MAX);
    double putin_pinterest = 0, putin_reddit = 0, trump_reddit = 0;
    for (const auto& e : g.edges) {
        const std::string a = g.nodes[e.u].id, b = g.nodes[e.v].id;
        auto is = [&](const char* x, const char* y) {
            return (a == x && b == y) || (a == y && b == x);
        };
        if (is("entity:Putin", "domain:pinterest.com")) putin_pinterest = e.weight;
        if (is("entity:Putin", "domain:reddit.com")) putin_reddit = e.weight;
        if (is("entity:Trump", "domain:reddit.com")) trump_reddit = e.weight;
    }
    CHECK(putin_pinterest == doctest::Approx(1.0));  // count 2 / max 2
    CHECK(putin_reddit == doctest::Approx(0.5));
    CHECK(trump_reddit == doctest::Approx(0.5));
}

TEST_CASE("modularity: hand value and the definitional oracle") {
    graph::WeightedGraph g;
    for (int i = 0; i < 4; ++i) g.add_node("n" + std::to_string(i), graph::NodeKind::cluster, "");
    g.add_edge(0, 1, 1.0);
    g.add_edge(2, 3, 1.0);
    const std::vector<int32_t> pairs = {0, 0, 1, 1};
    CHECK(graph::modularity(g, pairs) == doctest::Approx(0.5));
    CHECK(graph::modularity(g, pairs) == doctest::Approx(oracle::modularity_direct(g, pairs)));
    const std::vector<int32_t> lump = {0, 0, 0, 0};
    CHECK(graph::modularity(g, lump) == doctest::Approx(oracle::modularity_direct(g, lump)));

    graph::WeightedGraph edgeless;
    edgeless.add_node("a", graph::NodeKind::cluster, "");
    CHECK(graph::modularity(edgeless, {0}) == doctest::Approx(0.0));
}

TEST_CASE("louvain recovers planted cliques and the exhaustive maximum") {
    const graph::WeightedGraph g = two_cliques(4, 4);
    const graph::Partition p = graph::louvain(g, 0);
    const auto [best_q, best_labels] = oracle::best_partition(g);
    CHECK(p.modularity == doctest::Approx(best_q));
    CHECK(as_sets(p.community_of) == as_sets(best_labels));
    // deterministic under a fixed seed
    CHECK(graph::louvain(g, 0).community_of == p.community_of);
}

TEST_CASE("top degree filter keeps ceil(fraction * n) by degree then id") {
    graph::WeightedGraph g;
    for (int i = 0; i < 5; ++i) g.add_node("n" + std::to_string(i), graph::NodeKind::cluster, "");
    // degrees: n0=3, n1=1, n2=2, n3=2, n4=0
    g.add_edge(0, 1, 1.0);
    g.add_edge(0, 2, 1.0);
    g.add_edge(0, 3, 1.0);
    g.add_edge(2, 3, 1.0);
    const graph::WeightedGraph kept = graph::top_degree_filter(g, 0.5);  // ceil(2.5) = 3
    REQUIRE(kept.nodes.size() == 3);
    CHECK(kept.find("n0") != UINT32_MAX);
    CHECK(kept.find("n2") != UINT32_MAX);  // ties with n3 resolve by id
    CHECK(kept.find("n3") != UINT32_MAX);
    REQUIRE(kept.edges.size() == 3);  // induced: 0-2, 0-3, 2-3
    CHECK_THROWS_AS(graph::top_degree_filter(g, 0.0), ConfigError);
    CHECK_THROWS_AS(graph::top_degree_filter(g, 1.01), ConfigError);
}

TEST_CASE("gexf round trip preserves nodes, kinds, weights, communities") {
    graph::WeightedGraph g;
    g.add_node("cluster:1", graph::NodeKind::cluster, "Vlad \"the\" <PUTIN> & co");
    g.add_node("entity:Putin", graph::NodeKind::entity, "Putin");
    g.add_node("domain:pinterest.com", graph::NodeKind::domain, "pinterest.com");
    g.add_edge(0, 1, 0.75);
    g.add_edge(1, 2, 0.125);
    graph::Partition p;
    p.community_of = {0, 0, 1};
    p.modularity = graph::modularity(g, p.community_of);

    const std::string xml = graph::to_gexf(g, p);
    const auto [back, back_p] = graph::from_gexf(xml);
    REQUIRE(back.nodes.size() == 3);
    for (size_t i = 0; i < 3; ++i) {
        CHECK(back.nodes[i].id == g.nodes[i].id);
        CHECK(back.nodes[i].kind == g.nodes[i].kind);
        CHECK(back.nodes[i].label == g.nodes[i].label);
    }
    REQUIRE(back.edges.size() == 2);
    CHECK(back.edges[0].weight == doctest::Approx(0.75));
    CHECK(back.edges[1].weight == doctest::Approx(0.125));
    CHECK(back_p.community_of == p.community_of);

    CHECK_THROWS_AS(graph::from_gexf("<gexf><graph><node oops"), ParseError);
}

TEST_CASE("dot export carries ids and communities") {
    graph::WeightedGraph g;
    g.add_node("a", graph::NodeKind::cluster, "first");
    g.add_node("b", graph::NodeKind::cluster, "second");
    g.add_edge(0, 1, 0.5);
    graph::Partition p;
    p.community_of = {0, 1};
    const std::string dot = graph::to_dot(g, p);
    CHECK(dot.find("\"a\"") != std::string::npos);
    CHECK(dot.find("\"b\"") != std::string::npos);
    CHECK(dot.find("--") != std::string::npos);
}

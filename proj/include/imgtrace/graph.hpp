#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "imgtrace/annotate.hpp"

namespace imgtrace::graph {

enum class NodeKind { cluster, entity, domain };

std::string to_string(NodeKind kind);
NodeKind node_kind_from_string(const std::string& text);

struct Node {
    std::string id;
    NodeKind kind = NodeKind::cluster;
    std::string label;
};

// Undirected; edges stored once with u < v (node indices); weights in (0,1];
// no self-loops.
struct WeightedGraph {
    std::vector<Node> nodes;
    struct Edge {
        uint32_t u = 0, v = 0;
        double weight = 0.0;
    };
    std::vector<Edge> edges;

    uint32_t add_node(std::string id, NodeKind kind, std::string label);
    void add_edge(uint32_t u, uint32_t v, double weight);
    // Index of a node id, or UINT32_MAX.
    uint32_t find(const std::string& id) const;
    // Number of incident edges per node (unweighted).
    std::vector<uint32_t> degrees() const;

private:
    std::unordered_map<std::string, uint32_t> index_;
};

struct Partition {
    std::vector<int32_t> community_of;  // by node index
    double modularity = 0.0;
};

// Nodes are clusters (labelled by top entity when present); an edge carries
// the Jaccard similarity of the two clusters' entity-label sets and exists
// iff it reaches the threshold. J of two empty sets is 0.
WeightedGraph cluster_similarity_graph(std::span<const annotate::AnnotatedCluster> annotated,
                                       double threshold = 0.4);

// Bipartite entity/domain graph: one node per distinct top entity and per
// distinct domain; edge weight is the pair's cluster co-occurrence count
// normalized by the maximum count.
WeightedGraph entity_domain_graph(std::span<const annotate::AnnotatedCluster> annotated);

// Newman modularity of a node->community assignment (resolution 1);
// 0 for an edgeless graph.
double modularity(const WeightedGraph& graph, const std::vector<int32_t>& community_of);

// Weighted Louvain: local moves until the gain drops below 1e-7, then
// aggregation, repeated to a fixed point. The seed drives the node
// visitation order, so a fixed seed gives a bit-identical partition.
// Community ids are renumbered by each community's smallest node index.
Partition louvain(const WeightedGraph& graph, uint64_t seed = 0);

// Keep the ceil(fraction * |V|) highest-degree nodes (ties broken toward
// lexicographically smaller ids) and the edges they induce.
WeightedGraph top_degree_filter(const WeightedGraph& graph, double fraction = 0.3);

// GEXF 1.2draft with per-node community and kind attributes; readable back
// by from_gexf (round-trip safe for everything we emit).
std::string to_gexf(const WeightedGraph& graph, const Partition& partition);
std::pair<WeightedGraph, Partition> from_gexf(const std::string& xml);

std::string to_dot(const WeightedGraph& graph, const Partition& partition);

}  // namespace imgtrace::graph

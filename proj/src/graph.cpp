#include "imgtrace/graph.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "imgtrace/detail/format.hpp"
#include "imgtrace/errors.hpp"

namespace imgtrace::graph {

namespace {

// Shortest string that parses back to the same double.
std::string format_weight(double w) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", w);
    return buf;
}

// Fisher-Yates with a plain modulo draw: unlike std::shuffle, the result
// does not depend on the standard library's distribution internals, so a
// seed pins the visitation order across toolchains.
void shuffle_indices(std::vector<uint32_t>& v, std::mt19937_64& rng) {
    for (size_t i = v.size(); i > 1; --i)
        std::swap(v[i - 1], v[rng() % i]);
}

}  // namespace

std::string to_string(NodeKind kind) {
    switch (kind) {
        case NodeKind::cluster: return "cluster";
        case NodeKind::entity: return "entity";
        case NodeKind::domain: return "domain";
    }
    return "cluster";
}

NodeKind node_kind_from_string(const std::string& text) {
    if (text == "cluster") return NodeKind::cluster;
    if (text == "entity") return NodeKind::entity;
    if (text == "domain") return NodeKind::domain;
    throw ParseError("unknown node kind: " + text);
}

uint32_t WeightedGraph::add_node(std::string id, NodeKind kind, std::string label) {
    const auto [it, inserted] = index_.emplace(id, static_cast<uint32_t>(nodes.size()));
    if (!inserted) throw ConfigError("duplicate graph node id: " + id);
    nodes.push_back({std::move(id), kind, std::move(label)});
    return it->second;
}

void WeightedGraph::add_edge(uint32_t u, uint32_t v, double weight) {
    if (u >= nodes.size() || v >= nodes.size())
        throw ConfigError("edge endpoint out of range");
    if (u == v) throw ConfigError("self-loop on node " + nodes[u].id);
    if (!(weight > 0.0) || weight > 1.0)
        throw ConfigError("edge weight must lie in (0, 1], got " + format_weight(weight));
    if (u > v) std::swap(u, v);
    for (const Edge& e : edges)
        if (e.u == u && e.v == v)
            throw ConfigError("duplicate edge " + nodes[u].id + " -- " + nodes[v].id);
    edges.push_back({u, v, weight});
}

uint32_t WeightedGraph::find(const std::string& id) const {
    const auto it = index_.find(id);
    return it == index_.end() ? UINT32_MAX : it->second;
}

std::vector<uint32_t> WeightedGraph::degrees() const {
    std::vector<uint32_t> deg(nodes.size(), 0);
    for (const Edge& e : edges) {
        ++deg[e.u];
        ++deg[e.v];
    }
    return deg;
}

WeightedGraph cluster_similarity_graph(std::span<const annotate::AnnotatedCluster> annotated,
                                       double threshold) {
    if (!(threshold >= 0.0) || threshold > 1.0)
        throw ConfigError("similarity threshold must lie in [0, 1]");
    WeightedGraph g;
    std::vector<std::vector<std::string>> entity_sets(annotated.size());
    for (size_t i = 0; i < annotated.size(); ++i) {
        const auto& a = annotated[i];
        g.add_node("cluster:" + std::to_string(a.cluster_id), NodeKind::cluster,
                   a.top_entity.value_or(""));
        std::set<std::string> labels;
        for (const auto& [label, score] : a.detection.entities) labels.insert(label);
        entity_sets[i].assign(labels.begin(), labels.end());
    }
    for (size_t i = 0; i < annotated.size(); ++i) {
        for (size_t j = i + 1; j < annotated.size(); ++j) {
            const auto &a = entity_sets[i], &b = entity_sets[j];
            size_t inter = 0, ai = 0, bi = 0;
            while (ai < a.size() && bi < b.size()) {
                if (a[ai] < b[bi]) ++ai;
                else if (b[bi] < a[ai]) ++bi;
                else ++inter, ++ai, ++bi;
            }
            const size_t uni = a.size() + b.size() - inter;
            const double jaccard = uni == 0 ? 0.0 : double(inter) / double(uni);
            if (jaccard >= threshold && jaccard > 0.0)
                g.add_edge(static_cast<uint32_t>(i), static_cast<uint32_t>(j), jaccard);
        }
    }
    return g;
}

WeightedGraph entity_domain_graph(std::span<const annotate::AnnotatedCluster> annotated) {
    std::set<std::string> entities, domains;
    std::map<std::pair<std::string, std::string>, uint64_t> counts;
    for (const auto& a : annotated) {
        for (const std::string& d : a.domains) domains.insert(d);
        if (!a.top_entity) continue;
        entities.insert(*a.top_entity);
        for (const std::string& d : a.domains) ++counts[{*a.top_entity, d}];
    }
    uint64_t max_count = 0;
    for (const auto& [pair, count] : counts) max_count = std::max(max_count, count);

    WeightedGraph g;
    for (const std::string& e : entities) g.add_node("entity:" + e, NodeKind::entity, e);
    for (const std::string& d : domains) g.add_node("domain:" + d, NodeKind::domain, d);
    for (const auto& [pair, count] : counts)
        g.add_edge(g.find("entity:" + pair.first), g.find("domain:" + pair.second),
                   double(count) / double(max_count));
    return g;
}

double modularity(const WeightedGraph& graph, const std::vector<int32_t>& community_of) {
    if (community_of.size() != graph.nodes.size())
        throw ConfigError("community assignment does not cover the graph");
    double m2 = 0.0;
    for (const auto& e : graph.edges) m2 += 2.0 * e.weight;
    if (m2 == 0.0) return 0.0;
    std::map<int32_t, double> in_w, tot;
    for (const auto& e : graph.edges) {
        if (community_of[e.u] == community_of[e.v]) in_w[community_of[e.u]] += e.weight;
        tot[community_of[e.u]] += e.weight;
        tot[community_of[e.v]] += e.weight;
    }
    double q = 0.0;
    for (const auto& [c, t] : tot) {
        const auto it = in_w.find(c);
        const double in_c = it == in_w.end() ? 0.0 : it->second;
        q += 2.0 * in_c / m2 - (t / m2) * (t / m2);
    }
    return q;
}

namespace {

constexpr double kGainEps = 1e-7;

// Working graph for Louvain levels. Self-loops (which appear once
// communities are folded into super-nodes) live outside the adjacency lists
// and contribute twice their weight to a node's strength.
struct LevelGraph {
    std::vector<std::vector<std::pair<uint32_t, double>>> adj;
    std::vector<double> self_loop;
    std::vector<double> strength;
    double m2 = 0.0;  // total degree = 2 * total edge weight

    size_t size() const { return adj.size(); }

    void finalize() {
        strength.assign(size(), 0.0);
        for (size_t i = 0; i < size(); ++i) {
            for (const auto& [j, w] : adj[i]) strength[i] += w;
            strength[i] += 2.0 * self_loop[i];
        }
        m2 = std::accumulate(strength.begin(), strength.end(), 0.0);
    }
};

// One round of local moves. Returns the node->community map (community ids
// are arbitrary afterwards) and whether any node moved.
std::pair<std::vector<int32_t>, bool> one_level(const LevelGraph& g, std::mt19937_64& rng) {
    const size_t n = g.size();
    std::vector<int32_t> comm(n);
    std::iota(comm.begin(), comm.end(), 0);
    if (g.m2 == 0.0) return {comm, false};

    std::vector<double> tot(g.strength);
    std::vector<uint32_t> order(n);
    std::iota(order.begin(), order.end(), 0u);
    shuffle_indices(order, rng);

    bool any_move = false;
    for (bool moved = true; moved;) {
        moved = false;
        for (uint32_t i : order) {
            const int32_t c_old = comm[i];
            // Weight from i into each adjacent community (self excluded).
            std::map<int32_t, double> neigh;
            neigh[c_old] += 0.0;
            for (const auto& [j, w] : g.adj[i]) neigh[comm[j]] += w;
            tot[c_old] -= g.strength[i];

            const double base = neigh[c_old] - tot[c_old] * g.strength[i] / g.m2;
            double best_gain = base;
            int32_t best_c = c_old;
            for (const auto& [c, w] : neigh) {
                if (c == c_old) continue;
                const double gain = w - tot[c] * g.strength[i] / g.m2;
                if (gain > best_gain + kGainEps) {
                    best_gain = gain;
                    best_c = c;
                }
            }
            tot[best_c] += g.strength[i];
            if (best_c != c_old) {
                comm[i] = best_c;
                moved = true;
                any_move = true;
            }
        }
    }
    return {comm, any_move};
}

// Densify community ids to 0..k-1 (ascending) in place; returns k.
size_t densify(std::vector<int32_t>& comm) {
    std::map<int32_t, int32_t> remap;
    for (int32_t c : comm) remap.emplace(c, 0);
    int32_t next = 0;
    for (auto& [c, dense] : remap) dense = next++;
    for (int32_t& c : comm) c = remap[c];
    return static_cast<size_t>(next);
}

LevelGraph aggregate(const LevelGraph& g, const std::vector<int32_t>& comm, size_t k) {
    LevelGraph coarse;
    coarse.adj.assign(k, {});
    coarse.self_loop.assign(k, 0.0);
    std::map<std::pair<int32_t, int32_t>, double> between;
    for (size_t i = 0; i < g.size(); ++i) {
        coarse.self_loop[comm[i]] += g.self_loop[i];
        for (const auto& [j, w] : g.adj[i]) {
            if (j < i) continue;  // each undirected pair once
            if (comm[i] == comm[j]) coarse.self_loop[comm[i]] += w;
            else {
                const auto key = std::minmax(comm[i], comm[j]);
                between[{key.first, key.second}] += w;
            }
        }
    }
    for (const auto& [pair, w] : between) {
        coarse.adj[pair.first].emplace_back(pair.second, w);
        coarse.adj[pair.second].emplace_back(pair.first, w);
    }
    coarse.finalize();
    return coarse;
}

}  // namespace

Partition louvain(const WeightedGraph& graph, uint64_t seed) {
    Partition out;
    const size_t n0 = graph.nodes.size();
    out.community_of.assign(n0, 0);
    if (n0 == 0) return out;

    LevelGraph level;
    level.adj.assign(n0, {});
    level.self_loop.assign(n0, 0.0);
    for (const auto& e : graph.edges) {
        level.adj[e.u].emplace_back(e.v, e.weight);
        level.adj[e.v].emplace_back(e.u, e.weight);
    }
    level.finalize();

    std::vector<int32_t> node_to_super(n0);
    std::iota(node_to_super.begin(), node_to_super.end(), 0);
    std::mt19937_64 rng(seed);
    for (;;) {
        auto [comm, improved] = one_level(level, rng);
        if (!improved) break;
        const size_t k = densify(comm);
        for (size_t i = 0; i < n0; ++i) node_to_super[i] = comm[node_to_super[i]];
        if (k == level.size()) break;
        level = aggregate(level, comm, k);
    }

    // Stable labels: communities numbered by their smallest node index.
    std::map<int32_t, int32_t> first_seen;
    int32_t next = 0;
    for (int32_t super : node_to_super)
        if (first_seen.emplace(super, next).second) ++next;
    for (size_t i = 0; i < n0; ++i) out.community_of[i] = first_seen[node_to_super[i]];
    out.modularity = modularity(graph, out.community_of);
    return out;
}

WeightedGraph top_degree_filter(const WeightedGraph& graph, double fraction) {
    if (!(fraction > 0.0) || fraction > 1.0)
        throw ConfigError("degree filter fraction must lie in (0, 1]");
    const size_t n = graph.nodes.size();
    const auto keep_n = static_cast<size_t>(std::ceil(fraction * double(n)));
    const std::vector<uint32_t> deg = graph.degrees();
    std::vector<uint32_t> order(n);
    std::iota(order.begin(), order.end(), 0u);
    std::sort(order.begin(), order.end(), [&](uint32_t a, uint32_t b) {
        if (deg[a] != deg[b]) return deg[a] > deg[b];
        return graph.nodes[a].id < graph.nodes[b].id;
    });
    std::vector<char> keep(n, 0);
    for (size_t i = 0; i < keep_n && i < n; ++i) keep[order[i]] = 1;

    WeightedGraph out;
    std::vector<uint32_t> new_index(n, UINT32_MAX);
    for (uint32_t i = 0; i < n; ++i)
        if (keep[i])
            new_index[i] = out.add_node(graph.nodes[i].id, graph.nodes[i].kind,
                                        graph.nodes[i].label);
    for (const auto& e : graph.edges)
        if (keep[e.u] && keep[e.v]) out.add_edge(new_index[e.u], new_index[e.v], e.weight);
    return out;
}

std::string to_gexf(const WeightedGraph& graph, const Partition& partition) {
    if (partition.community_of.size() != graph.nodes.size())
        throw ConfigError("partition does not cover the graph");
    using detail::xml_escape;
    std::ostringstream out;
    out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
        << "<gexf xmlns=\"http://www.gexf.net/1.2draft\" version=\"1.2\">\n"
        << "  <graph mode=\"static\" defaultedgetype=\"undirected\">\n"
        << "    <attributes class=\"node\">\n"
        << "      <attribute id=\"community\" title=\"community\" type=\"long\"/>\n"
        << "      <attribute id=\"kind\" title=\"kind\" type=\"string\"/>\n"
        << "    </attributes>\n"
        << "    <nodes>\n";
    for (size_t i = 0; i < graph.nodes.size(); ++i) {
        const Node& node = graph.nodes[i];
        out << "      <node id=\"" << xml_escape(node.id) << "\" label=\""
            << xml_escape(node.label) << "\">\n"
            << "        <attvalues>\n"
            << "          <attvalue for=\"community\" value=\"" << partition.community_of[i]
            << "\"/>\n"
            << "          <attvalue for=\"kind\" value=\"" << to_string(node.kind) << "\"/>\n"
            << "        </attvalues>\n"
            << "      </node>\n";
    }
    out << "    </nodes>\n    <edges>\n";
    for (size_t i = 0; i < graph.edges.size(); ++i) {
        const auto& e = graph.edges[i];
        out << "      <edge id=\"" << i << "\" source=\"" << xml_escape(graph.nodes[e.u].id)
            << "\" target=\"" << xml_escape(graph.nodes[e.v].id) << "\" weight=\""
            << format_weight(e.weight) << "\"/>\n";
    }
    out << "    </edges>\n  </graph>\n</gexf>\n";
    return out.str();
}

namespace {

std::string xml_unescape(const std::string& text) {
    std::string out;
    out.reserve(text.size());
    for (size_t i = 0; i < text.size();) {
        if (text[i] != '&') {
            out += text[i++];
            continue;
        }
        const size_t semi = text.find(';', i);
        const std::string ent = semi == std::string::npos ? "" : text.substr(i, semi - i + 1);
        if (ent == "&lt;") out += '<';
        else if (ent == "&gt;") out += '>';
        else if (ent == "&amp;") out += '&';
        else if (ent == "&quot;") out += '"';
        else if (ent == "&apos;") out += '\'';
        else {
            out += text[i++];
            continue;
        }
        i = semi + 1;
    }
    return out;
}

struct XmlTag {
    std::string name;
    std::map<std::string, std::string> attrs;
};

// Pulls start tags out of a document in order. Only as general as the GEXF
// this module writes, which is all from_gexf promises to read.
std::vector<XmlTag> scan_tags(const std::string& xml) {
    std::vector<XmlTag> tags;
    size_t pos = 0;
    while ((pos = xml.find('<', pos)) != std::string::npos) {
        const size_t end = xml.find('>', pos);
        if (end == std::string::npos) throw ParseError("unterminated XML tag");
        std::string body = xml.substr(pos + 1, end - pos - 1);
        pos = end + 1;
        if (body.empty() || body[0] == '/' || body[0] == '?' || body[0] == '!') continue;
        if (!body.empty() && body.back() == '/') body.pop_back();

        XmlTag tag;
        size_t i = 0;
        while (i < body.size() && !std::isspace(static_cast<unsigned char>(body[i]))) ++i;
        tag.name = body.substr(0, i);
        while (i < body.size()) {
            while (i < body.size() && std::isspace(static_cast<unsigned char>(body[i]))) ++i;
            if (i >= body.size()) break;
            const size_t eq = body.find('=', i);
            if (eq == std::string::npos) throw ParseError("malformed attribute in <" + tag.name + ">");
            const std::string name = body.substr(i, eq - i);
            const size_t q1 = body.find('"', eq);
            if (q1 == std::string::npos) throw ParseError("unquoted attribute in <" + tag.name + ">");
            const size_t q2 = body.find('"', q1 + 1);
            if (q2 == std::string::npos) throw ParseError("unterminated attribute in <" + tag.name + ">");
            tag.attrs[name] = xml_unescape(body.substr(q1 + 1, q2 - q1 - 1));
            i = q2 + 1;
        }
        tags.push_back(std::move(tag));
    }
    return tags;
}

}  // namespace

std::pair<WeightedGraph, Partition> from_gexf(const std::string& xml) {
    WeightedGraph g;
    std::vector<int32_t> communities;
    int64_t current_node = -1;
    struct PendingEdge {
        std::string source, target;
        double weight;
    };
    std::vector<PendingEdge> pending;

    for (const XmlTag& tag : scan_tags(xml)) {
        if (tag.name == "node") {
            const auto id = tag.attrs.find("id");
            if (id == tag.attrs.end()) throw ParseError("GEXF node without id");
            const auto label = tag.attrs.find("label");
            current_node = g.add_node(id->second, NodeKind::cluster,
                                      label == tag.attrs.end() ? "" : label->second);
            communities.push_back(0);
        } else if (tag.name == "attvalue") {
            if (current_node < 0) continue;
            const auto key = tag.attrs.find("for");
            const auto value = tag.attrs.find("value");
            if (key == tag.attrs.end() || value == tag.attrs.end()) continue;
            if (key->second == "community")
                communities[current_node] =
                    static_cast<int32_t>(std::strtol(value->second.c_str(), nullptr, 10));
            else if (key->second == "kind")
                g.nodes[current_node].kind = node_kind_from_string(value->second);
        } else if (tag.name == "edge") {
            current_node = -1;
            const auto source = tag.attrs.find("source");
            const auto target = tag.attrs.find("target");
            const auto weight = tag.attrs.find("weight");
            if (source == tag.attrs.end() || target == tag.attrs.end())
                throw ParseError("GEXF edge without source/target");
            pending.push_back(
                {source->second, target->second,
                 weight == tag.attrs.end() ? 1.0 : std::strtod(weight->second.c_str(), nullptr)});
        }
    }

    for (const PendingEdge& e : pending) {
        const uint32_t u = g.find(e.source), v = g.find(e.target);
        if (u == UINT32_MAX || v == UINT32_MAX)
            throw ParseError("GEXF edge references unknown node " +
                             (u == UINT32_MAX ? e.source : e.target));
        g.add_edge(u, v, e.weight);
    }

    Partition p;
    p.community_of = std::move(communities);
    p.modularity = modularity(g, p.community_of);
    return {std::move(g), std::move(p)};
}

std::string to_dot(const WeightedGraph& graph, const Partition& partition) {
    if (partition.community_of.size() != graph.nodes.size())
        throw ConfigError("partition does not cover the graph");
    auto quote = [](const std::string& s) {
        std::string out = "\"";
        for (char c : s) {
            if (c == '"' || c == '\\') out += '\\';
            out += c;
        }
        return out + "\"";
    };
    std::ostringstream out;
    out << "graph similarity {\n";
    for (size_t i = 0; i < graph.nodes.size(); ++i)
        out << "  " << quote(graph.nodes[i].id) << " [label=" << quote(graph.nodes[i].label)
            << ", community=" << partition.community_of[i] << "];\n";
    for (const auto& e : graph.edges)
        out << "  " << quote(graph.nodes[e.u].id) << " -- " << quote(graph.nodes[e.v].id)
            << " [weight=" << format_weight(e.weight) << "];\n";
    out << "}\n";
    return out.str();
}

}  // namespace imgtrace::graph

#include "imgtrace/cluster.hpp"

#include <algorithm>
#include <bit>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <unordered_map>

#include <json.hpp>

#include "imgtrace/bktree.hpp"
#include "imgtrace/errors.hpp"

namespace imgtrace::cluster {

namespace {

// One entry per distinct hash value; image_idx holds positions into the
// id-sorted corpus, ascending, so .front() is the smallest member id.
struct UniqueHash {
    uint64_t bits = 0;
    std::vector<uint32_t> image_idx;
};

struct Dsu {
    std::vector<uint32_t> parent;

    explicit Dsu(size_t n) : parent(n) {
        for (size_t i = 0; i < n; ++i) parent[i] = static_cast<uint32_t>(i);
    }
    uint32_t find(uint32_t x) {
        while (parent[x] != x) {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        return x;
    }
    void unite(uint32_t a, uint32_t b) {
        a = find(a);
        b = find(b);
        if (a != b) parent[std::max(a, b)] = std::min(a, b);
    }
};

// Sorted corpus view: positions into `corpus` ordered by id, with duplicate
// ids rejected so member lists and tie-breaks are well defined.
std::vector<uint32_t> order_by_id(std::span<const IdHash> corpus) {
    std::vector<uint32_t> order(corpus.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<uint32_t>(i);
    std::sort(order.begin(), order.end(),
              [&](uint32_t a, uint32_t b) { return corpus[a].id < corpus[b].id; });
    for (size_t i = 1; i < order.size(); ++i) {
        if (corpus[order[i - 1]].id == corpus[order[i]].id)
            throw ConfigError("duplicate image id in corpus: " + corpus[order[i]].id);
    }
    return order;
}

std::vector<UniqueHash> aggregate(std::span<const IdHash> corpus,
                                  const std::vector<uint32_t>& order) {
    std::map<uint64_t, std::vector<uint32_t>> groups;
    for (uint32_t pos = 0; pos < order.size(); ++pos)
        groups[corpus[order[pos]].hash.bits].push_back(pos);
    std::vector<UniqueHash> uniq;
    uniq.reserve(groups.size());
    for (auto& [bits, idx] : groups) uniq.push_back({bits, std::move(idx)});
    return uniq;
}

// Weighted exact medoid over distinct hashes: the divisor (cluster size) is
// shared, so comparing integer distance sums is the same as comparing means
// and dodges any floating-point tie ambiguity.
size_t medoid_position(const std::vector<UniqueHash>& uniq,
                       const std::vector<uint32_t>& members) {
    uint64_t best_sum = std::numeric_limits<uint64_t>::max();
    uint32_t best_pos = std::numeric_limits<uint32_t>::max();
    for (uint32_t a : members) {
        uint64_t sum = 0;
        for (uint32_t b : members)
            sum += uint64_t(uniq[b].image_idx.size()) *
                   uint64_t(std::popcount(uniq[a].bits ^ uniq[b].bits));
        const uint32_t pos = uniq[a].image_idx.front();
        if (sum < best_sum || (sum == best_sum && pos < best_pos)) {
            best_sum = sum;
            best_pos = pos;
        }
    }
    return best_pos;
}

void validate(const ClusterParams& params) {
    if (params.eps < 0 || params.eps > 64)
        throw ConfigError("eps must lie in [0, 64], got " + std::to_string(params.eps));
    if (params.min_samples < 1)
        throw ConfigError("min_samples must be >= 1, got " +
                          std::to_string(params.min_samples));
}

}  // namespace

Clustering cluster_corpus(std::span<const IdHash> corpus, const ClusterParams& params) {
    validate(params);
    Clustering result;
    if (corpus.empty()) return result;

    const std::vector<uint32_t> order = order_by_id(corpus);
    const std::vector<UniqueHash> uniq = aggregate(corpus, order);
    const size_t n = uniq.size();

    BkTree tree;
    for (const UniqueHash& u : uniq) tree.insert(u.bits);

    auto index_of = [&](uint64_t bits) {
        const auto it = std::lower_bound(
            uniq.begin(), uniq.end(), bits,
            [](const UniqueHash& u, uint64_t key) { return u.bits < key; });
        return static_cast<uint32_t>(it - uniq.begin());
    };

    // Epsilon-neighborhoods over distinct hashes (each neighborhood contains
    // the hash itself). A hash is core when the images carried by its
    // neighborhood, multiplicities included, reach min_samples.
    std::vector<std::vector<uint32_t>> neighbors(n);
    std::vector<char> core(n, 0);
    std::vector<uint64_t> scratch;
    for (size_t i = 0; i < n; ++i) {
        scratch.clear();
        tree.query(uniq[i].bits, params.eps, scratch);
        uint64_t weight = 0;
        neighbors[i].reserve(scratch.size());
        for (uint64_t bits : scratch) {
            const uint32_t j = index_of(bits);
            neighbors[i].push_back(j);
            weight += uniq[j].image_idx.size();
        }
        std::sort(neighbors[i].begin(), neighbors[i].end());
        core[i] = weight >= static_cast<uint64_t>(params.min_samples);
    }

    Dsu dsu(n);
    for (uint32_t i = 0; i < n; ++i) {
        if (!core[i]) continue;
        for (uint32_t j : neighbors[i])
            if (core[j]) dsu.unite(i, j);
    }

    // Preliminary numbering orders components by the smallest id among their
    // core members; border hashes then join the lowest-numbered eligible
    // component, mirroring a scan of the corpus in id order.
    std::unordered_map<uint32_t, uint32_t> root_min_pos;  // dsu root -> min corpus pos
    for (uint32_t i = 0; i < n; ++i) {
        if (!core[i]) continue;
        const uint32_t root = dsu.find(i);
        const uint32_t pos = uniq[i].image_idx.front();
        auto [it, inserted] = root_min_pos.emplace(root, pos);
        if (!inserted) it->second = std::min(it->second, pos);
    }
    std::vector<std::pair<uint32_t, uint32_t>> prelim;  // (min pos, root)
    prelim.reserve(root_min_pos.size());
    for (const auto& [root, pos] : root_min_pos) prelim.emplace_back(pos, root);
    std::sort(prelim.begin(), prelim.end());
    std::unordered_map<uint32_t, uint32_t> prelim_rank;  // root -> rank
    for (uint32_t r = 0; r < prelim.size(); ++r) prelim_rank.emplace(prelim[r].second, r);

    std::vector<uint32_t> assigned_root(n, std::numeric_limits<uint32_t>::max());
    for (uint32_t i = 0; i < n; ++i) {
        if (core[i]) {
            assigned_root[i] = dsu.find(i);
            continue;
        }
        uint32_t best_rank = std::numeric_limits<uint32_t>::max();
        for (uint32_t j : neighbors[i]) {
            if (!core[j]) continue;
            best_rank = std::min(best_rank, prelim_rank.at(dsu.find(j)));
        }
        if (best_rank != std::numeric_limits<uint32_t>::max())
            assigned_root[i] = prelim[best_rank].second;
    }

    // Collect per-component hash lists, then renumber by ascending smallest
    // member id (border members included this time).
    std::unordered_map<uint32_t, std::vector<uint32_t>> component;  // root -> uniq idx
    for (uint32_t i = 0; i < n; ++i)
        if (assigned_root[i] != std::numeric_limits<uint32_t>::max())
            component[assigned_root[i]].push_back(i);

    struct Built {
        uint32_t min_pos;
        std::vector<uint32_t> hashes;
    };
    std::vector<Built> built;
    built.reserve(component.size());
    for (auto& [root, hashes] : component) {
        uint32_t min_pos = std::numeric_limits<uint32_t>::max();
        for (uint32_t i : hashes) min_pos = std::min(min_pos, uniq[i].image_idx.front());
        built.push_back({min_pos, std::move(hashes)});
    }
    std::sort(built.begin(), built.end(),
              [](const Built& a, const Built& b) { return a.min_pos < b.min_pos; });

    result.clusters.reserve(built.size());
    for (size_t c = 0; c < built.size(); ++c) {
        Cluster cl;
        cl.id = static_cast<int64_t>(c);
        cl.unique_hashes = built[c].hashes.size();
        std::vector<uint32_t> positions;
        for (uint32_t i : built[c].hashes)
            positions.insert(positions.end(), uniq[i].image_idx.begin(),
                             uniq[i].image_idx.end());
        std::sort(positions.begin(), positions.end());
        cl.members.reserve(positions.size());
        for (uint32_t pos : positions) cl.members.push_back(corpus[order[pos]].id);
        cl.medoid = corpus[order[medoid_position(uniq, built[c].hashes)]].id;
        result.clusters.push_back(std::move(cl));
    }

    for (uint32_t i = 0; i < n; ++i) {
        if (assigned_root[i] != std::numeric_limits<uint32_t>::max()) continue;
        for (uint32_t pos : uniq[i].image_idx) result.noise.push_back(corpus[order[pos]].id);
    }
    std::sort(result.noise.begin(), result.noise.end());
    return result;
}

std::string medoid(std::span<const IdHash> members) {
    if (members.empty()) throw EmptyClusterError("medoid of an empty cluster");
    const std::vector<uint32_t> order = order_by_id(members);
    const std::vector<UniqueHash> uniq = aggregate(members, order);
    std::vector<uint32_t> all(uniq.size());
    for (uint32_t i = 0; i < all.size(); ++i) all[i] = i;
    return members[order[medoid_position(uniq, all)]].id;
}

StatsSummary cluster_stats(const Clustering& clustering) {
    StatsSummary s;
    s.cluster_count = clustering.clusters.size();
    s.noise_images = clustering.noise.size();
    std::vector<uint64_t> uniques;
    uniques.reserve(clustering.clusters.size());
    for (const Cluster& c : clustering.clusters) {
        s.clustered_images += c.members.size();
        uniques.push_back(c.unique_hashes);
    }
    if (!uniques.empty()) {
        uint64_t total = 0;
        for (uint64_t u : uniques) total += u;
        s.mean_unique = double(total) / double(uniques.size());
        std::sort(uniques.begin(), uniques.end());
        const size_t mid = uniques.size() / 2;
        s.median_unique = uniques.size() % 2 ? double(uniques[mid])
                                             : (double(uniques[mid - 1]) + double(uniques[mid])) / 2.0;
        std::map<uint32_t, uint64_t> hist;
        for (uint64_t u : uniques) ++hist[static_cast<uint32_t>(u)];
        s.unique_hist.assign(hist.begin(), hist.end());
    }
    return s;
}

void write_clusters_jsonl(const Clustering& clustering, std::ostream& out) {
    for (const Cluster& c : clustering.clusters) {
        nlohmann::ordered_json rec;
        rec["id"] = c.id;
        rec["medoid"] = c.medoid;
        rec["members"] = c.members;
        rec["unique_hashes"] = c.unique_hashes;
        out << rec.dump() << '\n';
    }
}

Clustering read_clusters_jsonl(std::istream& in) {
    Clustering result;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json rec = nlohmann::json::parse(line, nullptr, false);
        if (rec.is_discarded() || !rec.is_object())
            throw ParseError("clusters line " + std::to_string(lineno) + ": not a JSON object");
        try {
            Cluster c;
            c.id = rec.at("id").get<int64_t>();
            c.medoid = rec.at("medoid").get<std::string>();
            c.members = rec.at("members").get<std::vector<std::string>>();
            c.unique_hashes = rec.at("unique_hashes").get<uint64_t>();
            result.clusters.push_back(std::move(c));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError("clusters line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return result;
}

}  // namespace imgtrace::cluster

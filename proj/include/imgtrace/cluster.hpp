#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "imgtrace/phash.hpp"

namespace imgtrace::cluster {

struct IdHash {
    std::string id;
    phash::PHash64 hash;
};

struct Cluster {
    int64_t id = 0;
    std::vector<std::string> members;  // sorted by id
    std::string medoid;
    uint64_t unique_hashes = 0;
};

// Partition of the corpus: clusters plus noise ids.
struct Clustering {
    std::vector<Cluster> clusters;
    std::vector<std::string> noise;  // sorted
};

struct ClusterParams {
    int eps = 8;          // Hamming radius
    int min_samples = 2;  // neighbors within eps, counting the point itself
};

// DBSCAN over Hamming space. Identical hashes are pre-aggregated and the
// neighbor search runs on a BK-tree over unique hashes, which yields the
// same partition as the quadratic definition. Deterministic: border points
// join the lowest-numbered eligible cluster and final cluster ids are
// assigned by ascending smallest member id.
Clustering cluster_corpus(std::span<const IdHash> corpus, const ClusterParams& params);

// Member minimizing the mean Hamming distance to the whole cluster
// (self included); ties resolved to the smallest id.
std::string medoid(std::span<const IdHash> members);

struct StatsSummary {
    uint64_t cluster_count = 0;
    uint64_t clustered_images = 0;
    uint64_t noise_images = 0;
    double mean_unique = 0.0;
    double median_unique = 0.0;
    // CDF-ready: (unique hash count, number of clusters with that count),
    // ascending by count.
    std::vector<std::pair<uint32_t, uint64_t>> unique_hist;
};

StatsSummary cluster_stats(const Clustering& clustering);

// JSON-lines persistence, one record per cluster:
// {"id":..,"medoid":"..","members":[..],"unique_hashes":..}
void write_clusters_jsonl(const Clustering& clustering, std::ostream& out);
Clustering read_clusters_jsonl(std::istream& in);

}  // namespace imgtrace::cluster

#pragma once

#include <cstdint>
#include <utility>
#include <vector>

namespace imgtrace::cluster {

// Metric index over unique 64-bit hashes under the Hamming distance.
// Single-writer construction; queries are const and safe to run
// concurrently once building is done.
class BkTree {
public:
    // Duplicate keys are ignored; returns true when the key was new.
    bool insert(uint64_t key);

    // Appends every stored key with hamming(key, q) <= radius to `out`.
    void query(uint64_t q, int radius, std::vector<uint64_t>& out) const;

    size_t size() const { return nodes_.size(); }
    bool empty() const { return nodes_.empty(); }

private:
    struct Node {
        uint64_t key;
        // (edge distance, child index), unordered, linear-scanned: Hamming
        // fan-out is at most 65 so small vectors beat maps here.
        std::vector<std::pair<uint8_t, uint32_t>> children;
    };
    std::vector<Node> nodes_;
};

}  // namespace imgtrace::cluster

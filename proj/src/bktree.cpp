#include "imgtrace/bktree.hpp"

#include <bit>

namespace imgtrace::cluster {

namespace {
inline int dist(uint64_t a, uint64_t b) { return std::popcount(a ^ b); }
}

bool BkTree::insert(uint64_t key) {
    if (nodes_.empty()) {
        nodes_.push_back({key, {}});
        return true;
    }
    uint32_t cur = 0;
    for (;;) {
        const int d = dist(key, nodes_[cur].key);
        if (d == 0) return false;
        uint32_t next = UINT32_MAX;
        for (const auto& [edge, child] : nodes_[cur].children) {
            if (edge == d) {
                next = child;
                break;
            }
        }
        if (next == UINT32_MAX) {
            nodes_.push_back({key, {}});
            nodes_[cur].children.emplace_back(static_cast<uint8_t>(d),
                                              static_cast<uint32_t>(nodes_.size() - 1));
            return true;
        }
        cur = next;
    }
}

void BkTree::query(uint64_t q, int radius, std::vector<uint64_t>& out) const {
    if (nodes_.empty()) return;
    std::vector<uint32_t> stack{0};
    while (!stack.empty()) {
        const Node& node = nodes_[stack.back()];
        stack.pop_back();
        const int d = dist(q, node.key);
        if (d <= radius) out.push_back(node.key);
        const int lo = d - radius, hi = d + radius;
        for (const auto& [edge, child] : node.children) {
            if (edge >= lo && edge <= hi) stack.push_back(child);
        }
    }
}

}  // namespace imgtrace::cluster

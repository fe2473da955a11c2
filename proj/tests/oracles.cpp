#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "imgtrace/errors.hpp"

namespace oracle {

using imgtrace::cluster::Clustering;
using imgtrace::cluster::IdHash;
using imgtrace::phash::GrayImage;
using imgtrace::phash::PHash64;

std::vector<double> dct2_direct(const GrayImage& img32) {
    const int n = 32;
    const double pi = std::acos(-1.0);
    std::vector<double> out(static_cast<size_t>(n) * n, 0.0);
    for (int v = 0; v < n; ++v) {      // vertical frequency
        for (int u = 0; u < n; ++u) {  // horizontal frequency
            double acc = 0.0;
            for (int y = 0; y < n; ++y)
                for (int x = 0; x < n; ++x)
                    acc += img32.at(x, y) * std::cos((2 * x + 1) * u * pi / (2.0 * n)) *
                           std::cos((2 * y + 1) * v * pi / (2.0 * n));
            const double au = u == 0 ? std::sqrt(1.0 / n) : std::sqrt(2.0 / n);
            const double av = v == 0 ? std::sqrt(1.0 / n) : std::sqrt(2.0 / n);
            out[static_cast<size_t>(v) * n + u] = au * av * acc;
        }
    }
    return out;
}

PHash64 phash_direct(const GrayImage& img32) {
    const std::vector<double> full = dct2_direct(img32);
    std::array<double, 64> block{};
    for (int v = 0; v < 8; ++v)
        for (int u = 0; u < 8; ++u)
            block[static_cast<size_t>(v) * 8 + u] = full[static_cast<size_t>(v) * 32 + u];

    std::vector<double> ac(block.begin() + 1, block.end());
    std::sort(ac.begin(), ac.end());
    const double median = ac[31];
    PHash64 h;
    for (int i = 0; i < 64; ++i)
        if (block[static_cast<size_t>(i)] > median) h.bits |= 1ull << (63 - i);
    return h;
}

Clustering dbscan_brute(std::span<const IdHash> corpus, int eps, int min_samples) {
    const size_t n = corpus.size();
    std::vector<std::vector<size_t>> neighbors(n);
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < n; ++j)
            if (imgtrace::phash::hamming(corpus[i].hash, corpus[j].hash) <= eps)
                neighbors[i].push_back(j);
    std::vector<bool> core(n);
    for (size_t i = 0; i < n; ++i)
        core[i] = neighbors[i].size() >= static_cast<size_t>(min_samples);

    // Connected components of core points.
    std::vector<int64_t> label(n, -1);
    int64_t next = 0;
    for (size_t i = 0; i < n; ++i) {
        if (!core[i] || label[i] != -1) continue;
        std::vector<size_t> stack{i};
        label[i] = next;
        while (!stack.empty()) {
            const size_t cur = stack.back();
            stack.pop_back();
            for (size_t j : neighbors[cur]) {
                if (core[j] && label[j] == -1) {
                    label[j] = next;
                    stack.push_back(j);
                }
            }
        }
        ++next;
    }

    // Preliminary cluster numbers: ascending smallest core-member id.
    std::vector<std::string> smallest(static_cast<size_t>(next));
    for (size_t i = 0; i < n; ++i)
        if (core[i] && (smallest[label[i]].empty() || corpus[i].id < smallest[label[i]]))
            smallest[label[i]] = corpus[i].id;
    std::vector<int64_t> rank_of(static_cast<size_t>(next));
    {
        std::vector<int64_t> order(static_cast<size_t>(next));
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(),
                  [&](int64_t a, int64_t b) { return smallest[a] < smallest[b]; });
        for (size_t r = 0; r < order.size(); ++r) rank_of[order[r]] = static_cast<int64_t>(r);
    }

    // Border points join the lowest-numbered cluster among their core
    // neighbors; the rest is noise.
    for (size_t i = 0; i < n; ++i) {
        if (core[i]) continue;
        int64_t best = -1;
        for (size_t j : neighbors[i]) {
            if (!core[j]) continue;
            const int64_t r = rank_of[label[j]];
            if (best == -1 || r < best) best = r;
        }
        if (best != -1)
            for (int64_t c = 0; c < next; ++c)
                if (rank_of[c] == best) label[i] = c;
    }

    std::vector<std::vector<std::string>> members(static_cast<size_t>(next));
    Clustering result;
    for (size_t i = 0; i < n; ++i) {
        if (label[i] == -1) result.noise.push_back(corpus[i].id);
        else members[label[i]].push_back(corpus[i].id);
    }
    std::sort(result.noise.begin(), result.noise.end());

    std::vector<size_t> order;
    for (size_t c = 0; c < members.size(); ++c)
        if (!members[c].empty()) order.push_back(c);
    for (size_t c : order) std::sort(members[c].begin(), members[c].end());
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return members[a].front() < members[b].front(); });
    for (size_t rank = 0; rank < order.size(); ++rank) {
        imgtrace::cluster::Cluster c;
        c.id = static_cast<int64_t>(rank);
        c.members = members[order[rank]];
        c.medoid = medoid_exhaustive([&] {
            std::vector<IdHash> rows;
            for (const std::string& id : c.members)
                for (const IdHash& row : corpus)
                    if (row.id == id) rows.push_back(row);
            return rows;
        }());
        std::set<uint64_t> uniq;
        for (const std::string& id : c.members)
            for (const IdHash& row : corpus)
                if (row.id == id) uniq.insert(row.hash.bits);
        c.unique_hashes = uniq.size();
        result.clusters.push_back(std::move(c));
    }
    return result;
}

bool same_partition(const Clustering& a, const Clustering& b) {
    auto canonical = [](const Clustering& c) {
        std::vector<std::vector<std::string>> sets;
        for (const auto& cl : c.clusters) {
            std::vector<std::string> m = cl.members;
            std::sort(m.begin(), m.end());
            sets.push_back(std::move(m));
        }
        std::sort(sets.begin(), sets.end());
        std::vector<std::string> noise = c.noise;
        std::sort(noise.begin(), noise.end());
        return std::make_pair(sets, noise);
    };
    return canonical(a) == canonical(b);
}

std::string medoid_exhaustive(std::span<const IdHash> members) {
    if (members.empty()) throw imgtrace::EmptyClusterError("medoid of empty member list");
    std::string best;
    unsigned long long best_sum = 0;
    for (const IdHash& candidate : members) {
        unsigned long long sum = 0;
        for (const IdHash& other : members)
            sum += static_cast<unsigned long long>(
                imgtrace::phash::hamming(candidate.hash, other.hash));
        if (best.empty() || sum < best_sum || (sum == best_sum && candidate.id < best))
            best = candidate.id, best_sum = sum;
    }
    return best;
}

double modularity_direct(const imgtrace::graph::WeightedGraph& g,
                         const std::vector<int32_t>& community_of) {
    const size_t n = g.nodes.size();
    std::vector<std::vector<double>> A(n, std::vector<double>(n, 0.0));
    for (const auto& e : g.edges) {
        A[e.u][e.v] += e.weight;
        A[e.v][e.u] += e.weight;
    }
    std::vector<double> k(n, 0.0);
    double two_m = 0.0;
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < n; ++j) {
            k[i] += A[i][j];
            two_m += A[i][j];
        }
    if (two_m == 0.0) return 0.0;
    double q = 0.0;
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < n; ++j)
            if (community_of[i] == community_of[j]) q += A[i][j] - k[i] * k[j] / two_m;
    return q / two_m;
}

std::pair<double, std::vector<int32_t>> best_partition(
    const imgtrace::graph::WeightedGraph& g) {
    const size_t n = g.nodes.size();
    if (n > 12) throw imgtrace::ConfigError("best_partition is exhaustive; n must be <= 12");
    std::vector<int32_t> labels(n, 0);
    std::vector<int32_t> best_labels(n, 0);
    double best_q = modularity_direct(g, labels);

    // Restricted-growth enumeration of all set partitions.
    auto recurse = [&](auto&& self, size_t i, int32_t max_label) -> void {
        if (i == n) {
            const double q = modularity_direct(g, labels);
            if (q > best_q) {
                best_q = q;
                best_labels = labels;
            }
            return;
        }
        for (int32_t c = 0; c <= max_label + 1; ++c) {
            labels[i] = c;
            self(self, i + 1, std::max(max_label, c));
        }
    };
    if (n > 0) recurse(recurse, 1, 0);
    return {best_q, best_labels};
}

std::vector<std::map<int64_t, double>> enumerate_parent_marginals(
    const std::vector<std::vector<double>>& times_per_process, double horizon,
    const imgtrace::hawkes::Kernel& kernel, const imgtrace::hawkes::GibbsConfig& config) {
    struct Ev {
        double t;
        int proc;
    };
    std::vector<Ev> events;
    for (size_t p = 0; p < times_per_process.size(); ++p)
        for (double t : times_per_process[p]) events.push_back({t, static_cast<int>(p)});
    std::sort(events.begin(), events.end(), [](const Ev& a, const Ev& b) {
        return a.t != b.t ? a.t < b.t : a.proc < b.proc;
    });
    const size_t n = events.size();
    const size_t k = times_per_process.size();
    if (n > 10) throw imgtrace::ConfigError("enumeration oracle limited to 10 events");

    // Independent kernel density: exponential truncated at max_lag and
    // renormalized to unit mass on (0, max_lag].
    const double mass = 1.0 - std::exp(-kernel.max_lag / kernel.tau);
    auto log_g = [&](double lag) {
        return -lag / kernel.tau - std::log(kernel.tau * mass);
    };

    std::vector<std::vector<int64_t>> slots(n);  // -1 first, then candidate indices
    for (size_t i = 0; i < n; ++i) {
        slots[i].push_back(-1);
        for (size_t j = 0; j < i; ++j) {
            const double lag = events[i].t - events[j].t;
            if (lag > 0.0 && lag < kernel.max_lag) slots[i].push_back(static_cast<int64_t>(j));
        }
    }

    std::vector<uint64_t> N(k, 0);
    for (const Ev& e : events) ++N[e.proc];

    std::vector<size_t> choice(n, 0);
    std::vector<double> logw;
    std::vector<std::vector<size_t>> picks;
    for (;;) {
        // Score this full assignment with the rates integrated out.
        std::vector<uint64_t> B(k, 0);
        std::vector<std::vector<uint64_t>> M(k, std::vector<uint64_t>(k, 0));
        double lags = 0.0;
        for (size_t i = 0; i < n; ++i) {
            const int64_t parent = slots[i][choice[i]];
            if (parent < 0) {
                ++B[events[i].proc];
            } else {
                ++M[events[parent].proc][events[i].proc];
                lags += log_g(events[i].t - events[parent].t);
            }
        }
        double w = lags;
        for (size_t d = 0; d < k; ++d)
            w += std::lgamma(config.lambda0_shape + B[d]) -
                 (config.lambda0_shape + B[d]) * std::log(config.lambda0_rate + horizon);
        for (size_t s = 0; s < k; ++s)
            for (size_t d = 0; d < k; ++d)
                w += std::lgamma(config.w_shape + M[s][d]) -
                     (config.w_shape + M[s][d]) * std::log(config.w_rate + N[s]);
        logw.push_back(w);
        picks.push_back(choice);

        size_t i = 0;
        while (i < n && ++choice[i] == slots[i].size()) choice[i++] = 0;
        if (i == n) break;
    }

    const double peak = *std::max_element(logw.begin(), logw.end());
    double total = 0.0;
    for (double& w : logw) {
        w = std::exp(w - peak);
        total += w;
    }
    std::vector<std::map<int64_t, double>> marginals(n);
    for (size_t i = 0; i < n; ++i)
        for (int64_t slot : slots[i]) marginals[i][slot] = 0.0;
    for (size_t a = 0; a < picks.size(); ++a)
        for (size_t i = 0; i < n; ++i) marginals[i][slots[i][picks[a][i]]] += logw[a] / total;
    return marginals;
}

double attribution_tv(const std::vector<std::pair<int64_t, double>>& fitted,
                      const std::map<int64_t, double>& exact) {
    std::map<int64_t, double> f(fitted.begin(), fitted.end());
    std::set<int64_t> keys;
    for (const auto& [key, p] : f) keys.insert(key);
    for (const auto& [key, p] : exact) keys.insert(key);
    double tv = 0.0;
    for (int64_t key : keys) {
        const double a = f.count(key) ? f.at(key) : 0.0;
        const double b = exact.count(key) ? exact.at(key) : 0.0;
        tv += std::abs(a - b);
    }
    return 0.5 * tv;
}

}  // namespace oracle

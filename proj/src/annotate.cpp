#include "imgtrace/annotate.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <chrono>
#include <cstdlib>
#include <set>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "imgtrace/detail/format.hpp"
#include "imgtrace/detail/io.hpp"
#include "imgtrace/detail/worker_pool.hpp"
#include "imgtrace/errors.hpp"

namespace imgtrace::annotate {

namespace {

nlohmann::ordered_json detection_to_nlohmann(const WebDetection& d) {
    nlohmann::ordered_json j;
    auto& entities = j["entities"] = nlohmann::ordered_json::array();
    for (const auto& [label, score] : d.entities)
        entities.push_back(nlohmann::ordered_json::array({label, score}));
    j["full_match_urls"] = d.full_match_urls;
    j["page_urls"] = d.page_urls;
    return j;
}

WebDetection detection_from_nlohmann(const nlohmann::json& j, const std::string& where) {
    if (!j.is_object()) throw ParseError(where + ": detection is not a JSON object");
    WebDetection d;
    try {
        for (const auto& pair : j.at("entities")) {
            if (!pair.is_array() || pair.size() != 2)
                throw ParseError(where + ": entity entries must be [label, score] pairs");
            d.entities.emplace_back(pair[0].get<std::string>(), pair[1].get<double>());
        }
        // URL lists may be omitted; an absent list means "none known".
        if (j.contains("full_match_urls"))
            d.full_match_urls = j["full_match_urls"].get<std::vector<std::string>>();
        if (j.contains("page_urls"))
            d.page_urls = j["page_urls"].get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(where + ": " + e.what());
    }
    for (const auto& [label, score] : d.entities) {
        if (label.empty()) throw ParseError(where + ": empty entity label");
        if (score < 0.0) throw ParseError(where + ": negative entity score");
    }
    return d;
}

// Multi-label public suffixes. Single-label TLDs need no listing: the
// fallback keeps the last two labels, which is the right boundary for them.
const std::set<std::string>& multi_label_suffixes() {
    static const std::set<std::string> suffixes = {
        "ac.jp",  "ac.uk",  "co.id",  "co.il",  "co.in",  "co.jp",  "co.ke",
        "co.kr",  "co.nz",  "co.th",  "co.uk",  "co.za",  "com.ar", "com.au",
        "com.br", "com.cn", "com.eg", "com.hk", "com.mx", "com.my", "com.pk",
        "com.ph", "com.pl", "com.sa", "com.sg", "com.tr", "com.tw", "com.ua",
        "com.vn", "edu.au", "go.jp",  "gov.au", "gov.cn", "gov.uk", "ne.jp",
        "net.au", "net.br", "net.cn", "net.in", "net.nz", "net.pl", "net.uk",
        "or.jp",  "or.kr",  "org.au", "org.br", "org.cn", "org.il", "org.in",
        "org.nz", "org.pl", "org.uk", "sch.uk",
    };
    return suffixes;
}

std::string lowercase(std::string s) {
    for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

class RateLimiter {
public:
    explicit RateLimiter(double max_per_s) {
        if (max_per_s > 0.0)
            interval_ = std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                std::chrono::duration<double>(1.0 / max_per_s));
    }

    void acquire() {
        if (interval_.count() == 0) return;
        std::chrono::steady_clock::time_point wake;
        {
            std::scoped_lock lock(mu_);
            const auto now = std::chrono::steady_clock::now();
            next_ = std::max(next_, now);
            wake = next_;
            next_ += interval_;
        }
        std::this_thread::sleep_until(wake);
    }

private:
    std::chrono::steady_clock::duration interval_{0};
    std::chrono::steady_clock::time_point next_{};
    std::mutex mu_;
};

}  // namespace

std::optional<std::string> top_entity(const WebDetection& detection) {
    if (detection.entities.empty()) return std::nullopt;
    const auto* best = &detection.entities.front();
    for (const auto& entry : detection.entities)
        if (entry.second > best->second) best = &entry;
    return best->first;
}

std::optional<std::string> registrable_domain(const std::string& url) {
    std::string rest = url;
    if (const auto scheme = rest.find("://"); scheme != std::string::npos)
        rest = rest.substr(scheme + 3);
    if (const auto at = rest.find('@');
        at != std::string::npos && at < rest.find_first_of("/?#"))
        rest = rest.substr(at + 1);
    rest = rest.substr(0, rest.find_first_of("/?#"));
    // IPv6 literals keep their brackets and have no registrable domain.
    if (!rest.empty() && rest.front() == '[') return std::nullopt;
    rest = rest.substr(0, rest.find(':'));
    while (!rest.empty() && rest.back() == '.') rest.pop_back();
    if (rest.empty()) return std::nullopt;
    std::string host = lowercase(rest);

    std::vector<std::string> labels;
    size_t start = 0;
    for (size_t i = 0; i <= host.size(); ++i) {
        if (i == host.size() || host[i] == '.') {
            if (i == start) return std::nullopt;  // empty label
            labels.push_back(host.substr(start, i - start));
            start = i + 1;
        }
    }
    if (labels.size() <= 2) return host;

    // IPv4: the whole address is the "domain".
    if (std::all_of(host.begin(), host.end(),
                    [](char c) { return c == '.' || (c >= '0' && c <= '9'); }))
        return host;

    const std::string last_two = labels[labels.size() - 2] + "." + labels.back();
    const size_t keep = multi_label_suffixes().count(last_two) ? 3 : 2;
    std::string out;
    for (size_t i = labels.size() - keep; i < labels.size(); ++i) {
        if (!out.empty()) out += '.';
        out += labels[i];
    }
    return out;
}

FixtureProvider::FixtureProvider(const std::filesystem::path& fixture_file) {
    const std::string text = detail::read_file_text(fixture_file);
    nlohmann::json j = nlohmann::json::parse(text, nullptr, false);
    if (j.is_discarded() || !j.is_object())
        throw ParseError("fixture " + fixture_file.string() + ": not a JSON object");
    for (const auto& [key, value] : j.items())
        table_.emplace(key, detection_from_nlohmann(value, "fixture entry " + key));
}

WebDetection FixtureProvider::fetch(const std::string& phash_hex,
                                    std::span<const std::byte>) {
    calls_.fetch_add(1);
    const auto it = table_.find(phash_hex);
    if (it == table_.end())
        throw FixtureMissError("no fixture entry for phash " + phash_hex);
    return it->second;
}

HttpProvider::HttpProvider(HttpProviderConfig config) : config_(std::move(config)) {
    if (config_.base_url.empty()) throw ConfigError("provider base URL is empty");
    if (config_.max_attempts < 1) throw ConfigError("provider max_attempts must be >= 1");
}

HttpProvider HttpProvider::from_env() {
    const char* url = std::getenv("IMGTRACE_PROVIDER_URL");
    if (!url || !*url)
        throw ConfigError("IMGTRACE_PROVIDER_URL is not set; pass a fixture for offline runs");
    const char* token = std::getenv("IMGTRACE_PROVIDER_TOKEN");
    HttpProviderConfig config;
    config.base_url = url;
    config.token = token ? token : "";
    return HttpProvider(std::move(config));
}

WebDetection HttpProvider::fetch(const std::string& phash_hex,
                                 std::span<const std::byte> image_bytes) {
    nlohmann::ordered_json body;
    body["phash"] = phash_hex;
    body["image"] = detail::base64_encode(
        {reinterpret_cast<const uint8_t*>(image_bytes.data()), image_bytes.size()});
    const std::string payload = body.dump();

    int last_status = 0;
    int attempts_made = 0;
    std::string last_error;
    for (int attempt = 1; attempt <= config_.max_attempts; ++attempt) {
        attempts_made = attempt;
        if (attempt > 1)
            std::this_thread::sleep_for(
                std::chrono::milliseconds(config_.backoff_ms * (attempt - 1)));
        httplib::Client client(config_.base_url);
        client.set_connection_timeout(config_.timeout_s);
        client.set_read_timeout(config_.timeout_s);
        httplib::Headers headers;
        if (!config_.token.empty())
            headers.emplace("Authorization", "Bearer " + config_.token);
        auto res = client.Post("/v1/web_detection", headers, payload, "application/json");
        if (!res) {
            last_status = 0;
            last_error = "transport error: " + httplib::to_string(res.error());
            continue;
        }
        last_status = res->status;
        if (res->status == 200) {
            nlohmann::json j = nlohmann::json::parse(res->body, nullptr, false);
            if (j.is_discarded())
                throw ProviderError("provider returned malformed JSON for " + phash_hex,
                                    attempt, res->status);
            return detection_from_nlohmann(j, "provider response for " + phash_hex);
        }
        last_error = "HTTP " + std::to_string(res->status);
        // 4xx other than 429 will not improve with retries.
        if (res->status >= 400 && res->status < 500 && res->status != 429) break;
    }
    throw ProviderError("web detection failed for " + phash_hex + " (" + last_error + ")",
                        attempts_made, last_status);
}

DetectionCache::DetectionCache(std::filesystem::path dir) : dir_(std::move(dir)) {
    std::filesystem::create_directories(dir_);
}

std::optional<WebDetection> DetectionCache::lookup(const std::string& phash_hex) const {
    const auto path = dir_ / (phash_hex + ".json");
    {
        std::scoped_lock lock(mu_);
        if (!std::filesystem::exists(path)) return std::nullopt;
    }
    return detection_from_json(detail::read_file_text(path));
}

void DetectionCache::store(const std::string& phash_hex, const WebDetection& detection) {
    std::scoped_lock lock(mu_);
    detail::atomic_write_text(dir_ / (phash_hex + ".json"), detection_to_json(detection));
}

WebDetection detect(const std::string& phash_hex, std::span<const std::byte> image_bytes,
                    WebDetectionProvider& provider, DetectionCache* cache) {
    if (cache)
        if (auto hit = cache->lookup(phash_hex)) return *std::move(hit);
    WebDetection detection = provider.fetch(phash_hex, image_bytes);
    if (cache) cache->store(phash_hex, detection);
    return detection;
}

std::map<std::string, WebDetection> detect_all(std::span<const DetectionJob> jobs,
                                               WebDetectionProvider& provider,
                                               DetectionCache* cache,
                                               const DetectOptions& options) {
    RateLimiter limiter(options.max_requests_per_s);
    std::vector<std::optional<WebDetection>> results(jobs.size());
    detail::parallel_for(jobs.size(), options.workers, [&](size_t i) {
        const DetectionJob& job = jobs[i];
        if (cache) {
            if (auto hit = cache->lookup(job.phash_hex)) {
                results[i] = *std::move(hit);
                return;
            }
        }
        limiter.acquire();
        WebDetection detection = provider.fetch(job.phash_hex, job.image_bytes);
        if (cache) cache->store(job.phash_hex, detection);
        results[i] = std::move(detection);
    });
    std::map<std::string, WebDetection> out;
    for (size_t i = 0; i < jobs.size(); ++i) out[jobs[i].phash_hex] = *std::move(results[i]);
    return out;
}

std::vector<AnnotatedCluster> annotate_clusters(
    const cluster::Clustering& clustering,
    const std::map<int64_t, WebDetection>& detections) {
    std::vector<int64_t> gaps;
    for (const cluster::Cluster& c : clustering.clusters)
        if (!detections.count(c.id)) gaps.push_back(c.id);
    if (!gaps.empty())
        throw AnnotationGapError(
            std::to_string(gaps.size()) + " cluster(s) lack a detection", gaps);

    std::vector<AnnotatedCluster> out;
    out.reserve(clustering.clusters.size());
    for (const cluster::Cluster& c : clustering.clusters) {
        AnnotatedCluster a;
        a.cluster_id = c.id;
        a.image_count = c.members.size();
        a.detection = detections.at(c.id);
        a.top_entity = top_entity(a.detection);
        std::set<std::string> domains;
        for (const auto* urls : {&a.detection.full_match_urls, &a.detection.page_urls})
            for (const std::string& url : *urls)
                if (auto domain = registrable_domain(url)) domains.insert(*std::move(domain));
        a.domains.assign(domains.begin(), domains.end());
        out.push_back(std::move(a));
    }
    return out;
}

std::map<std::string, std::optional<std::string>> assign_entities(
    const cluster::Clustering& clustering,
    const std::map<int64_t, WebDetection>& detections) {
    std::map<std::string, std::optional<std::string>> out;
    std::vector<int64_t> gaps;
    for (const cluster::Cluster& c : clustering.clusters) {
        const auto it = detections.find(c.id);
        if (it == detections.end()) {
            gaps.push_back(c.id);
            continue;
        }
        const std::optional<std::string> entity = top_entity(it->second);
        for (const std::string& member : c.members) out[member] = entity;
    }
    if (!gaps.empty())
        throw AnnotationGapError(
            std::to_string(gaps.size()) + " cluster(s) lack a detection", gaps);
    return out;
}

namespace {

std::vector<PopularityRow> rank_rows(
    std::map<std::string, std::pair<uint64_t, uint64_t>>& counts,  // label -> (clusters, images)
    uint64_t total_clusters, uint64_t total_images) {
    std::vector<PopularityRow> rows;
    rows.reserve(counts.size());
    for (const auto& [label, c] : counts) {
        PopularityRow row;
        row.label = label;
        row.cluster_count = c.first;
        row.image_count = c.second;
        row.cluster_pct = detail::format_percent(c.first, total_clusters);
        row.image_pct = detail::format_percent(c.second, total_images);
        rows.push_back(std::move(row));
    }
    std::sort(rows.begin(), rows.end(), [](const PopularityRow& a, const PopularityRow& b) {
        if (a.cluster_count != b.cluster_count) return a.cluster_count > b.cluster_count;
        if (a.image_count != b.image_count) return a.image_count > b.image_count;
        return a.label < b.label;
    });
    return rows;
}

}  // namespace

std::vector<PopularityRow> entity_popularity(std::span<const AnnotatedCluster> annotated) {
    uint64_t total_clusters = annotated.size(), total_images = 0;
    std::map<std::string, std::pair<uint64_t, uint64_t>> counts;
    for (const AnnotatedCluster& a : annotated) {
        total_images += a.image_count;
        if (!a.top_entity) continue;
        auto& c = counts[*a.top_entity];
        c.first += 1;
        c.second += a.image_count;
    }
    return rank_rows(counts, total_clusters, total_images);
}

std::vector<PopularityRow> domain_popularity(std::span<const AnnotatedCluster> annotated) {
    uint64_t total_clusters = annotated.size(), total_images = 0;
    std::map<std::string, std::pair<uint64_t, uint64_t>> counts;
    for (const AnnotatedCluster& a : annotated) {
        total_images += a.image_count;
        for (const std::string& domain : a.domains) {  // already unique per cluster
            auto& c = counts[domain];
            c.first += 1;
            c.second += a.image_count;
        }
    }
    return rank_rows(counts, total_clusters, total_images);
}

std::string detection_to_json(const WebDetection& detection) {
    return detection_to_nlohmann(detection).dump(2) + "\n";
}

WebDetection detection_from_json(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text, nullptr, false);
    if (j.is_discarded()) throw ParseError("detection JSON is malformed");
    return detection_from_nlohmann(j, "detection");
}

}  // namespace imgtrace::annotate

#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "imgtrace/cluster.hpp"

namespace imgtrace::annotate {

// Result of a web-detection lookup for one image. Entity order is the
// provider's order and is significant (score ties resolve to the first
// listed label).
struct WebDetection {
    std::vector<std::pair<std::string, double>> entities;
    std::vector<std::string> full_match_urls;
    std::vector<std::string> page_urls;

    bool operator==(const WebDetection&) const = default;
};

// Label of the maximum-score entity; first listed wins ties; none when the
// entity list is empty.
std::optional<std::string> top_entity(const WebDetection& detection);

// Registrable domain of a URL: host lowercased, scheme/userinfo/port/path
// stripped, cut at the public-suffix boundary (compact built-in suffix set;
// unknown suffixes fall back to the last two labels). Returns none for URLs
// without a usable host.
std::optional<std::string> registrable_domain(const std::string& url);

struct AnnotatedCluster {
    int64_t cluster_id = 0;
    uint64_t image_count = 0;
    WebDetection detection;
    std::optional<std::string> top_entity;
    std::vector<std::string> domains;  // sorted, unique, lowercase registrable domains
};

class WebDetectionProvider {
public:
    virtual ~WebDetectionProvider() = default;
    // phash_hex identifies the image content; bytes carry the encoded image
    // for providers that upload it (the fixture provider ignores them).
    virtual WebDetection fetch(const std::string& phash_hex,
                               std::span<const std::byte> image_bytes) = 0;
};

// Offline provider backed by a JSON file mapping pHash hex to detections.
// The hermetic test/default path.
class FixtureProvider : public WebDetectionProvider {
public:
    explicit FixtureProvider(const std::filesystem::path& fixture_file);

    WebDetection fetch(const std::string& phash_hex,
                       std::span<const std::byte> image_bytes) override;
    int64_t calls() const { return calls_.load(); }

private:
    std::map<std::string, WebDetection> table_;
    std::atomic<int64_t> calls_{0};
};

// Live web-detection service. POSTs {"phash": hex, "image": base64} to
// <base_url>/v1/web_detection with a bearer token and expects the fixture
// entry shape back; retries transient failures with linear backoff before
// raising ProviderError.
struct HttpProviderConfig {
    std::string base_url;
    std::string token;
    int max_attempts = 3;
    int backoff_ms = 250;
    int timeout_s = 30;
};

class HttpProvider : public WebDetectionProvider {
public:
    explicit HttpProvider(HttpProviderConfig config);
    // Reads IMGTRACE_PROVIDER_URL / IMGTRACE_PROVIDER_TOKEN; missing URL is a
    // ConfigError.
    static HttpProvider from_env();

    WebDetection fetch(const std::string& phash_hex,
                       std::span<const std::byte> image_bytes) override;

private:
    HttpProviderConfig config_;
};

// Content-addressed detection cache: one JSON file per pHash under dir.
// Writes are serialized and atomic, so concurrent fetch workers can share
// one cache.
class DetectionCache {
public:
    explicit DetectionCache(std::filesystem::path dir);

    std::optional<WebDetection> lookup(const std::string& phash_hex) const;
    void store(const std::string& phash_hex, const WebDetection& detection);

private:
    std::filesystem::path dir_;
    mutable std::mutex mu_;
};

// Cache-through fetch of one detection.
WebDetection detect(const std::string& phash_hex, std::span<const std::byte> image_bytes,
                    WebDetectionProvider& provider, DetectionCache* cache);

// An image whose detection is wanted: the content hash plus (optionally) the
// encoded bytes for uploading providers.
struct DetectionJob {
    std::string phash_hex;
    std::vector<std::byte> image_bytes;
};

struct DetectOptions {
    int workers = 4;
    double max_requests_per_s = 0.0;  // 0 = unlimited
};

// Bounded-worker fetch of many detections with provider-level rate limiting;
// results keyed by pHash hex.
std::map<std::string, WebDetection> detect_all(std::span<const DetectionJob> jobs,
                                               WebDetectionProvider& provider,
                                               DetectionCache* cache,
                                               const DetectOptions& options = {});

// Join clusters with their medoid detections (keyed by cluster id). Clusters
// without a detection raise AnnotationGapError listing every gap at once.
std::vector<AnnotatedCluster> annotate_clusters(
    const cluster::Clustering& clustering,
    const std::map<int64_t, WebDetection>& detections);

// Propagate each cluster's top entity to its members.
std::map<std::string, std::optional<std::string>> assign_entities(
    const cluster::Clustering& clustering,
    const std::map<int64_t, WebDetection>& detections);

// One row of a popularity table; percentages are pre-formatted to one
// decimal, half-up ("3.5").
struct PopularityRow {
    std::string label;
    uint64_t cluster_count = 0;
    std::string cluster_pct;
    uint64_t image_count = 0;
    std::string image_pct;
};

// Ranked by cluster_count desc (ties: image_count desc, then label).
// Percentages are over all clusters / all member images in `annotated`.
std::vector<PopularityRow> entity_popularity(std::span<const AnnotatedCluster> annotated);

// Domains count once per cluster regardless of URL multiplicity.
std::vector<PopularityRow> domain_popularity(std::span<const AnnotatedCluster> annotated);

// JSON (de)serialization of detections; the same object shape is used by the
// fixture file, the cache files, and the live provider's responses.
std::string detection_to_json(const WebDetection& detection);
WebDetection detection_from_json(const std::string& text);

}  // namespace imgtrace::annotate

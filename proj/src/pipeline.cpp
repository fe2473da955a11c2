#include "imgtrace/pipeline.hpp"

#include <algorithm>
#include <ctime>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include <json.hpp>

#include "imgtrace/annotate.hpp"
#include "imgtrace/cluster.hpp"
#include "imgtrace/detail/format.hpp"
#include "imgtrace/detail/io.hpp"
#include "imgtrace/errors.hpp"
#include "imgtrace/graph.hpp"
#include "imgtrace/phash.hpp"

#ifndef IMGTRACE_VERSION
#define IMGTRACE_VERSION "0.0.0"
#endif

namespace imgtrace::pipeline {

namespace fs = std::filesystem;

namespace {

constexpr const char* kManifestName = "manifest.json";

// RFC-4180-style field split (quotes, doubled quotes); no embedded newlines.
std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    for (size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            fields.push_back(std::move(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    fields.push_back(std::move(cur));
    return fields;
}

void expect_keys(const nlohmann::json& obj, const std::string& where,
                 const std::set<std::string>& allowed) {
    for (const auto& [key, value] : obj.items())
        if (!allowed.count(key))
            throw ConfigError("config " + where + ": unknown key '" + key + "'");
}

template <typename T>
void read_key(const nlohmann::json& obj, const char* key, T& out) {
    if (!obj.contains(key)) return;
    try {
        out = obj.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config key '") + key + "': " + e.what());
    }
}

void read_path(const nlohmann::json& obj, const char* key, fs::path& out) {
    std::string s;
    read_key(obj, key, s);
    if (!s.empty()) out = s;
}

}  // namespace

PipelineConfig load_config(const fs::path& config_file) {
    std::string text;
    try {
        text = detail::read_file_text(config_file);
    } catch (const IoError& e) {
        throw ConfigError(e.what());
    }
    nlohmann::json j = nlohmann::json::parse(text, nullptr, false);
    if (j.is_discarded() || !j.is_object())
        throw ConfigError("config " + config_file.string() + " is not a JSON object");
    expect_keys(j, "(top level)",
                {"corpus_dir", "events_csv", "tweets_csv", "fixture", "cache_dir",
                 "output_dir", "cluster", "annotate", "graph", "events", "hawkes", "report",
                 "seed"});

    PipelineConfig cfg;
    read_path(j, "corpus_dir", cfg.corpus_dir);
    read_path(j, "events_csv", cfg.events_csv);
    read_path(j, "tweets_csv", cfg.tweets_csv);
    read_path(j, "fixture", cfg.fixture);
    read_path(j, "cache_dir", cfg.cache_dir);
    read_path(j, "output_dir", cfg.output_dir);
    read_key(j, "seed", cfg.seed);

    if (j.contains("cluster")) {
        const auto& s = j["cluster"];
        expect_keys(s, "cluster", {"eps", "min_samples"});
        read_key(s, "eps", cfg.eps);
        read_key(s, "min_samples", cfg.min_samples);
    }
    if (j.contains("annotate")) {
        const auto& s = j["annotate"];
        expect_keys(s, "annotate", {"provider", "workers", "max_requests_per_s"});
        read_key(s, "provider", cfg.provider);
        read_key(s, "workers", cfg.annotate_workers);
        read_key(s, "max_requests_per_s", cfg.max_requests_per_s);
        if (cfg.provider != "fixture" && cfg.provider != "http")
            throw ConfigError("annotate.provider must be 'fixture' or 'http'");
    }
    if (j.contains("graph")) {
        const auto& s = j["graph"];
        expect_keys(s, "graph", {"similarity_threshold", "degree_fraction"});
        read_key(s, "similarity_threshold", cfg.similarity_threshold);
        read_key(s, "degree_fraction", cfg.degree_fraction);
    }
    if (j.contains("events")) {
        const auto& s = j["events"];
        expect_keys(s, "events",
                    {"window", "communities", "min_occurrences", "subset_entities"});
        if (s.contains("window")) {
            const auto& w = s["window"];
            if (!w.is_array() || w.size() != 2)
                throw ConfigError("events.window must be [start, end]");
            cfg.window_start = w[0].is_string() ? w[0].get<std::string>() : w[0].dump();
            cfg.window_end = w[1].is_string() ? w[1].get<std::string>() : w[1].dump();
        }
        read_key(s, "communities", cfg.communities);
        read_key(s, "min_occurrences", cfg.min_occurrences);
        read_key(s, "subset_entities", cfg.subset_entities);
    }
    if (j.contains("hawkes")) {
        const auto& s = j["hawkes"];
        expect_keys(s, "hawkes",
                    {"tau", "max_lag", "lambda0_prior", "w_prior", "burn_in", "samples",
                     "workers"});
        read_key(s, "tau", cfg.kernel.tau);
        read_key(s, "max_lag", cfg.kernel.max_lag);
        if (s.contains("lambda0_prior")) {
            const auto& p = s["lambda0_prior"];
            if (!p.is_array() || p.size() != 2)
                throw ConfigError("hawkes.lambda0_prior must be [shape, rate]");
            cfg.lambda0_shape = p[0].get<double>();
            cfg.lambda0_rate = p[1].get<double>();
        }
        if (s.contains("w_prior")) {
            const auto& p = s["w_prior"];
            if (!p.is_array() || p.size() != 2)
                throw ConfigError("hawkes.w_prior must be [shape, rate]");
            cfg.w_shape = p[0].get<double>();
            cfg.w_rate = p[1].get<double>();
        }
        read_key(s, "burn_in", cfg.burn_in);
        read_key(s, "samples", cfg.samples);
        read_key(s, "workers", cfg.fit_workers);
    }
    if (j.contains("report")) {
        const auto& s = j["report"];
        expect_keys(s, "report", {"rank_source"});
        read_key(s, "rank_source", cfg.rank_source);
    }
    return cfg;
}

Stage stage_from_string(const std::string& name) {
    if (name == "hash") return Stage::hash;
    if (name == "cluster") return Stage::cluster;
    if (name == "annotate") return Stage::annotate;
    if (name == "graph") return Stage::graph;
    if (name == "events") return Stage::events;
    if (name == "fit") return Stage::fit;
    if (name == "report") return Stage::report;
    throw ConfigError("unknown stage '" + name + "'");
}

std::string to_string(Stage stage) {
    switch (stage) {
        case Stage::hash: return "hash";
        case Stage::cluster: return "cluster";
        case Stage::annotate: return "annotate";
        case Stage::graph: return "graph";
        case Stage::events: return "events";
        case Stage::fit: return "fit";
        case Stage::report: return "report";
    }
    return "?";
}

namespace {

events::Window parse_window(const PipelineConfig& cfg) {
    if (cfg.window_start.empty() || cfg.window_end.empty())
        throw ConfigError("events.window is not configured");
    try {
        return {events::parse_time(cfg.window_start), events::parse_time(cfg.window_end)};
    } catch (const ParseError& e) {
        throw ConfigError(std::string("events.window: ") + e.what());
    }
}

}  // namespace

std::string config_fingerprint(const PipelineConfig& cfg, Stage stage) {
    nlohmann::ordered_json j;
    j["stage"] = to_string(stage);
    switch (stage) {
        case Stage::hash:
            break;  // hashing has no tunables
        case Stage::cluster:
            j["eps"] = cfg.eps;
            j["min_samples"] = cfg.min_samples;
            break;
        case Stage::annotate:
            j["provider"] = cfg.provider;
            break;
        case Stage::graph:
            j["similarity_threshold"] = cfg.similarity_threshold;
            j["degree_fraction"] = cfg.degree_fraction;
            j["seed"] = cfg.seed;
            break;
        case Stage::events: {
            const events::Window w = parse_window(cfg);
            j["window"] = {w.start, w.end};
            j["communities"] = cfg.communities;
            j["min_occurrences"] = cfg.min_occurrences;
            j["subset_entities"] = cfg.subset_entities;
            break;
        }
        case Stage::fit:
            j["tau"] = cfg.kernel.tau;
            j["max_lag"] = cfg.kernel.max_lag;
            j["lambda0_prior"] = {cfg.lambda0_shape, cfg.lambda0_rate};
            j["w_prior"] = {cfg.w_shape, cfg.w_rate};
            j["burn_in"] = cfg.burn_in;
            j["samples"] = cfg.samples;
            j["seed"] = cfg.seed;
            break;
        case Stage::report:
            j["rank_source"] = cfg.rank_source;
            break;
    }
    return detail::to_hex64(detail::fnv1a64(j.dump()));
}

namespace {

// ---------------------------------------------------------------------------
// Manifest and input hashing

nlohmann::ordered_json load_manifest(const fs::path& path) {
    if (!fs::exists(path)) {
        nlohmann::ordered_json j;
        j["tool_version"] = IMGTRACE_VERSION;
        j["stages"] = nlohmann::ordered_json::object();
        return j;
    }
    nlohmann::ordered_json j =
        nlohmann::ordered_json::parse(detail::read_file_text(path), nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("stages"))
        throw ParseError("manifest " + path.string() + " is corrupt; delete it to rebuild");
    return j;
}

// Content hash of a file, or of a directory tree (relative paths + per-file
// hashes, order-independent of filesystem enumeration).
uint64_t hash_tree(const fs::path& p) {
    if (!fs::is_directory(p)) return detail::fnv1a64_file(p);
    std::vector<fs::path> files;
    for (const auto& entry : fs::recursive_directory_iterator(p))
        if (entry.is_regular_file()) files.push_back(fs::relative(entry.path(), p));
    std::sort(files.begin(), files.end());
    std::ostringstream acc;
    for (const fs::path& rel : files)
        acc << rel.generic_string() << ':' << detail::to_hex64(detail::fnv1a64_file(p / rel))
            << '\n';
    return detail::fnv1a64(acc.str());
}

struct InputSpec {
    std::string label;
    fs::path path;
    std::optional<Stage> from_stage;  // set when the input is another stage's artifact
};

struct StagePlan {
    std::vector<Stage> upstream;
    std::vector<InputSpec> inputs;
    std::vector<fs::path> outputs;
};

StagePlan make_plan(Stage stage, const PipelineConfig& cfg) {
    const fs::path& out = cfg.output_dir;
    StagePlan plan;
    switch (stage) {
        case Stage::hash:
            if (cfg.corpus_dir.empty()) throw ConfigError("corpus_dir is not configured");
            plan.inputs = {{"corpus", cfg.corpus_dir, std::nullopt}};
            plan.outputs = {out / "hashes.csv", out / "hash_rejects.jsonl"};
            break;
        case Stage::cluster:
            plan.upstream = {Stage::hash};
            plan.inputs = {{"hashes", out / "hashes.csv", Stage::hash}};
            plan.outputs = {out / "clusters.jsonl", out / "cluster_stats.json"};
            break;
        case Stage::annotate:
            plan.upstream = {Stage::hash, Stage::cluster};
            plan.inputs = {{"hashes", out / "hashes.csv", Stage::hash},
                           {"clusters", out / "clusters.jsonl", Stage::cluster}};
            if (cfg.provider == "fixture") {
                if (cfg.fixture.empty())
                    throw ConfigError("annotate.provider is 'fixture' but no fixture path is set");
                plan.inputs.push_back({"fixture", cfg.fixture, std::nullopt});
            }
            plan.outputs = {out / "detections.json", out / "annotated.jsonl",
                            out / "entity_popularity.csv", out / "domain_popularity.csv",
                            out / "phash_entities.json"};
            break;
        case Stage::graph:
            plan.upstream = {Stage::annotate};
            plan.inputs = {{"annotated", out / "annotated.jsonl", Stage::annotate}};
            plan.outputs = {out / "similarity.gexf", out / "similarity_filtered.gexf",
                            out / "similarity.dot", out / "entity_domain.gexf"};
            break;
        case Stage::events:
            if (cfg.events_csv.empty()) throw ConfigError("events_csv is not configured");
            plan.inputs = {{"events", cfg.events_csv, std::nullopt}};
            if (!cfg.subset_entities.empty()) {
                plan.upstream = {Stage::annotate};
                plan.inputs.push_back(
                    {"phash_entities", out / "phash_entities.json", Stage::annotate});
            }
            if (!cfg.tweets_csv.empty())
                plan.inputs.push_back({"tweets", cfg.tweets_csv, std::nullopt});
            plan.outputs = {out / "store.jsonl", out / "events_summary.json",
                            out / "events_rejects.jsonl"};
            if (!cfg.tweets_csv.empty()) plan.outputs.push_back(out / "weekly.csv");
            break;
        case Stage::fit:
            plan.upstream = {Stage::events};
            plan.inputs = {{"store", out / "store.jsonl", Stage::events}};
            plan.outputs = {out / "fits.jsonl"};
            break;
        case Stage::report:
            plan.upstream = {Stage::fit};
            plan.inputs = {{"fits", out / "fits.jsonl", Stage::fit}};
            plan.outputs = {out / "influence.csv", out / "efficiency.csv",
                            out / "significance.csv", out / "ranking.csv",
                            out / "report.json"};
            break;
    }
    return plan;
}

// ---------------------------------------------------------------------------
// Shared artifact readers

std::vector<cluster::IdHash> read_hashes_csv(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<cluster::IdHash> rows;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        if (lineno == 1 && line.rfind("id,", 0) == 0) continue;
        const std::vector<std::string> fields = split_csv(line);
        if (fields.size() != 2)
            throw ParseError(path.string() + ":" + std::to_string(lineno) +
                             ": expected id,phash");
        rows.push_back({fields[0], phash::PHash64{detail::from_hex64(fields[1])}});
    }
    return rows;
}

cluster::Clustering read_clusters(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    return cluster::read_clusters_jsonl(in);
}

std::vector<annotate::AnnotatedCluster> read_annotated(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<annotate::AnnotatedCluster> out;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded())
            throw ParseError(path.string() + ":" + std::to_string(lineno) + ": bad JSON");
        try {
            annotate::AnnotatedCluster a;
            a.cluster_id = j.at("cluster_id").get<int64_t>();
            a.image_count = j.at("image_count").get<uint64_t>();
            if (!j.at("top_entity").is_null())
                a.top_entity = j.at("top_entity").get<std::string>();
            for (const auto& pair : j.at("entities"))
                a.detection.entities.emplace_back(pair.at(0).get<std::string>(),
                                                  pair.at(1).get<double>());
            a.domains = j.at("domains").get<std::vector<std::string>>();
            out.push_back(std::move(a));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Stage bodies

void run_hash(const PipelineConfig& cfg) {
    if (!fs::is_directory(cfg.corpus_dir))
        throw ConfigError("corpus_dir " + cfg.corpus_dir.string() + " is not a directory");
    std::vector<fs::path> files;
    for (const auto& entry : fs::recursive_directory_iterator(cfg.corpus_dir))
        if (entry.is_regular_file()) files.push_back(fs::relative(entry.path(), cfg.corpus_dir));
    std::sort(files.begin(), files.end());

    std::ostringstream rows, rejects;
    rows << "id,phash\n";
    for (const fs::path& rel : files) {
        const std::string id = rel.generic_string();
        try {
            const phash::PHash64 h = phash::compute_phash_file(cfg.corpus_dir / rel);
            rows << detail::csv_quote(id) << ',' << phash::to_hex(h) << '\n';
        } catch (const Error& e) {
            nlohmann::ordered_json j;
            j["id"] = id;
            j["reason"] = e.what();
            rejects << j.dump() << '\n';
        }
    }
    detail::atomic_write_text(cfg.output_dir / "hashes.csv", rows.str());
    detail::atomic_write_text(cfg.output_dir / "hash_rejects.jsonl", rejects.str());
}

void run_cluster(const PipelineConfig& cfg) {
    const std::vector<cluster::IdHash> corpus = read_hashes_csv(cfg.output_dir / "hashes.csv");
    cluster::ClusterParams params;
    params.eps = cfg.eps;
    params.min_samples = cfg.min_samples;
    const cluster::Clustering clustering = cluster::cluster_corpus(corpus, params);
    const cluster::StatsSummary stats = cluster::cluster_stats(clustering);

    detail::atomic_write(cfg.output_dir / "clusters.jsonl",
                         [&](std::ostream& os) { cluster::write_clusters_jsonl(clustering, os); });
    nlohmann::ordered_json j;
    j["clusters"] = stats.cluster_count;
    j["clustered_images"] = stats.clustered_images;
    j["noise_images"] = stats.noise_images;
    j["mean_unique_hashes"] = stats.mean_unique;
    j["median_unique_hashes"] = stats.median_unique;
    j["unique_hash_histogram"] = stats.unique_hist;
    detail::atomic_write_text(cfg.output_dir / "cluster_stats.json", j.dump(2) + "\n");
}

void write_popularity_csv(const fs::path& path, const char* label_column,
                          const std::vector<annotate::PopularityRow>& rows) {
    std::ostringstream os;
    os << label_column << ",clusters,cluster_pct,images,image_pct\n";
    for (const auto& r : rows)
        os << detail::csv_quote(r.label) << ',' << r.cluster_count << ',' << r.cluster_pct
           << ',' << r.image_count << ',' << r.image_pct << '\n';
    detail::atomic_write_text(path, os.str());
}

void run_annotate(const PipelineConfig& cfg) {
    const std::vector<cluster::IdHash> corpus = read_hashes_csv(cfg.output_dir / "hashes.csv");
    std::map<std::string, std::string> hex_of;  // image id -> phash hex
    for (const auto& row : corpus) hex_of[row.id] = phash::to_hex(row.hash);
    const cluster::Clustering clustering = read_clusters(cfg.output_dir / "clusters.jsonl");

    auto hex_of_id = [&](const std::string& id) {
        const auto it = hex_of.find(id);
        if (it == hex_of.end())
            throw ParseError("cluster member '" + id + "' is missing from hashes.csv");
        return it->second;
    };

    // One detection job per distinct medoid hash.
    std::map<std::string, std::string> medoid_id_of_hex;
    for (const auto& c : clustering.clusters)
        medoid_id_of_hex.emplace(hex_of_id(c.medoid), c.medoid);
    std::vector<annotate::DetectionJob> jobs;
    jobs.reserve(medoid_id_of_hex.size());
    const bool live = cfg.provider == "http";
    for (const auto& [hex, id] : medoid_id_of_hex) {
        annotate::DetectionJob job;
        job.phash_hex = hex;
        if (live) {
            const auto bytes = detail::read_file_bytes(cfg.corpus_dir / id);
            job.image_bytes.resize(bytes.size());
            std::memcpy(job.image_bytes.data(), bytes.data(), bytes.size());
        }
        jobs.push_back(std::move(job));
    }

    std::unique_ptr<annotate::WebDetectionProvider> provider;
    if (live)
        provider = std::make_unique<annotate::HttpProvider>(annotate::HttpProvider::from_env());
    else
        provider = std::make_unique<annotate::FixtureProvider>(cfg.fixture);
    annotate::DetectionCache cache(
        cfg.cache_dir.empty() ? cfg.output_dir / "detection_cache" : cfg.cache_dir);
    annotate::DetectOptions options;
    options.workers = cfg.annotate_workers;
    options.max_requests_per_s = cfg.max_requests_per_s;
    const std::map<std::string, annotate::WebDetection> by_hex =
        annotate::detect_all(jobs, *provider, &cache, options);

    std::map<int64_t, annotate::WebDetection> detections;
    for (const auto& c : clustering.clusters)
        detections.emplace(c.id, by_hex.at(hex_of_id(c.medoid)));
    const std::vector<annotate::AnnotatedCluster> annotated =
        annotate::annotate_clusters(clustering, detections);

    nlohmann::ordered_json det_json = nlohmann::ordered_json::object();
    for (const auto& [hex, detection] : by_hex)
        det_json[hex] = nlohmann::ordered_json::parse(annotate::detection_to_json(detection));
    detail::atomic_write_text(cfg.output_dir / "detections.json", det_json.dump(2) + "\n");

    std::ostringstream ann_rows;
    for (const auto& a : annotated) {
        nlohmann::ordered_json j;
        j["cluster_id"] = a.cluster_id;
        j["image_count"] = a.image_count;
        if (a.top_entity) j["top_entity"] = *a.top_entity;
        else j["top_entity"] = nullptr;
        auto& ents = j["entities"] = nlohmann::ordered_json::array();
        for (const auto& [label, score] : a.detection.entities)
            ents.push_back(nlohmann::ordered_json::array({label, score}));
        j["domains"] = a.domains;
        ann_rows << j.dump() << '\n';
    }
    detail::atomic_write_text(cfg.output_dir / "annotated.jsonl", ann_rows.str());

    write_popularity_csv(cfg.output_dir / "entity_popularity.csv", "entity",
                         annotate::entity_popularity(annotated));
    write_popularity_csv(cfg.output_dir / "domain_popularity.csv", "domain",
                         annotate::domain_popularity(annotated));

    // Every member hash inherits its cluster's entity labels; this is what
    // lets the events stage subset phashes by topic.
    nlohmann::ordered_json phash_entities = nlohmann::ordered_json::object();
    for (size_t i = 0; i < clustering.clusters.size(); ++i) {
        const auto& c = clustering.clusters[i];
        std::vector<std::string> labels;
        std::set<std::string> seen;
        for (const auto& [label, score] : annotated[i].detection.entities)
            if (seen.insert(label).second) labels.push_back(label);
        std::set<std::string> hexes;
        for (const std::string& member : c.members) hexes.insert(hex_of_id(member));
        for (const std::string& hex : hexes) phash_entities[hex] = labels;
    }
    detail::atomic_write_text(cfg.output_dir / "phash_entities.json",
                              phash_entities.dump(2) + "\n");
}

void run_graph(const PipelineConfig& cfg) {
    const std::vector<annotate::AnnotatedCluster> annotated =
        read_annotated(cfg.output_dir / "annotated.jsonl");

    const graph::WeightedGraph sim =
        graph::cluster_similarity_graph(annotated, cfg.similarity_threshold);
    const graph::Partition sim_part = graph::louvain(sim, cfg.seed);
    detail::atomic_write_text(cfg.output_dir / "similarity.gexf", graph::to_gexf(sim, sim_part));
    detail::atomic_write_text(cfg.output_dir / "similarity.dot", graph::to_dot(sim, sim_part));

    const graph::WeightedGraph filtered = graph::top_degree_filter(sim, cfg.degree_fraction);
    const graph::Partition filtered_part = graph::louvain(filtered, cfg.seed);
    detail::atomic_write_text(cfg.output_dir / "similarity_filtered.gexf",
                              graph::to_gexf(filtered, filtered_part));

    const graph::WeightedGraph bip = graph::entity_domain_graph(annotated);
    const graph::Partition bip_part = graph::louvain(bip, cfg.seed);
    detail::atomic_write_text(cfg.output_dir / "entity_domain.gexf",
                              graph::to_gexf(bip, bip_part));
}

void run_events(const PipelineConfig& cfg) {
    const events::Window window = parse_window(cfg);
    std::ifstream in(cfg.events_csv);
    if (!in) throw IoError("cannot open " + cfg.events_csv.string());
    std::ostringstream rejects;
    const events::IngestResult ingested =
        events::ingest_csv(in, window, cfg.communities, &rejects);
    const events::EventStore filtered =
        events::filter_min_occurrences(ingested.store, cfg.min_occurrences);

    events::EventStore final_store;
    events::SubsetStats subset_stats;
    const bool subset = !cfg.subset_entities.empty();
    if (subset) {
        const std::string text =
            detail::read_file_text(cfg.output_dir / "phash_entities.json");
        nlohmann::json j = nlohmann::json::parse(text, nullptr, false);
        if (j.is_discarded() || !j.is_object())
            throw ParseError("phash_entities.json is malformed");
        std::map<uint64_t, std::vector<std::string>> annotations;
        for (const auto& [hex, labels] : j.items())
            annotations[detail::from_hex64(hex)] = labels.get<std::vector<std::string>>();
        final_store =
            events::select_by_entities(filtered, annotations, cfg.subset_entities, &subset_stats);
    } else {
        final_store = filtered;
    }

    detail::atomic_write(cfg.output_dir / "store.jsonl",
                         [&](std::ostream& os) { events::write_store(final_store, os); });
    detail::atomic_write_text(cfg.output_dir / "events_rejects.jsonl", rejects.str());

    nlohmann::ordered_json summary;
    summary["accepted"] = ingested.stats.accepted;
    summary["duplicates"] = ingested.stats.duplicates;
    summary["malformed"] = ingested.stats.malformed;
    summary["out_of_window"] = ingested.stats.out_of_window;
    summary["unknown_community"] = ingested.stats.unknown_community;
    summary["phashes_ingested"] = ingested.store.phash_count();
    summary["phashes_after_min_filter"] = filtered.phash_count();
    if (subset) {
        nlohmann::ordered_json s;
        s["entities"] = cfg.subset_entities;
        s["kept"] = subset_stats.kept;
        s["no_match"] = subset_stats.no_match;
        s["unannotated"] = subset_stats.unannotated;
        summary["subset"] = std::move(s);
    } else {
        summary["subset"] = nullptr;
    }
    summary["phashes_final"] = final_store.phash_count();
    summary["events_final"] = final_store.total_events();
    summary["events_per_community"] = final_store.events_per_community();
    detail::atomic_write_text(cfg.output_dir / "events_summary.json", summary.dump(2) + "\n");

    if (!cfg.tweets_csv.empty()) {
        std::ifstream tin(cfg.tweets_csv);
        if (!tin) throw IoError("cannot open " + cfg.tweets_csv.string());
        std::vector<events::TweetObs> obs;
        std::string line;
        size_t lineno = 0;
        while (std::getline(tin, line)) {
            ++lineno;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (line.empty()) continue;
            if (lineno == 1 && line.rfind("timestamp", 0) == 0) continue;
            const auto fields = split_csv(line);
            if (fields.size() != 2)
                throw ParseError(cfg.tweets_csv.string() + ":" + std::to_string(lineno) +
                                 ": expected timestamp,has_image");
            events::TweetObs o;
            o.timestamp = events::parse_time(fields[0]);
            if (fields[1] == "1" || fields[1] == "true") o.has_image = true;
            else if (fields[1] == "0" || fields[1] == "false") o.has_image = false;
            else
                throw ParseError(cfg.tweets_csv.string() + ":" + std::to_string(lineno) +
                                 ": has_image must be 0/1/true/false");
            obs.push_back(o);
        }
        const events::WeeklyReport report = events::weekly_share_report(obs);
        detail::atomic_write(cfg.output_dir / "weekly.csv",
                             [&](std::ostream& os) { events::write_weekly_csv(report, os); });
    }
}

void run_fit(const PipelineConfig& cfg) {
    std::ifstream in(cfg.output_dir / "store.jsonl");
    if (!in) throw IoError("cannot open store.jsonl");
    const events::EventStore store = events::read_store(in);

    hawkes::GibbsConfig gibbs;
    gibbs.lambda0_shape = cfg.lambda0_shape;
    gibbs.lambda0_rate = cfg.lambda0_rate;
    gibbs.w_shape = cfg.w_shape;
    gibbs.w_rate = cfg.w_rate;
    gibbs.burn_in = cfg.burn_in;
    gibbs.samples = cfg.samples;
    gibbs.seed = cfg.seed;
    const auto fits = hawkes::fit_store(store, cfg.kernel, gibbs, cfg.fit_workers);
    detail::atomic_write(cfg.output_dir / "fits.jsonl",
                         [&](std::ostream& os) { hawkes::write_fits_jsonl(fits, os); });
}

void run_report(const PipelineConfig& cfg) {
    std::ifstream in(cfg.output_dir / "fits.jsonl");
    if (!in) throw IoError("cannot open fits.jsonl");
    const auto fits = hawkes::read_fits_jsonl(in);
    if (fits.empty()) throw StatError("fits.jsonl holds no models; nothing to report");
    const std::vector<std::string>& processes = fits.front().second.processes;
    std::vector<hawkes::HawkesFit> fit_list;
    fit_list.reserve(fits.size());
    for (const auto& [bits, fit] : fits) {
        if (fit.processes != processes)
            throw ParseError("fits.jsonl mixes different process sets");
        fit_list.push_back(fit);
    }

    const hawkes::InfluenceReport report = hawkes::influence_report(fit_list, processes);
    detail::atomic_write(cfg.output_dir / "influence.csv", [&](std::ostream& os) {
        hawkes::write_influence_csv(report, os);
    });
    detail::atomic_write(cfg.output_dir / "efficiency.csv", [&](std::ostream& os) {
        hawkes::write_efficiency_csv(report, os);
    });

    auto opt_json = [](const std::optional<double>& v) {
        return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
    };
    nlohmann::ordered_json rj;
    rj["processes"] = report.processes;
    rj["N"] = report.N;
    auto matrix_json = [&](const std::vector<std::vector<std::optional<double>>>& m) {
        nlohmann::ordered_json rows = nlohmann::ordered_json::array();
        for (const auto& row : m) {
            nlohmann::ordered_json r = nlohmann::ordered_json::array();
            for (const auto& v : row) r.push_back(opt_json(v));
            rows.push_back(std::move(r));
        }
        return rows;
    };
    rj["influence"] = matrix_json(report.influence);
    nlohmann::ordered_json bg = nlohmann::ordered_json::array();
    for (const auto& v : report.background_share) bg.push_back(opt_json(v));
    rj["background_share"] = std::move(bg);
    rj["efficiency"] = matrix_json(report.efficiency);
    nlohmann::ordered_json ext = nlohmann::ordered_json::array();
    for (const auto& v : report.external_efficiency) ext.push_back(opt_json(v));
    rj["external_efficiency"] = std::move(ext);
    detail::atomic_write_text(cfg.output_dir / "report.json", rj.dump(2) + "\n");

    // Pairwise KS tests on the per-phash influence distributions, one block
    // per destination.
    const size_t k = processes.size();
    std::ostringstream sig;
    sig << "dest,source_a,source_b,n,statistic,p_value,significant\n";
    for (size_t d = 0; d < k; ++d) {
        std::vector<std::vector<double>> samples(k);
        for (const auto& fit : fit_list) {
            if (fit.N[d] == 0) continue;
            for (size_t s = 0; s < k; ++s)
                samples[s].push_back(100.0 * fit.C[s][d] / double(fit.N[d]));
        }
        if (samples[0].empty()) continue;
        for (size_t a = 0; a < k; ++a) {
            for (size_t b = a + 1; b < k; ++b) {
                const hawkes::KsResult ks = hawkes::ks_two_sample(samples[a], samples[b]);
                char buf[64];
                std::snprintf(buf, sizeof(buf), "%.10g,%.10g", ks.statistic, ks.p_value);
                sig << detail::csv_quote(processes[d]) << ','
                    << detail::csv_quote(processes[a]) << ','
                    << detail::csv_quote(processes[b]) << ',' << samples[a].size() << ','
                    << buf << ',' << (ks.p_value < 0.01 ? 1 : 0) << '\n';
            }
        }
    }
    detail::atomic_write_text(cfg.output_dir / "significance.csv", sig.str());

    const auto source_it = std::find(processes.begin(), processes.end(), cfg.rank_source);
    if (source_it == processes.end())
        throw ConfigError("report.rank_source '" + cfg.rank_source +
                          "' is not one of the fitted processes");
    const auto source = static_cast<size_t>(source_it - processes.begin());
    std::map<uint64_t, double> ext_of;
    for (const auto& [bits, fit] : fits)
        ext_of[bits] = hawkes::external_influence(fit, source);
    std::ostringstream rank;
    rank << "phash,external_influence_pct\n";
    char buf[32];
    for (uint64_t bits : hawkes::rank_by_external_influence(fits, source)) {
        std::snprintf(buf, sizeof(buf), "%.10g", ext_of[bits]);
        rank << detail::to_hex64(bits) << ',' << buf << '\n';
    }
    detail::atomic_write_text(cfg.output_dir / "ranking.csv", rank.str());
}

void run_body(Stage stage, const PipelineConfig& cfg) {
    switch (stage) {
        case Stage::hash: return run_hash(cfg);
        case Stage::cluster: return run_cluster(cfg);
        case Stage::annotate: return run_annotate(cfg);
        case Stage::graph: return run_graph(cfg);
        case Stage::events: return run_events(cfg);
        case Stage::fit: return run_fit(cfg);
        case Stage::report: return run_report(cfg);
    }
}

}  // namespace

StageResult run_stage(Stage stage, const PipelineConfig& cfg, bool force) {
    if (cfg.output_dir.empty()) throw ConfigError("output_dir is not configured");
    fs::create_directories(cfg.output_dir);
    const fs::path manifest_path = cfg.output_dir / kManifestName;
    nlohmann::ordered_json manifest = load_manifest(manifest_path);
    const StagePlan plan = make_plan(stage, cfg);
    const std::string name = to_string(stage);
    auto& stages = manifest["stages"];

    for (Stage up : plan.upstream)
        if (!stages.contains(to_string(up)))
            throw DependencyError(
                "stage '" + name + "' needs stage '" + to_string(up) + "' to run first",
                to_string(up));
    for (const InputSpec& input : plan.inputs) {
        if (fs::exists(input.path)) continue;
        if (input.from_stage)
            throw DependencyError("artifact " + input.path.filename().string() +
                                      " from stage '" + to_string(*input.from_stage) +
                                      "' is missing",
                                  to_string(*input.from_stage));
        throw ConfigError("input path does not exist: " + input.path.string());
    }

    nlohmann::ordered_json input_hashes = nlohmann::ordered_json::object();
    for (const InputSpec& input : plan.inputs)
        input_hashes[input.label] = detail::to_hex64(hash_tree(input.path));
    const std::string fp = config_fingerprint(cfg, stage);

    if (stages.contains(name)) {
        const auto& entry = stages[name];
        if (entry.value("config", "") != fp) {
            if (!force)
                throw StaleArtifactError("stage '" + name +
                                         "' artifacts were built with a different "
                                         "configuration; pass --force to rebuild");
        } else if (entry.contains("inputs") && entry["inputs"] == input_hashes) {
            const bool outputs_present =
                std::all_of(plan.outputs.begin(), plan.outputs.end(),
                            [](const fs::path& p) { return fs::exists(p); });
            if (outputs_present) return {stage, true, plan.outputs};
        }
    }

    run_body(stage, cfg);

    nlohmann::ordered_json entry;
    entry["config"] = fp;
    entry["inputs"] = std::move(input_hashes);
    nlohmann::ordered_json outs = nlohmann::ordered_json::object();
    for (const fs::path& out : plan.outputs)
        if (fs::exists(out)) outs[out.filename().string()] = detail::to_hex64(hash_tree(out));
    entry["outputs"] = std::move(outs);
    entry["completed_at"] = events::format_utc(static_cast<int64_t>(std::time(nullptr)));
    stages[name] = std::move(entry);
    manifest["tool_version"] = IMGTRACE_VERSION;
    detail::atomic_write_text(manifest_path, manifest.dump(2) + "\n");
    return {stage, false, plan.outputs};
}

std::vector<StageResult> run_all(const PipelineConfig& cfg, bool force) {
    std::vector<StageResult> results;
    for (int i = 0; i < kStageCount; ++i)
        results.push_back(run_stage(static_cast<Stage>(i), cfg, force));
    return results;
}

}  // namespace imgtrace::pipeline

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "imgtrace/events.hpp"
#include "imgtrace/hawkes.hpp"

namespace imgtrace::pipeline {

// Everything a full run needs, loadable from one JSON file. Worker counts
// and rate limits are operational knobs; they never enter a stage's config
// fingerprint, so changing them does not invalidate artifacts.
struct PipelineConfig {
    // paths
    std::filesystem::path corpus_dir;
    std::filesystem::path events_csv;
    std::filesystem::path tweets_csv;     // optional: weekly share report input
    std::filesystem::path fixture;        // offline detection fixture
    std::filesystem::path cache_dir;      // detection cache (defaults under output)
    std::filesystem::path output_dir;

    // cluster
    int eps = 8;
    int min_samples = 2;

    // annotate
    std::string provider = "fixture";     // "fixture" or "http"
    int annotate_workers = 4;
    double max_requests_per_s = 0.0;

    // graph
    double similarity_threshold = 0.4;
    double degree_fraction = 0.3;

    // events
    std::string window_start;             // epoch seconds or ISO-8601 UTC
    std::string window_end;
    std::vector<std::string> communities = events::default_communities();
    int64_t min_occurrences = 5;
    std::vector<std::string> subset_entities;  // empty: keep every phash

    // hawkes
    hawkes::Kernel kernel;
    double lambda0_shape = 1.0, lambda0_rate = 1.0;
    double w_shape = 1.0, w_rate = 5.0;
    int burn_in = 500;
    int samples = 1500;
    int fit_workers = 1;

    // report
    std::string rank_source = "Trolls";

    uint64_t seed = 0;  // every random choice in the pipeline derives from this
};

// Strict parse of the documented JSON config shape; unknown keys are
// ConfigErrors so typos fail loudly.
PipelineConfig load_config(const std::filesystem::path& config_file);

enum class Stage { hash, cluster, annotate, graph, events, fit, report };

constexpr int kStageCount = 7;
Stage stage_from_string(const std::string& name);  // ConfigError on unknown
std::string to_string(Stage stage);

// Hex fingerprint of the config fields that change this stage's output.
std::string config_fingerprint(const PipelineConfig& config, Stage stage);

struct StageResult {
    Stage stage = Stage::hash;
    bool skipped = false;  // inputs and config unchanged; artifacts reused
    std::vector<std::filesystem::path> outputs;
};

// Runs one stage: verifies upstream artifacts via the manifest
// (DependencyError names the missing stage), skips when the manifest shows
// identical config fingerprint and input hashes (StaleArtifactError when the
// fingerprint changed and force is false), writes every artifact atomically,
// then records the stage in <output_dir>/manifest.json.
StageResult run_stage(Stage stage, const PipelineConfig& config, bool force = false);

// All seven stages in dependency order.
std::vector<StageResult> run_all(const PipelineConfig& config, bool force = false);

}  // namespace imgtrace::pipeline

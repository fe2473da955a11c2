#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "imgtrace/detail/io.hpp"
#include "imgtrace/errors.hpp"
#include "imgtrace/events.hpp"
#include "imgtrace/phash.hpp"
#include "imgtrace/pipeline.hpp"
#include "synth.hpp"

using namespace imgtrace;
namespace fs = std::filesystem;

namespace {

struct Mini {
    fs::path root;
    fs::path config;
    fs::path output;
    fs::path corpus;
    fs::path events_csv;
};

// Six images (two planted pairs plus two loners), both pair hashes carrying
// a dozen events each, everything tuned for sub-second stage runs.
Mini build_mini(const std::string& tag) {
    Mini m;
    m.root = fs::temp_directory_path() / ("imgtrace_pipe_" + tag);
    fs::remove_all(m.root);
    m.corpus = m.root / "corpus";
    m.output = m.root / "out";
    fs::create_directories(m.corpus);

    auto save = [&](const std::string& name, const phash::GrayImage& img) {
        const auto bytes = synth::png(img);
        detail::atomic_write(m.corpus / name, [&](std::ostream& os) {
            os.write(reinterpret_cast<const char*>(bytes.data()),
                     static_cast<std::streamsize>(bytes.size()));
        });
        return phash::compute_phash(img);
    };
    const phash::GrayImage a = synth::smooth_field(64, 64, 2101);
    const phash::GrayImage b = synth::smooth_field(64, 64, 2202);
    const phash::PHash64 ha = save("a0.png", a);
    save("a1.png", a);
    const phash::PHash64 hb = save("b0.png", b);
    save("b1.png", b);
    save("l0.png", synth::smooth_field(64, 64, 2303));
    save("l1.png", synth::smooth_field(64, 64, 2404));

    // detections for every corpus hash
    nlohmann::ordered_json fixture = nlohmann::ordered_json::object();
    for (const auto& entry : fs::directory_iterator(m.corpus)) {
        const phash::PHash64 h = phash::compute_phash_file(entry.path().string());
        nlohmann::ordered_json det;
        det["entities"] = nlohmann::json::array({nlohmann::json::array({"Mini Subject", 0.9})});
        det["page_urls"] = {"https://host.example.com/x"};
        fixture[phash::to_hex(h)] = det;
    }
    detail::atomic_write_text(m.root / "fixture.json", fixture.dump());

    const int64_t start = events::parse_time("2017-01-01T00:00:00Z");
    std::ostringstream csv;
    csv << "phash,community,timestamp\n";
    for (int i = 0; i < 12; ++i) {
        csv << phash::to_hex(ha) << ',' << (i % 2 ? "Reddit" : "Trolls") << ','
            << start + i * 3600 << '\n';
        csv << phash::to_hex(hb) << ",Twitter," << start + i * 3600 + 600 << '\n';
    }
    m.events_csv = m.root / "events.csv";
    detail::atomic_write_text(m.events_csv, csv.str());

    nlohmann::ordered_json cfg;
    cfg["corpus_dir"] = m.corpus.string();
    cfg["events_csv"] = m.events_csv.string();
    cfg["fixture"] = (m.root / "fixture.json").string();
    cfg["output_dir"] = m.output.string();
    cfg["seed"] = 3;
    cfg["events"] = {{"window", {"2017-01-01T00:00:00Z", "2017-01-03T00:00:00Z"}},
                     {"min_occurrences", 5}};
    cfg["hawkes"] = {{"burn_in", 100}, {"samples", 200}};
    m.config = m.root / "config.json";
    detail::atomic_write_text(m.config, cfg.dump(2));
    return m;
}

int run_cli(const std::string& args) {
    const char* bin = std::getenv("IMGTRACE_BIN");
    REQUIRE_MESSAGE(bin != nullptr, "IMGTRACE_BIN must point at the imgtrace binary");
    const std::string cmd = std::string(bin) + " " + args + " >/dev/null 2>&1";
    const int raw = std::system(cmd.c_str());
    return WEXITSTATUS(raw);
}

}  // namespace

TEST_CASE("config loading is strict about keys") {
    const fs::path dir = fs::temp_directory_path() / "imgtrace_cfg";
    fs::create_directories(dir);
    detail::atomic_write_text(dir / "bad.json", R"({"output_dir": "x", "epz": 3})");
    CHECK_THROWS_AS(pipeline::load_config(dir / "bad.json"), ConfigError);
    detail::atomic_write_text(dir / "bad2.json", R"({"cluster": {"eps": "wide"}})");
    CHECK_THROWS_AS(pipeline::load_config(dir / "bad2.json"), ConfigError);
    detail::atomic_write_text(dir / "bad3.json", R"([1,2,3])");
    CHECK_THROWS_AS(pipeline::load_config(dir / "bad3.json"), ConfigError);
    CHECK_THROWS_AS(pipeline::load_config(dir / "missing.json"), ConfigError);

    detail::atomic_write_text(dir / "ok.json", R"({"output_dir": "x", "cluster": {"eps": 6}})");
    const pipeline::PipelineConfig cfg = pipeline::load_config(dir / "ok.json");
    CHECK(cfg.eps == 6);
    CHECK(cfg.min_samples == 2);  // default survives partial sections
}

TEST_CASE("config fingerprints move with semantic fields only") {
    const Mini m = build_mini("fp");
    pipeline::PipelineConfig cfg = pipeline::load_config(m.config);
    const std::string base = pipeline::config_fingerprint(cfg, pipeline::Stage::cluster);
    cfg.annotate_workers = 9;  // operational knob
    CHECK(pipeline::config_fingerprint(cfg, pipeline::Stage::cluster) == base);
    CHECK(pipeline::config_fingerprint(cfg, pipeline::Stage::annotate) ==
          pipeline::config_fingerprint(pipeline::load_config(m.config),
                                       pipeline::Stage::annotate));
    cfg.eps = 9;
    CHECK(pipeline::config_fingerprint(cfg, pipeline::Stage::cluster) != base);
    // stages are fingerprinted independently
    CHECK(pipeline::config_fingerprint(cfg, pipeline::Stage::fit) ==
          pipeline::config_fingerprint(pipeline::load_config(m.config), pipeline::Stage::fit));
}

TEST_CASE("hash stage is idempotent and input-sensitive") {
    const Mini m = build_mini("hash");
    const pipeline::PipelineConfig cfg = pipeline::load_config(m.config);
    const pipeline::StageResult first = pipeline::run_stage(pipeline::Stage::hash, cfg);
    CHECK(!first.skipped);
    CHECK(fs::exists(m.output / "hashes.csv"));
    CHECK(fs::exists(m.output / "manifest.json"));

    const pipeline::StageResult second = pipeline::run_stage(pipeline::Stage::hash, cfg);
    CHECK(second.skipped);

    // new corpus content invalidates the stage
    const auto img = synth::smooth_field(64, 64, 555);
    const auto bytes = synth::png(img);
    detail::atomic_write(m.corpus / "new.png", [&](std::ostream& os) {
        os.write(reinterpret_cast<const char*>(bytes.data()),
                 static_cast<std::streamsize>(bytes.size()));
    });
    const pipeline::StageResult third = pipeline::run_stage(pipeline::Stage::hash, cfg);
    CHECK(!third.skipped);
}

TEST_CASE("missing upstream artifacts raise DependencyError naming the stage") {
    const Mini m = build_mini("dep");
    const pipeline::PipelineConfig cfg = pipeline::load_config(m.config);
    try {
        pipeline::run_stage(pipeline::Stage::report, cfg);
        FAIL("expected DependencyError");
    } catch (const DependencyError& e) {
        CHECK(e.stage == "fit");
    }
    try {
        pipeline::run_stage(pipeline::Stage::cluster, cfg);
        FAIL("expected DependencyError");
    } catch (const DependencyError& e) {
        CHECK(e.stage == "hash");
    }
}

TEST_CASE("changed stage config demands --force") {
    const Mini m = build_mini("stale");
    pipeline::PipelineConfig cfg = pipeline::load_config(m.config);
    pipeline::run_stage(pipeline::Stage::hash, cfg);
    pipeline::run_stage(pipeline::Stage::cluster, cfg);

    cfg.eps = 4;
    CHECK_THROWS_AS(pipeline::run_stage(pipeline::Stage::cluster, cfg), StaleArtifactError);
    const pipeline::StageResult forced =
        pipeline::run_stage(pipeline::Stage::cluster, cfg, /*force=*/true);
    CHECK(!forced.skipped);
    // after the forced rebuild the new fingerprint is recorded
    CHECK(pipeline::run_stage(pipeline::Stage::cluster, cfg).skipped);
}

TEST_CASE("run_all produces every artifact and a six-process report") {
    const Mini m = build_mini("all");
    const pipeline::PipelineConfig cfg = pipeline::load_config(m.config);
    const std::vector<pipeline::StageResult> results = pipeline::run_all(cfg);
    CHECK(results.size() == 7);
    for (const char* artifact :
         {"hashes.csv", "clusters.jsonl", "cluster_stats.json", "detections.json",
          "annotated.jsonl", "entity_popularity.csv", "domain_popularity.csv",
          "phash_entities.json", "similarity.gexf", "similarity_filtered.gexf",
          "entity_domain.gexf", "store.jsonl", "events_summary.json", "fits.jsonl",
          "influence.csv", "efficiency.csv", "significance.csv", "ranking.csv",
          "report.json"})
        CHECK_MESSAGE(fs::exists(m.output / artifact), artifact);

    const nlohmann::json report =
        nlohmann::json::parse(detail::read_file_text(m.output / "report.json"));
    CHECK(report.at("processes").size() == 6);
    CHECK(report.at("influence").size() == 6);
    for (const auto& row : report.at("influence")) CHECK(row.size() == 6);

    // everything is up to date on a second pass
    for (const pipeline::StageResult& r : pipeline::run_all(cfg)) CHECK(r.skipped);
}

TEST_CASE("cli maps failures to documented exit codes") {
    const Mini m = build_mini("cli");
    CHECK(run_cli("run --config " + m.config.string()) == 0);
    CHECK(run_cli("run --config " + m.config.string()) == 0);  // no-op rerun

    // dependency error: report against a fresh output dir
    const Mini fresh = build_mini("cli_dep");
    CHECK(run_cli("report --config " + fresh.config.string()) == 3);

    // config error: unknown key
    detail::atomic_write_text(m.root / "broken.json", R"({"output_dir": "x", "oops": 1})");
    CHECK(run_cli("hash --config " + (m.root / "broken.json").string()) == 2);
    CHECK(run_cli("hash --config " + (m.root / "nonexistent.json").string()) == 2);
    CHECK(run_cli("definitely-not-a-stage --config " + m.config.string()) == 2);

    // data error: corrupt upstream artifact re-read by the next stage
    detail::atomic_write_text(m.output / "fits.jsonl", "this is not json\n");
    CHECK(run_cli("report --config " + m.config.string()) == 4);

    // stale config without --force
    {
        const std::string text = detail::read_file_text(m.config);
        nlohmann::ordered_json j = nlohmann::ordered_json::parse(text);
        j["cluster"] = {{"eps", 4}};
        detail::atomic_write_text(m.config, j.dump(2));
    }
    CHECK(run_cli("cluster --config " + m.config.string()) == 2);
    CHECK(run_cli("cluster --config " + m.config.string() + " --force") == 0);
}

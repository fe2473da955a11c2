// Command-line front end: one subcommand per pipeline stage plus `run` for
// the whole chain. Exit codes: 0 ok, 2 bad configuration, 3 missing upstream
// artifacts, 4 bad input data.
#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "imgtrace/errors.hpp"
#include "imgtrace/pipeline.hpp"

#ifndef IMGTRACE_VERSION
#define IMGTRACE_VERSION "0.0.0"
#endif

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitDependency = 3;
constexpr int kExitData = 4;

void print_result(const imgtrace::pipeline::StageResult& result) {
    const std::string name = imgtrace::pipeline::to_string(result.stage);
    if (result.skipped) {
        std::printf("%s: up to date\n", name.c_str());
    } else {
        std::printf("%s: wrote %zu artifact%s\n", name.c_str(), result.outputs.size(),
                    result.outputs.size() == 1 ? "" : "s");
    }
}

int run_command(const std::string& stage_name, const std::string& config_path, bool force) {
    const imgtrace::pipeline::PipelineConfig cfg = imgtrace::pipeline::load_config(config_path);
    if (stage_name == "run") {
        for (const auto& result : imgtrace::pipeline::run_all(cfg, force)) print_result(result);
    } else {
        print_result(imgtrace::pipeline::run_stage(
            imgtrace::pipeline::stage_from_string(stage_name), cfg, force));
    }
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"imgtrace: image clustering, annotation, and influence analysis"};
    app.set_version_flag("--version", IMGTRACE_VERSION);
    app.require_subcommand(1);

    std::string config_path;
    bool force = false;
    const std::vector<std::pair<std::string, std::string>> commands = {
        {"hash", "perceptually hash every image in the corpus"},
        {"cluster", "group hashes into near-duplicate clusters"},
        {"annotate", "fetch web detections for cluster medoids"},
        {"graph", "build similarity and entity-domain graphs"},
        {"events", "ingest the posting log into per-hash event series"},
        {"fit", "fit a Hawkes model to every event series"},
        {"report", "summarise cross-community influence"},
        {"run", "run every stage in order"},
    };
    for (const auto& [name, help] : commands) {
        CLI::App* sub = app.add_subcommand(name, help);
        sub->add_option("--config", config_path, "pipeline configuration (JSON)")
            ->required()
            ->check(CLI::ExistingFile);
        sub->add_flag("--force", force,
                      "rebuild even when artifacts came from a different configuration");
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfig;
    }

    const std::string stage_name = app.get_subcommands().front()->get_name();
    try {
        return run_command(stage_name, config_path, force);
    } catch (const imgtrace::DependencyError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitDependency;
    } catch (const imgtrace::ConfigError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitConfig;
    } catch (const imgtrace::StaleArtifactError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitConfig;
    } catch (const imgtrace::Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitData;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitData;
    }
}

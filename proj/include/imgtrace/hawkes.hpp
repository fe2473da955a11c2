#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "imgtrace/events.hpp"

namespace imgtrace::hawkes {

// Excitation kernel: exponential decay truncated at max_lag and renormalized
// to integrate to 1 over (0, max_lag], so an entry of W is exactly the
// expected number of children a parent event spawns on that process. Times
// and lags are in hours throughout this module.
struct Kernel {
    double tau = 1.0;
    double max_lag = 24.0;

    double density(double lag) const;
    double log_density(double lag) const;
    double sample_lag(double u) const;  // inverse CDF, u in [0,1)
};

struct HawkesModel {
    std::vector<double> lambda0;           // background rates, events/hour
    std::vector<std::vector<double>> W;    // [source][dest] expected children
    Kernel kernel;

    size_t K() const { return lambda0.size(); }
};

// Largest-magnitude eigenvalue of the (non-negative) W matrix by power
// iteration.
double spectral_radius(const std::vector<std::vector<double>>& W);

// ConfigError for malformed shapes/negative entries; StabilityError when the
// spectral radius reaches 1.
void validate_model(const HawkesModel& model);

struct SimEvent {
    double t = 0.0;
    int32_t process = 0;
    int64_t parent = -1;  // index into Simulation::events, -1 = immigrant
};

struct Simulation {
    std::vector<std::vector<double>> times;  // per process, sorted ascending
    std::vector<SimEvent> events;            // sorted by (t, process)
    // Ground truth from the branching construction, for validating fits:
    // true_C[s][d] counts kept children, true_B[d] counts immigrants.
    std::vector<std::vector<double>> true_C;
    std::vector<double> true_B;

    uint64_t total_events() const { return events.size(); }
};

// Exact branching sampler over [0, horizon]: immigrants are Poisson with
// rate lambda0, every event spawns Poisson(W[s][d]) children per destination
// with kernel-distributed lags, children past the horizon are dropped.
Simulation simulate(const HawkesModel& model, double horizon, uint64_t seed);

struct GibbsConfig {
    // Gamma(shape, rate) priors; lambda0 is per hour.
    double lambda0_shape = 1.0;
    double lambda0_rate = 1.0;
    double w_shape = 1.0;
    double w_rate = 5.0;
    int burn_in = 500;
    int samples = 1500;
    uint64_t seed = 0;
    // Keep per-event posterior parent marginals (costs memory per event).
    bool record_attributions = false;
};

struct HawkesFit {
    std::vector<std::string> processes;      // names, when fit via an EventStore
    std::vector<uint64_t> N;                 // observed events per process
    std::vector<double> lambda0_mean;        // posterior means
    std::vector<std::vector<double>> w_mean;
    std::vector<std::vector<double>> C;      // posterior mean attributed counts, source->dest
    std::vector<double> B;                   // posterior mean background counts
    std::vector<double> loglik_trace;        // complete-data log-likelihood per kept sweep
    int burn_in = 0;
    int samples = 0;
    uint64_t seed = 0;
    double horizon = 0.0;

    // Only when record_attributions: for each event (global time order) the
    // posterior distribution over its parent; -1 is background. Probabilities
    // sum to 1 per event.
    std::vector<std::vector<std::pair<int64_t, double>>> attributions;
};

// Gibbs sampler with latent parent attribution: alternates categorical
// parent draws (background weight lambda0_d; parent weight W[s][d] *
// kernel(lag) over candidates with 0 < lag < max_lag) with conjugate Gamma
// updates of lambda0 and W. C and B are posterior means over kept sweeps.
HawkesFit fit_gibbs(const std::vector<std::vector<double>>& times_per_process,
                    double horizon, const Kernel& kernel, const GibbsConfig& config);

// Per-phash fits over an event store: process list and order come from the
// store's community set, timestamps shift to hours since window start, and
// each phash gets its own RNG stream (config.seed XOR phash bits). Results
// are sorted by phash bits regardless of worker scheduling.
std::vector<std::pair<uint64_t, HawkesFit>> fit_store(const events::EventStore& store,
                                                      const Kernel& kernel,
                                                      const GibbsConfig& config,
                                                      int workers = 1);

// Influence(s->d): share of destination-d events attributed to source s, as
// a percentage; the remaining share is the background's. Efficiency(s->d)
// normalizes by source events instead; the external column sums over d != s.
// Aggregation over fits sums counts before dividing. Entries whose
// denominator is zero are null, never 0.
struct InfluenceReport {
    std::vector<std::string> processes;
    std::vector<uint64_t> N;                                     // aggregated event counts
    std::vector<std::vector<std::optional<double>>> influence;   // [source][dest]
    std::vector<std::optional<double>> background_share;         // per dest
    std::vector<std::vector<std::optional<double>>> efficiency;  // [source][dest]
    std::vector<std::optional<double>> external_efficiency;      // per source
};

InfluenceReport influence_report(std::span<const HawkesFit> fits,
                                 std::span<const std::string> processes);

// Two-sample Kolmogorov-Smirnov: D = sup |F_a - F_b| and the asymptotic
// p-value at effective size n_a*n_b/(n_a+n_b). StatError on empty samples.
struct KsResult {
    double statistic = 0.0;
    double p_value = 1.0;
};
KsResult ks_two_sample(std::span<const double> a, std::span<const double> b);

// Per-phash external influence of `source`: attributed events on all other
// processes over their total events (percent; 0 when nothing to attribute).
double external_influence(const HawkesFit& fit, size_t source);

// Phashes ordered by descending external influence of `source`; ties fall
// back to ascending hex.
std::vector<uint64_t> rank_by_external_influence(
    std::span<const std::pair<uint64_t, HawkesFit>> fits, size_t source);

// Fit persistence: one JSON record per phash
// {"phash","processes","N","C","B","lambda0","W","diagnostics"}.
void write_fits_jsonl(std::span<const std::pair<uint64_t, HawkesFit>> fits, std::ostream& out);
std::vector<std::pair<uint64_t, HawkesFit>> read_fits_jsonl(std::istream& in);

void write_influence_csv(const InfluenceReport& report, std::ostream& out);
void write_efficiency_csv(const InfluenceReport& report, std::ostream& out);

}  // namespace imgtrace::hawkes

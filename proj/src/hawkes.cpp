#include "imgtrace/hawkes.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>

#include <json.hpp>

#include "imgtrace/detail/format.hpp"
#include "imgtrace/detail/worker_pool.hpp"
#include "imgtrace/errors.hpp"

namespace imgtrace::hawkes {

namespace {

void validate_kernel(const Kernel& kernel) {
    if (!(kernel.tau > 0.0)) throw ConfigError("kernel tau must be > 0");
    if (!(kernel.max_lag > 0.0)) throw ConfigError("kernel max_lag must be > 0");
}

double truncation_mass(const Kernel& k) { return 1.0 - std::exp(-k.max_lag / k.tau); }

}  // namespace

double Kernel::density(double lag) const {
    if (!(lag > 0.0) || lag > max_lag) return 0.0;
    return std::exp(-lag / tau) / (tau * truncation_mass(*this));
}

double Kernel::log_density(double lag) const {
    if (!(lag > 0.0) || lag > max_lag) return -std::numeric_limits<double>::infinity();
    return -lag / tau - std::log(tau * truncation_mass(*this));
}

double Kernel::sample_lag(double u) const {
    // Inverse CDF of the truncated exponential.
    return -tau * std::log1p(-u * truncation_mass(*this));
}

double spectral_radius(const std::vector<std::vector<double>>& W) {
    const size_t k = W.size();
    if (k == 0) return 0.0;
    std::vector<double> x(k, 1.0), y(k, 0.0);
    double radius = 0.0;
    for (int iter = 0; iter < 200; ++iter) {
        for (size_t i = 0; i < k; ++i) {
            y[i] = 0.0;
            for (size_t j = 0; j < k; ++j) y[i] += W[i][j] * x[j];
        }
        const double norm = *std::max_element(y.begin(), y.end());
        if (norm <= 0.0) return 0.0;
        for (size_t i = 0; i < k; ++i) x[i] = y[i] / norm;
        if (std::abs(norm - radius) <= 1e-12 * std::max(1.0, radius)) return norm;
        radius = norm;
    }
    return radius;
}

void validate_model(const HawkesModel& model) {
    const size_t k = model.K();
    if (k == 0) throw ConfigError("model needs at least one process");
    if (model.W.size() != k) throw ConfigError("W row count does not match lambda0");
    for (const auto& row : model.W) {
        if (row.size() != k) throw ConfigError("W is not square");
        for (double w : row)
            if (!(w >= 0.0) || !std::isfinite(w))
                throw ConfigError("W entries must be finite and non-negative");
    }
    for (double r : model.lambda0)
        if (!(r >= 0.0) || !std::isfinite(r))
            throw ConfigError("lambda0 entries must be finite and non-negative");
    validate_kernel(model.kernel);
    const double radius = spectral_radius(model.W);
    if (radius >= 1.0)
        throw StabilityError("excitation matrix is unstable: spectral radius " +
                             std::to_string(radius) + " >= 1");
}

Simulation simulate(const HawkesModel& model, double horizon, uint64_t seed) {
    validate_model(model);
    if (!(horizon > 0.0)) throw ConfigError("simulation horizon must be > 0");
    const size_t k = model.K();
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    Simulation sim;
    sim.true_C.assign(k, std::vector<double>(k, 0.0));
    sim.true_B.assign(k, 0.0);

    std::vector<SimEvent> raw;  // creation order; parents index into raw
    for (size_t d = 0; d < k; ++d) {
        const double mean = model.lambda0[d] * horizon;
        if (mean <= 0.0) continue;
        const int n = std::poisson_distribution<int>(mean)(rng);
        for (int i = 0; i < n; ++i) {
            raw.push_back({unit(rng) * horizon, static_cast<int32_t>(d), -1});
            sim.true_B[d] += 1.0;
        }
    }
    // Branching cascade; raw grows while we walk it, so index carefully.
    for (size_t idx = 0; idx < raw.size(); ++idx) {
        const double t = raw[idx].t;
        const auto s = static_cast<size_t>(raw[idx].process);
        for (size_t d = 0; d < k; ++d) {
            const double w = model.W[s][d];
            if (w <= 0.0) continue;
            const int children = std::poisson_distribution<int>(w)(rng);
            for (int c = 0; c < children; ++c) {
                const double tc = t + model.kernel.sample_lag(unit(rng));
                if (tc > horizon) continue;
                raw.push_back({tc, static_cast<int32_t>(d), static_cast<int64_t>(idx)});
                sim.true_C[s][d] += 1.0;
            }
        }
    }

    // Time order with a deterministic tie-break; remap parent indices.
    std::vector<size_t> order(raw.size());
    std::iota(order.begin(), order.end(), 0u);
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        if (raw[a].t != raw[b].t) return raw[a].t < raw[b].t;
        if (raw[a].process != raw[b].process) return raw[a].process < raw[b].process;
        return a < b;
    });
    std::vector<int64_t> new_pos(raw.size());
    for (size_t i = 0; i < order.size(); ++i) new_pos[order[i]] = static_cast<int64_t>(i);
    sim.events.reserve(raw.size());
    sim.times.assign(k, {});
    for (size_t pos : order) {
        SimEvent e = raw[pos];
        if (e.parent >= 0) e.parent = new_pos[e.parent];
        sim.times[static_cast<size_t>(e.process)].push_back(e.t);
        sim.events.push_back(e);
    }
    return sim;
}

namespace {

std::string model_dump(const std::vector<double>& lambda0,
                       const std::vector<std::vector<double>>& w) {
    nlohmann::ordered_json j;
    j["lambda0"] = lambda0;
    j["W"] = w;
    return j.dump();
}

}  // namespace

HawkesFit fit_gibbs(const std::vector<std::vector<double>>& times_per_process,
                    double horizon, const Kernel& kernel, const GibbsConfig& config) {
    validate_kernel(kernel);
    if (!(horizon > 0.0)) throw ConfigError("fit horizon must be > 0");
    if (config.burn_in < 0 || config.samples < 1)
        throw ConfigError("need burn_in >= 0 and samples >= 1");
    if (!(config.lambda0_shape > 0.0) || !(config.lambda0_rate > 0.0) ||
        !(config.w_shape > 0.0) || !(config.w_rate > 0.0))
        throw ConfigError("prior shapes and rates must be > 0");
    const size_t k = times_per_process.size();
    if (k == 0) throw ConfigError("fit needs at least one process");

    // Flatten into one time-ordered event list.
    struct Ev {
        double t;
        int32_t d;
    };
    std::vector<Ev> ev;
    std::vector<uint64_t> n_of(k, 0);
    for (size_t d = 0; d < k; ++d) {
        for (double t : times_per_process[d]) {
            if (!(t >= 0.0) || t > horizon)
                throw ConfigError("event time outside [0, horizon]: " + std::to_string(t));
            ev.push_back({t, static_cast<int32_t>(d)});
        }
        n_of[d] = times_per_process[d].size();
    }
    if (ev.empty()) throw ConfigError("fit needs at least one event");
    std::sort(ev.begin(), ev.end(), [](const Ev& a, const Ev& b) {
        return a.t != b.t ? a.t < b.t : a.d < b.d;
    });
    const size_t n = ev.size();
    std::vector<double> ts(n);
    for (size_t i = 0; i < n; ++i) ts[i] = ev[i].t;

    // Parent candidates per event: strictly earlier events within max_lag.
    // Kernel values are fixed by the data, so compute them once.
    std::vector<size_t> cand_begin(n + 1, 0);
    std::vector<int64_t> cand_parent;
    std::vector<double> cand_g;
    for (size_t i = 0; i < n; ++i) {
        const auto lo = std::upper_bound(ts.begin(), ts.begin() + i, ev[i].t - kernel.max_lag);
        const auto hi = std::lower_bound(ts.begin(), ts.begin() + i, ev[i].t);
        for (auto it = lo; it != hi; ++it) {
            const auto j = static_cast<size_t>(it - ts.begin());
            cand_parent.push_back(static_cast<int64_t>(j));
            cand_g.push_back(kernel.density(ev[i].t - ev[j].t));
        }
        cand_begin[i + 1] = cand_parent.size();
    }

    std::mt19937_64 rng(config.seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    auto gamma_draw = [&rng](double shape, double rate) {
        return std::gamma_distribution<double>(shape, 1.0 / rate)(rng);
    };

    std::vector<double> lambda0(k, config.lambda0_shape / config.lambda0_rate);
    std::vector<std::vector<double>> w(k, std::vector<double>(k, config.w_shape / config.w_rate));
    std::vector<int64_t> parent(n, -1);
    std::vector<uint64_t> bg_count(k, 0);
    std::vector<std::vector<uint64_t>> child_count(k, std::vector<uint64_t>(k, 0));

    HawkesFit fit;
    fit.N = n_of;
    fit.lambda0_mean.assign(k, 0.0);
    fit.w_mean.assign(k, std::vector<double>(k, 0.0));
    fit.C.assign(k, std::vector<double>(k, 0.0));
    fit.B.assign(k, 0.0);
    fit.burn_in = config.burn_in;
    fit.samples = config.samples;
    fit.seed = config.seed;
    fit.horizon = horizon;
    std::vector<std::vector<uint64_t>> att_count;
    if (config.record_attributions) {
        att_count.resize(n);
        for (size_t i = 0; i < n; ++i)
            att_count[i].assign(cand_begin[i + 1] - cand_begin[i] + 1, 0);  // slot 0 = background
    }

    const int total_sweeps = config.burn_in + config.samples;
    std::vector<double> weights;
    for (int sweep = 0; sweep < total_sweeps; ++sweep) {
        // (a) latent parents given current rates
        std::fill(bg_count.begin(), bg_count.end(), 0);
        for (auto& row : child_count) std::fill(row.begin(), row.end(), 0);
        double loglik_lags = 0.0;
        for (size_t i = 0; i < n; ++i) {
            const auto d = static_cast<size_t>(ev[i].d);
            weights.clear();
            weights.push_back(lambda0[d]);
            double total = lambda0[d];
            for (size_t c = cand_begin[i]; c < cand_begin[i + 1]; ++c) {
                const auto s = static_cast<size_t>(ev[cand_parent[c]].d);
                const double wt = w[s][d] * cand_g[c];
                weights.push_back(wt);
                total += wt;
            }
            size_t pick = 0;
            if (total > 0.0) {
                double u = unit(rng) * total;
                while (pick + 1 < weights.size() && u >= weights[pick]) u -= weights[pick++];
            }
            if (pick == 0) {
                parent[i] = -1;
                ++bg_count[d];
            } else {
                const size_t c = cand_begin[i] + pick - 1;
                parent[i] = cand_parent[c];
                ++child_count[static_cast<size_t>(ev[parent[i]].d)][d];
                loglik_lags += std::log(cand_g[c]);
            }
            if (sweep >= config.burn_in && config.record_attributions) ++att_count[i][pick];
        }

        // (b) conjugate rate updates
        for (size_t d = 0; d < k; ++d)
            lambda0[d] = gamma_draw(config.lambda0_shape + double(bg_count[d]),
                                    config.lambda0_rate + horizon);
        for (size_t s = 0; s < k; ++s)
            for (size_t d = 0; d < k; ++d)
                w[s][d] = gamma_draw(config.w_shape + double(child_count[s][d]),
                                     config.w_rate + double(n_of[s]));

        if (sweep < config.burn_in) continue;
        for (size_t d = 0; d < k; ++d) {
            fit.B[d] += double(bg_count[d]);
            fit.lambda0_mean[d] += lambda0[d];
            for (size_t s = 0; s < k; ++s) {
                fit.C[s][d] += double(child_count[s][d]);
                fit.w_mean[s][d] += w[s][d];
            }
        }
        // Complete-data log-likelihood at the just-drawn rates.
        double ll = loglik_lags;
        for (size_t d = 0; d < k; ++d)
            ll += double(bg_count[d]) * std::log(lambda0[d]) - lambda0[d] * horizon;
        for (size_t s = 0; s < k; ++s)
            for (size_t d = 0; d < k; ++d)
                ll += double(child_count[s][d]) * std::log(w[s][d]) -
                      w[s][d] * double(n_of[s]);
        if (!std::isfinite(ll))
            throw NumericalError("non-finite complete-data log-likelihood",
                                 model_dump(lambda0, w));
        fit.loglik_trace.push_back(ll);
    }

    const auto s_count = double(config.samples);
    for (size_t d = 0; d < k; ++d) {
        fit.B[d] /= s_count;
        fit.lambda0_mean[d] /= s_count;
        for (size_t s = 0; s < k; ++s) {
            fit.C[s][d] /= s_count;
            fit.w_mean[s][d] /= s_count;
        }
    }
    if (config.record_attributions) {
        fit.attributions.resize(n);
        for (size_t i = 0; i < n; ++i) {
            auto& probs = fit.attributions[i];
            probs.emplace_back(-1, double(att_count[i][0]) / s_count);
            for (size_t c = cand_begin[i]; c < cand_begin[i + 1]; ++c)
                probs.emplace_back(cand_parent[c],
                                   double(att_count[i][c - cand_begin[i] + 1]) / s_count);
        }
    }
    return fit;
}

std::vector<std::pair<uint64_t, HawkesFit>> fit_store(const events::EventStore& store,
                                                      const Kernel& kernel,
                                                      const GibbsConfig& config,
                                                      int workers) {
    if (store.window.end <= store.window.start)
        throw ConfigError("event store window is empty; cannot fit");
    if (store.communities.empty()) throw ConfigError("event store has no communities");
    const double horizon = double(store.window.end - store.window.start) / 3600.0;

    std::vector<uint64_t> keys;
    keys.reserve(store.series.size());
    for (const auto& [bits, per_community] : store.series) keys.push_back(bits);

    std::vector<std::pair<uint64_t, HawkesFit>> out(keys.size());
    detail::parallel_for(keys.size(), workers, [&](size_t idx) {
        const uint64_t bits = keys[idx];
        const auto& per_community = store.series.at(bits);
        std::vector<std::vector<double>> times(store.communities.size());
        for (size_t d = 0; d < store.communities.size(); ++d) {
            const auto it = per_community.find(store.communities[d]);
            if (it == per_community.end()) continue;
            times[d].reserve(it->second.size());
            for (int64_t ts : it->second)
                times[d].push_back(double(ts - store.window.start) / 3600.0);
        }
        GibbsConfig local = config;
        local.seed = config.seed ^ bits;  // private stream per phash
        HawkesFit fit = fit_gibbs(times, horizon, kernel, local);
        fit.processes = store.communities;
        out[idx] = {bits, std::move(fit)};
    });
    return out;
}

InfluenceReport influence_report(std::span<const HawkesFit> fits,
                                 std::span<const std::string> processes) {
    const size_t k = processes.size();
    if (k == 0) throw ConfigError("influence report needs a process list");
    InfluenceReport report;
    report.processes.assign(processes.begin(), processes.end());
    report.N.assign(k, 0);
    std::vector<std::vector<double>> c_sum(k, std::vector<double>(k, 0.0));
    std::vector<double> b_sum(k, 0.0);
    for (const HawkesFit& fit : fits) {
        if (fit.N.size() != k || fit.C.size() != k || fit.B.size() != k)
            throw ConfigError("fit dimensions do not match the process list");
        for (size_t d = 0; d < k; ++d) {
            report.N[d] += fit.N[d];
            b_sum[d] += fit.B[d];
            for (size_t s = 0; s < k; ++s) c_sum[s][d] += fit.C[s][d];
        }
    }

    report.influence.assign(k, std::vector<std::optional<double>>(k));
    report.efficiency.assign(k, std::vector<std::optional<double>>(k));
    report.background_share.assign(k, std::nullopt);
    report.external_efficiency.assign(k, std::nullopt);
    for (size_t d = 0; d < k; ++d) {
        if (report.N[d] == 0) continue;
        report.background_share[d] = 100.0 * b_sum[d] / double(report.N[d]);
        for (size_t s = 0; s < k; ++s)
            report.influence[s][d] = 100.0 * c_sum[s][d] / double(report.N[d]);
    }
    for (size_t s = 0; s < k; ++s) {
        if (report.N[s] == 0) continue;
        double external = 0.0;
        for (size_t d = 0; d < k; ++d) {
            report.efficiency[s][d] = 100.0 * c_sum[s][d] / double(report.N[s]);
            if (d != s) external += c_sum[s][d];
        }
        report.external_efficiency[s] = 100.0 * external / double(report.N[s]);
    }
    return report;
}

namespace {

// Asymptotic Kolmogorov survival function Q(x) = P(sup > x).
double kolmogorov_q(double x) {
    if (x <= 0.0) return 1.0;
    if (x < 1.18) {
        // Jacobi-theta form converges fast for small arguments.
        const double t = std::exp(-M_PI * M_PI / (8.0 * x * x));
        const double p =
            std::sqrt(2.0 * M_PI) / x *
            (t + std::pow(t, 9.0) + std::pow(t, 25.0) + std::pow(t, 49.0));
        return std::clamp(1.0 - p, 0.0, 1.0);
    }
    const double t = std::exp(-2.0 * x * x);
    const double q =
        2.0 * (t - std::pow(t, 4.0) + std::pow(t, 9.0) - std::pow(t, 16.0));
    return std::clamp(q, 0.0, 1.0);
}

}  // namespace

KsResult ks_two_sample(std::span<const double> a, std::span<const double> b) {
    if (a.empty() || b.empty()) throw StatError("KS test needs two non-empty samples");
    std::vector<double> sa(a.begin(), a.end()), sb(b.begin(), b.end());
    std::sort(sa.begin(), sa.end());
    std::sort(sb.begin(), sb.end());
    const double na = double(sa.size()), nb = double(sb.size());
    size_t i = 0, j = 0;
    double d = 0.0;
    while (i < sa.size() && j < sb.size()) {
        const double va = sa[i], vb = sb[j];
        // Step both CDFs past ties before comparing.
        if (va <= vb)
            while (i < sa.size() && sa[i] == va) ++i;
        if (vb <= va)
            while (j < sb.size() && sb[j] == vb) ++j;
        d = std::max(d, std::abs(double(i) / na - double(j) / nb));
    }
    KsResult result;
    result.statistic = d;
    const double ne = na * nb / (na + nb);
    result.p_value = kolmogorov_q(std::sqrt(ne) * d);
    return result;
}

double external_influence(const HawkesFit& fit, size_t source) {
    if (source >= fit.N.size()) throw ConfigError("source index out of range");
    double num = 0.0;
    uint64_t den = 0;
    for (size_t d = 0; d < fit.N.size(); ++d) {
        if (d == source) continue;
        num += fit.C[source][d];
        den += fit.N[d];
    }
    return den == 0 ? 0.0 : 100.0 * num / double(den);
}

std::vector<uint64_t> rank_by_external_influence(
    std::span<const std::pair<uint64_t, HawkesFit>> fits, size_t source) {
    std::vector<std::pair<double, uint64_t>> keyed;
    keyed.reserve(fits.size());
    for (const auto& [bits, fit] : fits)
        keyed.emplace_back(external_influence(fit, source), bits);
    std::sort(keyed.begin(), keyed.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;  // ascending hex
    });
    std::vector<uint64_t> out;
    out.reserve(keyed.size());
    for (const auto& [key, bits] : keyed) out.push_back(bits);
    return out;
}

void write_fits_jsonl(std::span<const std::pair<uint64_t, HawkesFit>> fits,
                      std::ostream& out) {
    for (const auto& [bits, fit] : fits) {
        nlohmann::ordered_json j;
        j["phash"] = detail::to_hex64(bits);
        j["processes"] = fit.processes;
        j["N"] = fit.N;
        j["lambda0"] = fit.lambda0_mean;
        j["W"] = fit.w_mean;
        j["C"] = fit.C;
        j["B"] = fit.B;
        nlohmann::ordered_json diag;
        diag["burn_in"] = fit.burn_in;
        diag["samples"] = fit.samples;
        diag["seed"] = fit.seed;
        diag["horizon"] = fit.horizon;
        diag["loglik_trace"] = fit.loglik_trace;
        j["diagnostics"] = std::move(diag);
        out << j.dump() << '\n';
    }
}

std::vector<std::pair<uint64_t, HawkesFit>> read_fits_jsonl(std::istream& in) {
    std::vector<std::pair<uint64_t, HawkesFit>> fits;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded())
            throw ParseError("fits line " + std::to_string(lineno) + " is malformed");
        try {
            HawkesFit fit;
            const uint64_t bits = detail::from_hex64(j.at("phash").get<std::string>());
            fit.processes = j.at("processes").get<std::vector<std::string>>();
            fit.N = j.at("N").get<std::vector<uint64_t>>();
            fit.lambda0_mean = j.at("lambda0").get<std::vector<double>>();
            fit.w_mean = j.at("W").get<std::vector<std::vector<double>>>();
            fit.C = j.at("C").get<std::vector<std::vector<double>>>();
            fit.B = j.at("B").get<std::vector<double>>();
            const auto& diag = j.at("diagnostics");
            fit.burn_in = diag.at("burn_in").get<int>();
            fit.samples = diag.at("samples").get<int>();
            fit.seed = diag.at("seed").get<uint64_t>();
            fit.horizon = diag.at("horizon").get<double>();
            fit.loglik_trace = diag.at("loglik_trace").get<std::vector<double>>();
            fits.emplace_back(bits, std::move(fit));
        } catch (const std::exception& e) {
            throw ParseError("fits line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return fits;
}

namespace {

std::string cell(const std::optional<double>& value) {
    if (!value) return "";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.10g", *value);
    return buf;
}

}  // namespace

void write_influence_csv(const InfluenceReport& report, std::ostream& out) {
    out << "source";
    for (const std::string& p : report.processes) out << ',' << detail::csv_quote(p);
    out << '\n';
    for (size_t s = 0; s < report.processes.size(); ++s) {
        out << detail::csv_quote(report.processes[s]);
        for (size_t d = 0; d < report.processes.size(); ++d)
            out << ',' << cell(report.influence[s][d]);
        out << '\n';
    }
    out << "background";
    for (size_t d = 0; d < report.processes.size(); ++d)
        out << ',' << cell(report.background_share[d]);
    out << '\n';
}

void write_efficiency_csv(const InfluenceReport& report, std::ostream& out) {
    out << "source";
    for (const std::string& p : report.processes) out << ',' << detail::csv_quote(p);
    out << ",external\n";
    for (size_t s = 0; s < report.processes.size(); ++s) {
        out << detail::csv_quote(report.processes[s]);
        for (size_t d = 0; d < report.processes.size(); ++d)
            out << ',' << cell(report.efficiency[s][d]);
        out << ',' << cell(report.external_efficiency[s]) << '\n';
    }
}

}  // namespace imgtrace::hawkes

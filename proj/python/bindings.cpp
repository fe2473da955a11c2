// Python bindings for the core operations: hashing, clustering, community
// detection, and the Hawkes fitting/reporting stack. Shapes stay
// Python-native (dicts, lists, tuples); None marks undefined table cells
// exactly like the CSV/JSON artifacts do.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "imgtrace/annotate.hpp"
#include "imgtrace/cluster.hpp"
#include "imgtrace/errors.hpp"
#include "imgtrace/graph.hpp"
#include "imgtrace/hawkes.hpp"
#include "imgtrace/phash.hpp"

namespace py = pybind11;
using namespace imgtrace;

namespace {

phash::GrayImage image_from_array(
    const py::array_t<float, py::array::c_style | py::array::forcecast>& arr) {
    if (arr.ndim() != 2) throw ConfigError("expected a 2-D grayscale array");
    phash::GrayImage img;
    img.height = static_cast<int>(arr.shape(0));
    img.width = static_cast<int>(arr.shape(1));
    if (img.width < 1 || img.height < 1) throw ConfigError("empty image array");
    img.pixels.assign(arr.data(), arr.data() + arr.size());
    return img;
}

std::vector<cluster::IdHash> corpus_from_pairs(
    const std::vector<std::pair<std::string, std::string>>& pairs) {
    std::vector<cluster::IdHash> corpus;
    corpus.reserve(pairs.size());
    for (const auto& [id, hex] : pairs) corpus.push_back({id, phash::from_hex(hex)});
    return corpus;
}

py::object opt_to_py(const std::optional<double>& value) {
    if (!value) return py::none();
    return py::float_(*value);
}

py::list matrix_to_py(const std::vector<std::vector<std::optional<double>>>& m) {
    py::list rows;
    for (const auto& row : m) {
        py::list cells;
        for (const auto& cell : row) cells.append(opt_to_py(cell));
        rows.append(cells);
    }
    return rows;
}

hawkes::HawkesModel model_from_args(const std::vector<double>& lambda0,
                                    const std::vector<std::vector<double>>& W, double tau,
                                    double max_lag) {
    hawkes::HawkesModel model;
    model.lambda0 = lambda0;
    model.W = W;
    model.kernel = {tau, max_lag};
    hawkes::validate_model(model);
    return model;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Perceptual-hash clustering, annotation graphs, and Hawkes influence analysis";

    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const ConfigError& e) {
            PyErr_SetString(PyExc_ValueError, e.what());
        } catch (const ParseError& e) {
            PyErr_SetString(PyExc_ValueError, e.what());
        } catch (const Error& e) {
            PyErr_SetString(PyExc_RuntimeError, e.what());
        }
    });

    // --- hashing ---
    m.def(
        "phash_bytes",
        [](const py::bytes& payload) {
            const std::string raw = payload;
            return phash::to_hex(phash::compute_phash(
                std::span(reinterpret_cast<const uint8_t*>(raw.data()), raw.size())));
        },
        py::arg("payload"), "Perceptual hash (16 hex chars) of an encoded image.");
    m.def(
        "phash_file",
        [](const std::string& path) {
            return phash::to_hex(phash::compute_phash_file(path));
        },
        py::arg("path"), "Perceptual hash of an image file.");
    m.def(
        "phash_array",
        [](const py::array_t<float, py::array::c_style | py::array::forcecast>& arr) {
            return phash::to_hex(phash::compute_phash(image_from_array(arr)));
        },
        py::arg("pixels"), "Perceptual hash of a 2-D grayscale array (values 0..255).");
    m.def(
        "hamming",
        [](const std::string& a, const std::string& b) {
            return phash::hamming(phash::from_hex(a), phash::from_hex(b));
        },
        py::arg("a"), py::arg("b"), "Hamming distance between two hex hashes.");

    // --- clustering ---
    m.def(
        "cluster",
        [](const std::vector<std::pair<std::string, std::string>>& corpus, int eps,
           int min_samples) {
            const cluster::Clustering got =
                cluster::cluster_corpus(corpus_from_pairs(corpus), {eps, min_samples});
            py::list clusters;
            for (const auto& c : got.clusters) {
                py::dict d;
                d["id"] = c.id;
                d["medoid"] = c.medoid;
                d["members"] = c.members;
                d["unique_hashes"] = c.unique_hashes;
                clusters.append(d);
            }
            py::dict out;
            out["clusters"] = clusters;
            out["noise"] = got.noise;
            return out;
        },
        py::arg("corpus"), py::arg("eps") = 8, py::arg("min_samples") = 2,
        "DBSCAN over Hamming space on (id, hex hash) pairs.");
    m.def(
        "medoid",
        [](const std::vector<std::pair<std::string, std::string>>& members) {
            return cluster::medoid(corpus_from_pairs(members));
        },
        py::arg("members"), "Id of the member minimizing mean Hamming distance.");

    // --- annotation helpers ---
    m.def(
        "registrable_domain",
        [](const std::string& url) -> py::object {
            const std::optional<std::string> got = annotate::registrable_domain(url);
            if (!got) return py::none();
            return py::str(*got);
        },
        py::arg("url"), "Registrable domain of a URL, or None.");

    // --- graphs ---
    m.def(
        "louvain",
        [](const std::vector<std::tuple<std::string, std::string, double>>& edges,
           uint64_t seed) {
            graph::WeightedGraph g;
            for (const auto& [u, v, w] : edges) {
                if (g.find(u) == UINT32_MAX) g.add_node(u, graph::NodeKind::cluster, u);
                if (g.find(v) == UINT32_MAX) g.add_node(v, graph::NodeKind::cluster, v);
                g.add_edge(g.find(u), g.find(v), w);
            }
            const graph::Partition part = graph::louvain(g, seed);
            py::dict communities;
            for (size_t i = 0; i < g.nodes.size(); ++i)
                communities[py::str(g.nodes[i].id)] = part.community_of[i];
            return py::make_tuple(communities, part.modularity);
        },
        py::arg("edges"), py::arg("seed") = 0,
        "Louvain communities of a weighted edge list; returns (node->community, modularity).");

    // --- Hawkes ---
    m.def(
        "simulate",
        [](const std::vector<double>& lambda0, const std::vector<std::vector<double>>& W,
           double tau, double max_lag, double horizon, uint64_t seed) {
            const hawkes::Simulation sim =
                hawkes::simulate(model_from_args(lambda0, W, tau, max_lag), horizon, seed);
            py::dict out;
            out["times"] = sim.times;
            out["true_C"] = sim.true_C;
            out["true_B"] = sim.true_B;
            return out;
        },
        py::arg("lambda0"), py::arg("W"), py::arg("tau") = 1.0, py::arg("max_lag") = 24.0,
        py::arg("horizon") = 24.0, py::arg("seed") = 0,
        "Branching simulation of a multivariate Hawkes process (times in hours).");
    m.def(
        "fit_hawkes",
        [](const std::vector<std::vector<double>>& times, double horizon, double tau,
           double max_lag, int burn_in, int samples, uint64_t seed,
           std::optional<std::vector<std::string>> processes) {
            hawkes::GibbsConfig config;
            config.burn_in = burn_in;
            config.samples = samples;
            config.seed = seed;
            const hawkes::Kernel kernel{tau, max_lag};
            hawkes::HawkesFit fit = hawkes::fit_gibbs(times, horizon, kernel, config);
            std::vector<std::string> names;
            if (processes) {
                if (processes->size() != times.size())
                    throw ConfigError("process name count does not match the series count");
                names = *processes;
            } else {
                for (size_t i = 0; i < times.size(); ++i) names.push_back("P" + std::to_string(i));
            }
            const hawkes::InfluenceReport report =
                hawkes::influence_report(std::span(&fit, 1), names);

            py::dict out;
            out["processes"] = names;
            out["N"] = fit.N;
            out["lambda0_mean"] = fit.lambda0_mean;
            out["w_mean"] = fit.w_mean;
            out["C"] = fit.C;
            out["B"] = fit.B;
            out["influence"] = matrix_to_py(report.influence);
            py::list background;
            for (const auto& v : report.background_share) background.append(opt_to_py(v));
            out["background_share"] = background;
            out["efficiency"] = matrix_to_py(report.efficiency);
            py::list external;
            for (const auto& v : report.external_efficiency) external.append(opt_to_py(v));
            out["external_efficiency"] = external;
            return out;
        },
        py::arg("times"), py::arg("horizon"), py::arg("tau") = 1.0, py::arg("max_lag") = 24.0,
        py::arg("burn_in") = 500, py::arg("samples") = 1500, py::arg("seed") = 0,
        py::arg("processes") = py::none(),
        "Gibbs fit of a multivariate Hawkes process plus the influence/efficiency report.");
    m.def(
        "ks_two_sample",
        [](const std::vector<double>& a, const std::vector<double>& b) {
            const hawkes::KsResult got = hawkes::ks_two_sample(a, b);
            return py::make_tuple(got.statistic, got.p_value);
        },
        py::arg("a"), py::arg("b"), "Two-sample KS test; returns (D, p).");
}

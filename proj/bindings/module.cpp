#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "semid/dataset.hpp"
#include "semid/decode.hpp"
#include "semid/error.hpp"
#include "semid/evaluation.hpp"
#include "semid/pipeline.hpp"
#include "semid/popularity.hpp"
#include "semid/rebalancer.hpp"
#include "semid/tokenizer.hpp"

namespace py = pybind11;
using namespace semid;

namespace {

ItemCatalog catalog_from_embeddings(const std::vector<std::vector<double>>& embeddings) {
    ItemCatalog catalog;
    for (size_t i = 0; i < embeddings.size(); ++i)
        catalog.items.push_back(Item{static_cast<int64_t>(i), embeddings[i], 0});
    catalog.validate();
    return catalog;
}

py::dict codebook_to_dict(const Codebook& cb) {
    py::dict d;
    py::list levels;
    for (const LevelCodebook& level : cb.levels) {
        py::dict ld;
        ld["codewords"] = level.codewords;
        ld["flat_ids"] = level.flat_ids;
        ld["retired"] = level.retired;
        levels.append(ld);
    }
    d["levels"] = levels;
    d["n_suffix"] = cb.n_suffix;
    d["suffix_base"] = cb.suffix_base;
    d["vocab_size"] = cb.vocab_size;
    return d;
}

py::list sids_to_list(const std::vector<SemanticId>& sids) {
    py::list out;
    for (const SemanticId& s : sids) {
        py::dict d;
        d["tokens"] = s.tokens;
        d["suffix"] = s.suffix;
        out.append(d);
    }
    return out;
}

}  // namespace

PYBIND11_MODULE(_pysemid, m) {
    m.doc() = "semantic-id tokenization, codebook rebalancing, and bias metrics";

    py::register_exception<InvalidArgument>(m, "InvalidArgumentError", PyExc_ValueError);
    py::register_exception<ConfigInvalid>(m, "ConfigInvalidError", PyExc_ValueError);
    py::register_exception<MissingArtifact>(m, "MissingArtifactError", PyExc_FileNotFoundError);
    py::register_exception<NumericDivergence>(m, "NumericDivergenceError", PyExc_ArithmeticError);

    py::class_<PipelineConfig>(m, "PipelineConfig")
        .def(py::init<>())
        .def_static("from_json_text", &PipelineConfig::from_json_text)
        .def_static("from_json_file", &PipelineConfig::from_json_file)
        .def("to_json_text", &PipelineConfig::to_json_text)
        .def("validate", &PipelineConfig::validate)
        .def_readwrite("seed", &PipelineConfig::seed)
        .def_readwrite("n_items", &PipelineConfig::n_items)
        .def_readwrite("n_users", &PipelineConfig::n_users)
        .def_readwrite("levels", &PipelineConfig::levels)
        .def_readwrite("codebook_size", &PipelineConfig::codebook_size)
        .def_readwrite("epochs", &PipelineConfig::epochs)
        .def_readwrite("d_model", &PipelineConfig::d_model)
        .def_readwrite("top_k", &PipelineConfig::top_k)
        .def_readwrite("beam_width", &PipelineConfig::beam_width);

    py::enum_<PipelineVariant>(m, "PipelineVariant")
        .value("BASELINE", PipelineVariant::Baseline)
        .value("REBALANCED", PipelineVariant::Rebalanced)
        .value("REWEIGHT", PipelineVariant::Reweight)
        .value("RERANK", PipelineVariant::Rerank);

    m.def("stage_gen_data", &stage_gen_data, py::arg("config"), py::arg("out"));
    m.def("stage_tokenize", &stage_tokenize, py::arg("config"), py::arg("out"));
    m.def("stage_analyze", &stage_analyze, py::arg("config"), py::arg("out"));
    m.def("stage_rebalance", &stage_rebalance, py::arg("config"), py::arg("out"));
    m.def("stage_train", &stage_train, py::arg("config"), py::arg("out"), py::arg("variant"));
    m.def(
        "stage_evaluate",
        [](const PipelineConfig& cfg, const std::string& out, PipelineVariant v) {
            const MetricsReport r = stage_evaluate(cfg, out, v);
            py::dict d;
            d["hr"] = r.hr;
            d["ndcg"] = r.ndcg;
            d["gu"] = r.gu;
            d["dgu"] = r.dgu;
            d["mgu"] = r.mgu;
            d["exposure_by_decile"] = r.exposure_by_decile;
            d["partition"] = r.partition_name;
            d["wall_seconds"] = r.wall_seconds;
            return d;
        },
        py::arg("config"), py::arg("out"), py::arg("variant"));
    m.def("stage_report", &stage_report, py::arg("config"), py::arg("out"));
    m.def("run_all", &run_all, py::arg("config"), py::arg("out"));

    m.def(
        "rq_fit",
        [](const std::vector<std::vector<double>>& embeddings, int levels, int k, int iters,
           uint64_t seed) {
            const RqFitResult fit =
                rq_fit(catalog_from_embeddings(embeddings), levels, k, iters, seed);
            py::dict d;
            d["codebook"] = codebook_to_dict(fit.codebook);
            d["sids"] = sids_to_list(fit.sids);
            return d;
        },
        py::arg("embeddings"), py::arg("levels"), py::arg("k"), py::arg("iters") = 50,
        py::arg("seed") = 1);

    m.def("balance_loss", &balance_loss, py::arg("assignment"), py::arg("pops"), py::arg("m"));
    m.def(
        "reweight",
        [](const std::vector<int64_t>& targets, const std::vector<int64_t>& freq, double beta) {
            return reweight_raw(targets, FrequencyTable{freq}, beta);
        },
        py::arg("target_items"), py::arg("freq"), py::arg("beta"));
    m.def("hr_at_k", &hr_at_k, py::arg("recs"), py::arg("targets"), py::arg("k"));
    m.def("ndcg_at_k", &ndcg_at_k, py::arg("recs"), py::arg("targets"), py::arg("k"));
    m.def(
        "bias_metrics",
        [](const std::vector<std::vector<int64_t>>& recs, const std::vector<int64_t>& freq,
           const std::vector<int>& group_of, const std::vector<std::string>& names, int k) {
            const BiasMetrics b =
                bias_metrics(recs, FrequencyTable{freq}, ItemPartition{group_of, names}, k);
            py::dict d;
            d["gu"] = b.gu;
            d["dgu"] = b.dgu;
            d["mgu"] = b.mgu;
            return d;
        },
        py::arg("recs"), py::arg("freq"), py::arg("group_of"), py::arg("names"), py::arg("k"));
}

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <optional>

#include "facts2story/align.hpp"
#include "facts2story/cloze.hpp"
#include "facts2story/corpus.hpp"
#include "facts2story/eval.hpp"
#include "facts2story/planner.hpp"
#include "facts2story/salience.hpp"

namespace py = pybind11;
using namespace f2s;

namespace {

EmbeddingTable table_from_dict(const std::map<std::string, std::vector<double>>& entries) {
    EmbeddingTable table;
    for (const auto& [word, vec] : entries) {
        if (table.dimension == 0) table.dimension = static_cast<int>(vec.size());
        if (static_cast<int>(vec.size()) != table.dimension)
            throw DataError("inconsistent embedding dimension");
        table.vectors.emplace(word, vec);
    }
    if (table.vectors.empty()) throw DataError("empty embedding table");
    return table;
}

FactSet fact_set_from_lists(const std::vector<TokenSequence>& facts) {
    FactSet fs;
    fs.facts = facts;
    return fs;
}

neural::EncoderConfig encoder_config(int vocab_size, int d_model, int n_heads, int n_layers,
                                     int d_ff, int max_len, int n_fact_rows) {
    neural::EncoderConfig cfg;
    cfg.vocab_size = vocab_size;
    cfg.d_model = d_model;
    cfg.n_heads = n_heads;
    cfg.n_layers = n_layers;
    cfg.d_ff = d_ff;
    cfg.max_len = max_len;
    cfg.n_fact_rows = n_fact_rows;
    return cfg;
}

neural::TrainConfig train_config(int epochs, int batch_size, double lr, std::uint64_t seed,
                                 double validation_fraction) {
    neural::TrainConfig cfg;
    cfg.epochs = epochs;
    cfg.batch_size = batch_size;
    cfg.adam.lr = lr;
    cfg.seed = seed;
    cfg.validation_fraction = validation_fraction;
    return cfg;
}

cloze::DecodingConfig decoding_config(const std::string& strategy, int k, double p,
                                      double temperature, double repetition_penalty,
                                      std::uint64_t seed) {
    cloze::DecodingConfig dec;
    if (strategy == "greedy") dec.strategy = cloze::DecodingConfig::Strategy::kGreedy;
    else if (strategy == "top_k") dec.strategy = cloze::DecodingConfig::Strategy::kTopK;
    else if (strategy == "nucleus") dec.strategy = cloze::DecodingConfig::Strategy::kNucleus;
    else throw DataError("unknown decoding strategy: " + strategy);
    dec.k = k;
    dec.p = p;
    dec.temperature = temperature;
    dec.repetition_penalty = repetition_penalty;
    dec.seed = seed;
    return dec;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "facts2story: salience ranking, spacing planner and cloze generation";

    py::register_exception<DataError>(m, "DataError");
    py::register_exception<NumericError>(m, "NumericError");

    py::class_<Vocabulary>(m, "Vocabulary")
        .def_static(
            "train",
            [](const std::vector<std::string>& texts, int num_merges) {
                std::vector<PlotRecord> corpus;
                for (std::size_t i = 0; i < texts.size(); ++i)
                    corpus.push_back({std::to_string(i), "", texts[i], ""});
                return train_bpe(corpus, num_merges);
            },
            py::arg("texts"), py::arg("num_merges"))
        .def_static("load", &Vocabulary::load, py::arg("path"))
        .def("save", &Vocabulary::save, py::arg("path"))
        .def("encode", &Vocabulary::encode, py::arg("text"), py::arg("continuation") = false)
        .def("decode", &Vocabulary::decode, py::arg("ids"))
        .def("size", &Vocabulary::size)
        .def_property_readonly_static("PAD", [](py::object) { return Vocabulary::kPad; })
        .def_property_readonly_static("BLANK", [](py::object) { return Vocabulary::kBlank; })
        .def_property_readonly_static("UNK", [](py::object) { return Vocabulary::kUnk; });

    py::class_<ClozeTemplate>(m, "ClozeTemplate")
        .def(py::init<>())
        .def_readwrite("length", &ClozeTemplate::length)
        .def_readwrite("known", &ClozeTemplate::known);

    py::class_<AlignedExample>(m, "AlignedExample")
        .def(py::init<>())
        .def_readwrite("doc_id", &AlignedExample::doc_id)
        .def_readwrite("story", &AlignedExample::story)
        .def_readwrite("fact_tokens", &AlignedExample::fact_tokens)
        .def_readwrite("fact_index", &AlignedExample::fact_index)
        .def_readwrite("positions", &AlignedExample::positions)
        .def_readwrite("spacings", &AlignedExample::spacings);

    m.def(
        "rank_facts",
        [](const std::vector<std::tuple<std::string, std::string, std::string, int>>& facts,
           const std::map<std::string, std::vector<double>>& embeddings, double damping, int k,
           double diversity_threshold, bool uniform_prior) {
            std::vector<ExtractionTuple> tuples;
            for (const auto& [s, r, o, idx] : facts) tuples.push_back({"", s, r, o, idx, {}});
            const EmbeddingTable table = table_from_dict(embeddings);
            SalienceConfig cfg;
            cfg.damping = damping;
            cfg.k = k;
            cfg.diversity_threshold = diversity_threshold;
            cfg.uniform_prior = uniform_prior;
            const SalienceGraph graph = build_graph(tuples, table, cfg.uniform_prior);
            const PageRankResult pr = pagerank(graph, cfg);
            const Selection sel = select_top_k(graph, pr.scores, cfg);
            py::dict out;
            out["scores"] = pr.scores;
            out["converged"] = pr.converged;
            out["selected"] = sel.indices;
            out["complete"] = sel.complete;
            std::vector<std::string> sentences;
            for (int idx : sel.indices)
                sentences.push_back(fact_to_sentence(graph.facts[static_cast<std::size_t>(idx)]));
            out["sentences"] = sentences;
            return out;
        },
        py::arg("facts"), py::arg("embeddings"), py::arg("damping") = 0.85, py::arg("k") = 5,
        py::arg("diversity_threshold") = 0.95, py::arg("uniform_prior") = false,
        "Personalized-PageRank salience over (subject, relation, object, sentence_index) facts");

    m.def(
        "align_facts",
        [](const std::vector<TokenSequence>& facts, const TokenSequence& story)
            -> std::optional<std::vector<int>> {
            return align_facts(fact_set_from_lists(facts), story);
        },
        py::arg("facts"), py::arg("story"));
    m.def("positions_to_spacings", &positions_to_spacings, py::arg("positions"));
    m.def(
        "spacings_to_template",
        [](const std::vector<TokenSequence>& facts, const std::vector<int>& spacings, int tail) {
            return spacings_to_template(fact_set_from_lists(facts), spacings, tail);
        },
        py::arg("facts"), py::arg("spacings"), py::arg("tail_blanks") = 0);
    m.def(
        "make_aligned_example",
        [](const std::string& doc_id, const std::vector<TokenSequence>& facts,
           const TokenSequence& story) -> std::optional<AlignedExample> {
            return build_aligned_example(doc_id, fact_set_from_lists(facts), story);
        },
        py::arg("doc_id"), py::arg("facts"), py::arg("story"));

    py::class_<planner::PlannerParams>(m, "Planner")
        .def_static(
            "train",
            [](const std::vector<AlignedExample>& dataset, int vocab_size, int d_model, int n_heads,
               int n_layers, int d_ff, int max_len, int n_fact_rows, int epochs, int batch_size,
               double lr, std::uint64_t seed, double validation_fraction) {
                const auto enc = encoder_config(vocab_size, d_model, n_heads, n_layers, d_ff,
                                                max_len, n_fact_rows);
                const auto tc = train_config(epochs, batch_size, lr, seed, validation_fraction);
                return planner::train_planner(dataset, enc, tc).params;
            },
            py::arg("dataset"), py::arg("vocab_size"), py::arg("d_model") = 32,
            py::arg("n_heads") = 2, py::arg("n_layers") = 1, py::arg("d_ff") = 64,
            py::arg("max_len") = 256, py::arg("n_fact_rows") = 6, py::arg("epochs") = 20,
            py::arg("batch_size") = 8, py::arg("lr") = 1e-3, py::arg("seed") = 0,
            py::arg("validation_fraction") = 1.0 / 9.0)
        .def(
            "predict_spacings",
            [](const planner::PlannerParams& params, const std::vector<TokenSequence>& facts) {
                const auto pred = planner::predict_spacings(params, fact_set_from_lists(facts));
                return py::make_tuple(pred.raw, pred.rounded);
            },
            py::arg("facts"))
        .def(
            "plan",
            [](const planner::PlannerParams& params, const std::vector<TokenSequence>& facts,
               double story_ratio, int max_len) {
                planner::LengthPolicy policy;
                policy.story_ratio = story_ratio;
                policy.max_len = max_len;
                return planner::plan(params, fact_set_from_lists(facts), policy);
            },
            py::arg("facts"), py::arg("story_ratio") = 6.0, py::arg("max_len") = 256);

    py::class_<cloze::ClozeLMParams>(m, "ClozeLM")
        .def_static(
            "train",
            [](const std::vector<AlignedExample>& dataset, int vocab_size, int d_model, int n_heads,
               int n_layers, int d_ff, int max_len, int n_fact_rows, int epochs, int batch_size,
               double lr, std::uint64_t seed, double validation_fraction) {
                const auto enc = encoder_config(vocab_size, d_model, n_heads, n_layers, d_ff,
                                                max_len, n_fact_rows);
                const auto tc = train_config(epochs, batch_size, lr, seed, validation_fraction);
                return cloze::train_cloze(dataset, enc, tc).params;
            },
            py::arg("dataset"), py::arg("vocab_size"), py::arg("d_model") = 32,
            py::arg("n_heads") = 2, py::arg("n_layers") = 1, py::arg("d_ff") = 64,
            py::arg("max_len") = 256, py::arg("n_fact_rows") = 6, py::arg("epochs") = 20,
            py::arg("batch_size") = 8, py::arg("lr") = 1e-3, py::arg("seed") = 0,
            py::arg("validation_fraction") = 1.0 / 9.0)
        .def(
            "fill",
            [](const cloze::ClozeLMParams& params, const ClozeTemplate& tpl,
               const std::string& strategy, int k, double p, double temperature,
               double repetition_penalty, std::uint64_t seed) {
                return cloze::fill(params, tpl,
                                   decoding_config(strategy, k, p, temperature, repetition_penalty,
                                                   seed));
            },
            py::arg("template"), py::arg("strategy") = "top_k", py::arg("k") = 40,
            py::arg("p") = 0.9, py::arg("temperature") = 0.85,
            py::arg("repetition_penalty") = 1.0, py::arg("seed") = 0)
        .def("loss", &cloze::cloze_loss, py::arg("example"))
        .def(
            "log_prob",
            [](const cloze::ClozeLMParams& params, const TokenSequence& story,
               const std::vector<int>& known_positions) {
                return cloze::sequence_log_prob(params, story,
                                                std::set<int>(known_positions.begin(),
                                                              known_positions.end()));
            },
            py::arg("story"), py::arg("known_positions"))
        .def("blank_accuracy", &cloze::blank_accuracy, py::arg("example"));

    m.def(
        "sample_top_k",
        [](const std::vector<double>& logits, int k, double temperature, std::uint64_t seed) {
            neural::Rng rng(seed);
            return cloze::sample_top_k(logits, k, temperature, rng);
        },
        py::arg("logits"), py::arg("k"), py::arg("temperature") = 1.0, py::arg("seed") = 0);
    m.def(
        "sample_nucleus",
        [](const std::vector<double>& logits, double p, double temperature, std::uint64_t seed) {
            neural::Rng rng(seed);
            return cloze::sample_nucleus(logits, p, temperature, rng);
        },
        py::arg("logits"), py::arg("p"), py::arg("temperature") = 1.0, py::arg("seed") = 0);
    m.def("apply_repetition_penalty", &cloze::apply_repetition_penalty, py::arg("logits"),
          py::arg("history"), py::arg("penalty"));

    m.def(
        "fact_adherence",
        [](const TokenSequence& story, const std::vector<TokenSequence>& facts, int window_slack) {
            const auto result = eval::fact_adherence(story, fact_set_from_lists(facts), window_slack);
            py::dict out;
            out["count"] = result.count;
            out["per_fact"] = result.per_fact;
            return out;
        },
        py::arg("story"), py::arg("facts"), py::arg("window_slack") = 10);

    m.def("spacing_loss", &planner::spacing_loss, py::arg("y_true"), py::arg("y_pred"));
    m.def("normalize_whitespace", &normalize_whitespace, py::arg("text"));
}

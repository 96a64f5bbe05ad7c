#include "facts2story/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

namespace f2s::pipeline {

namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;

std::uint64_t fnv1a64(const std::string& s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

std::string format_double(double x) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), x);
    return std::string(buf, ptr);
}

void ensure_dir(const std::string& dir) {
    if (!dir.empty()) fs::create_directories(dir);
}

void ensure_parent(const std::string& path) {
    const fs::path parent = fs::path(path).parent_path();
    if (!parent.empty()) fs::create_directories(parent);
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write file: " + path);
    out << text;
}

void write_resolved_config(const PipelineConfig& cfg, const std::string& command) {
    ensure_dir(cfg.paths.output_dir);
    const fs::path p = fs::path(cfg.paths.output_dir) / ("resolved_config." + command + ".json");
    write_text(p.string(), config_to_json(cfg) + "\n");
}

json encoder_to_json(const neural::EncoderConfig& e) {
    return json{{"d_model", e.d_model},   {"n_heads", e.n_heads},
                {"n_layers", e.n_layers}, {"d_ff", e.d_ff},
                {"max_len", e.max_len},   {"n_fact_rows", e.n_fact_rows},
                {"dropout", e.dropout}};
}

void encoder_from_json(const json& j, neural::EncoderConfig& e) {
    e.d_model = j.value("d_model", e.d_model);
    e.n_heads = j.value("n_heads", e.n_heads);
    e.n_layers = j.value("n_layers", e.n_layers);
    e.d_ff = j.value("d_ff", e.d_ff);
    e.max_len = j.value("max_len", e.max_len);
    e.n_fact_rows = j.value("n_fact_rows", e.n_fact_rows);
    e.dropout = j.value("dropout", e.dropout);
}

std::string strategy_name(cloze::DecodingConfig::Strategy s) {
    switch (s) {
        case cloze::DecodingConfig::Strategy::kGreedy: return "greedy";
        case cloze::DecodingConfig::Strategy::kTopK: return "top_k";
        case cloze::DecodingConfig::Strategy::kNucleus: return "nucleus";
    }
    return "top_k";
}

cloze::DecodingConfig::Strategy strategy_from_name(const std::string& name) {
    if (name == "greedy") return cloze::DecodingConfig::Strategy::kGreedy;
    if (name == "top_k") return cloze::DecodingConfig::Strategy::kTopK;
    if (name == "nucleus") return cloze::DecodingConfig::Strategy::kNucleus;
    throw DataError("unknown decoding strategy: " + name);
}

Vocabulary load_or_train_vocab(const PipelineConfig& cfg, const std::vector<PlotRecord>& plots) {
    if (cfg.paths.vocab.empty()) throw DataError("config is missing paths.vocab");
    if (fs::exists(cfg.paths.vocab)) return Vocabulary::load(cfg.paths.vocab);
    Vocabulary vocab = train_bpe(plots, cfg.num_merges);
    ensure_parent(cfg.paths.vocab);
    vocab.save(cfg.paths.vocab);
    return vocab;
}

Vocabulary require_vocab(const PipelineConfig& cfg) {
    if (cfg.paths.vocab.empty() || !fs::exists(cfg.paths.vocab))
        throw DataError("vocabulary file not found: " + cfg.paths.vocab + " (run derive first)");
    return Vocabulary::load(cfg.paths.vocab);
}

std::vector<PlotRecord> load_filtered_plots(const PipelineConfig& cfg, int* dropped = nullptr) {
    std::vector<PlotRecord> plots = read_plots(cfg.paths.plots);
    std::sort(plots.begin(), plots.end(),
              [](const PlotRecord& a, const PlotRecord& b) { return a.id < b.id; });
    if (cfg.published_after.empty()) return plots;
    std::vector<PlotRecord> kept;
    for (auto& p : plots) {
        if (p.published.empty() || p.published > cfg.published_after)
            kept.push_back(std::move(p));
        else if (dropped != nullptr)
            *dropped += 1;
    }
    return kept;
}

struct CheckpointedState {
    neural::TrainState state;
    bool resumed = false;
};

// The .resume checkpoint stores the live parameters plus optimizer moments
// and the best-so-far snapshot under extra/.
CheckpointedState load_resume_state(const std::string& path, const std::string& model,
                                    neural::EncoderConfig& cfg_out) {
    CheckpointedState out;
    neural::Checkpoint ckpt = neural::load_checkpoint(path);
    if (ckpt.model != model) throw DataError("checkpoint is not a " + model + " checkpoint: " + path);
    cfg_out = ckpt.config;
    out.state.params = ckpt.tensors;
    for (const auto& [name, tensor] : ckpt.extra) {
        if (name.rfind("adam.m.", 0) == 0) out.state.adam.m[name.substr(7)] = tensor;
        else if (name.rfind("adam.v.", 0) == 0) out.state.adam.v[name.substr(7)] = tensor;
        else if (name.rfind("best.", 0) == 0) out.state.best_params[name.substr(5)] = tensor;
    }
    try {
        out.state.adam.t = std::stoll(ckpt.meta.at("adam_t"));
        out.state.epochs_done = std::stoi(ckpt.meta.at("epochs_done"));
        out.state.best_epoch = std::stoi(ckpt.meta.at("best_epoch"));
        out.state.best_val_loss = std::stod(ckpt.meta.at("best_val_loss"));
    } catch (const std::exception&) {
        throw DataError("not a resumable checkpoint (use the .resume file): " + path);
    }
    out.resumed = true;
    return out;
}

void save_train_outputs(const std::string& ckpt_path, const std::string& model,
                        const neural::EncoderConfig& enc_cfg, const neural::TrainState& state,
                        const std::vector<neural::TrainLogRow>& new_rows, bool append_log) {
    ensure_parent(ckpt_path);
    neural::Checkpoint best;
    best.model = model;
    best.config = enc_cfg;
    best.tensors = state.best_params;
    best.meta["best_epoch"] = std::to_string(state.best_epoch);
    best.meta["best_val_loss"] = format_double(state.best_val_loss);
    best.meta["epochs_done"] = std::to_string(state.epochs_done);
    neural::save_checkpoint(ckpt_path, best);

    neural::Checkpoint resume = best;
    resume.tensors = state.params;
    for (const auto& [name, t] : state.adam.m) resume.extra["adam.m." + name] = t;
    for (const auto& [name, t] : state.adam.v) resume.extra["adam.v." + name] = t;
    for (const auto& [name, t] : state.best_params) resume.extra["best." + name] = t;
    resume.meta["adam_t"] = std::to_string(state.adam.t);
    neural::save_checkpoint(ckpt_path + ".resume", resume);

    const std::string log_path = ckpt_path + ".log.csv";
    std::ofstream log(log_path, append_log ? std::ios::app | std::ios::binary : std::ios::binary);
    if (!log) throw DataError("cannot write training log: " + log_path);
    if (!append_log) log << "epoch,train_loss,val_loss\n";
    for (const auto& row : new_rows) {
        log << row.epoch << "," << format_double(row.train_loss) << ",";
        if (std::isnan(row.val_loss)) log << "";
        else log << format_double(row.val_loss);
        log << "\n";
    }
}

json template_to_json(const ClozeTemplate& tpl, const std::vector<int>& spacings) {
    json known = json::array();
    for (const auto& [pos, id] : tpl.known) known.push_back(json::array({pos, id}));
    return json{{"template_len", tpl.length}, {"spacings", spacings}, {"known", known}};
}

json decoding_to_json(const cloze::DecodingConfig& dec) {
    return json{{"strategy", strategy_name(dec.strategy)},
                {"k", dec.k},
                {"p", dec.p},
                {"temperature", dec.temperature},
                {"repetition_penalty", dec.repetition_penalty},
                {"seed", dec.seed}};
}

struct FactsRecord {
    std::string doc_id;
    std::vector<std::string> sentences;
};

std::vector<FactsRecord> read_facts_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open facts file: " + path);
    std::vector<FactsRecord> records;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object() || !j.contains("doc_id") || !j.contains("facts"))
            throw DataError(path + ":" + std::to_string(line_no) + ": invalid facts record");
        FactsRecord rec;
        rec.doc_id = j.at("doc_id").get<std::string>();
        for (const auto& f : j.at("facts")) rec.sentences.push_back(f.get<std::string>());
        records.push_back(std::move(rec));
    }
    return records;
}

}  // namespace

FactSet tokenize_facts(const std::vector<std::string>& sentences, const Vocabulary& vocab) {
    FactSet fact_set;
    for (const auto& s : sentences) {
        TokenSequence ids = vocab.encode(s, /*continuation=*/true);
        if (ids.empty()) throw DataError("fact renders to an empty token sequence: " + s);
        fact_set.facts.push_back(std::move(ids));
    }
    return fact_set;
}

PipelineConfig load_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open config file: " + path);
    json j = json::parse(in, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw DataError("invalid config file: " + path);

    PipelineConfig cfg;
    if (j.contains("paths")) {
        const json& p = j.at("paths");
        cfg.paths.plots = p.value("plots", "");
        cfg.paths.extractions = p.value("extractions", "");
        cfg.paths.embeddings = p.value("embeddings", "");
        cfg.paths.vocab = p.value("vocab", "");
        cfg.paths.dataset = p.value("dataset", "");
        cfg.paths.planner_checkpoint = p.value("planner_checkpoint", "");
        cfg.paths.cloze_checkpoint = p.value("cloze_checkpoint", "");
        cfg.paths.output_dir = p.value("output_dir", ".");
    }
    if (j.contains("salience")) {
        const json& s = j.at("salience");
        cfg.salience.damping = s.value("damping", cfg.salience.damping);
        cfg.salience.tolerance = s.value("tolerance", cfg.salience.tolerance);
        cfg.salience.max_iterations = s.value("max_iterations", cfg.salience.max_iterations);
        cfg.salience.diversity_threshold =
            s.value("diversity_threshold", cfg.salience.diversity_threshold);
        cfg.salience.uniform_prior = s.value("uniform_prior", cfg.salience.uniform_prior);
    }
    if (j.contains("planner_encoder")) encoder_from_json(j.at("planner_encoder"), cfg.planner_encoder);
    if (j.contains("cloze_encoder")) encoder_from_json(j.at("cloze_encoder"), cfg.cloze_encoder);
    if (j.contains("training")) {
        const json& t = j.at("training");
        cfg.training.epochs = t.value("epochs", cfg.training.epochs);
        cfg.training.batch_size = t.value("batch_size", cfg.training.batch_size);
        cfg.training.adam.lr = t.value("lr", cfg.training.adam.lr);
        cfg.training.adam.beta1 = t.value("beta1", cfg.training.adam.beta1);
        cfg.training.adam.beta2 = t.value("beta2", cfg.training.adam.beta2);
        cfg.training.adam.eps = t.value("eps", cfg.training.adam.eps);
        cfg.training.seed = t.value("seed", cfg.training.seed);
        cfg.training.validation_fraction =
            t.value("validation_fraction", cfg.training.validation_fraction);
    }
    if (j.contains("decoding")) {
        const json& d = j.at("decoding");
        cfg.decoding.strategy = strategy_from_name(d.value("strategy", "top_k"));
        cfg.decoding.k = d.value("k", cfg.decoding.k);
        cfg.decoding.p = d.value("p", cfg.decoding.p);
        cfg.decoding.temperature = d.value("temperature", cfg.decoding.temperature);
        cfg.decoding.repetition_penalty =
            d.value("repetition_penalty", cfg.decoding.repetition_penalty);
        cfg.decoding.seed = d.value("seed", cfg.decoding.seed);
    }
    if (j.contains("length_policy")) {
        const json& l = j.at("length_policy");
        const std::string mode = l.value("mode", "ratio");
        if (mode == "ratio") cfg.length_policy.mode = planner::LengthPolicy::Mode::kRatio;
        else if (mode == "fixed") cfg.length_policy.mode = planner::LengthPolicy::Mode::kFixed;
        else throw DataError("unknown length policy mode: " + mode);
        cfg.length_policy.story_ratio = l.value("story_ratio", cfg.length_policy.story_ratio);
        cfg.length_policy.fixed_tail = l.value("fixed_tail", cfg.length_policy.fixed_tail);
        cfg.length_policy.max_len = l.value("max_len", cfg.length_policy.max_len);
    }
    cfg.num_merges = j.value("num_merges", cfg.num_merges);
    cfg.k_facts = j.value("k_facts", cfg.k_facts);
    cfg.window_slack = j.value("window_slack", cfg.window_slack);
    cfg.published_after = j.value("published_after", cfg.published_after);
    cfg.model_name = j.value("model_name", cfg.model_name);

    if (cfg.training.validation_fraction < 0.0 || cfg.training.validation_fraction >= 1.0)
        throw DataError("validation_fraction must be in [0, 1)");
    if (cfg.k_facts < 1) throw DataError("k_facts must be at least 1");
    return cfg;
}

std::string config_to_json(const PipelineConfig& cfg) {
    json j;
    j["paths"] = {{"plots", cfg.paths.plots},
                  {"extractions", cfg.paths.extractions},
                  {"embeddings", cfg.paths.embeddings},
                  {"vocab", cfg.paths.vocab},
                  {"dataset", cfg.paths.dataset},
                  {"planner_checkpoint", cfg.paths.planner_checkpoint},
                  {"cloze_checkpoint", cfg.paths.cloze_checkpoint},
                  {"output_dir", cfg.paths.output_dir}};
    j["salience"] = {{"damping", cfg.salience.damping},
                     {"tolerance", cfg.salience.tolerance},
                     {"max_iterations", cfg.salience.max_iterations},
                     {"diversity_threshold", cfg.salience.diversity_threshold},
                     {"uniform_prior", cfg.salience.uniform_prior}};
    j["planner_encoder"] = encoder_to_json(cfg.planner_encoder);
    j["cloze_encoder"] = encoder_to_json(cfg.cloze_encoder);
    j["training"] = {{"epochs", cfg.training.epochs},
                     {"batch_size", cfg.training.batch_size},
                     {"lr", cfg.training.adam.lr},
                     {"beta1", cfg.training.adam.beta1},
                     {"beta2", cfg.training.adam.beta2},
                     {"eps", cfg.training.adam.eps},
                     {"seed", cfg.training.seed},
                     {"validation_fraction", cfg.training.validation_fraction}};
    j["decoding"] = decoding_to_json(cfg.decoding);
    j["length_policy"] = {
        {"mode", cfg.length_policy.mode == planner::LengthPolicy::Mode::kRatio ? "ratio" : "fixed"},
        {"story_ratio", cfg.length_policy.story_ratio},
        {"fixed_tail", cfg.length_policy.fixed_tail},
        {"max_len", cfg.length_policy.max_len}};
    j["num_merges"] = cfg.num_merges;
    j["k_facts"] = cfg.k_facts;
    j["window_slack"] = cfg.window_slack;
    j["published_after"] = cfg.published_after;
    j["model_name"] = cfg.model_name;
    return j.dump(2);
}

DeriveSummary cmd_derive(const PipelineConfig& cfg) {
    DeriveSummary summary;
    std::vector<PlotRecord> plots = load_filtered_plots(cfg, &summary.skipped_date);
    if (plots.empty()) throw DataError("no plots to process");
    const Vocabulary vocab = load_or_train_vocab(cfg, plots);
    const EmbeddingTable table = EmbeddingTable::load(cfg.paths.embeddings);

    std::map<std::string, std::vector<ExtractionTuple>> by_doc;
    for (auto& t : read_extractions(cfg.paths.extractions)) by_doc[t.doc_id].push_back(std::move(t));

    SalienceConfig sal = cfg.salience;
    sal.k = cfg.k_facts;

    ensure_dir(cfg.paths.output_dir);
    const std::string skip_path =
        (fs::path(cfg.paths.output_dir) / "derive_skipped.jsonl").string();
    std::ofstream skip_log(skip_path, std::ios::binary);

    auto skip = [&](const std::string& id, const std::string& reason, int& counter) {
        skip_log << json{{"doc_id", id}, {"reason", reason}}.dump() << "\n";
        counter += 1;
    };

    std::vector<AlignedExample> dataset;
    for (const auto& plot : plots) {
        summary.documents += 1;
        std::vector<ExtractionTuple> tuples;
        if (auto it = by_doc.find(plot.id); it != by_doc.end()) {
            const auto n_sentences = count_sentences(plot.plot);
            for (const auto& tuple : it->second) {
                if (static_cast<std::size_t>(tuple.sentence_index) >= n_sentences)
                    skip_log << json{{"doc_id", plot.id},
                                     {"reason", "extraction sentence_index out of range"}}
                                    .dump()
                             << "\n";
                else
                    tuples.push_back(tuple);
            }
        }
        if (static_cast<int>(tuples.size()) < cfg.k_facts) {
            skip(plot.id, "fewer than k extractions", summary.skipped_few_facts);
            continue;
        }
        const SalienceGraph graph = build_graph(tuples, table, sal.uniform_prior);
        const PageRankResult ranked = pagerank(graph, sal);
        const Selection selection = select_top_k(graph, ranked.scores, sal);
        if (!selection.complete) {
            skip(plot.id, "fewer than k facts after diversity filtering", summary.skipped_few_facts);
            continue;
        }

        std::vector<std::string> sentences;
        sentences.reserve(selection.indices.size());
        for (int idx : selection.indices)
            sentences.push_back(fact_to_sentence(graph.facts[static_cast<std::size_t>(idx)]));
        FactSet fact_set;
        try {
            fact_set = tokenize_facts(sentences, vocab);
        } catch (const DataError&) {
            skip(plot.id, "fact renders to an empty token sequence", summary.skipped_few_facts);
            continue;
        }

        const TokenSequence story = vocab.encode(plot.plot);
        if (static_cast<int>(fact_set.total_tokens()) + 1 > cfg.planner_encoder.max_len ||
            static_cast<int>(story.size()) > cfg.cloze_encoder.max_len) {
            skip(plot.id, "sequence exceeds max_len", summary.skipped_too_long);
            continue;
        }

        std::size_t first_unmatched = 0;
        auto example = build_aligned_example(plot.id, fact_set, story, &first_unmatched);
        if (!example) {
            skip(plot.id, "alignment failure at fact token " + std::to_string(first_unmatched),
                 summary.skipped_alignment);
            continue;
        }
        dataset.push_back(std::move(*example));
        summary.written += 1;
    }

    if (cfg.paths.dataset.empty()) throw DataError("config is missing paths.dataset");
    ensure_parent(cfg.paths.dataset);
    write_aligned_dataset(cfg.paths.dataset, dataset);
    write_resolved_config(cfg, "derive");
    return summary;
}

void cmd_rank(const PipelineConfig& cfg, const std::string& out_path) {
    std::vector<PlotRecord> plots = load_filtered_plots(cfg);
    const EmbeddingTable table = EmbeddingTable::load(cfg.paths.embeddings);
    std::map<std::string, std::vector<ExtractionTuple>> by_doc;
    for (auto& t : read_extractions(cfg.paths.extractions)) by_doc[t.doc_id].push_back(std::move(t));

    SalienceConfig sal = cfg.salience;
    sal.k = cfg.k_facts;

    ensure_parent(out_path);
    std::ofstream out(out_path, std::ios::binary);
    if (!out) throw DataError("cannot write ranked facts: " + out_path);
    for (const auto& plot : plots) {
        auto it = by_doc.find(plot.id);
        if (it == by_doc.end() || it->second.empty()) continue;
        const SalienceGraph graph = build_graph(it->second, table, sal.uniform_prior);
        const PageRankResult ranked = pagerank(graph, sal);
        const Selection selection = select_top_k(graph, ranked.scores, sal);

        json facts = json::array();
        for (int idx : selection.indices) {
            const auto& fact = graph.facts[static_cast<std::size_t>(idx)];
            facts.push_back(json{{"text", fact_to_sentence(fact)},
                                 {"sentence_index", fact.sentence_index},
                                 {"score", ranked.scores[static_cast<std::size_t>(idx)]}});
        }
        out << json{{"doc_id", plot.id}, {"facts", facts}, {"converged", ranked.converged}}.dump()
            << "\n";
    }
    write_resolved_config(cfg, "rank");
}

namespace {

TrainSummary run_training(const PipelineConfig& cfg, const std::string& model,
                          const std::string& resume_from) {
    if (cfg.paths.dataset.empty()) throw DataError("config is missing paths.dataset");
    const std::vector<AlignedExample> dataset = read_aligned_dataset(cfg.paths.dataset);
    if (dataset.empty()) throw DataError("empty dataset: " + cfg.paths.dataset);
    const Vocabulary vocab = require_vocab(cfg);

    neural::EncoderConfig enc = model == "planner" ? cfg.planner_encoder : cfg.cloze_encoder;
    enc.vocab_size = vocab.size();
    enc.n_fact_rows = cfg.k_facts + 1;
    enc.validate();

    const std::string ckpt_path =
        model == "planner" ? cfg.paths.planner_checkpoint : cfg.paths.cloze_checkpoint;
    if (ckpt_path.empty()) throw DataError("config is missing the " + model + " checkpoint path");

    CheckpointedState start;
    if (!resume_from.empty()) {
        start = load_resume_state(resume_from, model, enc);
        if (enc.vocab_size != vocab.size())
            throw DataError("checkpoint vocabulary size (" + std::to_string(enc.vocab_size) +
                            ") does not match " + cfg.paths.vocab + " (" +
                            std::to_string(vocab.size()) + ")");
    } else if (model == "planner") {
        neural::Rng rng(cfg.training.seed);
        start.state.params = planner::init_planner(enc, rng).store;
    } else {
        neural::Rng rng(cfg.training.seed);
        start.state.params = cloze::init_cloze(enc, rng).store;
    }

    std::vector<neural::TrainLogRow> rows;
    neural::TrainState state;
    if (model == "planner") {
        auto result = planner::train_planner_from(dataset, std::move(start.state), enc, cfg.training);
        state = std::move(result.state);
        rows = std::move(result.log);
    } else {
        auto result = cloze::train_cloze_from(dataset, std::move(start.state), enc, cfg.training);
        state = std::move(result.state);
        rows = std::move(result.log);
    }

    save_train_outputs(ckpt_path, model, enc, state, rows, start.resumed);
    write_resolved_config(cfg, "train-" + model);

    TrainSummary summary;
    summary.epochs_done = state.epochs_done;
    summary.best_epoch = state.best_epoch;
    summary.best_val_loss = state.best_val_loss;
    summary.checkpoint_path = ckpt_path;
    summary.resume_path = ckpt_path + ".resume";
    summary.log_path = ckpt_path + ".log.csv";
    return summary;
}

}  // namespace

TrainSummary cmd_train_planner(const PipelineConfig& cfg, const std::string& resume_from) {
    return run_training(cfg, "planner", resume_from);
}

TrainSummary cmd_train_cloze(const PipelineConfig& cfg, const std::string& resume_from) {
    return run_training(cfg, "cloze", resume_from);
}

GenerateSummary cmd_generate(const PipelineConfig& cfg, const std::string& facts_path,
                             const std::string& out_path) {
    const Vocabulary vocab = require_vocab(cfg);
    neural::Checkpoint planner_ckpt = neural::load_checkpoint(cfg.paths.planner_checkpoint);
    neural::Checkpoint cloze_ckpt = neural::load_checkpoint(cfg.paths.cloze_checkpoint);
    if (planner_ckpt.model != "planner") throw DataError("not a planner checkpoint");
    if (cloze_ckpt.model != "cloze") throw DataError("not a cloze checkpoint");
    for (const auto* ckpt : {&planner_ckpt, &cloze_ckpt})
        if (ckpt->config.vocab_size != vocab.size())
            throw DataError(ckpt->model + " checkpoint vocabulary size (" +
                            std::to_string(ckpt->config.vocab_size) + ") does not match " +
                            cfg.paths.vocab + " (" + std::to_string(vocab.size()) + ")");

    planner::PlannerParams planner_params{planner_ckpt.config, std::move(planner_ckpt.tensors)};
    cloze::ClozeLMParams cloze_params{cloze_ckpt.config, std::move(cloze_ckpt.tensors)};

    planner::LengthPolicy policy = cfg.length_policy;
    policy.max_len = std::min(policy.max_len, cloze_params.config.max_len);

    ensure_parent(out_path);
    std::ofstream out(out_path, std::ios::binary);
    if (!out) throw DataError("cannot write stories file: " + out_path);

    GenerateSummary summary;
    for (const auto& rec : read_facts_file(facts_path)) {
        try {
            if (static_cast<int>(rec.sentences.size()) != cfg.k_facts)
                throw DataError("expected " + std::to_string(cfg.k_facts) + " facts, got " +
                                std::to_string(rec.sentences.size()));
            const FactSet fact_set = tokenize_facts(rec.sentences, vocab);
            const ClozeTemplate tpl = planner::plan(planner_params, fact_set, policy);
            const std::vector<int> spacings =
                planner::predict_spacings(planner_params, fact_set).rounded;

            cloze::DecodingConfig dec = cfg.decoding;
            dec.seed = cfg.decoding.seed ^ fnv1a64(rec.doc_id);
            const TokenSequence story = cloze::fill(cloze_params, tpl, dec);

            std::string text = vocab.decode(story);
            if (!text.empty() && text.front() == ' ') text.erase(text.begin());

            out << json{{"doc_id", rec.doc_id},
                        {"template", template_to_json(tpl, spacings)},
                        {"token_ids", story},
                        {"text", text},
                        {"decoding", decoding_to_json(dec)}}
                       .dump()
                << "\n";
            summary.written += 1;
        } catch (const DataError& err) {
            std::ostringstream msg;
            msg << "generate: skipping " << rec.doc_id << ": " << err.what() << "\n";
            std::fputs(msg.str().c_str(), stderr);
            summary.failed += 1;
        }
    }
    write_resolved_config(cfg, "generate");
    return summary;
}

eval::EvalReport cmd_evaluate(const PipelineConfig& cfg, const std::string& stories_path,
                              const std::string& facts_path, const std::string& report_path) {
    const Vocabulary vocab = require_vocab(cfg);

    std::ifstream in(stories_path, std::ios::binary);
    if (!in) throw DataError("cannot open stories file: " + stories_path);
    std::map<std::string, TokenSequence> stories;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.contains("doc_id") || !j.contains("token_ids"))
            throw DataError(stories_path + ":" + std::to_string(line_no) + ": invalid story record");
        stories[j.at("doc_id").get<std::string>()] = j.at("token_ids").get<TokenSequence>();
    }
    if (stories.empty()) throw DataError("empty stories file: " + stories_path);

    std::map<std::string, FactSet> fact_sets;
    for (const auto& rec : read_facts_file(facts_path))
        fact_sets[rec.doc_id] = tokenize_facts(rec.sentences, vocab);

    std::vector<std::string> orphans;
    for (const auto& [id, _] : stories)
        if (!fact_sets.count(id)) orphans.push_back("story without facts: " + id);
    for (const auto& [id, _] : fact_sets)
        if (!stories.count(id)) orphans.push_back("facts without story: " + id);
    if (!orphans.empty()) {
        std::string msg = "doc_id mismatch:";
        for (const auto& o : orphans) msg += "\n  " + o;
        throw DataError(msg);
    }

    std::vector<eval::AdherenceResult> results;
    for (const auto& [id, story] : stories)
        results.push_back(eval::fact_adherence(story, fact_sets.at(id), cfg.window_slack));

    eval::EvalReport report = eval::aggregate_report(results, cfg.model_name);
    ensure_parent(report_path);
    write_text(report_path, eval::report_to_json(report) + "\n");
    write_resolved_config(cfg, "evaluate");
    return report;
}

std::string cmd_stats(const PipelineConfig& cfg) {
    const std::vector<AlignedExample> dataset = read_aligned_dataset(cfg.paths.dataset);
    Vocabulary vocab;
    const Vocabulary* vocab_ptr = nullptr;
    if (!cfg.paths.vocab.empty() && fs::exists(cfg.paths.vocab)) {
        vocab = Vocabulary::load(cfg.paths.vocab);
        vocab_ptr = &vocab;
    }
    const StatsReport stats = corpus_stats(dataset, vocab_ptr);

    json j;
    j["n"] = stats.n;
    j["mean_token_ratio"] = stats.mean_token_ratio;
    if (!std::isnan(stats.mean_word_ratio)) j["mean_word_ratio"] = stats.mean_word_ratio;
    j["mean_mask_rate"] = stats.mean_mask_rate;
    j["mean_story_tokens"] = stats.mean_story_tokens;
    j["mean_fact_tokens"] = stats.mean_fact_tokens;
    json story_hist = json::object();
    for (const auto& [bucket, count] : stats.story_length_hist)
        story_hist[std::to_string(bucket)] = count;
    json fact_hist = json::object();
    for (const auto& [bucket, count] : stats.fact_length_hist)
        fact_hist[std::to_string(bucket)] = count;
    j["story_length_hist"] = story_hist;
    j["fact_length_hist"] = fact_hist;
    j["histogram_bucket_width"] = stats.histogram_bucket_width;
    // Corpus-level targets from the source data these models were built for.
    j["reference"] = {{"word_ratio", 1.0 / 6.0}, {"mask_rate", 0.84}};
    return j.dump(2);
}

}  // namespace f2s::pipeline

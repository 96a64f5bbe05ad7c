#pragma once

#include <string>
#include <vector>

#include "facts2story/align.hpp"
#include "facts2story/cloze.hpp"
#include "facts2story/corpus.hpp"
#include "facts2story/eval.hpp"
#include "facts2story/planner.hpp"
#include "facts2story/salience.hpp"
#include "facts2story/types.hpp"

namespace f2s::pipeline {

struct Paths {
    std::string plots;
    std::string extractions;
    std::string embeddings;
    std::string vocab;
    std::string dataset;
    std::string planner_checkpoint;
    std::string cloze_checkpoint;
    std::string output_dir = ".";
};

struct PipelineConfig {
    Paths paths;
    SalienceConfig salience;
    neural::EncoderConfig planner_encoder;  // vocab_size is filled from the vocabulary at run time
    neural::EncoderConfig cloze_encoder;
    neural::TrainConfig training;
    cloze::DecodingConfig decoding;
    planner::LengthPolicy length_policy;
    int num_merges = 200;
    int k_facts = 5;
    int window_slack = 10;
    std::string published_after;  // keep only plots strictly after this ISO date
    std::string model_name = "plan_cloze";
};

PipelineConfig load_config(const std::string& path);
std::string config_to_json(const PipelineConfig& cfg);

// Tokenizes the rendered fact sentences in continuation mode so fact tokens
// carry the same leading-space marker they have inside a story.
FactSet tokenize_facts(const std::vector<std::string>& sentences, const Vocabulary& vocab);

struct DeriveSummary {
    int documents = 0;
    int written = 0;
    int skipped_few_facts = 0;
    int skipped_alignment = 0;
    int skipped_too_long = 0;
    int skipped_date = 0;
};

// plots + extractions + embeddings -> salience-ranked top-k facts per
// document, aligned against the story, written as the training dataset.
// Trains and saves the vocabulary when the configured file does not exist.
DeriveSummary cmd_derive(const PipelineConfig& cfg);

void cmd_rank(const PipelineConfig& cfg, const std::string& out_path);

struct TrainSummary {
    int epochs_done = 0;
    int best_epoch = 0;
    double best_val_loss = 0.0;
    std::string checkpoint_path;
    std::string resume_path;
    std::string log_path;
};

// Writes the best-validation checkpoint, a .resume sibling carrying optimizer
// state, and appends per-epoch rows to the training-log CSV.
TrainSummary cmd_train_planner(const PipelineConfig& cfg, const std::string& resume_from = "");
TrainSummary cmd_train_cloze(const PipelineConfig& cfg, const std::string& resume_from = "");

struct GenerateSummary {
    int written = 0;
    int failed = 0;
};

GenerateSummary cmd_generate(const PipelineConfig& cfg, const std::string& facts_path,
                             const std::string& out_path);

eval::EvalReport cmd_evaluate(const PipelineConfig& cfg, const std::string& stories_path,
                              const std::string& facts_path, const std::string& report_path);

std::string cmd_stats(const PipelineConfig& cfg);

}  // namespace f2s::pipeline

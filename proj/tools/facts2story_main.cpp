// facts2story: derive fact/story training data, train the spacing planner and
// the cloze language model, generate stories that keep every input fact, and
// score fact adherence.

#include <cstdio>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "facts2story/pipeline.hpp"

namespace {

struct GlobalFlags {
    std::string config_path;
    bool has_seed = false;
    std::uint64_t seed = 0;
    bool has_top_k = false;
    int top_k = 40;
    bool has_temperature = false;
    double temperature = 0.85;
    bool has_nucleus_p = false;
    double nucleus_p = 0.9;
    bool has_rep_penalty = false;
    double rep_penalty = 1.0;
    bool has_k_facts = false;
    int k_facts = 5;
    bool has_val_fraction = false;
    double val_fraction = 1.0 / 9.0;
    std::string published_after;
    std::string model_name;
};

f2s::pipeline::PipelineConfig resolve_config(const GlobalFlags& flags) {
    if (flags.config_path.empty()) throw f2s::DataError("--config is required");
    f2s::pipeline::PipelineConfig cfg = f2s::pipeline::load_config(flags.config_path);
    if (flags.has_seed) {
        cfg.training.seed = flags.seed;
        cfg.decoding.seed = flags.seed;
    }
    if (flags.has_top_k) {
        cfg.decoding.strategy = f2s::cloze::DecodingConfig::Strategy::kTopK;
        cfg.decoding.k = flags.top_k;
    }
    if (flags.has_temperature) cfg.decoding.temperature = flags.temperature;
    if (flags.has_nucleus_p) {
        cfg.decoding.strategy = f2s::cloze::DecodingConfig::Strategy::kNucleus;
        cfg.decoding.p = flags.nucleus_p;
    }
    if (flags.has_rep_penalty) cfg.decoding.repetition_penalty = flags.rep_penalty;
    if (flags.has_k_facts) cfg.k_facts = flags.k_facts;
    if (flags.has_val_fraction) cfg.training.validation_fraction = flags.val_fraction;
    if (!flags.published_after.empty()) cfg.published_after = flags.published_after;
    if (!flags.model_name.empty()) cfg.model_name = flags.model_name;
    return cfg;
}

void add_global_flags(CLI::App* cmd, GlobalFlags& flags) {
    cmd->add_option("--config", flags.config_path, "pipeline configuration JSON")->required();
    cmd->add_option("--seed", flags.seed, "override training and decoding seeds")
        ->each([&flags](const std::string&) { flags.has_seed = true; });
    cmd->add_option("--top-k", flags.top_k, "top-k sampling cutoff")
        ->each([&flags](const std::string&) { flags.has_top_k = true; });
    cmd->add_option("--temperature", flags.temperature, "sampling temperature")
        ->each([&flags](const std::string&) { flags.has_temperature = true; });
    cmd->add_option("--nucleus-p", flags.nucleus_p, "nucleus sampling mass")
        ->each([&flags](const std::string&) { flags.has_nucleus_p = true; });
    cmd->add_option("--repetition-penalty", flags.rep_penalty, "repetition penalty (>= 1)")
        ->each([&flags](const std::string&) { flags.has_rep_penalty = true; });
    cmd->add_option("--k-facts", flags.k_facts, "number of key facts per story (default 5)")
        ->each([&flags](const std::string&) { flags.has_k_facts = true; });
    cmd->add_option("--validation-fraction", flags.val_fraction,
                    "held-out validation fraction (default 1/9)")
        ->each([&flags](const std::string&) { flags.has_val_fraction = true; });
    cmd->add_option("--published-after", flags.published_after,
                    "drop plots published on or before this ISO date");
    cmd->add_option("--model-name", flags.model_name, "model label used in reports");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"facts-to-story pipeline: salience ranking, spacing planner, cloze generation"};
    app.require_subcommand(1);

    GlobalFlags flags;
    std::string facts_path, stories_path, out_path, report_path, resume_path;

    CLI::App* derive = app.add_subcommand("derive", "build the aligned training dataset");
    add_global_flags(derive, flags);

    CLI::App* rank = app.add_subcommand("rank", "write salience-ranked facts per document");
    add_global_flags(rank, flags);
    rank->add_option("--out", out_path, "ranked facts JSONL output")->required();

    CLI::App* train_planner = app.add_subcommand("train-planner", "train the spacing planner");
    add_global_flags(train_planner, flags);
    train_planner->add_option("--resume", resume_path, "continue from a .resume checkpoint");

    CLI::App* train_cloze = app.add_subcommand("train-cloze", "train the cloze language model");
    add_global_flags(train_cloze, flags);
    train_cloze->add_option("--resume", resume_path, "continue from a .resume checkpoint");

    CLI::App* generate = app.add_subcommand("generate", "expand fact sets into stories");
    add_global_flags(generate, flags);
    generate->add_option("--facts", facts_path, "facts JSONL input")->required();
    generate->add_option("--out", out_path, "stories JSONL output")->required();

    CLI::App* evaluate = app.add_subcommand("evaluate", "score fact adherence of generated stories");
    add_global_flags(evaluate, flags);
    evaluate->add_option("--stories", stories_path, "stories JSONL input")->required();
    evaluate->add_option("--facts", facts_path, "facts JSONL input")->required();
    evaluate->add_option("--report", report_path, "report JSON output")->required();

    CLI::App* stats = app.add_subcommand("stats", "dataset statistics (ratios, mask rate)");
    add_global_flags(stats, flags);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        const f2s::pipeline::PipelineConfig cfg = resolve_config(flags);
        if (derive->parsed()) {
            const auto s = f2s::pipeline::cmd_derive(cfg);
            std::cout << "derived " << s.written << "/" << s.documents << " documents ("
                      << s.skipped_few_facts << " with too few facts, " << s.skipped_alignment
                      << " alignment failures, " << s.skipped_too_long << " too long, "
                      << s.skipped_date << " filtered by date)\n";
        } else if (rank->parsed()) {
            f2s::pipeline::cmd_rank(cfg, out_path);
            std::cout << "ranked facts written to " << out_path << "\n";
        } else if (train_planner->parsed()) {
            const auto s = f2s::pipeline::cmd_train_planner(cfg, resume_path);
            std::cout << "planner: " << s.epochs_done << " epochs, best epoch " << s.best_epoch
                      << " (loss " << s.best_val_loss << ") -> " << s.checkpoint_path << "\n";
        } else if (train_cloze->parsed()) {
            const auto s = f2s::pipeline::cmd_train_cloze(cfg, resume_path);
            std::cout << "cloze: " << s.epochs_done << " epochs, best epoch " << s.best_epoch
                      << " (loss " << s.best_val_loss << ") -> " << s.checkpoint_path << "\n";
        } else if (generate->parsed()) {
            const auto s = f2s::pipeline::cmd_generate(cfg, facts_path, out_path);
            std::cout << "generated " << s.written << " stories (" << s.failed << " failed) -> "
                      << out_path << "\n";
        } else if (evaluate->parsed()) {
            const auto report = f2s::pipeline::cmd_evaluate(cfg, stories_path, facts_path, report_path);
            std::cout << "mean facts found: " << report.mean_facts_found << " over " << report.n
                      << " stories -> " << report_path << "\n";
        } else if (stats->parsed()) {
            std::cout << f2s::pipeline::cmd_stats(cfg) << "\n";
        }
    } catch (const f2s::NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 3;
    } catch (const f2s::DataError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}

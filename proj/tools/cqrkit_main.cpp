#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cqr/pipeline.hpp"

namespace {

struct ConfigArgs {
    std::string path;
    std::optional<std::size_t> candidates;
    std::optional<std::size_t> retrieval_depth;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> output_dir;
    std::optional<unsigned> workers;
};

void add_config_option(CLI::App* cmd, ConfigArgs& args, bool required = true) {
    auto* opt = cmd->add_option("-c,--config", args.path, "pipeline config JSON file");
    if (required) opt->required();
}

void add_config_options(CLI::App* cmd, ConfigArgs& args) {
    add_config_option(cmd, args);
    cmd->add_option("-K,--candidates", args.candidates,
                    "rewrites sampled per turn, K (>= 2; overrides the config)");
    cmd->add_option("-T,--retrieval-depth", args.retrieval_depth,
                    "passages kept per query, T (overrides the config)");
    cmd->add_option("--seed", args.seed, "master seed (overrides the config)");
    cmd->add_option("--output-dir", args.output_dir, "overrides the config output_dir");
    cmd->add_option("--workers", args.workers, "turn-level worker limit");
}

cqr::PipelineConfig resolve_config(const ConfigArgs& args) {
    auto config = cqr::load_pipeline_config(args.path);
    if (args.candidates) config.candidates = *args.candidates;
    if (args.retrieval_depth) config.retrieval_depth = *args.retrieval_depth;
    if (args.seed) config.seed = *args.seed;
    if (args.output_dir) config.output_dir = *args.output_dir;
    if (args.workers) config.workers = *args.workers;
    config.validate();
    return config;
}

cqr::PreferenceTag tag_from_cli(const std::string& name) {
    std::string lower;
    for (char ch : name) lower += static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    if (lower == "rewrite" || lower == "[rewrite]") return cqr::PreferenceTag::rewrite;
    if (lower == "retrieval" || lower == "[retrieval]") return cqr::PreferenceTag::retrieval;
    if (lower == "response" || lower == "[response]") return cqr::PreferenceTag::response;
    throw cqr::ValidationError("unknown tag: " + name +
                               " (expected rewrite, retrieval, or response)");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"conversational query rewriting toolkit"};
    app.require_subcommand(1);

    ConfigArgs index_args;
    auto* index_cmd = app.add_subcommand("index", "build the BM25 index over the corpus");
    add_config_options(index_cmd, index_args);
    index_cmd->callback([&] {
        const auto fp = cqr::cmd_index(resolve_config(index_args));
        std::printf("index fingerprint %016llx\n", static_cast<unsigned long long>(fp));
    });

    ConfigArgs construct_args;
    bool construct_strict = false;
    auto* construct_cmd = app.add_subcommand(
        "construct", "sample K rewrites per turn and build tagged preference pairs");
    add_config_options(construct_cmd, construct_args);
    construct_cmd->add_flag("--strict", construct_strict,
                            "fail on the first bad turn instead of skipping it");
    construct_cmd->callback([&] {
        const auto config = resolve_config(construct_args);
        const auto stats = cqr::cmd_construct(config, construct_strict);
        std::printf("wrote %zu preference records from %zu/%zu turns to %s\n", stats.records,
                    stats.processed, stats.turns, config.preferences_path().c_str());
    });

    ConfigArgs rewrite_args;
    std::vector<std::string> rewrite_tags;
    bool rewrite_expand = false;
    bool rewrite_strict = false;
    auto* rewrite_cmd =
        app.add_subcommand("rewrite", "generate one tag-conditioned rewrite per turn");
    add_config_options(rewrite_cmd, rewrite_args);
    rewrite_cmd->add_option("--tags", rewrite_tags,
                            "tags to condition on (rewrite, retrieval, response); default all");
    rewrite_cmd->add_flag("--expand", rewrite_expand,
                          "append a pseudo answer to each rewrite for retrieval");
    rewrite_cmd->add_flag("--strict", rewrite_strict,
                          "fail on the first bad turn instead of skipping it");
    rewrite_cmd->callback([&] {
        const auto config = resolve_config(rewrite_args);
        std::vector<cqr::PreferenceTag> tags;
        if (rewrite_tags.empty()) {
            tags.assign(cqr::kPreferenceTags.begin(), cqr::kPreferenceTags.end());
        } else {
            for (const auto& name : rewrite_tags) tags.push_back(tag_from_cli(name));
        }
        const auto stats = cqr::cmd_rewrite(config, tags, rewrite_expand, rewrite_strict);
        std::printf("wrote %zu rewrites to %s\n", stats.rewrites,
                    config.rewrites_path().c_str());
    });

    ConfigArgs retrieve_args;
    std::string fusion = "concat";
    std::string runtag;
    auto* retrieve_cmd =
        app.add_subcommand("retrieve", "search the index with the generated rewrites");
    add_config_options(retrieve_cmd, retrieve_args);
    retrieve_cmd->add_option("--fusion", fusion, "concat (default) or rrf");
    retrieve_cmd->add_option("--runtag", runtag, "run tag column; defaults to the fusion mode");
    retrieve_cmd->callback([&] {
        const auto config = resolve_config(retrieve_args);
        const auto mode = cqr::fusion_mode_from_string(fusion);
        const auto stats = cqr::cmd_retrieve(config, mode, runtag);
        std::printf("wrote run for %zu turns to %s\n", stats.turns, config.run_path().c_str());
    });

    ConfigArgs eval_args;
    std::string eval_run, eval_qrels, eval_report;
    auto* eval_cmd = app.add_subcommand("evaluate", "score a run file against qrels");
    add_config_option(eval_cmd, eval_args, /*required=*/false);
    eval_cmd->add_option("--run", eval_run, "run file (default: <output_dir>/run.txt)");
    eval_cmd->add_option("--qrels", eval_qrels, "qrels file (default: config qrels)");
    eval_cmd->add_option("--report", eval_report,
                         "JSON report path (default: <output_dir>/eval_report.json)");
    eval_cmd->callback([&] {
        if (!eval_args.path.empty()) {
            const auto config = resolve_config(eval_args);
            if (eval_run.empty()) eval_run = config.run_path();
            if (eval_qrels.empty()) eval_qrels = config.qrels;
            if (eval_report.empty()) eval_report = config.eval_report_path();
        }
        if (eval_run.empty() || eval_qrels.empty())
            throw cqr::ValidationError("evaluate needs --run and --qrels (or --config)");
        const auto report = cqr::cmd_evaluate(eval_run, eval_qrels, eval_report);
        std::fputs(cqr::eval_report_table(report).c_str(), stdout);
    });

    ConfigArgs analyze_args;
    cqr::AnalysisOptions analysis;
    bool analyze_no_candidates = false;
    auto* analyze_cmd =
        app.add_subcommand("analyze", "consistency and overlap statistics over pipeline output");
    add_config_option(analyze_cmd, analyze_args, /*required=*/false);
    analyze_cmd->add_option("--scores", analysis.scores_path,
                            "scores file (default: <output_dir>/scores.jsonl)");
    analyze_cmd->add_option("--candidates", analysis.candidates_path,
                            "candidates file for retrieval overlap");
    analyze_cmd->add_flag("--no-candidates", analyze_no_candidates,
                          "skip the retrieval overlap section");
    analyze_cmd->add_option("--rewrites", analysis.rewrites_path,
                            "rewrites file for per-tag statistics");
    analyze_cmd->add_option("--dialogues", analysis.dialogues_path,
                            "dialogues file with the original queries");
    analyze_cmd->add_option("--depth", analysis.depth, "overlap depth (default T or 100)");
    analyze_cmd->add_option("--report", analysis.report_path,
                            "JSON report path (default: <output_dir>/analysis.json)");
    analyze_cmd->callback([&] {
        if (!analyze_args.path.empty()) {
            const auto config = resolve_config(analyze_args);
            if (analysis.scores_path.empty()) analysis.scores_path = config.scores_path();
            if (analysis.candidates_path.empty() && !analyze_no_candidates)
                analysis.candidates_path = config.candidates_path();
            if (analysis.dialogues_path.empty() && !analysis.rewrites_path.empty())
                analysis.dialogues_path = config.dialogues;
            if (analysis.report_path.empty()) analysis.report_path = config.analysis_path();
            if (!analyze_cmd->count("--depth")) analysis.depth = config.retrieval_depth;
        }
        if (analyze_no_candidates) analysis.candidates_path.clear();
        const auto report = cqr::cmd_analyze(analysis);
        std::printf("%s\n", report.dump(2).c_str());
    });

    cqr::MdpoInputs mdpo;
    auto* mdpo_cmd =
        app.add_subcommand("mdpo-loss", "preference loss for one scored pair of completions");
    mdpo_cmd->add_option("--theta-pos", mdpo.logp_theta_pos, "policy log-prob of the chosen text")
        ->required();
    mdpo_cmd->add_option("--ref-pos", mdpo.logp_ref_pos, "reference log-prob of the chosen text")
        ->required();
    mdpo_cmd
        ->add_option("--theta-neg", mdpo.logp_theta_neg, "policy log-prob of the rejected text")
        ->required();
    mdpo_cmd
        ->add_option("--ref-neg", mdpo.logp_ref_neg, "reference log-prob of the rejected text")
        ->required();
    mdpo_cmd->add_option("--beta", mdpo.beta, "preference temperature (default 0.1)");
    mdpo_cmd->callback([&] { std::printf("%.6f\n", cqr::mdpo_loss(mdpo)); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    } catch (const cqr::ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const cqr::BackendError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}

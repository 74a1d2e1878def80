#include "grovle/cli.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>

#include "grovle/embed_store.hpp"
#include "grovle/error.hpp"
#include "grovle/evaluator.hpp"
#include "grovle/freeze_scheduler.hpp"
#include "grovle/relation_graph.hpp"
#include "grovle/retrofitter.hpp"
#include "grovle/toy_finetune.hpp"

namespace grovle {

namespace fs = std::filesystem;

namespace {

class UsageError : public Error {
public:
    using Error::Error;
};

// Refuses to write over any of the inputs.
void guard_output(const fs::path& out, std::initializer_list<const fs::path*> inputs) {
    std::error_code ec;
    const auto target = fs::weakly_canonical(out, ec);
    for (const fs::path* in : inputs) {
        if (in && !in->empty() && fs::weakly_canonical(*in, ec) == target) {
            throw UsageError("output " + out.string() + " would overwrite an input file");
        }
    }
}

std::ofstream open_output(const fs::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    return out;
}

struct TaskEntry {
    std::string id;
    std::vector<fs::path> datasets;
};

// "id=path[+path...]"
TaskEntry parse_task_entry(const std::string& text) {
    const auto eq = text.find('=');
    if (eq == std::string::npos || eq == 0 || eq + 1 == text.size()) {
        throw UsageError("task '" + text + "' must look like id=path[+path...]");
    }
    TaskEntry entry{text.substr(0, eq), {}};
    if (!is_valid_token(entry.id)) throw UsageError("task id '" + entry.id + "' contains whitespace");
    std::string rest = text.substr(eq + 1);
    std::size_t start = 0;
    while (start <= rest.size()) {
        const auto plus = rest.find('+', start);
        const auto piece = rest.substr(start, plus == std::string::npos ? std::string::npos : plus - start);
        if (piece.empty()) throw UsageError("task '" + text + "' has an empty dataset path");
        entry.datasets.emplace_back(piece);
        if (plus == std::string::npos) break;
        start = plus + 1;
    }
    return entry;
}

struct CommonInput {
    std::string vectors;
    std::string format = "text";

    void add_to(CLI::App* cmd, bool required = true) {
        auto* opt = cmd->add_option("--vectors", vectors, "Embedding file");
        if (required) opt->required();
        cmd->add_option("--format", format, "Embedding file format (text|binary)")
            ->check(CLI::IsMember({"text", "binary"}))
            ->capture_default_str();
    }
    EmbeddingSet load() const { return load_embeddings(vectors, parse_embedding_format(format)); }
};

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Word-relation graphs, retrofitting and sequential multi-task embedding fine-tuning", "grovle"};
    app.require_subcommand(1);

    // convert
    auto* convert = app.add_subcommand("convert", "Convert embeddings between text and binary formats");
    std::string conv_in, conv_out, conv_from = "text", conv_to = "binary";
    convert->add_option("--in", conv_in, "Input embedding file")->required();
    convert->add_option("--out", conv_out, "Output embedding file")->required();
    convert->add_option("--from", conv_from, "Input format")->check(CLI::IsMember({"text", "binary"}))->capture_default_str();
    convert->add_option("--to", conv_to, "Output format")->check(CLI::IsMember({"text", "binary"}))->capture_default_str();

    // build-graph
    auto* build = app.add_subcommand("build-graph", "Build a relation graph from a lexicon or a co-occurrence corpus");
    CommonInput build_in;
    build_in.add_to(build);
    std::string corpus, lexicon, stopwords, build_out;
    std::uint64_t min_count = 50;
    std::size_t top_k = 10;
    unsigned workers = 1;
    bool keep_case = false;
    auto* corpus_opt = build->add_option("--corpus", corpus, "Corpus, one sample per line");
    auto* lexicon_opt = build->add_option("--lexicon", lexicon, "Lexicon, 'head neighbor ...' per line");
    corpus_opt->excludes(lexicon_opt);
    build->add_option("--stopwords", stopwords, "Stopword list, one per line");
    build->add_option("--min-count", min_count, "Drop pairs seen fewer times")->capture_default_str();
    build->add_option("--top-k", top_k, "PMI partners linked per word")->check(CLI::PositiveNumber)->capture_default_str();
    build->add_option("--workers", workers, "Corpus counting threads")->check(CLI::PositiveNumber)->capture_default_str();
    build->add_flag("--keep-case", keep_case, "Do not lowercase corpus tokens");
    build->add_option("--out", build_out, "Output edge list")->required();

    // merge-graph
    auto* merge = app.add_subcommand("merge-graph", "Union several edge lists into one joint graph");
    CommonInput merge_in;
    merge_in.add_to(merge);
    std::vector<std::string> merge_graphs_in;
    std::string merge_out;
    merge->add_option("--graph", merge_graphs_in, "Edge list (repeat for each graph)")->required()->expected(1, -1);
    merge->add_option("--out", merge_out, "Output edge list")->required();

    // retrofit
    auto* retro = app.add_subcommand("retrofit", "Retrofit embeddings onto a relation graph");
    CommonInput retro_in;
    retro_in.add_to(retro);
    std::string retro_graph, retro_out, retro_trace;
    RetrofitConfig retro_cfg;
    std::string alpha_mode = "degree";
    std::optional<double> tolerance;
    retro->add_option("--graph", retro_graph, "Edge list")->required();
    retro->add_option("--out", retro_out, "Output embedding file (same format as input)")->required();
    retro->add_option("--iterations", retro_cfg.iterations, "Maximum sweeps")->check(CLI::PositiveNumber)->capture_default_str();
    retro->add_option("--beta", retro_cfg.beta, "Edge weight multiplier")->check(CLI::PositiveNumber)->capture_default_str();
    retro->add_option("--alpha-mode", alpha_mode, "degree or unit")->check(CLI::IsMember({"degree", "unit"}))->capture_default_str();
    retro->add_option("--tolerance", tolerance, "Stop when no word moves farther than this");
    retro->add_option("--trace", retro_trace, "Write the objective per sweep as CSV");

    // make-task
    auto* make_task = app.add_subcommand("make-task", "Generate a synthetic retrieval task over the vocabulary");
    CommonInput make_in;
    make_in.add_to(make_task);
    std::string make_out;
    SyntheticTaskConfig synth;
    make_task->add_option("--out", make_out, "Output task file")->required();
    make_task->add_option("--samples", synth.samples, "Number of samples")->check(CLI::PositiveNumber)->capture_default_str();
    make_task->add_option("--features", synth.feature_dim, "Target feature size")->check(CLI::PositiveNumber)->capture_default_str();
    make_task->add_option("--min-phrase", synth.min_phrase, "Shortest phrase")->check(CLI::PositiveNumber)->capture_default_str();
    make_task->add_option("--max-phrase", synth.max_phrase, "Longest phrase")->check(CLI::PositiveNumber)->capture_default_str();
    make_task->add_option("--noise", synth.noise, "Target noise standard deviation")->capture_default_str();
    make_task->add_option("--seed", synth.seed, "Random seed")->capture_default_str();

    // multitask
    auto* multi = app.add_subcommand("multitask", "Fine-tune embeddings on tasks in sequence, freezing features after each");
    CommonInput multi_in;
    multi_in.add_to(multi);
    std::vector<std::string> task_args;
    std::string multi_out, model = "average", variance = "delta";
    TrainConfig train_cfg;
    bool no_freeze = false;
    multi->add_option("--tasks", task_args, "Ordered tasks, each id=path[+path...]")->required()->expected(1, -1)->delimiter(',');
    multi->add_option("--out", multi_out, "Output directory")->required();
    multi->add_option("--seed", train_cfg.seed, "Random seed")->capture_default_str();
    multi->add_option("--margin", train_cfg.margin, "Triplet margin")->check(CLI::NonNegativeNumber)->capture_default_str();
    multi->add_option("--lr", train_cfg.learning_rate, "Learning rate")->check(CLI::NonNegativeNumber)->capture_default_str();
    multi->add_option("--epochs", train_cfg.epochs, "Epochs per dataset")->check(CLI::PositiveNumber)->capture_default_str();
    multi->add_option("--anchor", train_cfg.alpha_anchor, "L2 anchor coefficient")->check(CLI::NonNegativeNumber)->capture_default_str();
    multi->add_option("--batch-size", train_cfg.batch_size, "Mini-batch size")->capture_default_str();
    multi->add_option("--hidden", train_cfg.hidden_dim, "Hidden width (0 = embedding dim)")->capture_default_str();
    multi->add_option("--joint", train_cfg.joint_dim, "Joint space width")->check(CLI::PositiveNumber)->capture_default_str();
    multi->add_option("--model", model, "average or self_attention")->check(CLI::IsMember({"average", "self_attention"}))->capture_default_str();
    multi->add_option("--variance", variance, "Rank features by variance of delta or value")->check(CLI::IsMember({"delta", "value"}))->capture_default_str();
    multi->add_flag("--no-freeze", no_freeze, "Train every task without freezing features");

    // eval
    auto* eval = app.add_subcommand("eval", "Report neighbor cohesion, drift, nearest neighbors and task recall");
    CommonInput eval_in;
    eval_in.add_to(eval);
    std::string eval_graph, eval_before, eval_word, eval_task, eval_params, eval_out;
    std::size_t eval_k = 10;
    eval->add_option("--graph", eval_graph, "Edge list for cohesion");
    eval->add_option("--before", eval_before, "Earlier embedding (same format) for drift");
    eval->add_option("--word", eval_word, "Query word for nearest neighbors");
    eval->add_option("--k", eval_k, "Neighbors to list")->check(CLI::PositiveNumber)->capture_default_str();
    eval->add_option("--tasks", eval_task, "Task file for retrieval recall");
    eval->add_option("--params", eval_params, "Trained task parameters for retrieval recall");
    eval->add_option("--out", eval_out, "Directory for CSV reports");

    try {
        std::vector<const char*> argv;
        for (const auto& a : args) argv.push_back(a.c_str());
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << '\n';
        const auto subs = app.get_subcommands();
        err << (subs.empty() ? app.help() : subs.front()->help());
        return kExitUsage;
    }

    CLI::App* active = app.get_subcommands().front();
    out << "# " << active->get_name() << " resolved config\n" << active->config_to_str(true, false);

    try {
        if (active == convert) {
            if (!fs::exists(conv_in)) throw IoError("input " + conv_in + " does not exist");
            const fs::path in_path = conv_in;
            guard_output(conv_out, {&in_path});
            const auto set = load_embeddings(conv_in, parse_embedding_format(conv_from));
            save_embeddings(set, conv_out, parse_embedding_format(conv_to));
            out << "converted " << set.size() << " x " << set.dim() << '\n';
        } else if (active == build) {
            if (corpus.empty() == lexicon.empty()) throw UsageError("build-graph needs exactly one of --corpus or --lexicon");
            const fs::path vec_path = build_in.vectors, out_path = build_out, src = corpus.empty() ? lexicon : corpus;
            const fs::path stop_path = stopwords;
            guard_output(out_path, {&vec_path, &src, &stop_path});
            const auto set = build_in.load();
            RelationGraph graph;
            if (!lexicon.empty()) {
                graph = load_lexicon_graph(lexicon, set.vocab());
            } else {
                TokenizerConfig tok = stopwords.empty() ? TokenizerConfig{} : load_stopwords(stopwords, !keep_case);
                tok.lowercase = !keep_case;
                std::ifstream in(corpus);
                if (!in) throw IoError("cannot open corpus " + corpus);
                std::vector<std::string> samples;
                for (std::string line; std::getline(in, line);) samples.push_back(std::move(line));
                const auto stats = accumulate_cooccurrence(samples, tok, min_count, workers);
                out << "pairs surviving min-count: " << stats.pair_count.size() << " over "
                    << stats.participation.size() << " words\n";
                graph = build_pmi_graph(stats, top_k, set.vocab());
            }
            save_graph(graph, set.vocab(), out_path);
            out << "graph: " << graph.edge_count() << " edges\n";
        } else if (active == merge) {
            const fs::path vec_path = merge_in.vectors, out_path = merge_out;
            std::vector<fs::path> inputs(merge_graphs_in.begin(), merge_graphs_in.end());
            guard_output(out_path, {&vec_path});
            for (const auto& p : inputs) guard_output(out_path, {&p});
            const auto set = merge_in.load();
            RelationGraph joint(set.size(), {});
            for (const auto& p : inputs) joint = merge_graphs(joint, load_graph(p, set.vocab()));
            save_graph(joint, set.vocab(), out_path);
            out << "joint graph: " << joint.edge_count() << " edges\n";
        } else if (active == retro) {
            const fs::path vec_path = retro_in.vectors, graph_path = retro_graph, out_path = retro_out;
            guard_output(out_path, {&vec_path, &graph_path});
            retro_cfg.alpha_mode = parse_alpha_mode(alpha_mode);
            retro_cfg.tolerance = tolerance;
            const auto set = retro_in.load();
            const auto graph = load_graph(graph_path, set.vocab());
            const auto result = retrofit(set, graph, retro_cfg);
            save_embeddings(result.embeddings, out_path, parse_embedding_format(retro_in.format));
            if (!retro_trace.empty()) save_objective_trace(result.objective_trace, retro_trace);
            out << "sweeps run: " << result.sweeps_run << ", final objective "
                << (result.objective_trace.empty() ? 0.0 : result.objective_trace.back()) << '\n';
        } else if (active == make_task) {
            const fs::path vec_path = make_in.vectors, out_path = make_out;
            guard_output(out_path, {&vec_path});
            const auto set = make_in.load();
            const auto task = make_synthetic_task(set.vectors(), out_path.stem().string(), synth);
            save_toy_task(task, set, out_path);
            out << "task: " << task.samples.size() << " samples, " << task.feature_dim() << " target features\n";
        } else if (active == multi) {
            std::vector<TaskEntry> entries;
            for (const auto& t : task_args) entries.push_back(parse_task_entry(t));
            const fs::path vec_path = multi_in.vectors;
            const fs::path out_dir = multi_out;
            for (const auto& e : entries) {
                for (const auto& p : e.datasets) guard_output(out_dir, {&p});
            }
            guard_output(out_dir, {&vec_path});
            train_cfg.model = parse_model_kind(model);
            const auto source = parse_variance_source(variance);

            const auto initial = multi_in.load();
            std::vector<TaskSpec> specs;
            for (const auto& e : entries) specs.push_back({e.id, e.datasets.size()});
            const auto plan = freeze_budget(initial.dim(), specs);
            out << "freeze budget per task: " << plan.per_task_budget << (no_freeze ? " (disabled)" : "") << '\n';

            fs::create_directories(out_dir);
            FreezeState state(initial.dim());
            Matrix table = initial.vectors();
            const std::uint64_t base_seed = train_cfg.seed;
            for (std::size_t t = 0; t < entries.size(); ++t) {
                for (std::size_t d = 0; d < entries[t].datasets.size(); ++d) {
                    const std::string phase =
                        entries[t].datasets.size() == 1 ? entries[t].id : entries[t].id + "." + std::to_string(d);
                    const auto task = load_toy_task(entries[t].datasets[d], initial, phase);
                    train_cfg.seed = base_seed + 1000 * t + d;
                    const auto trained = train_task(table, task, train_cfg, state);

                    auto trace = open_output(out_dir / ("loss_" + phase + ".csv"));
                    trace << "epoch,loss\n" << std::setprecision(17);
                    for (std::size_t ep = 0; ep < trained.loss_trace.size(); ++ep) trace << ep + 1 << ',' << trained.loss_trace[ep] << '\n';
                    save_params(trained.params, out_dir / ("params_" + phase + ".txt"));

                    const std::size_t budget = plan.tasks[t].dataset_budgets[d];
                    if (!no_freeze && budget > 0) {
                        const auto ranking = rank_by_variance(table, trained.embeddings, state.free_features(), source);
                        state = freeze_top(state, ranking, budget, phase);
                    }
                    out << "trained " << phase << ": loss " << trained.loss_trace.front() << " -> "
                        << trained.loss_trace.back() << ", frozen " << state.frozen_count() << '/' << state.dim() << '\n';
                    table = trained.embeddings;
                }
            }
            const auto final_set = initial.with_vectors(table);
            const fs::path emb_path = out_dir / (multi_in.format == "binary" ? "embeddings.bin" : "embeddings.txt");
            save_embeddings(final_set, emb_path, parse_embedding_format(multi_in.format));
            save_freeze_state(state, out_dir / "freeze.txt");
            const auto drift = drift_report(initial, final_set);
            auto drift_csv = open_output(out_dir / "drift.csv");
            write_drift_csv(drift, final_set.vocab(), drift_csv);
            print_summary(drift, out);
        } else if (active == eval) {
            const auto set = eval_in.load();
            const fs::path out_dir = eval_out;
            if (!eval_out.empty()) fs::create_directories(out_dir);
            bool any = false;
            if (!eval_graph.empty()) {
                any = true;
                const auto report = neighbor_cohesion(set, load_graph(eval_graph, set.vocab()));
                print_summary(report, out);
                if (!eval_out.empty()) {
                    auto csv = open_output(out_dir / "cohesion.csv");
                    write_cohesion_csv(report, csv);
                }
            }
            if (!eval_before.empty()) {
                any = true;
                const auto before = load_embeddings(eval_before, parse_embedding_format(eval_in.format));
                const auto report = drift_report(before, set);
                print_summary(report, out);
                if (!eval_out.empty()) {
                    auto csv = open_output(out_dir / "drift.csv");
                    write_drift_csv(report, set.vocab(), csv);
                }
            }
            if (!eval_word.empty()) {
                any = true;
                for (const auto& n : nearest_neighbors(set, eval_word, eval_k)) out << n.token << ' ' << n.similarity << '\n';
            }
            if (eval_task.empty() != eval_params.empty()) throw UsageError("recall needs both --tasks and --params");
            if (!eval_task.empty()) {
                any = true;
                const auto task = load_toy_task(eval_task, set, fs::path(eval_task).stem().string());
                const auto params = load_params(eval_params);
                const auto texts = encode_texts(task, set.vectors(), params);
                const auto targets = encode_targets(task, params);
                std::vector<std::size_t> ks;
                for (const std::size_t k : {1, 5, 10}) {
                    if (k <= task.samples.size()) ks.push_back(k);
                }
                const auto report = retrieval_recall(texts, targets, ks);
                print_summary(report, out);
                if (!eval_out.empty()) {
                    auto csv = open_output(out_dir / "recall.csv");
                    write_recall_csv(report, csv);
                }
            }
            if (!any) throw UsageError("eval needs at least one of --graph, --before, --word, --tasks");
        }
    } catch (const UsageError& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return kExitData;
    } catch (const fs::filesystem_error& e) {
        err << "error: " << e.what() << '\n';
        return kExitData;
    }
    return kExitOk;
}

}  // namespace grovle

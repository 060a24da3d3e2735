// Command-line harness: train/benchmark runs, gradient-check sweeps,
// parameter audits, and synthetic dataset generation.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>

#include "rnnkit/checkpoint.hpp"
#include "rnnkit/grad_check.hpp"
#include "rnnkit/train.hpp"

using namespace rnnkit;

namespace {

struct Options {
    std::string family = "hred";
    std::string variant = "both";
    std::string task;  // default depends on family
    std::string data_path;
    int vocab_size = 50;
    int embed_size = 32;
    std::vector<int> sizes;  // 3 entries for hred, 4 for rnet
    int char_embed_size = 8;
    double alpha = 0.0;  // 0 picks the family default
    double lr = 0.0;
    int batch_size = 32;
    int epochs = 5;
    std::uint64_t seed = 1;
    std::string precision = "f32";
    int max_span_len = 10;
    int samples = 2000;
    int min_sentence = 3;
    int max_sentence = 6;
    int min_passage = 8;
    int max_passage = 16;
    std::string out_path;
    std::string format = "csv";
    std::string save_model_path;
    std::string config_path;
};

void add_model_flags(CLI::App* cmd, Options& o) {
    cmd->add_option("--family", o.family, "hred or rnet")->check(CLI::IsMember({"hred", "rnet"}));
    cmd->add_option("--vocab-size", o.vocab_size, "synthetic vocabulary size (includes 4 reserved ids)");
    cmd->add_option("--embed-size", o.embed_size, "word embedding width");
    cmd->add_option("--sizes", o.sizes,
                    "layer sizes bottom-up: hred sentence,dialogue,decoder; rnet "
                    "char,encode,match,self-match")
        ->delimiter(',');
    cmd->add_option("--char-embed-size", o.char_embed_size, "character embedding width (rnet)");
    cmd->add_option("--alpha", o.alpha, "forgetting factor; defaults to 0.9 (hred) / 0.7 (rnet)");
}

void add_task_flags(CLI::App* cmd, Options& o) {
    cmd->add_option("--task", o.task, "copy, toy_dialogue, or toy_qa");
    cmd->add_option("--data", o.data_path, "JSONL dataset path (overrides the generator)");
    cmd->add_option("--samples", o.samples, "generated sample count");
    cmd->add_option("--min-len", o.min_sentence, "min sentence length");
    cmd->add_option("--max-len", o.max_sentence, "max sentence length");
    cmd->add_option("--min-passage", o.min_passage, "min passage length");
    cmd->add_option("--max-passage", o.max_passage, "max passage length");
    cmd->add_option("--seed", o.seed, "rng seed for generation, init, and shuffling");
}

// The config file overrides anything given on the command line. Keys mirror
// the long flag names without the leading dashes.
void apply_config(Options& o) {
    if (o.config_path.empty()) return;
    std::ifstream in(o.config_path);
    if (!in) throw std::runtime_error("cannot open config file '" + o.config_path + "'");
    nlohmann::json j;
    in >> j;
    auto set_str = [&](const char* key, std::string& dst) { if (j.contains(key)) dst = j[key].get<std::string>(); };
    auto set_int = [&](const char* key, int& dst) { if (j.contains(key)) dst = j[key].get<int>(); };
    auto set_dbl = [&](const char* key, double& dst) { if (j.contains(key)) dst = j[key].get<double>(); };
    set_str("family", o.family);
    set_str("variant", o.variant);
    set_str("task", o.task);
    set_str("data", o.data_path);
    set_int("vocab-size", o.vocab_size);
    set_int("embed-size", o.embed_size);
    if (j.contains("sizes")) o.sizes = j["sizes"].get<std::vector<int>>();
    set_int("char-embed-size", o.char_embed_size);
    set_dbl("alpha", o.alpha);
    set_dbl("lr", o.lr);
    set_int("batch-size", o.batch_size);
    set_int("epochs", o.epochs);
    if (j.contains("seed")) o.seed = j["seed"].get<std::uint64_t>();
    set_str("precision", o.precision);
    set_int("max-span-len", o.max_span_len);
    set_int("samples", o.samples);
    set_int("min-len", o.min_sentence);
    set_int("max-len", o.max_sentence);
    set_int("min-passage", o.min_passage);
    set_int("max-passage", o.max_passage);
    set_str("out", o.out_path);
    set_str("format", o.format);
    set_str("save-model", o.save_model_path);
}

RunConfig to_run_config(const Options& o, Variant variant) {
    RunConfig c;
    c.model.family = o.family == "hred" ? ModelFamily::Hred : ModelFamily::Rnet;
    c.model.variant = variant;
    c.model.vocab_size = o.vocab_size;
    c.model.embed_size = o.embed_size;
    c.model.char_embed_size = o.char_embed_size;
    c.model.char_vocab_size = 1;  // resolved from data by train_run
    c.model.alpha = o.alpha > 0.0 ? o.alpha : (c.model.family == ModelFamily::Hred ? 0.9 : 0.7);
    if (!o.sizes.empty()) {
        if (c.model.family == ModelFamily::Hred) {
            if (o.sizes.size() != 3) throw std::invalid_argument("--sizes needs 3 entries for hred");
            c.model.hred = {o.sizes[0], o.sizes[1], o.sizes[2]};
        } else {
            if (o.sizes.size() != 4) throw std::invalid_argument("--sizes needs 4 entries for rnet");
            c.model.rnet = {o.sizes[0], o.sizes[1], o.sizes[2], o.sizes[3]};
        }
    }
    c.task.task = !o.task.empty() ? task_from_string(o.task)
                                  : (c.model.family == ModelFamily::Hred ? TaskKind::Copy : TaskKind::ToyQa);
    c.task.vocab_size = o.vocab_size;
    c.task.samples = o.samples;
    c.task.seed = o.seed;
    c.task.min_sentence = o.min_sentence;
    c.task.max_sentence = o.max_sentence;
    c.task.min_passage = o.min_passage;
    c.task.max_passage = o.max_passage;
    c.data_path = o.data_path;
    c.learning_rate = o.lr;
    c.batch_size = o.batch_size;
    c.epochs = o.epochs;
    c.seed = o.seed;
    c.precision = o.precision == "f64" ? Precision::F64 : Precision::F32;
    c.max_span_len = o.max_span_len;
    return c;
}

int cmd_bench(const Options& o) {
    std::vector<Variant> variants;
    if (o.variant == "both")
        variants = {Variant::Baseline, Variant::Simplified};
    else if (o.variant == "baseline")
        variants = {Variant::Baseline};
    else
        variants = {Variant::Simplified};

    std::vector<TrainReport> reports;
    bool any_diverged = false;
    for (Variant v : variants) {
        RunConfig c = to_run_config(o, v);
        if (!o.save_model_path.empty()) {
            c.save_model_path = o.save_model_path;
            if (variants.size() > 1) c.save_model_path += std::string(".") + to_string(v);
        }
        std::fprintf(stderr, "training %s %s: %d epochs, batch %d, lr %g, seed %llu\n",
                     to_string(c.model.family), to_string(v), c.epochs, c.batch_size, c.resolved_lr(),
                     static_cast<unsigned long long>(c.seed));
        TrainReport r = train_run(c);
        any_diverged |= r.diverged;
        std::fprintf(stderr, "  params %ld, median %.3fs/epoch, %s %.4f, %s %.4f%s\n",
                     r.trainable_params, r.median_secs_per_epoch(), r.metric_names[0].c_str(),
                     r.final_metrics[0], r.metric_names[1].c_str(), r.final_metrics[1],
                     r.diverged ? " [diverged]" : "");
        reports.push_back(std::move(r));
    }

    const ReportFormat fmt = o.format == "markdown" ? ReportFormat::Markdown : ReportFormat::Csv;
    if (o.out_path.empty())
        emit_report(reports, fmt, std::cout);
    else
        emit_report_file(reports, fmt, o.out_path);
    return any_diverged ? 1 : 0;
}

int cmd_gradcheck(std::uint64_t seed, int trials, double tol_cells, double tol_models) {
    std::mt19937 rng(static_cast<unsigned>(seed));
    std::uniform_int_distribution<int> dim(1, 5);
    using Td = Tensor<double>;
    int failures = 0;

    for (int trial = 0; trial < trials; ++trial) {
        const CellKind kind = trial % 3 == 0   ? CellKind::Gru
                              : trial % 3 == 1 ? CellKind::Mgu
                                               : CellKind::Sgu;
        CellConfig cfg{kind, dim(rng), dim(rng)};
        auto w = CellWeights<double>::init(cfg, rng);
        Td h = Td::uniform({2, cfg.hidden_size}, -1, 1, rng, false);
        Td x = Td::uniform({2, cfg.input_size}, -1, 1, rng, false);
        std::vector<Td> ins = {h, x};
        for (auto& [name, t] : w.named_params()) ins.push_back(t);
        auto rep = grad_check<double>([&] { return sum(cell_step(w, h, x)); }, ins, 1e-5, tol_cells);
        std::printf("[%s] cell %s h=%d x=%d  max_rel_err %.3e\n", rep.pass ? "PASS" : "FAIL",
                    to_string(kind), cfg.hidden_size, cfg.input_size, rep.max_rel_err);
        failures += rep.pass ? 0 : 1;
    }

    for (Variant v : {Variant::Baseline, Variant::Simplified}) {
        SyntheticTaskSpec t;
        t.task = TaskKind::Copy;
        t.vocab_size = 20;
        t.min_sentence = 2;
        t.max_sentence = 3;
        t.samples = 2;
        t.seed = seed + 1;
        DialogueBatch batch = make_dialogue_batch(synthetic_vocab(20), gen_copy_task(t));
        ModelSpec spec;
        spec.family = ModelFamily::Hred;
        spec.variant = v;
        spec.vocab_size = 20;
        spec.embed_size = 4;
        spec.hred = {4, 6, 4};
        auto m = HredModel<double>::build(spec, rng);
        auto params = m.params();
        auto rep = grad_check<double>([&] { return m.forward(batch).loss; },
                                      std::span<Td>(params), 1e-3, tol_models);
        std::printf("[%s] hred %s loss  max_rel_err %.3e\n", rep.pass ? "PASS" : "FAIL", to_string(v),
                    rep.max_rel_err);
        failures += rep.pass ? 0 : 1;
    }

    for (Variant v : {Variant::Baseline, Variant::Simplified}) {
        SyntheticTaskSpec t;
        t.task = TaskKind::ToyQa;
        t.vocab_size = 20;
        t.min_passage = 3;
        t.max_passage = 4;
        t.samples = 2;
        t.seed = seed + 2;
        auto qa = gen_toy_qa(t);
        Vocab chars = build_char_vocab(qa);
        SpanBatch batch = make_span_batch(synthetic_vocab(20), chars, qa);
        ModelSpec spec;
        spec.family = ModelFamily::Rnet;
        spec.variant = v;
        spec.vocab_size = 20;
        spec.embed_size = 4;
        spec.rnet = {3, 4, 4, 4};
        spec.char_vocab_size = chars.size();
        spec.char_embed_size = 3;
        spec.alpha = 0.7;
        auto m = RnetModel<double>::build(spec, rng);
        auto params = m.params();
        auto rep = grad_check<double>([&] { return m.forward(batch).loss; },
                                      std::span<Td>(params), 1e-3, tol_models);
        std::printf("[%s] rnet %s loss  max_rel_err %.3e\n", rep.pass ? "PASS" : "FAIL", to_string(v),
                    rep.max_rel_err);
        failures += rep.pass ? 0 : 1;
    }

    std::printf("%d failures\n", failures);
    return failures == 0 ? 0 : 1;
}

int cmd_params(const Options& o) {
    std::vector<Variant> variants;
    if (o.variant == "both")
        variants = {Variant::Baseline, Variant::Simplified};
    else
        variants = {o.variant == "baseline" ? Variant::Baseline : Variant::Simplified};

    std::vector<long> totals;
    for (Variant v : variants) {
        RunConfig c = to_run_config(o, v);
        ModelSpec spec = c.model;
        std::mt19937 rng(1);
        ParamBreakdown breakdown;
        long total = 0;
        if (spec.family == ModelFamily::Hred) {
            auto m = HredModel<float>::build(spec, rng);
            breakdown = m.param_breakdown();
            total = m.param_count();
        } else {
            // audit without data: the char vocab of the synthetic alphabet
            spec.char_vocab_size = Vocab::kReserved + 11;
            auto m = RnetModel<float>::build(spec, rng);
            breakdown = m.param_breakdown();
            total = m.param_count();
        }
        std::printf("%s %s\n", to_string(spec.family), to_string(v));
        for (const auto& [name, n] : breakdown) std::printf("  %-20s %12ld\n", name.c_str(), n);
        std::printf("  %-20s %12ld\n", "total", total);
        totals.push_back(total);
    }
    if (totals.size() == 2 && totals[0] > 0)
        std::printf("simplified/baseline parameter ratio: %.6f\n",
                    static_cast<double>(totals[1]) / static_cast<double>(totals[0]));
    return 0;
}

int cmd_gen(const Options& o) {
    if (o.out_path.empty()) throw std::invalid_argument("gen: --out is required");
    SyntheticTaskSpec spec;
    spec.task = o.task.empty() ? TaskKind::Copy : task_from_string(o.task);
    spec.vocab_size = o.vocab_size;
    spec.samples = o.samples;
    spec.seed = o.seed;
    spec.min_sentence = o.min_sentence;
    spec.max_sentence = o.max_sentence;
    spec.min_passage = o.min_passage;
    spec.max_passage = o.max_passage;
    if (spec.task == TaskKind::ToyQa) {
        save_qa(o.out_path, gen_toy_qa(spec));
    } else {
        save_dialogues(o.out_path, spec.task == TaskKind::Copy ? gen_copy_task(spec)
                                                               : gen_toy_dialogue(spec));
    }
    std::fprintf(stderr, "wrote %d %s samples to %s\n", spec.samples, to_string(spec.task),
                 o.out_path.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"recurrent-cell toolkit benchmark harness"};
    app.require_subcommand(1);
    Options o;

    CLI::App* bench = app.add_subcommand("bench", "train baseline/simplified models and emit a report");
    add_model_flags(bench, o);
    add_task_flags(bench, o);
    bench->add_option("--variant", o.variant, "baseline, simplified, or both")
        ->check(CLI::IsMember({"baseline", "simplified", "both"}));
    bench->add_option("--lr", o.lr, "Adam learning rate; defaults to 1e-4 (hred) / 5e-4 (rnet)");
    bench->add_option("--batch-size", o.batch_size, "mini-batch size");
    bench->add_option("--epochs", o.epochs, "epoch budget");
    bench->add_option("--precision", o.precision, "f32 or f64")
        ->check(CLI::IsMember({"f32", "f64"}));
    bench->add_option("--max-span-len", o.max_span_len, "span decoding window");
    bench->add_option("--out", o.out_path, "report file (stdout when omitted)");
    bench->add_option("--format", o.format, "csv or markdown")
        ->check(CLI::IsMember({"csv", "markdown"}));
    bench->add_option("--save-model", o.save_model_path,
                      "write the final weights as a checkpoint (suffixed per variant with 'both')");
    bench->add_option("--config", o.config_path, "JSON config file; its values override flags");

    std::uint64_t gc_seed = 7;
    int gc_trials = 21;
    double gc_tol_cells = 1e-4, gc_tol_models = 1e-3;
    CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference sweep over cells and models");
    gradcheck->add_option("--seed", gc_seed, "sweep seed");
    gradcheck->add_option("--trials", gc_trials, "random cell configurations");
    gradcheck->add_option("--tol-cells", gc_tol_cells, "relative-error tolerance for cell steps");
    gradcheck->add_option("--tol-models", gc_tol_models, "relative-error tolerance for model losses");

    CLI::App* params = app.add_subcommand("params", "audit trainable parameters of a model spec");
    add_model_flags(params, o);
    params->add_option("--variant", o.variant, "baseline, simplified, or both")
        ->check(CLI::IsMember({"baseline", "simplified", "both"}));

    CLI::App* gen = app.add_subcommand("gen", "write a synthetic dataset as JSONL");
    add_task_flags(gen, o);
    gen->add_option("--out", o.out_path, "output path")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (bench->parsed()) {
            apply_config(o);
            return cmd_bench(o);
        }
        if (gradcheck->parsed()) return cmd_gradcheck(gc_seed, gc_trials, gc_tol_cells, gc_tol_models);
        if (params->parsed()) return cmd_params(o);
        if (gen->parsed()) return cmd_gen(o);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 0;
}

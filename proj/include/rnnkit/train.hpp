// Training loop with Adam, per-epoch wall-clock accounting, held-out metric
// trajectories, and report emission.
//
// One run is strictly single-threaded and fully seeded: model init, the
// train/held-out split, and every epoch's shuffle derive from RunConfig::seed,
// so identical configs reproduce identical reports (timing aside). Epoch
// timing wraps forward + backward + update only; batch materialization and
// metric evaluation sit outside the clock.

#pragma once

#include <array>
#include <chrono>
#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "rnnkit/adam.hpp"
#include "rnnkit/checkpoint.hpp"
#include "rnnkit/data.hpp"
#include "rnnkit/metrics.hpp"
#include "rnnkit/models.hpp"

namespace rnnkit {

enum class Precision { F32, F64 };

inline const char* to_string(Precision p) { return p == Precision::F32 ? "f32" : "f64"; }

struct RunConfig {
    ModelSpec model;
    SyntheticTaskSpec task;
    std::string data_path;  // when set, load this file instead of generating
    double learning_rate = 0.0;  // 0 picks the family default
    int batch_size = 32;
    int epochs = 5;
    std::uint64_t seed = 1;
    Precision precision = Precision::F32;
    int max_span_len = 10;
    std::string save_model_path;  // when set, the final weights land here

    double resolved_lr() const {
        if (learning_rate > 0.0) return learning_rate;
        return model.family == ModelFamily::Hred ? 1e-4 : 5e-4;
    }

    void validate() const {
        if (learning_rate < 0.0) throw std::invalid_argument("run config: negative learning rate");
        if (batch_size < 1) throw std::invalid_argument("run config: batch_size must be >= 1");
        if (epochs < 0) throw std::invalid_argument("run config: negative epoch count");
        if (max_span_len < 1) throw std::invalid_argument("run config: max_span_len must be >= 1");
        if (data_path.empty()) task.validate();
    }
};

struct TrainReport {
    std::string family;
    std::string variant;
    long trainable_params = 0;
    int epochs_run = 0;
    std::vector<double> secs_per_epoch;
    std::array<std::string, 2> metric_names{};
    // trajectory[0] holds the untrained metrics; one more entry per epoch
    std::vector<std::array<double, 2>> trajectory;
    std::array<double, 2> final_metrics{};
    bool diverged = false;

    double median_secs_per_epoch() const {
        if (secs_per_epoch.empty()) return 0.0;
        std::vector<double> sorted = secs_per_epoch;
        std::sort(sorted.begin(), sorted.end());
        const std::size_t n = sorted.size();
        return n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
    }
};

enum class ReportFormat { Csv, Markdown };

// One row per run plus a simplified/baseline ratio row per family when both
// variants are present. The time column is wall-clock and is the only
// non-reproducible column.
void emit_report(const std::vector<TrainReport>&, ReportFormat, std::ostream&);
void emit_report_file(const std::vector<TrainReport>&, ReportFormat, const std::string& path);

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

template <typename S>
LmMetrics eval_lm(const HredModel<S>& model, const Vocab& vocab, const std::vector<Dialogue>& data,
                  int batch_size) {
    if (data.empty()) throw std::invalid_argument("eval_lm: empty dataset");
    double nll = 0;
    long errors = 0, tokens = 0;
    for (std::size_t at = 0; at < data.size(); at += static_cast<std::size_t>(batch_size)) {
        std::vector<Dialogue> chunk(data.begin() + static_cast<std::ptrdiff_t>(at),
                                    data.begin() + static_cast<std::ptrdiff_t>(
                                                       std::min(data.size(), at + static_cast<std::size_t>(batch_size))));
        auto out = model.forward(make_dialogue_batch(vocab, chunk));
        accumulate_lm(out.logits, out.targets, out.mask, nll, errors, tokens);
    }
    return finish_lm(nll, errors, tokens);
}

template <typename S>
SpanMetrics eval_span(const RnetModel<S>& model, const Vocab& words, const Vocab& chars,
                      const std::vector<QaSample>& data, int batch_size, int max_len) {
    if (data.empty()) throw std::invalid_argument("eval_span: empty dataset");
    SpanMetrics m;
    double em_sum = 0, f1_sum = 0;
    for (std::size_t at = 0; at < data.size(); at += static_cast<std::size_t>(batch_size)) {
        std::vector<QaSample> chunk(data.begin() + static_cast<std::ptrdiff_t>(at),
                                    data.begin() + static_cast<std::ptrdiff_t>(
                                                       std::min(data.size(), at + static_cast<std::size_t>(batch_size))));
        SpanBatch batch = make_span_batch(words, chars, chunk);
        auto out = model.forward(batch);
        for (int row = 0; row < batch.batch; ++row) {
            const int len = batch.passage_lengths[static_cast<std::size_t>(row)];
            std::vector<double> start(static_cast<std::size_t>(len)), end(static_cast<std::size_t>(len));
            for (int j = 0; j < len; ++j) {
                start[static_cast<std::size_t>(j)] = static_cast<double>(out.start_logits.at(row, j));
                end[static_cast<std::size_t>(j)] = static_cast<double>(out.end_logits.at(row, j));
            }
            auto [ps, pe] = decode_span(start, end, max_len);
            const int gs = batch.span_start[static_cast<std::size_t>(row)];
            const int ge = batch.span_end[static_cast<std::size_t>(row)];
            em_sum += ps == gs && pe == ge ? 1.0 : 0.0;
            std::vector<int> passage(static_cast<std::size_t>(len));
            for (int j = 0; j < len; ++j)
                passage[static_cast<std::size_t>(j)] =
                    batch.passage_ids[static_cast<std::size_t>(row) * batch.passage_words + j];
            f1_sum += span_f1(passage, ps, pe, gs, ge);
            ++m.samples;
        }
    }
    m.em = em_sum / static_cast<double>(m.samples);
    m.f1 = f1_sum / static_cast<double>(m.samples);
    return m;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

namespace detail {

// Seed-stable 90/10 split: the last tenth of a seeded shuffle is held out.
inline void split_indices(int n, std::uint64_t seed, std::vector<int>& train, std::vector<int>& held) {
    std::vector<int> order(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    std::mt19937_64 rng(seed + 0x9e3779b97f4a7c15ULL);
    std::shuffle(order.begin(), order.end(), rng);
    const int held_n = std::max(1, n / 10);
    held.assign(order.end() - held_n, order.end());
    train.assign(order.begin(), order.end() - held_n);
}

template <typename T>
std::vector<T> take(const std::vector<T>& all, const std::vector<int>& idx) {
    std::vector<T> out;
    out.reserve(idx.size());
    for (int i : idx) out.push_back(all[static_cast<std::size_t>(i)]);
    return out;
}

template <typename S>
TrainReport train_hred(const RunConfig& config) {
    std::vector<Dialogue> all;
    Vocab vocab;
    if (!config.data_path.empty()) {
        all = load_dialogues(config.data_path).items;
        std::vector<std::vector<std::string>> corpus;
        for (const auto& d : all)
            for (const auto& s : d.sentences) corpus.push_back(s);
        vocab = build_vocab(corpus, 1);
    } else {
        all = config.task.task == TaskKind::Copy ? gen_copy_task(config.task)
                                                 : gen_toy_dialogue(config.task);
        vocab = synthetic_vocab(config.task.vocab_size);
    }
    if (all.empty()) throw std::invalid_argument("train: dataset is empty");

    std::vector<int> train_idx, held_idx;
    split_indices(static_cast<int>(all.size()), config.seed, train_idx, held_idx);
    std::vector<Dialogue> held = take(all, held_idx);
    std::vector<Dialogue> train = take(all, train_idx);

    ModelSpec spec = config.model;
    spec.vocab_size = vocab.size();
    std::mt19937 rng(static_cast<unsigned>(config.seed));
    auto model = HredModel<S>::build(spec, rng);
    auto params = model.params();
    auto opt = AdamState<S>::init(params);

    TrainReport report;
    report.family = to_string(spec.family);
    report.variant = to_string(spec.variant);
    report.trainable_params = model.param_count();
    report.metric_names = {"ppl", "err_rate"};
    auto eval_now = [&] {
        LmMetrics m = eval_lm(model, vocab, held, config.batch_size);
        report.trajectory.push_back({m.ppl, m.err_rate});
    };
    eval_now();

    for (int epoch = 0; epoch < config.epochs && !report.diverged; ++epoch) {
        auto index_batches = batch_indices(static_cast<int>(train.size()), config.batch_size,
                                           config.seed * 1000003ULL + static_cast<std::uint64_t>(epoch));
        std::vector<DialogueBatch> batches;
        batches.reserve(index_batches.size());
        for (const auto& idx : index_batches)
            batches.push_back(make_dialogue_batch(vocab, take(train, idx)));

        const auto t0 = std::chrono::steady_clock::now();
        for (const DialogueBatch& batch : batches) {
            Tape<S> tape;
            typename Tape<S>::Scope scope(tape);
            auto out = model.forward(batch);
            if (!std::isfinite(static_cast<double>(out.loss.item()))) {
                report.diverged = true;
                break;
            }
            model.zero_grad();
            backward(out.loss);
            adam_step(params, opt, config.resolved_lr());
        }
        const auto t1 = std::chrono::steady_clock::now();
        if (report.diverged) break;
        report.secs_per_epoch.push_back(std::chrono::duration<double>(t1 - t0).count());
        ++report.epochs_run;
        eval_now();
    }
    report.final_metrics = report.trajectory.back();
    if (!config.save_model_path.empty()) save_model<S>(config.save_model_path, model);
    return report;
}

template <typename S>
TrainReport train_rnet(const RunConfig& config) {
    std::vector<QaSample> all =
        config.data_path.empty() ? gen_toy_qa(config.task) : load_qa(config.data_path);
    if (all.empty()) throw std::invalid_argument("train: dataset is empty");
    Vocab vocab = config.data_path.empty() ? synthetic_vocab(config.task.vocab_size) : [&] {
        std::vector<std::vector<std::string>> corpus;
        for (const auto& s : all) {
            corpus.push_back(s.passage);
            corpus.push_back(s.question);
        }
        return build_vocab(corpus, 1);
    }();
    Vocab chars = build_char_vocab(all);

    std::vector<int> train_idx, held_idx;
    split_indices(static_cast<int>(all.size()), config.seed, train_idx, held_idx);
    std::vector<QaSample> held = take(all, held_idx);
    std::vector<QaSample> train = take(all, train_idx);

    ModelSpec spec = config.model;
    spec.vocab_size = vocab.size();
    spec.char_vocab_size = chars.size();
    std::mt19937 rng(static_cast<unsigned>(config.seed));
    auto model = RnetModel<S>::build(spec, rng);
    auto params = model.params();
    auto opt = AdamState<S>::init(params);

    TrainReport report;
    report.family = to_string(spec.family);
    report.variant = to_string(spec.variant);
    report.trainable_params = model.param_count();
    report.metric_names = {"em", "f1"};
    auto eval_now = [&] {
        SpanMetrics m = eval_span(model, vocab, chars, held, config.batch_size, config.max_span_len);
        report.trajectory.push_back({m.em, m.f1});
    };
    eval_now();

    for (int epoch = 0; epoch < config.epochs && !report.diverged; ++epoch) {
        auto index_batches = batch_indices(static_cast<int>(train.size()), config.batch_size,
                                           config.seed * 1000003ULL + static_cast<std::uint64_t>(epoch));
        std::vector<SpanBatch> batches;
        batches.reserve(index_batches.size());
        for (const auto& idx : index_batches)
            batches.push_back(make_span_batch(vocab, chars, take(train, idx)));

        const auto t0 = std::chrono::steady_clock::now();
        for (const SpanBatch& batch : batches) {
            Tape<S> tape;
            typename Tape<S>::Scope scope(tape);
            auto out = model.forward(batch);
            if (!std::isfinite(static_cast<double>(out.loss.item()))) {
                report.diverged = true;
                break;
            }
            model.zero_grad();
            backward(out.loss);
            adam_step(params, opt, config.resolved_lr());
        }
        const auto t1 = std::chrono::steady_clock::now();
        if (report.diverged) break;
        report.secs_per_epoch.push_back(std::chrono::duration<double>(t1 - t0).count());
        ++report.epochs_run;
        eval_now();
    }
    report.final_metrics = report.trajectory.back();
    if (!config.save_model_path.empty()) save_model<S>(config.save_model_path, model);
    return report;
}

}  // namespace detail

inline TrainReport train_run(const RunConfig& config) {
    config.validate();
    if (config.model.family == ModelFamily::Hred)
        return config.precision == Precision::F32 ? detail::train_hred<float>(config)
                                                  : detail::train_hred<double>(config);
    return config.precision == Precision::F32 ? detail::train_rnet<float>(config)
                                              : detail::train_rnet<double>(config);
}

}  // namespace rnnkit

// Baseline and simplified assemblies of the two hierarchical models.
//
// The hierarchical encoder-decoder stacks sentence encoder -> dialogue
// encoder -> word decoder. The span-extraction reader stacks embedding ->
// encoding -> gated attention matching -> self matching -> span pointer.
// The simplified variants swap the bottom recurrent layer for the
// parameter-free decayed-sum encoder and the middle one for the scalar-gated
// cell; everything else, including all shapes at layer boundaries, stays
// identical, so the two variants of a spec are drop-in comparable.

#pragma once

#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "rnnkit/cells.hpp"
#include "rnnkit/data.hpp"
#include "rnnkit/tensor.hpp"

namespace rnnkit {

enum class ModelFamily { Hred, Rnet };
enum class Variant { Baseline, Simplified };

inline const char* to_string(ModelFamily f) { return f == ModelFamily::Hred ? "hred" : "rnet"; }
inline const char* to_string(Variant v) { return v == Variant::Baseline ? "baseline" : "simplified"; }

struct HredSizes {
    int sentence = 64;
    int dialogue = 128;
    int decoder = 64;
};

struct RnetSizes {
    int char_level = 8;
    int encode = 16;
    int match = 16;
    int self_match = 16;
};

struct ModelSpec {
    ModelFamily family = ModelFamily::Hred;
    Variant variant = Variant::Baseline;
    int vocab_size = 0;
    int embed_size = 0;
    HredSizes hred;
    RnetSizes rnet;
    int char_vocab_size = 0;  // span reader only
    int char_embed_size = 0;  // span reader only
    double alpha = 0.9;       // forgetting factor of the decayed-sum encoders

    void validate() const {
        if (vocab_size <= 0 || embed_size <= 0)
            throw std::invalid_argument("model spec: vocab and embedding sizes must be positive");
        if (family == ModelFamily::Hred) {
            if (hred.sentence <= 0 || hred.dialogue <= 0 || hred.decoder <= 0)
                throw std::invalid_argument("model spec: hierarchical layer sizes must be positive");
        } else {
            if (rnet.char_level <= 0 || rnet.encode <= 0 || rnet.match <= 0 || rnet.self_match <= 0)
                throw std::invalid_argument("model spec: reader layer sizes must be positive");
            if (char_vocab_size <= 0 || char_embed_size <= 0)
                throw std::invalid_argument("model spec: reader needs char vocab and char embedding sizes");
        }
        if (variant == Variant::Simplified && !(alpha > 0.0 && alpha < 1.0))
            throw std::invalid_argument("model spec: forgetting factor must lie in (0, 1), got " +
                                        std::to_string(alpha));
    }
};

using ParamBreakdown = std::vector<std::pair<std::string, long>>;

namespace detail {

template <typename S>
Tensor<S> glorot(int rows, int cols, std::mt19937& rng) {
    const S bound = static_cast<S>(std::sqrt(6.0 / (rows + cols)));
    return Tensor<S>::uniform({rows, cols}, -bound, bound, rng, true);
}

// Stacks per-position [b x e] embeddings into [T x b x e] for run_sequence.
template <typename S>
Tensor<S> stack_steps(std::vector<Tensor<S>> steps, int b, int e) {
    for (auto& s : steps) s = reshape(s, {1, b, e});
    return concat(steps, 0);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Hierarchical encoder-decoder
// ---------------------------------------------------------------------------

template <typename S>
struct HredOutput {
    Tensor<S> loss;    // mean NLL per unmasked target token
    Tensor<S> logits;  // [n x V], one row per decoder position
    std::vector<int> targets;
    std::vector<std::uint8_t> mask;
    int skipped_dialogues = 0;  // rows with fewer than two sentences
};

template <typename S>
class HredModel {
public:
    static HredModel build(const ModelSpec& spec, std::mt19937& rng) {
        spec.validate();
        if (spec.family != ModelFamily::Hred)
            throw std::invalid_argument("HredModel: spec is for a different family");
        HredModel m;
        m.spec_ = spec;
        m.embedding_ = detail::glorot<S>(spec.vocab_size, spec.embed_size, rng);
        if (spec.variant == Variant::Baseline) {
            m.sentence_cell_ = CellWeights<S>::init(
                {CellKind::Gru, spec.embed_size, spec.hred.sentence}, rng);
        } else {
            m.sentence_cell_ = CellWeights<S>::init(
                {CellKind::Fofe, spec.embed_size, spec.embed_size, spec.alpha}, rng);
            // the decayed sum has the embedding width; bridge to the sentence
            // width only when they differ
            if (spec.embed_size != spec.hred.sentence)
                m.sentence_proj_ = detail::glorot<S>(spec.embed_size, spec.hred.sentence, rng);
        }
        m.dialogue_cell_ = CellWeights<S>::init(
            {spec.variant == Variant::Baseline ? CellKind::Gru : CellKind::Sgu, spec.hred.sentence,
             spec.hred.dialogue},
            rng);
        m.decoder_init_ = detail::glorot<S>(spec.hred.dialogue, spec.hred.decoder, rng);
        m.decoder_cell_ = CellWeights<S>::init({CellKind::Gru, spec.embed_size, spec.hred.decoder}, rng);
        m.output_ = detail::glorot<S>(spec.hred.decoder, spec.vocab_size, rng);
        return m;
    }

    const ModelSpec& spec() const { return spec_; }

    std::vector<std::pair<std::string, Tensor<S>>> named_params() const {
        std::vector<std::pair<std::string, Tensor<S>>> out;
        out.emplace_back("embedding", embedding_);
        for (const auto& [n, t] : sentence_cell_.named_params())
            out.emplace_back("sentence_encoder." + n, t);
        if (sentence_proj_.defined()) out.emplace_back("sentence_proj", sentence_proj_);
        for (const auto& [n, t] : dialogue_cell_.named_params())
            out.emplace_back("dialogue_encoder." + n, t);
        out.emplace_back("decoder_init", decoder_init_);
        for (const auto& [n, t] : decoder_cell_.named_params()) out.emplace_back("decoder." + n, t);
        out.emplace_back("output", output_);
        return out;
    }

    std::vector<Tensor<S>> params() const {
        std::vector<Tensor<S>> out;
        for (auto& [n, t] : named_params()) out.push_back(t);
        return out;
    }

    long param_count() const {
        long n = 0;
        for (const auto& [name, t] : named_params()) n += static_cast<long>(t.size());
        return n;
    }

    // Layer-by-layer audit. Cell entries count only cell weights; bridge
    // projections are their own rows, so a parameter-free bottom layer
    // reports 0 even when a projection follows it.
    ParamBreakdown param_breakdown() const {
        ParamBreakdown out;
        out.emplace_back("embedding", static_cast<long>(embedding_.size()));
        out.emplace_back("sentence_encoder", sentence_cell_.num_elements());
        if (sentence_proj_.defined())
            out.emplace_back("sentence_proj", static_cast<long>(sentence_proj_.size()));
        out.emplace_back("dialogue_encoder", dialogue_cell_.num_elements());
        out.emplace_back("decoder_init", static_cast<long>(decoder_init_.size()));
        out.emplace_back("decoder", decoder_cell_.num_elements());
        out.emplace_back("output", static_cast<long>(output_.size()));
        return out;
    }

    void zero_grad() const {
        for (auto& [n, t] : named_params()) t.zero_grad();
    }

    // Teacher-forced forward pass: each sentence s >= 1 is decoded from the
    // dialogue state after sentence s-1, predicting its tokens one step
    // ahead. Rows whose dialogue has fewer than two sentences contribute no
    // targets and are counted in skipped_dialogues.
    HredOutput<S> forward(const DialogueBatch& batch) const {
        const int b = batch.batch, s_max = batch.sentences, t_max = batch.words;
        const int h_s = spec_.hred.sentence, h_d = spec_.hred.dialogue;
        for (int id : batch.ids)
            if (id < 0 || id >= spec_.vocab_size)
                throw std::out_of_range("hred forward: token id " + std::to_string(id) +
                                        " outside vocabulary of " + std::to_string(spec_.vocab_size));

        HredOutput<S> out;
        for (int row = 0; row < b; ++row)
            if (batch.dialogue_lengths[static_cast<std::size_t>(row)] < 2) ++out.skipped_dialogues;

        // sentence representations [S x b x h_s]
        std::vector<Tensor<S>> reps;
        for (int s = 0; s < s_max; ++s) {
            std::vector<Tensor<S>> steps;
            std::vector<int> lengths(static_cast<std::size_t>(b));
            for (int row = 0; row < b; ++row) lengths[static_cast<std::size_t>(row)] = batch.sentence_length(row, s);
            for (int t = 0; t < t_max; ++t) {
                std::vector<int> ids(static_cast<std::size_t>(b));
                for (int row = 0; row < b; ++row) ids[static_cast<std::size_t>(row)] = batch.id(row, s, t);
                steps.push_back(embed_rows(embedding_, ids));
            }
            Tensor<S> xs = detail::stack_steps(std::move(steps), b, spec_.embed_size);
            Tensor<S> rep = run_sequence(sentence_cell_, xs, lengths).final;
            if (sentence_proj_.defined()) rep = matmul(rep, sentence_proj_);
            reps.push_back(reshape(rep, {1, b, h_s}));
        }
        auto dialogue = run_sequence(dialogue_cell_, concat(reps, 0), batch.dialogue_lengths);

        // teacher-forced decoding
        std::vector<Tensor<S>> logit_blocks;
        for (int s = 1; s < s_max; ++s) {
            bool any = false;
            for (int row = 0; row < b; ++row)
                any |= s < batch.dialogue_lengths[static_cast<std::size_t>(row)];
            if (!any) continue;
            Tensor<S> ctx = reshape(slice(dialogue.outputs, 0, s - 1, 1), {b, h_d});
            Tensor<S> h = tanh(matmul(ctx, decoder_init_));
            for (int t = 0; t + 1 < t_max; ++t) {
                std::vector<int> ids(static_cast<std::size_t>(b));
                bool live = false;
                for (int row = 0; row < b; ++row) {
                    ids[static_cast<std::size_t>(row)] = batch.id(row, s, t);
                    const bool valid = s < batch.dialogue_lengths[static_cast<std::size_t>(row)] &&
                                       t + 1 < batch.sentence_length(row, s);
                    live |= valid;
                    out.targets.push_back(batch.id(row, s, t + 1));
                    out.mask.push_back(valid ? 1 : 0);
                }
                if (!live) {  // nothing left to predict at this offset
                    out.targets.resize(out.targets.size() - static_cast<std::size_t>(b));
                    out.mask.resize(out.mask.size() - static_cast<std::size_t>(b));
                    break;
                }
                h = gru_step(decoder_cell_, h, embed_rows(embedding_, ids));
                logit_blocks.push_back(matmul(h, output_));
            }
        }
        if (logit_blocks.empty())
            throw std::invalid_argument("hred forward: no dialogue in the batch has a decodable sentence");
        out.logits = concat(logit_blocks, 0);
        out.loss = softmax_xent(out.logits, out.targets, out.mask);
        return out;
    }

private:
    ModelSpec spec_;
    Tensor<S> embedding_;
    CellWeights<S> sentence_cell_;
    Tensor<S> sentence_proj_;  // only when the encoder width differs from the sentence width
    CellWeights<S> dialogue_cell_;
    Tensor<S> decoder_init_;
    CellWeights<S> decoder_cell_;
    Tensor<S> output_;
};

// ---------------------------------------------------------------------------
// Attention building blocks
// ---------------------------------------------------------------------------

// Additive attention plus an input gate, the recurrent fusion block of the
// span reader's matching layers.
template <typename S>
struct AttnGateWeights {
    Tensor<S> seq_proj;  // [h_seq x a]
    Tensor<S> mem_proj;  // [h_mem x a]
    Tensor<S> score;     // [a x 1]
    Tensor<S> gate;      // [(h_seq + h_mem) x (h_seq + h_mem)]

    static AttnGateWeights init(int h_seq, int h_mem, int att, std::mt19937& rng) {
        AttnGateWeights w;
        w.seq_proj = detail::glorot<S>(h_seq, att, rng);
        w.mem_proj = detail::glorot<S>(h_mem, att, rng);
        w.score = detail::glorot<S>(att, 1, rng);
        w.gate = detail::glorot<S>(h_seq + h_mem, h_seq + h_mem, rng);
        return w;
    }

    std::vector<std::pair<std::string, Tensor<S>>> named_params() const {
        return {{"seq_proj", seq_proj}, {"mem_proj", mem_proj}, {"score", score}, {"gate", gate}};
    }
    long num_elements() const {
        return static_cast<long>(seq_proj.size() + mem_proj.size() + score.size() + gate.size());
    }
};

namespace detail {

inline std::vector<std::uint8_t> length_mask(const std::vector<int>& lengths, int t_max) {
    std::vector<std::uint8_t> mask(lengths.size() * static_cast<std::size_t>(t_max), 0);
    for (std::size_t row = 0; row < lengths.size(); ++row)
        for (int j = 0; j < lengths[row] && j < t_max; ++j) mask[row * static_cast<std::size_t>(t_max) + j] = 1;
    return mask;
}

// Additive attention of one query batch [b x h_q] over mem [Tm x b x h_mem],
// with the memory projections precomputed. Returns the normalized weights
// [b x Tm].
template <typename S>
Tensor<S> attention_weights(const Tensor<S>& query_proj, const std::vector<Tensor<S>>& mem_proj,
                            const Tensor<S>& score, const std::vector<std::uint8_t>& mem_mask) {
    std::vector<Tensor<S>> scores;
    scores.reserve(mem_proj.size());
    for (const Tensor<S>& mp : mem_proj)
        scores.push_back(matmul(tanh(add(query_proj, mp)), score));
    return softmax_rows(concat(scores, 1), mem_mask);
}

// Sum_j weights[:, j] * mem_j -> [b x h_mem]
template <typename S>
Tensor<S> attention_pool(const Tensor<S>& weights, const std::vector<Tensor<S>>& mem_steps) {
    Tensor<S> ctx;
    for (std::size_t j = 0; j < mem_steps.size(); ++j) {
        Tensor<S> term = scale_rows(mem_steps[j], slice(weights, 1, static_cast<int>(j), 1));
        ctx = j == 0 ? term : add(ctx, term);
    }
    return ctx;
}

template <typename S>
std::vector<Tensor<S>> unstack_steps(const Tensor<S>& xs) {
    std::vector<Tensor<S>> steps;
    const int t_max = xs.dim(0), b = xs.dim(1), d = xs.dim(2);
    steps.reserve(static_cast<std::size_t>(t_max));
    for (int t = 0; t < t_max; ++t) steps.push_back(reshape(slice(xs, 0, t, 1), {b, d}));
    return steps;
}

}  // namespace detail

// Fuses mem into seq: each step attends over the memory, the pooled context
// is concatenated to the step input, scaled by a learned sigmoid gate, and
// the gated sequence feeds a bidirectional recurrent pass.
template <typename S>
Tensor<S> gated_attention_layer(const Tensor<S>& seq, const Tensor<S>& mem,
                                const AttnGateWeights<S>& attn, const CellWeights<S>& fwd,
                                const CellWeights<S>& bwd, const std::vector<int>& seq_lengths,
                                const std::vector<int>& mem_lengths) {
    if (seq.rank() != 3 || mem.rank() != 3)
        throw std::invalid_argument("gated_attention_layer: expects [T x b x h] sequences");
    const int b = seq.dim(1);
    if (mem.dim(1) != b)
        throw std::invalid_argument("gated_attention_layer: batch mismatch between sequence and memory");
    const int t_mem = mem.dim(0);
    const auto mem_mask = detail::length_mask(mem_lengths, t_mem);
    for (int row = 0; row < b; ++row)
        if (mem_lengths[static_cast<std::size_t>(row)] < 1)
            throw std::invalid_argument("gated_attention_layer: memory row " + std::to_string(row) +
                                        " is empty; attention over nothing is undefined");

    std::vector<Tensor<S>> mem_steps = detail::unstack_steps(mem);
    std::vector<Tensor<S>> mem_proj;
    mem_proj.reserve(mem_steps.size());
    for (const Tensor<S>& m : mem_steps) mem_proj.push_back(matmul(m, attn.mem_proj));

    std::vector<Tensor<S>> gated;
    for (Tensor<S>& u : detail::unstack_steps(seq)) {
        Tensor<S> weights =
            detail::attention_weights(matmul(u, attn.seq_proj), mem_proj, attn.score, mem_mask);
        Tensor<S> ctx = detail::attention_pool(weights, mem_steps);
        Tensor<S> uc = concat<S>({u, ctx}, 1);
        gated.push_back(mul(uc, sigmoid(matmul(uc, attn.gate))));
    }
    Tensor<S> fused = detail::stack_steps(std::move(gated), b, seq.dim(2) + mem.dim(2));
    return bi_encode(fwd, bwd, fused, seq_lengths).outputs;
}

// Matching of a sequence against itself.
template <typename S>
Tensor<S> self_match_layer(const Tensor<S>& seq, const AttnGateWeights<S>& attn,
                           const CellWeights<S>& fwd, const CellWeights<S>& bwd,
                           const std::vector<int>& lengths) {
    return gated_attention_layer(seq, seq, attn, fwd, bwd, lengths, lengths);
}

// ---------------------------------------------------------------------------
// Span pointer
// ---------------------------------------------------------------------------

template <typename S>
struct PointerWeights {
    Tensor<S> pool_proj;   // [h_q x a]
    Tensor<S> pool_score;  // [a x 1]
    Tensor<S> span_seq;    // [h_p x a]
    Tensor<S> span_state;  // [h_q x a]
    Tensor<S> span_score;  // [a x 1]
    CellWeights<S> cell;   // state update: input h_p, hidden h_q

    static PointerWeights init(int h_passage, int h_question, int att, std::mt19937& rng) {
        PointerWeights w;
        w.pool_proj = detail::glorot<S>(h_question, att, rng);
        w.pool_score = detail::glorot<S>(att, 1, rng);
        w.span_seq = detail::glorot<S>(h_passage, att, rng);
        w.span_state = detail::glorot<S>(h_question, att, rng);
        w.span_score = detail::glorot<S>(att, 1, rng);
        w.cell = CellWeights<S>::init({CellKind::Gru, h_passage, h_question}, rng);
        return w;
    }

    std::vector<std::pair<std::string, Tensor<S>>> named_params() const {
        std::vector<std::pair<std::string, Tensor<S>>> out = {{"pool_proj", pool_proj},
                                                              {"pool_score", pool_score},
                                                              {"span_seq", span_seq},
                                                              {"span_state", span_state},
                                                              {"span_score", span_score}};
        for (const auto& [n, t] : cell.named_params()) out.emplace_back("cell." + n, t);
        return out;
    }
    long num_elements() const {
        long n = 0;
        for (const auto& [name, t] : named_params()) n += static_cast<long>(t.size());
        return n;
    }
};

template <typename S>
struct PointerOutput {
    Tensor<S> start_logits;  // [b x Tp], raw attention scores
    Tensor<S> end_logits;    // [b x Tp]
};

// Initial state is the attention-pooled question; the start distribution is
// additive attention over the passage; one recurrent step on the
// start-weighted context updates the state; the end distribution repeats the
// attention with the new state.
template <typename S>
PointerOutput<S> pointer_output(const Tensor<S>& passage, const Tensor<S>& question,
                                const PointerWeights<S>& w, const std::vector<int>& passage_lengths,
                                const std::vector<int>& question_lengths) {
    if (passage.rank() != 3 || question.rank() != 3)
        throw std::invalid_argument("pointer_output: expects [T x b x h] inputs");
    const int tp = passage.dim(0), b = passage.dim(1);
    for (int row = 0; row < b; ++row)
        if (passage_lengths[static_cast<std::size_t>(row)] < 1)
            throw std::invalid_argument("pointer_output: empty passage in row " + std::to_string(row));

    const auto q_mask = detail::length_mask(question_lengths, question.dim(0));
    const auto p_mask = detail::length_mask(passage_lengths, tp);

    std::vector<Tensor<S>> q_steps = detail::unstack_steps(question);
    std::vector<Tensor<S>> q_pool_proj;
    for (const Tensor<S>& q : q_steps) q_pool_proj.push_back(tanh(matmul(q, w.pool_proj)));
    std::vector<Tensor<S>> pool_scores;
    for (const Tensor<S>& qp : q_pool_proj) pool_scores.push_back(matmul(qp, w.pool_score));
    Tensor<S> q_weights = softmax_rows(concat(pool_scores, 1), q_mask);
    Tensor<S> state = detail::attention_pool(q_weights, q_steps);

    std::vector<Tensor<S>> p_steps = detail::unstack_steps(passage);
    std::vector<Tensor<S>> p_proj;
    for (const Tensor<S>& p : p_steps) p_proj.push_back(matmul(p, w.span_seq));

    auto span_scores = [&](const Tensor<S>& st) {
        Tensor<S> st_proj = matmul(st, w.span_state);
        std::vector<Tensor<S>> scores;
        scores.reserve(p_proj.size());
        for (const Tensor<S>& pp : p_proj)
            scores.push_back(matmul(tanh(add(pp, st_proj)), w.span_score));
        return concat(scores, 1);  // [b x Tp]
    };

    PointerOutput<S> out;
    out.start_logits = span_scores(state);
    Tensor<S> start_ctx = detail::attention_pool(softmax_rows(out.start_logits, p_mask), p_steps);
    Tensor<S> state2 = gru_step(w.cell, state, start_ctx);
    out.end_logits = span_scores(state2);
    return out;
}

// Highest start[i] + end[j] over legal pairs i <= j < i + max_len, ties
// broken toward the smallest i, then the smallest j.
inline std::pair<int, int> decode_span(std::span<const double> start, std::span<const double> end,
                                       int max_len) {
    if (max_len < 1) throw std::invalid_argument("decode_span: max_len must be >= 1");
    if (start.empty() || start.size() != end.size())
        throw std::invalid_argument("decode_span: start/end must be equal-length and non-empty");
    const int n = static_cast<int>(start.size());
    int best_i = 0, best_j = 0;
    double best = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < n; ++i)
        for (int j = i; j < std::min(n, i + max_len); ++j) {
            const double s = start[static_cast<std::size_t>(i)] + end[static_cast<std::size_t>(j)];
            if (s > best) {
                best = s;
                best_i = i;
                best_j = j;
            }
        }
    return {best_i, best_j};
}

// ---------------------------------------------------------------------------
// Span-extraction reader
// ---------------------------------------------------------------------------

template <typename S>
struct RnetOutput {
    Tensor<S> loss;        // start loss + end loss
    Tensor<S> start_loss;  // mean NLL of the gold start position
    Tensor<S> end_loss;
    Tensor<S> start_logits;  // [b x Tp], raw scores (mask applied only for the loss)
    Tensor<S> end_logits;
};

template <typename S>
class RnetModel {
public:
    static RnetModel build(const ModelSpec& spec, std::mt19937& rng) {
        spec.validate();
        if (spec.family != ModelFamily::Rnet)
            throw std::invalid_argument("RnetModel: spec is for a different family");
        RnetModel m;
        m.spec_ = spec;
        const bool simple = spec.variant == Variant::Simplified;
        const int e_c = spec.char_embed_size, h_c = spec.rnet.char_level;
        const int word_width = spec.embed_size + 2 * h_c;
        m.word_emb_ = detail::glorot<S>(spec.vocab_size, spec.embed_size, rng);
        m.char_emb_ = detail::glorot<S>(spec.char_vocab_size, e_c, rng);
        if (simple) {
            const CellConfig fofe{CellKind::Fofe, e_c, e_c, spec.alpha};
            m.char_fwd_ = CellWeights<S>::init(fofe, rng);
            m.char_bwd_ = CellWeights<S>::init(fofe, rng);
            // the decayed-sum finals have width 2 e_c; bridge to the
            // char-level width the next layer expects
            m.char_proj_ = detail::glorot<S>(2 * e_c, 2 * h_c, rng);
        } else {
            m.char_fwd_ = CellWeights<S>::init({CellKind::Gru, e_c, h_c}, rng);
            m.char_bwd_ = CellWeights<S>::init({CellKind::Gru, e_c, h_c}, rng);
        }
        const CellKind enc_kind = simple ? CellKind::Sgu : CellKind::Gru;
        m.enc_fwd_ = CellWeights<S>::init({enc_kind, word_width, spec.rnet.encode}, rng);
        m.enc_bwd_ = CellWeights<S>::init({enc_kind, word_width, spec.rnet.encode}, rng);

        const int enc_out = 2 * spec.rnet.encode;
        m.match_attn_ = AttnGateWeights<S>::init(enc_out, enc_out, spec.rnet.encode, rng);
        m.match_fwd_ = CellWeights<S>::init({CellKind::Gru, 2 * enc_out, spec.rnet.match}, rng);
        m.match_bwd_ = CellWeights<S>::init({CellKind::Gru, 2 * enc_out, spec.rnet.match}, rng);

        const int match_out = 2 * spec.rnet.match;
        m.self_attn_ = AttnGateWeights<S>::init(match_out, match_out, spec.rnet.match, rng);
        m.self_fwd_ = CellWeights<S>::init({CellKind::Gru, 2 * match_out, spec.rnet.self_match}, rng);
        m.self_bwd_ = CellWeights<S>::init({CellKind::Gru, 2 * match_out, spec.rnet.self_match}, rng);

        m.pointer_ = PointerWeights<S>::init(2 * spec.rnet.self_match, enc_out, spec.rnet.self_match, rng);
        return m;
    }

    const ModelSpec& spec() const { return spec_; }

    std::vector<std::pair<std::string, Tensor<S>>> named_params() const {
        std::vector<std::pair<std::string, Tensor<S>>> out;
        auto push_cell = [&out](const std::string& prefix, const CellWeights<S>& c) {
            for (const auto& [n, t] : c.named_params()) out.emplace_back(prefix + "." + n, t);
        };
        out.emplace_back("word_embedding", word_emb_);
        out.emplace_back("char_embedding", char_emb_);
        push_cell("char_encoder.fwd", char_fwd_);
        push_cell("char_encoder.bwd", char_bwd_);
        if (char_proj_.defined()) out.emplace_back("char_proj", char_proj_);
        push_cell("encoder.fwd", enc_fwd_);
        push_cell("encoder.bwd", enc_bwd_);
        for (const auto& [n, t] : match_attn_.named_params()) out.emplace_back("match_attention." + n, t);
        push_cell("match_encoder.fwd", match_fwd_);
        push_cell("match_encoder.bwd", match_bwd_);
        for (const auto& [n, t] : self_attn_.named_params()) out.emplace_back("self_attention." + n, t);
        push_cell("self_encoder.fwd", self_fwd_);
        push_cell("self_encoder.bwd", self_bwd_);
        for (const auto& [n, t] : pointer_.named_params()) out.emplace_back("pointer." + n, t);
        return out;
    }

    std::vector<Tensor<S>> params() const {
        std::vector<Tensor<S>> out;
        for (auto& [n, t] : named_params()) out.push_back(t);
        return out;
    }

    long param_count() const {
        long n = 0;
        for (const auto& [name, t] : named_params()) n += static_cast<long>(t.size());
        return n;
    }

    ParamBreakdown param_breakdown() const {
        ParamBreakdown out;
        out.emplace_back("word_embedding", static_cast<long>(word_emb_.size()));
        out.emplace_back("char_embedding", static_cast<long>(char_emb_.size()));
        out.emplace_back("char_encoder", char_fwd_.num_elements() + char_bwd_.num_elements());
        if (char_proj_.defined()) out.emplace_back("char_proj", static_cast<long>(char_proj_.size()));
        out.emplace_back("encoder", enc_fwd_.num_elements() + enc_bwd_.num_elements());
        out.emplace_back("match_attention", match_attn_.num_elements());
        out.emplace_back("match_encoder", match_fwd_.num_elements() + match_bwd_.num_elements());
        out.emplace_back("self_attention", self_attn_.num_elements());
        out.emplace_back("self_encoder", self_fwd_.num_elements() + self_bwd_.num_elements());
        out.emplace_back("pointer", pointer_.num_elements());
        return out;
    }

    void zero_grad() const {
        for (auto& [n, t] : named_params()) t.zero_grad();
    }

    RnetOutput<S> forward(const SpanBatch& batch) const {
        const int b = batch.batch, tp = batch.passage_words, tq = batch.question_words;
        for (int row = 0; row < b; ++row) {
            const int len = batch.passage_lengths[static_cast<std::size_t>(row)];
            if (len < 1)
                throw std::invalid_argument("rnet forward: empty passage in row " + std::to_string(row));
            if (batch.span_start[static_cast<std::size_t>(row)] < 0 ||
                batch.span_start[static_cast<std::size_t>(row)] > batch.span_end[static_cast<std::size_t>(row)] ||
                batch.span_end[static_cast<std::size_t>(row)] >= len)
                throw std::invalid_argument("rnet forward: gold span outside passage bounds in row " +
                                            std::to_string(row));
        }

        Tensor<S> enc_p = encode_side(batch.passage_ids, batch.passage_char_ids,
                                      batch.passage_char_lengths, batch.passage_lengths, tp, batch.word_chars, b);
        Tensor<S> enc_q = encode_side(batch.question_ids, batch.question_char_ids,
                                      batch.question_char_lengths, batch.question_lengths, tq, batch.word_chars, b);

        Tensor<S> matched = gated_attention_layer(enc_p, enc_q, match_attn_, match_fwd_, match_bwd_,
                                                  batch.passage_lengths, batch.question_lengths);
        Tensor<S> fused = self_match_layer(matched, self_attn_, self_fwd_, self_bwd_, batch.passage_lengths);
        PointerOutput<S> ptr =
            pointer_output(fused, enc_q, pointer_, batch.passage_lengths, batch.question_lengths);

        // positions past each passage's length get a -1e9 penalty so the
        // span softmax assigns them zero mass
        Tensor<S> penalty = Tensor<S>::zeros({b, tp});
        for (int row = 0; row < b; ++row)
            for (int j = batch.passage_lengths[static_cast<std::size_t>(row)]; j < tp; ++j)
                penalty.at(row, j) = S(-1e9);
        const std::vector<std::uint8_t> all_rows(static_cast<std::size_t>(b), 1);

        RnetOutput<S> out;
        out.start_logits = ptr.start_logits;
        out.end_logits = ptr.end_logits;
        out.start_loss = softmax_xent(add(ptr.start_logits, penalty), batch.span_start, all_rows);
        out.end_loss = softmax_xent(add(ptr.end_logits, penalty), batch.span_end, all_rows);
        out.loss = add(out.start_loss, out.end_loss);
        return out;
    }

private:
    // Shared embedding + encoding stack, applied to the passage and the
    // question with the same weights.
    Tensor<S> encode_side(const std::vector<int>& word_ids, const std::vector<int>& char_ids,
                          const std::vector<int>& char_lengths, const std::vector<int>& lengths,
                          int t_max, int c_max, int b) const {
        const int e_c = spec_.char_embed_size;
        std::vector<Tensor<S>> steps;
        for (int i = 0; i < t_max; ++i) {
            // char-level word embedding: bidirectional finals over the word's
            // characters
            std::vector<Tensor<S>> char_steps;
            std::vector<int> word_len(static_cast<std::size_t>(b));
            for (int row = 0; row < b; ++row)
                word_len[static_cast<std::size_t>(row)] =
                    char_lengths[static_cast<std::size_t>(row) * t_max + i];
            for (int c = 0; c < c_max; ++c) {
                std::vector<int> ids(static_cast<std::size_t>(b));
                for (int row = 0; row < b; ++row)
                    ids[static_cast<std::size_t>(row)] =
                        char_ids[(static_cast<std::size_t>(row) * t_max + i) * c_max + c];
                char_steps.push_back(embed_rows(char_emb_, ids));
            }
            Tensor<S> chars3 = detail::stack_steps(std::move(char_steps), b, e_c);
            Tensor<S> char_rep = bi_encode(char_fwd_, char_bwd_, chars3, word_len).final;
            if (char_proj_.defined()) char_rep = matmul(char_rep, char_proj_);

            std::vector<int> ids(static_cast<std::size_t>(b));
            for (int row = 0; row < b; ++row)
                ids[static_cast<std::size_t>(row)] = word_ids[static_cast<std::size_t>(row) * t_max + i];
            steps.push_back(concat<S>({embed_rows(word_emb_, ids), char_rep}, 1));
        }
        Tensor<S> xs = detail::stack_steps(std::move(steps), b, spec_.embed_size + 2 * spec_.rnet.char_level);
        return bi_encode(enc_fwd_, enc_bwd_, xs, lengths).outputs;
    }

    ModelSpec spec_;
    Tensor<S> word_emb_;
    Tensor<S> char_emb_;
    CellWeights<S> char_fwd_, char_bwd_;
    Tensor<S> char_proj_;  // simplified variant only
    CellWeights<S> enc_fwd_, enc_bwd_;
    AttnGateWeights<S> match_attn_;
    CellWeights<S> match_fwd_, match_bwd_;
    AttnGateWeights<S> self_attn_;
    CellWeights<S> self_fwd_, self_bwd_;
    PointerWeights<S> pointer_;
};

}  // namespace rnnkit

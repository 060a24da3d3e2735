// Corpus ingestion, vocabulary construction, synthetic task generators, and
// padded batch assembly. File formats are JSON lines, one record per line:
//
//   dialogue:  {"sentences": [["hello", "there"], ["hi"]]}
//   qa pair:   {"passage": [...], "question": [...],
//               "answer_start": 3, "answer_end": 3}
//
// Generation and batching are pure functions of (spec, seed): rerunning with
// the same seed reproduces byte-identical data.

#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

namespace rnnkit {

struct Vocab {
    static constexpr int kPad = 0;
    static constexpr int kUnk = 1;
    static constexpr int kBos = 2;
    static constexpr int kEos = 3;
    static constexpr int kReserved = 4;

    std::vector<std::string> id_to_token;  // index 0..3 are the reserved tokens
    std::unordered_map<std::string, int> token_to_id;

    int size() const { return static_cast<int>(id_to_token.size()); }
    int id(const std::string& token) const {
        auto it = token_to_id.find(token);
        return it == token_to_id.end() ? kUnk : it->second;
    }
    const std::string& token(int id) const { return id_to_token.at(static_cast<std::size_t>(id)); }
};

// Tokens with frequency >= min_count get contiguous ids after the reserved
// block, ordered by descending frequency then lexicographically.
Vocab build_vocab(const std::vector<std::vector<std::string>>& sentences, int min_count);

// The fixed vocabulary of the synthetic generators: tokens w4..w{size-1},
// with token "w<i>" mapped to id i.
Vocab synthetic_vocab(int size);

struct Dialogue {
    std::vector<std::vector<std::string>> sentences;
};

struct QaSample {
    std::vector<std::string> passage;
    std::vector<std::string> question;
    int answer_start = 0;
    int answer_end = 0;
};

// Padded token-id block [b x S x T]. Sentences are wrapped in bos/eos before
// padding; sentence_lengths count the wrappers. Decoding targets are implied
// by a shift of one: when a decoder is conditioned on sentence s-1 context,
// position t of sentence s predicts token t+1.
struct DialogueBatch {
    int batch = 0;
    int sentences = 0;  // S
    int words = 0;      // T
    std::vector<int> ids;               // b * S * T
    std::vector<int> sentence_lengths;  // b * S, zero for absent sentences
    std::vector<int> dialogue_lengths;  // b

    int id(int b_, int s, int t) const {
        return ids[(static_cast<std::size_t>(b_) * sentences + s) * words + t];
    }
    int sentence_length(int b_, int s) const {
        return sentence_lengths[static_cast<std::size_t>(b_) * sentences + s];
    }
};

// Passage-question pairs with per-word character ids and gold answer spans.
struct SpanBatch {
    int batch = 0;
    int passage_words = 0;   // Tp
    int question_words = 0;  // Tq
    int word_chars = 0;      // C

    std::vector<int> passage_ids;   // b * Tp
    std::vector<int> question_ids;  // b * Tq
    std::vector<int> passage_lengths;
    std::vector<int> question_lengths;

    std::vector<int> passage_char_ids;       // b * Tp * C
    std::vector<int> question_char_ids;      // b * Tq * C
    std::vector<int> passage_char_lengths;   // b * Tp
    std::vector<int> question_char_lengths;  // b * Tq

    std::vector<int> span_start;  // b
    std::vector<int> span_end;    // b
};

enum class TaskKind { Copy, ToyDialogue, ToyQa };

const char* to_string(TaskKind);
TaskKind task_from_string(const std::string&);

struct SyntheticTaskSpec {
    TaskKind task = TaskKind::Copy;
    int vocab_size = 50;
    int min_sentence = 3;
    int max_sentence = 6;
    int min_passage = 8;
    int max_passage = 16;
    int samples = 2000;
    std::uint64_t seed = 1;

    void validate() const;
};

// input sentence repeated as the response: a 2-sentence dialogue per sample.
std::vector<Dialogue> gen_copy_task(const SyntheticTaskSpec&);

// 3-sentence dialogues: a random sentence, its reversal, then the original.
std::vector<Dialogue> gen_toy_dialogue(const SyntheticTaskSpec&);

// passage with one embedded key token (unique in the passage), question is
// the key, gold span is the key's position.
std::vector<QaSample> gen_toy_qa(const SyntheticTaskSpec&);

// JSONL readers/writers. load_dialogues drops dialogues with fewer than two
// sentences and reports how many were dropped.
struct DialogueLoad {
    std::vector<Dialogue> items;
    int skipped_short = 0;
};
DialogueLoad load_dialogues(const std::string& path);
void save_dialogues(const std::string& path, const std::vector<Dialogue>&);
std::vector<QaSample> load_qa(const std::string& path);
void save_qa(const std::string& path, const std::vector<QaSample>&);

DialogueBatch make_dialogue_batch(const Vocab&, const std::vector<Dialogue>&);
// Reverses make_dialogue_batch: strips padding and wrappers.
std::vector<Dialogue> detokenize(const Vocab&, const DialogueBatch&);

// Character vocabulary over the single characters of every token.
Vocab build_char_vocab(const std::vector<QaSample>&);
SpanBatch make_span_batch(const Vocab& words, const Vocab& chars, const std::vector<QaSample>&,
                          int max_word_chars = 8);

// Seeded shuffle of [0, n) chopped into batches; every index appears exactly
// once. batch_size >= 1.
std::vector<std::vector<int>> batch_indices(int n, int batch_size, std::uint64_t shuffle_seed);

}  // namespace rnnkit

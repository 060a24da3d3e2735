#include "rnnkit/data.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <random>
#include <stdexcept>

#include <json.hpp>

namespace rnnkit {

namespace {

Vocab reserved_only() {
    Vocab v;
    v.id_to_token = {"<pad>", "<unk>", "<bos>", "<eos>"};
    for (int i = 0; i < Vocab::kReserved; ++i) v.token_to_id[v.id_to_token[static_cast<std::size_t>(i)]] = i;
    return v;
}

}  // namespace

Vocab build_vocab(const std::vector<std::vector<std::string>>& sentences, int min_count) {
    if (sentences.empty()) throw std::invalid_argument("build_vocab: empty corpus");
    std::map<std::string, long> counts;  // ordered map gives the lexicographic tiebreak
    for (const auto& sent : sentences)
        for (const auto& tok : sent) ++counts[tok];

    std::vector<std::pair<std::string, long>> ranked(counts.begin(), counts.end());
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });

    Vocab v = reserved_only();
    for (const auto& [tok, count] : ranked) {
        if (count < min_count) continue;
        v.token_to_id[tok] = v.size();
        v.id_to_token.push_back(tok);
    }
    return v;
}

Vocab synthetic_vocab(int size) {
    if (size <= Vocab::kReserved)
        throw std::invalid_argument("synthetic_vocab: size must exceed the reserved block of " +
                                    std::to_string(Vocab::kReserved));
    Vocab v = reserved_only();
    for (int i = Vocab::kReserved; i < size; ++i) {
        std::string tok = "w" + std::to_string(i);
        v.token_to_id[tok] = i;
        v.id_to_token.push_back(std::move(tok));
    }
    return v;
}

const char* to_string(TaskKind t) {
    switch (t) {
        case TaskKind::Copy: return "copy";
        case TaskKind::ToyDialogue: return "toy_dialogue";
        case TaskKind::ToyQa: return "toy_qa";
    }
    return "?";
}

TaskKind task_from_string(const std::string& s) {
    if (s == "copy") return TaskKind::Copy;
    if (s == "toy_dialogue") return TaskKind::ToyDialogue;
    if (s == "toy_qa") return TaskKind::ToyQa;
    throw std::invalid_argument("unknown task '" + s + "'");
}

void SyntheticTaskSpec::validate() const {
    if (vocab_size <= Vocab::kReserved + 1)
        throw std::invalid_argument("task spec: vocab_size too small");
    if (samples <= 0) throw std::invalid_argument("task spec: samples must be positive");
    if (min_sentence < 1 || max_sentence < min_sentence)
        throw std::invalid_argument("task spec: bad sentence length range");
    if (min_passage < 1 || max_passage < min_passage)
        throw std::invalid_argument("task spec: bad passage length range");
}

namespace {

std::vector<std::string> random_sentence(const SyntheticTaskSpec& spec, std::mt19937_64& rng) {
    std::uniform_int_distribution<int> len(spec.min_sentence, spec.max_sentence);
    std::uniform_int_distribution<int> tok(Vocab::kReserved, spec.vocab_size - 1);
    std::vector<std::string> out(static_cast<std::size_t>(len(rng)));
    for (auto& t : out) t = "w" + std::to_string(tok(rng));
    return out;
}

}  // namespace

std::vector<Dialogue> gen_copy_task(const SyntheticTaskSpec& spec) {
    spec.validate();
    std::mt19937_64 rng(spec.seed);
    std::vector<Dialogue> out;
    out.reserve(static_cast<std::size_t>(spec.samples));
    for (int i = 0; i < spec.samples; ++i) {
        Dialogue d;
        d.sentences.push_back(random_sentence(spec, rng));
        d.sentences.push_back(d.sentences.front());
        out.push_back(std::move(d));
    }
    return out;
}

std::vector<Dialogue> gen_toy_dialogue(const SyntheticTaskSpec& spec) {
    spec.validate();
    std::mt19937_64 rng(spec.seed);
    std::vector<Dialogue> out;
    out.reserve(static_cast<std::size_t>(spec.samples));
    for (int i = 0; i < spec.samples; ++i) {
        Dialogue d;
        auto first = random_sentence(spec, rng);
        auto second = first;
        std::reverse(second.begin(), second.end());
        d.sentences = {first, second, first};
        out.push_back(std::move(d));
    }
    return out;
}

std::vector<QaSample> gen_toy_qa(const SyntheticTaskSpec& spec) {
    spec.validate();
    std::mt19937_64 rng(spec.seed);
    std::uniform_int_distribution<int> len(spec.min_passage, spec.max_passage);
    std::uniform_int_distribution<int> tok(Vocab::kReserved, spec.vocab_size - 1);
    std::vector<QaSample> out;
    out.reserve(static_cast<std::size_t>(spec.samples));
    for (int i = 0; i < spec.samples; ++i) {
        QaSample s;
        const int n = len(rng);
        const int key = tok(rng);
        s.passage.resize(static_cast<std::size_t>(n));
        for (auto& t : s.passage) {
            int draw = tok(rng);
            while (draw == key) draw = tok(rng);  // keep the key unique
            t = "w" + std::to_string(draw);
        }
        std::uniform_int_distribution<int> pos(0, n - 1);
        const int at = pos(rng);
        s.passage[static_cast<std::size_t>(at)] = "w" + std::to_string(key);
        s.question = {"w" + std::to_string(key)};
        s.answer_start = at;
        s.answer_end = at;
        out.push_back(std::move(s));
    }
    return out;
}

namespace {

nlohmann::json parse_line(const std::string& line, const std::string& path, long line_no) {
    try {
        return nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(path + ":" + std::to_string(line_no) + ": malformed record: " + e.what());
    }
}

std::vector<std::string> string_list(const nlohmann::json& j, const std::string& path, long line_no) {
    if (!j.is_array())
        throw std::runtime_error(path + ":" + std::to_string(line_no) + ": expected a token array");
    std::vector<std::string> out;
    for (const auto& t : j) {
        if (!t.is_string())
            throw std::runtime_error(path + ":" + std::to_string(line_no) + ": token is not a string");
        out.push_back(t.get<std::string>());
    }
    return out;
}

}  // namespace

DialogueLoad load_dialogues(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_dialogues: cannot open '" + path + "'");
    DialogueLoad result;
    std::string line;
    long line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j = parse_line(line, path, line_no);
        if (!j.contains("sentences"))
            throw std::runtime_error(path + ":" + std::to_string(line_no) + ": missing 'sentences'");
        Dialogue d;
        for (const auto& s : j["sentences"]) d.sentences.push_back(string_list(s, path, line_no));
        if (d.sentences.size() < 2) {
            ++result.skipped_short;
            continue;
        }
        result.items.push_back(std::move(d));
    }
    return result;
}

void save_dialogues(const std::string& path, const std::vector<Dialogue>& items) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_dialogues: cannot open '" + path + "' for writing");
    for (const auto& d : items) {
        nlohmann::json j;
        j["sentences"] = d.sentences;
        out << j.dump() << '\n';
    }
    if (!out) throw std::runtime_error("save_dialogues: write failure on '" + path + "'");
}

std::vector<QaSample> load_qa(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_qa: cannot open '" + path + "'");
    std::vector<QaSample> out;
    std::string line;
    long line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j = parse_line(line, path, line_no);
        for (const char* key : {"passage", "question", "answer_start", "answer_end"})
            if (!j.contains(key))
                throw std::runtime_error(path + ":" + std::to_string(line_no) + ": missing '" + key + "'");
        QaSample s;
        s.passage = string_list(j["passage"], path, line_no);
        s.question = string_list(j["question"], path, line_no);
        s.answer_start = j["answer_start"].get<int>();
        s.answer_end = j["answer_end"].get<int>();
        if (s.passage.empty())
            throw std::runtime_error(path + ":" + std::to_string(line_no) + ": empty passage");
        if (s.answer_start < 0 || s.answer_start > s.answer_end ||
            s.answer_end >= static_cast<int>(s.passage.size()))
            throw std::runtime_error(path + ":" + std::to_string(line_no) + ": span [" +
                                     std::to_string(s.answer_start) + ", " + std::to_string(s.answer_end) +
                                     "] outside passage of " + std::to_string(s.passage.size()) + " words");
        out.push_back(std::move(s));
    }
    return out;
}

void save_qa(const std::string& path, const std::vector<QaSample>& items) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_qa: cannot open '" + path + "' for writing");
    for (const auto& s : items) {
        nlohmann::json j;
        j["passage"] = s.passage;
        j["question"] = s.question;
        j["answer_start"] = s.answer_start;
        j["answer_end"] = s.answer_end;
        out << j.dump() << '\n';
    }
    if (!out) throw std::runtime_error("save_qa: write failure on '" + path + "'");
}

DialogueBatch make_dialogue_batch(const Vocab& vocab, const std::vector<Dialogue>& items) {
    if (items.empty()) throw std::invalid_argument("make_dialogue_batch: empty batch");
    DialogueBatch b;
    b.batch = static_cast<int>(items.size());
    for (const auto& d : items) {
        b.sentences = std::max(b.sentences, static_cast<int>(d.sentences.size()));
        for (const auto& s : d.sentences)
            b.words = std::max(b.words, static_cast<int>(s.size()) + 2);  // bos + eos
    }
    b.ids.assign(static_cast<std::size_t>(b.batch) * b.sentences * b.words, Vocab::kPad);
    b.sentence_lengths.assign(static_cast<std::size_t>(b.batch) * b.sentences, 0);
    b.dialogue_lengths.assign(static_cast<std::size_t>(b.batch), 0);

    for (int row = 0; row < b.batch; ++row) {
        const Dialogue& d = items[static_cast<std::size_t>(row)];
        b.dialogue_lengths[static_cast<std::size_t>(row)] = static_cast<int>(d.sentences.size());
        for (int s = 0; s < static_cast<int>(d.sentences.size()); ++s) {
            const auto& sent = d.sentences[static_cast<std::size_t>(s)];
            const std::size_t base = (static_cast<std::size_t>(row) * b.sentences + s) * b.words;
            b.ids[base] = Vocab::kBos;
            for (int t = 0; t < static_cast<int>(sent.size()); ++t)
                b.ids[base + 1 + t] = vocab.id(sent[static_cast<std::size_t>(t)]);
            b.ids[base + 1 + sent.size()] = Vocab::kEos;
            b.sentence_lengths[static_cast<std::size_t>(row) * b.sentences + s] =
                static_cast<int>(sent.size()) + 2;
        }
    }
    return b;
}

std::vector<Dialogue> detokenize(const Vocab& vocab, const DialogueBatch& b) {
    std::vector<Dialogue> out(static_cast<std::size_t>(b.batch));
    for (int row = 0; row < b.batch; ++row) {
        for (int s = 0; s < b.dialogue_lengths[static_cast<std::size_t>(row)]; ++s) {
            std::vector<std::string> sent;
            const int len = b.sentence_length(row, s);
            for (int t = 1; t + 1 < len; ++t) sent.push_back(vocab.token(b.id(row, s, t)));
            out[static_cast<std::size_t>(row)].sentences.push_back(std::move(sent));
        }
    }
    return out;
}

Vocab build_char_vocab(const std::vector<QaSample>& samples) {
    std::vector<std::vector<std::string>> chars;
    for (const auto& s : samples) {
        for (const auto& tok : s.passage) {
            std::vector<std::string> cs;
            for (char c : tok) cs.emplace_back(1, c);
            chars.push_back(std::move(cs));
        }
        for (const auto& tok : s.question) {
            std::vector<std::string> cs;
            for (char c : tok) cs.emplace_back(1, c);
            chars.push_back(std::move(cs));
        }
    }
    return build_vocab(chars, 1);
}

namespace {

void fill_chars(std::vector<int>& char_ids, std::vector<int>& char_lengths, const Vocab& chars,
                const std::vector<std::string>& words, int row, int max_words, int max_chars) {
    for (int i = 0; i < static_cast<int>(words.size()); ++i) {
        const std::string& tok = words[static_cast<std::size_t>(i)];
        const std::size_t base = (static_cast<std::size_t>(row) * max_words + i) * max_chars;
        const int n = std::min<int>(static_cast<int>(tok.size()), max_chars);
        for (int c = 0; c < n; ++c) char_ids[base + c] = chars.id(std::string(1, tok[static_cast<std::size_t>(c)]));
        char_lengths[static_cast<std::size_t>(row) * max_words + i] = n;
    }
}

}  // namespace

SpanBatch make_span_batch(const Vocab& words, const Vocab& chars, const std::vector<QaSample>& items,
                          int max_word_chars) {
    if (items.empty()) throw std::invalid_argument("make_span_batch: empty batch");
    if (max_word_chars < 1) throw std::invalid_argument("make_span_batch: max_word_chars must be >= 1");
    SpanBatch b;
    b.batch = static_cast<int>(items.size());
    b.word_chars = max_word_chars;
    for (const auto& s : items) {
        if (s.passage.empty()) throw std::invalid_argument("make_span_batch: empty passage");
        if (s.question.empty()) throw std::invalid_argument("make_span_batch: empty question");
        b.passage_words = std::max(b.passage_words, static_cast<int>(s.passage.size()));
        b.question_words = std::max(b.question_words, static_cast<int>(s.question.size()));
    }
    b.passage_ids.assign(static_cast<std::size_t>(b.batch) * b.passage_words, Vocab::kPad);
    b.question_ids.assign(static_cast<std::size_t>(b.batch) * b.question_words, Vocab::kPad);
    b.passage_lengths.assign(static_cast<std::size_t>(b.batch), 0);
    b.question_lengths.assign(static_cast<std::size_t>(b.batch), 0);
    b.passage_char_ids.assign(static_cast<std::size_t>(b.batch) * b.passage_words * max_word_chars, Vocab::kPad);
    b.question_char_ids.assign(static_cast<std::size_t>(b.batch) * b.question_words * max_word_chars, Vocab::kPad);
    b.passage_char_lengths.assign(static_cast<std::size_t>(b.batch) * b.passage_words, 0);
    b.question_char_lengths.assign(static_cast<std::size_t>(b.batch) * b.question_words, 0);
    b.span_start.assign(static_cast<std::size_t>(b.batch), 0);
    b.span_end.assign(static_cast<std::size_t>(b.batch), 0);

    for (int row = 0; row < b.batch; ++row) {
        const QaSample& s = items[static_cast<std::size_t>(row)];
        if (s.answer_start < 0 || s.answer_start > s.answer_end ||
            s.answer_end >= static_cast<int>(s.passage.size()))
            throw std::invalid_argument("make_span_batch: gold span [" + std::to_string(s.answer_start) +
                                        ", " + std::to_string(s.answer_end) + "] outside passage of " +
                                        std::to_string(s.passage.size()) + " words");
        b.passage_lengths[static_cast<std::size_t>(row)] = static_cast<int>(s.passage.size());
        b.question_lengths[static_cast<std::size_t>(row)] = static_cast<int>(s.question.size());
        for (int i = 0; i < static_cast<int>(s.passage.size()); ++i)
            b.passage_ids[static_cast<std::size_t>(row) * b.passage_words + i] =
                words.id(s.passage[static_cast<std::size_t>(i)]);
        for (int i = 0; i < static_cast<int>(s.question.size()); ++i)
            b.question_ids[static_cast<std::size_t>(row) * b.question_words + i] =
                words.id(s.question[static_cast<std::size_t>(i)]);
        fill_chars(b.passage_char_ids, b.passage_char_lengths, chars, s.passage, row, b.passage_words,
                   max_word_chars);
        fill_chars(b.question_char_ids, b.question_char_lengths, chars, s.question, row,
                   b.question_words, max_word_chars);
        b.span_start[static_cast<std::size_t>(row)] = s.answer_start;
        b.span_end[static_cast<std::size_t>(row)] = s.answer_end;
    }
    return b;
}

std::vector<std::vector<int>> batch_indices(int n, int batch_size, std::uint64_t shuffle_seed) {
    if (batch_size < 1) throw std::invalid_argument("batch_indices: batch_size must be >= 1");
    if (n < 0) throw std::invalid_argument("batch_indices: negative sample count");
    std::vector<int> order(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    std::mt19937_64 rng(shuffle_seed);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::vector<int>> out;
    for (int at = 0; at < n; at += batch_size) {
        const int end = std::min(n, at + batch_size);
        out.emplace_back(order.begin() + at, order.begin() + end);
    }
    return out;
}

}  // namespace rnnkit

// Quality metrics: perplexity / word error rate for the language-model side,
// exact match / token-overlap F1 for span extraction.

#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <stdexcept>
#include <vector>

#include "rnnkit/tensor.hpp"

namespace rnnkit {

struct LmMetrics {
    double ppl = 0.0;
    double err_rate = 0.0;
    double mean_nll = 0.0;
    long tokens = 0;
};

// Accumulates masked NLL and argmax errors over one logits block. Summation
// is in double regardless of the tensor precision.
template <typename S>
void accumulate_lm(const Tensor<S>& logits, const std::vector<int>& targets,
                   const std::vector<std::uint8_t>& mask, double& nll_sum, long& errors, long& tokens) {
    const int n = logits.dim(0), v = logits.dim(1);
    if (targets.size() != static_cast<std::size_t>(n) || mask.size() != static_cast<std::size_t>(n))
        throw std::invalid_argument("accumulate_lm: targets/mask size mismatch");
    auto x = logits.data();
    for (int i = 0; i < n; ++i) {
        if (!mask[static_cast<std::size_t>(i)]) continue;
        const std::size_t base = static_cast<std::size_t>(i) * v;
        double mx = static_cast<double>(x[base]);
        int arg = 0;
        for (int j = 1; j < v; ++j)
            if (static_cast<double>(x[base + j]) > mx) {
                mx = static_cast<double>(x[base + j]);
                arg = j;
            }
        double z = 0;
        for (int j = 0; j < v; ++j) z += std::exp(static_cast<double>(x[base + j]) - mx);
        nll_sum += mx + std::log(z) - static_cast<double>(x[base + targets[static_cast<std::size_t>(i)]]);
        errors += arg != targets[static_cast<std::size_t>(i)] ? 1 : 0;
        ++tokens;
    }
}

inline LmMetrics finish_lm(double nll_sum, long errors, long tokens) {
    if (tokens == 0) throw std::invalid_argument("lm metrics: no unmasked target tokens");
    LmMetrics m;
    m.tokens = tokens;
    m.mean_nll = nll_sum / static_cast<double>(tokens);
    m.ppl = std::exp(m.mean_nll);
    m.err_rate = static_cast<double>(errors) / static_cast<double>(tokens);
    return m;
}

struct SpanMetrics {
    double em = 0.0;
    double f1 = 0.0;
    long samples = 0;
};

// Token-multiset overlap F1 between two spans of the same passage.
inline double span_f1(std::span<const int> passage, int pred_start, int pred_end, int gold_start,
                      int gold_end) {
    std::map<int, int> pred, gold;
    for (int i = pred_start; i <= pred_end; ++i) ++pred[passage[static_cast<std::size_t>(i)]];
    for (int i = gold_start; i <= gold_end; ++i) ++gold[passage[static_cast<std::size_t>(i)]];
    long overlap = 0;
    for (const auto& [tok, n] : pred) {
        auto it = gold.find(tok);
        if (it != gold.end()) overlap += std::min(n, it->second);
    }
    if (overlap == 0) return 0.0;
    const double precision = static_cast<double>(overlap) / (pred_end - pred_start + 1);
    const double recall = static_cast<double>(overlap) / (gold_end - gold_start + 1);
    return 2.0 * precision * recall / (precision + recall);
}

}  // namespace rnnkit

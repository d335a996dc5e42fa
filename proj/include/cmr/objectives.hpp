#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "cmr/errors.hpp"
#include "cmr/tensor.hpp"

namespace cmr {

enum class GenReduction { Mean, Sum };

struct LossOptions {
    double tau = 0.1;
    double lambda = 2.0;
    bool include_positive_in_denominator = true;  // standard InfoNCE form
    GenReduction gen_reduction = GenReduction::Mean;
};

struct LossBreakdown {
    double total = 0;
    double gen = 0;
    double cl = 0;
    double tau = 0;
    double lambda = 0;
};

// Cosine similarity of two (unit-norm) embedding vectors outside any tape.
inline double similarity(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw ShapeError("similarity: length mismatch");
    double s = 0;
    for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

// InfoNCE over one query/positive and any number of negatives, all [1,d]
// embedding nodes. Log-sum-exp with max subtraction; with zero negatives the
// loss is exactly 0.
template <typename T>
int info_nce(Tape<T>& tape, int query, int positive, const std::vector<int>& negatives, const LossOptions& opt) {
    if (opt.tau <= 0) throw UsageError("temperature must be > 0");
    if (negatives.empty()) return tape.constant(Tensor<T>(1, 1, T(0)));

    std::vector<int> sims;  // positive first
    sims.push_back(tape.dot(query, positive));
    for (int n : negatives) sims.push_back(tape.dot(query, n));
    int z = tape.scale(tape.concat_rows(sims), T(1.0 / opt.tau));

    int denom_start = opt.include_positive_in_denominator ? 0 : 1;
    int denom_len = static_cast<int>(sims.size()) - denom_start;
    int zd = tape.slice_rows(z, denom_start, denom_len);
    T mx = *std::max_element(tape.value(zd).data.begin(), tape.value(zd).data.end());
    int lse = tape.add_scalar(tape.log(tape.sum(tape.exp(tape.add_scalar(zd, -mx)))), mx);
    return tape.add(lse, tape.scale(tape.slice_rows(z, 0, 1), T(-1)));
}

// Cross-entropy of gold ids under the logits, pad targets masked out.
template <typename T>
int generation_loss(Tape<T>& tape, int logits, const std::vector<int>& gold_ids, const LossOptions& opt) {
    const auto& L = tape.value(logits);
    if (static_cast<int>(gold_ids.size()) != L.rows())
        throw ShapeError("generation_loss: " + std::to_string(gold_ids.size()) + " gold ids vs " +
                         std::to_string(L.rows()) + " logit rows");
    std::vector<std::pair<int, int>> picks;
    for (size_t t = 0; t < gold_ids.size(); ++t) {
        if (gold_ids[t] == 0) continue;  // pad
        if (gold_ids[t] < 0 || gold_ids[t] >= L.cols())
            throw ShapeError("generation_loss: gold id " + std::to_string(gold_ids[t]) + " out of vocab");
        picks.push_back({static_cast<int>(t), gold_ids[t]});
    }
    if (picks.empty()) throw ShapeError("generation_loss: no non-pad targets");
    int logp = tape.log_softmax_rows(logits);
    int picked = tape.mean_picked(logp, picks);
    T s = opt.gen_reduction == GenReduction::Mean ? T(-1) : T(-static_cast<double>(picks.size()));
    return tape.scale(picked, s);
}

template <typename T>
int combined_loss(Tape<T>& tape, int gen, int cl, double lambda) {
    return tape.add(gen, tape.scale(cl, static_cast<T>(lambda)));
}

}  // namespace cmr

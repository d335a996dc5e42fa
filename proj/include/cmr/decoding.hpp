#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "cmr/errors.hpp"
#include "cmr/model.hpp"
#include "cmr/tokenizer.hpp"

namespace cmr {

struct Hypothesis {
    std::vector<int> ids;  // generated tokens, including a trailing eos when emitted
    double logprob = 0.0;
    bool finished = false;

    double normalized_score(double length_penalty) const {
        return logprob / std::pow(static_cast<double>(std::max<size_t>(ids.size(), 1)), length_penalty);
    }
};

struct BeamConfig {
    int width = 4;
    int max_len = 24;
    double length_penalty = 0.7;
    int eos_id = 3;   // Vocab::kEos; -1 disables eos termination
    int skip_id = 0;  // Vocab::kPad; -1 disables
};

// Beam search over an arbitrary next-token scorer. score_fn receives the
// generated prefix (without bos) and returns log-probabilities over the
// vocabulary. Deterministic; ties broken by token id. Result is sorted
// descending by logprob / len^alpha.
template <typename ScoreFn>
std::vector<Hypothesis> beam_search_fn(ScoreFn&& score_fn, const BeamConfig& beam) {
    if (beam.width < 1) throw UsageError("beam width must be >= 1");
    if (beam.max_len < 1) throw UsageError("beam max_len must be >= 1");

    std::vector<Hypothesis> live{Hypothesis{}};
    std::vector<Hypothesis> finished;

    for (int step = 0; step < beam.max_len && !live.empty(); ++step) {
        struct Candidate {
            size_t parent;
            int token;
            double logprob;
        };
        std::vector<Candidate> candidates;
        for (size_t b = 0; b < live.size(); ++b) {
            std::vector<double> logp = score_fn(live[b].ids);
            for (int v = 0; v < static_cast<int>(logp.size()); ++v) {
                if (v == beam.skip_id) continue;
                candidates.push_back({b, v, live[b].logprob + logp[v]});
            }
        }
        std::stable_sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
            if (a.logprob != b.logprob) return a.logprob > b.logprob;
            if (a.parent != b.parent) return a.parent < b.parent;
            return a.token < b.token;
        });
        std::vector<Hypothesis> next;
        int selected = 0;
        for (const auto& c : candidates) {
            if (selected >= beam.width) break;
            Hypothesis h = live[c.parent];
            h.ids.push_back(c.token);
            h.logprob = c.logprob;
            if (c.token == beam.eos_id || static_cast<int>(h.ids.size()) >= beam.max_len) {
                h.finished = true;
                finished.push_back(std::move(h));
            } else {
                next.push_back(std::move(h));
            }
            ++selected;
        }
        live = std::move(next);
        if (static_cast<int>(finished.size()) >= beam.width) break;
    }
    for (auto& h : live) {
        h.finished = true;
        finished.push_back(std::move(h));
    }
    std::stable_sort(finished.begin(), finished.end(), [&](const Hypothesis& a, const Hypothesis& b) {
        double sa = a.normalized_score(beam.length_penalty);
        double sb = b.normalized_score(beam.length_penalty);
        if (sa != sb) return sa > sb;
        return a.ids < b.ids;
    });
    return finished;
}

template <typename T>
std::vector<Hypothesis> beam_search(const std::vector<int>& context_ids, const ModelConfig& cfg,
                                    Parameters<T>& params, const BeamConfig& beam) {
    auto score_fn = [&](const std::vector<int>& generated) {
        std::vector<int> prefix{Vocab::kBos};
        prefix.insert(prefix.end(), generated.begin(), generated.end());
        Tape<T> tape;
        int logits = generation_forward(tape, context_ids, prefix, cfg, params);
        int logp = tape.log_softmax_rows(logits);
        const auto& L = tape.value(logp);
        int last = L.rows() - 1;
        std::vector<double> out(L.cols());
        for (int v = 0; v < L.cols(); ++v) out[v] = static_cast<double>(L.at(last, v));
        return out;
    };
    return beam_search_fn(score_fn, beam);
}

inline std::vector<int> strip_eos(std::vector<int> ids) {
    while (!ids.empty() && ids.back() == Vocab::kEos) ids.pop_back();
    return ids;
}

// Top-B hypotheses as negative utterances, skipping exact matches with the
// gold response; shortfalls are recorded in `deficit`.
inline std::vector<std::vector<int>> select_beam_negatives(const std::vector<Hypothesis>& hypotheses,
                                                           const std::vector<int>& gold_ids, int count,
                                                           int* deficit = nullptr) {
    std::vector<int> gold = strip_eos(gold_ids);
    std::vector<std::vector<int>> out;
    for (const auto& h : hypotheses) {
        if (static_cast<int>(out.size()) >= count) break;
        std::vector<int> ids = strip_eos(h.ids);
        if (ids.empty() || ids == gold) continue;
        out.push_back(std::move(ids));
    }
    if (deficit && static_cast<int>(out.size()) < count) *deficit += count - static_cast<int>(out.size());
    return out;
}

}  // namespace cmr

#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cmr/corpus.hpp"
#include "cmr/decoding.hpp"
#include "cmr/metrics.hpp"
#include "cmr/model.hpp"
#include "cmr/tokenizer.hpp"
#include "cmr/trainer.hpp"

namespace cmr {

struct EvalFilters {
    std::optional<int> min_speakers;
    std::optional<int> max_speakers;
    // keep only conversations whose target speaker has at most this many
    // training responses (rare-speaker subset); requires train_frequency
    std::optional<int> max_target_speaker_frequency;
    std::map<std::string, int> train_frequency;
};

std::map<std::string, int> speaker_response_frequency(const std::vector<Conversation>& train_corpus);

std::vector<Conversation> apply_filters(const std::vector<Conversation>& corpus, const EvalFilters& filters);

struct EvalSettings {
    BeamConfig beam;            // width 1 = greedy
    bool embedding_diagnostics = false;
};

struct PerSampleScore {
    std::string conv_id;
    double f1 = 0;
    double rouge_l = 0;
    std::string hypothesis;
};

MetricsReport evaluate(Checkpoint& ckpt, const std::vector<Conversation>& test_corpus, const Vocab& vocab,
                       const EvalSettings& settings, const EvalFilters& filters = {},
                       std::vector<PerSampleScore>* per_sample = nullptr);

// Per-speaker utterance embeddings for the separation diagnostic; only
// speakers with >= 2 usable utterances participate.
EmbeddingDiagnostics embedding_diagnostics(Checkpoint& ckpt, const std::vector<Conversation>& corpus,
                                           const Vocab& vocab);

std::vector<std::vector<double>> utterance_embeddings_by_speaker(Checkpoint& ckpt,
                                                                 const std::vector<Conversation>& corpus,
                                                                 const Vocab& vocab,
                                                                 std::vector<std::string>* speakers_out);

}  // namespace cmr

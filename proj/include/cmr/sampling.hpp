#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "cmr/corpus.hpp"
#include "cmr/tokenizer.hpp"

namespace cmr {

enum class NegativeSource { SameConversation, InBatch, PreviousUtterance, BeamSearch };

const char* to_string(NegativeSource s);

struct NegativeSample {
    std::vector<int> ids;
    NegativeSource source;
};

struct ContrastiveSample {
    std::vector<int> query_ids;     // utterance ids (Stage I) or serialized context (Stage II)
    std::vector<int> positive_ids;
    std::vector<NegativeSample> negatives;
    std::string conv_id;
    std::string speaker;  // query speaker (Stage I) / target speaker (Stage II)

    std::map<NegativeSource, int> source_histogram() const;
};

struct SamplingSpec {
    // Stage I: T same-conversation negatives, N in-batch negatives.
    int stage1_same_conv = 4;
    int stage1_in_batch = 3;
    // Stage II: P previous-utterance, T same-conversation, N in-batch, B beam.
    int stage2_previous = 1;
    int stage2_same_conv = 2;
    int stage2_in_batch = 3;
    int stage2_beam = 2;

    void validate() const;
};

struct SamplerStats {
    int emitted = 0;
    int skipped_no_query = 0;      // Stage I: no speaker with two usable utterances
    int same_conv_deficit = 0;     // negatives short of the requested T
    int in_batch_deficit = 0;
    int previous_missing = 0;      // Stage II: target speaker absent from context
    int beam_deficit = 0;

    SamplerStats& operator+=(const SamplerStats& o);
    std::string to_json() const;
};

// Dull-utterance rule shared with corpus cleaning: utterances over the
// bad-word ratio threshold never serve as query, positive, or negative.
struct DullFilter {
    const std::set<std::string>* lexicon;
    double max_bad_ratio;

    DullFilter();
    bool is_dull(const std::vector<std::string>& tokens) const;
};

std::vector<ContrastiveSample> stage1_samples(const std::vector<Conversation>& batch, const Vocab& vocab,
                                              const SamplingSpec& spec, const DullFilter& dull,
                                              std::mt19937_64& rng, SamplerStats& stats);

ContrastiveSample stage2_samples(const Conversation& conv, const std::vector<std::vector<int>>& beam_negatives,
                                 const std::vector<Conversation>& batch, const Vocab& vocab, int max_len,
                                 const SamplingSpec& spec, const DullFilter& dull, std::mt19937_64& rng,
                                 SamplerStats& stats);

}  // namespace cmr

#include "cmr/sampling.hpp"

#include <algorithm>

#include <json.hpp>

#include "cmr/errors.hpp"

namespace cmr {

const char* to_string(NegativeSource s) {
    switch (s) {
        case NegativeSource::SameConversation: return "same_conversation";
        case NegativeSource::InBatch: return "in_batch";
        case NegativeSource::PreviousUtterance: return "previous_utterance";
        case NegativeSource::BeamSearch: return "beam_search";
    }
    return "?";
}

std::map<NegativeSource, int> ContrastiveSample::source_histogram() const {
    std::map<NegativeSource, int> h;
    for (const auto& n : negatives) h[n.source]++;
    return h;
}

void SamplingSpec::validate() const {
    if (stage1_same_conv < 0 || stage1_in_batch < 0 || stage2_previous < 0 || stage2_same_conv < 0 ||
        stage2_in_batch < 0 || stage2_beam < 0)
        throw UsageError("negative sample counts must be >= 0");
}

SamplerStats& SamplerStats::operator+=(const SamplerStats& o) {
    emitted += o.emitted;
    skipped_no_query += o.skipped_no_query;
    same_conv_deficit += o.same_conv_deficit;
    in_batch_deficit += o.in_batch_deficit;
    previous_missing += o.previous_missing;
    beam_deficit += o.beam_deficit;
    return *this;
}

std::string SamplerStats::to_json() const {
    nlohmann::json j = {{"emitted", emitted},
                        {"skipped_no_query", skipped_no_query},
                        {"same_conv_deficit", same_conv_deficit},
                        {"in_batch_deficit", in_batch_deficit},
                        {"previous_missing", previous_missing},
                        {"beam_deficit", beam_deficit}};
    return j.dump();
}

DullFilter::DullFilter() : lexicon(&default_bad_words()), max_bad_ratio(0.30) {}

bool DullFilter::is_dull(const std::vector<std::string>& tokens) const {
    return bad_word_ratio(tokens, *lexicon) > max_bad_ratio;
}

namespace {

struct PoolEntry {
    const Utterance* utt;
    std::vector<int> ids;
};

std::vector<int> encode_utt(const Utterance& u, const Vocab& vocab) {
    return vocab.encode(u.tokens.empty() ? tokenize(u.text) : u.tokens);
}

// Sample k pool indices without replacement, excluding entries whose ids
// equal the positive (a negative must never textually match the positive).
std::vector<size_t> draw(const std::vector<PoolEntry>& pool, const std::vector<int>& positive_ids, int k,
                         std::mt19937_64& rng, int& deficit) {
    std::vector<size_t> candidates;
    for (size_t i = 0; i < pool.size(); ++i)
        if (pool[i].ids != positive_ids) candidates.push_back(i);
    std::shuffle(candidates.begin(), candidates.end(), rng);
    if (static_cast<int>(candidates.size()) < k) {
        deficit += k - static_cast<int>(candidates.size());
        return candidates;
    }
    candidates.resize(k);
    return candidates;
}

}  // namespace

std::vector<ContrastiveSample> stage1_samples(const std::vector<Conversation>& batch, const Vocab& vocab,
                                              const SamplingSpec& spec, const DullFilter& dull,
                                              std::mt19937_64& rng, SamplerStats& stats) {
    spec.validate();
    if (batch.empty()) throw UsageError("stage1_samples: empty batch");

    struct ConvUtts {
        std::vector<PoolEntry> usable;  // non-dull utterances, context + response
        std::vector<const Utterance*> all;
    };
    std::vector<ConvUtts> per_conv(batch.size());
    for (size_t ci = 0; ci < batch.size(); ++ci) {
        auto consider = [&](const Utterance& u) {
            const auto& toks = u.tokens;
            if (!dull.is_dull(toks)) per_conv[ci].usable.push_back({&u, encode_utt(u, vocab)});
        };
        for (const auto& u : batch[ci].context) consider(u);
        consider(batch[ci].response);
    }

    std::vector<ContrastiveSample> out;
    for (size_t ci = 0; ci < batch.size(); ++ci) {
        const auto& usable = per_conv[ci].usable;
        std::map<std::string, int> per_speaker;
        for (const auto& e : usable) per_speaker[e.utt->speaker]++;
        std::vector<size_t> query_candidates;
        for (size_t i = 0; i < usable.size(); ++i)
            if (per_speaker[usable[i].utt->speaker] >= 2) query_candidates.push_back(i);
        if (query_candidates.empty()) {
            stats.skipped_no_query++;
            continue;
        }
        size_t qi = query_candidates[std::uniform_int_distribution<size_t>(0, query_candidates.size() - 1)(rng)];
        const auto& q = usable[qi];

        std::vector<size_t> positives;
        for (size_t i = 0; i < usable.size(); ++i)
            if (i != qi && usable[i].utt->speaker == q.utt->speaker) positives.push_back(i);
        size_t pi = positives[std::uniform_int_distribution<size_t>(0, positives.size() - 1)(rng)];
        const auto& pos = usable[pi];

        ContrastiveSample sample;
        sample.conv_id = batch[ci].id;
        sample.speaker = q.utt->speaker;
        sample.query_ids = q.ids;
        sample.positive_ids = pos.ids;

        std::vector<PoolEntry> same_conv;
        for (const auto& e : usable)
            if (e.utt->speaker != q.utt->speaker) same_conv.push_back(e);
        for (size_t i : draw(same_conv, sample.positive_ids, spec.stage1_same_conv, rng, stats.same_conv_deficit))
            sample.negatives.push_back({same_conv[i].ids, NegativeSource::SameConversation});

        std::vector<PoolEntry> in_batch;
        for (size_t cj = 0; cj < batch.size(); ++cj) {
            if (cj == ci) continue;
            for (const auto& e : per_conv[cj].usable) in_batch.push_back(e);
        }
        for (size_t i : draw(in_batch, sample.positive_ids, spec.stage1_in_batch, rng, stats.in_batch_deficit))
            sample.negatives.push_back({in_batch[i].ids, NegativeSource::InBatch});

        stats.emitted++;
        out.push_back(std::move(sample));
    }
    return out;
}

ContrastiveSample stage2_samples(const Conversation& conv, const std::vector<std::vector<int>>& beam_negatives,
                                 const std::vector<Conversation>& batch, const Vocab& vocab, int max_len,
                                 const SamplingSpec& spec, const DullFilter& dull, std::mt19937_64& rng,
                                 SamplerStats& stats) {
    spec.validate();
    ContrastiveSample sample;
    sample.conv_id = conv.id;
    sample.speaker = conv.target_speaker();
    sample.query_ids = serialize_context(conv, vocab, max_len);
    sample.positive_ids = encode_utt(conv.response, vocab);

    if (spec.stage2_previous > 0) {
        // most recent non-dull context utterance by the target speaker
        const Utterance* prev = nullptr;
        for (const auto& u : conv.context)
            if (u.speaker == conv.target_speaker() && !dull.is_dull(u.tokens)) prev = &u;
        std::vector<int> ids = prev ? encode_utt(*prev, vocab) : std::vector<int>{};
        if (prev && ids != sample.positive_ids) {
            sample.negatives.push_back({std::move(ids), NegativeSource::PreviousUtterance});
        } else {
            stats.previous_missing++;
        }
    }

    std::vector<PoolEntry> same_conv;
    for (const auto& u : conv.context)
        if (u.speaker != conv.target_speaker() && !dull.is_dull(u.tokens))
            same_conv.push_back({&u, encode_utt(u, vocab)});
    for (size_t i : draw(same_conv, sample.positive_ids, spec.stage2_same_conv, rng, stats.same_conv_deficit))
        sample.negatives.push_back({same_conv[i].ids, NegativeSource::SameConversation});

    // In-batch negatives are the other conversations' gold responses: they
    // share the positive's text role, which makes them harder negatives.
    std::vector<PoolEntry> in_batch;
    for (const auto& other : batch) {
        if (other.id == conv.id) continue;
        in_batch.push_back({&other.response, encode_utt(other.response, vocab)});
    }
    for (size_t i : draw(in_batch, sample.positive_ids, spec.stage2_in_batch, rng, stats.in_batch_deficit))
        sample.negatives.push_back({in_batch[i].ids, NegativeSource::InBatch});

    int beams_taken = 0;
    for (const auto& ids : beam_negatives) {
        if (beams_taken >= spec.stage2_beam) break;
        if (ids.empty() || ids == sample.positive_ids) continue;
        sample.negatives.push_back({ids, NegativeSource::BeamSearch});
        ++beams_taken;
    }
    if (beams_taken < spec.stage2_beam) stats.beam_deficit += spec.stage2_beam - beams_taken;

    stats.emitted++;
    return sample;
}

}  // namespace cmr

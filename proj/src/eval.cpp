#include "cmr/eval.hpp"

#include <algorithm>
#include <map>

#include "cmr/errors.hpp"

namespace cmr {

std::map<std::string, int> speaker_response_frequency(const std::vector<Conversation>& train_corpus) {
    std::map<std::string, int> freq;
    for (const auto& c : train_corpus) freq[c.target_speaker()]++;
    return freq;
}

std::vector<Conversation> apply_filters(const std::vector<Conversation>& corpus, const EvalFilters& filters) {
    std::vector<Conversation> out;
    for (const auto& c : corpus) {
        int m = c.num_speakers();
        if (filters.min_speakers && m < *filters.min_speakers) continue;
        if (filters.max_speakers && m > *filters.max_speakers) continue;
        if (filters.max_target_speaker_frequency) {
            auto it = filters.train_frequency.find(c.target_speaker());
            int f = it == filters.train_frequency.end() ? 0 : it->second;
            if (f > *filters.max_target_speaker_frequency) continue;
        }
        out.push_back(c);
    }
    return out;
}

namespace {

std::vector<std::string> hypothesis_tokens(const std::vector<int>& ids, const Vocab& vocab) {
    std::vector<std::string> toks;
    for (int id : strip_eos(ids)) {
        if (id < Vocab::kNumSpecials) continue;
        const std::string& t = vocab.token_of(id);
        if (t.rfind("<spk:", 0) == 0) continue;
        toks.push_back(t);
    }
    return toks;
}

}  // namespace

MetricsReport evaluate(Checkpoint& ckpt, const std::vector<Conversation>& test_corpus, const Vocab& vocab,
                       const EvalSettings& settings, const EvalFilters& filters,
                       std::vector<PerSampleScore>* per_sample) {
    auto convs = apply_filters(test_corpus, filters);
    MetricsReport report;
    report.sample_count = static_cast<int>(convs.size());
    if (convs.empty()) return report;

    std::vector<std::vector<std::string>> hyps, refs;
    double f1_sum = 0, rouge_sum = 0;
    for (const auto& conv : convs) {
        auto ctx = serialize_context(conv, vocab, ckpt.model.max_len);
        auto hypotheses = beam_search(ctx, ckpt.model, ckpt.params, settings.beam);
        std::vector<std::string> hyp =
            hypotheses.empty() ? std::vector<std::string>{} : hypothesis_tokens(hypotheses.front().ids, vocab);
        std::vector<std::string> ref = conv.response.tokens.empty() ? tokenize(conv.response.text) : conv.response.tokens;
        double f1 = token_f1(hyp, ref);
        double rl = rouge_l(hyp, ref);
        f1_sum += f1;
        rouge_sum += rl;
        if (per_sample) per_sample->push_back({conv.id, f1 * 100.0, rl * 100.0, join_tokens(hyp)});
        hyps.push_back(std::move(hyp));
        refs.push_back(std::move(ref));
    }
    report.f1 = 100.0 * f1_sum / convs.size();
    report.rouge_l = 100.0 * rouge_sum / convs.size();
    report.bleu1 = 100.0 * bleu_n(hyps, refs, 1);
    report.bleu2 = 100.0 * bleu_n(hyps, refs, 2);
    report.bleu3 = 100.0 * bleu_n(hyps, refs, 3);
    if (settings.embedding_diagnostics) report.embedding = embedding_diagnostics(ckpt, convs, vocab);
    return report;
}

std::vector<std::vector<double>> utterance_embeddings_by_speaker(Checkpoint& ckpt,
                                                                 const std::vector<Conversation>& corpus,
                                                                 const Vocab& vocab,
                                                                 std::vector<std::string>* speakers_out) {
    std::vector<std::vector<double>> embeddings;
    for (const auto& conv : corpus) {
        auto embed_one = [&](const Utterance& u) {
            auto ids = vocab.encode(u.tokens.empty() ? tokenize(u.text) : u.tokens);
            if (ids.empty()) return;
            if (static_cast<int>(ids.size()) > ckpt.model.max_len) ids.resize(ckpt.model.max_len);
            Tape<float> tape;
            int e = embed_utterance(tape, ids, ckpt.model, ckpt.params);
            const auto& v = tape.value(e);
            embeddings.emplace_back(v.data.begin(), v.data.end());
            if (speakers_out) speakers_out->push_back(u.speaker);
        };
        for (const auto& u : conv.context) embed_one(u);
        embed_one(conv.response);
    }
    return embeddings;
}

EmbeddingDiagnostics embedding_diagnostics(Checkpoint& ckpt, const std::vector<Conversation>& corpus,
                                           const Vocab& vocab) {
    std::vector<std::string> speakers;
    auto embeddings = utterance_embeddings_by_speaker(ckpt, corpus, vocab, &speakers);
    std::map<std::string, std::vector<std::vector<double>>> by_speaker;
    for (size_t i = 0; i < embeddings.size(); ++i) by_speaker[speakers[i]].push_back(embeddings[i]);
    std::vector<std::vector<std::vector<double>>> groups;
    for (auto& [spk, g] : by_speaker)
        if (g.size() >= 2) groups.push_back(std::move(g));
    if (groups.size() < 2) throw DataError("embedding diagnostics need >= 2 speakers with >= 2 utterances each");
    return speaker_separation(groups);
}

}  // namespace cmr

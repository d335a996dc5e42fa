#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace cmr {

struct Utterance {
    std::string speaker;
    std::string text;
    std::vector<std::string> tokens;  // filled by tokenize_corpus
};

struct Conversation {
    std::string id;
    std::vector<Utterance> context;  // the dialogue, in order
    Utterance response;              // gold response; its speaker is the target speaker

    const std::string& target_speaker() const { return response.speaker; }
    int num_speakers() const;  // distinct over context + response
    int total_tokens() const;
};

// Appendix-style cleaning thresholds. Defaults match the Friends setting;
// Ubuntu-style corpora set min_utterances=6 and min_total_tokens=512.
struct CleaningRules {
    std::set<std::string> bad_word_lexicon;  // lowercase tokens
    double max_bad_ratio = 0.30;
    int min_speakers = 3;
    int min_utterances = 0;
    int min_total_tokens = 0;

    CleaningRules();
};

struct CleaningReport {
    int kept = 0;
    std::map<std::string, int> removed_by_rule;
    std::map<std::string, std::vector<std::string>> removed_ids;

    int total_removed() const;
};

const std::set<std::string>& default_bad_words();

std::vector<Conversation> parse_corpus(const std::string& path);
std::vector<Conversation> parse_corpus_lines(const std::vector<std::string>& lines);
void write_corpus(const std::vector<Conversation>& convs, const std::string& path);
std::string conversation_to_json_line(const Conversation& conv);

double bad_word_ratio(const std::vector<std::string>& tokens, const std::set<std::string>& lexicon);

// Rules apply in fixed order: bad-ratio, speaker-count, utterance-count, token-count.
// Conversations must be tokenized first.
std::pair<std::vector<Conversation>, CleaningReport> clean_corpus(const std::vector<Conversation>& convs,
                                                                  const CleaningRules& rules);

std::pair<std::vector<Conversation>, std::vector<Conversation>> split_corpus(
    const std::vector<Conversation>& convs, double train_ratio, double test_ratio, uint64_t seed);

// Styled synthetic corpus: each speaker draws mostly from its own disjoint
// vocabulary partition, so Stage I has a measurable style signal.
std::vector<Conversation> make_synthetic_corpus(int num_speakers, int num_convs, int utterances_per_conv,
                                                int vocab_partition_size, uint64_t seed);

}  // namespace cmr

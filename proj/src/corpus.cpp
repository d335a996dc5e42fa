#include "cmr/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

#include "cmr/errors.hpp"
#include "cmr/tokenizer.hpp"

namespace cmr {

using nlohmann::json;

namespace {

std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

Utterance utterance_from_json(const json& j, int line_no, const char* where) {
    auto fail = [&](const std::string& what) {
        throw DataError("line " + std::to_string(line_no) + ": " + what + " in " + where);
    };
    if (!j.is_object()) fail("expected object");
    if (!j.contains("speaker")) fail("missing required field \"speaker\"");
    if (!j.contains("text")) fail("missing required field \"text\"");
    Utterance u;
    u.speaker = j.at("speaker").get<std::string>();
    u.text = j.at("text").get<std::string>();
    if (u.speaker.empty()) fail("empty speaker");
    if (trim(u.text).empty()) fail("empty text");
    return u;
}

}  // namespace

int Conversation::num_speakers() const {
    std::unordered_set<std::string> s;
    for (const auto& u : context) s.insert(u.speaker);
    s.insert(response.speaker);
    return static_cast<int>(s.size());
}

int Conversation::total_tokens() const {
    int n = static_cast<int>(response.tokens.size());
    for (const auto& u : context) n += static_cast<int>(u.tokens.size());
    return n;
}

const std::set<std::string>& default_bad_words() {
    static const std::set<std::string> words = {
        "yes",  "okay",  "hey",     "oh",     "no",   "hello", "yeah", "well", "aha",  "ok",
        "i",    "am",    "fine",    "too",    "bye",  "is",    "good", "hm",   "alright", "really",
        "you",  "are",   "ohh",     "uh",     "huh",  "ha",    "what", "go",   "hi",   "thanks",
        "right", "many", "and",     "ohhh",   "could", "can",  "that"};
    return words;
}

CleaningRules::CleaningRules() : bad_word_lexicon(default_bad_words()) {}

int CleaningReport::total_removed() const {
    int n = 0;
    for (const auto& [rule, c] : removed_by_rule) n += c;
    return n;
}

std::vector<Conversation> parse_corpus_lines(const std::vector<std::string>& lines) {
    std::vector<Conversation> out;
    std::unordered_set<std::string> seen_ids;
    int line_no = 0;
    for (const auto& line : lines) {
        ++line_no;
        if (trim(line).empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw DataError("line " + std::to_string(line_no) + ": malformed JSON: " + e.what());
        }
        if (!j.contains("id")) throw DataError("line " + std::to_string(line_no) + ": missing required field \"id\"");
        if (!j.contains("context")) throw DataError("line " + std::to_string(line_no) + ": missing required field \"context\"");
        if (!j.contains("response")) throw DataError("line " + std::to_string(line_no) + ": missing required field \"response\"");
        Conversation c;
        c.id = j.at("id").get<std::string>();
        if (!seen_ids.insert(c.id).second)
            throw DataError("line " + std::to_string(line_no) + ": duplicate id \"" + c.id + "\"");
        const auto& ctx = j.at("context");
        if (!ctx.is_array() || ctx.empty())
            throw DataError("line " + std::to_string(line_no) + ": empty context");
        for (const auto& uj : ctx) c.context.push_back(utterance_from_json(uj, line_no, "context"));
        c.response = utterance_from_json(j.at("response"), line_no, "response");
        out.push_back(std::move(c));
    }
    return out;
}

std::vector<Conversation> parse_corpus(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open corpus file: " + path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) lines.push_back(line);
    return parse_corpus_lines(lines);
}

std::string conversation_to_json_line(const Conversation& conv) {
    json j;
    j["id"] = conv.id;
    j["context"] = json::array();
    for (const auto& u : conv.context) j["context"].push_back({{"speaker", u.speaker}, {"text", u.text}});
    j["response"] = {{"speaker", conv.response.speaker}, {"text", conv.response.text}};
    return j.dump();
}

void write_corpus(const std::vector<Conversation>& convs, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open output file: " + path);
    for (const auto& c : convs) out << conversation_to_json_line(c) << "\n";
}

double bad_word_ratio(const std::vector<std::string>& tokens, const std::set<std::string>& lexicon) {
    if (tokens.empty()) return 0.0;
    int bad = 0;
    for (const auto& t : tokens)
        if (lexicon.count(t)) ++bad;
    return static_cast<double>(bad) / static_cast<double>(tokens.size());
}

std::pair<std::vector<Conversation>, CleaningReport> clean_corpus(const std::vector<Conversation>& convs,
                                                                  const CleaningRules& rules) {
    CleaningReport report;
    report.removed_by_rule = {{"bad_ratio", 0}, {"min_speakers", 0}, {"min_utterances", 0}, {"min_total_tokens", 0}};
    std::vector<Conversation> kept;
    for (const auto& c : convs) {
        std::string rule;
        if (bad_word_ratio(c.response.tokens, rules.bad_word_lexicon) > rules.max_bad_ratio) {
            rule = "bad_ratio";
        } else if (c.num_speakers() < rules.min_speakers) {
            rule = "min_speakers";
        } else if (static_cast<int>(c.context.size()) + 1 < rules.min_utterances) {
            rule = "min_utterances";
        } else if (rules.min_total_tokens > 0 && c.total_tokens() <= rules.min_total_tokens) {
            rule = "min_total_tokens";
        }
        if (rule.empty()) {
            kept.push_back(c);
        } else {
            report.removed_by_rule[rule]++;
            report.removed_ids[rule].push_back(c.id);
        }
    }
    report.kept = static_cast<int>(kept.size());
    return {std::move(kept), std::move(report)};
}

std::pair<std::vector<Conversation>, std::vector<Conversation>> split_corpus(
    const std::vector<Conversation>& convs, double train_ratio, double test_ratio, uint64_t seed) {
    if (train_ratio < 0 || test_ratio < 0 || std::abs(train_ratio + test_ratio - 1.0) > 1e-9)
        throw UsageError("split ratios must be nonnegative and sum to 1");
    if (convs.size() < 2) throw DataError("split requires at least 2 conversations");
    std::vector<size_t> idx(convs.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    size_t n_train = static_cast<size_t>(std::llround(train_ratio * static_cast<double>(convs.size())));
    n_train = std::min(n_train, convs.size());
    std::vector<Conversation> train, test;
    for (size_t i = 0; i < idx.size(); ++i)
        (i < n_train ? train : test).push_back(convs[idx[i]]);
    return {std::move(train), std::move(test)};
}

std::vector<Conversation> make_synthetic_corpus(int num_speakers, int num_convs, int utterances_per_conv,
                                                int vocab_partition_size, uint64_t seed) {
    if (num_speakers < 2) throw UsageError("synthetic corpus needs at least 2 speakers");
    if (vocab_partition_size < 2) throw UsageError("vocab_partition_size must be >= 2");
    if (num_convs < 1 || utterances_per_conv < 1)
        throw UsageError("synthetic corpus needs positive conversation and utterance counts");

    std::mt19937_64 rng(seed);
    std::vector<std::string> speakers;
    for (int s = 0; s < num_speakers; ++s) speakers.push_back("S" + std::to_string(s + 1));
    auto partition_word = [&](int s, int k) { return "w" + std::to_string(s) + "q" + std::to_string(k); };
    auto shared_word = [&](int k) { return "c" + std::to_string(k); };

    std::vector<Conversation> out;
    for (int ci = 0; ci < num_convs; ++ci) {
        Conversation conv;
        conv.id = "synth-" + std::to_string(ci);
        int per_conv = std::min(num_speakers, 4);
        std::vector<int> pool(num_speakers);
        std::iota(pool.begin(), pool.end(), 0);
        std::shuffle(pool.begin(), pool.end(), rng);
        pool.resize(per_conv);

        // Round-robin assignment over the conversation's speakers, shuffled,
        // so every participant has at least two utterances when slots allow.
        int slots = utterances_per_conv + 1;
        std::vector<int> order;
        for (int i = 0; i < slots; ++i) order.push_back(pool[i % per_conv]);
        std::shuffle(order.begin(), order.end(), rng);

        auto make_utt = [&](int s) {
            Utterance u;
            u.speaker = speakers[s];
            std::uniform_int_distribution<int> len_dist(4, 8);
            std::uniform_int_distribution<int> word_dist(0, vocab_partition_size - 1);
            int len = len_dist(rng);
            int own = (len * 9 + 9) / 10;  // ceil(0.9 * len): at least 80% styled tokens
            std::vector<std::string> toks;
            for (int k = 0; k < len; ++k)
                toks.push_back(k < own ? partition_word(s, word_dist(rng)) : shared_word(word_dist(rng)));
            std::shuffle(toks.begin(), toks.end(), rng);
            std::string text;
            for (size_t k = 0; k < toks.size(); ++k) {
                if (k) text += " ";
                text += toks[k];
            }
            u.text = text;
            return u;
        };
        for (int i = 0; i < utterances_per_conv; ++i) conv.context.push_back(make_utt(order[i]));
        conv.response = make_utt(order[slots - 1]);
        out.push_back(std::move(conv));
    }
    tokenize_corpus(out);
    return out;
}

}  // namespace cmr

#include "cmr/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "cmr/errors.hpp"

namespace cmr {

using nlohmann::json;

std::vector<std::string> tokenize(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    auto flush = [&] {
        if (!cur.empty()) {
            out.push_back(cur);
            cur.clear();
        }
    };
    for (unsigned char ch : text) {
        if (ch < 0x80 && std::isspace(ch)) {
            flush();
        } else if (ch < 0x80 && std::ispunct(ch)) {
            flush();
            out.push_back(std::string(1, static_cast<char>(ch)));
        } else {
            cur.push_back(ch < 0x80 ? static_cast<char>(std::tolower(ch)) : static_cast<char>(ch));
        }
    }
    flush();
    return out;
}

std::string join_tokens(const std::vector<std::string>& tokens) {
    std::string s;
    for (size_t i = 0; i < tokens.size(); ++i) {
        if (i) s += " ";
        s += tokens[i];
    }
    return s;
}

void tokenize_corpus(std::vector<Conversation>& convs) {
    for (auto& c : convs) {
        for (auto& u : c.context) u.tokens = tokenize(u.text);
        c.response.tokens = tokenize(c.response.text);
    }
}

namespace {
const std::vector<std::string>& special_tokens() {
    static const std::vector<std::string> s = {"<pad>", "<unk>", "<bos>", "<eos>", "<sep>"};
    return s;
}
}  // namespace

Vocab Vocab::build(const std::vector<Conversation>& train_convs, int max_size) {
    if (train_convs.empty()) throw DataError("cannot build vocabulary from empty corpus");
    std::map<std::string, int64_t> freq;
    std::set<std::string> speakers;
    auto count_utt = [&](const Utterance& u) {
        speakers.insert(u.speaker);
        const auto toks = u.tokens.empty() ? tokenize(u.text) : u.tokens;
        for (const auto& t : toks) freq[t]++;
    };
    for (const auto& c : train_convs) {
        for (const auto& u : c.context) count_utt(u);
        count_utt(c.response);
    }
    int reserved = kNumSpecials + static_cast<int>(speakers.size());
    if (max_size <= reserved)
        throw UsageError("vocab max_size " + std::to_string(max_size) + " must exceed specials + speakers = " +
                         std::to_string(reserved));

    std::vector<std::string> order = special_tokens();
    for (const auto& s : speakers) order.push_back(speaker_token(s));

    // Frequency descending, ties broken lexicographically ascending.
    std::vector<std::pair<std::string, int64_t>> ranked(freq.begin(), freq.end());
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    for (const auto& [tok, f] : ranked) {
        if (static_cast<int>(order.size()) >= max_size) break;
        order.push_back(tok);
    }
    return from_token_list(order);
}

Vocab Vocab::from_token_list(const std::vector<std::string>& tokens_in_id_order) {
    if (static_cast<int>(tokens_in_id_order.size()) < kNumSpecials)
        throw DataError("vocab must contain the 5 special tokens");
    for (int i = 0; i < kNumSpecials; ++i)
        if (tokens_in_id_order[i] != special_tokens()[i])
            throw DataError("vocab special token at id " + std::to_string(i) + " is \"" + tokens_in_id_order[i] +
                            "\", expected \"" + special_tokens()[i] + "\"");
    Vocab v;
    v.id_to_token_ = tokens_in_id_order;
    for (size_t i = 0; i < tokens_in_id_order.size(); ++i) {
        if (!v.token_to_id_.emplace(tokens_in_id_order[i], static_cast<int>(i)).second)
            throw DataError("duplicate token in vocab: " + tokens_in_id_order[i]);
    }
    return v;
}

int Vocab::id_of(const std::string& token) const {
    auto it = token_to_id_.find(token);
    return it == token_to_id_.end() ? kUnk : it->second;
}

const std::string& Vocab::token_of(int id) const {
    if (id < 0 || id >= size()) throw DataError("token id " + std::to_string(id) + " out of vocab");
    return id_to_token_[id];
}

std::vector<int> Vocab::encode(const std::vector<std::string>& tokens) const {
    std::vector<int> out;
    out.reserve(tokens.size());
    for (const auto& t : tokens) out.push_back(id_of(t));
    return out;
}

std::vector<std::string> Vocab::decode(const std::vector<int>& ids) const {
    std::vector<std::string> out;
    out.reserve(ids.size());
    for (int i : ids) out.push_back(token_of(i));
    return out;
}

std::string Vocab::to_json() const {
    json j = json::object();
    for (size_t i = 0; i < id_to_token_.size(); ++i) j[id_to_token_[i]] = static_cast<int>(i);
    return j.dump();
}

Vocab Vocab::from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw DataError(std::string("malformed vocab JSON: ") + e.what());
    }
    std::vector<std::string> order(j.size());
    for (auto it = j.begin(); it != j.end(); ++it) {
        int id = it.value().get<int>();
        if (id < 0 || id >= static_cast<int>(order.size()) || !order[id].empty())
            throw DataError("vocab ids must be dense from 0; bad id " + std::to_string(id));
        order[id] = it.key();
    }
    return from_token_list(order);
}

void Vocab::save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open vocab output file: " + path);
    out << to_json() << "\n";
}

Vocab Vocab::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open vocab file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return from_json(ss.str());
}

uint64_t Vocab::digest() const {
    // FNV-1a over the JSON serialization
    uint64_t h = 14695981039346656037ULL;
    for (unsigned char c : to_json()) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

std::vector<int> serialize_context(const Conversation& conv, const Vocab& vocab, int max_len) {
    if (max_len < 2) throw UsageError("max_len must be >= 2");
    if (conv.context.empty()) throw DataError("conversation " + conv.id + " has empty context");
    std::vector<std::vector<int>> segments;
    for (const auto& u : conv.context) {
        std::vector<int> seg;
        seg.push_back(vocab.speaker_id(u.speaker));
        const auto toks = u.tokens.empty() ? tokenize(u.text) : u.tokens;
        for (const auto& t : toks) seg.push_back(vocab.id_of(t));
        seg.push_back(Vocab::kSep);
        segments.push_back(std::move(seg));
    }
    size_t total = 2;  // bos + trailing target speaker token
    for (const auto& s : segments) total += s.size();
    size_t drop = 0;
    while (total > static_cast<size_t>(max_len) && drop + 1 < segments.size()) {
        total -= segments[drop].size();
        ++drop;
    }
    std::vector<int> out;
    out.push_back(Vocab::kBos);
    for (size_t i = drop; i < segments.size(); ++i)
        out.insert(out.end(), segments[i].begin(), segments[i].end());
    out.push_back(vocab.speaker_id(conv.target_speaker()));
    if (static_cast<int>(out.size()) > max_len) {
        // one oversized utterance left: trim its oldest tokens
        size_t excess = out.size() - static_cast<size_t>(max_len);
        out.erase(out.begin() + 1, out.begin() + 1 + excess);
    }
    return out;
}

}  // namespace cmr

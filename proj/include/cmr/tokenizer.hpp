#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "cmr/corpus.hpp"

namespace cmr {

// Lowercase whitespace tokenizer; punctuation becomes single-char tokens.
std::vector<std::string> tokenize(const std::string& text);
std::string join_tokens(const std::vector<std::string>& tokens);
void tokenize_corpus(std::vector<Conversation>& convs);

class Vocab {
  public:
    static constexpr int kPad = 0;
    static constexpr int kUnk = 1;
    static constexpr int kBos = 2;
    static constexpr int kEos = 3;
    static constexpr int kSep = 4;
    static constexpr int kNumSpecials = 5;

    static Vocab build(const std::vector<Conversation>& train_convs, int max_size);
    static Vocab from_token_list(const std::vector<std::string>& tokens_in_id_order);

    int size() const { return static_cast<int>(id_to_token_.size()); }
    int id_of(const std::string& token) const;       // unk for unknown
    const std::string& token_of(int id) const;
    bool has(const std::string& token) const { return token_to_id_.count(token) > 0; }

    static std::string speaker_token(const std::string& speaker) { return "<spk:" + speaker + ">"; }
    // unk if the speaker was not seen in training
    int speaker_id(const std::string& speaker) const { return id_of(speaker_token(speaker)); }

    std::vector<int> encode(const std::vector<std::string>& tokens) const;
    std::vector<std::string> decode(const std::vector<int>& ids) const;

    std::string to_json() const;  // {token: id}
    static Vocab from_json(const std::string& text);
    void save(const std::string& path) const;
    static Vocab load(const std::string& path);
    uint64_t digest() const;

  private:
    std::unordered_map<std::string, int> token_to_id_;
    std::vector<std::string> id_to_token_;
};

// [bos, spk(u1), u1..., sep, ..., spk(un), un..., sep, spk(target)].
// Drops oldest utterances first when the result would exceed max_len; the
// trailing target-speaker token is always kept.
std::vector<int> serialize_context(const Conversation& conv, const Vocab& vocab, int max_len);

}  // namespace cmr

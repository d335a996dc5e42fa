#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <string>
#include <vector>

#include "cmr/model.hpp"
#include "cmr/objectives.hpp"

using namespace cmr;

namespace {

ModelConfig micro_config(int vocab = 20) {
    ModelConfig cfg;
    cfg.d_model = 16;
    cfg.heads = 2;
    cfg.encoder_layers = 1;
    cfg.decoder_layers = 1;
    cfg.ff_dim = 16;
    cfg.vocab_size = vocab;
    cfg.max_len = 32;
    cfg.seed = 5;
    return cfg;
}

std::vector<std::pair<std::string, Tensor<double>*>> all_params(Parameters<double>& p) {
    std::vector<std::pair<std::string, Tensor<double>*>> out;
    for (const auto& name : p.order) out.push_back({name, &p.at(name)});
    return out;
}

}  // namespace

TEST_CASE("config validation") {
    ModelConfig cfg = micro_config();
    CHECK_NOTHROW(cfg.validate());
    cfg.heads = 3;  // 16 % 3 != 0
    CHECK_THROWS_AS(cfg.validate(), UsageError);
    cfg = micro_config();
    cfg.vocab_size = 0;
    CHECK_THROWS_AS(cfg.validate(), UsageError);
}

TEST_CASE("parameter init is deterministic per seed and respects bounds") {
    ModelConfig cfg = micro_config();
    auto p1 = init_parameters<float>(cfg);
    auto p2 = init_parameters<float>(cfg);
    cfg.seed = 6;
    auto p3 = init_parameters<float>(cfg);

    bool any_differs = false;
    for (const auto& name : p1.order) {
        CHECK(p1.at(name).data == p2.at(name).data);
        if (p1.at(name).data != p3.at(name).data) any_differs = true;
        const auto& t = p1.at(name);
        bool is_gain = name.ends_with(".g");
        bool is_bias = name.ends_with(".b") || name.ends_with(".b1") || name.ends_with(".b2");
        int fan_in = name == "tok_emb" ? t.cols() : t.rows();
        float bound = 1.0f / std::sqrt(static_cast<float>(fan_in));
        for (float v : t.data) {
            if (is_gain)
                CHECK(v == 1.0f);
            else if (is_bias)
                CHECK(v == 0.0f);
            else
                CHECK(std::abs(v) <= bound);
        }
    }
    CHECK(any_differs);
    CHECK(count_parameters(p1) > 0);
    CHECK(p1.order.size() == parameter_schema(cfg).size());
}

TEST_CASE("encoder-side classification of parameter names") {
    CHECK(is_encoder_side("tok_emb"));
    CHECK(is_encoder_side("enc.0.attn.wq"));
    CHECK(is_encoder_side("enc.final_ln.g"));
    CHECK(!is_encoder_side("dec.0.self_attn.wq"));
    CHECK(!is_encoder_side("dec.final_ln.b"));
}

TEST_CASE("encode produces [len, d_model] states and enforces max_len") {
    ModelConfig cfg = micro_config();
    auto params = init_parameters<float>(cfg);
    Tape<float> tape;
    int h = encode(tape, {5, 6, 7}, cfg, params);
    CHECK(tape.value(h).rows() == 3);
    CHECK(tape.value(h).cols() == 16);
    std::vector<int> too_long(cfg.max_len + 1, 5);
    Tape<float> tape2;
    CHECK_THROWS_AS(encode(tape2, too_long, cfg, params), UsageError);
    Tape<float> tape3;
    CHECK_THROWS_AS(encode(tape3, {}, cfg, params), ShapeError);
}

TEST_CASE("positional encoding distinguishes repeated tokens") {
    ModelConfig cfg = micro_config();
    auto params = init_parameters<float>(cfg);
    Tape<float> tape;
    int h = encode(tape, {7, 7, 7}, cfg, params);
    const auto& H = tape.value(h);
    double diff = 0;
    for (int j = 0; j < H.cols(); ++j) diff += std::abs(H.at(0, j) - H.at(1, j));
    CHECK(diff > 1e-3);
}

TEST_CASE("utterance embedding is unit norm and single-token pooling is identity") {
    ModelConfig cfg = micro_config();
    auto params = init_parameters<float>(cfg);
    Tape<float> tape;
    int e = embed_utterance(tape, {9}, cfg, params);
    const auto& E = tape.value(e);
    CHECK(E.rows() == 1);
    CHECK(E.cols() == 16);
    double norm = 0;
    for (float v : E.data) norm += static_cast<double>(v) * v;
    CHECK(std::sqrt(norm) == doctest::Approx(1.0).epsilon(1e-6));

    // mean of a single position = that position's encoder state, normalized
    Tape<float> tape2;
    int h = encode(tape2, {9}, cfg, params);
    const auto& H = tape2.value(h);
    double hn = 0;
    for (float v : H.data) hn += static_cast<double>(v) * v;
    hn = std::sqrt(hn);
    for (int j = 0; j < 16; ++j) CHECK(E.at(0, j) == doctest::Approx(H.at(0, j) / hn).epsilon(1e-5));
}

TEST_CASE("pooling ignores pad positions") {
    ModelConfig cfg = micro_config();
    auto params = init_parameters<float>(cfg);
    Tape<float> t1, t2;
    int a = embed_utterance(t1, {5, 9, 12}, cfg, params);
    int b = embed_utterance(t2, {5, 9, 12, 0, 0, 0}, cfg, params);
    for (int j = 0; j < 16; ++j)
        CHECK(t1.value(a).at(0, j) == doctest::Approx(t2.value(b).at(0, j)).epsilon(1e-5));
    Tape<float> t3;
    CHECK_THROWS_AS(embed_utterance(t3, {0, 0}, cfg, params), ShapeError);
}

TEST_CASE("normalize_embeddings flag controls pooled norm") {
    ModelConfig cfg = micro_config();
    cfg.normalize_embeddings = false;
    auto params = init_parameters<float>(cfg);
    Tape<float> tape;
    int e = embed_utterance(tape, {5, 9}, cfg, params);
    double norm = 0;
    for (float v : tape.value(e).data) norm += static_cast<double>(v) * v;
    CHECK(std::abs(std::sqrt(norm) - 1.0) > 1e-3);  // raw mean pooling is not unit norm
}

TEST_CASE("generation logits have shape [prefix, vocab]") {
    ModelConfig cfg = micro_config();
    auto params = init_parameters<float>(cfg);
    Tape<float> tape;
    int logits = generation_forward(tape, {2, 5, 6, 4}, {2, 8, 9}, cfg, params);
    CHECK(tape.value(logits).rows() == 3);
    CHECK(tape.value(logits).cols() == cfg.vocab_size);
}

TEST_CASE("decoder is causal") {
    ModelConfig cfg = micro_config();
    auto params = init_parameters<float>(cfg);
    std::vector<int> ctx = {2, 5, 6, 4};
    Tape<float> t1, t2;
    int a = generation_forward(t1, ctx, {2, 8, 9, 10}, cfg, params);
    int b = generation_forward(t2, ctx, {2, 8, 14, 10}, cfg, params);  // differs at position 2
    const auto& A = t1.value(a);
    const auto& B = t2.value(b);
    for (int i = 0; i < 2; ++i)  // positions before the perturbed token
        for (int j = 0; j < cfg.vocab_size; ++j) CHECK(A.at(i, j) == doctest::Approx(B.at(i, j)).epsilon(1e-6));
    double diff = 0;
    for (int j = 0; j < cfg.vocab_size; ++j) diff += std::abs(A.at(2, j) - B.at(2, j));
    CHECK(diff > 1e-4);
}

TEST_CASE("zeroed token embedding gives uniform log-softmax") {
    ModelConfig cfg = micro_config(20);
    auto params = init_parameters<float>(cfg);
    auto& emb = params.at("tok_emb");
    std::fill(emb.data.begin(), emb.data.end(), 0.0f);
    Tape<float> tape;
    int logits = generation_forward(tape, {2, 5}, {2, 8}, cfg, params);
    int logp = tape.log_softmax_rows(logits);
    const auto& L = tape.value(logp);
    for (float v : L.data) CHECK(v == doctest::Approx(-std::log(20.0)).epsilon(1e-5));
}

TEST_CASE("forward is deterministic with dropout disabled") {
    ModelConfig cfg = micro_config();
    auto params = init_parameters<float>(cfg);
    auto run = [&] {
        Tape<float> tape;
        int logits = generation_forward(tape, {2, 5, 6}, {2, 8, 9}, cfg, params);
        return tape.value(logits).data;
    };
    CHECK(run() == run());
}

TEST_CASE("stage one contrastive loss passes gradient check on the micro model") {
    ModelConfig cfg = micro_config(18);
    auto params = init_parameters<double>(cfg);
    LossOptions opt;
    opt.tau = 0.1;
    std::vector<int> q = {5, 9, 12}, pos = {6, 9}, n1 = {7, 13, 14}, n2 = {15, 16};
    auto loss_fn = [&] {
        Tape<double> tape;
        int eq = embed_utterance(tape, q, cfg, params);
        int ep = embed_utterance(tape, pos, cfg, params);
        int e1 = embed_utterance(tape, n1, cfg, params);
        int e2 = embed_utterance(tape, n2, cfg, params);
        int loss = info_nce(tape, eq, ep, {e1, e2}, opt);
        tape.backward(loss);
        return tape.value(loss).data[0];
    };
    auto row = grad_check(loss_fn, all_params(params), 1e-5);
    INFO("worst: ", row.name);
    CHECK(row.max_rel_error <= 1e-4);
}

TEST_CASE("stage two combined loss passes gradient check on the micro model") {
    ModelConfig cfg = micro_config(18);
    cfg.seed = 11;
    auto params = init_parameters<double>(cfg);
    LossOptions opt;
    opt.tau = 0.1;
    opt.lambda = 2.0;
    std::vector<int> ctx = {2, 5, 9, 4, 6, 12, 4, 7};
    std::vector<int> prefix = {2, 13, 14};
    std::vector<int> gold = {13, 14, 3};
    std::vector<int> pos = {13, 14}, n1 = {9, 12}, n2 = {16, 17};
    auto loss_fn = [&] {
        Tape<double> tape;
        int logits = generation_forward(tape, ctx, prefix, cfg, params);
        int gen = generation_loss(tape, logits, gold, opt);
        int eq = embed_utterance(tape, ctx, cfg, params);
        int ep = embed_utterance(tape, pos, cfg, params);
        int e1 = embed_utterance(tape, n1, cfg, params);
        int e2 = embed_utterance(tape, n2, cfg, params);
        int cl = info_nce(tape, eq, ep, {e1, e2}, opt);
        int total = combined_loss(tape, gen, cl, opt.lambda);
        tape.backward(total);
        return tape.value(total).data[0];
    };
    auto row = grad_check(loss_fn, all_params(params), 1e-5);
    INFO("worst: ", row.name);
    CHECK(row.max_rel_error <= 1e-4);
}

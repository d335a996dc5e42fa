#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "cmr/errors.hpp"
#include "cmr/trainer.hpp"

using namespace cmr;

namespace {

Parameters<float> scalar_param(float value) {
    Parameters<float> p;
    Tensor<float> t(1, 1, value);
    t.set_requires_grad();
    p.tensors.emplace("w", std::move(t));
    p.order.push_back("w");
    return p;
}

ModelConfig micro_model(int vocab) {
    ModelConfig cfg;
    cfg.d_model = 16;
    cfg.heads = 2;
    cfg.encoder_layers = 1;
    cfg.decoder_layers = 1;
    cfg.ff_dim = 16;
    cfg.vocab_size = vocab;
    cfg.max_len = 64;
    cfg.seed = 5;
    return cfg;
}

TrainConfig micro_train() {
    TrainConfig cfg;
    cfg.learning_rate = 1e-3;
    cfg.stage1_epochs = 2;
    cfg.stage2_epochs = 1;
    cfg.batch_size = 4;
    cfg.beam.width = 2;
    cfg.beam.max_len = 6;
    cfg.seed = 42;
    return cfg;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string tmp_path(const std::string& name) { return "/tmp/cmr_test_" + name; }

}  // namespace

TEST_CASE("adamw single-scalar step matches the hand-computed update") {
    TrainConfig cfg;
    cfg.learning_rate = 0.1;
    cfg.weight_decay = 0.01;
    auto params = scalar_param(1.0f);
    params.at("w").grad[0] = 0.5f;
    AdamState st;
    adamw_step(params, {"w"}, st, cfg);
    // m = 0.05, v = 2.5e-4; mhat = 0.5, vhat = 0.25
    // w -= lr * (0.5 / (0.5 + 1e-8) + 0.01 * 1.0)
    double expect = 1.0 - 0.1 * (0.5 / (0.5 + 1e-8) + 0.01 * 1.0);
    CHECK(params.at("w").data[0] == doctest::Approx(expect).epsilon(1e-6));
    CHECK(st.t == 1);
}

TEST_CASE("zero gradient and zero weight decay leave parameters unchanged") {
    TrainConfig cfg;
    cfg.weight_decay = 0.0;
    auto params = scalar_param(0.75f);
    AdamState st;
    adamw_step(params, {"w"}, st, cfg);
    CHECK(params.at("w").data[0] == 0.75f);
}

TEST_CASE("decoupled weight decay shrinks weights even without gradient") {
    TrainConfig cfg;
    cfg.learning_rate = 0.1;
    cfg.weight_decay = 0.01;
    auto params = scalar_param(2.0f);
    AdamState st;
    adamw_step(params, {"w"}, st, cfg);
    CHECK(params.at("w").data[0] == doctest::Approx(2.0 - 0.1 * 0.01 * 2.0).epsilon(1e-6));
}

TEST_CASE("global gradient clipping rescales the update") {
    TrainConfig cfg;
    cfg.learning_rate = 0.1;
    cfg.weight_decay = 0.0;
    cfg.grad_clip_norm = 1.0;
    auto a = scalar_param(1.0f);
    a.at("w").grad[0] = 4.0f;  // norm 4 -> clipped to 1, so effective g = 1
    AdamState st1;
    adamw_step(a, {"w"}, st1, cfg);
    auto b = scalar_param(1.0f);
    b.at("w").grad[0] = 1.0f;
    AdamState st2;
    adamw_step(b, {"w"}, st2, cfg);
    CHECK(a.at("w").data[0] == doctest::Approx(b.at("w").data[0]).epsilon(1e-7));
}

TEST_CASE("non-finite gradients abort with the tensor name") {
    TrainConfig cfg;
    auto params = scalar_param(1.0f);
    params.at("w").grad[0] = std::numeric_limits<float>::quiet_NaN();
    AdamState st;
    CHECK_THROWS_WITH_AS(adamw_step(params, {"w"}, st, cfg), doctest::Contains("w"), NumericError);
}

TEST_CASE("config json round trips are stable") {
    ModelConfig m = micro_model(33);
    CHECK(model_config_to_json(model_config_from_json(model_config_to_json(m))) == model_config_to_json(m));
    TrainConfig t = micro_train();
    t.sampling.stage2_beam = 5;
    CHECK(train_config_to_json(train_config_from_json(train_config_to_json(t))) == train_config_to_json(t));
    ModelConfig m2 = model_config_from_json(model_config_to_json(m));
    CHECK(m2.vocab_size == 33);
    TrainConfig t2 = train_config_from_json(train_config_to_json(t));
    CHECK(t2.sampling.stage2_beam == 5);
}

TEST_CASE("every ablation variant toggles exactly one config field") {
    TrainConfig base;
    auto count_diffs = [&](const TrainConfig& v) {
        int diffs = 0;
        if (v.stage1_epochs != base.stage1_epochs) ++diffs;
        if (v.stage2_epochs != base.stage2_epochs) ++diffs;
        if (v.sampling.stage1_same_conv != base.sampling.stage1_same_conv) ++diffs;
        if (v.sampling.stage1_in_batch != base.sampling.stage1_in_batch) ++diffs;
        if (v.sampling.stage2_previous != base.sampling.stage2_previous) ++diffs;
        if (v.sampling.stage2_same_conv != base.sampling.stage2_same_conv) ++diffs;
        if (v.sampling.stage2_in_batch != base.sampling.stage2_in_batch) ++diffs;
        if (v.sampling.stage2_beam != base.sampling.stage2_beam) ++diffs;
        return diffs;
    };
    CHECK(kAblationVariants.size() == 9);
    for (const auto& variant : kAblationVariants) {
        TrainConfig v = base;
        apply_ablation(v, variant);
        CAPTURE(variant);
        CHECK(count_diffs(v) == (variant == "full" ? 0 : 1));
    }
    TrainConfig v = base;
    CHECK_THROWS_AS(apply_ablation(v, "no_such_variant"), UsageError);
}

TEST_CASE("checkpoint save load save produces identical bytes") {
    ModelConfig mcfg = micro_model(24);
    Checkpoint ckpt;
    ckpt.stage = 1;
    ckpt.epoch = 3;
    ckpt.next_batch = 2;
    ckpt.step = 17;
    ckpt.vocab_digest = 0xdeadbeefULL;
    ckpt.model = mcfg;
    ckpt.train = micro_train();
    ckpt.params = init_parameters<float>(mcfg);
    for (const auto& name : ckpt.params.order) {
        const auto& p = ckpt.params.at(name);
        ckpt.adam.m.emplace(name, Tensor<float>(p.rows(), p.cols(), 0.125f));
        ckpt.adam.v.emplace(name, Tensor<float>(p.rows(), p.cols(), 0.5f));
    }
    ckpt.adam.t = 17;

    auto p1 = tmp_path("ckpt_a.bin"), p2 = tmp_path("ckpt_b.bin");
    save_checkpoint(ckpt, p1);
    Checkpoint loaded = load_checkpoint(p1);
    save_checkpoint(loaded, p2);
    CHECK(read_file(p1) == read_file(p2));
    CHECK(loaded.step == 17);
    CHECK(loaded.adam.t == 17);
    CHECK(loaded.vocab_digest == 0xdeadbeefULL);
    CHECK(loaded.model.vocab_size == 24);
    for (const auto& name : ckpt.params.order) {
        CHECK(loaded.params.at(name).data == ckpt.params.at(name).data);
        CHECK(loaded.adam.m.at(name).data == ckpt.adam.m.at(name).data);
    }
    std::remove(p1.c_str());
    std::remove(p2.c_str());
}

TEST_CASE("corrupted magic header and version mismatch are explicit errors") {
    ModelConfig mcfg = micro_model(16);
    Checkpoint ckpt;
    ckpt.stage = 1;
    ckpt.model = mcfg;
    ckpt.train = micro_train();
    ckpt.params = init_parameters<float>(mcfg);
    for (const auto& name : ckpt.params.order) {
        const auto& p = ckpt.params.at(name);
        ckpt.adam.m.emplace(name, Tensor<float>(p.rows(), p.cols()));
        ckpt.adam.v.emplace(name, Tensor<float>(p.rows(), p.cols()));
    }
    auto path = tmp_path("ckpt_bad.bin");
    save_checkpoint(ckpt, path);

    auto bytes = read_file(path);
    bytes[0] = 'X';
    std::ofstream(path, std::ios::binary).write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("bad magic"), DataError);

    ckpt.version = 2;
    save_checkpoint(ckpt, path);
    CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("version mismatch"), DataError);
    std::remove(path.c_str());

    CHECK_THROWS_AS(load_checkpoint(tmp_path("does_not_exist.bin")), DataError);
}

TEST_CASE("stage one training is deterministic and leaves the decoder frozen") {
    auto corpus = make_synthetic_corpus(4, 12, 5, 10, 3);
    Vocab vocab = Vocab::build(corpus, 2048);
    ModelConfig mcfg = micro_model(vocab.size());
    TrainConfig tcfg = micro_train();

    auto r1 = train_stage1(corpus, vocab, mcfg, tcfg);
    auto r2 = train_stage1(corpus, vocab, mcfg, tcfg);
    REQUIRE(!r1.logs.empty());
    REQUIRE(r1.logs.size() == r2.logs.size());
    for (size_t i = 0; i < r1.logs.size(); ++i)
        CHECK(std::abs(r1.logs[i].total - r2.logs[i].total) <= 1e-12);
    for (const auto& name : r1.checkpoint.params.order)
        CHECK(r1.checkpoint.params.at(name).data == r2.checkpoint.params.at(name).data);

    // decoder parameters never move in stage one; encoder-side ones do
    auto init = init_parameters<float>(mcfg);
    bool encoder_moved = false;
    for (const auto& name : init.order) {
        if (is_encoder_side(name)) {
            if (r1.checkpoint.params.at(name).data != init.at(name).data) encoder_moved = true;
        } else {
            CHECK(r1.checkpoint.params.at(name).data == init.at(name).data);
        }
    }
    CHECK(encoder_moved);
    CHECK(r1.checkpoint.stage == 1);
    CHECK(r1.checkpoint.step == static_cast<int64_t>(r1.logs.size()));
}

TEST_CASE("stage one resume reproduces the uninterrupted run") {
    auto corpus = make_synthetic_corpus(4, 12, 5, 10, 4);
    Vocab vocab = Vocab::build(corpus, 2048);
    ModelConfig mcfg = micro_model(vocab.size());
    TrainConfig tcfg = micro_train();
    tcfg.stage1_epochs = 3;

    auto full = train_stage1(corpus, vocab, mcfg, tcfg);

    TrainOptions first_half;
    first_half.max_steps = 4;
    auto part = train_stage1(corpus, vocab, mcfg, tcfg, first_half);
    auto path = tmp_path("resume1.bin");
    save_checkpoint(part.checkpoint, path);
    Checkpoint restored = load_checkpoint(path);
    std::remove(path.c_str());

    TrainOptions rest;
    rest.resume = &restored;
    auto tail = train_stage1(corpus, vocab, mcfg, tcfg, rest);
    REQUIRE(part.logs.size() + tail.logs.size() == full.logs.size());
    for (size_t i = 0; i < tail.logs.size(); ++i) {
        CHECK(std::abs(tail.logs[i].total - full.logs[4 + i].total) <= 1e-12);
        CHECK(tail.logs[i].step == full.logs[4 + i].step);
    }
    for (const auto& name : full.checkpoint.params.order)
        CHECK(tail.checkpoint.params.at(name).data == full.checkpoint.params.at(name).data);
}

TEST_CASE("stage two trains end to end and logs both loss components") {
    auto corpus = make_synthetic_corpus(4, 8, 4, 8, 6);
    Vocab vocab = Vocab::build(corpus, 2048);
    ModelConfig mcfg = micro_model(vocab.size());
    TrainConfig tcfg = micro_train();
    tcfg.stage1_epochs = 1;

    auto s1 = train_stage1(corpus, vocab, mcfg, tcfg);
    auto s2 = train_stage2(corpus, vocab, mcfg, tcfg, &s1.checkpoint);
    REQUIRE(!s2.logs.empty());
    for (const auto& log : s2.logs) {
        CHECK(std::isfinite(log.total));
        CHECK(log.gen > 0);
        CHECK(log.cl >= 0);
        CHECK(log.total == doctest::Approx(log.gen + tcfg.lambda * log.cl).epsilon(1e-6));
        CHECK(log.stage == 2);
    }
    CHECK(s2.checkpoint.stage == 2);

    // without a stage 1 checkpoint the run starts from random init
    auto cold = train_stage2(corpus, vocab, mcfg, tcfg, nullptr);
    CHECK(!cold.logs.empty());
    CHECK(cold.logs[0].total != doctest::Approx(s2.logs[0].total));
}

TEST_CASE("stage two resume reproduces the uninterrupted run") {
    auto corpus = make_synthetic_corpus(3, 8, 4, 8, 7);
    Vocab vocab = Vocab::build(corpus, 2048);
    ModelConfig mcfg = micro_model(vocab.size());
    TrainConfig tcfg = micro_train();
    tcfg.stage1_epochs = 1;
    tcfg.stage2_epochs = 2;

    auto s1 = train_stage1(corpus, vocab, mcfg, tcfg);
    auto full = train_stage2(corpus, vocab, mcfg, tcfg, &s1.checkpoint);

    TrainOptions head;
    head.max_steps = 2;
    auto part = train_stage2(corpus, vocab, mcfg, tcfg, &s1.checkpoint, head);
    auto path = tmp_path("resume2.bin");
    save_checkpoint(part.checkpoint, path);
    Checkpoint restored = load_checkpoint(path);
    std::remove(path.c_str());

    TrainOptions rest;
    rest.resume = &restored;
    auto tail = train_stage2(corpus, vocab, mcfg, tcfg, nullptr, rest);
    REQUIRE(part.logs.size() + tail.logs.size() == full.logs.size());
    for (size_t i = 0; i < tail.logs.size(); ++i)
        CHECK(std::abs(tail.logs[i].total - full.logs[2 + i].total) <= 1e-12);
    for (const auto& name : full.checkpoint.params.order)
        CHECK(tail.checkpoint.params.at(name).data == full.checkpoint.params.at(name).data);
}

TEST_CASE("training input validation") {
    auto corpus = make_synthetic_corpus(3, 4, 4, 8, 8);
    Vocab vocab = Vocab::build(corpus, 2048);
    ModelConfig mcfg = micro_model(vocab.size());
    TrainConfig tcfg = micro_train();
    CHECK_THROWS_AS(train_stage1({}, vocab, mcfg, tcfg), DataError);
    CHECK_THROWS_AS(train_stage2({}, vocab, mcfg, tcfg, nullptr), DataError);
    TrainConfig bad = tcfg;
    bad.learning_rate = 0;
    CHECK_THROWS_AS(train_stage1(corpus, vocab, mcfg, bad), UsageError);

    // no_stage1 variant: zero epochs is a legal no-op, not an error
    TrainConfig none = tcfg;
    apply_ablation(none, "no_stage1");
    auto r = train_stage1(corpus, vocab, mcfg, none);
    CHECK(r.logs.empty());
    CHECK(r.checkpoint.step == 0);
}

TEST_CASE("step logs serialize as json lines") {
    StepLog log;
    log.step = 7;
    log.stage = 2;
    log.total = 3.5;
    auto j = log.to_json();
    CHECK(j.find("\"step\":7") != std::string::npos);
    CHECK(j.find("\"sampling\"") != std::string::npos);
}

#include "cmr/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "cmr/errors.hpp"
#include "cmr/log.hpp"

namespace cmr {

using nlohmann::json;

void TrainConfig::validate() const {
    if (learning_rate <= 0) throw UsageError("learning_rate must be > 0");
    if (stage1_epochs < 0 || stage2_epochs < 0) throw UsageError("epochs must be >= 0");
    if (batch_size < 1) throw UsageError("batch_size must be >= 1");
    if (tau <= 0) throw UsageError("tau must be > 0");
    sampling.validate();
}

std::string StepLog::to_json() const {
    json j = {{"step", step}, {"stage", stage}, {"epoch", epoch},
              {"total", total}, {"gen", gen},   {"cl", cl},
              {"sampling", json::parse(stats.to_json())}};
    return j.dump();
}

// ---- config (de)serialization ----

namespace {

json model_config_json(const ModelConfig& c) {
    return json{{"d_model", c.d_model},
                {"heads", c.heads},
                {"encoder_layers", c.encoder_layers},
                {"decoder_layers", c.decoder_layers},
                {"ff_dim", c.ff_dim},
                {"vocab_size", c.vocab_size},
                {"max_len", c.max_len},
                {"dropout_rate", c.dropout_rate},
                {"seed", c.seed},
                {"normalize_embeddings", c.normalize_embeddings}};
}

ModelConfig model_config_from(const json& j) {
    ModelConfig c;
    c.d_model = j.value("d_model", c.d_model);
    c.heads = j.value("heads", c.heads);
    c.encoder_layers = j.value("encoder_layers", c.encoder_layers);
    c.decoder_layers = j.value("decoder_layers", c.decoder_layers);
    c.ff_dim = j.value("ff_dim", c.ff_dim);
    c.vocab_size = j.value("vocab_size", c.vocab_size);
    c.max_len = j.value("max_len", c.max_len);
    c.dropout_rate = j.value("dropout_rate", c.dropout_rate);
    c.seed = j.value("seed", c.seed);
    c.normalize_embeddings = j.value("normalize_embeddings", c.normalize_embeddings);
    return c;
}

json train_config_json(const TrainConfig& c) {
    return json{{"learning_rate", c.learning_rate},
                {"beta1", c.beta1},
                {"beta2", c.beta2},
                {"adam_eps", c.adam_eps},
                {"weight_decay", c.weight_decay},
                {"grad_clip_norm", c.grad_clip_norm},
                {"stage1_epochs", c.stage1_epochs},
                {"stage2_epochs", c.stage2_epochs},
                {"batch_size", c.batch_size},
                {"tau", c.tau},
                {"lambda", c.lambda},
                {"include_positive_in_denominator", c.include_positive_in_denominator},
                {"gen_loss_sum", c.gen_loss_sum},
                {"query_includes_speaker_token", c.query_includes_speaker_token},
                {"seed", c.seed},
                {"sampling",
                 {{"stage1_same_conv", c.sampling.stage1_same_conv},
                  {"stage1_in_batch", c.sampling.stage1_in_batch},
                  {"stage2_previous", c.sampling.stage2_previous},
                  {"stage2_same_conv", c.sampling.stage2_same_conv},
                  {"stage2_in_batch", c.sampling.stage2_in_batch},
                  {"stage2_beam", c.sampling.stage2_beam}}},
                {"beam",
                 {{"width", c.beam.width},
                  {"max_len", c.beam.max_len},
                  {"length_penalty", c.beam.length_penalty}}}};
}

TrainConfig train_config_from(const json& j) {
    TrainConfig c;
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.adam_eps = j.value("adam_eps", c.adam_eps);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.grad_clip_norm = j.value("grad_clip_norm", c.grad_clip_norm);
    c.stage1_epochs = j.value("stage1_epochs", c.stage1_epochs);
    c.stage2_epochs = j.value("stage2_epochs", c.stage2_epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.tau = j.value("tau", c.tau);
    c.lambda = j.value("lambda", c.lambda);
    c.include_positive_in_denominator = j.value("include_positive_in_denominator", c.include_positive_in_denominator);
    c.gen_loss_sum = j.value("gen_loss_sum", c.gen_loss_sum);
    c.query_includes_speaker_token = j.value("query_includes_speaker_token", c.query_includes_speaker_token);
    c.seed = j.value("seed", c.seed);
    if (j.contains("sampling")) {
        const auto& s = j.at("sampling");
        c.sampling.stage1_same_conv = s.value("stage1_same_conv", c.sampling.stage1_same_conv);
        c.sampling.stage1_in_batch = s.value("stage1_in_batch", c.sampling.stage1_in_batch);
        c.sampling.stage2_previous = s.value("stage2_previous", c.sampling.stage2_previous);
        c.sampling.stage2_same_conv = s.value("stage2_same_conv", c.sampling.stage2_same_conv);
        c.sampling.stage2_in_batch = s.value("stage2_in_batch", c.sampling.stage2_in_batch);
        c.sampling.stage2_beam = s.value("stage2_beam", c.sampling.stage2_beam);
    }
    if (j.contains("beam")) {
        const auto& b = j.at("beam");
        c.beam.width = b.value("width", c.beam.width);
        c.beam.max_len = b.value("max_len", c.beam.max_len);
        c.beam.length_penalty = b.value("length_penalty", c.beam.length_penalty);
    }
    return c;
}

}  // namespace

std::string model_config_to_json(const ModelConfig& cfg) { return model_config_json(cfg).dump(); }
ModelConfig model_config_from_json(const std::string& text) { return model_config_from(json::parse(text)); }
std::string train_config_to_json(const TrainConfig& cfg) { return train_config_json(cfg).dump(); }
TrainConfig train_config_from_json(const std::string& text) { return train_config_from(json::parse(text)); }

// ---- optimizer ----

void adamw_step(Parameters<float>& params, const std::vector<std::string>& names, AdamState& state,
                const TrainConfig& cfg) {
    double sq_norm = 0;
    for (const auto& name : names) {
        for (float g : params.at(name).grad) {
            if (!std::isfinite(g)) throw NumericError("non-finite gradient in tensor " + name);
            sq_norm += static_cast<double>(g) * g;
        }
    }
    double norm = std::sqrt(sq_norm);
    float clip = 1.0f;
    if (cfg.grad_clip_norm > 0 && norm > cfg.grad_clip_norm)
        clip = static_cast<float>(cfg.grad_clip_norm / norm);

    state.t += 1;
    double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
    double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
    for (const auto& name : names) {
        Tensor<float>& p = params.at(name);
        auto mit = state.m.find(name);
        if (mit == state.m.end()) {
            state.m.emplace(name, Tensor<float>(p.rows(), p.cols()));
            state.v.emplace(name, Tensor<float>(p.rows(), p.cols()));
        }
        Tensor<float>& m = state.m.at(name);
        Tensor<float>& v = state.v.at(name);
        for (size_t i = 0; i < p.data.size(); ++i) {
            float g = p.grad[i] * clip;
            m.data[i] = static_cast<float>(cfg.beta1) * m.data[i] + (1.0f - static_cast<float>(cfg.beta1)) * g;
            v.data[i] = static_cast<float>(cfg.beta2) * v.data[i] + (1.0f - static_cast<float>(cfg.beta2)) * g * g;
            double mhat = m.data[i] / bc1;
            double vhat = v.data[i] / bc2;
            p.data[i] -= static_cast<float>(cfg.learning_rate * (mhat / (std::sqrt(vhat) + cfg.adam_eps) +
                                                                 cfg.weight_decay * p.data[i]));
        }
    }
}

// ---- checkpoint IO ----

namespace {

constexpr char kMagic[4] = {'C', 'M', 'R', '1'};

void write_u64(std::ostream& out, uint64_t v) {
    unsigned char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    out.write(reinterpret_cast<const char*>(buf), 8);
}

uint64_t read_u64(std::istream& in) {
    unsigned char buf[8];
    in.read(reinterpret_cast<char*>(buf), 8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(buf[i]) << (8 * i);
    return v;
}

void write_f32_tensor(std::ostream& out, const Tensor<float>& t) {
    static_assert(sizeof(float) == 4);
    out.write(reinterpret_cast<const char*>(t.data.data()), static_cast<std::streamsize>(t.data.size() * 4));
}

void read_f32_tensor(std::istream& in, Tensor<float>& t) {
    in.read(reinterpret_cast<char*>(t.data.data()), static_cast<std::streamsize>(t.data.size() * 4));
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open checkpoint output file: " + path);
    json meta = {{"version", ckpt.version},
                 {"stage", ckpt.stage},
                 {"epoch", ckpt.epoch},
                 {"next_batch", ckpt.next_batch},
                 {"step", ckpt.step},
                 {"adam_t", ckpt.adam.t},
                 {"vocab_digest", ckpt.vocab_digest},
                 {"model_config", model_config_json(ckpt.model)},
                 {"train_config", train_config_json(ckpt.train)}};
    json tensors = json::array();
    for (const auto& name : ckpt.params.order) {
        const auto& t = ckpt.params.at(name);
        tensors.push_back({name, {t.rows(), t.cols()}});
    }
    meta["tensors"] = tensors;
    std::string meta_str = meta.dump();
    out.write(kMagic, 4);
    write_u64(out, meta_str.size());
    out.write(meta_str.data(), static_cast<std::streamsize>(meta_str.size()));
    for (const auto& name : ckpt.params.order) write_f32_tensor(out, ckpt.params.at(name));
    for (const auto& name : ckpt.params.order) write_f32_tensor(out, ckpt.adam.m.at(name));
    for (const auto& name : ckpt.params.order) write_f32_tensor(out, ckpt.adam.v.at(name));
    if (!out) throw DataError("failed writing checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint file: " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0)
        throw DataError("checkpoint format error: bad magic header in " + path);
    uint64_t meta_len = read_u64(in);
    std::string meta_str(meta_len, '\0');
    in.read(meta_str.data(), static_cast<std::streamsize>(meta_len));
    if (!in) throw DataError("checkpoint format error: truncated metadata in " + path);
    json meta;
    try {
        meta = json::parse(meta_str);
    } catch (const json::parse_error& e) {
        throw DataError(std::string("checkpoint format error: bad metadata JSON: ") + e.what());
    }
    Checkpoint ckpt;
    ckpt.version = meta.at("version").get<int>();
    if (ckpt.version != 1)
        throw DataError("checkpoint version mismatch: got " + std::to_string(ckpt.version) + ", expected 1");
    ckpt.stage = meta.at("stage").get<int>();
    ckpt.epoch = meta.at("epoch").get<int>();
    ckpt.next_batch = meta.at("next_batch").get<int>();
    ckpt.step = meta.at("step").get<int64_t>();
    ckpt.adam.t = meta.at("adam_t").get<int64_t>();
    ckpt.vocab_digest = meta.at("vocab_digest").get<uint64_t>();
    ckpt.model = model_config_from(meta.at("model_config"));
    ckpt.train = train_config_from(meta.at("train_config"));
    for (const auto& entry : meta.at("tensors")) {
        std::string name = entry.at(0).get<std::string>();
        Tensor<float> t(entry.at(1).at(0).get<int>(), entry.at(1).at(1).get<int>());
        t.set_requires_grad();
        ckpt.params.order.push_back(name);
        ckpt.params.tensors.emplace(name, std::move(t));
    }
    for (const auto& name : ckpt.params.order) read_f32_tensor(in, ckpt.params.at(name));
    for (const auto& name : ckpt.params.order) {
        const auto& p = ckpt.params.at(name);
        Tensor<float> m(p.rows(), p.cols());
        read_f32_tensor(in, m);
        ckpt.adam.m.emplace(name, std::move(m));
    }
    for (const auto& name : ckpt.params.order) {
        const auto& p = ckpt.params.at(name);
        Tensor<float> v(p.rows(), p.cols());
        read_f32_tensor(in, v);
        ckpt.adam.v.emplace(name, std::move(v));
    }
    if (!in) throw DataError("checkpoint format error: truncated tensor data in " + path);
    return ckpt;
}

// ---- training loops ----

namespace {

uint64_t mix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::mt19937_64 derive_rng(uint64_t seed, int stage, int epoch, int batch) {
    uint64_t s = mix64(seed ^ mix64(static_cast<uint64_t>(stage) << 48 ^ static_cast<uint64_t>(epoch) << 24 ^
                                    static_cast<uint64_t>(batch)));
    return std::mt19937_64(s);
}

std::vector<size_t> epoch_order(size_t n, uint64_t seed, int stage, int epoch) {
    std::vector<size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    auto rng = derive_rng(seed, stage, epoch, 0x7fffffff);
    std::shuffle(idx.begin(), idx.end(), rng);
    return idx;
}

std::vector<int> clip_len(std::vector<int> ids, int max_len) {
    if (static_cast<int>(ids.size()) > max_len) ids.resize(max_len);
    return ids;
}

// Parameters that receive gradient in Stage I: the token embedding and the
// encoder stack. Decoder weights stay untouched (equivalent to frozen).
std::vector<std::string> stage1_param_names(const Parameters<float>& params) {
    std::vector<std::string> names;
    for (const auto& n : params.order)
        if (is_encoder_side(n)) names.push_back(n);
    return names;
}

void ensure_adam_tensors(const Parameters<float>& params, AdamState& st) {
    for (const auto& name : params.order) {
        const auto& p = params.at(name);
        if (!st.m.count(name)) {
            st.m.emplace(name, Tensor<float>(p.rows(), p.cols()));
            st.v.emplace(name, Tensor<float>(p.rows(), p.cols()));
        }
    }
}

void emit(TrainResult& result, const TrainOptions& opts, StepLog log) {
    if (opts.on_step) opts.on_step(log);
    result.logs.push_back(std::move(log));
}

}  // namespace

TrainResult train_stage1(const std::vector<Conversation>& corpus, const Vocab& vocab, const ModelConfig& mcfg,
                         const TrainConfig& tcfg, const TrainOptions& opts) {
    mcfg.validate();
    tcfg.validate();
    if (corpus.empty()) throw DataError("stage 1 training corpus is empty");

    TrainResult result;
    Checkpoint& ckpt = result.checkpoint;
    if (opts.resume) {
        ckpt = *opts.resume;
        if (ckpt.stage != 1) throw DataError("resume checkpoint is not a stage 1 checkpoint");
        if (ckpt.vocab_digest != vocab.digest()) throw DataError("resume checkpoint vocab digest mismatch");
    } else {
        ckpt.stage = 1;
        ckpt.model = mcfg;
        ckpt.train = tcfg;
        ckpt.vocab_digest = vocab.digest();
        ckpt.params = init_parameters<float>(mcfg);
    }
    ensure_adam_tensors(ckpt.params, ckpt.adam);
    const auto trainable = stage1_param_names(ckpt.params);
    const LossOptions loss_opts = tcfg.loss_options();
    DullFilter dull;
    int64_t steps_done = 0;
    int64_t total_emitted = 0;

    int num_batches = (static_cast<int>(corpus.size()) + tcfg.batch_size - 1) / tcfg.batch_size;
    for (int epoch = ckpt.epoch; epoch < tcfg.stage1_epochs; ++epoch) {
        auto order = epoch_order(corpus.size(), tcfg.seed, 1, epoch);
        int start_batch = (epoch == ckpt.epoch) ? ckpt.next_batch : 0;
        for (int b = start_batch; b < num_batches; ++b) {
            std::vector<Conversation> batch;
            for (int i = b * tcfg.batch_size; i < std::min((b + 1) * tcfg.batch_size, static_cast<int>(corpus.size())); ++i)
                batch.push_back(corpus[order[i]]);

            auto rng = derive_rng(tcfg.seed, 1, epoch, b);
            SamplerStats stats;
            auto samples = stage1_samples(batch, vocab, tcfg.sampling, dull, rng, stats);
            ckpt.epoch = epoch;
            ckpt.next_batch = b + 1;
            if (ckpt.next_batch == num_batches) {
                ckpt.epoch = epoch + 1;
                ckpt.next_batch = 0;
            }
            if (samples.empty()) continue;
            total_emitted += static_cast<int64_t>(samples.size());

            Tape<float> tape;
            std::vector<int> losses;
            for (const auto& s : samples) {
                int q = embed_utterance(tape, clip_len(s.query_ids, mcfg.max_len), mcfg, ckpt.params);
                int p = embed_utterance(tape, clip_len(s.positive_ids, mcfg.max_len), mcfg, ckpt.params);
                std::vector<int> negs;
                for (const auto& n : s.negatives)
                    negs.push_back(embed_utterance(tape, clip_len(n.ids, mcfg.max_len), mcfg, ckpt.params));
                losses.push_back(info_nce(tape, q, p, negs, loss_opts));
            }
            int loss = tape.mean_rows(tape.concat_rows(losses));
            double loss_val = static_cast<double>(tape.value(loss).data[0]);
            if (!std::isfinite(loss_val)) throw NumericError("non-finite stage 1 loss at step " + std::to_string(ckpt.step));
            ckpt.params.zero_grad();
            tape.backward(loss);
            adamw_step(ckpt.params, trainable, ckpt.adam, tcfg);
            ckpt.step += 1;
            steps_done += 1;

            StepLog log;
            log.step = ckpt.step;
            log.stage = 1;
            log.epoch = epoch;
            log.total = loss_val;
            log.cl = loss_val;
            log.stats = stats;
            emit(result, opts, std::move(log));
            if (opts.max_steps >= 0 && steps_done >= opts.max_steps) return result;
        }
    }
    if (tcfg.stage1_epochs > 0 && total_emitted == 0 && steps_done == 0 && ckpt.step == 0)
        throw DataError("stage 1: corpus yielded no eligible contrastive samples");
    return result;
}

TrainResult train_stage2(const std::vector<Conversation>& corpus, const Vocab& vocab, const ModelConfig& mcfg,
                         const TrainConfig& tcfg, const Checkpoint* stage1, const TrainOptions& opts) {
    mcfg.validate();
    tcfg.validate();
    if (corpus.empty()) throw DataError("stage 2 training corpus is empty");

    TrainResult result;
    Checkpoint& ckpt = result.checkpoint;
    if (opts.resume) {
        ckpt = *opts.resume;
        if (ckpt.stage != 2) throw DataError("resume checkpoint is not a stage 2 checkpoint");
        if (ckpt.vocab_digest != vocab.digest()) throw DataError("resume checkpoint vocab digest mismatch");
    } else if (stage1) {
        if (stage1->vocab_digest != vocab.digest()) throw DataError("stage 1 checkpoint vocab digest mismatch");
        ckpt.stage = 2;
        ckpt.model = stage1->model;
        ckpt.train = tcfg;
        ckpt.vocab_digest = vocab.digest();
        ckpt.params = stage1->params;
        ckpt.step = 0;
    } else {
        log_info("stage 2: no stage 1 checkpoint, starting from random init (-w/o Stage I)");
        ckpt.stage = 2;
        ckpt.model = mcfg;
        ckpt.train = tcfg;
        ckpt.vocab_digest = vocab.digest();
        ckpt.params = init_parameters<float>(mcfg);
    }
    // Stage 2 optimizer moments start fresh unless resuming mid-stage.
    if (!opts.resume) ckpt.adam = AdamState{};
    ensure_adam_tensors(ckpt.params, ckpt.adam);
    if (!opts.resume) {
        ckpt.epoch = 0;
        ckpt.next_batch = 0;
    }
    const std::vector<std::string>& trainable = ckpt.params.order;
    const LossOptions loss_opts = tcfg.loss_options();
    DullFilter dull;
    int64_t steps_done = 0;

    int num_batches = (static_cast<int>(corpus.size()) + tcfg.batch_size - 1) / tcfg.batch_size;
    for (int epoch = ckpt.epoch; epoch < tcfg.stage2_epochs; ++epoch) {
        auto order = epoch_order(corpus.size(), tcfg.seed, 2, epoch);
        int start_batch = (epoch == ckpt.epoch) ? ckpt.next_batch : 0;
        for (int b = start_batch; b < num_batches; ++b) {
            std::vector<Conversation> batch;
            for (int i = b * tcfg.batch_size; i < std::min((b + 1) * tcfg.batch_size, static_cast<int>(corpus.size())); ++i)
                batch.push_back(corpus[order[i]]);

            auto rng = derive_rng(tcfg.seed, 2, epoch, b);
            SamplerStats stats;
            Tape<float> tape;
            std::vector<int> gen_losses, cl_losses;
            for (const auto& conv : batch) {
                auto ctx = serialize_context(conv, vocab, mcfg.max_len);
                auto gold = clip_len(vocab.encode(conv.response.tokens), mcfg.max_len - 1);

                // beam-mined negatives use the current, mid-training parameters
                std::vector<std::vector<int>> beam_negs;
                if (tcfg.sampling.stage2_beam > 0) {
                    auto hyps = beam_search(ctx, mcfg, ckpt.params, tcfg.beam);
                    beam_negs = select_beam_negatives(hyps, gold, tcfg.sampling.stage2_beam, nullptr);
                }
                auto sample = stage2_samples(conv, beam_negs, batch, vocab, mcfg.max_len, tcfg.sampling, dull, rng, stats);

                std::vector<int> prefix{Vocab::kBos};
                prefix.insert(prefix.end(), gold.begin(), gold.end());
                std::vector<int> targets = gold;
                targets.push_back(Vocab::kEos);
                int logits = generation_forward(tape, ctx, prefix, mcfg, ckpt.params);
                gen_losses.push_back(generation_loss(tape, logits, targets, loss_opts));

                std::vector<int> query_ids = sample.query_ids;
                if (!tcfg.query_includes_speaker_token && query_ids.size() > 1) query_ids.pop_back();
                int q = embed_utterance(tape, clip_len(query_ids, mcfg.max_len), mcfg, ckpt.params);
                int p = embed_utterance(tape, clip_len(sample.positive_ids, mcfg.max_len), mcfg, ckpt.params);
                std::vector<int> negs;
                for (const auto& n : sample.negatives)
                    negs.push_back(embed_utterance(tape, clip_len(n.ids, mcfg.max_len), mcfg, ckpt.params));
                cl_losses.push_back(info_nce(tape, q, p, negs, loss_opts));
            }
            int gen_mean = tape.mean_rows(tape.concat_rows(gen_losses));
            int cl_mean = tape.mean_rows(tape.concat_rows(cl_losses));
            int total = combined_loss(tape, gen_mean, cl_mean, tcfg.lambda);
            double total_val = static_cast<double>(tape.value(total).data[0]);
            if (!std::isfinite(total_val)) throw NumericError("non-finite stage 2 loss at step " + std::to_string(ckpt.step));

            ckpt.params.zero_grad();
            tape.backward(total);
            adamw_step(ckpt.params, trainable, ckpt.adam, tcfg);
            ckpt.step += 1;
            steps_done += 1;
            ckpt.epoch = epoch;
            ckpt.next_batch = b + 1;
            if (ckpt.next_batch == num_batches) {
                ckpt.epoch = epoch + 1;
                ckpt.next_batch = 0;
            }

            StepLog log;
            log.step = ckpt.step;
            log.stage = 2;
            log.epoch = epoch;
            log.total = total_val;
            log.gen = static_cast<double>(tape.value(gen_mean).data[0]);
            log.cl = static_cast<double>(tape.value(cl_mean).data[0]);
            log.stats = stats;
            emit(result, opts, std::move(log));
            if (opts.max_steps >= 0 && steps_done >= opts.max_steps) return result;
        }
    }
    return result;
}

// ---- ablations ----

const std::vector<std::string> kAblationVariants = {"full",    "no_ss1", "no_se1", "no_stage1", "no_pu",
                                                    "no_ss2", "no_se2", "no_bs",  "no_stage2"};

void apply_ablation(TrainConfig& cfg, const std::string& variant) {
    if (variant == "full") return;
    if (variant == "no_ss1") {
        cfg.sampling.stage1_same_conv = 0;
    } else if (variant == "no_se1") {
        cfg.sampling.stage1_in_batch = 0;
    } else if (variant == "no_stage1") {
        cfg.stage1_epochs = 0;
    } else if (variant == "no_pu") {
        cfg.sampling.stage2_previous = 0;
    } else if (variant == "no_ss2") {
        cfg.sampling.stage2_same_conv = 0;
    } else if (variant == "no_se2") {
        cfg.sampling.stage2_in_batch = 0;
    } else if (variant == "no_bs") {
        cfg.sampling.stage2_beam = 0;
    } else if (variant == "no_stage2") {
        cfg.stage2_epochs = 0;
    } else {
        throw UsageError("unknown ablation variant: " + variant);
    }
}

}  // namespace cmr

#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "cmr/corpus.hpp"
#include "cmr/decoding.hpp"
#include "cmr/model.hpp"
#include "cmr/objectives.hpp"
#include "cmr/sampling.hpp"
#include "cmr/tokenizer.hpp"

namespace cmr {

struct TrainConfig {
    double learning_rate = 4e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double weight_decay = 0.01;
    double grad_clip_norm = 1.0;
    int stage1_epochs = 10;
    int stage2_epochs = 2;
    int batch_size = 4;
    double tau = 0.1;
    double lambda = 2.0;
    bool include_positive_in_denominator = true;
    bool gen_loss_sum = false;             // mean reduction by default
    bool query_includes_speaker_token = true;  // Stage II query keeps the trailing target token
    SamplingSpec sampling;
    BeamConfig beam;
    uint64_t seed = 42;

    LossOptions loss_options() const {
        LossOptions o;
        o.tau = tau;
        o.lambda = lambda;
        o.include_positive_in_denominator = include_positive_in_denominator;
        o.gen_reduction = gen_loss_sum ? GenReduction::Sum : GenReduction::Mean;
        return o;
    }
    void validate() const;
};

struct AdamState {
    std::unordered_map<std::string, Tensor<float>> m;
    std::unordered_map<std::string, Tensor<float>> v;
    int64_t t = 0;
};

struct Checkpoint {
    int version = 1;
    int stage = 0;       // 1 or 2
    int epoch = 0;       // next epoch to run
    int next_batch = 0;  // next batch index within that epoch
    int64_t step = 0;    // optimizer updates so far
    uint64_t vocab_digest = 0;
    ModelConfig model;
    TrainConfig train;
    Parameters<float> params;
    AdamState adam;
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

struct StepLog {
    int64_t step = 0;
    int stage = 0;
    int epoch = 0;
    double total = 0;
    double gen = 0;
    double cl = 0;
    SamplerStats stats;

    std::string to_json() const;
};

struct TrainResult {
    Checkpoint checkpoint;
    std::vector<StepLog> logs;
};

struct TrainOptions {
    const Checkpoint* resume = nullptr;
    int64_t max_steps = -1;  // stop after this many additional optimizer steps
    std::function<void(const StepLog&)> on_step;
};

// Clips the global gradient norm over the named tensors, then applies a
// decoupled-weight-decay AdamW update with bias correction. Throws
// NumericError naming the tensor on any non-finite gradient.
void adamw_step(Parameters<float>& params, const std::vector<std::string>& names, AdamState& state,
                const TrainConfig& cfg);

TrainResult train_stage1(const std::vector<Conversation>& corpus, const Vocab& vocab, const ModelConfig& mcfg,
                         const TrainConfig& tcfg, const TrainOptions& opts = {});

// stage1 may be null: the run then starts from random init with a logged
// warning (the "-w/o Stage I" ablation).
TrainResult train_stage2(const std::vector<Conversation>& corpus, const Vocab& vocab, const ModelConfig& mcfg,
                         const TrainConfig& tcfg, const Checkpoint* stage1, const TrainOptions& opts = {});

// One component toggle per Table-style ablation variant.
extern const std::vector<std::string> kAblationVariants;
void apply_ablation(TrainConfig& cfg, const std::string& variant);

std::string model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const std::string& text);
std::string train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const std::string& text);

}  // namespace cmr

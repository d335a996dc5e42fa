#include <array>
#include <chrono>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "cmr/corpus.hpp"
#include "cmr/decoding.hpp"
#include "cmr/errors.hpp"
#include "cmr/eval.hpp"
#include "cmr/log.hpp"
#include "cmr/model.hpp"
#include "cmr/objectives.hpp"
#include "cmr/tokenizer.hpp"
#include "cmr/trainer.hpp"

using json = nlohmann::json;
using namespace cmr;

namespace {

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write file: " + path);
    out << text;
}

uint64_t fnv1a(const std::string& bytes) {
    uint64_t h = 14695981039346656037ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

std::string hex64(uint64_t v) {
    std::ostringstream ss;
    ss << std::hex << std::setfill('0') << std::setw(16) << v;
    return ss.str();
}

// One manifest per command, written next to the primary output.
struct Manifest {
    std::string command;
    json config = json::object();
    uint64_t seed = 0;
    std::vector<std::string> inputs;
    std::vector<std::string> outputs;
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

    void write(const std::string& primary_output) const {
        json j;
        j["command"] = command;
        j["config"] = config;
        j["seed"] = seed;
        json digests = json::object();
        for (const auto& path : inputs) digests[path] = hex64(fnv1a(read_file(path)));
        j["input_digests"] = digests;
        j["output_paths"] = outputs;
        j["wall_time_seconds"] =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        write_file(primary_output + ".manifest.json", j.dump(2) + "\n");
    }
};

json load_config(const std::string& path) {
    if (path.empty()) return json::object();
    json j = json::parse(read_file(path), nullptr, false);
    if (j.is_discarded()) throw DataError("config is not valid json: " + path);
    return j;
}

ModelConfig model_from(const json& cfg) {
    return model_config_from_json(cfg.value("model", json::object()).dump());
}

TrainConfig train_from(const json& cfg) {
    return train_config_from_json(cfg.value("train", json::object()).dump());
}

json resolved_config(const ModelConfig& m, const TrainConfig& t) {
    return json{{"model", json::parse(model_config_to_json(m))}, {"train", json::parse(train_config_to_json(t))}};
}

void write_step_logs(const std::vector<StepLog>& logs, const std::string& path) {
    std::ostringstream ss;
    for (const auto& log : logs) ss << log.to_json() << "\n";
    write_file(path, ss.str());
}

std::string hypothesis_text(const Hypothesis& h, const Vocab& vocab) {
    std::vector<std::string> words;
    for (const auto& tok : vocab.decode(strip_eos(h.ids)))
        if (tok.empty() || tok[0] != '<') words.push_back(tok);
    return join_tokens(words);
}

// ---- subcommand bodies ----

int run_clean(const std::string& in, const std::string& out, const std::string& report_path,
              const std::string& config_path) {
    Manifest mf;
    mf.command = "clean";
    json cfg = load_config(config_path);
    CleaningRules rules;
    rules.max_bad_ratio = cfg.value("max_bad_ratio", rules.max_bad_ratio);
    rules.min_speakers = cfg.value("min_speakers", rules.min_speakers);
    rules.min_utterances = cfg.value("min_utterances", rules.min_utterances);
    rules.min_total_tokens = cfg.value("min_total_tokens", rules.min_total_tokens);
    for (const auto& w : cfg.value("extra_bad_words", std::vector<std::string>{})) rules.bad_word_lexicon.insert(w);
    mf.config = json{{"max_bad_ratio", rules.max_bad_ratio},
                     {"min_speakers", rules.min_speakers},
                     {"min_utterances", rules.min_utterances},
                     {"min_total_tokens", rules.min_total_tokens},
                     {"lexicon_size", rules.bad_word_lexicon.size()}};
    mf.inputs = {in};
    if (!config_path.empty()) mf.inputs.push_back(config_path);

    auto corpus = parse_corpus(in);
    auto [kept, report] = clean_corpus(corpus, rules);
    write_corpus(kept, out);
    json jr;
    jr["input"] = corpus.size();
    jr["kept"] = report.kept;
    jr["removed"] = report.total_removed();
    jr["removed_by_rule"] = report.removed_by_rule;
    jr["removed_ids"] = report.removed_ids;
    std::string rp = report_path.empty() ? out + ".report.json" : report_path;
    write_file(rp, jr.dump(2) + "\n");
    mf.outputs = {out, rp};
    mf.write(out);
    log_info("clean: kept " + std::to_string(report.kept) + " of " + std::to_string(corpus.size()));
    return 0;
}

int run_vocab(const std::string& in, const std::string& out, const std::string& config_path) {
    Manifest mf;
    mf.command = "vocab";
    json cfg = load_config(config_path);
    int max_size = cfg.value("max_size", 10000);
    mf.config = json{{"max_size", max_size}};
    mf.inputs = {in};
    if (!config_path.empty()) mf.inputs.push_back(config_path);
    auto corpus = parse_corpus(in);
    Vocab vocab = Vocab::build(corpus, max_size);
    vocab.save(out);
    mf.outputs = {out};
    mf.write(out);
    log_info("vocab: " + std::to_string(vocab.size()) + " tokens, digest " + hex64(vocab.digest()));
    return 0;
}

int run_train(int stage, const std::string& corpus_path, const std::string& vocab_path,
              const std::string& config_path, const std::string& out, const std::string& resume_path,
              const std::string& stage1_path, const std::string& log_path) {
    Manifest mf;
    mf.command = stage == 1 ? "train-stage1" : "train-stage2";
    json cfg = load_config(config_path);
    auto corpus = parse_corpus(corpus_path);
    Vocab vocab = Vocab::load(vocab_path);
    ModelConfig mcfg = model_from(cfg);
    TrainConfig tcfg = train_from(cfg);
    if (mcfg.vocab_size == 0) mcfg.vocab_size = vocab.size();
    mf.config = resolved_config(mcfg, tcfg);
    mf.seed = tcfg.seed;
    mf.inputs = {corpus_path, vocab_path};
    if (!config_path.empty()) mf.inputs.push_back(config_path);

    TrainOptions opts;
    Checkpoint resumed;
    if (!resume_path.empty()) {
        resumed = load_checkpoint(resume_path);
        opts.resume = &resumed;
        mf.inputs.push_back(resume_path);
    }
    opts.on_step = [](const StepLog& log) {
        log_info("step " + std::to_string(log.step) + " stage " + std::to_string(log.stage) + " loss " +
                 std::to_string(log.total));
    };

    TrainResult result;
    if (stage == 1) {
        result = train_stage1(corpus, vocab, mcfg, tcfg, opts);
    } else {
        Checkpoint stage1;
        const Checkpoint* s1 = nullptr;
        if (!stage1_path.empty()) {
            stage1 = load_checkpoint(stage1_path);
            s1 = &stage1;
            mf.inputs.push_back(stage1_path);
        }
        result = train_stage2(corpus, vocab, mcfg, tcfg, s1, opts);
    }
    save_checkpoint(result.checkpoint, out);
    mf.outputs = {out};
    std::string lp = log_path.empty() ? out + ".log.jsonl" : log_path;
    write_step_logs(result.logs, lp);
    mf.outputs.push_back(lp);
    mf.write(out);
    log_info(mf.command + ": " + std::to_string(result.logs.size()) + " steps");
    return 0;
}

int run_generate(const std::string& ckpt_path, const std::string& vocab_path, const std::string& in,
                 const std::string& out) {
    Manifest mf;
    mf.command = "generate";
    Checkpoint ckpt = load_checkpoint(ckpt_path);
    Vocab vocab = Vocab::load(vocab_path);
    if (vocab.digest() != ckpt.vocab_digest) throw DataError("vocab does not match the checkpoint");
    auto corpus = parse_corpus(in);
    mf.config = resolved_config(ckpt.model, ckpt.train);
    mf.seed = ckpt.train.seed;
    mf.inputs = {ckpt_path, vocab_path, in};

    json results = json::array();
    for (const auto& conv : corpus) {
        auto ctx = serialize_context(conv, vocab, ckpt.model.max_len);
        auto hyps = beam_search(ctx, ckpt.model, ckpt.params, ckpt.train.beam);
        json hj = json::array();
        for (const auto& h : hyps)
            hj.push_back(json{{"text", hypothesis_text(h, vocab)},
                              {"score", h.normalized_score(ckpt.train.beam.length_penalty)}});
        results.push_back(json{{"id", conv.id}, {"target_speaker", conv.target_speaker()}, {"hypotheses", hj}});
    }
    write_file(out, results.dump(2) + "\n");
    mf.outputs = {out};
    mf.write(out);
    log_info("generate: " + std::to_string(corpus.size()) + " conversations");
    return 0;
}

int run_eval(const std::string& ckpt_path, const std::string& vocab_path, const std::string& in,
             const std::string& out, const std::string& train_path, const std::string& config_path) {
    Manifest mf;
    mf.command = "eval";
    json cfg = load_config(config_path);
    Checkpoint ckpt = load_checkpoint(ckpt_path);
    Vocab vocab = Vocab::load(vocab_path);
    auto corpus = parse_corpus(in);
    mf.config = cfg;
    mf.seed = ckpt.train.seed;
    mf.inputs = {ckpt_path, vocab_path, in};
    if (!config_path.empty()) mf.inputs.push_back(config_path);

    EvalFilters filters;
    if (cfg.contains("min_speakers")) filters.min_speakers = cfg["min_speakers"].get<int>();
    if (cfg.contains("max_speakers")) filters.max_speakers = cfg["max_speakers"].get<int>();
    if (cfg.contains("max_target_speaker_frequency")) {
        if (train_path.empty()) throw UsageError("rare-speaker filtering requires --train");
        filters.max_target_speaker_frequency = cfg["max_target_speaker_frequency"].get<int>();
        filters.train_frequency = speaker_response_frequency(parse_corpus(train_path));
        mf.inputs.push_back(train_path);
    }
    EvalSettings settings;
    settings.beam = ckpt.train.beam;
    settings.beam.width = cfg.value("beam_width", settings.beam.width);
    settings.embedding_diagnostics = cfg.value("embedding_diagnostics", false);

    std::vector<PerSampleScore> per_sample;
    MetricsReport report = evaluate(ckpt, corpus, vocab, settings, filters, &per_sample);
    json jr = json::parse(report.to_json());
    json ps = json::array();
    for (const auto& s : per_sample)
        ps.push_back(json{{"id", s.conv_id}, {"f1", s.f1}, {"rouge_l", s.rouge_l}, {"hypothesis", s.hypothesis}});
    jr["per_sample"] = ps;
    write_file(out, jr.dump(2) + "\n");
    mf.outputs = {out};
    mf.write(out);
    std::cout << report.to_json() << "\n";
    return 0;
}

int run_gradcheck(const std::string& config_path, const std::string& out) {
    Manifest mf;
    mf.command = "gradcheck";
    json cfg = load_config(config_path);
    ModelConfig mcfg = model_from(cfg);
    if (!cfg.contains("model")) {  // desk-scale default
        mcfg.d_model = 16;
        mcfg.heads = 2;
        mcfg.ff_dim = 16;
        mcfg.vocab_size = 20;
        mcfg.max_len = 32;
        mcfg.seed = 5;
    }
    double tolerance = cfg.value("tolerance", 1e-4);
    mf.config = json{{"model", json::parse(model_config_to_json(mcfg))}, {"tolerance", tolerance}};
    mf.seed = mcfg.seed;
    if (!config_path.empty()) mf.inputs.push_back(config_path);

    auto params = init_parameters<double>(mcfg);
    std::vector<std::pair<std::string, Tensor<double>*>> leaves;
    for (const auto& name : params.order) leaves.push_back({name, &params.at(name)});
    int v = mcfg.vocab_size;
    auto tok = [&](int i) { return Vocab::kNumSpecials + (i % (v - Vocab::kNumSpecials)); };
    LossOptions lopt;

    auto stage1_loss = [&] {
        Tape<double> tape;
        std::vector<int> embs;
        for (int u = 0; u < 4; ++u) {
            std::vector<int> ids = {Vocab::kBos, tok(3 * u), tok(3 * u + 1), tok(3 * u + 2), Vocab::kSep};
            embs.push_back(embed_utterance(tape, ids, mcfg, params));
        }
        int loss = info_nce(tape, embs[0], embs[1], {embs[2], embs[3]}, lopt);
        tape.backward(loss);
        return tape.value(loss).data[0];
    };
    auto stage2_loss = [&] {
        Tape<double> tape;
        std::vector<int> ctx = {Vocab::kBos, tok(0), tok(4), tok(9), Vocab::kSep, tok(6), tok(12), Vocab::kSep, tok(7)};
        std::vector<int> prefix = {Vocab::kBos, tok(8), tok(9)};
        std::vector<int> gold = {tok(8), tok(9), Vocab::kEos};
        int logits = generation_forward(tape, ctx, prefix, mcfg, params);
        int gen = generation_loss(tape, logits, gold, lopt);
        int q = embed_utterance(tape, ctx, mcfg, params);
        int pos = embed_utterance(tape, {Vocab::kBos, tok(8), tok(9)}, mcfg, params);
        int neg = embed_utterance(tape, {Vocab::kBos, tok(1), tok(2)}, mcfg, params);
        int cl = info_nce(tape, q, pos, {neg}, lopt);
        int loss = combined_loss(tape, gen, cl, lopt.lambda);
        tape.backward(loss);
        return tape.value(loss).data[0];
    };

    json rows = json::array();
    bool ok = true;
    auto record = [&](const std::string& name, const GradCheckRow& row) {
        bool pass = row.max_rel_error <= tolerance;
        ok = ok && pass;
        std::cout << (pass ? "PASS" : "FAIL") << "  " << name << "  max_rel_error=" << std::scientific
                  << std::setprecision(3) << row.max_rel_error << "  worst=" << row.name << "\n";
        rows.push_back(json{{"loss", name}, {"max_rel_error", row.max_rel_error}, {"worst", row.name}, {"pass", pass}});
    };
    record("stage1_info_nce", grad_check(stage1_loss, leaves));
    record("stage2_combined", grad_check(stage2_loss, leaves));

    if (!out.empty()) {
        write_file(out, rows.dump(2) + "\n");
        mf.outputs = {out};
        mf.write(out);
    }
    if (!ok) throw NumericError("gradient check failed");
    return 0;
}

int run_sweep(const std::string& grid, const std::string& config_path, const std::string& out) {
    Manifest mf;
    mf.command = "sweep-negatives";
    if (grid != "default") throw UsageError("unknown grid: " + grid);
    json cfg = load_config(config_path);
    ModelConfig mcfg = model_from(cfg);
    TrainConfig tcfg = train_from(cfg);
    if (!cfg.contains("model")) {
        mcfg.d_model = 16;
        mcfg.heads = 2;
        mcfg.ff_dim = 16;
        mcfg.max_len = 64;
        mcfg.seed = 5;
    }
    if (!cfg.contains("train")) {
        tcfg.learning_rate = 1e-3;
        tcfg.stage1_epochs = 2;
        tcfg.stage2_epochs = 1;
        tcfg.beam.max_len = 6;
    }
    uint64_t synth_seed = cfg.value("synth_seed", 15);
    auto corpus = make_synthetic_corpus(4, cfg.value("conversations", 8), 4, 10, synth_seed);
    Vocab vocab = Vocab::build(corpus, 4096);
    mcfg.vocab_size = vocab.size();
    mf.config = resolved_config(mcfg, tcfg);
    mf.config["grid"] = grid;
    mf.config["synth_seed"] = synth_seed;
    mf.seed = tcfg.seed;
    if (!config_path.empty()) mf.inputs.push_back(config_path);

    // (N1, T1, N2, T2, P, B): in-batch and same-conversation counts per stage,
    // previous-utterance and beam counts
    const std::vector<std::array<int, 6>> rows = {
        {1, 1, 1, 1, 1, 1}, {2, 2, 2, 1, 1, 1}, {3, 3, 3, 1, 1, 1}, {4, 4, 4, 2, 1, 2},
        {5, 5, 5, 3, 1, 3}, {6, 6, 6, 3, 2, 3}, {8, 8, 8, 4, 3, 4}};

    json results = json::array();
    std::cout << "N1,T1,N2,T2,P,B    f1    bleu1  bleu2  bleu3  rouge_l\n";
    for (const auto& r : rows) {
        TrainConfig row_cfg = tcfg;
        row_cfg.sampling.stage1_in_batch = r[0];
        row_cfg.sampling.stage1_same_conv = r[1];
        row_cfg.sampling.stage2_in_batch = r[2];
        row_cfg.sampling.stage2_same_conv = r[3];
        row_cfg.sampling.stage2_previous = r[4];
        row_cfg.sampling.stage2_beam = r[5];
        auto s1 = train_stage1(corpus, vocab, mcfg, row_cfg);
        auto s2 = train_stage2(corpus, vocab, mcfg, row_cfg, &s1.checkpoint);
        EvalSettings settings;
        settings.beam = row_cfg.beam;
        settings.beam.width = 2;
        MetricsReport rep = evaluate(s2.checkpoint, corpus, vocab, settings);
        std::ostringstream label;
        label << r[0] << "," << r[1] << "," << r[2] << "," << r[3] << "," << r[4] << "," << r[5];
        std::cout << std::left << std::setw(18) << label.str() << std::fixed << std::setprecision(2) << rep.f1
                  << "  " << rep.bleu1 << "  " << rep.bleu2 << "  " << rep.bleu3 << "  " << rep.rouge_l << "\n";
        json jrow = json::parse(rep.to_json());
        jrow["negatives"] = r;
        results.push_back(jrow);
    }
    write_file(out, results.dump(2) + "\n");
    mf.outputs = {out};
    mf.write(out);
    return 0;
}

int run_synth(const std::string& out, const std::string& config_path) {
    Manifest mf;
    mf.command = "synth";
    json cfg = load_config(config_path);
    int speakers = cfg.value("speakers", 4);
    int conversations = cfg.value("conversations", 50);
    int utterances = cfg.value("utterances_per_conv", 5);
    int partition = cfg.value("vocab_partition_size", 12);
    uint64_t seed = cfg.value("seed", 7);
    mf.config = json{{"speakers", speakers},
                     {"conversations", conversations},
                     {"utterances_per_conv", utterances},
                     {"vocab_partition_size", partition},
                     {"seed", seed}};
    mf.seed = seed;
    if (!config_path.empty()) mf.inputs.push_back(config_path);
    auto corpus = make_synthetic_corpus(speakers, conversations, utterances, partition, seed);
    write_corpus(corpus, out);
    mf.outputs = {out};
    mf.write(out);
    log_info("synth: " + std::to_string(corpus.size()) + " conversations");
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Two-stage contrastive training for multi-party dialogue response generation"};
    app.require_subcommand(1);
    bool single_thread = false;
    app.add_flag("--single-thread", single_thread, "Force single-threaded execution (determinism mode)");

    std::string in, out, report, config, corpus_path, vocab_path, resume, stage1, log_path, ckpt, train_path;
    std::string grid = "default";

    auto* clean = app.add_subcommand("clean", "Filter a JSONL corpus by the cleaning rules");
    clean->add_option("--in", in, "Input corpus JSONL")->required();
    clean->add_option("--out", out, "Cleaned corpus JSONL")->required();
    clean->add_option("--report", report, "Cleaning report JSON (default <out>.report.json)");
    clean->add_option("--config", config, "Cleaning rules JSON");

    auto* vocab_cmd = app.add_subcommand("vocab", "Build a vocabulary from a training corpus");
    vocab_cmd->add_option("--in", in, "Training corpus JSONL")->required();
    vocab_cmd->add_option("--out", out, "Vocabulary JSON")->required();
    vocab_cmd->add_option("--config", config, "Options JSON ({\"max_size\": N})");

    auto* t1 = app.add_subcommand("train-stage1", "Speaker-discrimination contrastive pretraining");
    t1->add_option("--corpus", corpus_path, "Training corpus JSONL")->required();
    t1->add_option("--vocab", vocab_path, "Vocabulary JSON")->required();
    t1->add_option("--config", config, "Model + training config JSON");
    t1->add_option("--out", out, "Output checkpoint")->required();
    t1->add_option("--resume", resume, "Checkpoint to resume from");
    t1->add_option("--log", log_path, "Step log JSONL (default <out>.log.jsonl)");

    auto* t2 = app.add_subcommand("train-stage2", "Joint generation + contrastive fine-tuning");
    t2->add_option("--corpus", corpus_path, "Training corpus JSONL")->required();
    t2->add_option("--vocab", vocab_path, "Vocabulary JSON")->required();
    t2->add_option("--config", config, "Model + training config JSON");
    t2->add_option("--out", out, "Output checkpoint")->required();
    t2->add_option("--stage1", stage1, "Stage 1 checkpoint to initialize from");
    t2->add_option("--resume", resume, "Checkpoint to resume from");
    t2->add_option("--log", log_path, "Step log JSONL (default <out>.log.jsonl)");

    auto* gen = app.add_subcommand("generate", "Beam-search responses for each conversation");
    gen->add_option("--checkpoint", ckpt, "Trained checkpoint")->required();
    gen->add_option("--vocab", vocab_path, "Vocabulary JSON")->required();
    gen->add_option("--in", in, "Test corpus JSONL")->required();
    gen->add_option("--out", out, "Hypotheses JSON")->required();

    auto* ev = app.add_subcommand("eval", "Score generated responses against gold");
    ev->add_option("--checkpoint", ckpt, "Trained checkpoint")->required();
    ev->add_option("--vocab", vocab_path, "Vocabulary JSON")->required();
    ev->add_option("--in", in, "Test corpus JSONL")->required();
    ev->add_option("--out", out, "Metrics report JSON")->required();
    ev->add_option("--train", train_path, "Training corpus (for rare-speaker filtering)");
    ev->add_option("--config", config, "Filter + decoding options JSON");

    auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of both training losses");
    gc->add_option("--config", config, "Model config JSON (default micro scale)");
    gc->add_option("--out", out, "Result table JSON");

    auto* sw = app.add_subcommand("sweep-negatives", "Train the negative-count grid at micro scale");
    sw->add_option("--grid", grid, "Grid name (default)");
    sw->add_option("--config", config, "Model + training config JSON");
    sw->add_option("--out", out, "Results JSON")->required();

    auto* sy = app.add_subcommand("synth", "Emit a styled synthetic corpus");
    sy->add_option("--out", out, "Output corpus JSONL")->required();
    sy->add_option("--config", config, "Generation options JSON");

    try {
        app.parse(argc, argv);
        if (clean->parsed()) return run_clean(in, out, report, config);
        if (vocab_cmd->parsed()) return run_vocab(in, out, config);
        if (t1->parsed()) return run_train(1, corpus_path, vocab_path, config, out, resume, "", log_path);
        if (t2->parsed()) return run_train(2, corpus_path, vocab_path, config, out, resume, stage1, log_path);
        if (gen->parsed()) return run_generate(ckpt, vocab_path, in, out);
        if (ev->parsed()) return run_eval(ckpt, vocab_path, in, out, train_path, config);
        if (gc->parsed()) return run_gradcheck(config, out);
        if (sw->parsed()) return run_sweep(grid, config, out);
        if (sy->parsed()) return run_synth(out, config);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;
    } catch (const UsageError& e) {
        log_error(e.what());
        return 1;
    } catch (const DataError& e) {
        log_error(e.what());
        return 2;
    } catch (const NumericError& e) {
        log_error(e.what());
        return 3;
    } catch (const ShapeError& e) {
        log_error(e.what());
        return 3;
    }
    return 0;
}

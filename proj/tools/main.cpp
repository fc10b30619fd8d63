#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "diffrte/checkpoint.hpp"
#include "diffrte/config.hpp"
#include "diffrte/data.hpp"
#include "diffrte/inference.hpp"
#include "diffrte/training.hpp"

namespace fs = std::filesystem;
using namespace diffrte;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

int default_threads() {
    if (const char* env = std::getenv("DIFFRTE_THREADS")) {
        const int n = std::atoi(env);
        if (n >= 1) return n;
    }
    return 1;
}

std::vector<int> parse_grid(const std::string& csv) {
    std::vector<int> out;
    std::stringstream in(csv);
    std::string item;
    while (std::getline(in, item, ',')) {
        if (item.empty()) continue;
        out.push_back(std::stoi(item));
    }
    if (out.empty()) throw DataError("empty grid: " + csv);
    return out;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open for writing: " + path);
    out << text;
    if (!out) throw DataError("write failed: " + path);
}

// Rebuilds a model (architecture from the config echo, weights from the
// parameter sections) together with its token/relation inventories.
std::pair<RunConfig, Model> model_from_checkpoint(const Checkpoint& ckpt,
                                                  Inventories& inventories) {
    const RunConfig config = RunConfig::from_key_values(parse_key_values(ckpt.config_echo));
    inventories.vocab = ckpt.vocab;
    inventories.relations = ckpt.relations;
    const ModelConfig mc = config.model_config(static_cast<int>(ckpt.vocab.size()),
                                               std::max<int>(1, static_cast<int>(ckpt.relations.size())));
    Rng init_rng(0);
    Model model = Model::init(mc, init_rng);
    restore_model(model, ckpt);
    return {config, std::move(model)};
}

int cmd_train(const std::string& config_path, const std::string& data_path,
              const std::string& out_dir, std::optional<std::uint64_t> seed,
              const std::string& relations_path) {
    RunConfig config = config_path.empty() ? RunConfig() : RunConfig::from_file(config_path);
    if (seed) config.seed = *seed;
    fs::create_directories(out_dir);

    const std::optional<std::string> rel =
        relations_path.empty() ? std::nullopt : std::optional<std::string>(relations_path);
    const Corpus corpus = load_jsonl(data_path, std::nullopt, rel);
    if (corpus.size() == 0) throw DataError("no usable sentences in " + data_path);

    const std::string echo = config.echo();
    write_text(out_dir + "/config.echo", echo);
    write_text(out_dir + "/relations.txt", [&] {
        std::string text;
        for (const auto& r : corpus.relations) text += r + "\n";
        return text;
    }());

    std::ofstream metrics(out_dir + "/metrics.jsonl");
    if (!metrics) throw DataError("cannot open metrics log in " + out_dir);

    const auto on_metrics = [&](const StepMetrics& m) {
        metrics << metrics_to_json(m, config.log_timing) << "\n";
    };
    const auto on_checkpoint = [&](const Model& model, int epoch, long step,
                                   const std::array<std::uint64_t, 4>& rng_state) {
        const bool final_ckpt = epoch + 1 >= config.epochs;
        std::ostringstream name;
        if (final_ckpt) {
            name << out_dir << "/checkpoint.bin";
        } else {
            name << out_dir << "/checkpoint_epoch" << (epoch + 1) << ".bin";
        }
        save_checkpoint(name.str(),
                        checkpoint_from_model(model, echo, corpus.vocab, corpus.relations,
                                              rng_state, static_cast<std::uint64_t>(step)));
    };

    const TrainResult result = train(corpus, config, on_metrics, on_checkpoint);
    metrics.flush();
    if (!metrics) throw DataError("metrics log write failed in " + out_dir);
    std::cout << "trained " << result.steps << " steps over " << corpus.size()
              << " sentences; checkpoint: " << out_dir << "/checkpoint.bin\n";
    return kExitOk;
}

int cmd_infer(const std::string& ckpt_path, const std::string& data_path, int d_blocks, int sigma,
              double phi, int batch, const std::string& out_path, std::uint64_t seed, int threads,
              bool strict) {
    const Checkpoint ckpt = load_checkpoint(ckpt_path);
    Inventories inventories;
    auto [config, model] = model_from_checkpoint(ckpt, inventories);
    const Corpus corpus = load_jsonl(data_path, inventories);
    const NoiseSchedule schedule =
        build_schedule(config.timesteps, config.schedule_kind(), config.beta_start, config.beta_end);
    const SamplingPlan plan = SamplingPlan::make(schedule.T, sigma, d_blocks, phi);

    InferOptions options;
    options.seed = seed;
    options.threads = threads;
    options.batch = batch;
    options.strict_length = strict;
    options.phi_mode = config.phi_score_mode();
    options.mid_mode = config.reconstruct_mid_mode();

    const CorpusInference result = infer_corpus(model, corpus, schedule, plan, options);
    write_predictions(result.predictions, out_path);
    write_text(out_path + ".timing.json", result.timing.serialize());
    std::cout << "wrote " << result.predictions.size() << " predictions to " << out_path << " ("
              << result.timing.batch1_ms_per_sentence << " ms/sentence at batch 1)\n";
    return kExitOk;
}

int cmd_eval(const std::string& pred_path, const std::string& gold_path, const std::string& mode,
             const std::string& split, const std::string& ckpt_path,
             const std::string& relations_path) {
    std::optional<Inventories> inventories;
    std::optional<std::string> rel_file;
    if (!ckpt_path.empty()) {
        const Checkpoint ckpt = load_checkpoint(ckpt_path);
        inventories = Inventories{ckpt.vocab, ckpt.relations};
    } else if (!relations_path.empty()) {
        rel_file = relations_path;
    }
    const Corpus gold = load_jsonl(gold_path, inventories, rel_file);
    const auto preds = load_predictions(pred_path);
    const MatchMode match = mode == "last_word" ? MatchMode::last_word : MatchMode::exact;
    const EvalReport report = evaluate(predictions_to_triples(preds, gold.size()), gold, match);
    if (split == "none") {
        EvalReport overall_only;
        overall_only.overall = report.overall;
        std::cout << overall_only.serialize();
    } else {
        std::cout << report.serialize();
    }
    return kExitOk;
}

int cmd_synth(std::size_t sentences, int relation_count, std::uint64_t seed,
              const std::string& out_path, int vocab, int len_min, int len_max,
              const std::string& relations_out) {
    SynthSpec spec;
    spec.sentences = sentences;
    spec.relation_count = relation_count;
    spec.vocab_words = vocab;
    spec.len_min = len_min;
    spec.len_max = len_max;
    Rng rng(seed);
    const Corpus corpus = synth_corpus(spec, rng);
    write_jsonl(corpus, out_path);
    if (!relations_out.empty()) {
        std::string text;
        for (const auto& r : corpus.relations) text += r + "\n";
        write_text(relations_out, text);
    }
    std::size_t triples = 0;
    for (const auto& g : corpus.gold) triples += g.size();
    std::cout << "wrote " << corpus.size() << " sentences / " << triples << " triples to "
              << out_path << "\n";
    return kExitOk;
}

int cmd_ablate(const std::string& ckpt_path, const std::string& data_path,
               const std::string& out_path, const std::string& d_grid_csv,
               const std::string& sigma_grid_csv, double phi, std::uint64_t seed, int threads) {
    const Checkpoint ckpt = load_checkpoint(ckpt_path);
    Inventories inventories;
    auto [config, model] = model_from_checkpoint(ckpt, inventories);
    const Corpus corpus = load_jsonl(data_path, inventories);
    const NoiseSchedule schedule =
        build_schedule(config.timesteps, config.schedule_kind(), config.beta_start, config.beta_end);
    InferOptions options;
    options.seed = seed;
    options.threads = threads;
    options.phi_mode = config.phi_score_mode();
    options.mid_mode = config.reconstruct_mid_mode();
    const auto cells = ablate(model, corpus, schedule, parse_grid(d_grid_csv),
                              parse_grid(sigma_grid_csv), phi, options);
    const std::string csv = ablation_csv(cells);
    write_text(out_path, csv);
    std::cout << csv;
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Relational triple extraction with block-denoising diffusion"};
    app.require_subcommand(1);

    // train
    auto* train_cmd = app.add_subcommand("train", "Train a model on a JSONL corpus");
    std::string train_config, train_data, train_out, train_relations;
    std::optional<std::uint64_t> train_seed;
    train_cmd->add_option("--config", train_config, "Flat key=value config file");
    train_cmd->add_option("--data", train_data, "Training corpus (JSONL)")->required();
    train_cmd->add_option("--out", train_out, "Output directory")->required();
    train_cmd->add_option("--seed", train_seed, "Seed override (default 42 from config)");
    train_cmd->add_option("--relations", train_relations,
                          "Relation inventory file (one name per line)");

    // infer
    auto* infer_cmd = app.add_subcommand("infer", "Generate triples with a trained checkpoint");
    std::string infer_ckpt, infer_data, infer_out;
    int infer_d = 30, infer_sigma = 10, infer_batch = 8;
    double infer_phi = 4.0;
    std::uint64_t infer_seed = 42;
    int infer_threads = default_threads();
    bool infer_strict = false;
    infer_cmd->add_option("--checkpoint", infer_ckpt, "Checkpoint file")->required();
    infer_cmd->add_option("--data", infer_data, "Input corpus (JSONL)")->required();
    infer_cmd->add_option("--D", infer_d, "Denoising blocks per sentence")->capture_default_str();
    infer_cmd->add_option("--sigma", infer_sigma, "Reverse sampling steps")->capture_default_str();
    infer_cmd->add_option("--phi", infer_phi, "Confidence threshold")->capture_default_str();
    infer_cmd->add_option("--batch", infer_batch, "Batch size for the timing report")
        ->capture_default_str();
    infer_cmd->add_option("--out", infer_out, "Predictions file (JSONL)")->required();
    infer_cmd->add_option("--seed", infer_seed, "Noise seed")->capture_default_str();
    infer_cmd->add_option("--threads", infer_threads, "Worker threads (env DIFFRTE_THREADS)")
        ->capture_default_str();
    infer_cmd->add_flag("--strict", infer_strict, "Error on over-length sentences instead of truncating");

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "Score predictions against gold triples");
    std::string eval_pred, eval_gold, eval_mode = "exact", eval_split = "patterns";
    std::string eval_ckpt, eval_relations;
    eval_cmd->add_option("--pred", eval_pred, "Predictions file (JSONL)")->required();
    eval_cmd->add_option("--gold", eval_gold, "Gold corpus (JSONL)")->required();
    eval_cmd->add_option("--mode", eval_mode, "Matching rule")
        ->check(CLI::IsMember({"exact", "last_word"}))
        ->capture_default_str();
    eval_cmd->add_option("--split", eval_split, "Report breakdowns (patterns) or overall only (none)")
        ->check(CLI::IsMember({"patterns", "none"}))
        ->capture_default_str();
    eval_cmd->add_option("--checkpoint", eval_ckpt, "Checkpoint supplying the relation inventory");
    eval_cmd->add_option("--relations", eval_relations, "Relation inventory file");

    // synth
    auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic corpus");
    std::size_t synth_sentences = 64;
    int synth_k = 4, synth_vocab = 50, synth_lmin = 8, synth_lmax = 20;
    std::uint64_t synth_seed = 7;
    std::string synth_out, synth_relations_out;
    synth_cmd->add_option("--sentences", synth_sentences, "Sentence count")->capture_default_str();
    synth_cmd->add_option("--K", synth_k, "Relation count")->capture_default_str();
    synth_cmd->add_option("--seed", synth_seed, "Generator seed")->capture_default_str();
    synth_cmd->add_option("--out", synth_out, "Output corpus (JSONL)")->required();
    synth_cmd->add_option("--vocab", synth_vocab, "Vocabulary words")->capture_default_str();
    synth_cmd->add_option("--lmin", synth_lmin, "Minimum sentence length")->capture_default_str();
    synth_cmd->add_option("--lmax", synth_lmax, "Maximum sentence length")->capture_default_str();
    synth_cmd->add_option("--relations-out", synth_relations_out,
                          "Also write the relation inventory file");

    // ablate
    auto* ablate_cmd = app.add_subcommand("ablate", "Sweep D and sigma, reporting F1 and latency");
    std::string ablate_ckpt, ablate_data, ablate_out;
    std::string ablate_d_grid = "5,10,15,20,25,30", ablate_sigma_grid = "5,10,15";
    double ablate_phi = 4.0;
    std::uint64_t ablate_seed = 42;
    int ablate_threads = default_threads();
    ablate_cmd->add_option("--checkpoint", ablate_ckpt, "Checkpoint file")->required();
    ablate_cmd->add_option("--data", ablate_data, "Corpus (JSONL)")->required();
    ablate_cmd->add_option("--out", ablate_out, "Output CSV")->required();
    ablate_cmd->add_option("--D-grid", ablate_d_grid, "Comma-separated D values")
        ->capture_default_str();
    ablate_cmd->add_option("--sigma-grid", ablate_sigma_grid, "Comma-separated sigma values")
        ->capture_default_str();
    ablate_cmd->add_option("--phi", ablate_phi, "Confidence threshold")->capture_default_str();
    ablate_cmd->add_option("--seed", ablate_seed, "Noise seed")->capture_default_str();
    ablate_cmd->add_option("--threads", ablate_threads, "Worker threads")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (train_cmd->parsed()) {
            return cmd_train(train_config, train_data, train_out, train_seed, train_relations);
        }
        if (infer_cmd->parsed()) {
            return cmd_infer(infer_ckpt, infer_data, infer_d, infer_sigma, infer_phi, infer_batch,
                             infer_out, infer_seed, infer_threads, infer_strict);
        }
        if (eval_cmd->parsed()) {
            return cmd_eval(eval_pred, eval_gold, eval_mode, eval_split, eval_ckpt, eval_relations);
        }
        if (synth_cmd->parsed()) {
            return cmd_synth(synth_sentences, synth_k, synth_seed, synth_out, synth_vocab,
                             synth_lmin, synth_lmax, synth_relations_out);
        }
        if (ablate_cmd->parsed()) {
            return cmd_ablate(ablate_ckpt, ablate_data, ablate_out, ablate_d_grid,
                              ablate_sigma_grid, ablate_phi, ablate_seed, ablate_threads);
        }
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const ValidationError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitNumeric;
    }
    return kExitUsage;
}

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <fstream>
#include <optional>
#include <sstream>

#include "diffrte/checkpoint.hpp"
#include "diffrte/config.hpp"
#include "diffrte/data.hpp"
#include "diffrte/inference.hpp"
#include "diffrte/training.hpp"

namespace py = pybind11;
using namespace diffrte;

namespace {

BlockProbabilities probs_from_lists(const std::vector<std::vector<double>>& up,
                                    const std::vector<std::vector<double>>& down,
                                    const std::vector<std::vector<double>>& left,
                                    const std::vector<std::vector<double>>& right,
                                    const std::vector<std::vector<double>>& level) {
    auto to_tensor = [](const std::vector<std::vector<double>>& rows) {
        if (rows.empty()) throw ValidationError("empty probability table");
        const std::size_t cols = rows[0].size();
        std::vector<double> flat;
        flat.reserve(rows.size() * cols);
        for (const auto& r : rows) {
            if (r.size() != cols) throw ValidationError("ragged probability table");
            flat.insert(flat.end(), r.begin(), r.end());
        }
        return Tensor({rows.size(), cols}, std::move(flat));
    };
    BlockProbabilities p;
    p.up = to_tensor(up);
    p.down = to_tensor(down);
    p.left = to_tensor(left);
    p.right = to_tensor(right);
    p.level = to_tensor(level);
    return p;
}

RunConfig config_from_overrides(const std::map<std::string, std::string>& overrides) {
    return RunConfig::from_key_values(overrides);
}

void train_file(const std::string& data_path, const std::string& out_dir,
                const std::map<std::string, std::string>& overrides) {
    const RunConfig config = config_from_overrides(overrides);
    const Corpus corpus = load_jsonl(data_path);
    std::ofstream metrics(out_dir + "/metrics.jsonl");
    if (!metrics) throw DataError("cannot open metrics log in " + out_dir);
    const std::string echo = config.echo();
    {
        std::ofstream echo_out(out_dir + "/config.echo");
        echo_out << echo;
    }
    const auto on_metrics = [&](const StepMetrics& m) {
        metrics << metrics_to_json(m, config.log_timing) << "\n";
    };
    const auto on_checkpoint = [&](const Model& model, int epoch, long step,
                                   const std::array<std::uint64_t, 4>& rng_state) {
        if (epoch + 1 >= config.epochs) {
            save_checkpoint(out_dir + "/checkpoint.bin",
                            checkpoint_from_model(model, echo, corpus.vocab, corpus.relations,
                                                  rng_state, static_cast<std::uint64_t>(step)));
        }
    };
    train(corpus, config, on_metrics, on_checkpoint);
}

std::map<std::string, double> infer_file(const std::string& ckpt_path,
                                         const std::string& data_path,
                                         const std::string& out_path, int d_blocks, int sigma,
                                         double phi, std::uint64_t seed) {
    const Checkpoint ckpt = load_checkpoint(ckpt_path);
    const RunConfig config = RunConfig::from_key_values(parse_key_values(ckpt.config_echo));
    const ModelConfig mc =
        config.model_config(static_cast<int>(ckpt.vocab.size()),
                            std::max<int>(1, static_cast<int>(ckpt.relations.size())));
    Rng init_rng(0);
    Model model = Model::init(mc, init_rng);
    restore_model(model, ckpt);
    const Corpus corpus = load_jsonl(data_path, Inventories{ckpt.vocab, ckpt.relations});
    const NoiseSchedule schedule =
        build_schedule(config.timesteps, config.schedule_kind(), config.beta_start, config.beta_end);
    const SamplingPlan plan = SamplingPlan::make(schedule.T, sigma, d_blocks, phi);
    InferOptions options;
    options.seed = seed;
    options.phi_mode = config.phi_score_mode();
    options.mid_mode = config.reconstruct_mid_mode();
    const CorpusInference result = infer_corpus(model, corpus, schedule, plan, options);
    write_predictions(result.predictions, out_path);
    return {{"sentences", static_cast<double>(result.timing.sentences)},
            {"batch_1_ms_per_sentence", result.timing.batch1_ms_per_sentence}};
}

std::map<std::string, double> eval_files(const std::string& pred_path,
                                         const std::string& gold_path, const std::string& mode,
                                         const std::string& ckpt_path) {
    std::optional<Inventories> inventories;
    if (!ckpt_path.empty()) {
        const Checkpoint ckpt = load_checkpoint(ckpt_path);
        inventories = Inventories{ckpt.vocab, ckpt.relations};
    }
    const Corpus gold = load_jsonl(gold_path, inventories);
    const auto preds = load_predictions(pred_path);
    const MatchMode match = mode == "last_word" ? MatchMode::last_word : MatchMode::exact;
    const EvalReport report = evaluate(predictions_to_triples(preds, gold.size()), gold, match);
    return {{"precision", report.overall.precision()},
            {"recall", report.overall.recall()},
            {"f1", report.overall.f1()},
            {"correct", static_cast<double>(report.overall.correct)},
            {"predicted", static_cast<double>(report.overall.predicted)},
            {"gold", static_cast<double>(report.overall.gold_count)}};
}

}  // namespace

PYBIND11_MODULE(diffrte, m) {
    m.doc() = "Relational triple extraction with block-denoising diffusion";

    py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
    py::register_exception<DataError>(m, "DataError", PyExc_IOError);
    py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

    py::class_<Span>(m, "Span")
        .def(py::init<int, int>(), py::arg("start"), py::arg("end"))
        .def_readwrite("start", &Span::start)
        .def_readwrite("end", &Span::end)
        .def("__eq__", [](const Span& a, const Span& b) { return a == b; })
        .def("__repr__", [](const Span& s) {
            return "Span(" + std::to_string(s.start) + ", " + std::to_string(s.end) + ")";
        });

    py::class_<Triple>(m, "Triple")
        .def(py::init([](const Span& head, int relation, const Span& tail) {
                 return Triple{head, relation, tail};
             }),
             py::arg("head"), py::arg("relation"), py::arg("tail"))
        .def_readwrite("head", &Triple::head)
        .def_readwrite("relation", &Triple::relation)
        .def_readwrite("tail", &Triple::tail)
        .def("__eq__", [](const Triple& a, const Triple& b) { return a == b; })
        .def("__repr__", [](const Triple& t) {
            return "Triple([" + std::to_string(t.head.start) + "," + std::to_string(t.head.end) +
                   "], " + std::to_string(t.relation) + ", [" + std::to_string(t.tail.start) +
                   "," + std::to_string(t.tail.end) + "])";
        });

    py::class_<Block>(m, "Block")
        .def(py::init([](double up, double down, double left, double right, double level) {
                 return Block{up, down, left, right, level};
             }),
             py::arg("up"), py::arg("down"), py::arg("left"), py::arg("right"), py::arg("level"))
        .def_readwrite("up", &Block::up)
        .def_readwrite("down", &Block::down)
        .def_readwrite("left", &Block::left)
        .def_readwrite("right", &Block::right)
        .def_readwrite("level", &Block::level);

    py::class_<ScaleSpec>(m, "ScaleSpec")
        .def(py::init([](double lambda, int sentence_length, int relation_count) {
                 return ScaleSpec{lambda, sentence_length, relation_count};
             }),
             py::arg("lambda_") = 1.0, py::arg("sentence_length") = 1,
             py::arg("relation_count") = 1)
        .def_readwrite("lambda_", &ScaleSpec::lambda)
        .def_readwrite("sentence_length", &ScaleSpec::sentence_length)
        .def_readwrite("relation_count", &ScaleSpec::relation_count);

    m.def(
        "encode_blocks",
        [](const std::vector<Triple>& triples, const ScaleSpec& scale) {
            return encode_blocks(TripleSet(triples), scale);
        },
        py::arg("triples"), py::arg("scale"));
    m.def(
        "pbes_decode",
        [](const std::vector<Block>& blocks, const ScaleSpec& scale) {
            return pbes_decode(blocks, scale).items();
        },
        py::arg("blocks"), py::arg("scale"));
    m.def(
        "descale_to_indices",
        [](const Block& block, const ScaleSpec& scale) {
            const DiscreteBlock d = descale_to_indices(block, scale);
            return py::make_tuple(d.up, d.down, d.left, d.right, d.level);
        },
        py::arg("block"), py::arg("scale"));

    py::class_<NoiseSchedule>(m, "NoiseSchedule")
        .def_readonly("T", &NoiseSchedule::T)
        .def_readonly("beta", &NoiseSchedule::beta)
        .def_readonly("alpha", &NoiseSchedule::alpha)
        .def_readonly("alpha_bar", &NoiseSchedule::alpha_bar)
        .def("alpha_bar_at", &NoiseSchedule::alpha_bar_at);

    m.def(
        "build_schedule",
        [](int T, const std::string& kind, double beta_start, double beta_end) {
            return build_schedule(T, kind == "cosine" ? ScheduleKind::cosine : ScheduleKind::linear,
                                  beta_start, beta_end);
        },
        py::arg("T") = 1000, py::arg("kind") = "linear", py::arg("beta_start") = 1e-4,
        py::arg("beta_end") = 0.02);

    py::class_<SamplingPlan>(m, "SamplingPlan")
        .def_static("make", &SamplingPlan::make, py::arg("T"), py::arg("sigma") = 10,
                    py::arg("denoise_blocks") = 30, py::arg("phi") = 4.0)
        .def_readonly("sigma", &SamplingPlan::sigma)
        .def_readonly("tau", &SamplingPlan::tau)
        .def_readonly("denoise_blocks", &SamplingPlan::denoise_blocks)
        .def_readonly("phi", &SamplingPlan::phi);

    m.def(
        "forward_noise",
        [](const std::vector<Block>& z0, int t, const NoiseSchedule& schedule,
           std::uint64_t seed) {
            Rng rng(seed);
            return forward_noise(z0, t, schedule, rng);
        },
        py::arg("z0"), py::arg("t"), py::arg("schedule"), py::arg("seed"));
    m.def("ddim_step", &ddim_step, py::arg("z_cur"), py::arg("z0_hat"), py::arg("t_cur"),
          py::arg("t_prev"), py::arg("schedule"));
    m.def(
        "expand_blocks",
        [](const std::vector<Block>& gt, std::size_t n, std::uint64_t seed) {
            Rng rng(seed);
            const ExpandedBlocks e = expand_blocks(gt, n, rng);
            return py::make_tuple(e.z0, e.permutation, e.ground_truth_count);
        },
        py::arg("gt_blocks"), py::arg("n"), py::arg("seed"));
    m.def(
        "reconstruct_z0",
        [](const std::vector<std::vector<double>>& up, const std::vector<std::vector<double>>& down,
           const std::vector<std::vector<double>>& left,
           const std::vector<std::vector<double>>& right,
           const std::vector<std::vector<double>>& level, const ScaleSpec& scale,
           const std::string& mode) {
            return reconstruct_z0(probs_from_lists(up, down, left, right, level), scale,
                                  mode == "argmax" ? ReconstructMode::argmax
                                                   : ReconstructMode::expectation);
        },
        py::arg("up"), py::arg("down"), py::arg("left"), py::arg("right"), py::arg("level"),
        py::arg("scale"), py::arg("mode") = "expectation");
    m.def(
        "filter_blocks",
        [](const std::vector<std::vector<double>>& up, const std::vector<std::vector<double>>& down,
           const std::vector<std::vector<double>>& left,
           const std::vector<std::vector<double>>& right,
           const std::vector<std::vector<double>>& level, double phi, const ScaleSpec& scale) {
            return filter_blocks(probs_from_lists(up, down, left, right, level), phi, scale);
        },
        py::arg("up"), py::arg("down"), py::arg("left"), py::arg("right"), py::arg("level"),
        py::arg("phi"), py::arg("scale"));

    m.def(
        "optimal_assign",
        [](const std::vector<std::vector<double>>& cost_rows) {
            if (cost_rows.empty()) throw ValidationError("empty cost matrix");
            CostMatrix c;
            c.predictions = cost_rows.size();
            c.ground_truths = cost_rows[0].size();
            for (const auto& row : cost_rows) {
                if (row.size() != c.ground_truths) throw ValidationError("ragged cost matrix");
                c.cost.insert(c.cost.end(), row.begin(), row.end());
            }
            const AssignmentMap map = optimal_assign(c);
            return py::make_tuple(map.xi, map.core);
        },
        py::arg("cost"));

    m.def(
        "synth_corpus_jsonl",
        [](const std::string& out_path, std::size_t sentences, int relation_count,
           std::uint64_t seed, int vocab_words, int len_min, int len_max) {
            SynthSpec spec;
            spec.sentences = sentences;
            spec.relation_count = relation_count;
            spec.vocab_words = vocab_words;
            spec.len_min = len_min;
            spec.len_max = len_max;
            Rng rng(seed);
            const Corpus corpus = synth_corpus(spec, rng);
            write_jsonl(corpus, out_path);
            std::size_t triples = 0;
            for (const auto& g : corpus.gold) triples += g.size();
            return triples;
        },
        py::arg("out_path"), py::arg("sentences") = 64, py::arg("relation_count") = 4,
        py::arg("seed") = 7, py::arg("vocab_words") = 50, py::arg("len_min") = 8,
        py::arg("len_max") = 20);

    m.def("train_file", &train_file, py::arg("data_path"), py::arg("out_dir"),
          py::arg("overrides") = std::map<std::string, std::string>{},
          py::call_guard<py::gil_scoped_release>());
    m.def("infer_file", &infer_file, py::arg("checkpoint"), py::arg("data_path"),
          py::arg("out_path"), py::arg("denoise_blocks") = 30, py::arg("sigma") = 10,
          py::arg("phi") = 4.0, py::arg("seed") = 42,
          py::call_guard<py::gil_scoped_release>());
    m.def("eval_files", &eval_files, py::arg("pred_path"), py::arg("gold_path"),
          py::arg("mode") = "exact", py::arg("checkpoint") = std::string());
}

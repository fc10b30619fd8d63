#include "diffrte/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

namespace diffrte {

std::map<std::string, std::string> parse_key_values(const std::string& text) {
    std::map<std::string, std::string> kv;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            if (line.find_first_not_of(" \t\r") != std::string::npos) {
                throw DataError("config line " + std::to_string(line_no) + ": expected key = value");
            }
            continue;
        }
        auto trim = [](std::string s) {
            const auto b = s.find_first_not_of(" \t\r");
            const auto e = s.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) throw DataError("config line " + std::to_string(line_no) + ": empty key");
        kv[key] = value;
    }
    return kv;
}

std::map<std::string, std::string> load_key_values(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open config file: " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_key_values(buf.str());
}

namespace {

template <typename T>
T parse_number(const std::string& key, const std::string& value);

template <>
int parse_number<int>(const std::string& key, const std::string& value) {
    try {
        return std::stoi(value);
    } catch (const std::exception&) {
        throw DataError("config key '" + key + "': expected integer, got '" + value + "'");
    }
}

template <>
double parse_number<double>(const std::string& key, const std::string& value) {
    try {
        return std::stod(value);
    } catch (const std::exception&) {
        throw DataError("config key '" + key + "': expected number, got '" + value + "'");
    }
}

template <>
std::uint64_t parse_number<std::uint64_t>(const std::string& key, const std::string& value) {
    try {
        return std::stoull(value);
    } catch (const std::exception&) {
        throw DataError("config key '" + key + "': expected unsigned integer, got '" + value + "'");
    }
}

bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1" || value == "yes") return true;
    if (value == "false" || value == "0" || value == "no") return false;
    throw DataError("config key '" + key + "': expected boolean, got '" + value + "'");
}

std::string format_double(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

}  // namespace

RunConfig RunConfig::from_key_values(const std::map<std::string, std::string>& kv) {
    static const std::set<std::string> known = {
        "preset",       "d_model",       "d_embed",       "k_attn",
        "h_hidden",     "max_len",       "lambda",        "dropout",
        "soft_level_lookup", "level_pool", "timesteps",   "schedule",
        "beta_start",   "beta_end",      "expansion",     "loss_beta1",
        "loss_beta2",   "loss_beta3",    "lr",            "warmup_ratio",
        "grad_clip",    "weight_decay",  "adam_beta1",    "adam_beta2",
        "epochs",       "batch",         "seed",          "checkpoint_every",
        "log_timing",   "surplus",       "denoise_blocks", "sample_steps",
        "phi",          "phi_mode",      "reconstruct_mid"};
    for (const auto& [key, value] : kv) {
        if (!known.count(key)) throw DataError("config: unknown key '" + key + "'");
    }
    RunConfig c;
    auto geti = [&](const char* k, int& dst) {
        if (auto it = kv.find(k); it != kv.end()) dst = parse_number<int>(k, it->second);
    };
    auto getd = [&](const char* k, double& dst) {
        if (auto it = kv.find(k); it != kv.end()) dst = parse_number<double>(k, it->second);
    };
    auto gets = [&](const char* k, std::string& dst) {
        if (auto it = kv.find(k); it != kv.end()) dst = it->second;
    };
    auto getb = [&](const char* k, bool& dst) {
        if (auto it = kv.find(k); it != kv.end()) dst = parse_bool(k, it->second);
    };

    // Presets resolve first so explicit keys can override them.
    if (auto it = kv.find("preset"); it != kv.end()) {
        if (it->second == "reference") {
            // Matches the published setup; expects far more compute than the
            // desk defaults.
            c.d_model = 1024;
            c.k_attn = 1024;
            c.h_hidden = 1024;
            c.d_embed = 1024;
            c.lr = 3e-5;
        } else if (it->second != "desk") {
            throw DataError("config key 'preset': expected desk or reference");
        }
    }

    geti("d_model", c.d_model);
    geti("d_embed", c.d_embed);
    geti("k_attn", c.k_attn);
    geti("h_hidden", c.h_hidden);
    geti("max_len", c.max_len);
    getd("lambda", c.lambda);
    getd("dropout", c.dropout);
    getb("soft_level_lookup", c.soft_level_lookup);
    gets("level_pool", c.level_pool);
    geti("timesteps", c.timesteps);
    gets("schedule", c.schedule);
    getd("beta_start", c.beta_start);
    getd("beta_end", c.beta_end);
    geti("expansion", c.expansion);
    getd("loss_beta1", c.loss_beta1);
    getd("loss_beta2", c.loss_beta2);
    getd("loss_beta3", c.loss_beta3);
    getd("lr", c.lr);
    getd("warmup_ratio", c.warmup_ratio);
    getd("grad_clip", c.grad_clip);
    getd("weight_decay", c.weight_decay);
    getd("adam_beta1", c.adam_beta1);
    getd("adam_beta2", c.adam_beta2);
    geti("epochs", c.epochs);
    geti("batch", c.batch);
    if (auto it = kv.find("seed"); it != kv.end()) {
        c.seed = parse_number<std::uint64_t>("seed", it->second);
    }
    geti("checkpoint_every", c.checkpoint_every);
    getb("log_timing", c.log_timing);
    gets("surplus", c.surplus);
    geti("denoise_blocks", c.denoise_blocks);
    geti("sample_steps", c.sample_steps);
    getd("phi", c.phi);
    gets("phi_mode", c.phi_mode);
    gets("reconstruct_mid", c.reconstruct_mid);
    c.validate();
    return c;
}

RunConfig RunConfig::from_file(const std::string& path) {
    return from_key_values(load_key_values(path));
}

std::string RunConfig::echo() const {
    std::ostringstream os;
    os << "d_model = " << d_model << "\n";
    os << "d_embed = " << d_embed << "\n";
    os << "k_attn = " << k_attn << "\n";
    os << "h_hidden = " << h_hidden << "\n";
    os << "max_len = " << max_len << "\n";
    os << "lambda = " << format_double(lambda) << "\n";
    os << "dropout = " << format_double(dropout) << "\n";
    os << "soft_level_lookup = " << (soft_level_lookup ? "true" : "false") << "\n";
    os << "level_pool = " << level_pool << "\n";
    os << "timesteps = " << timesteps << "\n";
    os << "schedule = " << schedule << "\n";
    os << "beta_start = " << format_double(beta_start) << "\n";
    os << "beta_end = " << format_double(beta_end) << "\n";
    os << "expansion = " << expansion << "\n";
    os << "loss_beta1 = " << format_double(loss_beta1) << "\n";
    os << "loss_beta2 = " << format_double(loss_beta2) << "\n";
    os << "loss_beta3 = " << format_double(loss_beta3) << "\n";
    os << "lr = " << format_double(lr) << "\n";
    os << "warmup_ratio = " << format_double(warmup_ratio) << "\n";
    os << "grad_clip = " << format_double(grad_clip) << "\n";
    os << "weight_decay = " << format_double(weight_decay) << "\n";
    os << "adam_beta1 = " << format_double(adam_beta1) << "\n";
    os << "adam_beta2 = " << format_double(adam_beta2) << "\n";
    os << "epochs = " << epochs << "\n";
    os << "batch = " << batch << "\n";
    os << "seed = " << seed << "\n";
    os << "checkpoint_every = " << checkpoint_every << "\n";
    os << "log_timing = " << (log_timing ? "true" : "false") << "\n";
    os << "surplus = " << surplus << "\n";
    os << "denoise_blocks = " << denoise_blocks << "\n";
    os << "sample_steps = " << sample_steps << "\n";
    os << "phi = " << format_double(phi) << "\n";
    os << "phi_mode = " << phi_mode << "\n";
    os << "reconstruct_mid = " << reconstruct_mid << "\n";
    return os.str();
}

ModelConfig RunConfig::model_config(int vocab_size, int relation_count) const {
    ModelConfig m;
    m.vocab_size = vocab_size;
    m.relation_count = relation_count;
    m.max_len = max_len;
    m.d_model = d_model;
    m.d_embed = d_embed;
    m.k_attn = k_attn;
    m.h_hidden = h_hidden;
    m.lambda = lambda;
    m.dropout = dropout;
    m.soft_level_lookup = soft_level_lookup;
    m.level_pool = level_pool == "hidden" ? LevelPoolAxis::over_hidden : LevelPoolAxis::over_heads;
    return m;
}

ScheduleKind RunConfig::schedule_kind() const {
    return schedule == "cosine" ? ScheduleKind::cosine : ScheduleKind::linear;
}

LossWeights RunConfig::loss_weights() const { return LossWeights{loss_beta1, loss_beta2, loss_beta3}; }

SurplusPolicy RunConfig::surplus_policy() const {
    return surplus == "pad_repeat" ? SurplusPolicy::pad_repeat
                                   : SurplusPolicy::cheapest_ground_truth;
}

PhiScoreMode RunConfig::phi_score_mode() const {
    return phi_mode == "at_index" ? PhiScoreMode::at_reconstructed : PhiScoreMode::head_maxima;
}

ReconstructMode RunConfig::reconstruct_mid_mode() const {
    return reconstruct_mid == "argmax" ? ReconstructMode::argmax : ReconstructMode::expectation;
}

void RunConfig::validate() const {
    if (schedule != "linear" && schedule != "cosine") {
        throw DataError("config: schedule must be linear or cosine");
    }
    if (level_pool != "heads" && level_pool != "hidden") {
        throw DataError("config: level_pool must be heads or hidden");
    }
    if (surplus != "cheapest" && surplus != "pad_repeat") {
        throw DataError("config: surplus must be cheapest or pad_repeat");
    }
    if (phi_mode != "maxima" && phi_mode != "at_index") {
        throw DataError("config: phi_mode must be maxima or at_index");
    }
    if (reconstruct_mid != "expectation" && reconstruct_mid != "argmax") {
        throw DataError("config: reconstruct_mid must be expectation or argmax");
    }
    if (timesteps < 1) throw DataError("config: timesteps must be >= 1");
    if (expansion < 1) throw DataError("config: expansion must be >= 1");
    if (epochs < 0 || batch < 1) throw DataError("config: epochs >= 0 and batch >= 1 required");
    if (loss_beta1 < 0 || loss_beta2 < 0 || loss_beta3 < 0) {
        throw DataError("config: loss weights must be non-negative");
    }
    if (!(grad_clip > 0)) throw DataError("config: grad_clip must be positive");
    if (warmup_ratio < 0 || warmup_ratio > 1) throw DataError("config: warmup_ratio in [0,1]");
    if (sample_steps < 1 || sample_steps > timesteps) {
        throw DataError("config: sample_steps must be in [1, timesteps]");
    }
    if (denoise_blocks < 1) throw DataError("config: denoise_blocks must be >= 1");
    if (phi < 0 || phi > 5) throw DataError("config: phi must be in [0, 5]");
}

}  // namespace diffrte

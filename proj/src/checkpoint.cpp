#include "diffrte/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace diffrte {

namespace {

constexpr char kMagic[8] = {'D', 'R', 'T', 'E', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

void write_u32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    out.write(reinterpret_cast<const char*>(b), 4);
}

void write_u64(std::ostream& out, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    out.write(reinterpret_cast<const char*>(b), 8);
}

void write_f64(std::ostream& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    write_u64(out, bits);
}

void write_string(std::ostream& out, const std::string& s) {
    write_u64(out, s.size());
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::uint32_t read_u32(std::istream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

std::uint64_t read_u64(std::istream& in) {
    unsigned char b[8];
    in.read(reinterpret_cast<char*>(b), 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

double read_f64(std::istream& in) {
    const std::uint64_t bits = read_u64(in);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

std::string read_string(std::istream& in) {
    const std::uint64_t len = read_u64(in);
    std::string s(len, '\0');
    in.read(s.data(), static_cast<std::streamsize>(len));
    return s;
}

std::vector<std::string> split_lines(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        out.push_back(line);
    }
    return out;
}

std::string join_lines(const std::vector<std::string>& lines) {
    std::ostringstream os;
    for (const auto& l : lines) os << l << "\n";
    return os.str();
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open checkpoint for writing: " + path);
    out.write(kMagic, 8);
    write_u32(out, kVersion);
    write_string(out, ckpt.config_echo);
    write_string(out, join_lines(ckpt.vocab));
    write_string(out, join_lines(ckpt.relations));
    for (std::uint64_t w : ckpt.rng_state) write_u64(out, w);
    write_u64(out, ckpt.step);
    write_u32(out, static_cast<std::uint32_t>(ckpt.params.size()));
    for (const auto& [name, tensor] : ckpt.params) {
        write_u32(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_u32(out, static_cast<std::uint32_t>(tensor.shape().size()));
        for (std::size_t d : tensor.shape()) write_u64(out, d);
        for (double v : tensor.data()) write_f64(out, v);
    }
    if (!out) throw DataError("checkpoint write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint: " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kMagic, 8) != 0) {
        throw DataError("not a checkpoint file (bad magic): " + path);
    }
    const std::uint32_t version = read_u32(in);
    if (version != kVersion) {
        throw DataError("unsupported checkpoint version " + std::to_string(version) + ": " + path);
    }
    Checkpoint ckpt;
    ckpt.config_echo = read_string(in);
    ckpt.vocab = split_lines(read_string(in));
    ckpt.relations = split_lines(read_string(in));
    for (auto& w : ckpt.rng_state) w = read_u64(in);
    ckpt.step = read_u64(in);
    const std::uint32_t count = read_u32(in);
    if (!in) throw DataError("truncated checkpoint: " + path);
    ckpt.params.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t name_len = read_u32(in);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        const std::uint32_t ndim = read_u32(in);
        std::vector<std::size_t> shape(ndim);
        std::size_t total = 1;
        for (auto& d : shape) {
            d = static_cast<std::size_t>(read_u64(in));
            total *= d;
        }
        std::vector<double> data(total);
        for (auto& v : data) v = read_f64(in);
        if (!in) throw DataError("truncated checkpoint while reading '" + name + "': " + path);
        ckpt.params.emplace_back(std::move(name), Tensor(std::move(shape), std::move(data)));
    }
    return ckpt;
}

Checkpoint checkpoint_from_model(const Model& model, const std::string& config_echo,
                                 const std::vector<std::string>& vocab,
                                 const std::vector<std::string>& relations,
                                 const std::array<std::uint64_t, 4>& rng_state,
                                 std::uint64_t step) {
    Checkpoint ckpt;
    ckpt.config_echo = config_echo;
    ckpt.vocab = vocab;
    ckpt.relations = relations;
    ckpt.rng_state = rng_state;
    ckpt.step = step;
    for (const auto& [name, var] : model.named_params()) {
        ckpt.params.emplace_back(name, var.value());
    }
    return ckpt;
}

void restore_model(Model& model, const Checkpoint& ckpt) {
    auto named = model.named_params();
    if (named.size() != ckpt.params.size()) {
        throw DataError("checkpoint parameter count mismatch: model has " +
                        std::to_string(named.size()) + ", file has " +
                        std::to_string(ckpt.params.size()));
    }
    for (std::size_t i = 0; i < named.size(); ++i) {
        auto& [name, var] = named[i];
        const auto& [file_name, tensor] = ckpt.params[i];
        if (name != file_name) {
            throw DataError("checkpoint parameter order mismatch: expected '" + name +
                            "', found '" + file_name + "'");
        }
        if (!(var.value().shape() == tensor.shape())) {
            throw DataError("checkpoint shape mismatch for '" + name + "'");
        }
        const_cast<ad::Var&>(var).mutable_value() = tensor;
    }
}

}  // namespace diffrte

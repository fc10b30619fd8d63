#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "diffrte/network.hpp"
#include "diffrte/tensor.hpp"

namespace diffrte {

// Single-archive checkpoint. Versioned little-endian binary layout:
//
//   bytes 0-7   magic "DRTECKPT"
//   u32         format version (1)
//   section     config echo   (u64 length + bytes, flat key=value text)
//   section     vocabulary     (u64 length + bytes, one token per line)
//   section     relations      (u64 length + bytes, one name per line)
//   u64 x 4     rng state words
//   u64         step counter
//   u32         parameter count
//   per param:  u32 name length + name bytes,
//               u32 ndim, u64 dims[ndim], f64 data[product]
struct Checkpoint {
    std::string config_echo;
    std::vector<std::string> vocab;
    std::vector<std::string> relations;
    std::array<std::uint64_t, 4> rng_state{};
    std::uint64_t step = 0;
    std::vector<std::pair<std::string, Tensor>> params;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

Checkpoint checkpoint_from_model(const Model& model, const std::string& config_echo,
                                 const std::vector<std::string>& vocab,
                                 const std::vector<std::string>& relations,
                                 const std::array<std::uint64_t, 4>& rng_state,
                                 std::uint64_t step);

// Restores parameter tensors into an initialized model; names and shapes
// must match exactly.
void restore_model(Model& model, const Checkpoint& ckpt);

}  // namespace diffrte

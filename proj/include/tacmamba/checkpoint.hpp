#pragma once

#include <map>
#include <string>

#include "tacmamba/common.hpp"
#include "tacmamba/params.hpp"

namespace tacmamba {

// Weight checkpoint container.
//
// Layout (all integers little-endian):
//   magic   "TACW"            4 bytes
//   version u32               currently 1
//   count   u32               number of tensors
//   then per tensor:
//     name_len u32, name bytes (no terminator)
//     ndim u32, dims u64[ndim]
//     data f32[numel] little-endian
//
// Tensor names use '/'-separated sections, e.g. "encoder/block0/w_in",
// "discr/w1", "planner/w".
inline constexpr std::uint32_t kCheckpointVersion = 1;

using TensorMap = std::map<std::string, Tensor<float>>;

void write_checkpoint(const std::string& path, const TensorMap& tensors);
TensorMap read_checkpoint(const std::string& path);

// Store <-> tensor map bridges. `prefix` is prepended to (stripped from) the
// view names on save (load). Loading requires every view in `store` to be
// present with a matching shape.
TensorMap store_to_tensors(const ParamStore<float>& store, const std::string& prefix = "");
void load_into_store(ParamStore<float>& store, const TensorMap& tensors, const std::string& prefix = "");

}  // namespace tacmamba

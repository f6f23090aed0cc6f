#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "perfuseg/nn/optim.hpp"
#include "perfuseg/nn/tensor.hpp"

namespace perfuseg::nn {

struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<float> values;

  bool operator==(const NamedArray&) const = default;
};

struct Checkpoint {
  std::string model_name;
  std::map<std::string, std::string> metadata;
  std::vector<NamedArray> params;
  std::optional<OptimizerState> optimizer;
};

/// PSCK v1: magic "PSCK0001", model name, then tagged sections
/// (4-byte tag, u64 payload length, payload). Readers skip tags they do not
/// know, so later versions can append sections without breaking old readers.
/// Sections: META (string pairs), PARM (name, rank, dims, f32 data),
/// OPTS (optimizer configuration, step, moment buffers).
std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

template <typename Scalar>
std::vector<NamedArray> export_parameters(const std::vector<Parameter<Scalar>>& params);

/// Copies stored arrays into the parameters by position; names and shapes
/// must match exactly, otherwise ErrorKind::Load.
template <typename Scalar>
void import_parameters(const std::vector<NamedArray>& stored, std::vector<Parameter<Scalar>>& params);

}  // namespace perfuseg::nn

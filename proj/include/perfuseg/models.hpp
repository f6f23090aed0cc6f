#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "perfuseg/nn/checkpoint.hpp"
#include "perfuseg/nn/ops.hpp"
#include "perfuseg/nn/optim.hpp"

namespace perfuseg {

enum class ModelName { Arch1, Arch2, Arch3, MjNet };

std::string display_name(ModelName name);  // "Arch_1", ..., "mJ-Net"
std::string key_name(ModelName name);      // "arch1", ..., "mjnet"
/// Accepts either spelling, case-insensitively.
ModelName model_from_name(const std::string& name);

bool is_classifier(ModelName name);

/// Two readings of the decoder's "(2,1,1) max_pool" rows.
enum class DecoderReading {
  /// Upsampled and skip features are joined along channels and the pool
  /// halves the channel axis by pairwise maximum.
  ChannelHalving,
  /// Upsampled and skip features are stacked along depth (giving depth 2)
  /// and the pool is a (2,1,1) max pool back to depth 1.
  DepthStack,
};

enum class LayerKind { Conv, AvgPool, MaxPool, Flatten, Dense, TransposeConcat, ChannelHalvingMax };
enum class Activation { None, Relu, Sigmoid, Softmax };

/// Stands for "the current depth extent" in a kernel or window.
inline constexpr int kFullDepth = -1;

struct LayerDesc {
  LayerKind kind = LayerKind::Conv;
  std::string name;
  std::array<int, 3> kernel{1, 3, 3};  // Conv / TransposeConcat
  int filters = 0;                     // Conv / TransposeConcat / Dense units
  nn::DepthPadding depth_padding = nn::DepthPadding::Same;
  Activation activation = Activation::None;
  nn::Window3 window{1, 2, 2};  // pools
  bool allow_partial = false;   // pools: keep trailing partial windows
  bool clamp_window = false;    // pools: shrink window extents to the input
  std::string save_as;          // tap this layer's output for a later skip
  std::string skip;             // TransposeConcat: tap to join with
  int concat_axis = 4;          // TransposeConcat: 4 channels, 1 depth

  // Filled in by resolve(); shapes exclude the batch axis.
  std::vector<int> output_shape;
  std::vector<nn::Shape> param_shapes;
};

struct ModelConfig {
  int frames = 30;
  DecoderReading decoder = DecoderReading::ChannelHalving;
};

struct ModelSpec {
  ModelName name = ModelName::MjNet;
  ModelConfig config;
  std::vector<LayerDesc> layers;
  long long declared_parameters = 0;  // published total, 0 when none

  nn::Shape input_shape() const { return {config.frames, 16, 16, 1}; }
  nn::Shape output_shape() const;
};

/// Layer list of one architecture with shapes resolved for config.frames.
ModelSpec make_spec(ModelName name, const ModelConfig& config = {});

/// Propagates shapes through the layer list, filling output_shape and
/// param_shapes. Throws ModelConstruction naming the first layer whose input
/// it cannot accept.
void resolve(ModelSpec& spec);

/// Dense hidden width that brings a classifier closest to a target total:
/// round((target - conv_params - 4) / (flatten_width + 5)).
int dense_width_for_total(long long target, long long conv_params, long long flatten_width);

struct LayerAudit {
  std::string name;
  std::string kind;
  std::string output_shape;
  long long parameters = 0;
  long long closed_form = 0;  // (kd*kh*kw*Cin + 1)*Cout or (in + 1)*out
  std::string note;
};

struct ParameterAudit {
  std::string model;
  std::vector<LayerAudit> layers;
  long long total = 0;
  long long declared = 0;
  long long difference() const { return total - declared; }
  std::vector<std::string> notes;
};

ParameterAudit count_parameters(const ModelSpec& spec);
std::string format_audit(const ParameterAudit& audit);

template <typename Scalar>
class Network {
 public:
  Network(ModelSpec spec, std::uint64_t seed);

  const ModelSpec& spec() const { return spec_; }
  std::vector<nn::Parameter<Scalar>>& parameters() { return params_; }
  const std::vector<nn::Parameter<Scalar>>& parameters() const { return params_; }

  /// input (N, T, 16, 16, 1) -> (N, 4) class probabilities or (N, 16, 16)
  /// maps in [0, 1].
  nn::Tensor<Scalar> forward(const nn::Tensor<Scalar>& input) const;

 private:
  ModelSpec spec_;
  std::vector<nn::Parameter<Scalar>> params_;
  std::vector<std::size_t> first_param_;  // per layer index into params_
};

template <typename Scalar>
Network<Scalar> build_model(ModelName name, const ModelConfig& config = {}, std::uint64_t seed = 1);

/// Checkpoint holding the network weights, its build configuration and an
/// optional optimizer state.
nn::Checkpoint make_checkpoint(const Network<float>& net, const std::optional<nn::OptimizerState>& optimizer = {});

/// Rebuilds the network recorded in a checkpoint. When `expected` is given
/// and differs from the stored model, throws ErrorKind::Load.
Network<float> network_from_checkpoint(const nn::Checkpoint& ckpt, std::optional<ModelName> expected = {});

}  // namespace perfuseg

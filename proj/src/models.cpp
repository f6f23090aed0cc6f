#include "perfuseg/models.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <iomanip>
#include <map>
#include <random>
#include <sstream>

#include "perfuseg/error.hpp"

namespace perfuseg {

namespace {

// Hidden widths of the classifier heads, from dense_width_for_total() at
// T = 30 against the published totals. They stay fixed for other T.
constexpr int kArch1Hidden = 638;
constexpr int kArch2Hidden = 630;
constexpr int kArch3Hidden = 137;

constexpr long long kDeclared[4] = {203'320, 773'384, 63'312, 981'553};

LayerDesc conv(std::string name, std::array<int, 3> kernel, int filters, Activation act = Activation::Relu,
               nn::DepthPadding depth = nn::DepthPadding::Same) {
  LayerDesc l;
  l.kind = LayerKind::Conv;
  l.name = std::move(name);
  l.kernel = kernel;
  l.filters = filters;
  l.activation = act;
  l.depth_padding = depth;
  return l;
}

LayerDesc pool(LayerKind kind, std::string name, nn::Window3 window, bool partial = false, bool clamp = false) {
  LayerDesc l;
  l.kind = kind;
  l.name = std::move(name);
  l.window = window;
  l.allow_partial = partial;
  l.clamp_window = clamp;
  return l;
}

LayerDesc dense_layer(std::string name, int units, Activation act) {
  LayerDesc l;
  l.kind = LayerKind::Dense;
  l.name = std::move(name);
  l.filters = units;
  l.activation = act;
  return l;
}

LayerDesc flatten() {
  LayerDesc l;
  l.kind = LayerKind::Flatten;
  l.name = "flatten";
  return l;
}

LayerDesc up(std::string name, int filters, std::string skip, int axis) {
  LayerDesc l;
  l.kind = LayerKind::TransposeConcat;
  l.name = std::move(name);
  l.kernel = {1, 2, 2};
  l.filters = filters;
  l.skip = std::move(skip);
  l.concat_axis = axis;
  return l;
}

LayerDesc halve(std::string name) {
  LayerDesc l;
  l.kind = LayerKind::ChannelHalvingMax;
  l.name = std::move(name);
  return l;
}

LayerDesc tapped(LayerDesc l, std::string tap) {
  l.save_as = std::move(tap);
  return l;
}

std::vector<LayerDesc> arch1_layers() {
  return {conv("conv1", {kFullDepth, 3, 3}, 16),
          pool(LayerKind::AvgPool, "avg_pool1", {kFullDepth, 2, 2}),
          conv("conv2", {1, 3, 3}, 32),
          conv("conv3", {1, 3, 3}, 32),
          pool(LayerKind::MaxPool, "max_pool1", {1, 2, 2}),
          conv("conv4", {1, 3, 3}, 64),
          pool(LayerKind::MaxPool, "max_pool2", {1, 2, 2}),
          flatten(),
          dense_layer("fully_conn1", kArch1Hidden, Activation::Relu),
          dense_layer("fully_conn2", 4, Activation::Softmax)};
}

std::vector<LayerDesc> arch2_layers() {
  return {conv("conv1", {3, 3, 3}, 16),
          conv("conv2", {3, 3, 3}, 32),
          pool(LayerKind::MaxPool, "max_pool1", {2, 2, 2}, true),
          conv("conv3", {3, 3, 3}, 32),
          conv("conv4", {3, 3, 3}, 32),
          pool(LayerKind::MaxPool, "max_pool2", {2, 2, 2}, true),
          conv("conv5", {3, 3, 3}, 64),
          pool(LayerKind::MaxPool, "max_pool3", {2, 2, 2}, true),
          flatten(),
          dense_layer("fully_conn1", kArch2Hidden, Activation::Relu),
          dense_layer("fully_conn2", 4, Activation::Softmax)};
}

std::vector<LayerDesc> arch3_layers() {
  const auto valid = nn::DepthPadding::Valid;
  return {conv("conv1", {kFullDepth, 3, 3}, 16, Activation::Relu, valid),
          pool(LayerKind::MaxPool, "max_pool1", {2, 2, 2}, true, true),
          conv("conv2", {kFullDepth, 3, 3}, 32, Activation::Relu, valid),
          pool(LayerKind::MaxPool, "max_pool2", {2, 2, 2}, true, true),
          conv("conv3", {kFullDepth, 3, 3}, 64, Activation::Relu, valid),
          pool(LayerKind::MaxPool, "max_pool3", {2, 2, 2}, true, true),
          flatten(),
          dense_layer("fully_conn1", kArch3Hidden, Activation::Relu),
          dense_layer("fully_conn2", 4, Activation::Softmax)};
}

std::vector<LayerDesc> mjnet_layers(DecoderReading reading) {
  std::vector<LayerDesc> l = {conv("conv1", {kFullDepth, 3, 3}, 16),
                              pool(LayerKind::AvgPool, "avg_pool1", {kFullDepth, 1, 1}),
                              conv("conv2", {1, 3, 3}, 32),
                              tapped(conv("conv3", {1, 3, 3}, 64), "skip_16"),
                              pool(LayerKind::MaxPool, "max_pool1", {1, 2, 2}),
                              conv("conv4", {1, 3, 3}, 64),
                              tapped(conv("conv5", {1, 3, 3}, 128), "skip_8"),
                              pool(LayerKind::MaxPool, "max_pool2", {1, 2, 2}),
                              conv("conv6", {1, 3, 3}, 128),
                              conv("conv7", {1, 3, 3}, 256)};
  if (reading == DecoderReading::ChannelHalving) {
    l.push_back(up("up1", 64, "skip_8", 4));
    l.push_back(conv("conv8", {1, 3, 3}, 128));
    l.push_back(conv("conv9", {1, 3, 3}, 64));
    l.push_back(halve("max_pool3"));
    l.push_back(up("up2", 32, "skip_16", 4));
    l.push_back(conv("conv10", {1, 3, 3}, 32));
    l.push_back(conv("conv11", {1, 3, 3}, 32));
    l.push_back(halve("max_pool4"));
  } else {
    l.push_back(up("up1", 128, "skip_8", 1));
    l.push_back(conv("conv8", {1, 3, 3}, 128));
    l.push_back(conv("conv9", {1, 3, 3}, 64));
    l.push_back(pool(LayerKind::MaxPool, "max_pool3", {2, 1, 1}));
    l.push_back(up("up2", 64, "skip_16", 1));
    l.push_back(conv("conv10", {1, 3, 3}, 32));
    l.push_back(conv("conv11", {1, 3, 3}, 32));
    l.push_back(pool(LayerKind::MaxPool, "max_pool4", {2, 1, 1}));
  }
  l.push_back(conv("conv12", {1, 3, 3}, 1, Activation::Sigmoid));
  return l;
}

std::string kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::Conv: return "conv3D";
    case LayerKind::AvgPool: return "avg_pool";
    case LayerKind::MaxPool: return "max_pool";
    case LayerKind::Flatten: return "flatten";
    case LayerKind::Dense: return "fully_conn";
    case LayerKind::TransposeConcat: return "concat & transpose";
    case LayerKind::ChannelHalvingMax: return "max_pool (channel halving)";
  }
  return "?";
}

nn::Window3 effective_window(const LayerDesc& l, const std::vector<int>& in) {
  nn::Window3 w = l.window;
  if (w[0] == kFullDepth) w[0] = in[0];
  if (l.clamp_window)
    for (int i = 0; i < 3; ++i) w[i] = std::min(w[i], in[i]);
  return w;
}

int effective_kernel_depth(const LayerDesc& l, const std::vector<int>& in) {
  return l.kernel[0] == kFullDepth ? in[0] : l.kernel[0];
}

[[noreturn]] void construction_error(const ModelSpec& spec, const LayerDesc& l, const std::string& what) {
  fail(ErrorKind::ModelConstruction, display_name(spec.name) + " layer '" + l.name + "': " + what);
}

std::string lower(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

template <typename Scalar>
nn::Tensor<Scalar> activate(const nn::Tensor<Scalar>& x, Activation a) {
  switch (a) {
    case Activation::None: return x;
    case Activation::Relu: return nn::relu(x);
    case Activation::Sigmoid: return nn::sigmoid(x);
    case Activation::Softmax: return nn::softmax(x);
  }
  return x;
}

}  // namespace

std::string display_name(ModelName name) {
  switch (name) {
    case ModelName::Arch1: return "Arch_1";
    case ModelName::Arch2: return "Arch_2";
    case ModelName::Arch3: return "Arch_3";
    case ModelName::MjNet: return "mJ-Net";
  }
  return "?";
}

std::string key_name(ModelName name) {
  switch (name) {
    case ModelName::Arch1: return "arch1";
    case ModelName::Arch2: return "arch2";
    case ModelName::Arch3: return "arch3";
    case ModelName::MjNet: return "mjnet";
  }
  return "?";
}

ModelName model_from_name(const std::string& raw) {
  std::string s;
  for (char c : lower(raw))
    if (std::isalnum(static_cast<unsigned char>(c))) s += c;
  if (s == "arch1") return ModelName::Arch1;
  if (s == "arch2") return ModelName::Arch2;
  if (s == "arch3") return ModelName::Arch3;
  if (s == "mjnet") return ModelName::MjNet;
  fail(ErrorKind::Config, "unknown model '" + raw + "' (expected arch1, arch2, arch3 or mjnet)");
}

bool is_classifier(ModelName name) { return name != ModelName::MjNet; }

nn::Shape ModelSpec::output_shape() const { return is_classifier(name) ? nn::Shape{4} : nn::Shape{16, 16}; }

ModelSpec make_spec(ModelName name, const ModelConfig& config) {
  require(config.frames >= 1, ErrorKind::ModelConstruction, "model needs at least one time frame");
  ModelSpec spec;
  spec.name = name;
  spec.config = config;
  spec.declared_parameters = kDeclared[static_cast<int>(name)];
  switch (name) {
    case ModelName::Arch1: spec.layers = arch1_layers(); break;
    case ModelName::Arch2: spec.layers = arch2_layers(); break;
    case ModelName::Arch3: spec.layers = arch3_layers(); break;
    case ModelName::MjNet: spec.layers = mjnet_layers(config.decoder); break;
  }
  resolve(spec);
  return spec;
}

void resolve(ModelSpec& spec) {
  std::vector<int> cur = {spec.config.frames, 16, 16, 1};
  std::map<std::string, std::vector<int>> taps;
  for (auto& l : spec.layers) {
    l.param_shapes.clear();
    const bool volumetric = cur.size() == 4;
    if (l.kind != LayerKind::Dense && !volumetric) construction_error(spec, l, "expects a (D,H,W,C) input");
    switch (l.kind) {
      case LayerKind::Conv: {
        const int kd = effective_kernel_depth(l, cur);
        if (kd < 1 || l.kernel[1] < 1 || l.kernel[2] < 1 || l.filters < 1)
          construction_error(spec, l, "invalid kernel or filter count");
        const int od = l.depth_padding == nn::DepthPadding::Same ? cur[0] : cur[0] - kd + 1;
        if (od < 1)
          construction_error(spec, l, "kernel depth " + std::to_string(kd) + " exceeds input depth " +
                                          std::to_string(cur[0]));
        l.param_shapes = {{kd, l.kernel[1], l.kernel[2], cur[3], l.filters}, {l.filters}};
        cur = {od, cur[1], cur[2], l.filters};
        break;
      }
      case LayerKind::AvgPool:
      case LayerKind::MaxPool: {
        const auto w = effective_window(l, cur);
        std::vector<int> out(4);
        for (int i = 0; i < 3; ++i) {
          if (w[i] < 1 || w[i] > cur[i])
            construction_error(spec, l, "window extent " + std::to_string(w[i]) + " does not fit input extent " +
                                            std::to_string(cur[i]));
          if (!l.allow_partial && cur[i] % w[i] != 0)
            construction_error(spec, l, "window extent " + std::to_string(w[i]) + " does not divide " +
                                            std::to_string(cur[i]));
          out[i] = (cur[i] + w[i] - 1) / w[i];
        }
        out[3] = cur[3];
        cur = out;
        break;
      }
      case LayerKind::Flatten: cur = {cur[0] * cur[1] * cur[2] * cur[3]}; break;
      case LayerKind::Dense:
        if (cur.size() != 1) construction_error(spec, l, "expects a flattened input");
        l.param_shapes = {{cur[0], l.filters}, {l.filters}};
        cur = {l.filters};
        break;
      case LayerKind::TransposeConcat: {
        auto it = taps.find(l.skip);
        if (it == taps.end()) construction_error(spec, l, "skip tap '" + l.skip + "' is not defined earlier");
        const auto& skip = it->second;
        const std::vector<int> upsampled = {cur[0] + l.kernel[0] - 1, cur[1] * 2, cur[2] * 2, l.filters};
        for (int i = 0; i < 4; ++i) {
          if (i == l.concat_axis - 1) continue;
          if (upsampled[i] != skip[i])
            construction_error(spec, l, "upsampled extent " + std::to_string(upsampled[i]) + " on axis " +
                                            std::to_string(i) + " does not match skip '" + l.skip + "' extent " +
                                            std::to_string(skip[i]));
        }
        l.param_shapes = {{l.kernel[0], l.kernel[1], l.kernel[2], cur[3], l.filters}, {l.filters}};
        cur = upsampled;
        cur[l.concat_axis - 1] += skip[l.concat_axis - 1];
        break;
      }
      case LayerKind::ChannelHalvingMax:
        if (cur[3] % 2 != 0) construction_error(spec, l, "channel count " + std::to_string(cur[3]) + " is odd");
        cur[3] /= 2;
        break;
    }
    l.output_shape = cur;
    if (!l.save_as.empty()) taps[l.save_as] = cur;
  }
  const auto want = spec.output_shape();
  const bool ok = is_classifier(spec.name) ? cur == std::vector<int>{4}
                                           : cur == std::vector<int>{1, 16, 16, 1};
  if (!ok)
    fail(ErrorKind::ModelConstruction, display_name(spec.name) + " ends in shape " + nn::to_string(cur) +
                                           ", expected " + nn::to_string(want));
}

int dense_width_for_total(long long target, long long conv_params, long long flatten_width) {
  return static_cast<int>(
      std::llround(static_cast<double>(target - conv_params - 4) / static_cast<double>(flatten_width + 5)));
}

ParameterAudit count_parameters(const ModelSpec& spec) {
  ParameterAudit a;
  a.model = display_name(spec.name);
  a.declared = spec.declared_parameters;
  long long conv_total = 0;
  long long flatten_width = 0;
  for (const auto& l : spec.layers) {
    LayerAudit row;
    row.name = l.name;
    row.kind = kind_name(l.kind);
    row.output_shape = nn::to_string(l.output_shape);
    for (const auto& s : l.param_shapes) row.parameters += static_cast<long long>(nn::numel(s));
    if (!l.param_shapes.empty()) {
      const auto& k = l.param_shapes[0];
      if (k.size() == 5)
        row.closed_form = (static_cast<long long>(k[0]) * k[1] * k[2] * k[3] + 1) * k[4];
      else
        row.closed_form = (static_cast<long long>(k[0]) + 1) * k[1];
    }
    if (l.kind == LayerKind::Conv || l.kind == LayerKind::TransposeConcat) conv_total += row.parameters;
    if (l.kind == LayerKind::Flatten) flatten_width = l.output_shape[0];
    if (l.kind == LayerKind::Dense && l.activation == Activation::Relu)
      row.note = "hidden width not published; chosen to approach the published total";
    if (l.kind == LayerKind::TransposeConcat)
      row.note = "transpose kernel (1,2,2); filter count not published";
    if (l.kind == LayerKind::ChannelHalvingMax) row.note = "(2,1,1) pool read as pairwise channel maximum";
    if (l.kind == LayerKind::Conv && l.filters == 1) row.note = "output filter not listed in the ladder";
    a.total += row.parameters;
    a.layers.push_back(std::move(row));
  }
  if (a.declared && is_classifier(spec.name)) {
    const int width = dense_width_for_total(a.declared, conv_total, flatten_width);
    const long long per_unit = flatten_width + 5;
    const long long residue = (a.declared - conv_total - 4) - per_unit * width;
    std::ostringstream n;
    n << "convolutions hold " << conv_total << " parameters and the head (" << flatten_width << "+1)*F + (F+1)*4 = "
      << per_unit << "*F + 4; the best integer F is " << width << ", leaving " << residue
      << " parameters of the published total unexplained";
    a.notes.push_back(n.str());
  }
  if (a.declared && a.difference() != 0) {
    std::ostringstream n;
    n << "total differs from the published " << a.declared << " by " << std::showpos << a.difference();
    a.notes.push_back(n.str());
  }
  return a;
}

std::string format_audit(const ParameterAudit& a) {
  std::ostringstream out;
  out << a.model << " parameter audit\n";
  out << std::left << std::setw(12) << "layer" << std::setw(28) << "kind" << std::setw(18) << "output"
      << std::right << std::setw(10) << "params" << "  note\n";
  for (const auto& l : a.layers) {
    out << std::left << std::setw(12) << l.name << std::setw(28) << l.kind << std::setw(18) << l.output_shape
        << std::right << std::setw(10) << l.parameters;
    if (!l.note.empty()) out << "  " << l.note;
    out << '\n';
  }
  out << "total " << a.total;
  if (a.declared) out << " (published " << a.declared << ", difference " << a.difference() << ")";
  out << '\n';
  for (const auto& n : a.notes) out << "note: " << n << '\n';
  return out.str();
}

template <typename Scalar>
Network<Scalar>::Network(ModelSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
  std::mt19937_64 rng(seed);
  for (const auto& l : spec_.layers) {
    first_param_.push_back(params_.size());
    if (l.param_shapes.empty()) continue;
    const auto& ks = l.param_shapes[0];
    const std::size_t fan_in = nn::numel(ks) / static_cast<std::size_t>(ks.back());
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
    std::uniform_real_distribution<double> u(-limit, limit);
    std::vector<Scalar> k(nn::numel(ks));
    for (auto& v : k) v = static_cast<Scalar>(u(rng));
    params_.push_back({l.name + ".kernel", nn::Tensor<Scalar>::from(ks, std::move(k), true)});
    params_.push_back({l.name + ".bias", nn::Tensor<Scalar>::zeros(l.param_shapes[1], true)});
  }
}

template <typename Scalar>
nn::Tensor<Scalar> Network<Scalar>::forward(const nn::Tensor<Scalar>& input) const {
  const auto want = spec_.input_shape();
  require(input.rank() == 5 && std::equal(want.begin(), want.end(), input.shape().begin() + 1), ErrorKind::Shape,
          display_name(spec_.name) + " expects (N," + std::to_string(want[0]) + ",16,16,1) input, got " +
              nn::to_string(input.shape()));
  const int n = input.dim(0);
  std::map<std::string, nn::Tensor<Scalar>> taps;
  nn::Tensor<Scalar> x = input;
  for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
    const auto& l = spec_.layers[i];
    const std::vector<int> in(x.shape().begin() + 1, x.shape().end());
    switch (l.kind) {
      case LayerKind::Conv: {
        const auto& p = params_[first_param_[i]];
        x = activate(nn::conv3d(x, p.tensor, params_[first_param_[i] + 1].tensor, l.depth_padding), l.activation);
        break;
      }
      case LayerKind::AvgPool: x = nn::avg_pool3d(x, effective_window(l, in), l.allow_partial); break;
      case LayerKind::MaxPool: x = nn::max_pool3d(x, effective_window(l, in), l.allow_partial); break;
      case LayerKind::Flatten: x = nn::reshape(x, {n, static_cast<int>(x.size() / n)}); break;
      case LayerKind::Dense:
        x = activate(nn::dense(x, params_[first_param_[i]].tensor, params_[first_param_[i] + 1].tensor),
                     l.activation);
        break;
      case LayerKind::TransposeConcat: {
        const auto& skip = taps.at(l.skip);
        auto upsampled = nn::conv_transpose3d(x, params_[first_param_[i]].tensor,
                                              params_[first_param_[i] + 1].tensor, {1, 2, 2});
        x = nn::concat(upsampled, skip, l.concat_axis);
        break;
      }
      case LayerKind::ChannelHalvingMax: x = nn::channel_halving_max(x); break;
    }
    if (!l.save_as.empty()) taps[l.save_as] = x;
  }
  if (!is_classifier(spec_.name)) x = nn::reshape(x, {n, 16, 16});
  return x;
}

template <typename Scalar>
Network<Scalar> build_model(ModelName name, const ModelConfig& config, std::uint64_t seed) {
  return Network<Scalar>(make_spec(name, config), seed);
}

template class Network<float>;
template class Network<double>;
template Network<float> build_model(ModelName, const ModelConfig&, std::uint64_t);
template Network<double> build_model(ModelName, const ModelConfig&, std::uint64_t);

nn::Checkpoint make_checkpoint(const Network<float>& net, const std::optional<nn::OptimizerState>& optimizer) {
  nn::Checkpoint c;
  c.model_name = key_name(net.spec().name);
  c.metadata["frames"] = std::to_string(net.spec().config.frames);
  c.metadata["decoder"] =
      net.spec().config.decoder == DecoderReading::ChannelHalving ? "channel_halving" : "depth_stack";
  c.params = nn::export_parameters(net.parameters());
  c.optimizer = optimizer;
  return c;
}

Network<float> network_from_checkpoint(const nn::Checkpoint& ckpt, std::optional<ModelName> expected) {
  ModelName name;
  try {
    name = model_from_name(ckpt.model_name);
  } catch (const Error&) {
    fail(ErrorKind::Load, "checkpoint names unknown model '" + ckpt.model_name + "'");
  }
  if (expected && *expected != name)
    fail(ErrorKind::Load, "checkpoint holds " + display_name(name) + ", expected " + display_name(*expected));
  ModelConfig config;
  if (auto it = ckpt.metadata.find("frames"); it != ckpt.metadata.end()) config.frames = std::stoi(it->second);
  if (auto it = ckpt.metadata.find("decoder"); it != ckpt.metadata.end())
    config.decoder = it->second == "depth_stack" ? DecoderReading::DepthStack : DecoderReading::ChannelHalving;
  Network<float> net(make_spec(name, config), 0);
  nn::import_parameters(ckpt.params, net.parameters());
  return net;
}

}  // namespace perfuseg

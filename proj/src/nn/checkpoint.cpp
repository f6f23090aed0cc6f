#include "perfuseg/nn/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>

#include "perfuseg/error.hpp"
#include "perfuseg/io.hpp"

namespace perfuseg::nn {

namespace {

constexpr char kMagic[8] = {'P', 'S', 'C', 'K', '0', '0', '0', '1'};

void put_f64(std::vector<std::uint8_t>& out, double v) { io::put_u64(out, std::bit_cast<std::uint64_t>(v)); }

void put_floats(std::vector<std::uint8_t>& out, std::span<const float> values) {
  io::put_u64(out, values.size());
  const std::size_t at = out.size();
  out.resize(at + values.size() * sizeof(float));
  if (!values.empty()) std::memcpy(out.data() + at, values.data(), values.size() * sizeof(float));
}

std::vector<float> read_floats(io::ByteReader& r) {
  const std::uint64_t n = r.u64();
  require(n <= r.remaining() / sizeof(float), ErrorKind::IncompleteFile, "checkpoint array runs past end of file");
  auto bytes = r.take(n * sizeof(float));
  std::vector<float> v(n);
  if (n) std::memcpy(v.data(), bytes.data(), bytes.size());
  return v;
}

void put_section(std::vector<std::uint8_t>& out, const char (&tag)[5], const std::vector<std::uint8_t>& payload) {
  out.insert(out.end(), tag, tag + 4);
  io::put_u64(out, payload.size());
  out.insert(out.end(), payload.begin(), payload.end());
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  io::put_string(out, ckpt.model_name);

  std::vector<std::uint8_t> meta;
  io::put_u32(meta, static_cast<std::uint32_t>(ckpt.metadata.size()));
  for (const auto& [k, v] : ckpt.metadata) {
    io::put_string(meta, k);
    io::put_string(meta, v);
  }
  put_section(out, "META", meta);

  std::vector<std::uint8_t> parm;
  io::put_u32(parm, static_cast<std::uint32_t>(ckpt.params.size()));
  for (const auto& p : ckpt.params) {
    io::put_string(parm, p.name);
    io::put_u32(parm, static_cast<std::uint32_t>(p.shape.size()));
    for (int d : p.shape) io::put_u32(parm, static_cast<std::uint32_t>(d));
    put_floats(parm, p.values);
  }
  put_section(out, "PARM", parm);

  if (ckpt.optimizer) {
    const auto& s = *ckpt.optimizer;
    std::vector<std::uint8_t> opts;
    io::put_string(opts, to_string(s.config.kind));
    put_f64(opts, s.config.learning_rate);
    put_f64(opts, s.config.momentum);
    put_f64(opts, s.config.beta1);
    put_f64(opts, s.config.beta2);
    put_f64(opts, s.config.epsilon);
    io::put_u64(opts, s.step);
    io::put_u32(opts, static_cast<std::uint32_t>(s.first.size()));
    for (const auto& b : s.first) put_floats(opts, b);
    io::put_u32(opts, static_cast<std::uint32_t>(s.second.size()));
    for (const auto& b : s.second) put_floats(opts, b);
    put_section(out, "OPTS", opts);
  }
  return out;
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes);
  auto magic = r.take(8);
  require(std::equal(magic.begin(), magic.end(), std::begin(kMagic)), ErrorKind::Format, "missing PSCK0001 magic");
  Checkpoint ckpt;
  ckpt.model_name = r.string();
  while (!r.done()) {
    auto tag_bytes = r.take(4);
    const std::string tag(tag_bytes.begin(), tag_bytes.end());
    const std::uint64_t len = r.u64();
    require(len <= r.remaining(), ErrorKind::IncompleteFile, "checkpoint section " + tag + " is truncated");
    io::ByteReader s(r.take(len));
    if (tag == "META") {
      const auto n = s.u32();
      for (std::uint32_t i = 0; i < n; ++i) {
        auto k = s.string();
        ckpt.metadata[k] = s.string();
      }
    } else if (tag == "PARM") {
      const auto n = s.u32();
      for (std::uint32_t i = 0; i < n; ++i) {
        NamedArray a;
        a.name = s.string();
        const auto rank = s.u32();
        for (std::uint32_t d = 0; d < rank; ++d) a.shape.push_back(static_cast<int>(s.u32()));
        a.values = read_floats(s);
        require(a.values.size() == numel(a.shape), ErrorKind::Format,
                "checkpoint array '" + a.name + "' holds " + std::to_string(a.values.size()) + " values for shape " +
                    to_string(a.shape));
        ckpt.params.push_back(std::move(a));
      }
    } else if (tag == "OPTS") {
      OptimizerState st;
      st.config.kind = optimizer_from_name(s.string());
      st.config.learning_rate = std::bit_cast<double>(s.u64());
      st.config.momentum = std::bit_cast<double>(s.u64());
      st.config.beta1 = std::bit_cast<double>(s.u64());
      st.config.beta2 = std::bit_cast<double>(s.u64());
      st.config.epsilon = std::bit_cast<double>(s.u64());
      st.step = s.u64();
      const auto nf = s.u32();
      for (std::uint32_t i = 0; i < nf; ++i) st.first.push_back(read_floats(s));
      const auto ns = s.u32();
      for (std::uint32_t i = 0; i < ns; ++i) st.second.push_back(read_floats(s));
      ckpt.optimizer = std::move(st);
    }
  }
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  io::write_file(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(io::read_file(path)); }

template <typename Scalar>
std::vector<NamedArray> export_parameters(const std::vector<Parameter<Scalar>>& params) {
  std::vector<NamedArray> out;
  out.reserve(params.size());
  for (const auto& p : params) {
    NamedArray a{p.name, p.tensor.shape(), {}};
    a.values.assign(p.tensor.values().begin(), p.tensor.values().end());
    out.push_back(std::move(a));
  }
  return out;
}

template <typename Scalar>
void import_parameters(const std::vector<NamedArray>& stored, std::vector<Parameter<Scalar>>& params) {
  require(stored.size() == params.size(), ErrorKind::Load,
          "checkpoint holds " + std::to_string(stored.size()) + " parameter arrays, model expects " +
              std::to_string(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    require(stored[i].name == params[i].name && stored[i].shape == params[i].tensor.shape(), ErrorKind::Load,
            "checkpoint array '" + stored[i].name + "' " + to_string(stored[i].shape) + " does not match model '" +
                params[i].name + "' " + to_string(params[i].tensor.shape()));
  }
  for (std::size_t i = 0; i < params.size(); ++i)
    std::copy(stored[i].values.begin(), stored[i].values.end(), params[i].tensor.values().begin());
}

template std::vector<NamedArray> export_parameters(const std::vector<Parameter<float>>&);
template std::vector<NamedArray> export_parameters(const std::vector<Parameter<double>>&);
template void import_parameters(const std::vector<NamedArray>&, std::vector<Parameter<float>>&);
template void import_parameters(const std::vector<NamedArray>&, std::vector<Parameter<double>>&);

}  // namespace perfuseg::nn

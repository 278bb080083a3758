#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "layoutrag/binary_io.hpp"
#include "layoutrag/error.hpp"
#include "layoutrag/model.hpp"

// Checkpoint layout (little-endian):
//   "LRCK" u32 version
//   config: u64 num_categories, d_model, n_layers_base, n_layers_ref, n_heads, sample_steps
//           f64 lambda_align, p_irrelevant; u32 fusion; u64 seed
//   u64 parameter count, then that many f64 in parameter declaration order
namespace layoutrag {

inline constexpr std::array<char, 4> kCheckpointMagic{'L', 'R', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline std::vector<std::uint8_t> serialize_checkpoint(const VectorFieldNet& net) {
  const ModelConfig& c = net.config();
  detail::ByteWriter w;
  w.raw(kCheckpointMagic);
  w.u32(kCheckpointVersion);
  for (std::size_t v : {c.num_categories, c.d_model, c.n_layers_base, c.n_layers_ref, c.n_heads, c.sample_steps}) {
    w.u64(v);
  }
  w.f64(c.lambda_align);
  w.f64(c.p_irrelevant);
  w.u32(static_cast<std::uint32_t>(c.fusion));
  w.u64(c.seed);
  w.u64(net.parameter_count());
  for (const auto& p : net.params()) {
    for (Eigen::Index i = 0; i < p.value.size(); ++i) w.f64(p.value.data()[i]);
  }
  return w.take();
}

inline VectorFieldNet deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes);
  if (!r.magic(kCheckpointMagic)) throw CorruptFileError("not a checkpoint file (bad magic)");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw VersionError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                       std::to_string(kCheckpointVersion) + ")");
  }
  ModelConfig c;
  for (std::size_t* f : {&c.num_categories, &c.d_model, &c.n_layers_base, &c.n_layers_ref, &c.n_heads,
                         &c.sample_steps}) {
    const std::uint64_t v = r.u64();
    if (v > (1u << 16)) throw CorruptFileError("model dimension out of range");
    *f = static_cast<std::size_t>(v);
  }
  c.lambda_align = r.f64();
  c.p_irrelevant = r.f64();
  const std::uint32_t fusion = r.u32();
  if (fusion > static_cast<std::uint32_t>(Fusion::ConcatLinear)) throw CorruptFileError("unknown fusion variant");
  c.fusion = static_cast<Fusion>(fusion);
  c.seed = r.u64();
  try {
    c.validate();
  } catch (const UsageError& e) {
    throw CorruptFileError(std::string("invalid model config in checkpoint: ") + e.what());
  }
  VectorFieldNet net(c);
  if (r.u64() != net.parameter_count()) throw CorruptFileError("parameter count does not match the config");
  for (auto& p : net.params()) {
    for (Eigen::Index i = 0; i < p.value.size(); ++i) {
      const double v = r.f64();
      if (!std::isfinite(v)) throw CorruptFileError("non-finite parameter in " + p.name);
      p.value.data()[i] = v;
    }
  }
  if (!r.done()) throw CorruptFileError("trailing bytes after checkpoint payload");
  return net;
}

inline void save_checkpoint(const VectorFieldNet& net, const std::filesystem::path& path) {
  detail::write_file(path, serialize_checkpoint(net), "checkpoint");
}

inline VectorFieldNet load_checkpoint(const std::filesystem::path& path) {
  return deserialize_checkpoint(detail::read_file(path, "checkpoint"));
}

}  // namespace layoutrag

#pragma once

// Binary checkpoints: header, architecture, little-endian parameter payload,
// optional mask.
//
//   bytes 0-7   "AWTCKPT\0"
//   u32         format version (1)
//   u32         phase (0 init, 1 mask search, 2 trained)
//   u64         seed
//   u64         config hash
//   u8          bias flag
//   u64 L, then L x u64 layer sizes
//   u64 P, then P x f64 parameters
//   u8          mask present; if 1: f64 density, P x f64 mask values

#include <array>
#include <cstring>
#include <fstream>
#include <optional>
#include <string>

#include "awt/binary_io.hpp"
#include "awt/harness/errors.hpp"
#include "awt/network.hpp"

namespace awt::harness {

enum class Phase : std::uint32_t { init = 0, mask_search = 1, trained = 2 };

struct Checkpoint {
  Params params;
  std::optional<Mask> mask;
  std::uint64_t seed = 0;
  std::uint64_t config_hash = 0;
  Phase phase = Phase::init;
};

inline constexpr std::array<char, 8> kCheckpointMagic = {'A', 'W', 'T', 'C', 'K', 'P', 'T', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void write_checkpoint(std::ostream& os, const Checkpoint& c) {
  const MlpSpec& s = c.params.spec;
  if (static_cast<std::size_t>(c.params.theta.size()) != s.param_count())
    throw std::invalid_argument("checkpoint: parameter length does not match the architecture");
  os.write(kCheckpointMagic.data(), kCheckpointMagic.size());
  write_le(os, kCheckpointVersion);
  write_le(os, static_cast<std::uint32_t>(c.phase));
  write_le(os, c.seed);
  write_le(os, c.config_hash);
  write_le(os, static_cast<std::uint8_t>(s.bias ? 1 : 0));
  write_le(os, static_cast<std::uint64_t>(s.layer_sizes.size()));
  for (auto n : s.layer_sizes) write_le(os, static_cast<std::uint64_t>(n));
  write_le(os, static_cast<std::uint64_t>(c.params.theta.size()));
  write_le_doubles(os, c.params.theta.data(), static_cast<std::size_t>(c.params.theta.size()));
  write_le(os, static_cast<std::uint8_t>(c.mask ? 1 : 0));
  if (c.mask) {
    if (c.mask->values.size() != c.params.theta.size())
      throw std::invalid_argument("checkpoint: mask length does not match the parameters");
    write_le(os, std::bit_cast<std::uint64_t>(c.mask->density));
    write_le_doubles(os, c.mask->values.data(), static_cast<std::size_t>(c.mask->values.size()));
  }
}

inline Checkpoint read_checkpoint(std::istream& is) {
  try {
    std::array<char, 8> magic{};
    if (!is.read(magic.data(), magic.size()) || magic != kCheckpointMagic)
      throw FormatError("checkpoint magic: bad magic");
    if (const auto v = read_le<std::uint32_t>(is, "checkpoint version"); v != kCheckpointVersion)
      throw FormatError("checkpoint version: unsupported version " + std::to_string(v));
    Checkpoint c;
    const auto phase = read_le<std::uint32_t>(is, "checkpoint phase");
    if (phase > 2) throw FormatError("checkpoint phase: unknown phase " + std::to_string(phase));
    c.phase = static_cast<Phase>(phase);
    c.seed = read_le<std::uint64_t>(is, "checkpoint seed");
    c.config_hash = read_le<std::uint64_t>(is, "checkpoint config hash");
    MlpSpec s;
    s.bias = read_le<std::uint8_t>(is, "checkpoint bias flag") != 0;
    const auto L = read_le<std::uint64_t>(is, "checkpoint layer count");
    if (L < 2 || L > 64) throw FormatError("checkpoint layer count: implausible value");
    for (std::uint64_t i = 0; i < L; ++i)
      s.layer_sizes.push_back(static_cast<std::size_t>(read_le<std::uint64_t>(is, "checkpoint layer sizes")));
    s.validate();
    const auto P = read_le<std::uint64_t>(is, "checkpoint parameter count");
    if (P != s.param_count())
      throw FormatError("checkpoint parameter count: does not match the architecture");
    c.params = Params{s, Vector(static_cast<Eigen::Index>(P))};
    read_le_doubles(is, c.params.theta.data(), P, "checkpoint parameters");
    if (read_le<std::uint8_t>(is, "checkpoint mask flag")) {
      Mask m{Vector(static_cast<Eigen::Index>(P)), 0.0};
      m.density = std::bit_cast<double>(read_le<std::uint64_t>(is, "checkpoint mask density"));
      read_le_doubles(is, m.values.data(), P, "checkpoint mask");
      c.mask = std::move(m);
    }
    return c;
  } catch (const FormatError&) {
    throw;
  } catch (const std::runtime_error& e) {
    throw FormatError(e.what());
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("checkpoint architecture: ") + e.what());
  }
}

inline void save_checkpoint(const std::string& path, const Checkpoint& c) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path);
  write_checkpoint(os, c);
  if (!os.flush()) throw IoError("write failed: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  return read_checkpoint(is);
}

}  // namespace awt::harness

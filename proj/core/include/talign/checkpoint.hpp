#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

#include "talign/autodiff.hpp"
#include "talign/denoise.hpp"
#include "talign/model.hpp"
#include "talign/optimizer.hpp"

namespace talign {

struct Checkpoint {
  ModelConfig config;
  int stage = 0;               // last completed stage: 0 fresh, 1 or 2
  std::uint64_t iteration = 0; // iterations run in that stage
  ParameterSet params;
  std::optional<EmaState> ema;
  std::optional<AdamWState> optimizer;

  friend bool operator==(const Checkpoint& a, const Checkpoint& b);
};

// Layout: 8-byte magic "TANCKPT1", u64 header length, JSON header, then
// named tensor blobs (u64 name length, name, tensor) for the parameters,
// the teacher and the optimizer moments in header order.
void write_checkpoint(std::ostream& out, const Checkpoint& ckpt);
Checkpoint read_checkpoint(std::istream& in);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace talign

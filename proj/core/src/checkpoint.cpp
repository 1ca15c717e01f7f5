#include "talign/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "talign/error.hpp"
#include "talign/io.hpp"

namespace talign {

using nlohmann::json;

namespace {

constexpr std::array<char, 8> kMagic = {'T', 'A', 'N', 'C', 'K', 'P', 'T', '1'};
constexpr std::uint64_t kMaxHeader = 1ULL << 26;

void write_u64(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t read_u64(std::istream& in) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8)) throw ParseError("checkpoint truncated", 0);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

void write_set(std::ostream& out, const ParameterSet& set) {
  for (std::size_t i = 0; i < set.size(); ++i) {
    write_u64(out, set.name(i).size());
    out.write(set.name(i).data(), static_cast<std::streamsize>(set.name(i).size()));
    write_tensor(out, set[i]);
  }
}

ParameterSet read_set(std::istream& in, const std::vector<std::string>& names) {
  ParameterSet set;
  for (const std::string& expected : names) {
    const std::uint64_t len = read_u64(in);
    if (len > 4096) throw ParseError("checkpoint tensor name too long", 0);
    std::string name(len, '\0');
    if (!in.read(name.data(), static_cast<std::streamsize>(len))) throw ParseError("checkpoint truncated", 0);
    if (name != expected) throw ParseError("checkpoint tensor order mismatch at " + name, 0);
    set.add(name, read_tensor(in));
  }
  return set;
}

}  // namespace

bool operator==(const Checkpoint& a, const Checkpoint& b) {
  auto ema_eq = [](const std::optional<EmaState>& x, const std::optional<EmaState>& y) {
    if (x.has_value() != y.has_value()) return false;
    return !x || (x->teacher == y->teacher && x->momentum == y->momentum);
  };
  return a.config == b.config && a.stage == b.stage && a.iteration == b.iteration && a.params == b.params &&
         ema_eq(a.ema, b.ema) && a.optimizer == b.optimizer;
}

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt) {
  json h;
  h["model_config"] = json::parse(ckpt.config.to_json());
  h["stage"] = ckpt.stage;
  h["iteration"] = ckpt.iteration;
  h["params"] = ckpt.params.names();
  h["has_teacher"] = ckpt.ema.has_value();
  if (ckpt.ema) {
    if (!ckpt.ema->teacher.same_layout(ckpt.params)) throw ShapeError("teacher layout differs from student");
    // Stored as raw bits so the momentum round-trips exactly.
    h["momentum_bits"] = std::bit_cast<std::uint64_t>(ckpt.ema->momentum);
    h["momentum"] = ckpt.ema->momentum;
  }
  h["has_optimizer"] = ckpt.optimizer.has_value();
  if (ckpt.optimizer) {
    if (!ckpt.optimizer->m.same_layout(ckpt.params)) throw ShapeError("optimizer layout differs from student");
    h["optimizer_steps"] = ckpt.optimizer->steps;
  }
  const std::string header = h.dump();
  out.write(kMagic.data(), kMagic.size());
  write_u64(out, header.size());
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  write_set(out, ckpt.params);
  if (ckpt.ema) write_set(out, ckpt.ema->teacher);
  if (ckpt.optimizer) {
    write_set(out, ckpt.optimizer->m);
    write_set(out, ckpt.optimizer->v);
  }
  if (!out) throw IoError("checkpoint write failed");
}

Checkpoint read_checkpoint(std::istream& in) {
  std::array<char, 8> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kMagic) throw ParseError("not a checkpoint file", 0);
  const std::uint64_t len = read_u64(in);
  if (len > kMaxHeader) throw ParseError("checkpoint header too large", 8);
  std::string header(len, '\0');
  if (!in.read(header.data(), static_cast<std::streamsize>(len))) throw ParseError("checkpoint truncated", 16);
  Checkpoint c;
  try {
    const json h = json::parse(header);
    c.config = ModelConfig::from_json(h.at("model_config").dump());
    c.stage = h.at("stage").get<int>();
    c.iteration = h.at("iteration").get<std::uint64_t>();
    const auto names = h.at("params").get<std::vector<std::string>>();
    c.params = read_set(in, names);
    if (h.at("has_teacher").get<bool>()) {
      EmaState ema;
      ema.momentum = std::bit_cast<double>(h.at("momentum_bits").get<std::uint64_t>());
      ema.teacher = read_set(in, names);
      c.ema = std::move(ema);
    }
    if (h.at("has_optimizer").get<bool>()) {
      AdamWState opt;
      opt.steps = h.at("optimizer_steps").get<std::vector<std::uint64_t>>();
      if (opt.steps.size() != names.size()) throw ParseError("optimizer step count mismatch", 0);
      opt.m = read_set(in, names);
      opt.v = read_set(in, names);
      c.optimizer = std::move(opt);
    }
  } catch (const json::exception& e) {
    throw ParseError(std::string("checkpoint header: ") + e.what(), 16);
  }
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ostringstream ss(std::ios::binary);
  write_checkpoint(ss, ckpt);
  write_file_atomic(path, ss.str());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  return read_checkpoint(in);
}

}  // namespace talign

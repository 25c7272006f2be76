#pragma once

// Checkpoint archive:
//   bytes 0..7   magic "PEDGERCK"
//   bytes 8..11  format version (uint32, little endian)
//   bytes 12..19 header length N (uint64, little endian)
//   N bytes      JSON header: config, epoch, step counters, deployable tag,
//                model card, and per network the entry table
//                {name, shape, offset, count} into the payload
//   payload      float32 little-endian values, entries back to back

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "pedger/trainer.hpp"

namespace pedger {

inline constexpr char kCheckpointMagic[8] = {'P', 'E', 'D', 'G', 'E', 'R', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace detail {

inline nlohmann::json entry_table(const Params& p, std::uint64_t& offset) {
  nlohmann::json t = nlohmann::json::array();
  for (const auto& e : p.entries()) {
    t.push_back({{"name", e.name}, {"shape", e.shape}, {"offset", offset}, {"count", e.values.size()}});
    offset += e.values.size();
  }
  return t;
}

inline Params read_params(const nlohmann::json& table, const std::vector<float>& payload) {
  Params p;
  for (const auto& e : table) {
    const std::uint64_t off = e.at("offset"), n = e.at("count");
    if (off + n > payload.size()) throw LoadError("checkpoint: entry '" + e.at("name").get<std::string>() + "' out of range");
    p.add(e.at("name"), e.at("shape").get<std::vector<int>>(),
          std::vector<float>(payload.begin() + static_cast<std::ptrdiff_t>(off),
                             payload.begin() + static_cast<std::ptrdiff_t>(off + n)));
  }
  return p;
}

}  // namespace detail

inline void save_checkpoint(const std::filesystem::path& path, const TrainState& s) {
  std::vector<std::pair<std::string, const Params*>> nets{{"nonrecurrent", &s.nonrecurrent}};
  if (s.has_recurrent) nets.emplace_back("recurrent", &s.recurrent);
  if (s.has_twins) {
    nets.emplace_back("momentum_nonrecurrent", &s.momentum_nonrecurrent);
    if (s.momentum_recurrent.size()) nets.emplace_back("momentum_recurrent", &s.momentum_recurrent);
  }
  nlohmann::json h;
  h["format"] = "pedger-checkpoint";
  h["config"] = to_json(s.config);
  h["epoch"] = s.epoch;
  h["step"] = s.step;
  h["total_steps"] = s.total_steps;
  h["has_twins"] = s.has_twins;
  h["deployable"] = deployable_for(s.config.ablation_mode) == Deployable::momentum_nonrecurrent && s.has_twins
                        ? "momentum_nonrecurrent"
                        : "nonrecurrent";
  h["model_card"] = model_card(s);
  std::uint64_t offset = 0;
  for (const auto& [name, p] : nets) h["networks"][name] = detail::entry_table(*p, offset);
  const std::string header = h.dump();

  std::ofstream os(path, std::ios::binary);
  if (!os) throw LoadError("cannot write checkpoint '" + path.string() + "'");
  const std::uint64_t hlen = header.size();
  os.write(kCheckpointMagic, 8);
  os.write(reinterpret_cast<const char*>(&kCheckpointVersion), 4);
  os.write(reinterpret_cast<const char*>(&hlen), 8);
  os.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (const auto& [name, p] : nets)
    for (const auto& e : p->entries())
      os.write(reinterpret_cast<const char*>(e.values.data()), static_cast<std::streamsize>(e.values.size() * 4));
  if (!os) throw LoadError("short write on checkpoint '" + path.string() + "'");
}

/// Restores parameters, config and counters. Optimizer moments are not stored,
/// so a loaded state is meant for inference.
inline TrainState load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw LoadError("cannot open checkpoint '" + path.string() + "'");
  char magic[8];
  std::uint32_t version = 0;
  std::uint64_t hlen = 0;
  is.read(magic, 8);
  is.read(reinterpret_cast<char*>(&version), 4);
  is.read(reinterpret_cast<char*>(&hlen), 8);
  if (!is || std::memcmp(magic, kCheckpointMagic, 8) != 0) throw LoadError("'" + path.string() + "' is not a checkpoint");
  if (version != kCheckpointVersion)
    throw LoadError("checkpoint '" + path.string() + "' has format version " + std::to_string(version) +
                    ", expected " + std::to_string(kCheckpointVersion));
  std::string header(hlen, '\0');
  is.read(header.data(), static_cast<std::streamsize>(hlen));
  if (!is) throw LoadError("checkpoint '" + path.string() + "' is truncated");
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(header);
  } catch (const nlohmann::json::exception& e) {
    throw LoadError("checkpoint '" + path.string() + "': bad header: " + e.what());
  }
  std::uint64_t total = 0;
  for (const auto& [name, table] : h.at("networks").items())
    for (const auto& e : table) total = std::max<std::uint64_t>(total, e.at("offset").get<std::uint64_t>() + e.at("count").get<std::uint64_t>());
  std::vector<float> payload(total);
  is.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(total * 4));
  if (!is) throw LoadError("checkpoint '" + path.string() + "' is truncated");

  TrainState s;
  s.config = train_config_from_json(h.at("config"));
  s.epoch = h.at("epoch");
  s.step = h.at("step");
  s.total_steps = h.at("total_steps");
  s.has_twins = h.at("has_twins");
  const auto& nets = h.at("networks");
  s.nonrecurrent = detail::read_params(nets.at("nonrecurrent"), payload);
  if (nets.contains("recurrent")) {
    s.has_recurrent = true;
    s.recurrent = detail::read_params(nets.at("recurrent"), payload);
  }
  if (nets.contains("momentum_nonrecurrent")) s.momentum_nonrecurrent = detail::read_params(nets.at("momentum_nonrecurrent"), payload);
  if (nets.contains("momentum_recurrent")) s.momentum_recurrent = detail::read_params(nets.at("momentum_recurrent"), payload);

  if (s.nonrecurrent.fingerprint() != nonrecurrent_fingerprint<float>(s.config.nonrecurrent))
    throw StructuralMismatch("checkpoint '" + path.string() + "': non-recurrent parameters do not match the stored config");
  if (s.has_recurrent && s.recurrent.fingerprint() != recurrent_fingerprint<float>(s.config.recurrent))
    throw StructuralMismatch("checkpoint '" + path.string() + "': recurrent parameters do not match the stored config");
  s.opt_nonrecurrent = AdamW<float>(s.nonrecurrent, s.config.adamw());
  if (s.has_recurrent) s.opt_recurrent = AdamW<float>(s.recurrent, s.config.adamw());
  return s;
}

/// Number of parameter collections stored for a state.
inline int stored_network_count(const TrainState& s) {
  return 1 + (s.has_recurrent ? 1 : 0) + (s.has_twins ? 1 + (s.momentum_recurrent.size() ? 1 : 0) : 0);
}

}  // namespace pedger

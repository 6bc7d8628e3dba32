#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "dpl/encoder.hpp"
#include "dpl/prototypes.hpp"

namespace dpl {

// Binary layout, all fields little-endian:
//   magic "DPLCKPT\0", u32 version, u32 classifier form, u32 extended flag,
//   u32 input, hidden, embedding, n_ind, n_ood, f64 dropout_rate,
//   u32 tensor count, then every parameter tensor in declaration order as
//   u64 element count followed by f64 values (row-major),
//   u32 bank flag; when set: u32 rows, u32 cols, u32 n_ind, f64 gamma, f64 values.
struct Checkpoint {
  EncoderModel model;
  std::optional<PrototypeBank> bank;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<unsigned char> serialize_checkpoint(const EncoderModel& model,
                                                const PrototypeBank* bank = nullptr);
Checkpoint deserialize_checkpoint(const std::vector<unsigned char>& bytes);

void save_checkpoint(const std::filesystem::path& path, const EncoderModel& model,
                     const PrototypeBank* bank = nullptr);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// FNV-1a of the serialized model (no bank); identifies a pretrained encoder.
std::uint64_t model_digest(const EncoderModel& model);

}  // namespace dpl

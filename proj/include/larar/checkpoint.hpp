#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "larar/model.hpp"
#include "larar/vulnerability.hpp"

namespace larar {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  NetworkParams params;
  std::optional<CalibrationStats> calibration;
  // Free-form text stored verbatim; the CLI keeps the resolved run config here.
  std::string metadata;
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);

// Throws ShapeMismatchError when `expected` is given and differs from the
// stored model kind.
Checkpoint load_checkpoint(const std::filesystem::path& path,
                           std::optional<ModelKind> expected = std::nullopt);

}  // namespace larar

// SPDX-License-Identifier: Apache-2.0
#pragma once

// Checkpoint container.
//
// Layout (little-endian):
//   magic "PECOPCKP"
//   u32 format_version
//   u64 config digest (architecture of the backbone, adapters excluded)
//   u8  included (0 = trainable_only, 1 = all)
//   u32 metadata count, then (string key, string value) pairs
//   u32 blob count, then per blob:
//       string name, u8 kind, u32 rank, rank x i64 extents, f32 data
//   u64 FNV-1a of every preceding byte
// Strings are u32 length + bytes.

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "pecop/backbone.hpp"

namespace pecop {

inline constexpr uint32_t kCheckpointFormatVersion = 1;

enum class IncludedParams { trainable_only, all };

const char* to_string(IncludedParams included) noexcept;

/// Parameter kinds share the numbering of ParamKind; buffers follow.
enum class BlobKind : uint8_t { backbone = 0, bn_affine = 1, adapter = 2, head = 3, buffer = 4 };

BlobKind blob_kind(ParamKind kind) noexcept;

struct Blob {
  std::string name;
  BlobKind kind = BlobKind::backbone;
  Tensor value;

  bool operator==(const Blob&) const = default;
};

struct Checkpoint {
  uint32_t format_version = kCheckpointFormatVersion;
  uint64_t config_digest = 0;
  IncludedParams included = IncludedParams::all;
  std::map<std::string, std::string> metadata;
  std::vector<Blob> blobs;

  const Blob* find(std::string_view name) const;
  bool has_kind(BlobKind kind) const;
  bool operator==(const Checkpoint&) const = default;
};

/// Copies the selected parameters (and the running statistics of every
/// BatchNorm whose affine parameters are selected) out of the model.
Checkpoint capture_checkpoint(Model& model, IncludedParams included,
                              std::map<std::string, std::string> metadata = {});

std::string serialize_checkpoint(const Checkpoint& checkpoint);
Checkpoint deserialize_checkpoint(std::string_view bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
/// Throws CompatibilityError "checkpoint not found" for a missing file.
Checkpoint load_checkpoint(const std::filesystem::path& path);

struct RestoreOptions {
  /// Adapters absent from every source keep their fresh initialization.
  bool allow_missing_adapters = false;
  /// Head blobs in the sources are skipped instead of restored.
  bool skip_heads = false;
};

/// Fills the model from `checkpoint`, falling back to `base` for parameters
/// it does not carry. Heads present in a source but not in the model are
/// created. Digest, shape and coverage problems raise CompatibilityError.
void restore_checkpoint(Model& model, const Checkpoint& checkpoint, const Checkpoint* base = nullptr,
                        const RestoreOptions& options = {});

}  // namespace pecop

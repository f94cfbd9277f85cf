// SPDX-License-Identifier: Apache-2.0
#include "pecop/checkpoint.hpp"

#include <algorithm>
#include <cstring>
#include <set>

#include "pecop/binary_io.hpp"
#include "pecop/random.hpp"

namespace pecop {

namespace {

constexpr std::string_view kMagic = "PECOPCKP";

bool ends_with(std::string_view s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

std::string prefix_of(const std::string& name) {
  const auto dot = name.rfind('.');
  return dot == std::string::npos ? std::string() : name.substr(0, dot);
}

// Head blobs are named head.<name>.weight / head.<name>.bias.
std::string head_name_of(const std::string& blob_name) {
  const std::string p = prefix_of(blob_name);
  return p.substr(5);
}

}  // namespace

const char* to_string(IncludedParams included) noexcept {
  return included == IncludedParams::all ? "all" : "trainable_only";
}

const Blob* Checkpoint::find(std::string_view name) const {
  for (const auto& b : blobs)
    if (b.name == name) return &b;
  return nullptr;
}

bool Checkpoint::has_kind(BlobKind kind) const {
  return std::any_of(blobs.begin(), blobs.end(), [kind](const Blob& b) { return b.kind == kind; });
}

BlobKind blob_kind(ParamKind kind) noexcept { return static_cast<BlobKind>(static_cast<uint8_t>(kind)); }

Checkpoint capture_checkpoint(Model& model, IncludedParams included, std::map<std::string, std::string> metadata) {
  Checkpoint ck;
  ck.config_digest = model.spec().digest();
  ck.included = included;
  ck.metadata = std::move(metadata);
  std::set<std::string> selected_prefixes;
  for (const auto& np : model.parameters()) {
    if (included == IncludedParams::trainable_only && !np.param->trainable) continue;
    ck.blobs.push_back({np.name, blob_kind(np.param->kind), np.param->value});
    selected_prefixes.insert(prefix_of(np.name));
  }
  for (const auto& nb : model.buffers()) {
    if (included == IncludedParams::all || selected_prefixes.count(prefix_of(nb.name))) {
      ck.blobs.push_back({nb.name, BlobKind::buffer, *nb.buffer});
    }
  }
  return ck;
}

std::string serialize_checkpoint(const Checkpoint& ck) {
  using namespace binary;
  std::string out(kMagic);
  put_u32(out, ck.format_version);
  put_u64(out, ck.config_digest);
  put_u8(out, ck.included == IncludedParams::all ? 1 : 0);
  put_u32(out, static_cast<uint32_t>(ck.metadata.size()));
  for (const auto& [k, v] : ck.metadata) {
    put_string(out, k);
    put_string(out, v);
  }
  put_u32(out, static_cast<uint32_t>(ck.blobs.size()));
  for (const auto& b : ck.blobs) {
    put_string(out, b.name);
    put_u8(out, static_cast<uint8_t>(b.kind));
    put_u32(out, static_cast<uint32_t>(b.value.rank()));
    for (int64_t d : b.value.shape()) put_le<int64_t>(out, d);
    out.append(reinterpret_cast<const char*>(b.value.ptr()), b.value.size() * sizeof(float));
  }
  put_u64(out, fnv1a64(out));
  return out;
}

Checkpoint deserialize_checkpoint(std::string_view bytes) {
  if (bytes.size() < kMagic.size() + 8 || bytes.substr(0, kMagic.size()) != kMagic) {
    throw DataError("not a checkpoint (bad magic)");
  }
  const std::string_view body = bytes.substr(0, bytes.size() - 8);
  uint64_t stored = 0;
  std::memcpy(&stored, bytes.data() + body.size(), 8);
  binary::Reader r(body);
  r.take(kMagic.size());
  Checkpoint ck;
  ck.format_version = r.u32();
  if (ck.format_version != kCheckpointFormatVersion) {
    throw CompatibilityError("checkpoint format version " + std::to_string(ck.format_version) + " unsupported (expected " +
                             std::to_string(kCheckpointFormatVersion) + ")");
  }
  if (fnv1a64(body) != stored) throw DataError("checkpoint checksum mismatch (file is corrupt)");
  ck.config_digest = r.u64();
  const uint8_t inc = r.u8();
  if (inc > 1) throw DataError("checkpoint: invalid included flag");
  ck.included = inc ? IncludedParams::all : IncludedParams::trainable_only;
  const uint32_t n_meta = r.u32();
  for (uint32_t i = 0; i < n_meta; ++i) {
    std::string k = r.string();
    ck.metadata[k] = r.string();
  }
  const uint32_t n_blobs = r.u32();
  for (uint32_t i = 0; i < n_blobs; ++i) {
    Blob b;
    b.name = r.string();
    const uint8_t kind = r.u8();
    if (kind > static_cast<uint8_t>(BlobKind::buffer)) throw DataError("checkpoint: invalid blob kind for " + b.name);
    b.kind = static_cast<BlobKind>(kind);
    const uint32_t rank = r.u32();
    if (rank > 8) throw DataError("checkpoint: implausible rank for " + b.name);
    Shape shape(rank);
    for (auto& d : shape) d = r.le<int64_t>();
    const int64_t n = shape_numel(shape);
    if (n < 0 || static_cast<size_t>(n) * sizeof(float) > r.remaining()) throw DataError("checkpoint: truncated blob " + b.name);
    std::vector<float> data(static_cast<size_t>(n));
    std::memcpy(data.data(), r.take(data.size() * sizeof(float)).data(), data.size() * sizeof(float));
    b.value = Tensor(std::move(shape), std::move(data));
    ck.blobs.push_back(std::move(b));
  }
  if (r.remaining() != 0) throw DataError("checkpoint: trailing bytes");
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  binary::write_file_atomic(path, serialize_checkpoint(checkpoint));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::is_regular_file(path)) throw CompatibilityError("checkpoint not found: " + path.string());
  return deserialize_checkpoint(binary::read_file(path));
}

void restore_checkpoint(Model& model, const Checkpoint& checkpoint, const Checkpoint* base,
                        const RestoreOptions& options) {
  const uint64_t digest = model.spec().digest();
  for (const Checkpoint* src : {&checkpoint, base}) {
    if (src && src->config_digest != digest) {
      throw CompatibilityError("checkpoint was written for a different backbone architecture");
    }
  }

  // Heads are owned by the checkpoint, so create the ones the model lacks.
  if (!options.skip_heads) {
    for (const Checkpoint* src : {base, &checkpoint}) {
      if (!src) continue;
      for (const auto& b : src->blobs) {
        if (b.kind != BlobKind::head || !ends_with(b.name, ".weight")) continue;
        const std::string head = head_name_of(b.name);
        if (!model.has_head(head)) model.add_head(head, b.value.dim(0), 0, true, b.value.dim(1));
      }
    }
  }

  auto lookup = [&](const std::string& name) -> const Blob* {
    if (const Blob* b = checkpoint.find(name)) return b;
    return base ? base->find(name) : nullptr;
  };
  auto assign = [](const std::string& name, Tensor& dst, const Blob& src) {
    if (dst.shape() != src.value.shape()) {
      throw CompatibilityError("checkpoint blob " + name + " has shape " + shape_string(src.value.shape()) +
                               ", model expects " + shape_string(dst.shape()));
    }
    dst = src.value;
  };

  std::set<std::string> used;
  std::vector<std::string> missing;
  for (const auto& np : model.parameters()) {
    const auto kind = np.param->kind;
    if (kind == ParamKind::head && options.skip_heads) continue;
    if (const Blob* b = lookup(np.name)) {
      assign(np.name, np.param->value, *b);
      used.insert(np.name);
    } else if (!(kind == ParamKind::adapter && options.allow_missing_adapters)) {
      missing.push_back(np.name);
    }
  }
  for (const auto& nb : model.buffers()) {
    if (const Blob* b = lookup(nb.name)) {
      assign(nb.name, *nb.buffer, *b);
      used.insert(nb.name);
    } else {
      missing.push_back(nb.name);
    }
  }
  if (!missing.empty()) {
    std::string msg = "checkpoint is missing " + std::to_string(missing.size()) + " parameter(s), e.g. " + missing.front();
    if (checkpoint.included == IncludedParams::trainable_only && !base) msg += "; a trainable_only checkpoint needs a base checkpoint";
    throw CompatibilityError(msg);
  }
  for (const Checkpoint* src : {&checkpoint, base}) {
    if (!src) continue;
    for (const auto& b : src->blobs) {
      if (used.count(b.name)) continue;
      if (options.skip_heads && b.kind == BlobKind::head) continue;
      throw CompatibilityError("checkpoint blob " + b.name + " has no counterpart in the model");
    }
  }
}

}  // namespace pecop

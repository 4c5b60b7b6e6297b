#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "refquery/model.hpp"
#include "refquery/windowing.hpp"

namespace refquery::model {

inline constexpr char kBundleMagic[8] = {'R', 'Q', 'B', 'U', 'N', 'D', 'L', 'E'};
inline constexpr std::uint32_t kBundleVersion = 1;
inline constexpr std::size_t kMaxNameLength = 255;

/// Frozen network, the normalizers fitted on the source domain, and one
/// learned reference embedding per target appliance.
struct ModelBundle {
  Network network;
  win::Normalizers normalizers;
  std::map<std::string, Tensor> embeddings;
  std::uint32_t format_version = kBundleVersion;

  /// z-space value of 0 W under the power normalizer.
  float off_bias() const { return normalizers.power.zero_point(); }
  const Tensor& embedding(const std::string& appliance) const;

  friend bool operator==(const ModelBundle&, const ModelBundle&) = default;
};

/// Byte layout of a serialized bundle:
///
///   "RQBUNDLE" | u32 version | u32 window, kernel, c1..c5, E, H
///   | 6 x f32 normalizers (query, reference, power: mean, std)
///   | u32 tensor count | per tensor: u16 name length, name, u8 rank,
///     u32 dims[rank], f32 values
///   | u32 embedding count | per embedding: u16 name length, name,
///     u32 length, f32 values
///   | u32 CRC32 of every preceding byte
///
/// All integers and floats are little-endian.
std::vector<std::uint8_t> serialize_bundle(const ModelBundle& bundle);
ModelBundle deserialize_bundle(const std::vector<std::uint8_t>& bytes);

void save_bundle(const ModelBundle& bundle, const std::filesystem::path& path);
ModelBundle load_bundle(const std::filesystem::path& path);

/// Byte accounting of the layout above.
struct BundleLayout {
  std::size_t fixed_bytes = 0;             // magic, version, architecture, normalizers, counts, CRC
  std::size_t tensor_descriptor_bytes = 0; // names, ranks, dims
  std::size_t parameter_bytes = 0;         // 4 x parameter count
  std::size_t embedding_bytes = 0;         // all embedding records
  std::size_t total() const {
    return fixed_bytes + tensor_descriptor_bytes + parameter_bytes + embedding_bytes;
  }
};

BundleLayout bundle_layout(const ModelBundle& bundle);
/// Size of one embedding record: name header + 4 x E value bytes.
std::size_t embedding_record_bytes(const std::string& name, std::size_t length);

/// "name: v1 v2 ..." per line, sorted by name.
void export_embeddings_text(const ModelBundle& bundle, std::ostream& out);

}  // namespace refquery::model

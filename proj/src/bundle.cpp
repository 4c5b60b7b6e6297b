#include "refquery/bundle.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <iterator>

#include "refquery/error.hpp"

namespace refquery::model {
namespace {

static_assert(std::endian::native == std::endian::little,
              "bundle encoding assumes a little-endian host");

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  void u8(std::uint8_t v) { bytes(&v, 1); }
  void u16(std::uint16_t v) { bytes(&v, 2); }
  void u32(std::uint32_t v) { bytes(&v, 4); }
  void f32(float v) { bytes(&v, 4); }
  void name(const std::string& s) {
    if (s.empty() || s.size() > kMaxNameLength) {
      throw InvalidArgumentError("bundle names must be 1-255 bytes: '" + s + "'");
    }
    u16(static_cast<std::uint16_t>(s.size()));
    bytes(s.data(), s.size());
  }
  void floats(const Tensor& t) { bytes(t.data(), t.size() * sizeof(float)); }
  std::vector<std::uint8_t>& buffer() { return out_; }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  Reader(const std::uint8_t* data, std::size_t size) : data_(data), size_(size) {}
  void bytes(void* p, std::size_t n) {
    need(n);
    std::memcpy(p, data_ + pos_, n);
    pos_ += n;
  }
  std::uint8_t u8() { std::uint8_t v; bytes(&v, 1); return v; }
  std::uint16_t u16() { std::uint16_t v; bytes(&v, 2); return v; }
  std::uint32_t u32() { std::uint32_t v; bytes(&v, 4); return v; }
  float f32() { float v; bytes(&v, 4); return v; }
  std::string name() {
    const std::uint16_t n = u16();
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }
  Tensor tensor(Shape shape) {
    const std::size_t n = shape_size(shape);
    need(n * sizeof(float));
    Tensor t(std::move(shape));
    bytes(t.data(), n * sizeof(float));
    return t;
  }
  std::size_t remaining() const { return size_ - pos_; }
  std::size_t position() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (n > size_ - pos_) throw TruncatedFileError("bundle is truncated");
  }
  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

std::uint32_t crc(const std::uint8_t* data, std::size_t n) {
  return static_cast<std::uint32_t>(
      crc32(crc32(0L, Z_NULL, 0), data, static_cast<uInt>(n)));
}

constexpr std::size_t kArchitectureWords = 4 + kConvLayers;

}  // namespace

const Tensor& ModelBundle::embedding(const std::string& appliance) const {
  const auto it = embeddings.find(appliance);
  if (it == embeddings.end()) {
    throw InvalidArgumentError("bundle has no embedding for '" + appliance + "'");
  }
  return it->second;
}

std::vector<std::uint8_t> serialize_bundle(const ModelBundle& bundle) {
  Writer w;
  const Architecture& a = bundle.network.arch();
  w.bytes(kBundleMagic, sizeof kBundleMagic);
  w.u32(bundle.format_version);
  w.u32(static_cast<std::uint32_t>(a.window));
  w.u32(static_cast<std::uint32_t>(a.kernel));
  for (std::size_t c : a.channels) w.u32(static_cast<std::uint32_t>(c));
  w.u32(static_cast<std::uint32_t>(a.embedding));
  w.u32(static_cast<std::uint32_t>(a.hidden));
  for (const auto* z : {&bundle.normalizers.query, &bundle.normalizers.reference,
                        &bundle.normalizers.power}) {
    w.f32(z->mean());
    w.f32(z->std());
  }
  const nd::ParamSet& params = bundle.network.params();
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    w.name(params.name(i));
    const Tensor& t = params.value(i);
    w.u8(static_cast<std::uint8_t>(t.rank()));
    for (std::size_t d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
    w.floats(t);
  }
  w.u32(static_cast<std::uint32_t>(bundle.embeddings.size()));
  for (const auto& [name, e] : bundle.embeddings) {
    if (e.size() != a.embedding) {
      throw InvalidShapeError("embedding '" + name + "' has the wrong length");
    }
    w.name(name);
    w.u32(static_cast<std::uint32_t>(e.size()));
    w.floats(e);
  }
  auto& buf = w.buffer();
  w.u32(crc(buf.data(), buf.size()));
  return std::move(buf);
}

ModelBundle deserialize_bundle(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes.data(), bytes.size());
  char magic[sizeof kBundleMagic];
  if (bytes.size() < sizeof magic) throw TruncatedFileError("bundle is truncated");
  r.bytes(magic, sizeof magic);
  if (std::memcmp(magic, kBundleMagic, sizeof magic) != 0) {
    throw FormatError("not a bundle file (bad magic)");
  }
  const std::uint32_t version = r.u32();
  if (version != kBundleVersion) {
    throw VersionMismatchError("bundle format version " + std::to_string(version) +
                               " is not supported (expected " +
                               std::to_string(kBundleVersion) + ")");
  }
  Architecture a;
  a.window = r.u32();
  a.kernel = r.u32();
  for (auto& c : a.channels) c = r.u32();
  a.embedding = r.u32();
  a.hidden = r.u32();
  float norm[6];
  for (float& v : norm) v = r.f32();

  nd::ParamSet params;
  const std::uint32_t tensors = r.u32();
  for (std::uint32_t i = 0; i < tensors; ++i) {
    std::string name = r.name();
    const std::uint8_t rank = r.u8();
    Shape shape(rank);
    for (auto& d : shape) d = r.u32();
    params.add(std::move(name), r.tensor(std::move(shape)));
  }
  std::map<std::string, Tensor> embeddings;
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.name();
    const std::uint32_t length = r.u32();
    embeddings[std::move(name)] = r.tensor({length});
  }
  const std::size_t body = r.position();
  const std::uint32_t stored = r.u32();
  if (r.remaining() != 0) throw FormatError("trailing bytes after bundle");
  if (stored != crc(bytes.data(), body)) {
    throw ChecksumError("bundle checksum mismatch");
  }

  ModelBundle bundle;
  bundle.format_version = version;
  bundle.network = Network(a, std::move(params));
  bundle.normalizers = {win::ZNormalizer(norm[0], norm[1]),
                        win::ZNormalizer(norm[2], norm[3]),
                        win::ZNormalizer(norm[4], norm[5])};
  for (auto& [name, e] : embeddings) {
    if (e.size() != a.embedding) {
      throw FormatError("embedding '" + name + "' has the wrong length");
    }
  }
  bundle.embeddings = std::move(embeddings);
  return bundle;
}

void save_bundle(const ModelBundle& bundle, const std::filesystem::path& path) {
  const auto bytes = serialize_bundle(bundle);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InvalidArgumentError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw InvalidArgumentError("failed writing " + path.string());
}

ModelBundle load_bundle(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw EmptyInputError("cannot open bundle " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                        std::istreambuf_iterator<char>());
  return deserialize_bundle(bytes);
}

std::size_t embedding_record_bytes(const std::string& name, std::size_t length) {
  return 2 + name.size() + 4 + 4 * length;
}

BundleLayout bundle_layout(const ModelBundle& bundle) {
  BundleLayout layout;
  layout.fixed_bytes = sizeof kBundleMagic + 4 + 4 * kArchitectureWords +
                       6 * 4 + 4 + 4 + 4;
  const nd::ParamSet& params = bundle.network.params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    layout.tensor_descriptor_bytes +=
        2 + params.name(i).size() + 1 + 4 * params.value(i).rank();
    layout.parameter_bytes += 4 * params.value(i).size();
  }
  for (const auto& [name, e] : bundle.embeddings) {
    layout.embedding_bytes += embedding_record_bytes(name, e.size());
  }
  return layout;
}

void export_embeddings_text(const ModelBundle& bundle, std::ostream& out) {
  const auto precision = out.precision(9);
  for (const auto& [name, e] : bundle.embeddings) {
    out << name << ':';
    for (float v : e.values()) out << ' ' << v;
    out << '\n';
  }
  out.precision(precision);
}

}  // namespace refquery::model

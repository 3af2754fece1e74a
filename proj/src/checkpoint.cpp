#include "tacmamba/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <memory>

namespace tacmamba {
namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

// On-disk integers are little-endian; this code assumes a little-endian host
// (checked once at write/read entry).
void check_endianness() {
  const std::uint32_t probe = 1;
  unsigned char b;
  std::memcpy(&b, &probe, 1);
  if (b != 1) throw Error("big-endian hosts are not supported");
}

void put_bytes(std::FILE* f, const void* p, std::size_t n) {
  if (std::fwrite(p, 1, n, f) != n) throw IoError("short write");
}

template <typename T>
void put(std::FILE* f, T v) {
  put_bytes(f, &v, sizeof(T));
}

struct Reader {
  std::FILE* f;
  std::uint64_t offset = 0;
  void bytes(void* p, std::size_t n, const char* what) {
    if (std::fread(p, 1, n, f) != n) throw ParseError(std::string("truncated file reading ") + what, offset);
    offset += n;
  }
  template <typename T>
  T get(const char* what) {
    T v;
    bytes(&v, sizeof(T), what);
    return v;
  }
};

}  // namespace

void write_checkpoint(const std::string& path, const TensorMap& tensors) {
  check_endianness();
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw IoError("cannot open for write: " + path);
  std::FILE* f = fp.get();

  put_bytes(f, "TACW", 4);
  put<std::uint32_t>(f, kCheckpointVersion);
  put<std::uint32_t>(f, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    put<std::uint32_t>(f, static_cast<std::uint32_t>(name.size()));
    put_bytes(f, name.data(), name.size());
    put<std::uint32_t>(f, static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) put<std::uint64_t>(f, static_cast<std::uint64_t>(d));
    put_bytes(f, t.v.data(), t.v.size() * sizeof(float));
  }
  if (std::fflush(f) != 0) throw IoError("flush failed: " + path);
}

TensorMap read_checkpoint(const std::string& path) {
  check_endianness();
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw IoError("cannot open: " + path);
  Reader r{fp.get()};

  char magic[4];
  r.bytes(magic, 4, "magic");
  if (std::memcmp(magic, "TACW", 4) != 0) throw ParseError("bad magic, expected TACW", 0);
  auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion)
    throw VersionError("unsupported checkpoint version " + std::to_string(version));
  auto count = r.get<std::uint32_t>("tensor count");

  TensorMap out;
  for (std::uint32_t i = 0; i < count; ++i) {
    auto name_len = r.get<std::uint32_t>("name length");
    if (name_len > (1u << 20)) throw ParseError("implausible name length", r.offset - 4);
    std::string name(name_len, '\0');
    r.bytes(name.data(), name_len, "name");
    auto ndim = r.get<std::uint32_t>("rank");
    if (ndim > 8) throw ParseError("implausible rank", r.offset - 4);
    std::vector<std::int64_t> shape(ndim);
    std::int64_t numel = 1;
    for (auto& d : shape) {
      d = static_cast<std::int64_t>(r.get<std::uint64_t>("dim"));
      numel *= d;
    }
    if (numel < 0 || numel > (1ll << 32)) throw ParseError("implausible tensor size", r.offset);
    Tensor<float> t(shape);
    r.bytes(t.v.data(), t.v.size() * sizeof(float), "tensor data");
    out.emplace(std::move(name), std::move(t));
  }
  return out;
}

TensorMap store_to_tensors(const ParamStore<float>& store, const std::string& prefix) {
  TensorMap out;
  for (const auto& [name, v] : store.views()) {
    Tensor<float> t(v.shape);
    const float* src = store.values().data() + v.offset;
    std::copy(src, src + v.numel, t.v.begin());
    out.emplace(prefix + name, std::move(t));
  }
  return out;
}

void load_into_store(ParamStore<float>& store, const TensorMap& tensors, const std::string& prefix) {
  for (const auto& [name, v] : store.views()) {
    auto it = tensors.find(prefix + name);
    if (it == tensors.end()) throw ParseError("checkpoint missing tensor " + prefix + name, 0);
    if (it->second.shape != v.shape) throw ShapeError("checkpoint shape mismatch for " + prefix + name);
    float* dst = store.values().data() + v.offset;
    std::copy(it->second.v.begin(), it->second.v.end(), dst);
  }
}

}  // namespace tacmamba

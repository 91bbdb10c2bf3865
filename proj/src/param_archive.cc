#include "haf/param_archive.h"

#include <openssl/evp.h>

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <memory>
#include <numeric>

#include "haf/error.h"

namespace haf {
namespace {

static_assert(std::endian::native == std::endian::little,
              "archive I/O assumes a little-endian host");

constexpr char kMagic[8] = {'H', 'A', 'F', 'P', 'A', 'R', 'A', 'M'};

template <typename T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is, const std::string& what) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw ParameterError("truncated parameter archive while reading " + what);
  return v;
}

std::string read_bytes(std::istream& is, std::uint64_t n, const std::string& what) {
  constexpr std::uint64_t kMaxString = 1ull << 30;
  if (n > kMaxString) throw ParameterError("implausible length for " + what);
  std::string s(n, '\0');
  is.read(s.data(), static_cast<std::streamsize>(n));
  if (!is) throw ParameterError("truncated parameter archive while reading " + what);
  return s;
}

std::string shape_str(const std::vector<std::int64_t>& shape) {
  std::string s = "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

}  // namespace

std::int64_t TensorEntry::numel() const {
  return std::accumulate(shape.begin(), shape.end(), std::int64_t{1},
                         std::multiplies<>());
}

void ParamArchive::put(const std::string& name, TensorEntry entry) {
  if (entry.numel() != static_cast<std::int64_t>(entry.values.size())) {
    throw ParameterError("tensor '" + name + "' has " + std::to_string(entry.values.size()) +
                         " values for shape " + shape_str(entry.shape));
  }
  tensors_[name] = std::move(entry);
}

bool ParamArchive::contains(const std::string& name) const { return tensors_.count(name) > 0; }

const TensorEntry& ParamArchive::get(const std::string& name,
                                     const std::vector<std::int64_t>& expected_shape) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw ParameterError("missing tensor '" + name + "'");
  if (it->second.shape != expected_shape) {
    throw ParameterError("tensor '" + name + "' has shape " + shape_str(it->second.shape) +
                         ", expected " + shape_str(expected_shape));
  }
  return it->second;
}

void ParamArchive::save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw ParameterError("cannot open '" + path.string() + "' for writing");
  os.write(kMagic, sizeof(kMagic));
  write_pod<std::uint32_t>(os, kVersion);
  write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(tensors_.size()));
  write_pod<std::uint64_t>(os, metadata.size());
  os.write(metadata.data(), static_cast<std::streamsize>(metadata.size()));
  for (const auto& [name, t] : tensors_) {
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_pod<std::uint8_t>(os, static_cast<std::uint8_t>(t.dtype));
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) write_pod<std::int64_t>(os, d);
  }
  for (const auto& [name, t] : tensors_) {
    if (t.dtype == DType::kFloat32) {
      std::vector<float> buf(t.values.begin(), t.values.end());
      os.write(reinterpret_cast<const char*>(buf.data()),
               static_cast<std::streamsize>(buf.size() * sizeof(float)));
    } else {
      os.write(reinterpret_cast<const char*>(t.values.data()),
               static_cast<std::streamsize>(t.values.size() * sizeof(double)));
    }
  }
  if (!os) throw ParameterError("write failure on '" + path.string() + "'");
}

ParamArchive ParamArchive::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ParameterError("cannot open parameter archive '" + path.string() + "'");
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw ParameterError("'" + path.string() + "' is not a parameter archive");
  }
  auto version = read_pod<std::uint32_t>(is, "version");
  if (version != kVersion) {
    throw ParameterError("unsupported archive version " + std::to_string(version));
  }
  auto count = read_pod<std::uint32_t>(is, "tensor count");
  auto meta_len = read_pod<std::uint64_t>(is, "metadata length");
  ParamArchive ar;
  ar.metadata = read_bytes(is, meta_len, "metadata");

  struct Header {
    std::string name;
    DType dtype;
    std::vector<std::int64_t> shape;
  };
  std::vector<Header> headers;
  headers.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    Header h;
    auto name_len = read_pod<std::uint32_t>(is, "name length");
    h.name = read_bytes(is, name_len, "tensor name");
    auto dt = read_pod<std::uint8_t>(is, "dtype");
    if (dt > 1) throw ParameterError("tensor '" + h.name + "' has unknown dtype");
    h.dtype = static_cast<DType>(dt);
    auto ndim = read_pod<std::uint32_t>(is, "ndim");
    if (ndim > 8) throw ParameterError("tensor '" + h.name + "' has implausible rank");
    for (std::uint32_t d = 0; d < ndim; ++d) {
      auto dim = read_pod<std::int64_t>(is, "dim");
      if (dim < 0) throw ParameterError("tensor '" + h.name + "' has negative dimension");
      h.shape.push_back(dim);
    }
    headers.push_back(std::move(h));
  }
  for (auto& h : headers) {
    TensorEntry t;
    t.dtype = h.dtype;
    t.shape = h.shape;
    const auto n = static_cast<size_t>(t.numel());
    t.values.resize(n);
    if (h.dtype == DType::kFloat32) {
      std::vector<float> buf(n);
      is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n * sizeof(float)));
      std::copy(buf.begin(), buf.end(), t.values.begin());
    } else {
      is.read(reinterpret_cast<char*>(t.values.data()),
              static_cast<std::streamsize>(n * sizeof(double)));
    }
    if (!is) throw ParameterError("truncated data for tensor '" + h.name + "'");
    ar.tensors_[h.name] = std::move(t);
  }
  return ar;
}

std::string file_sha256(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open '" + path.string() + "' for hashing");
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr);
  std::array<char, 1 << 16> buf;
  while (is) {
    is.read(buf.data(), buf.size());
    if (is.gcount() > 0) EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<size_t>(is.gcount()));
  }
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), digest, &len);
  static constexpr char kHex[] = "0123456789abcdef";
  std::string hex;
  for (unsigned int i = 0; i < len; ++i) {
    hex += kHex[digest[i] >> 4];
    hex += kHex[digest[i] & 0xf];
  }
  return hex;
}

}  // namespace haf

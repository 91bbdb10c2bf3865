#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>

#include "haf/error.h"
#include "haf/retrieval.h"

namespace haf {
namespace {

static_assert(std::endian::native == std::endian::little,
              "database I/O assumes a little-endian host");

constexpr char kMagic[8] = {'H', 'A', 'F', 'D', 'B', 'A', 'S', 'E'};
constexpr char kEndMagic[8] = {'H', 'A', 'F', 'D', 'B', 'E', 'N', 'D'};
constexpr size_t kHashField = 64;

template <typename T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw DataError("truncated descriptor database");
  return v;
}

void write_doubles(std::ostream& os, const double* p, size_t n) {
  os.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n * sizeof(double)));
}

void read_doubles(std::istream& is, double* p, size_t n) {
  is.read(reinterpret_cast<char*>(p), static_cast<std::streamsize>(n * sizeof(double)));
  if (!is) throw DataError("truncated descriptor database");
}

}  // namespace

void DescriptorDatabase::validate() const {
  std::set<std::string> ids;
  for (const auto& e : entries) {
    if (!ids.insert(e.image_id).second) {
      throw DataError("duplicate image_id '" + e.image_id + "' in database");
    }
    if (e.descriptor.size() != dims) {
      throw DataError("entry '" + e.image_id + "' has wrong descriptor dimension");
    }
    const double n = e.descriptor.cast<double>().norm();
    if (std::abs(n - 1.0) > 1e-6) {
      throw DataError("entry '" + e.image_id + "' is not unit norm");
    }
  }
  if (entries.empty() == projection.fitted()) {
    throw DataError("database projection must be present iff entries exist");
  }
  if (projection.fitted() && projection.out_dim() != dims) {
    throw DataError("database projection output does not match descriptor dims");
  }
  if (checkpoint_sha256.size() > kHashField) throw DataError("checkpoint hash field too long");
}

void DescriptorDatabase::save(const std::filesystem::path& path) const {
  validate();
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot open '" + tmp.string() + "' for writing");
    os.write(kMagic, sizeof(kMagic));
    write_pod<std::uint32_t>(os, kVersion);
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(dims));
    write_pod<std::uint64_t>(os, entries.size());
    char hash[kHashField] = {};
    std::memcpy(hash, checkpoint_sha256.data(), checkpoint_sha256.size());
    os.write(hash, kHashField);
    write_pod<std::int64_t>(os, created_unix);
    write_pod<std::uint8_t>(os, coordinates == CoordinateMode::kGeo ? 0 : 1);
    const char pad[7] = {};
    os.write(pad, sizeof(pad));

    for (const auto& e : entries) {
      os.write(reinterpret_cast<const char*>(e.descriptor.data()),
               static_cast<std::streamsize>(dims * sizeof(float)));
    }

    const std::uint32_t in_dim = projection.fitted() ? projection.in_dim() : 0;
    const std::uint32_t out_dim = projection.fitted() ? projection.out_dim() : 0;
    write_pod(os, in_dim);
    write_pod(os, out_dim);
    if (projection.fitted()) {
      write_doubles(os, projection.mean.data(), in_dim);
      const RowMatrixD comps = projection.components;
      write_doubles(os, comps.data(), static_cast<size_t>(in_dim) * out_dim);
      write_doubles(os, projection.scale.data(), out_dim);
    }

    for (const auto& e : entries) {
      write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(e.image_id.size()));
      os.write(e.image_id.data(), static_cast<std::streamsize>(e.image_id.size()));
      write_pod(os, e.geo.a);
      write_pod(os, e.geo.b);
    }
    os.write(kEndMagic, sizeof(kEndMagic));
    if (!os) throw DataError("write failure on '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

DescriptorDatabase DescriptorDatabase::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open descriptor database '" + path.string() + "'");
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw DataError("'" + path.string() + "' is not a descriptor database");
  }
  DescriptorDatabase db;
  const auto version = read_pod<std::uint32_t>(is);
  if (version != kVersion) throw DataError("unsupported database version " + std::to_string(version));
  db.dims = static_cast<int>(read_pod<std::uint32_t>(is));
  const auto count = read_pod<std::uint64_t>(is);
  if (db.dims <= 0 || db.dims > (1 << 20) || count > (1ull << 32)) {
    throw DataError("implausible database header in '" + path.string() + "'");
  }
  char hash[kHashField];
  is.read(hash, kHashField);
  db.checkpoint_sha256.assign(hash, strnlen(hash, kHashField));
  db.created_unix = read_pod<std::int64_t>(is);
  db.coordinates = read_pod<std::uint8_t>(is) == 0 ? CoordinateMode::kGeo : CoordinateMode::kPlanar;
  char pad[7];
  is.read(pad, sizeof(pad));

  db.entries.resize(count);
  for (auto& e : db.entries) {
    e.descriptor.resize(db.dims);
    is.read(reinterpret_cast<char*>(e.descriptor.data()),
            static_cast<std::streamsize>(db.dims * sizeof(float)));
    if (!is) throw DataError("truncated descriptor block in '" + path.string() + "'");
  }

  const auto in_dim = read_pod<std::uint32_t>(is);
  const auto out_dim = read_pod<std::uint32_t>(is);
  if (in_dim > (1u << 20) || out_dim > (1u << 20)) throw DataError("implausible projection shape");
  if (in_dim > 0 && out_dim > 0) {
    db.projection.mean.resize(in_dim);
    read_doubles(is, db.projection.mean.data(), in_dim);
    RowMatrixD comps(out_dim, in_dim);
    read_doubles(is, comps.data(), static_cast<size_t>(in_dim) * out_dim);
    db.projection.components = comps;
    db.projection.scale.resize(out_dim);
    read_doubles(is, db.projection.scale.data(), out_dim);
  }

  for (auto& e : db.entries) {
    const auto len = read_pod<std::uint32_t>(is);
    if (len > 4096) throw DataError("implausible image id length in database");
    e.image_id.resize(len);
    is.read(e.image_id.data(), len);
    e.geo.a = read_pod<double>(is);
    e.geo.b = read_pod<double>(is);
  }
  char end[8];
  is.read(end, sizeof(end));
  if (!is || std::memcmp(end, kEndMagic, sizeof(kEndMagic)) != 0) {
    throw DataError("descriptor database '" + path.string() + "' has a corrupt footer");
  }
  db.validate();
  return db;
}

}  // namespace haf

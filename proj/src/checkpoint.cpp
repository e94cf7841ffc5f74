#include "densebox/checkpoint.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>

#include "densebox/errors.hpp"

namespace densebox {

namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint codec assumes a little-endian host");

void write_u32(std::ostream& os, uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

uint32_t read_u32(std::istream& is) {
  uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path,
                     std::span<const Param* const> params) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot open checkpoint for writing: " + path.string());
  os.write(kCheckpointMagic, 8);
  for (const Param* p : params) {
    write_u32(os, static_cast<uint32_t>(p->name.size()));
    os.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
    const Shape& shape = p->value.shape();
    write_u32(os, static_cast<uint32_t>(shape.size()));
    for (int d : shape) write_u32(os, static_cast<uint32_t>(d));
    os.write(reinterpret_cast<const char*>(p->value.data()),
             static_cast<std::streamsize>(p->value.size() * sizeof(double)));
  }
  if (!os) throw DataError("checkpoint write failed: " + path.string());
}

void load_checkpoint(const std::filesystem::path& path,
                     std::span<Param* const> params) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint: " + path.string());
  char magic[8] = {};
  is.read(magic, 8);
  if (is.gcount() != 8 || std::memcmp(magic, kCheckpointMagic, 8) != 0) {
    throw DataError("bad checkpoint magic in " + path.string());
  }

  std::map<std::string, std::pair<Shape, std::vector<double>>> entries;
  while (true) {
    uint32_t name_len = read_u32(is);
    if (is.eof()) break;
    if (!is || name_len > 4096) throw DataError("corrupt checkpoint: " + path.string());
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    uint32_t ndims = read_u32(is);
    if (!is || ndims > 8) throw DataError("corrupt checkpoint entry '" + name + "'");
    Shape shape(ndims);
    int64_t count = 1;
    for (uint32_t i = 0; i < ndims; ++i) {
      shape[i] = static_cast<int>(read_u32(is));
      count *= shape[i];
    }
    std::vector<double> data(static_cast<size_t>(count));
    is.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(count * sizeof(double)));
    if (!is) throw DataError("truncated checkpoint entry '" + name + "'");
    for (double v : data) {
      if (!std::isfinite(v)) {
        throw DataError("non-finite value in checkpoint entry '" + name + "'");
      }
    }
    if (!entries.emplace(name, std::make_pair(std::move(shape), std::move(data))).second) {
      throw DataError("duplicate checkpoint entry '" + name + "'");
    }
  }

  for (Param* p : params) {
    auto it = entries.find(p->name);
    if (it == entries.end()) {
      throw DataError("checkpoint missing parameter '" + p->name + "'");
    }
    if (it->second.first != p->value.shape()) {
      throw DataError("checkpoint shape mismatch for '" + p->name + "': file " +
                      shape_str(it->second.first) + " vs model " +
                      shape_str(p->value.shape()));
    }
    std::copy(it->second.second.begin(), it->second.second.end(), p->value.data());
    entries.erase(it);
  }
  if (!entries.empty()) {
    throw DataError("checkpoint has unknown parameter '" + entries.begin()->first + "'");
  }
}

}  // namespace densebox

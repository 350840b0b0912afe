#include "mpnflow/checkpoint.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>

#include "mpnflow/error.hpp"

namespace mpnflow::tk {

namespace {

constexpr char kMagic[8] = {'M', 'P', 'N', 'F', 'L', 'O', 'W', 'P'};

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is, const std::filesystem::path& path) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) {
    throw ParseError("truncated checkpoint " + path.string());
  }
  return v;
}

std::string get_string(std::istream& is, std::size_t n, const std::filesystem::path& path) {
  if (n > (1u << 30)) throw ParseError("implausible string length in checkpoint " + path.string());
  std::string s(n, '\0');
  if (n > 0 && !is.read(s.data(), std::streamsize(n))) {
    throw ParseError("truncated checkpoint " + path.string());
  }
  return s;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ParamList& params,
                     const std::string& metadata) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write checkpoint " + path.string());
  os.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(os, kCheckpointVersion);
  put<std::uint64_t>(os, metadata.size());
  os.write(metadata.data(), std::streamsize(metadata.size()));
  put<std::uint64_t>(os, params.size());
  for (const auto& p : params) {
    put<std::uint32_t>(os, std::uint32_t(p.name.size()));
    os.write(p.name.data(), std::streamsize(p.name.size()));
    put<std::uint32_t>(os, std::uint32_t(p.tensor.shape().size()));
    for (std::size_t d : p.tensor.shape()) put<std::uint64_t>(os, d);
    os.write(reinterpret_cast<const char*>(p.tensor.values().data()),
             std::streamsize(p.tensor.size() * sizeof(double)));
  }
  if (!os) throw IoError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + path.string());
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0) {
    throw ParseError("not a parameter checkpoint: " + path.string());
  }
  Checkpoint ck;
  ck.version = get<std::uint32_t>(is, path);
  if (ck.version != kCheckpointVersion) {
    throw ParseError("unsupported checkpoint version " + std::to_string(ck.version));
  }
  ck.metadata = get_string(is, get<std::uint64_t>(is, path), path);
  const auto groups = get<std::uint64_t>(is, path);
  for (std::uint64_t g = 0; g < groups; ++g) {
    StoredGroup sg;
    sg.name = get_string(is, get<std::uint32_t>(is, path), path);
    const auto rank = get<std::uint32_t>(is, path);
    if (rank > 8) throw ParseError("implausible rank in checkpoint group " + sg.name);
    for (std::uint32_t r = 0; r < rank; ++r) sg.shape.push_back(get<std::uint64_t>(is, path));
    sg.values.resize(element_count(sg.shape));
    if (!is.read(reinterpret_cast<char*>(sg.values.data()),
                 std::streamsize(sg.values.size() * sizeof(double)))) {
      throw ParseError("truncated checkpoint group " + sg.name);
    }
    ck.groups.push_back(std::move(sg));
  }
  return ck;
}

void restore(ParamList& params, const Checkpoint& ckpt) {
  if (params.size() != ckpt.groups.size()) {
    throw ShapeError("checkpoint has " + std::to_string(ckpt.groups.size()) +
                     " parameter groups, model expects " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& g = ckpt.groups[i];
    auto& p = params[i];
    if (g.name != p.name || g.shape != p.tensor.shape()) {
      throw ShapeError("checkpoint group " + g.name + " " + to_string(g.shape) +
                       " does not match model group " + p.name + " " + to_string(p.tensor.shape()));
    }
    std::copy(g.values.begin(), g.values.end(), p.tensor.mutable_values().begin());
  }
}

}  // namespace mpnflow::tk

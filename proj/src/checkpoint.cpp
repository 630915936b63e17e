#include "petseg/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "petseg/error.hpp"
#include "petseg/util.hpp"

namespace petseg {

namespace {

constexpr char kMagic[8] = {'P', 'S', 'E', 'G', 'C', 'K', 'P', '1'};

template <typename V>
void put(std::ostream& os, V v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <typename V>
V get(std::istream& is, const std::filesystem::path& path) {
  V v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(V))) throw IoError("truncated checkpoint " + path.string());
  return v;
}

std::string get_string(std::istream& is, std::uint64_t n, const std::filesystem::path& path) {
  if (n > (1ull << 30)) throw IoError("corrupt checkpoint " + path.string());
  std::string s(n, '\0');
  if (!is.read(s.data(), static_cast<std::streamsize>(n))) throw IoError("truncated checkpoint " + path.string());
  return s;
}

std::uint64_t config_hash(const nlohmann::json& meta) {
  return fnv1a(meta.contains("config") ? meta.at("config").dump() : std::string("null"));
}

struct Stored {
  std::vector<int> shape;
  std::vector<float> value;
};

nlohmann::json read_all(const std::filesystem::path& path, std::map<std::string, Stored>* tensors) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + path.string());
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0) {
    throw IoError("not a checkpoint file: " + path.string());
  }
  const auto meta_len = get<std::uint64_t>(is, path);
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(get_string(is, meta_len, path));
  } catch (const nlohmann::json::exception& e) {
    throw IoError("corrupt checkpoint metadata in " + path.string() + ": " + e.what());
  }
  if (get<std::uint64_t>(is, path) != config_hash(meta)) {
    throw ValidationError("checkpoint config hash mismatch in " + path.string());
  }
  if (!tensors) return meta;
  const auto count = get<std::uint32_t>(is, path);
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = get_string(is, get<std::uint32_t>(is, path), path);
    Stored s;
    const auto ndim = get<std::uint32_t>(is, path);
    if (ndim > 8) throw IoError("corrupt checkpoint " + path.string());
    std::size_t n = 1;
    for (std::uint32_t d = 0; d < ndim; ++d) {
      s.shape.push_back(get<std::int32_t>(is, path));
      n *= static_cast<std::size_t>(s.shape.back());
    }
    s.value.resize(n);
    if (!is.read(reinterpret_cast<char*>(s.value.data()), static_cast<std::streamsize>(n * sizeof(float)))) {
      throw IoError("truncated checkpoint " + path.string());
    }
    (*tensors)[name] = std::move(s);
  }
  return meta;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const nlohmann::json& meta,
                     const nn::ParameterList<float>& params) {
  std::ostringstream os(std::ios::binary);
  os.write(kMagic, 8);
  const std::string m = meta.dump();
  put<std::uint64_t>(os, m.size());
  os.write(m.data(), static_cast<std::streamsize>(m.size()));
  put<std::uint64_t>(os, config_hash(meta));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(params.size()));
  for (const auto* p : params) {
    put<std::uint32_t>(os, static_cast<std::uint32_t>(p->name.size()));
    os.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(p->shape.size()));
    for (int d : p->shape) put<std::int32_t>(os, d);
    os.write(reinterpret_cast<const char*>(p->value.data()), static_cast<std::streamsize>(p->size() * sizeof(float)));
  }
  write_text_atomic(path, os.str());
}

nlohmann::json read_checkpoint_meta(const std::filesystem::path& path) { return read_all(path, nullptr); }

nlohmann::json load_checkpoint(const std::filesystem::path& path, const nn::ParameterList<float>& params,
                               const nlohmann::json* expected_config) {
  std::map<std::string, Stored> tensors;
  nlohmann::json meta = read_all(path, &tensors);
  if (expected_config && (!meta.contains("config") || meta.at("config") != *expected_config)) {
    throw ValidationError("checkpoint " + path.string() + " was written for a different model config");
  }
  for (auto* p : params) {
    auto it = tensors.find(p->name);
    if (it == tensors.end()) throw ValidationError("checkpoint " + path.string() + " lacks parameter " + p->name);
    if (it->second.shape != p->shape) throw ValidationError("checkpoint parameter shape mismatch for " + p->name);
    p->value = it->second.value;
  }
  if (tensors.size() != params.size()) {
    throw ValidationError("checkpoint " + path.string() + " has parameters the model does not");
  }
  return meta;
}

}  // namespace petseg

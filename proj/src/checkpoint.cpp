#include "fusenas/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <vector>

namespace fusenas {

namespace {

constexpr char kMagic[8] = {'F', 'U', 'S', 'E', 'N', 'A', 'S', '1'};

template <typename T>
void put(std::ofstream& f, T v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::ifstream& f) {
  T v{};
  f.read(reinterpret_cast<char*>(&v), sizeof(T));
  require(bool(f), "checkpoint truncated");
  return v;
}

void put_string(std::ofstream& f, const std::string& s) {
  put<std::uint32_t>(f, std::uint32_t(s.size()));
  f.write(s.data(), std::streamsize(s.size()));
}

std::string get_string(std::ifstream& f) {
  auto len = get<std::uint32_t>(f);
  std::string s(len, '\0');
  f.read(s.data(), std::streamsize(len));
  require(bool(f), "checkpoint truncated");
  return s;
}

}  // namespace

void save_checkpoint(const std::string& path, const ParamStore<float>& store,
                     const std::map<std::string, std::string>& meta,
                     const std::string& name_prefix) {
  std::ofstream f(path, std::ios::binary);
  require(f.good(), "cannot open checkpoint for writing: " + path);
  f.write(kMagic, sizeof(kMagic));

  put<std::uint32_t>(f, std::uint32_t(meta.size()));
  for (const auto& [k, v] : meta) {
    put_string(f, k);
    put_string(f, v);
  }

  std::uint32_t count = 0;
  store.for_each([&](const Parameter<float>& p) {
    if (p.name.rfind(name_prefix, 0) == 0) ++count;
  });
  put<std::uint32_t>(f, count);
  store.for_each([&](const Parameter<float>& p) {
    if (p.name.rfind(name_prefix, 0) != 0) return;
    put_string(f, p.name);
    put<std::uint8_t>(f, p.trainable ? 1 : 0);
    put<std::int32_t>(f, p.shape.n);
    put<std::int32_t>(f, p.shape.c);
    put<std::int32_t>(f, p.shape.h);
    put<std::int32_t>(f, p.shape.w);
    put<std::uint64_t>(f, std::uint64_t(p.value.size()));
    f.write(reinterpret_cast<const char*>(p.value.data()),
            std::streamsize(p.value.size() * sizeof(float)));
  });
  require(f.good(), "checkpoint write failed: " + path);
}

namespace {

void check_magic(std::ifstream& f, const std::string& path) {
  char magic[8];
  f.read(magic, sizeof(magic));
  require(bool(f) && std::memcmp(magic, kMagic, 8) == 0,
          "not a checkpoint file: " + path);
}

}  // namespace

std::map<std::string, std::string> read_checkpoint_meta(
    const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  require(f.good(), "cannot open checkpoint: " + path);
  check_magic(f, path);
  std::map<std::string, std::string> meta;
  auto n = get<std::uint32_t>(f);
  for (std::uint32_t i = 0; i < n; ++i) {
    std::string k = get_string(f);
    meta[k] = get_string(f);
  }
  return meta;
}

void load_checkpoint(const std::string& path, ParamStore<float>& store,
                     bool partial) {
  std::ifstream f(path, std::ios::binary);
  require(f.good(), "cannot open checkpoint: " + path);
  check_magic(f, path);
  auto nmeta = get<std::uint32_t>(f);
  for (std::uint32_t i = 0; i < nmeta; ++i) {
    get_string(f);
    get_string(f);
  }
  auto nparams = get<std::uint32_t>(f);
  std::size_t loaded = 0;
  for (std::uint32_t i = 0; i < nparams; ++i) {
    std::string name = get_string(f);
    get<std::uint8_t>(f);  // trainable flag is informational on load
    Shape shape;
    shape.n = get<std::int32_t>(f);
    shape.c = get<std::int32_t>(f);
    shape.h = get<std::int32_t>(f);
    shape.w = get<std::int32_t>(f);
    auto count = get<std::uint64_t>(f);
    require(store.has(name), "checkpoint parameter " + name +
                                 " does not exist in this model");
    Parameter<float>& p = store.at(name);
    require(p.shape == shape, "checkpoint parameter " + name +
                                  " shape mismatch: file " + shape.str() +
                                  " vs model " + p.shape.str());
    require(count == p.value.size(), "checkpoint parameter size mismatch");
    f.read(reinterpret_cast<char*>(p.value.data()),
           std::streamsize(count * sizeof(float)));
    require(bool(f), "checkpoint truncated in " + name);
    ++loaded;
  }
  if (!partial)
    require(loaded == store.size(),
            "checkpoint holds " + std::to_string(loaded) +
                " parameters but the model expects " +
                std::to_string(store.size()));
}

std::uint64_t file_digest(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  require(f.good(), "cannot open file for digest: " + path);
  std::uint64_t h = 0xcbf29ce484222325ull;
  char buf[65536];
  while (f) {
    f.read(buf, sizeof(buf));
    h = fnv1a(buf, std::size_t(f.gcount()), h);
  }
  return h;
}

}  // namespace fusenas

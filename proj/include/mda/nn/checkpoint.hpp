#pragma once

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "mda/core/batch.hpp"
#include "mda/errors.hpp"
#include "mda/nn/adam.hpp"
#include "mda/nn/conv.hpp"

// Binary checkpoints: parameter values, optimizer moments, RNG state and the
// iteration counter. Little-endian host layout; not meant to travel between
// architectures.

namespace mda::nn {

/// FNV-1a over parameter names and raw value bytes.
template <typename T>
std::uint64_t param_hash(const std::vector<Param<T>*>& params) {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&](const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 1099511628211ull;
    }
  };
  for (const auto* p : params) {
    mix(p->name.data(), p->name.size());
    mix(p->value.data(), p->value.size() * sizeof(T));
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

namespace detail {

inline constexpr char kCheckpointMagic[8] = {'M', 'D', 'A', 'C', 'K', 'P', 'T', '1'};

template <typename V>
void put(std::ostream& os, const V& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename V>
V get(std::istream& is, const std::string& path) {
  V v;
  if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) throw LoadError("truncated checkpoint " + path);
  return v;
}

inline void put_string(std::ostream& os, const std::string& s) {
  put<std::uint64_t>(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_string(std::istream& is, const std::string& path) {
  const auto n = get<std::uint64_t>(is, path);
  if (n > (1u << 24)) throw LoadError("corrupt checkpoint " + path);
  std::string s(n, '\0');
  if (!is.read(s.data(), static_cast<std::streamsize>(n))) throw LoadError("truncated checkpoint " + path);
  return s;
}

}  // namespace detail

template <typename T>
void save_checkpoint(const std::string& path, const std::vector<Param<T>*>& params,
                     const Adam<T>& optimizer, const Rng& rng, std::int64_t iteration) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw LoadError("cannot write checkpoint " + path);
  os.write(detail::kCheckpointMagic, sizeof detail::kCheckpointMagic);
  detail::put<std::uint32_t>(os, sizeof(T));
  detail::put<std::int64_t>(os, iteration);
  detail::put<std::uint64_t>(os, params.size());
  for (const auto* p : params) {
    detail::put_string(os, p->name);
    detail::put<std::uint64_t>(os, p->size());
    os.write(reinterpret_cast<const char*>(p->value.data()),
             static_cast<std::streamsize>(p->size() * sizeof(T)));
  }
  detail::put<std::int64_t>(os, optimizer.steps());
  const auto& m = optimizer.first_moments();
  const auto& v = optimizer.second_moments();
  detail::put<std::uint64_t>(os, m.size());
  for (std::size_t i = 0; i < m.size(); ++i) {
    detail::put<std::uint64_t>(os, m[i].size());
    os.write(reinterpret_cast<const char*>(m[i].data()),
             static_cast<std::streamsize>(m[i].size() * sizeof(double)));
    os.write(reinterpret_cast<const char*>(v[i].data()),
             static_cast<std::streamsize>(v[i].size() * sizeof(double)));
  }
  std::ostringstream rs;
  rs << rng;
  detail::put_string(os, rs.str());
  if (!os) throw LoadError("failed writing checkpoint " + path);
}

/// Restores values into `params` (matched by position, checked by name and
/// size). Optimizer and RNG are restored when non-null. Returns the stored
/// iteration.
template <typename T>
std::int64_t load_checkpoint(const std::string& path, const std::vector<Param<T>*>& params,
                             Adam<T>* optimizer = nullptr, Rng* rng = nullptr) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw LoadError("cannot open checkpoint " + path);
  char magic[8];
  if (!is.read(magic, sizeof magic) ||
      std::memcmp(magic, detail::kCheckpointMagic, sizeof magic) != 0)
    throw LoadError("not a checkpoint: " + path);
  if (detail::get<std::uint32_t>(is, path) != sizeof(T))
    throw LoadError("checkpoint scalar width mismatch: " + path);
  const auto iteration = detail::get<std::int64_t>(is, path);
  const auto count = detail::get<std::uint64_t>(is, path);
  if (count != params.size())
    throw ShapeError("checkpoint has " + std::to_string(count) + " parameters, model has " +
                     std::to_string(params.size()));
  for (auto* p : params) {
    const std::string name = detail::get_string(is, path);
    const auto n = detail::get<std::uint64_t>(is, path);
    if (name != p->name || n != p->size())
      throw ShapeError("checkpoint parameter '" + name + "' does not match '" + p->name + "'");
    if (!is.read(reinterpret_cast<char*>(p->value.data()), static_cast<std::streamsize>(n * sizeof(T))))
      throw LoadError("truncated checkpoint " + path);
  }
  const auto steps = detail::get<std::int64_t>(is, path);
  const auto groups = detail::get<std::uint64_t>(is, path);
  std::vector<std::vector<double>> m(groups), v(groups);
  for (std::size_t i = 0; i < groups; ++i) {
    const auto n = detail::get<std::uint64_t>(is, path);
    m[i].resize(n);
    v[i].resize(n);
    if (!is.read(reinterpret_cast<char*>(m[i].data()), static_cast<std::streamsize>(n * sizeof(double))) ||
        !is.read(reinterpret_cast<char*>(v[i].data()), static_cast<std::streamsize>(n * sizeof(double))))
      throw LoadError("truncated checkpoint " + path);
  }
  const std::string rng_state = detail::get_string(is, path);
  if (optimizer != nullptr) optimizer->restore(steps, std::move(m), std::move(v));
  if (rng != nullptr) {
    std::istringstream rs(rng_state);
    rs >> *rng;
    if (!rs) throw LoadError("bad RNG state in checkpoint " + path);
  }
  return iteration;
}

}  // namespace mda::nn

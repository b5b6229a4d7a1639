#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "evade/agent.hpp"
#include "evade/tensor.hpp"

namespace evade {

// Binary snapshot: magic "EVDE", u32 version, u32 block count, then per
// block a u16 name length, the name, u8 ndim, u32 dims, and an f32
// row-major payload; the file ends with the u64 run seed and an opaque
// RNG state blob (u32 length prefix). All integers little-endian.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::vector<std::pair<std::string, Tensor<float>>> blocks;
  std::uint64_t seed = 0;
  std::vector<std::uint8_t> rng_blob;

  void add(std::string name, Tensor<float> t) { blocks.emplace_back(std::move(name), std::move(t)); }

  const Tensor<float>& at(const std::string& name) const {
    for (const auto& [n, t] : blocks)
      if (n == name) return t;
    throw std::invalid_argument("checkpoint: missing block " + name);
  }

  bool has(const std::string& name) const {
    for (const auto& [n, t] : blocks)
      if (n == name) return true;
    return false;
  }
};

namespace detail {

template <typename U>
void put(std::ostream& os, U v) {
  std::uint8_t buf[sizeof(U)];
  std::memcpy(buf, &v, sizeof(U));
  os.write(reinterpret_cast<const char*>(buf), sizeof(U));
}

template <typename U>
U get(std::istream& is) {
  std::uint8_t buf[sizeof(U)];
  is.read(reinterpret_cast<char*>(buf), sizeof(U));
  if (!is) throw std::invalid_argument("checkpoint: truncated file");
  U v;
  std::memcpy(&v, buf, sizeof(U));
  return v;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
  os.write("EVDE", 4);
  detail::put<std::uint32_t>(os, kCheckpointVersion);
  detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(ck.blocks.size()));
  for (const auto& [name, t] : ck.blocks) {
    if (name.size() > 0xffff) throw std::invalid_argument("checkpoint: block name too long");
    detail::put<std::uint16_t>(os, static_cast<std::uint16_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::put<std::uint8_t>(os, static_cast<std::uint8_t>(t.ndim()));
    for (int d = 0; d < t.ndim(); ++d) detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(t.dim(d)));
    os.write(reinterpret_cast<const char*>(t.data()),
             static_cast<std::streamsize>(t.size() * sizeof(float)));
  }
  detail::put<std::uint64_t>(os, ck.seed);
  detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(ck.rng_blob.size()));
  if (!ck.rng_blob.empty())
    os.write(reinterpret_cast<const char*>(ck.rng_blob.data()),
             static_cast<std::streamsize>(ck.rng_blob.size()));
  if (!os) throw std::runtime_error("checkpoint: write failed for " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::invalid_argument("checkpoint: cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "EVDE", 4) != 0)
    throw std::invalid_argument("checkpoint: bad magic in " + path);
  const auto version = detail::get<std::uint32_t>(is);
  if (version != kCheckpointVersion)
    throw std::invalid_argument("checkpoint: unsupported version " + std::to_string(version));
  const auto count = detail::get<std::uint32_t>(is);
  Checkpoint ck;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = detail::get<std::uint16_t>(is);
    std::string name(len, '\0');
    is.read(name.data(), len);
    const auto ndim = detail::get<std::uint8_t>(is);
    Shape shape;
    for (int d = 0; d < ndim; ++d) shape.push_back(static_cast<int>(detail::get<std::uint32_t>(is)));
    Tensor<float> t(shape);
    is.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(t.size() * sizeof(float)));
    if (!is) throw std::invalid_argument("checkpoint: truncated block " + name);
    ck.add(std::move(name), std::move(t));
  }
  ck.seed = detail::get<std::uint64_t>(is);
  const auto blob_len = detail::get<std::uint32_t>(is);
  ck.rng_blob.resize(blob_len);
  if (blob_len) {
    is.read(reinterpret_cast<char*>(ck.rng_blob.data()), blob_len);
    if (!is) throw std::invalid_argument("checkpoint: truncated rng blob");
  }
  return ck;
}

// ---- SimpleLoop persistence ----

namespace detail {

inline void pack_store(Checkpoint& ck, const std::string& prefix, const ParamStore<float>& store) {
  for (std::size_t i = 0; i < store.size(); ++i) {
    const auto& p = store[static_cast<int>(i)];
    ck.add(prefix + p.name, p.value);
    ck.add(prefix + p.name + ".adam_m", p.m);
    ck.add(prefix + p.name + ".adam_v", p.v);
  }
}

inline void unpack_store(const Checkpoint& ck, const std::string& prefix, ParamStore<float>& store) {
  for (std::size_t i = 0; i < store.size(); ++i) {
    auto& p = store[static_cast<int>(i)];
    const auto& v = ck.at(prefix + p.name);
    v.check_same_shape(p.value, "checkpoint load");
    p.value = v;
    p.m = ck.at(prefix + p.name + ".adam_m");
    p.v = ck.at(prefix + p.name + ".adam_v");
  }
}

inline Tensor<float> scalar(double v) { return Tensor<float>({1}, {static_cast<float>(v)}); }

}  // namespace detail

inline Checkpoint snapshot_loop(const SimpleLoop<float>& loop) {
  Checkpoint ck;
  ck.seed = loop.seed();
  ck.rng_blob = Rng(loop.seed(), SimpleLoop<float>::kStreamInit).serialize();
  detail::pack_store(ck, "model.", loop.model().params());
  detail::pack_store(ck, "policy.", loop.policy().params());
  ck.add("meta.iteration", detail::scalar(loop.iteration()));
  ck.add("meta.sample_counter", detail::scalar(static_cast<double>(loop.model().sample_counter())));
  ck.add("meta.model_adam_t", detail::scalar(static_cast<double>(loop.model().optimizer().step_count())));
  ck.add("meta.policy_adam_t", detail::scalar(static_cast<double>(loop.policy().optimizer().step_count())));

  const auto& data = loop.dataset();
  if (!data.empty()) {
    const auto& r0 = data[0];
    const int N = static_cast<int>(data.size());
    Tensor<float> obs({N, r0.obs_stack.dim(0), r0.obs_stack.dim(1), r0.obs_stack.dim(2)});
    Tensor<float> next({N, r0.next_frame.dim(0), r0.next_frame.dim(1), r0.next_frame.dim(2)});
    Tensor<float> actions({N}), classes({N});
    for (int n = 0; n < N; ++n) {
      const auto& rec = data[static_cast<std::size_t>(n)];
      std::copy(rec.obs_stack.vec().begin(), rec.obs_stack.vec().end(),
                obs.vec().begin() + static_cast<std::size_t>(n) * rec.obs_stack.size());
      std::copy(rec.next_frame.vec().begin(), rec.next_frame.vec().end(),
                next.vec().begin() + static_cast<std::size_t>(n) * rec.next_frame.size());
      actions[n] = static_cast<float>(rec.action);
      classes[n] = static_cast<float>(rec.reward_class);
    }
    ck.add("data.obs", std::move(obs));
    ck.add("data.actions", std::move(actions));
    ck.add("data.reward_classes", std::move(classes));
    ck.add("data.next_frames", std::move(next));
  }
  return ck;
}

// Restore into a loop constructed with the same configs and seed.
inline void restore_loop(const Checkpoint& ck, SimpleLoop<float>& loop) {
  if (ck.seed != loop.seed())
    throw std::invalid_argument("checkpoint: seed mismatch with target loop");
  detail::unpack_store(ck, "model.", loop.model().params());
  detail::unpack_store(ck, "policy.", loop.policy().params());
  loop.set_iteration(static_cast<int>(ck.at("meta.iteration")[0]));
  loop.model().set_sample_counter(static_cast<std::uint64_t>(ck.at("meta.sample_counter")[0]));
  loop.model().optimizer().set_state(static_cast<long>(ck.at("meta.model_adam_t")[0]));
  loop.policy().optimizer().set_state(static_cast<long>(ck.at("meta.policy_adam_t")[0]));
  if (!loop.dataset().empty()) throw std::invalid_argument("checkpoint: target loop already has data");
  if (ck.has("data.obs")) {
    const auto& obs = ck.at("data.obs");
    const auto& actions = ck.at("data.actions");
    const auto& classes = ck.at("data.reward_classes");
    const auto& next = ck.at("data.next_frames");
    const int N = obs.dim(0);
    for (int n = 0; n < N; ++n) {
      TransitionRecord<float> rec;
      rec.obs_stack = Tensor<float>({obs.dim(1), obs.dim(2), obs.dim(3)});
      rec.next_frame = Tensor<float>({next.dim(1), next.dim(2), next.dim(3)});
      std::copy(obs.vec().begin() + static_cast<std::size_t>(n) * rec.obs_stack.size(),
                obs.vec().begin() + static_cast<std::size_t>(n + 1) * rec.obs_stack.size(),
                rec.obs_stack.vec().begin());
      std::copy(next.vec().begin() + static_cast<std::size_t>(n) * rec.next_frame.size(),
                next.vec().begin() + static_cast<std::size_t>(n + 1) * rec.next_frame.size(),
                rec.next_frame.vec().begin());
      rec.action = static_cast<int>(actions[n]);
      rec.reward_class = static_cast<int>(classes[n]);
      loop.dataset().add(std::move(rec));
    }
  }
}

}  // namespace evade

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "evade/layers.hpp"
#include "evade/world_model.hpp"

namespace evade {

namespace detail {

template <typename T>
void write_map_csv(const std::string& path, const Tensor<T>& maps, int channel) {
  // maps: [1,C,h,w]
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  const int h = maps.dim(2), w = maps.dim(3);
  char buf[40];
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(maps.at4(0, channel, i, j)));
      os << (j ? "," : "") << buf;
    }
    os << "\n";
  }
}

template <typename T>
void write_map_pgm(const std::string& path, const Tensor<T>& maps, int channel) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path);
  const int h = maps.dim(2), w = maps.dim(3);
  T lo = maps.at4(0, channel, 0, 0), hi = lo;
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      lo = std::min(lo, maps.at4(0, channel, i, j));
      hi = std::max(hi, maps.at4(0, channel, i, j));
    }
  os << "P5\n" << w << " " << h << "\n255\n";
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      const double v = hi > lo ? (maps.at4(0, channel, i, j) - lo) / double(hi - lo) : 0.0;
      const unsigned char px = static_cast<unsigned char>(std::lround(v * 255.0));
      os.write(reinterpret_cast<const char*>(&px), 1);
    }
}

}  // namespace detail

// Export the input/output feature maps of the named reward-head layers as
// per-channel CSV grids and min-max normalized PGM images. Weighting
// layers additionally get their per-channel factors theta~^k_k as a CSV.
template <typename T>
void dump_activations(const WorldModel<T>& model, const Tensor<T>& obs_stack, int action,
                      const VariationalSample<T>& sample, const std::vector<std::string>& layers,
                      const std::string& out_dir) {
  Tensor<T> batch = obs_stack.reshaped({1, obs_stack.dim(0), obs_stack.dim(1), obs_stack.dim(2)});
  Tape<T> tape(/*grad_enabled=*/false);
  auto vars = model.params().bind(tape);
  std::vector<typename WorldModel<T>::LayerTrace> trace;
  model.forward(tape, vars, batch, {action}, &sample, &trace);

  for (const auto& name : layers) {
    const typename WorldModel<T>::LayerTrace* t = nullptr;
    for (const auto& tr : trace)
      if (tr.name == name) t = &tr;
    if (!t) throw std::invalid_argument("dump_activations: unknown layer " + name);
    for (int c = 0; c < t->input.dim(1); ++c) {
      const std::string stem = out_dir + "/" + name + ".in.ch" + std::to_string(c);
      detail::write_map_csv(stem + ".csv", t->input, c);
      detail::write_map_pgm(stem + ".pgm", t->input, c);
    }
    for (int c = 0; c < t->output.dim(1); ++c) {
      const std::string stem = out_dir + "/" + name + ".out.ch" + std::to_string(c);
      detail::write_map_csv(stem + ".csv", t->output, c);
      detail::write_map_pgm(stem + ".pgm", t->output, c);
    }
    for (const auto& ref : model.banks()) {
      if (ref.name != name || ref.kind != BankKind::kWeighting) continue;
      const auto bank = model.bank_view(ref);
      const Tensor<T> eff = reparameterize(bank.theta, bank.sigma, sample.at(name)).hadamard(
          bank.mask);
      std::ofstream os(out_dir + "/" + name + ".factors.csv");
      if (!os) throw std::runtime_error("cannot write factors for " + name);
      os << "channel,factor\n";
      char buf[40];
      for (int k = 0; k < ref.c; ++k) {
        std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(eff.at4(k, k, 0, 0)));
        os << k << "," << buf << "\n";
      }
    }
  }
}

}  // namespace evade

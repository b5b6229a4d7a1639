#pragma once

#include <deque>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "evade/rng.hpp"
#include "evade/tensor.hpp"

namespace evade {

enum Action { kUp = 0, kDown = 1, kLeft = 2, kRight = 3, kNoop = 4 };

// Object-based gridworld: pick-up gems, a big gem behind a one-cell wall
// gap, and a hazard flanking the gap. Fixed layout, deterministic
// dynamics; the seed only feeds the (currently unused) tie-break stream.
struct EnvSpec {
  int H = 8, W = 8;
  int C = 4;  // channels: agent, gem, big gem, wall-or-hazard
  int F = 4;  // stacked frames
  int step_cap = 50;
  double gem_reward = 1.0, big_gem_reward = 5.0, hazard_reward = -1.0;
  std::vector<double> reward_buckets = {-1.0, 0.0, 1.0, 5.0};
  std::vector<std::string> layout = {
      "########",
      "#A.g...#",
      "#x.g.g.#",
      "####.###",
      "#..x..x#",
      "#....G.#",
      "#x.....#",
      "########",
  };

  int num_actions() const { return 5; }
  int num_buckets() const { return static_cast<int>(reward_buckets.size()); }

  int bucket_index(double r) const {
    for (int i = 0; i < num_buckets(); ++i)
      if (reward_buckets[i] == r) return i;
    throw std::logic_error("reward " + std::to_string(r) + " not in bucket list");
  }

  void validate() const {
    if (static_cast<int>(layout.size()) != H) throw std::invalid_argument("layout height != H");
    for (const auto& row : layout)
      if (static_cast<int>(row.size()) != W) throw std::invalid_argument("layout width != W");
    for (std::size_t i = 1; i < reward_buckets.size(); ++i)
      if (reward_buckets[i] <= reward_buckets[i - 1])
        throw std::invalid_argument("reward buckets must be sorted strictly ascending");
  }
};

struct EnvState {
  int agent_r = 0, agent_c = 0;
  std::vector<std::pair<int, int>> gems;
  int big_r = -1, big_c = -1;
  bool big_alive = false;
  std::vector<std::uint8_t> wall;    // H*W
  std::vector<std::uint8_t> hazard;  // H*W
  int steps = 0;
  bool done = false;
  Rng rng;
};

class GridWorld {
 public:
  explicit GridWorld(EnvSpec spec = {}) : spec_(std::move(spec)) { spec_.validate(); }

  const EnvSpec& spec() const { return spec_; }
  const EnvState& state() const { return state_; }

  void reset(std::uint64_t seed) {
    spec_.validate();
    EnvState s;
    s.wall.assign(spec_.H * spec_.W, 0);
    s.hazard.assign(spec_.H * spec_.W, 0);
    bool have_agent = false;
    for (int r = 0; r < spec_.H; ++r)
      for (int c = 0; c < spec_.W; ++c) {
        switch (spec_.layout[r][c]) {
          case '#': s.wall[r * spec_.W + c] = 1; break;
          case 'x': s.hazard[r * spec_.W + c] = 1; break;
          case 'g': s.gems.emplace_back(r, c); break;
          case 'G':
            s.big_r = r;
            s.big_c = c;
            s.big_alive = true;
            break;
          case 'A':
            s.agent_r = r;
            s.agent_c = c;
            have_agent = true;
            break;
          case '.': break;
          default:
            throw std::invalid_argument(std::string("layout: unknown cell '") + spec_.layout[r][c] +
                                        "'");
        }
      }
    if (!have_agent) throw std::invalid_argument("layout: missing agent cell 'A'");
    s.rng = Rng(seed, /*stream=*/0xe41);
    state_ = std::move(s);
  }

  struct StepResult {
    double reward = 0;
    bool done = false;
  };

  StepResult step(int action) {
    if (state_.done) throw std::logic_error("step: episode already terminated");
    if (action < 0 || action >= spec_.num_actions())
      throw std::invalid_argument("step: bad action " + std::to_string(action));
    static const int dr[5] = {-1, 1, 0, 0, 0};
    static const int dc[5] = {0, 0, -1, 1, 0};
    int nr = state_.agent_r + dr[action];
    int nc = state_.agent_c + dc[action];
    if (nr < 0 || nr >= spec_.H || nc < 0 || nc >= spec_.W || state_.wall[nr * spec_.W + nc]) {
      nr = state_.agent_r;
      nc = state_.agent_c;
    }
    state_.agent_r = nr;
    state_.agent_c = nc;

    StepResult res;
    for (auto it = state_.gems.begin(); it != state_.gems.end(); ++it)
      if (it->first == nr && it->second == nc) {
        res.reward = spec_.gem_reward;
        state_.gems.erase(it);
        break;
      }
    if (state_.big_alive && nr == state_.big_r && nc == state_.big_c) {
      res.reward = spec_.big_gem_reward;
      state_.big_alive = false;
      state_.done = true;
    }
    if (state_.hazard[nr * spec_.W + nc]) {
      res.reward = spec_.hazard_reward;
      state_.done = true;
    }
    if (++state_.steps >= spec_.step_cap) state_.done = true;
    res.done = state_.done;
    return res;
  }

  // One-hot occupancy per channel, {0,1}-valued.
  template <typename T>
  Tensor<T> render() const {
    Tensor<T> f({spec_.C, spec_.H, spec_.W});
    f.at3(0, state_.agent_r, state_.agent_c) = T(1);
    for (const auto& [r, c] : state_.gems) f.at3(1, r, c) = T(1);
    if (state_.big_alive) f.at3(2, state_.big_r, state_.big_c) = T(1);
    for (int r = 0; r < spec_.H; ++r)
      for (int c = 0; c < spec_.W; ++c)
        if (state_.wall[r * spec_.W + c] || state_.hazard[r * spec_.W + c]) f.at3(3, r, c) = T(1);
    return f;
  }

 private:
  EnvSpec spec_;
  EnvState state_;
};

// Rolling stack of the last F frames, flattened to [F*C,H,W]; a fresh
// stack repeats the initial frame F times.
template <typename T>
class FrameStack {
 public:
  FrameStack(int frames, Tensor<T> initial) : frames_(frames) {
    for (int i = 0; i < frames_; ++i) buf_.push_back(initial);
  }

  void push(Tensor<T> frame) {
    buf_.pop_front();
    buf_.push_back(std::move(frame));
  }

  Tensor<T> stacked() const {
    const auto& f0 = buf_.front();
    Tensor<T> out({frames_ * f0.dim(0), f0.dim(1), f0.dim(2)});
    std::size_t off = 0;
    for (const auto& f : buf_) {
      std::copy(f.vec().begin(), f.vec().end(), out.vec().begin() + off);
      off += f.size();
    }
    return out;
  }

 private:
  int frames_;
  std::deque<Tensor<T>> buf_;
};

}  // namespace evade

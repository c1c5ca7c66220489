// SPDX-License-Identifier: Apache-2.0
//
// Recorded episodes, padded training batches and the episodic replay buffer.

#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <random>
#include <span>
#include <vector>

namespace role_forge {

/// One complete rollout. Step t uses obs/state/noise row t to choose
/// actions[t] and receives rewards[t]; row `steps` holds the final
/// observation and the noise the next decision would have used, which the
/// target pass needs.
struct Episode {
  int n_agents = 0;
  int obs_dim = 0;
  int state_dim = 0;
  int n_actions = 0;
  int steps = 0;
  std::uint64_t seed = 0;

  std::vector<double> obs;          // [steps + 1, n, obs_dim]
  std::vector<double> states;       // [steps + 1, state_dim]
  std::vector<double> noise;        // [steps + 1, n, 3]
  std::vector<int> actions;         // [steps, n]
  std::vector<double> rewards;      // [steps]
  std::vector<std::uint8_t> terminated;  // [steps], 1 where no bootstrap follows
  std::vector<std::vector<int>> positions;  // [steps + 1][n]

  double episode_return() const;
  /// Throws std::invalid_argument when any array disagrees with the header.
  void validate() const;

  friend bool operator==(const Episode& a, const Episode& b);
};

/// Padded block of B episodes. Step rows beyond an episode's length are
/// zero and masked out.
struct EpisodeBatch {
  int batch = 0;
  int max_steps = 0;
  int n_agents = 0;
  int obs_dim = 0;
  int state_dim = 0;
  int n_actions = 0;

  std::vector<double> obs;          // [B, T + 1, n, obs_dim]
  std::vector<double> states;       // [B, T + 1, state_dim]
  std::vector<double> noise;        // [B, T + 1, n, 3]
  std::vector<int> actions;         // [B, T, n]
  std::vector<double> rewards;      // [B, T]
  std::vector<double> mask;         // [B, T], 1 = valid step
  std::vector<double> terminated;   // [B, T]

  std::size_t obs_index(int b, int t, int i) const {
    return ((static_cast<std::size_t>(b) * static_cast<std::size_t>(max_steps + 1) + static_cast<std::size_t>(t)) *
                static_cast<std::size_t>(n_agents) +
            static_cast<std::size_t>(i)) *
           static_cast<std::size_t>(obs_dim);
  }
  std::size_t step_index(int b, int t) const {
    return static_cast<std::size_t>(b) * static_cast<std::size_t>(max_steps) + static_cast<std::size_t>(t);
  }
  double valid_steps() const;
};

/// Pads and stacks episodes that share a contract.
EpisodeBatch make_batch(std::span<const std::shared_ptr<const Episode>> episodes);
EpisodeBatch make_batch(std::span<const Episode> episodes);

/// FIFO ring of episodes with uniform sampling without replacement.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity);

  void push(std::shared_ptr<const Episode> episode);
  void push(Episode episode) { push(std::make_shared<const Episode>(std::move(episode))); }

  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }
  /// Total episodes ever inserted.
  std::uint64_t inserted() const { return inserted_; }

  /// k distinct episodes drawn uniformly. Throws when k > size().
  std::vector<std::shared_ptr<const Episode>> sample(std::size_t k, std::mt19937_64& rng) const;

  /// Oldest first.
  std::vector<std::shared_ptr<const Episode>> contents() const;

 private:
  std::size_t capacity_;
  std::vector<std::shared_ptr<const Episode>> items_;
  std::size_t head_ = 0;  // next slot to overwrite once full
  std::uint64_t inserted_ = 0;
};

}  // namespace role_forge

// SPDX-License-Identifier: Apache-2.0

#include "role_forge/episode.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>
#include <string>

namespace role_forge {

namespace {

void expect_size(const char* what, std::size_t got, std::size_t want) {
  if (got != want)
    throw std::invalid_argument(std::string("episode: ") + what + " has " + std::to_string(got) + " entries, expected " +
                                std::to_string(want));
}

}  // namespace

double Episode::episode_return() const { return std::accumulate(rewards.begin(), rewards.end(), 0.0); }

void Episode::validate() const {
  if (n_agents <= 0 || obs_dim <= 0 || state_dim <= 0 || n_actions <= 0 || steps <= 0)
    throw std::invalid_argument("episode: non-positive header field");
  const auto n = static_cast<std::size_t>(n_agents);
  const auto rows = static_cast<std::size_t>(steps) + 1;
  expect_size("obs", obs.size(), rows * n * static_cast<std::size_t>(obs_dim));
  expect_size("states", states.size(), rows * static_cast<std::size_t>(state_dim));
  expect_size("noise", noise.size(), rows * n * 3);
  expect_size("actions", actions.size(), static_cast<std::size_t>(steps) * n);
  expect_size("rewards", rewards.size(), static_cast<std::size_t>(steps));
  expect_size("terminated", terminated.size(), static_cast<std::size_t>(steps));
  for (int a : actions)
    if (a < 0 || a >= n_actions) throw std::invalid_argument("episode: action index out of range");
}

bool operator==(const Episode& a, const Episode& b) {
  return a.n_agents == b.n_agents && a.obs_dim == b.obs_dim && a.state_dim == b.state_dim &&
         a.n_actions == b.n_actions && a.steps == b.steps && a.seed == b.seed && a.obs == b.obs &&
         a.states == b.states && a.noise == b.noise && a.actions == b.actions && a.rewards == b.rewards &&
         a.terminated == b.terminated && a.positions == b.positions;
}

double EpisodeBatch::valid_steps() const { return std::accumulate(mask.begin(), mask.end(), 0.0); }

namespace {

template <typename Get>
EpisodeBatch stack(std::size_t count, Get get) {
  if (count == 0) throw std::invalid_argument("make_batch: no episodes");
  const Episode& first = get(0);
  EpisodeBatch out;
  out.batch = static_cast<int>(count);
  out.n_agents = first.n_agents;
  out.obs_dim = first.obs_dim;
  out.state_dim = first.state_dim;
  out.n_actions = first.n_actions;
  for (std::size_t k = 0; k < count; ++k) {
    const Episode& e = get(k);
    e.validate();
    if (e.n_agents != out.n_agents || e.obs_dim != out.obs_dim || e.state_dim != out.state_dim ||
        e.n_actions != out.n_actions)
      throw std::invalid_argument("make_batch: episodes come from different environment contracts");
    out.max_steps = std::max(out.max_steps, e.steps);
  }

  const auto B = static_cast<std::size_t>(out.batch);
  const auto T = static_cast<std::size_t>(out.max_steps);
  const auto n = static_cast<std::size_t>(out.n_agents);
  const auto od = static_cast<std::size_t>(out.obs_dim);
  const auto sd = static_cast<std::size_t>(out.state_dim);
  out.obs.assign(B * (T + 1) * n * od, 0.0);
  out.states.assign(B * (T + 1) * sd, 0.0);
  out.noise.assign(B * (T + 1) * n * 3, 0.0);
  out.actions.assign(B * T * n, 0);
  out.rewards.assign(B * T, 0.0);
  out.mask.assign(B * T, 0.0);
  out.terminated.assign(B * T, 0.0);

  for (std::size_t b = 0; b < B; ++b) {
    const Episode& e = get(b);
    const auto rows = static_cast<std::size_t>(e.steps) + 1;
    std::copy(e.obs.begin(), e.obs.end(), out.obs.begin() + static_cast<std::ptrdiff_t>(b * (T + 1) * n * od));
    std::copy(e.states.begin(), e.states.end(), out.states.begin() + static_cast<std::ptrdiff_t>(b * (T + 1) * sd));
    std::copy(e.noise.begin(), e.noise.end(), out.noise.begin() + static_cast<std::ptrdiff_t>(b * (T + 1) * n * 3));
    std::copy(e.actions.begin(), e.actions.end(), out.actions.begin() + static_cast<std::ptrdiff_t>(b * T * n));
    for (std::size_t t = 0; t + 1 < rows; ++t) {
      out.rewards[b * T + t] = e.rewards[t];
      out.mask[b * T + t] = 1.0;
      out.terminated[b * T + t] = e.terminated[t] ? 1.0 : 0.0;
    }
  }
  return out;
}

}  // namespace

EpisodeBatch make_batch(std::span<const std::shared_ptr<const Episode>> episodes) {
  return stack(episodes.size(), [&](std::size_t k) -> const Episode& { return *episodes[k]; });
}

EpisodeBatch make_batch(std::span<const Episode> episodes) {
  return stack(episodes.size(), [&](std::size_t k) -> const Episode& { return episodes[k]; });
}

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw std::invalid_argument("replay buffer capacity must be positive");
  items_.reserve(std::min<std::size_t>(capacity, 4096));
}

void ReplayBuffer::push(std::shared_ptr<const Episode> episode) {
  if (!episode) throw std::invalid_argument("replay buffer: null episode");
  ++inserted_;
  if (items_.size() < capacity_) {
    items_.push_back(std::move(episode));
    return;
  }
  items_[head_] = std::move(episode);
  head_ = (head_ + 1) % capacity_;
}

std::vector<std::shared_ptr<const Episode>> ReplayBuffer::sample(std::size_t k, std::mt19937_64& rng) const {
  if (k > items_.size())
    throw std::invalid_argument("replay buffer: requested " + std::to_string(k) + " episodes, holding " +
                                std::to_string(items_.size()));
  // Partial Fisher-Yates over slot indices.
  std::vector<std::size_t> idx(items_.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::vector<std::shared_ptr<const Episode>> out;
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
    std::swap(idx[i], idx[pick(rng)]);
    out.push_back(items_[idx[i]]);
  }
  return out;
}

std::vector<std::shared_ptr<const Episode>> ReplayBuffer::contents() const {
  std::vector<std::shared_ptr<const Episode>> out;
  out.reserve(items_.size());
  for (std::size_t i = 0; i < items_.size(); ++i) out.push_back(items_[(head_ + i) % items_.size()]);
  return out;
}

}  // namespace role_forge

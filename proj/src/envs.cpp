// SPDX-License-Identifier: Apache-2.0

#include "role_forge/envs.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <unordered_map>

namespace role_forge::envs {

namespace {

void check_actions(const std::vector<int>& joint, int n_agents, int n_actions) {
  if (static_cast<int>(joint.size()) != n_agents)
    throw InvalidAction("joint action has " + std::to_string(joint.size()) + " entries, expected " +
                        std::to_string(n_agents));
  for (std::size_t i = 0; i < joint.size(); ++i)
    if (joint[i] < 0 || joint[i] >= n_actions)
      throw InvalidAction("agent " + std::to_string(i) + ": action index " + std::to_string(joint[i]) +
                          " outside [0, " + std::to_string(n_actions) + ")");
}

int line_move(int pos, int action, int cells) {
  int next = pos;
  if (action == line_action::kLeft) next = pos - 1;
  else if (action == line_action::kRight) next = pos + 1;
  return std::clamp(next, 0, cells - 1);
}

/// Occupancy of cells pos-2..pos+2 by the other agents, as a fraction of the
/// team; cells outside the line read -1.
void append_line_window(std::vector<double>& out, const std::vector<int>& positions, int self, int cells) {
  const int p = positions[static_cast<std::size_t>(self)];
  const double n = static_cast<double>(positions.size());
  for (int off = -2; off <= 2; ++off) {
    const int cell = p + off;
    if (cell < 0 || cell >= cells) {
      out.push_back(-1.0);
      continue;
    }
    int count = 0;
    for (std::size_t j = 0; j < positions.size(); ++j)
      if (static_cast<int>(j) != self && positions[j] == cell) ++count;
    out.push_back(count / n);
  }
}

// ---------------------------------------------------------------------------

class FormationEnv final : public Env {
 public:
  FormationEnv() : contract_{formation::kAgents, 7, formation::kAgents + 1, 3, formation::kHorizon} {}

  EnvKind kind() const override { return EnvKind::kFormation; }
  const EnvContract& contract() const override { return contract_; }
  std::vector<int> positions() const override { return pos_; }
  int t() const override { return t_; }
  std::unique_ptr<Env> clone() const override { return std::make_unique<FormationEnv>(*this); }

  StepResult reset(std::uint64_t) override {
    pos_ = {5, 6, 5, 6, 5, 6};
    t_ = 0;
    return observe();
  }

  StepResult step(const std::vector<int>& joint) override {
    check_actions(joint, contract_.n_agents, contract_.n_actions);
    if (t_ >= contract_.horizon) throw std::logic_error("formation: step after episode end");
    for (std::size_t i = 0; i < pos_.size(); ++i) pos_[i] = line_move(pos_[i], joint[i], formation::kCells);
    ++t_;
    StepResult r = observe();
    r.reward = formation::step_reward(pos_);
    r.done = t_ == contract_.horizon;
    return r;
  }

  StepResult observe() const override {
    StepResult r;
    const double tt = static_cast<double>(t_) / contract_.horizon;
    for (int i = 0; i < contract_.n_agents; ++i) {
      std::vector<double> o{pos_[static_cast<std::size_t>(i)] / double(formation::kCells - 1), tt};
      append_line_window(o, pos_, i, formation::kCells);
      r.obs.push_back(std::move(o));
    }
    for (int p : pos_) r.state.push_back(p / double(formation::kCells - 1));
    r.state.push_back(tt);
    return r;
  }

 private:
  EnvContract contract_;
  std::vector<int> pos_{5, 6, 5, 6, 5, 6};
  int t_ = 0;
};

// ---------------------------------------------------------------------------

class SacrificeEnv final : public Env {
 public:
  SacrificeEnv() : contract_{sacrifice::kAgents, 8, sacrifice::kAgents + 2, 3, sacrifice::kHorizon} {}

  EnvKind kind() const override { return EnvKind::kSacrifice; }
  const EnvContract& contract() const override { return contract_; }
  std::vector<int> positions() const override { return pos_; }
  int t() const override { return t_; }
  std::unique_ptr<Env> clone() const override { return std::make_unique<SacrificeEnv>(*this); }

  StepResult reset(std::uint64_t) override {
    pos_.assign(sacrifice::kAgents, 0);
    t_ = 0;
    return observe();
  }

  StepResult step(const std::vector<int>& joint) override {
    check_actions(joint, contract_.n_agents, contract_.n_actions);
    if (t_ >= contract_.horizon) throw std::logic_error("sacrifice: step after episode end");
    const bool open = gate_open();
    for (std::size_t i = 0; i < pos_.size(); ++i) {
      const int next = line_move(pos_[i], joint[i], sacrifice::kCells);
      const bool crossing = std::min(next, pos_[i]) == sacrifice::kGateWest && std::max(next, pos_[i]) == sacrifice::kGateWest + 1;
      if (!crossing || open) pos_[i] = next;
    }
    ++t_;
    StepResult r = observe();
    r.done = t_ == contract_.horizon;
    if (r.done) {
      const auto at_goal = std::count(pos_.begin(), pos_.end(), sacrifice::kGoal);
      r.reward = sacrifice::kPerAgentReward * static_cast<double>(at_goal);
    }
    return r;
  }

  StepResult observe() const override {
    StepResult r;
    const double open = gate_open() ? 1.0 : 0.0;
    const double n = static_cast<double>(pos_.size());
    const double on_plate = static_cast<double>(std::count(pos_.begin(), pos_.end(), sacrifice::kPlate));
    for (int i = 0; i < contract_.n_agents; ++i) {
      std::vector<double> o{pos_[static_cast<std::size_t>(i)] / double(sacrifice::kCells - 1), open, on_plate / n};
      append_line_window(o, pos_, i, sacrifice::kCells);
      r.obs.push_back(std::move(o));
    }
    for (int p : pos_) r.state.push_back(p / double(sacrifice::kCells - 1));
    r.state.push_back(open);
    r.state.push_back(static_cast<double>(t_) / contract_.horizon);
    return r;
  }

 private:
  bool gate_open() const { return std::find(pos_.begin(), pos_.end(), sacrifice::kPlate) != pos_.end(); }

  EnvContract contract_;
  std::vector<int> pos_ = std::vector<int>(sacrifice::kAgents, 0);
  int t_ = 0;
};

// ---------------------------------------------------------------------------

class HarvestEnv final : public Env {
 public:
  HarvestEnv() : contract_{harvest::kAgents, 12, 2 * harvest::kAgents + 4 + 1, 5, harvest::kHorizon} {}

  EnvKind kind() const override { return EnvKind::kHarvest; }
  const EnvContract& contract() const override { return contract_; }
  std::vector<int> positions() const override { return pos_; }
  int t() const override { return t_; }
  std::unique_ptr<Env> clone() const override { return std::make_unique<HarvestEnv>(*this); }

  StepResult reset(std::uint64_t) override {
    pos_.assign(harvest::kAgents, harvest::kStartCell);
    respawn_at_.fill(0);
    t_ = 0;
    return observe();
  }

  StepResult step(const std::vector<int>& joint) override {
    check_actions(joint, contract_.n_agents, contract_.n_actions);
    if (t_ >= contract_.horizon) throw std::logic_error("harvest: step after episode end");
    double reward = 0.0;
    // Picks resolve in agent-index order before anyone moves.
    for (std::size_t i = 0; i < pos_.size(); ++i) {
      if (joint[i] != grid_action::kPick) continue;
      const int r = resource_at(pos_[i]);
      if (r < 0 || t_ < respawn_at_[static_cast<std::size_t>(r)]) continue;
      reward += harvest::kClass[i] == harvest::kResourceType[r] ? harvest::kMatched : harvest::kMismatched;
      respawn_at_[static_cast<std::size_t>(r)] = t_ + harvest::kRespawn;
    }
    for (std::size_t i = 0; i < pos_.size(); ++i) {
      int x = pos_[i] % harvest::kSide, y = pos_[i] / harvest::kSide;
      switch (joint[i]) {
        case grid_action::kUp: y = std::max(0, y - 1); break;
        case grid_action::kDown: y = std::min(harvest::kSide - 1, y + 1); break;
        case grid_action::kLeft: x = std::max(0, x - 1); break;
        case grid_action::kRight: x = std::min(harvest::kSide - 1, x + 1); break;
        default: break;
      }
      pos_[i] = y * harvest::kSide + x;
    }
    ++t_;
    StepResult res = observe();
    res.reward = reward;
    res.done = t_ == contract_.horizon;
    return res;
  }

  StepResult observe() const override {
    StepResult r;
    for (int i = 0; i < contract_.n_agents; ++i) {
      const int p = pos_[static_cast<std::size_t>(i)];
      const int x = p % harvest::kSide, y = p / harvest::kSide;
      std::vector<double> o{x / double(harvest::kSide - 1), y / double(harvest::kSide - 1),
                            static_cast<double>(harvest::kClass[i])};
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const int cx = x + dx, cy = y + dy;
          double v = 0.0;
          if (cx >= 0 && cx < harvest::kSide && cy >= 0 && cy < harvest::kSide) {
            const int res = resource_at(cy * harvest::kSide + cx);
            if (res >= 0 && available(res)) v = harvest::kResourceType[res] == 0 ? 1.0 : -1.0;
          }
          o.push_back(v);
        }
      }
      r.obs.push_back(std::move(o));
    }
    for (int p : pos_) {
      r.state.push_back((p % harvest::kSide) / double(harvest::kSide - 1));
      r.state.push_back((p / harvest::kSide) / double(harvest::kSide - 1));
    }
    for (int res = 0; res < 4; ++res) r.state.push_back(available(res) ? 1.0 : 0.0);
    r.state.push_back(static_cast<double>(t_) / contract_.horizon);
    return r;
  }

 private:
  static int resource_at(int cell) {
    for (int r = 0; r < 4; ++r)
      if (harvest::kResourceCell[r] == cell) return r;
    return -1;
  }
  bool available(int r) const { return t_ >= respawn_at_[static_cast<std::size_t>(r)]; }

  EnvContract contract_;
  std::vector<int> pos_ = std::vector<int>(harvest::kAgents, harvest::kStartCell);
  std::array<int, 4> respawn_at_{};
  int t_ = 0;
};

// ---------------------------------------------------------------------------
// Oracles

double formation_oracle() {
  using State = std::array<std::int8_t, formation::kAgents>;
  auto encode = [](const State& s) {
    std::uint64_t key = 0;
    for (auto v : s) key = key * 16 + static_cast<std::uint64_t>(v);
    return key;
  };
  // Reward depends only on the multiset of positions, so states are kept
  // sorted, and co-located agents only try non-decreasing action codes.
  std::unordered_map<std::uint64_t, std::pair<State, double>> layer;
  const State start{5, 5, 5, 6, 6, 6};
  layer.emplace(encode(start), std::make_pair(start, 0.0));
  for (int t = 0; t < formation::kHorizon; ++t) {
    std::unordered_map<std::uint64_t, std::pair<State, double>> next;
    next.reserve(layer.size() * 4);
    for (const auto& [key, entry] : layer) {
      const State& s = entry.first;
      const double value = entry.second;
      std::array<int, formation::kAgents> act{};
      std::vector<int> pos(formation::kAgents);
      auto expand = [&](auto&& self, int i) -> void {
        if (i == formation::kAgents) {
          for (int k = 0; k < formation::kAgents; ++k)
            pos[static_cast<std::size_t>(k)] = line_move(s[static_cast<std::size_t>(k)], act[static_cast<std::size_t>(k)], formation::kCells);
          std::sort(pos.begin(), pos.end());
          State ns;
          for (int k = 0; k < formation::kAgents; ++k) ns[static_cast<std::size_t>(k)] = static_cast<std::int8_t>(pos[static_cast<std::size_t>(k)]);
          const double v = value + formation::step_reward(pos);
          auto [it, inserted] = next.try_emplace(encode(ns), ns, v);
          if (!inserted && v > it->second.second) it->second.second = v;
          return;
        }
        const auto ui = static_cast<std::size_t>(i);
        const int lo = i > 0 && s[ui] == s[ui - 1] ? act[ui - 1] : 0;
        for (int a = lo; a < 3; ++a) {
          act[ui] = a;
          self(self, i + 1);
        }
      };
      expand(expand, 0);
    }
    layer = std::move(next);
  }
  double best = -std::numeric_limits<double>::infinity();
  for (const auto& [key, entry] : layer) best = std::max(best, entry.second);
  return best;
}

double sacrifice_oracle() {
  // Exhaustive dynamic programming over joint positions (8^4 states).
  std::unordered_map<std::uint32_t, double> layer;
  auto encode = [](const std::vector<int>& p) {
    std::uint32_t k = 0;
    for (int v : p) k = k * 8 + static_cast<std::uint32_t>(v);
    return k;
  };
  auto decode = [](std::uint32_t k) {
    std::vector<int> p(sacrifice::kAgents);
    for (int i = sacrifice::kAgents - 1; i >= 0; --i) {
      p[static_cast<std::size_t>(i)] = static_cast<int>(k % 8);
      k /= 8;
    }
    return p;
  };
  layer.emplace(encode(std::vector<int>(sacrifice::kAgents, 0)), 0.0);
  for (int t = 0; t < sacrifice::kHorizon; ++t) {
    std::unordered_map<std::uint32_t, double> next;
    for (const auto& [key, value] : layer) {
      const auto pos = decode(key);
      const bool open = std::find(pos.begin(), pos.end(), sacrifice::kPlate) != pos.end();
      for (int c = 0; c < 81; ++c) {
        std::vector<int> np(pos);
        int code = c;
        for (std::size_t i = 0; i < np.size(); ++i) {
          const int target = line_move(pos[i], code % 3, sacrifice::kCells);
          code /= 3;
          const bool crossing = std::min(target, pos[i]) == sacrifice::kGateWest &&
                                std::max(target, pos[i]) == sacrifice::kGateWest + 1;
          if (!crossing || open) np[i] = target;
        }
        double v = value;
        if (t + 1 == sacrifice::kHorizon)
          v += sacrifice::kPerAgentReward * static_cast<double>(std::count(np.begin(), np.end(), sacrifice::kGoal));
        auto [it, inserted] = next.try_emplace(encode(np), v);
        if (!inserted && v > it->second) it->second = v;
      }
    }
    layer = std::move(next);
  }
  double best = 0.0;
  for (const auto& [key, v] : layer) best = std::max(best, v);
  return best;
}

std::vector<int> harvest_route(int from, int to) {
  std::vector<int> moves;
  int x = from % harvest::kSide, y = from / harvest::kSide;
  const int tx = to % harvest::kSide, ty = to / harvest::kSide;
  for (; x < tx; ++x) moves.push_back(grid_action::kRight);
  for (; x > tx; --x) moves.push_back(grid_action::kLeft);
  for (; y < ty; ++y) moves.push_back(grid_action::kDown);
  for (; y > ty; --y) moves.push_back(grid_action::kUp);
  return moves;
}

double harvest_oracle() {
  // Every agent walks a shortest route to one resource and then keeps
  // picking; all 4^4 assignments are simulated.
  double best = 0.0;
  for (int code = 0; code < 256; ++code) {
    std::array<std::vector<int>, harvest::kAgents> plan;
    int c = code;
    for (int i = 0; i < harvest::kAgents; ++i) {
      plan[static_cast<std::size_t>(i)] = harvest_route(harvest::kStartCell, harvest::kResourceCell[c % 4]);
      c /= 4;
    }
    HarvestEnv env;
    env.reset(0);
    double ret = 0.0;
    for (int t = 0; t < harvest::kHorizon; ++t) {
      std::vector<int> joint(harvest::kAgents);
      for (int i = 0; i < harvest::kAgents; ++i) {
        const auto& p = plan[static_cast<std::size_t>(i)];
        joint[static_cast<std::size_t>(i)] = t < static_cast<int>(p.size()) ? p[static_cast<std::size_t>(t)] : grid_action::kPick;
      }
      ret += env.step(joint).reward;
    }
    best = std::max(best, ret);
  }
  return best;
}

}  // namespace

EnvKind parse_env_kind(const std::string& name) {
  if (name == "formation") return EnvKind::kFormation;
  if (name == "sacrifice") return EnvKind::kSacrifice;
  if (name == "harvest") return EnvKind::kHarvest;
  throw std::invalid_argument("unknown env kind '" + name + "' (expected formation, sacrifice or harvest)");
}

std::string env_kind_name(EnvKind kind) {
  switch (kind) {
    case EnvKind::kFormation: return "formation";
    case EnvKind::kSacrifice: return "sacrifice";
    case EnvKind::kHarvest: return "harvest";
  }
  return "?";
}

std::unique_ptr<Env> make_env(EnvKind kind) {
  switch (kind) {
    case EnvKind::kFormation: return std::make_unique<FormationEnv>();
    case EnvKind::kSacrifice: return std::make_unique<SacrificeEnv>();
    case EnvKind::kHarvest: return std::make_unique<HarvestEnv>();
  }
  throw std::invalid_argument("unknown env kind");
}

EnvContract env_contract(EnvKind kind) { return make_env(kind)->contract(); }

bool formation::is_slot(int cell) { return cell >= 1 && cell <= 11 && cell % 2 == 1; }

double formation::step_reward(const std::vector<int>& positions) {
  std::array<bool, kCells> held{};
  for (int p : positions)
    if (is_slot(p)) held[static_cast<std::size_t>(p)] = true;
  const auto count = std::count(held.begin(), held.end(), true);
  return static_cast<double>(count) / 6.0 - kStepCost;
}

std::vector<int> ground_truth_partition(EnvKind kind, const std::vector<std::vector<int>>& trace) {
  if (trace.empty()) throw std::invalid_argument("ground_truth_partition: empty trace");
  const std::size_t n = trace.front().size();
  std::vector<int> labels(n, 0);
  switch (kind) {
    case EnvKind::kFormation:
      for (std::size_t i = 0; i < n; ++i) {
        const int p = trace.back()[i];
        // Even cells sit between two slots; take the lower one (cell 0 maps to 1).
        labels[i] = formation::is_slot(p) ? p : std::max(1, p - 1);
      }
      break;
    case EnvKind::kSacrifice: {
      std::vector<int> on_plate(n, 0);
      for (std::size_t t = 1; t < trace.size(); ++t)
        for (std::size_t i = 0; i < n; ++i)
          if (trace[t][i] == sacrifice::kPlate) ++on_plate[i];
      std::fill(labels.begin(), labels.end(), 1);
      const auto it = std::max_element(on_plate.begin(), on_plate.end());
      if (*it > 0) labels[static_cast<std::size_t>(it - on_plate.begin())] = 0;
      break;
    }
    case EnvKind::kHarvest:
      for (std::size_t i = 0; i < n; ++i) labels[i] = harvest::kClass[i];
      break;
  }
  return labels;
}

std::optional<bool> episode_success(EnvKind kind, const std::vector<std::vector<int>>& trace, double episode_return) {
  switch (kind) {
    case EnvKind::kFormation: {
      const auto& last = trace.back();
      for (int slot = 1; slot < formation::kCells; slot += 2)
        if (std::find(last.begin(), last.end(), slot) == last.end()) return false;
      return true;
    }
    case EnvKind::kSacrifice:
      return episode_return >= 3 * sacrifice::kPerAgentReward - 1e-12;
    case EnvKind::kHarvest:
      return std::nullopt;
  }
  return std::nullopt;
}

double optimal_return_oracle(EnvKind kind) {
  switch (kind) {
    case EnvKind::kFormation: return formation_oracle();
    case EnvKind::kSacrifice: return sacrifice_oracle();
    case EnvKind::kHarvest: return harvest_oracle();
  }
  throw std::invalid_argument("unknown env kind");
}

}  // namespace role_forge::envs

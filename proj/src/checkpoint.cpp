// SPDX-License-Identifier: Apache-2.0

#include "role_forge/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

namespace role_forge {

namespace {

constexpr char kMagic[8] = {'R', 'F', 'C', 'K', 'P', 'T', '\0', '\1'};

std::uint64_t fnv1a(const char* data, std::size_t n) {
  std::uint64_t h = 1469598103934665603ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= static_cast<unsigned char>(data[i]);
    h *= 1099511628211ULL;
  }
  return h;
}

class Writer {
 public:
  template <typename T>
  void pod(const T& v) {
    out_.append(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  void str(const std::string& s) {
    pod<std::uint64_t>(s.size());
    out_.append(s);
  }
  void params(const ParamSet& p) {
    pod<std::uint64_t>(p.version());
    pod<std::uint64_t>(p.size());
    for (const auto& [name, t] : p) {
      str(name);
      pod<std::int32_t>(t.shape.rank());
      for (int d : t.shape.dims()) pod<std::int32_t>(d);
      out_.append(reinterpret_cast<const char*>(t.data.data()), t.data.size() * sizeof(double));
    }
  }
  std::string& bytes() { return out_; }

 private:
  std::string out_;
};

class Reader {
 public:
  Reader(const std::string& bytes, std::size_t end) : bytes_(bytes), end_(end) {}

  template <typename T>
  T pod() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string str() {
    const auto n = pod<std::uint64_t>();
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  ParamSet params() {
    ParamSet p;
    const auto version = pod<std::uint64_t>();
    const auto count = pod<std::uint64_t>();
    for (std::uint64_t k = 0; k < count; ++k) {
      std::string name = str();
      const auto rank = pod<std::int32_t>();
      if (rank < 1 || rank > Shape::kMaxRank) throw CheckpointError("checkpoint: bad rank for " + name);
      std::vector<int> dims(static_cast<std::size_t>(rank));
      for (auto& d : dims) {
        d = pod<std::int32_t>();
        if (d <= 0) throw CheckpointError("checkpoint: bad dimension for " + name);
      }
      Tensor t{Shape(std::span<const int>(dims))};
      need(t.data.size() * sizeof(double));
      std::memcpy(t.data.data(), bytes_.data() + pos_, t.data.size() * sizeof(double));
      pos_ += t.data.size() * sizeof(double);
      p.add(name, std::move(t));
    }
    p.set_version(version);
    return p;
  }
  bool at_end() const { return pos_ == end_; }

 private:
  void need(std::size_t n) const {
    if (n > end_ - pos_) throw CheckpointError("checkpoint: truncated");
  }
  const std::string& bytes_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const RunConfig& config, const TrainState& state) {
  Writer w;
  w.bytes().append(kMagic, sizeof(kMagic));
  w.pod<std::uint32_t>(kCheckpointVersion);
  w.pod<std::uint64_t>(config_hash(config.train));
  w.str(envs::env_kind_name(config.train.env_kind));
  w.pod<std::uint64_t>(state.updates);
  w.pod<std::int64_t>(state.env_steps);
  std::ostringstream rng;
  rng << state.rng;
  w.str(rng.str());
  w.str(dump_run_config(config));
  w.params(state.params);
  w.params(state.target);
  w.params(state.optimizer.v);
  const std::uint64_t sum = fnv1a(w.bytes().data(), w.bytes().size());
  w.pod(sum);
  return std::move(w.bytes());
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  constexpr std::size_t kMin = sizeof(kMagic) + sizeof(std::uint32_t) + sizeof(std::uint64_t);
  if (bytes.size() < kMin || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0)
    throw CheckpointError("checkpoint: not a role_forge checkpoint");
  std::uint32_t version;
  std::memcpy(&version, bytes.data() + sizeof(kMagic), sizeof(version));
  if (version != kCheckpointVersion)
    throw CheckpointError("checkpoint: format version " + std::to_string(version) + " is not supported (expected " +
                          std::to_string(kCheckpointVersion) + ")");

  const std::size_t body = bytes.size() - sizeof(std::uint64_t);
  std::uint64_t stored;
  std::memcpy(&stored, bytes.data() + body, sizeof(stored));
  if (fnv1a(bytes.data(), body) != stored) throw CheckpointError("checkpoint: truncated or corrupt (checksum mismatch)");

  Reader r(bytes, body);
  r.pod<std::uint64_t>();  // magic
  r.pod<std::uint32_t>();  // version
  Checkpoint ck;
  ck.format_version = version;
  ck.config_hash = r.pod<std::uint64_t>();
  const std::string env = r.str();
  ck.state.updates = r.pod<std::uint64_t>();
  ck.state.env_steps = r.pod<std::int64_t>();
  std::istringstream rng(r.str());
  rng >> ck.state.rng;
  if (!rng) throw CheckpointError("checkpoint: bad generator state");
  try {
    ck.config = parse_run_config(r.str());
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("checkpoint: embedded config: ") + e.what());
  }
  if (envs::env_kind_name(ck.config.train.env_kind) != env)
    throw CheckpointError("checkpoint: header environment disagrees with embedded config");
  ck.state.params = r.params();
  ck.state.target = r.params();
  ck.state.optimizer.v = r.params();
  if (!r.at_end()) throw CheckpointError("checkpoint: trailing bytes");
  if (!ck.state.params.same_layout(ck.state.target) || !ck.state.params.same_layout(ck.state.optimizer.v))
    throw CheckpointError("checkpoint: parameter layouts disagree");
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const RunConfig& config, const TrainState& state) {
  const std::string bytes = encode_checkpoint(config, state);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return decode_checkpoint(ss.str());
}

}  // namespace role_forge

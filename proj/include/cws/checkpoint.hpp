#pragma once

// Binary checkpoints: parameters, both optimizer states and the loop
// position, tagged with the hash of the config that produced them.
//
//   "CWSCKPT1" | config hash | TrainState | params | adam theta | adam phi | fnv1a of all prior bytes

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "cws/error.hpp"
#include "cws/io.hpp"
#include "cws/nn.hpp"
#include "cws/optim.hpp"

namespace cws {

inline constexpr char kCheckpointMagic[] = "CWSCKPT1";

struct TrainState {
  std::uint64_t step = 0;
  std::uint64_t epoch = 0;
  std::uint64_t batch_in_epoch = 0;
  double wall_time = 0.0;
  double best_accuracy = -1.0;
  std::uint64_t best_step = 0;
  std::uint64_t evals_since_best = 0;
  bool stopped = false;

  bool operator==(const TrainState&) const = default;
};

inline std::vector<unsigned char> encode_checkpoint(std::uint64_t config_hash, const TrainState& s, const ParamStore& ps,
                                                    const Adam& adam_theta, const Adam& adam_phi) {
  io::ByteWriter w;
  w.bytes(kCheckpointMagic, 8);
  w.u64(config_hash);
  w.u64(s.step);
  w.u64(s.epoch);
  w.u64(s.batch_in_epoch);
  w.f64(s.wall_time);
  w.f64(s.best_accuracy);
  w.u64(s.best_step);
  w.u64(s.evals_since_best);
  w.u32(s.stopped ? 1 : 0);
  w.u64(ps.entries().size());
  for (const auto& e : ps.entries()) {
    const Tensor& v = e.var.value();
    w.str(e.name);
    w.u64(v.rows());
    w.u64(v.cols());
    for (double x : v.data()) w.f64(x);
  }
  adam_theta.save(w);
  adam_phi.save(w);
  std::vector<unsigned char> out = w.data();
  io::ByteWriter trailer;
  trailer.u64(io::fnv1a(std::string_view(reinterpret_cast<const char*>(out.data()), out.size())));
  out.insert(out.end(), trailer.data().begin(), trailer.data().end());
  return out;
}

inline void save_checkpoint(const std::filesystem::path& path, std::uint64_t config_hash, const TrainState& s,
                            const ParamStore& ps, const Adam& adam_theta, const Adam& adam_phi) {
  io::write_file_atomic(path, encode_checkpoint(config_hash, s, ps, adam_theta, adam_phi));
}

struct CheckpointOptions {
  bool allow_config_mismatch = false;
};

// Decodes into the given store and optimizers. Nothing is modified unless the
// whole checkpoint is valid.
inline TrainState decode_checkpoint(const std::vector<unsigned char>& bytes, const std::string& source,
                                    std::uint64_t config_hash, ParamStore& ps, Adam& adam_theta, Adam& adam_phi,
                                    CheckpointOptions opts = {}) {
  io::ByteReader r(bytes, source);
  char magic[8];
  r.bytes(magic, 8);
  if (std::string(magic, 8) != std::string(kCheckpointMagic, 8)) r.fail("not a checkpoint (bad magic)");
  if (bytes.size() < 16) r.fail("checkpoint too short");
  {
    io::ByteReader tail(std::vector<unsigned char>(bytes.end() - 8, bytes.end()), source);
    const std::uint64_t stored = tail.u64();
    const std::uint64_t actual =
        io::fnv1a(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size() - 8));
    if (stored != actual) throw FormatError(source + ": checkpoint checksum mismatch (file is corrupt or truncated)");
  }
  const std::uint64_t hash = r.u64();
  if (hash != config_hash && !opts.allow_config_mismatch) {
    throw ConfigError(source + ": checkpoint was written with config hash " + io::hex64(hash) +
                      " but the current config hashes to " + io::hex64(config_hash) +
                      "; pass the override flag to load it anyway");
  }
  TrainState s;
  s.step = r.u64();
  s.epoch = r.u64();
  s.batch_in_epoch = r.u64();
  s.wall_time = r.f64();
  s.best_accuracy = r.f64();
  s.best_step = r.u64();
  s.evals_since_best = r.u64();
  s.stopped = r.u32() != 0;
  const std::uint64_t n = r.u64();
  if (n != ps.entries().size()) {
    r.fail("checkpoint has " + std::to_string(n) + " parameters, model has " + std::to_string(ps.entries().size()));
  }
  std::vector<Tensor> values;
  for (const auto& e : ps.entries()) {
    const std::string name = r.str();
    if (name != e.name) r.fail("checkpoint parameter '" + name + "' where the model expects '" + e.name + "'");
    const std::uint64_t rows = r.u64();
    const std::uint64_t cols = r.u64();
    if (rows != e.var.rows() || cols != e.var.cols()) {
      r.fail("checkpoint tensor '" + name + "' has shape " + std::to_string(rows) + "x" + std::to_string(cols) +
             ", model expects " + std::to_string(e.var.rows()) + "x" + std::to_string(e.var.cols()));
    }
    Tensor t(rows, cols);
    for (double& x : t.data()) x = r.f64();
    values.push_back(std::move(t));
  }
  Adam at = adam_theta, ap = adam_phi;
  at.load(r);
  ap.load(r);
  r.u64();
  if (!r.at_end()) r.fail("trailing bytes after checkpoint");
  ps.restore(values);
  adam_theta = at;
  adam_phi = ap;
  return s;
}

inline TrainState load_checkpoint(const std::filesystem::path& path, std::uint64_t config_hash, ParamStore& ps,
                                  Adam& adam_theta, Adam& adam_phi, CheckpointOptions opts = {}) {
  return decode_checkpoint(io::read_file(path), path.string(), config_hash, ps, adam_theta, adam_phi, opts);
}

}  // namespace cws

#pragma once

// Labeled sequence datasets: MNIST IDX ingestion, synthetic HMM sequences,
// supervision masking, batching, and a binary container for reuse.

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <queue>
#include <string>
#include <vector>

#include "cws/io.hpp"
#include "cws/rng.hpp"
#include "cws/tensor.hpp"

namespace cws {

inline constexpr int kUnlabeled = -1;

struct LabeledSequence {
  Tensor x;                 // T x D_x
  std::vector<int> labels;  // length T, kUnlabeled where t is not in S

  std::size_t length() const { return x.rows(); }
  bool is_labeled(std::size_t t) const { return labels[t] != kUnlabeled; }
  std::size_t num_labeled() const {
    return static_cast<std::size_t>(std::count_if(labels.begin(), labels.end(), [](int y) { return y != kUnlabeled; }));
  }
};

struct Dataset {
  std::size_t num_classes = 0;
  std::size_t obs_dim = 0;
  std::vector<LabeledSequence> sequences;
  std::vector<std::vector<int>> truth;  // ground-truth labels, kept even when masked

  std::size_t size() const { return sequences.size(); }
  bool has_truth() const { return truth.size() == sequences.size() && !truth.empty(); }

  std::size_t labeled_steps() const {
    std::size_t n = 0;
    for (const auto& s : sequences) n += s.num_labeled();
    return n;
  }
  std::size_t labeled_sequences() const {
    return static_cast<std::size_t>(
        std::count_if(sequences.begin(), sequences.end(), [](const LabeledSequence& s) { return s.num_labeled() > 0; }));
  }
};

// A minibatch laid out time-major: x[t] is batch x D_x.
struct SequenceBatch {
  std::size_t size = 0;
  std::size_t length = 0;
  std::size_t obs_dim = 0;
  std::vector<Tensor> x;
  std::vector<std::vector<int>> labels;  // labels[t][b]

  std::size_t num_labeled(std::size_t b) const {
    std::size_t n = 0;
    for (std::size_t t = 0; t < length; ++t) n += labels[t][b] != kUnlabeled ? 1 : 0;
    return n;
  }
};

inline SequenceBatch make_batch(const Dataset& ds, std::span<const std::size_t> index, bool hide_labels = false) {
  require(!index.empty(), "make_batch: empty index");
  SequenceBatch b;
  b.size = index.size();
  b.length = ds.sequences[index[0]].length();
  b.obs_dim = ds.obs_dim;
  b.x.assign(b.length, Tensor(b.size, b.obs_dim));
  b.labels.assign(b.length, std::vector<int>(b.size, kUnlabeled));
  for (std::size_t i = 0; i < index.size(); ++i) {
    const auto& s = ds.sequences.at(index[i]);
    require(s.length() == b.length, "make_batch: sequences in one batch must share a length");
    for (std::size_t t = 0; t < b.length; ++t) {
      for (std::size_t d = 0; d < b.obs_dim; ++d) b.x[t](i, d) = s.x(t, d);
      if (!hide_labels) b.labels[t][i] = s.labels[t];
    }
  }
  return b;
}

inline SequenceBatch make_batch(const LabeledSequence& seq, std::size_t obs_dim) {
  Dataset tmp;
  tmp.obs_dim = obs_dim;
  tmp.sequences.push_back(seq);
  const std::size_t idx = 0;
  return make_batch(tmp, std::span<const std::size_t>(&idx, 1));
}

// ---------------------------------------------------------------------------
// MNIST IDX

struct IdxArray {
  std::vector<std::uint32_t> dims;
  std::vector<unsigned char> data;
};

// Reads the whole file; gzip-compressed input is decompressed transparently.
inline std::vector<unsigned char> read_maybe_gzip(const std::filesystem::path& path) {
  gzFile f = gzopen(path.string().c_str(), "rb");
  if (f == nullptr) throw FormatError("cannot open " + path.string());
  std::vector<unsigned char> out;
  std::vector<unsigned char> chunk(1 << 16);
  int n = 0;
  while ((n = gzread(f, chunk.data(), static_cast<unsigned>(chunk.size()))) > 0) out.insert(out.end(), chunk.begin(), chunk.begin() + n);
  const bool failed = n < 0;
  gzclose(f);
  if (failed) throw FormatError(path.string() + ": decompression error");
  return out;
}

// expected_magic is the full big-endian 32-bit magic: 2051 for images, 2049 for labels.
inline IdxArray read_idx(const std::filesystem::path& path, std::uint32_t expected_magic) {
  io::ByteReader in(read_maybe_gzip(path), path.string());
  const std::uint32_t magic = in.u32_be();
  if (magic != expected_magic) {
    throw FormatError(path.string() + ": bad IDX magic " + std::to_string(magic) + " (expected " +
                      std::to_string(expected_magic) + ") at byte offset 0");
  }
  IdxArray arr;
  const std::uint32_t ndims = magic & 0xFF;
  std::size_t count = 1;
  for (std::uint32_t i = 0; i < ndims; ++i) {
    arr.dims.push_back(in.u32_be());
    count *= arr.dims.back();
  }
  arr.data.resize(count);
  if (count > 0) in.bytes(arr.data.data(), count);
  return arr;
}

inline std::vector<unsigned char> encode_idx(std::uint32_t magic, const std::vector<std::uint32_t>& dims,
                                             std::span<const unsigned char> payload) {
  std::vector<unsigned char> out;
  auto be32 = [&](std::uint32_t v) {
    for (int i = 3; i >= 0; --i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
  };
  be32(magic);
  for (auto d : dims) be32(d);
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

inline constexpr std::uint32_t kIdxImageMagic = 2051;
inline constexpr std::uint32_t kIdxLabelMagic = 2049;
inline constexpr double kBinarizeThreshold = 0.5;

// Each image becomes a length-1 sequence with a binarized 1 x (rows*cols) observation.
inline Dataset load_mnist_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
  IdxArray images = read_idx(images_path, kIdxImageMagic);
  IdxArray labels = read_idx(labels_path, kIdxLabelMagic);
  if (images.dims.size() != 3) throw FormatError(images_path.string() + ": expected 3 dims, got " + std::to_string(images.dims.size()));
  if (labels.dims.size() != 1) throw FormatError(labels_path.string() + ": expected 1 dim, got " + std::to_string(labels.dims.size()));
  if (images.dims[0] != labels.dims[0]) {
    throw FormatError("MNIST image/label count mismatch: " + std::to_string(images.dims[0]) + " vs " +
                      std::to_string(labels.dims[0]));
  }
  Dataset ds;
  ds.num_classes = 10;
  ds.obs_dim = std::size_t{images.dims[1]} * images.dims[2];
  ds.sequences.reserve(images.dims[0]);
  for (std::size_t i = 0; i < images.dims[0]; ++i) {
    LabeledSequence s;
    s.x = Tensor(1, ds.obs_dim);
    for (std::size_t p = 0; p < ds.obs_dim; ++p) {
      const double v = images.data[i * ds.obs_dim + p] / 255.0;
      s.x(0, p) = v > kBinarizeThreshold ? 1.0 : 0.0;
    }
    const int y = labels.data[i];
    if (y < 0 || y > 9) throw FormatError(labels_path.string() + ": label " + std::to_string(y) + " out of range at byte offset " + std::to_string(8 + i));
    s.labels = {y};
    ds.truth.push_back({y});
    ds.sequences.push_back(std::move(s));
  }
  return ds;
}

// Keeps labels on exactly n_labeled items and strips the rest. With balanced,
// the same number of items is kept per class.
inline Dataset subsample_labels(const Dataset& full, std::size_t n_labeled, std::uint64_t seed, bool balanced) {
  require(n_labeled <= full.size(), "subsample_labels: n_labeled " + std::to_string(n_labeled) + " exceeds dataset size " +
                                        std::to_string(full.size()));
  require(full.has_truth(), "subsample_labels: dataset has no ground truth");
  std::vector<std::size_t> order(full.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed, 0x5B5A);
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

  std::vector<bool> keep(full.size(), false);
  if (balanced) {
    require(full.num_classes > 0 && n_labeled % full.num_classes == 0,
            "subsample_labels: balanced selection needs n_labeled divisible by " + std::to_string(full.num_classes));
    const std::size_t per_class = n_labeled / full.num_classes;
    std::vector<std::size_t> taken(full.num_classes, 0);
    for (std::size_t i : order) {
      const auto c = static_cast<std::size_t>(full.truth[i][0]);
      if (taken[c] < per_class) {
        ++taken[c];
        keep[i] = true;
      }
    }
    for (std::size_t c = 0; c < full.num_classes; ++c) {
      require(taken[c] == per_class, "subsample_labels: class " + std::to_string(c) + " has only " +
                                         std::to_string(taken[c]) + " items, balanced selection impossible");
    }
  } else {
    for (std::size_t i = 0; i < n_labeled; ++i) keep[order[i]] = true;
  }

  Dataset out = full;
  for (std::size_t i = 0; i < out.size(); ++i) {
    auto& s = out.sequences[i];
    for (std::size_t t = 0; t < s.length(); ++t) s.labels[t] = keep[i] ? full.truth[i][t] : kUnlabeled;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic HMM task

struct HmmSpec {
  std::size_t states = 6;
  std::size_t obs_dim = 4;
  std::size_t length = 50;
  std::size_t count = 5000;
  Tensor initial;     // 1 x C
  Tensor transition;  // C x C, rows sum to 1
  Tensor means;       // C x D
  Tensor stds;        // C x D, diagonal covariance

  // Irreducibility is required of task definitions; sampling only needs
  // stochastic rows.
  void validate(bool require_irreducible = true) const {
    require(states >= 2, "HmmSpec: need at least 2 states");
    require(transition.shape() == Shape{states, states}, "HmmSpec: transition must be CxC");
    require(means.shape() == Shape{states, obs_dim} && stds.shape() == means.shape(), "HmmSpec: emission shape mismatch");
    require(initial.shape() == Shape{1, states}, "HmmSpec: initial must be 1xC");
    double init_total = 0.0;
    for (double v : initial.data()) {
      require(v >= 0.0, "HmmSpec: negative initial probability");
      init_total += v;
    }
    require(std::abs(init_total - 1.0) < 1e-9, "HmmSpec: initial distribution sums to " + std::to_string(init_total));
    for (std::size_t i = 0; i < states; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < states; ++j) {
        require(transition(i, j) >= 0.0, "HmmSpec: negative transition probability");
        s += transition(i, j);
      }
      require(std::abs(s - 1.0) < 1e-9, "HmmSpec: transition row " + std::to_string(i) + " sums to " + std::to_string(s));
    }
    for (double v : stds.data()) require(v > 0.0, "HmmSpec: emission std must be positive");
    if (require_irreducible) require(is_irreducible(transition), "HmmSpec: transition matrix is not irreducible");
  }

  static bool is_irreducible(const Tensor& a) {
    const std::size_t n = a.rows();
    for (std::size_t src = 0; src < n; ++src) {
      std::vector<bool> seen(n, false);
      std::queue<std::size_t> q;
      q.push(src);
      seen[src] = true;
      std::size_t reached = 1;
      while (!q.empty()) {
        const std::size_t i = q.front();
        q.pop();
        for (std::size_t j = 0; j < n; ++j) {
          if (a(i, j) > 0.0 && !seen[j]) {
            seen[j] = true;
            ++reached;
            q.push(j);
          }
        }
      }
      if (reached != n) return false;
    }
    return true;
  }
};

inline Tensor stationary_distribution(const Tensor& transition) {
  const std::size_t n = transition.rows();
  Tensor pi(1, n, 1.0 / static_cast<double>(n));
  for (int it = 0; it < 100000; ++it) {
    Tensor next(1, n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) next[j] += pi[i] * transition(i, j);
    double diff = 0.0;
    for (std::size_t j = 0; j < n; ++j) diff = std::max(diff, std::abs(next[j] - pi[j]));
    pi = std::move(next);
    if (diff < 1e-15) break;
  }
  return pi;
}

struct HmmTaskParams {
  std::size_t states = 6;
  std::size_t obs_dim = 4;
  std::size_t length = 50;
  std::size_t count = 5000;
  double self_transition = 0.9;
  double mean_scale = 1.0;
  double noise_std = 1.0;
  std::uint64_t seed = 1;
};

// Sticky transitions with random off-diagonal mass; Gaussian state means.
inline HmmSpec make_hmm_spec(const HmmTaskParams& p) {
  HmmSpec spec;
  spec.states = p.states;
  spec.obs_dim = p.obs_dim;
  spec.length = p.length;
  spec.count = p.count;
  Rng rng(p.seed, 0x4D4D);
  spec.transition = Tensor(p.states, p.states);
  for (std::size_t i = 0; i < p.states; ++i) {
    std::vector<double> w(p.states, 0.0);
    double tot = 0.0;
    for (std::size_t j = 0; j < p.states; ++j) {
      if (j == i) continue;
      w[j] = -std::log(rng.uniform());  // Dirichlet(1) via normalized exponentials
      tot += w[j];
    }
    for (std::size_t j = 0; j < p.states; ++j) {
      spec.transition(i, j) = j == i ? p.self_transition : (1.0 - p.self_transition) * w[j] / tot;
    }
  }
  spec.means = Tensor(p.states, p.obs_dim);
  for (double& v : spec.means.data()) v = p.mean_scale * rng.normal();
  spec.stds = Tensor(p.states, p.obs_dim, p.noise_std);
  spec.initial = stationary_distribution(spec.transition);
  spec.validate();
  return spec;
}

inline int sample_index(std::span<const double> probs, Rng& rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    acc += probs[i];
    if (u < acc) return static_cast<int>(i);
  }
  return static_cast<int>(probs.size() - 1);
}

// Ancestral sampling; every sequence is fully labeled, ground truth kept in truth.
inline Dataset gen_hmm(const HmmSpec& spec, const Rng& rng) {
  spec.validate(false);
  Dataset ds;
  ds.num_classes = spec.states;
  ds.obs_dim = spec.obs_dim;
  ds.sequences.reserve(spec.count);
  for (std::size_t n = 0; n < spec.count; ++n) {
    Rng r = rng.fork(n);
    LabeledSequence s;
    s.x = Tensor(spec.length, spec.obs_dim);
    s.labels.resize(spec.length);
    int state = sample_index(spec.initial.row_span(0), r);
    for (std::size_t t = 0; t < spec.length; ++t) {
      if (t > 0) state = sample_index(spec.transition.row_span(static_cast<std::size_t>(state)), r);
      s.labels[t] = state;
      for (std::size_t d = 0; d < spec.obs_dim; ++d) {
        const auto st = static_cast<std::size_t>(state);
        s.x(t, d) = spec.means(st, d) + spec.stds(st, d) * r.normal();
      }
    }
    ds.truth.push_back(s.labels);
    ds.sequences.push_back(std::move(s));
  }
  return ds;
}

enum class SupervisionMode { per_step_rate, per_sequence_all_or_none, block };

inline const char* to_string(SupervisionMode m) {
  switch (m) {
    case SupervisionMode::per_step_rate: return "per-step-rate";
    case SupervisionMode::per_sequence_all_or_none: return "per-sequence-all-or-none";
    case SupervisionMode::block: return "block";
  }
  return "?";
}

inline SupervisionMode parse_supervision_mode(const std::string& s) {
  if (s == "per-step-rate") return SupervisionMode::per_step_rate;
  if (s == "per-sequence-all-or-none") return SupervisionMode::per_sequence_all_or_none;
  if (s == "block") return SupervisionMode::block;
  throw ConfigError("unknown supervision mode '" + s + "'");
}

struct SupervisionSpec {
  SupervisionMode mode = SupervisionMode::per_sequence_all_or_none;
  double rate = 0.125;
  std::uint64_t seed = 7;
};

// Masks labels according to the spec. Observations and ground truth are untouched.
inline Dataset apply_supervision(const Dataset& ds, const SupervisionSpec& spec) {
  require(spec.rate >= 0.0 && spec.rate <= 1.0, "apply_supervision: rate must lie in [0,1]");
  require(ds.has_truth(), "apply_supervision: dataset has no ground truth");
  Dataset out = ds;
  Rng root(spec.seed, 0x5A5A);
  for (std::size_t n = 0; n < out.size(); ++n) {
    Rng r = root.fork(n);
    auto& s = out.sequences[n];
    const std::size_t T = s.length();
    std::vector<bool> keep(T, false);
    switch (spec.mode) {
      case SupervisionMode::per_step_rate:
        for (std::size_t t = 0; t < T; ++t) keep[t] = r.uniform() < spec.rate;
        break;
      case SupervisionMode::per_sequence_all_or_none: {
        const bool all = r.uniform() < spec.rate;
        std::fill(keep.begin(), keep.end(), all);
        break;
      }
      case SupervisionMode::block: {
        const auto len = static_cast<std::size_t>(std::llround(spec.rate * static_cast<double>(T)));
        const std::size_t start = len >= T ? 0 : r.below(T - len + 1);
        for (std::size_t t = start; t < std::min(T, start + len); ++t) keep[t] = true;
        break;
      }
    }
    for (std::size_t t = 0; t < T; ++t) s.labels[t] = keep[t] ? ds.truth[n][t] : kUnlabeled;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Binary dataset container

inline constexpr char kDatasetMagic[8] = {'C', 'W', 'S', 'D', 'A', 'T', 'A', '\0'};
inline constexpr std::uint32_t kDatasetVersion = 1;

inline std::vector<unsigned char> encode_dataset(const Dataset& ds) {
  io::ByteWriter w;
  w.bytes(kDatasetMagic, sizeof kDatasetMagic);
  w.u32(kDatasetVersion);
  w.u64(ds.num_classes);
  w.u64(ds.obs_dim);
  w.u64(ds.size());
  w.u32(ds.has_truth() ? 1 : 0);
  for (std::size_t n = 0; n < ds.size(); ++n) {
    const auto& s = ds.sequences[n];
    w.u64(s.length());
    for (double v : s.x.data()) w.f64(v);
    for (int y : s.labels) w.i32(y);
    if (ds.has_truth())
      for (int y : ds.truth[n]) w.i32(y);
  }
  return w.data();
}

inline Dataset decode_dataset(std::vector<unsigned char> bytes, const std::string& source) {
  io::ByteReader in(std::move(bytes), source);
  char magic[8];
  in.bytes(magic, sizeof magic);
  if (!std::equal(std::begin(magic), std::end(magic), std::begin(kDatasetMagic))) in.fail("bad dataset magic");
  const std::uint32_t version = in.u32();
  if (version != kDatasetVersion) in.fail("unsupported dataset version " + std::to_string(version));
  Dataset ds;
  ds.num_classes = in.u64();
  ds.obs_dim = in.u64();
  const std::uint64_t count = in.u64();
  const bool has_truth = in.u32() != 0;
  for (std::uint64_t n = 0; n < count; ++n) {
    LabeledSequence s;
    const std::uint64_t T = in.u64();
    s.x = Tensor(T, ds.obs_dim);
    for (double& v : s.x.data()) v = in.f64();
    s.labels.resize(T);
    for (int& y : s.labels) y = in.i32();
    if (has_truth) {
      std::vector<int> truth(T);
      for (int& y : truth) y = in.i32();
      ds.truth.push_back(std::move(truth));
    }
    ds.sequences.push_back(std::move(s));
  }
  if (!in.at_end()) in.fail("trailing bytes");
  return ds;
}

inline void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
  io::write_file_atomic(path, encode_dataset(ds));
}

inline Dataset load_dataset(const std::filesystem::path& path) { return decode_dataset(io::read_file(path), path.string()); }

}  // namespace cws

#pragma once

// Builds the datasets and the model a config describes.

#include <cstdlib>
#include <filesystem>
#include <string>

#include "cws/config.hpp"
#include "cws/data.hpp"
#include "cws/models/sequence.hpp"
#include "cws/models/static_vae.hpp"

namespace cws {

struct TaskData {
  Dataset train;
  Dataset val;
};

inline Dataset take_first(Dataset ds, std::size_t limit) {
  if (limit == 0 || limit >= ds.size()) return ds;
  ds.sequences.resize(limit);
  if (!ds.truth.empty()) ds.truth.resize(limit);
  return ds;
}

// CWS_DATA_DIR overrides data_dir.
inline std::filesystem::path mnist_dir(const TrainConfig& c) {
  if (const char* env = std::getenv("CWS_DATA_DIR"); env && *env) return env;
  return c.data_dir;
}

inline HmmTaskParams hmm_params(const TrainConfig& c, std::size_t count) {
  HmmTaskParams p;
  p.states = c.hmm_states;
  p.obs_dim = c.hmm_obs_dim;
  p.length = c.hmm_length;
  p.count = count;
  p.self_transition = c.hmm_self_transition;
  p.mean_scale = c.hmm_mean_scale;
  p.noise_std = c.hmm_noise_std;
  p.seed = c.hmm_seed;
  return p;
}

// Fully labeled HMM train and validation sequences before any masking.
inline TaskData generate_hmm(const TrainConfig& c) {
  Rng root(c.hmm_seed, 0x484D4D);
  return {gen_hmm(make_hmm_spec(hmm_params(c, c.hmm_train)), root.fork(1)),
          gen_hmm(make_hmm_spec(hmm_params(c, c.hmm_val)), root.fork(2))};
}

inline SupervisionSpec supervision_spec(const TrainConfig& c) {
  return {parse_supervision_mode(c.supervision_mode), c.supervision_rate, c.supervision_seed};
}

// Training data carries the configured partial supervision; validation data
// keeps every label as ground truth (labels are hidden at evaluation time).
inline TaskData load_task_data(const TrainConfig& c) {
  TaskData d;
  if (c.task == Task::mnist) {
    const auto dir = mnist_dir(c);
    d.train = load_mnist_idx(dir / "mnist-train-images-idx3-ubyte.gz", dir / "mnist-train-labels-idx1-ubyte.gz");
    d.val = load_mnist_idx(dir / "mnist-val-images-idx3-ubyte.gz", dir / "mnist-val-labels-idx1-ubyte.gz");
    d.train = subsample_labels(take_first(std::move(d.train), c.train_limit), c.n_labeled, c.supervision_seed, c.balanced);
  } else {
    if (!c.dataset_dir.empty()) {
      const std::filesystem::path dir = c.dataset_dir;
      d.train = load_dataset(dir / "train.cwsd");
      d.val = load_dataset(dir / "val.cwsd");
    } else {
      d = generate_hmm(c);
    }
    d.train = apply_supervision(take_first(std::move(d.train), c.train_limit), supervision_spec(c));
  }
  d.val = take_first(std::move(d.val), c.val_limit);
  return d;
}

inline ObservationKind observation_kind(const TrainConfig& c) {
  return c.observation == "bernoulli" ? ObservationKind::bernoulli : ObservationKind::gaussian;
}

inline Rng model_init_rng(const TrainConfig& c) { return Rng(c.seed).fork(0x1417); }

inline StaticSemiVAE make_static_model(const TrainConfig& c, const Dataset& d) {
  return StaticSemiVAE({d.obs_dim, d.num_classes, c.z_dim, c.hidden}, model_init_rng(c));
}

inline SeqModel make_sequence_model(const TrainConfig& c, const Dataset& d) {
  return SeqModel({d.obs_dim, d.num_classes, c.z_dim, c.hidden, c.mlp_hidden, observation_kind(c)}, model_init_rng(c));
}

// Calls f with the model the task uses.
template <class F>
decltype(auto) with_task_model(const TrainConfig& c, const Dataset& d, F&& f) {
  if (c.task == Task::mnist) {
    StaticSemiVAE m = make_static_model(c, d);
    return f(m);
  }
  SeqModel m = make_sequence_model(c, d);
  return f(m);
}

}  // namespace cws

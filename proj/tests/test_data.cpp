#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numeric>

#include "cws/data.hpp"
#include "cws/io.hpp"
#include "cws/oracle/hmm_oracle.hpp"
#include "cws/oracle/idx_oracle.hpp"

using namespace cws;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir() {
  fs::path p = fs::temp_directory_path() / ("cws_test_data_" + std::to_string(::getpid()));
  fs::create_directories(p);
  return p;
}

fs::path write_bytes(const std::string& name, const std::vector<unsigned char>& bytes) {
  fs::path p = scratch_dir() / name;
  io::write_file_atomic(p, bytes);
  return p;
}

Dataset labeled_digits(std::size_t per_class) {
  Dataset ds;
  ds.num_classes = 10;
  ds.obs_dim = 2;
  for (std::size_t i = 0; i < 10 * per_class; ++i) {
    LabeledSequence s;
    s.x = Tensor(1, 2, static_cast<double>(i));
    s.labels = {static_cast<int>(i % 10)};
    ds.truth.push_back(s.labels);
    ds.sequences.push_back(s);
  }
  return ds;
}

HmmSpec default_task(std::size_t count) {
  HmmTaskParams p;
  p.count = count;
  return make_hmm_spec(p);
}

}  // namespace

// ---- IDX --------------------------------------------------------------------

TEST(Idx, EmptyDatasetFromWellFormedHeader) {
  auto im = write_bytes("e-img", encode_idx(kIdxImageMagic, {0, 28, 28}, {}));
  auto lb = write_bytes("e-lab", encode_idx(kIdxLabelMagic, {0}, {}));
  Dataset ds = load_mnist_idx(im, lb);
  EXPECT_EQ(ds.size(), 0u);
  EXPECT_EQ(ds.obs_dim, 784u);
}

TEST(Idx, BinarizationThreshold) {
  std::vector<unsigned char> px{255, 128, 127, 0};
  std::vector<unsigned char> y{7};
  Dataset ds = load_mnist_idx(write_bytes("b-img", encode_idx(kIdxImageMagic, {1, 2, 2}, px)),
                              write_bytes("b-lab", encode_idx(kIdxLabelMagic, {1}, y)));
  ASSERT_EQ(ds.size(), 1u);
  EXPECT_EQ(ds.sequences[0].x(0, 0), 1.0);
  EXPECT_EQ(ds.sequences[0].x(0, 1), 1.0);
  EXPECT_EQ(ds.sequences[0].x(0, 2), 0.0);
  EXPECT_EQ(ds.sequences[0].x(0, 3), 0.0);
  EXPECT_EQ(ds.sequences[0].labels[0], 7);
}

TEST(Idx, FormatErrorsCarryByteOffsets) {
  std::vector<unsigned char> y{1, 2};
  auto lb = write_bytes("f-lab", encode_idx(kIdxLabelMagic, {2}, y));
  auto bad_magic = write_bytes("f-img1", encode_idx(kIdxLabelMagic, {2}, y));
  try {
    load_mnist_idx(bad_magic, lb);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("byte offset 0"), std::string::npos) << e.what();
  }
  std::vector<unsigned char> short_px(5, 0);
  auto truncated = write_bytes("f-img2", encode_idx(kIdxImageMagic, {2, 2, 2}, short_px));
  try {
    load_mnist_idx(truncated, lb);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("truncated at byte offset 16"), std::string::npos) << e.what();
  }
  std::vector<unsigned char> bad_label{11, 0};
  std::vector<unsigned char> px(8, 0);
  EXPECT_THROW(load_mnist_idx(write_bytes("f-img3", encode_idx(kIdxImageMagic, {2, 2, 2}, px)),
                              write_bytes("f-lab3", encode_idx(kIdxLabelMagic, {2}, bad_label))),
               FormatError);
}

// The bundled digits against a second reader, plus values computed once with
// Python's gzip module: pixel sum 57978, 229 pixels above threshold, label 0.
TEST(Idx, FirstBundledImageMatchesIndependentReader) {
  const fs::path dir = fs::path(CWS_SOURCE_DIR) / "data";
  const fs::path im = dir / "mnist-train-images-idx3-ubyte.gz", lb = dir / "mnist-train-labels-idx1-ubyte.gz";
  ASSERT_TRUE(fs::exists(im)) << im;
  Dataset ds = load_mnist_idx(im, lb);
  EXPECT_EQ(ds.size(), 9000u);
  oracle::IdxImage ref = oracle::idx_item(im.string(), lb.string(), 0);
  EXPECT_EQ(std::accumulate(ref.pixels.begin(), ref.pixels.end(), 0), 57978);
  EXPECT_EQ(ref.label, 0);
  EXPECT_EQ(ds.sequences[0].labels[0], ref.label);
  int on = 0;
  for (std::size_t p = 0; p < 784; ++p) {
    const double expect = ref.pixels[p] / 255.0 > 0.5 ? 1.0 : 0.0;
    ASSERT_EQ(ds.sequences[0].x(0, p), expect) << p;
    on += expect > 0 ? 1 : 0;
  }
  EXPECT_EQ(on, 229);
}

// ---- label subsampling ------------------------------------------------------

TEST(Subsample, Extremes) {
  Dataset full = labeled_digits(5);
  EXPECT_EQ(subsample_labels(full, full.size(), 1, false).labeled_sequences(), full.size());
  EXPECT_EQ(subsample_labels(full, 0, 1, false).labeled_sequences(), 0u);
}

TEST(Subsample, HundredBalancedIsTenPerClass) {
  Dataset full = labeled_digits(40);
  Dataset s = subsample_labels(full, 100, 3, true);
  std::vector<int> per(10, 0);
  for (const auto& seq : s.sequences)
    if (seq.is_labeled(0)) ++per[static_cast<std::size_t>(seq.labels[0])];
  for (int c : per) EXPECT_EQ(c, 10);
  Dataset again = subsample_labels(full, 100, 3, true);
  for (std::size_t i = 0; i < s.size(); ++i) EXPECT_EQ(s.sequences[i].labels, again.sequences[i].labels);
  for (std::size_t i = 0; i < s.size(); ++i) {
    EXPECT_EQ(s.truth[i], full.truth[i]);
    EXPECT_EQ(s.sequences[i].x(0, 0), full.sequences[i].x(0, 0));
  }
}

TEST(Subsample, Errors) {
  Dataset full = labeled_digits(3);
  EXPECT_THROW(subsample_labels(full, 31, 1, false), ContractViolation);
  EXPECT_THROW(subsample_labels(full, 40, 1, true), ContractViolation);
  EXPECT_THROW(subsample_labels(full, 15, 1, true), ContractViolation);
}

// ---- HMM task -----------------------------------------------------------------

TEST(Hmm, IdentityTransitionKeepsState) {
  HmmSpec spec = default_task(50);
  spec.transition = Tensor(spec.states, spec.states);
  for (std::size_t i = 0; i < spec.states; ++i) spec.transition(i, i) = 1.0;
  EXPECT_THROW(spec.validate(), ContractViolation);
  Dataset ds = gen_hmm(spec, Rng(1));
  for (const auto& s : ds.sequences)
    for (int y : s.labels) EXPECT_EQ(y, s.labels[0]);
}

TEST(Hmm, StationaryDistributionMatchesEigenvector) {
  HmmSpec spec = default_task(1);
  std::vector<double> ref = oracle::stationary_eigen(spec.transition);
  for (std::size_t c = 0; c < spec.states; ++c) EXPECT_NEAR(spec.initial(0, c), ref[c], 1e-10);
}

// Sequences are independent, so the per-sequence state frequencies give an
// honest standard error despite the sticky chain.
TEST(Hmm, EmpiricalFrequenciesMatchStationary) {
  HmmSpec spec = default_task(2000);
  std::vector<double> ref = oracle::stationary_eigen(spec.transition);
  Dataset ds = gen_hmm(spec, Rng(2));
  const std::size_t C = spec.states;
  std::vector<double> mean(C, 0.0), sq(C, 0.0);
  for (const auto& s : ds.sequences) {
    std::vector<double> f(C, 0.0);
    for (int y : s.labels) f[static_cast<std::size_t>(y)] += 1.0 / static_cast<double>(s.length());
    for (std::size_t c = 0; c < C; ++c) {
      mean[c] += f[c] / static_cast<double>(ds.size());
      sq[c] += f[c] * f[c] / static_cast<double>(ds.size());
    }
  }
  for (std::size_t c = 0; c < C; ++c) {
    const double se = std::sqrt((sq[c] - mean[c] * mean[c]) / static_cast<double>(ds.size()));
    EXPECT_NEAR(mean[c], ref[c], 3 * se) << c;
  }
}

TEST(Hmm, SpecValidation) {
  HmmSpec spec = default_task(1);
  spec.transition(0, 0) += 0.1;
  EXPECT_THROW(spec.validate(), ContractViolation);
  HmmSpec neg = default_task(1);
  neg.stds(0, 0) = 0.0;
  EXPECT_THROW(neg.validate(), ContractViolation);
  HmmSpec split = default_task(1);
  split.transition = Tensor(split.states, split.states);
  for (std::size_t i = 0; i < split.states; ++i) split.transition(i, i < 3 ? (i + 1) % 3 : 3 + (i + 1 - 3) % 3) = 1.0;
  EXPECT_FALSE(HmmSpec::is_irreducible(split.transition));
  EXPECT_TRUE(HmmSpec::is_irreducible(default_task(1).transition));
}

TEST(Hmm, Determinism) {
  HmmSpec spec = default_task(30);
  EXPECT_EQ(encode_dataset(gen_hmm(spec, Rng(5))), encode_dataset(gen_hmm(spec, Rng(5))));
  EXPECT_NE(encode_dataset(gen_hmm(spec, Rng(5))), encode_dataset(gen_hmm(spec, Rng(6))));
}

TEST(Hmm, ForwardBackwardBeatsChance) {
  HmmSpec spec = default_task(100);
  Dataset ds = gen_hmm(spec, Rng(3));
  std::size_t right = 0, total = 0;
  for (const auto& s : ds.sequences) {
    auto post = oracle::forward_backward(spec, s.x);
    for (std::size_t t = 0; t < s.length(); ++t) {
      double tot = 0.0;
      for (double p : post[t]) tot += p;
      ASSERT_NEAR(tot, 1.0, 1e-9);
      const auto best = std::max_element(post[t].begin(), post[t].end()) - post[t].begin();
      right += best == s.labels[t] ? 1 : 0;
      ++total;
    }
  }
  EXPECT_GT(static_cast<double>(right) / static_cast<double>(total), 1.0 / static_cast<double>(spec.states) + 0.1);
}

// ---- supervision ------------------------------------------------------------

TEST(Supervision, AllOrNoneAtHalf) {
  Dataset ds = gen_hmm(default_task(1000), Rng(4));
  Dataset m = apply_supervision(ds, {SupervisionMode::per_sequence_all_or_none, 0.5, 11});
  std::size_t labeled = 0;
  for (const auto& s : m.sequences) {
    const std::size_t n = s.num_labeled();
    EXPECT_TRUE(n == 0 || n == s.length());
    labeled += n > 0 ? 1 : 0;
  }
  EXPECT_GE(labeled, 430u);
  EXPECT_LE(labeled, 570u);
}

TEST(Supervision, PerStepRateAndBlock) {
  Dataset ds = gen_hmm(default_task(400), Rng(5));
  Dataset m = apply_supervision(ds, {SupervisionMode::per_step_rate, 0.125, 12});
  const double n = 400.0 * 50.0;
  const double got = static_cast<double>(m.labeled_steps());
  EXPECT_NEAR(got, 0.125 * n, 3 * std::sqrt(n * 0.125 * 0.875));

  Dataset b = apply_supervision(ds, {SupervisionMode::block, 0.2, 13});
  for (const auto& s : b.sequences) {
    EXPECT_EQ(s.num_labeled(), 10u);
    std::size_t first = s.length(), last = 0;
    for (std::size_t t = 0; t < s.length(); ++t)
      if (s.is_labeled(t)) {
        first = std::min(first, t);
        last = t;
      }
    EXPECT_EQ(last - first + 1, 10u);
  }
}

TEST(Supervision, MaskingKeepsObservationsAndTruth) {
  Dataset ds = gen_hmm(default_task(50), Rng(6));
  Dataset m = apply_supervision(ds, {SupervisionMode::per_step_rate, 0.3, 14});
  for (std::size_t i = 0; i < ds.size(); ++i) {
    EXPECT_EQ(m.truth[i], ds.truth[i]);
    EXPECT_TRUE(std::equal(m.sequences[i].x.data().begin(), m.sequences[i].x.data().end(),
                           ds.sequences[i].x.data().begin()));
    for (std::size_t t = 0; t < m.sequences[i].length(); ++t) {
      if (m.sequences[i].is_labeled(t)) {
        EXPECT_EQ(m.sequences[i].labels[t], ds.truth[i][t]);
      }
    }
  }
  EXPECT_EQ(encode_dataset(m), encode_dataset(apply_supervision(ds, {SupervisionMode::per_step_rate, 0.3, 14})));
  EXPECT_THROW(apply_supervision(ds, {SupervisionMode::block, 1.5, 1}), ContractViolation);
  EXPECT_THROW(parse_supervision_mode("sometimes"), ConfigError);
  EXPECT_EQ(parse_supervision_mode(to_string(SupervisionMode::block)), SupervisionMode::block);
}

// ---- container and batches ----------------------------------------------------

TEST(Container, RoundTripAndCorruption) {
  Dataset ds = apply_supervision(gen_hmm(default_task(20), Rng(7)), {SupervisionMode::per_step_rate, 0.5, 3});
  fs::path p = scratch_dir() / "ds.bin";
  save_dataset(ds, p);
  Dataset back = load_dataset(p);
  EXPECT_EQ(encode_dataset(back), encode_dataset(ds));
  std::vector<unsigned char> bytes = io::read_file(p);
  bytes[0] = 'X';
  EXPECT_THROW(decode_dataset(bytes, "corrupt"), FormatError);
  bytes = io::read_file(p);
  bytes.resize(bytes.size() - 3);
  EXPECT_THROW(decode_dataset(bytes, "short"), FormatError);
}

TEST(Batch, LayoutAndHiddenLabels) {
  Dataset ds = apply_supervision(gen_hmm(default_task(5), Rng(8)), {SupervisionMode::per_step_rate, 0.5, 3});
  std::vector<std::size_t> idx{3, 1};
  SequenceBatch b = make_batch(ds, idx);
  EXPECT_EQ(b.size, 2u);
  EXPECT_EQ(b.length, 50u);
  EXPECT_EQ(b.x[7](1, 2), ds.sequences[1].x(7, 2));
  EXPECT_EQ(b.labels[9][0], ds.sequences[3].labels[9]);
  SequenceBatch h = make_batch(ds, idx, true);
  EXPECT_EQ(h.num_labeled(0) + h.num_labeled(1), 0u);
}

#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "sheet/encoder.hpp"

using namespace sheet;

namespace {

Waveform noise(std::mt19937_64& rng, std::size_t n, int rate = 16000) {
  std::normal_distribution<double> d(0.0, 0.1);
  Waveform w;
  w.rate = rate;
  for (std::size_t i = 0; i < n; ++i) w.samples.push_back(d(rng));
  return w;
}

ToySpectralConfig small_config() {
  ToySpectralConfig c;
  c.spectral.sample_rate = 1600;
  c.spectral.n_fft = 64;
  c.spectral.hop = 16;
  c.spectral.n_mels = 6;
  c.channels = 4;
  return c;
}

}  // namespace

TEST(ToySpectral, DefaultShape) {
  ToySpectralEncoder enc(ToySpectralConfig{}, 1);
  std::mt19937_64 rng(50);
  const auto f = enc.encode(noise(rng, 16000));
  EXPECT_GE(f.frames(), 49);
  EXPECT_LE(f.frames(), 51);
  EXPECT_EQ(f.dim(), 64);
  EXPECT_DOUBLE_EQ(f.frame_rate, 50.0);
  EXPECT_EQ(enc.info().dim, 64);
}

TEST(ToySpectral, SilenceIsFinite) {
  ToySpectralEncoder enc(ToySpectralConfig{}, 1);
  Waveform w;
  w.samples.assign(16000, 0.0);
  EXPECT_TRUE(enc.encode(w).matrix.allFinite());
}

TEST(ToySpectral, DoublingDurationDoublesFrames) {
  ToySpectralEncoder enc(ToySpectralConfig{}, 1);
  std::mt19937_64 rng(51);
  std::uniform_int_distribution<std::size_t> len(2000, 40000);
  for (int i = 0; i < 20; ++i) {
    const auto n = len(rng);
    const auto t1 = enc.encode(noise(rng, n)).frames();
    const auto t2 = enc.encode(noise(rng, 2 * n)).frames();
    EXPECT_LE(std::abs(t2 - 2 * t1), 1) << n;
  }
}

TEST(ToySpectral, Deterministic) {
  ToySpectralEncoder a(ToySpectralConfig{}, 9), b(ToySpectralConfig{}, 9);
  std::mt19937_64 rng(52);
  const auto w = noise(rng, 9000);
  EXPECT_EQ(a.encode(w).matrix, b.encode(w).matrix);
  EXPECT_EQ(a.encode(w).matrix, a.encode(w).matrix);
}

TEST(ToySpectral, TooShortAndWrongRate) {
  ToySpectralEncoder enc(ToySpectralConfig{}, 1);
  std::mt19937_64 rng(53);
  EXPECT_THROW(enc.encode(noise(rng, 500)), std::invalid_argument);
  EXPECT_THROW(enc.encode(noise(rng, 9000, 8000)), std::invalid_argument);
}

TEST(ToySpectral, BatchOfOneEqualsEncode) {
  ToySpectralEncoder enc(ToySpectralConfig{}, 2);
  std::mt19937_64 rng(54);
  const std::vector<Waveform> v = {noise(rng, 12345)};
  const auto batch = enc.encode_batch(repetitive_pad(v));
  ASSERT_EQ(batch.size(), 1u);
  EXPECT_EQ(batch[0].matrix, enc.encode(v[0]).matrix);
}

TEST(ToySpectral, EmptyBatch) {
  ToySpectralEncoder enc(ToySpectralConfig{}, 2);
  EXPECT_THROW(enc.encode_batch(WaveBatch{}), std::invalid_argument);
}

TEST(ToySpectral, BatchMatchesSoloOnOverlap) {
  ToySpectralEncoder enc(ToySpectralConfig{}, 3);
  std::mt19937_64 rng(55);
  const std::vector<Waveform> v = {noise(rng, 16000), noise(rng, 32000)};
  const auto batch = enc.encode_batch(repetitive_pad(v));
  const auto solo = enc.encode(v[0]);
  ASSERT_EQ(batch[0].frames(), solo.frames());
  // frames whose analysis window and conv receptive field stay inside the short signal
  const int hop = 320, half = 512, reach = 2;
  int compared = 0;
  for (Eigen::Index t = reach; t < solo.frames(); ++t) {
    if ((t + reach) * hop + half > 16000 || (t - reach) * hop - half < 0) continue;
    for (Eigen::Index d = 0; d < solo.dim(); ++d) ASSERT_NEAR(batch[0].matrix(t, d), solo.matrix(t, d), 1e-5);
    ++compared;
  }
  EXPECT_GT(compared, 40);
  const auto long_solo = enc.encode(v[1]);
  EXPECT_EQ(batch[1].matrix, long_solo.matrix);
}

TEST(ToySpectral, GradientMatchesFiniteDifferences) {
  ToySpectralEncoder enc(small_config(), 4);
  std::mt19937_64 rng(56);
  const auto w = noise(rng, 400, 1600);
  const RowMatrix x = enc.spectral_input(w.samples);
  RowMatrix probe = RowMatrix::Random(x.rows(), 4);
  auto objective = [&] { return (enc.forward(x).array() * probe.array()).sum(); };

  ConvCache cache;
  enc.forward(x, &cache);
  ParamStore grads = enc.params.zeros_like();
  enc.backward(cache, probe, grads);

  const double h = 1e-6;
  int checked = 0;
  for (auto& [name, t] : enc.params) {
    if (!t.trainable) continue;
    for (std::size_t i = 0; i < t.data.size(); i += 3) {
      const double keep = t.data[i];
      t.data[i] = keep + h;
      const double up = objective();
      t.data[i] = keep - h;
      const double down = objective();
      t.data[i] = keep;
      const double fd = (up - down) / (2 * h), g = grads.at(name).data[i];
      EXPECT_LE(std::abs(fd - g), 1e-3 * std::max(std::abs(fd), 1e-2)) << name << "[" << i << "]";
      ++checked;
    }
  }
  EXPECT_GT(checked, 30);
}

TEST(ToySpectral, TrimmedBackwardMatchesFiniteDifferences) {
  ToySpectralEncoder enc(small_config(), 5);
  std::mt19937_64 rng(57);
  const std::vector<Waveform> v = {noise(rng, 300, 1600), noise(rng, 500, 1600)};
  const auto batch = repetitive_pad(v);
  std::vector<ConvCache> caches;
  const auto feats = enc.encode_batch(batch, &caches);
  const RowMatrix probe = RowMatrix::Random(feats[0].frames(), 4);
  auto objective = [&] { return (enc.encode_batch(batch)[0].matrix.array() * probe.array()).sum(); };
  ParamStore grads = enc.params.zeros_like();
  enc.backward_trimmed(caches[0], probe, grads);

  auto& t = enc.params.at(ToySpectralEncoder::weight_name(0));
  const double h = 1e-6;
  for (std::size_t i = 0; i < t.data.size(); i += 5) {
    const double keep = t.data[i];
    t.data[i] = keep + h;
    const double up = objective();
    t.data[i] = keep - h;
    const double down = objective();
    t.data[i] = keep;
    const double fd = (up - down) / (2 * h);
    EXPECT_LE(std::abs(fd - grads.at(ToySpectralEncoder::weight_name(0)).data[i]), 1e-3 * std::max(std::abs(fd), 1e-2));
  }
}

TEST(ToySpectral, NormalizationFit) {
  ToySpectralEncoder enc(ToySpectralConfig{}, 6);
  std::mt19937_64 rng(58);
  std::vector<Waveform> waves = {noise(rng, 16000), noise(rng, 20000)};
  enc.fit_normalization(waves);
  RowMatrix all(0, 80);
  for (const auto& w : waves) {
    const RowMatrix m = enc.spectral_input(w.samples);
    all.conservativeResize(all.rows() + m.rows(), Eigen::NoChange);
    all.bottomRows(m.rows()) = m;
  }
  const Vector mean = all.colwise().mean().transpose();
  EXPECT_LT(mean.cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_FALSE(enc.params.at("encoder.feat_mean").trainable);
}

TEST(ToySpectral, LayerSelectRestricted) {
  ToySpectralConfig c;
  c.layer_select = "1";
  EXPECT_THROW(ToySpectralEncoder(c, 1), ConfigError);
  c.layer_select = "2";
  EXPECT_NO_THROW(ToySpectralEncoder(c, 1));
}

TEST(FeatureFile, ByteLayout) {
  oracle::TempDir dir("feat");
  RowMatrix m(2, 3);
  m << 1, 2, 3, 4, 5, 6.5;
  write_feature_matrix(dir / "a.feat", m);
  const auto bytes = oracle::slurp(dir / "a.feat");
  ASSERT_EQ(bytes.size(), 16u + 6 * 4);
  EXPECT_EQ(bytes.substr(0, 8), "SSQAFEAT");
  std::uint32_t T, D;
  std::memcpy(&T, bytes.data() + 8, 4);
  std::memcpy(&D, bytes.data() + 12, 4);
  EXPECT_EQ(T, 2u);
  EXPECT_EQ(D, 3u);
  float last;
  std::memcpy(&last, bytes.data() + 16 + 5 * 4, 4);
  EXPECT_EQ(last, 6.5f);
  EXPECT_EQ(read_feature_matrix(dir / "a.feat"), m);
}

TEST(FeatureFile, Truncated) {
  oracle::TempDir dir("feat");
  write_feature_matrix(dir / "a.feat", RowMatrix::Ones(4, 4));
  auto bytes = oracle::slurp(dir / "a.feat");
  std::ofstream(dir / "b.feat", std::ios::binary) << bytes.substr(0, bytes.size() - 3);
  EXPECT_THROW(read_feature_matrix(dir / "b.feat"), FormatError);
}

TEST(Precomputed, LooksUpBySampleIdAndLayer) {
  oracle::TempDir dir("pre");
  write_feature_matrix(dir / "utt1.feat", RowMatrix::Constant(5, 8, 0.25));
  write_feature_matrix(dir / "utt1.layer3.feat", RowMatrix::Constant(5, 8, 0.5));
  PrecomputedConfig c;
  c.feature_dir = dir.path.string();
  c.dim = 8;
  EXPECT_EQ(PrecomputedEncoder(c).encode("utt1").matrix(0, 0), 0.25);
  c.layer_select = "3";
  EXPECT_EQ(PrecomputedEncoder(c).encode("utt1").matrix(0, 0), 0.5);
  c.dim = 7;
  EXPECT_THROW(PrecomputedEncoder(c).encode("utt1"), FormatError);
  EXPECT_THROW(PrecomputedEncoder(c).encode("missing"), IoError);
}

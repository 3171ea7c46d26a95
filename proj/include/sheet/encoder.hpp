#pragma once

// Frame-level feature extractors.
//
//  * ToySpectralEncoder: fixed log-mel front end followed by a trainable
//    stack of 1-D convolutions over time (tanh activations, "same" zero
//    padding). A CPU-sized stand-in for a self-supervised speech model.
//  * PrecomputedEncoder: reads per-utterance feature matrices exported by an
//    external model, keyed by sample_id.
//
// Feature matrix file (little-endian):
//   bytes 0..7   magic "SSQAFEAT"
//   bytes 8..11  uint32 T (frames)
//   bytes 12..15 uint32 D (dimension)
//   then T*D float32 values, row-major (frame by frame)

#include <fftw3.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "sheet/audio.hpp"
#include "sheet/binary_io.hpp"
#include "sheet/common.hpp"
#include "sheet/tensor.hpp"

namespace sheet {

struct FrameFeatures {
  RowMatrix matrix;  // T x D
  double frame_rate = 50.0;

  Eigen::Index frames() const { return matrix.rows(); }
  Eigen::Index dim() const { return matrix.cols(); }
};

/// What a backend advertises to the rest of the pipeline.
struct EncoderInfo {
  std::string name;
  double frame_rate = 50.0;
  int dim = 0;
  bool trainable = false;
  std::string layer_select = "last";
};

inline constexpr char kFeatureMagic[8] = {'S', 'S', 'Q', 'A', 'F', 'E', 'A', 'T'};

inline void write_feature_matrix(const std::string& path, const RowMatrix& m) {
  bin::Writer w;
  w.bytes(std::string_view(kFeatureMagic, 8));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(m.rows()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(m.cols()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) w.put<float>(static_cast<float>(m(r, c)));
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out << w.buffer();
  if (!out) throw IoError("write failed for " + path);
}

inline RowMatrix read_feature_matrix(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open feature file " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string data = ss.str();
  bin::Reader r(data, path);
  if (r.bytes(8) != std::string_view(kFeatureMagic, 8)) throw FormatError(path + ": bad feature magic");
  const auto T = r.get<std::uint32_t>();
  const auto D = r.get<std::uint32_t>();
  if (r.remaining() != static_cast<std::size_t>(T) * D * sizeof(float))
    throw FormatError(path + ": payload size does not match header " + std::to_string(T) + "x" +
                      std::to_string(D));
  RowMatrix m(T, D);
  for (std::uint32_t i = 0; i < T; ++i)
    for (std::uint32_t j = 0; j < D; ++j) m(i, j) = r.get<float>();
  return m;
}

inline void check_finite(const RowMatrix& m, const std::string& what) {
  if (!m.allFinite()) throw DivergenceError(what + ": non-finite values");
}

// ---------------------------------------------------------------------------
// Log-mel front end

struct SpectralConfig {
  int sample_rate = 16000;
  int n_fft = 1024;
  int hop = 320;
  int n_mels = 80;
  double f_min = 0.0;
  double f_max = 0.0;  // 0 means Nyquist
};

namespace detail {

struct FftwPlanDeleter {
  void operator()(fftw_plan_s* p) const { fftw_destroy_plan(p); }
};
struct FftwFree {
  void operator()(void* p) const { fftw_free(p); }
};

inline std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

}  // namespace detail

class LogMelFrontend {
 public:
  explicit LogMelFrontend(const SpectralConfig& cfg) : cfg_(cfg) {
    if (cfg.n_fft < 2 || cfg.hop < 1 || cfg.n_mels < 1 || cfg.sample_rate <= 0)
      throw ConfigError("spectral front end: n_fft, hop, n_mels and sample_rate must be positive");
    const int n = cfg.n_fft;
    {
      std::lock_guard lock(detail::fftw_planner_mutex());
      std::unique_ptr<double, detail::FftwFree> in(fftw_alloc_real(n));
      std::unique_ptr<fftw_complex, detail::FftwFree> out(fftw_alloc_complex(n / 2 + 1));
      plan_.reset(fftw_plan_dft_r2c_1d(n, in.get(), out.get(), FFTW_ESTIMATE), detail::FftwPlanDeleter{});
    }
    window_.resize(n);
    for (int i = 0; i < n; ++i) window_[i] = 0.5 - 0.5 * std::cos(2.0 * M_PI * i / n);
    build_filterbank();
  }

  const SpectralConfig& config() const { return cfg_; }
  double frame_rate() const { return static_cast<double>(cfg_.sample_rate) / cfg_.hop; }

  /// Frames produced for a signal of n samples (centred framing).
  std::size_t num_frames(std::size_t n) const { return 1 + n / static_cast<std::size_t>(cfg_.hop); }

  /// Natural-log mel energies, T x n_mels. Frames are centred on multiples of
  /// hop with reflect padding of n_fft/2 at both ends.
  RowMatrix operator()(std::span<const double> x) const {
    const int n_fft = cfg_.n_fft;
    const std::size_t N = x.size();
    if (N < static_cast<std::size_t>(n_fft))
      throw std::invalid_argument("waveform of " + std::to_string(N) +
                                  " samples is shorter than one analysis frame (" + std::to_string(n_fft) + ")");
    const long half = n_fft / 2;
    auto at = [&](long i) {  // reflect padding
      if (i < 0) i = -i;
      const long last = static_cast<long>(N) - 1;
      if (i > last) i = 2 * last - i;
      return x[static_cast<std::size_t>(i)];
    };
    const std::size_t T = num_frames(N);
    const int bins = n_fft / 2 + 1;
    std::unique_ptr<double, detail::FftwFree> in(fftw_alloc_real(n_fft));
    std::unique_ptr<fftw_complex, detail::FftwFree> out(fftw_alloc_complex(bins));
    std::vector<double> power(bins);
    RowMatrix mel(static_cast<Eigen::Index>(T), cfg_.n_mels);
    for (std::size_t t = 0; t < T; ++t) {
      const long start = static_cast<long>(t) * cfg_.hop - half;
      for (int i = 0; i < n_fft; ++i) in.get()[i] = at(start + i) * window_[i];
      fftw_execute_dft_r2c(plan_.get(), in.get(), out.get());
      for (int k = 0; k < bins; ++k) {
        const double re = out.get()[k][0], im = out.get()[k][1];
        power[k] = re * re + im * im;
      }
      for (int m = 0; m < cfg_.n_mels; ++m) {
        const auto& f = filters_[m];
        double e = 0.0;
        for (std::size_t j = 0; j < f.weights.size(); ++j) e += f.weights[j] * power[f.first_bin + j];
        mel(static_cast<Eigen::Index>(t), m) = std::log(e + 1e-10);
      }
    }
    return mel;
  }

 private:
  struct Filter {
    std::size_t first_bin = 0;
    std::vector<double> weights;
  };

  void build_filterbank() {
    const double nyquist = cfg_.sample_rate / 2.0;
    const double f_max = cfg_.f_max > 0 ? std::min(cfg_.f_max, nyquist) : nyquist;
    const double m_lo = detail::hz_to_mel(cfg_.f_min), m_hi = detail::hz_to_mel(f_max);
    const int bins = cfg_.n_fft / 2 + 1;
    std::vector<double> edges(cfg_.n_mels + 2);
    for (int i = 0; i < cfg_.n_mels + 2; ++i)
      edges[i] = detail::mel_to_hz(m_lo + (m_hi - m_lo) * i / (cfg_.n_mels + 1));
    filters_.resize(cfg_.n_mels);
    for (int m = 0; m < cfg_.n_mels; ++m) {
      const double lo = edges[m], mid = edges[m + 1], hi = edges[m + 2];
      Filter f;
      bool started = false;
      for (int k = 0; k < bins; ++k) {
        const double hz = static_cast<double>(k) * cfg_.sample_rate / cfg_.n_fft;
        double w = 0.0;
        if (hz > lo && hz < hi) w = hz <= mid ? (hz - lo) / (mid - lo) : (hi - hz) / (hi - mid);
        if (w > 0 && !started) {
          f.first_bin = static_cast<std::size_t>(k);
          started = true;
        }
        if (started) {
          if (w <= 0) break;
          f.weights.push_back(w);
        }
      }
      if (!started) {  // band narrower than one FFT bin: take the nearest bin
        f.first_bin = static_cast<std::size_t>(std::lround(mid * cfg_.n_fft / cfg_.sample_rate));
        f.weights = {1.0};
      }
      filters_[m] = std::move(f);
    }
  }

  SpectralConfig cfg_;
  std::shared_ptr<fftw_plan_s> plan_;
  std::vector<double> window_;
  std::vector<Filter> filters_;
};

// ---------------------------------------------------------------------------
// Trainable convolutional stack

struct ToySpectralConfig {
  SpectralConfig spectral;
  int conv_layers = 2;
  int channels = 64;
  int kernel_size = 3;
  bool trainable = true;
  std::string layer_select = "last";
};

/// Per-utterance activations kept for the backward pass.
struct ConvCache {
  std::vector<RowMatrix> unfolded;  // im2col input of each layer, T x (K*C_in)
  std::vector<RowMatrix> outputs;   // tanh output of each layer, T x C_out
};

class ToySpectralEncoder {
 public:
  ToySpectralEncoder(const ToySpectralConfig& cfg, std::uint64_t seed) : cfg_(cfg), frontend_(cfg.spectral) {
    if (cfg.conv_layers < 1 || cfg.channels < 1 || cfg.kernel_size < 1 || cfg.kernel_size % 2 == 0)
      throw ConfigError("toy-spectral: conv_layers, channels >= 1 and odd kernel_size required");
    if (cfg.layer_select != "last" && cfg.layer_select != std::to_string(cfg.conv_layers))
      throw ConfigError("toy-spectral exposes only its final layer; layer_select must be 'last' or '" +
                        std::to_string(cfg.conv_layers) + "'");
    std::mt19937_64 rng(seed);
    int c_in = cfg.spectral.n_mels;
    for (int l = 0; l < cfg.conv_layers; ++l) {
      const auto fan_in = static_cast<std::size_t>(cfg.kernel_size * c_in);
      params.add(weight_name(l), randn({fan_in, static_cast<std::size_t>(cfg.channels)},
                                       1.0 / std::sqrt(static_cast<double>(fan_in)), rng));
      params.add(bias_name(l), Tensor::zeros({static_cast<std::size_t>(cfg.channels)}));
      c_in = cfg.channels;
    }
    // Global mean/variance normalisation of the log-mel input, fitted on the
    // training set before optimisation starts (identity until then).
    params.add("encoder.feat_mean", Tensor::zeros({static_cast<std::size_t>(cfg.spectral.n_mels)}, false));
    Tensor std_t = Tensor::zeros({static_cast<std::size_t>(cfg.spectral.n_mels)}, false);
    std::fill(std_t.data.begin(), std_t.data.end(), 1.0);
    params.add("encoder.feat_std", std::move(std_t));
    if (!cfg.trainable)
      for (auto& [n, t] : params) t.trainable = false;
  }

  const ToySpectralConfig& config() const { return cfg_; }
  EncoderInfo info() const {
    return {"toy-spectral", frontend_.frame_rate(), cfg_.channels, cfg_.trainable, cfg_.layer_select};
  }
  int sample_rate() const { return cfg_.spectral.sample_rate; }
  std::size_t num_frames(std::size_t n_samples) const { return frontend_.num_frames(n_samples); }

  /// Normalised log-mel input of the conv stack.
  RowMatrix spectral_input(std::span<const double> samples) const {
    RowMatrix m = frontend_(samples);
    const auto mean = params.at("encoder.feat_mean").vec();
    const auto sd = params.at("encoder.feat_std").vec();
    m.rowwise() -= mean.transpose();
    m.array().rowwise() /= sd.transpose().array();
    return m;
  }

  /// Fits the input normalisation statistics over a set of waveforms.
  void fit_normalization(std::span<const Waveform> waves) {
    const int F = cfg_.spectral.n_mels;
    Vector sum = Vector::Zero(F), sq = Vector::Zero(F);
    double count = 0;
    for (const auto& w : waves) {
      const RowMatrix m = frontend_(w.samples);
      sum += m.colwise().sum().transpose();
      sq += m.array().square().colwise().sum().matrix().transpose();
      count += static_cast<double>(m.rows());
    }
    if (count == 0) return;
    Vector mean = sum / count;
    Vector var = (sq / count - mean.array().square().matrix()).cwiseMax(0.0);
    params.at("encoder.feat_mean").vec() = mean;
    params.at("encoder.feat_std").vec() = (var.array() + 1e-8).sqrt().matrix();
  }

  /// Conv stack over a spectral input; fills cache when given.
  RowMatrix forward(const RowMatrix& input, ConvCache* cache = nullptr) const {
    RowMatrix h = input;
    if (cache) {
      cache->unfolded.clear();
      cache->outputs.clear();
    }
    for (int l = 0; l < cfg_.conv_layers; ++l) {
      RowMatrix u = unfold(h);
      RowMatrix z = u * params.at(weight_name(l)).mat();
      z.rowwise() += params.at(bias_name(l)).vec().transpose();
      h = z.array().tanh().matrix();
      if (cache) {
        cache->unfolded.push_back(std::move(u));
        cache->outputs.push_back(h);
      }
    }
    return h;
  }

  /// Accumulates parameter gradients given dLoss/dOutput (T x channels).
  void backward(const ConvCache& cache, const RowMatrix& d_out, ParamStore& grads) const {
    RowMatrix dh = d_out;
    for (int l = cfg_.conv_layers - 1; l >= 0; --l) {
      const RowMatrix& h = cache.outputs[static_cast<std::size_t>(l)];
      const RowMatrix dz = (dh.array() * (1.0 - h.array().square())).matrix();
      grads.at(weight_name(l)).mat().noalias() += cache.unfolded[static_cast<std::size_t>(l)].transpose() * dz;
      grads.at(bias_name(l)).vec() += dz.colwise().sum().transpose();
      if (l > 0) dh = fold(dz * params.at(weight_name(l)).mat().transpose(), h.rows());
    }
  }

  FrameFeatures encode(const Waveform& wave) const {
    check_rate(wave.rate);
    FrameFeatures f{forward(spectral_input(wave.samples)), frontend_.frame_rate()};
    check_finite(f.matrix, "toy-spectral features");
    return f;
  }

  /// Encodes each padded row as a whole, then keeps the frames belonging to
  /// the true length. Caches (when requested) cover the full padded row.
  std::vector<FrameFeatures> encode_batch(const WaveBatch& batch, std::vector<ConvCache>* caches = nullptr) const {
    if (batch.size() == 0) throw std::invalid_argument("encode_batch: empty batch");
    check_rate(batch.rate);
    std::vector<FrameFeatures> out;
    if (caches) caches->assign(batch.size(), {});
    const auto L = static_cast<std::size_t>(batch.padded_samples.cols());
    for (std::size_t b = 0; b < batch.size(); ++b) {
      std::span<const double> row(batch.padded_samples.row(static_cast<Eigen::Index>(b)).data(), L);
      RowMatrix full = forward(spectral_input(row), caches ? &(*caches)[b] : nullptr);
      const auto T = static_cast<Eigen::Index>(num_frames(batch.true_lengths[b]));
      out.push_back({full.topRows(T), frontend_.frame_rate()});
      check_finite(out.back().matrix, "toy-spectral features");
    }
    return out;
  }

  /// Backward for one encode_batch item; d_trimmed covers the kept frames only.
  void backward_trimmed(const ConvCache& cache, const RowMatrix& d_trimmed, ParamStore& grads) const {
    const Eigen::Index T_full = cache.outputs.back().rows();
    RowMatrix d = RowMatrix::Zero(T_full, d_trimmed.cols());
    d.topRows(d_trimmed.rows()) = d_trimmed;
    backward(cache, d, grads);
  }

  ParamStore params;

  static std::string weight_name(int l) { return "encoder.conv" + std::to_string(l) + ".weight"; }
  static std::string bias_name(int l) { return "encoder.conv" + std::to_string(l) + ".bias"; }

 private:
  void check_rate(int rate) const {
    if (rate != cfg_.spectral.sample_rate)
      throw std::invalid_argument("encoder expects " + std::to_string(cfg_.spectral.sample_rate) +
                                  " Hz input, got " + std::to_string(rate) + " Hz");
  }

  // Row t of the result is [h[t-K/2], ..., h[t+K/2]] with zero rows outside.
  RowMatrix unfold(const RowMatrix& h) const {
    const Eigen::Index T = h.rows(), C = h.cols();
    const int K = cfg_.kernel_size, half = K / 2;
    RowMatrix u = RowMatrix::Zero(T, K * C);
    for (Eigen::Index t = 0; t < T; ++t)
      for (int k = 0; k < K; ++k) {
        const Eigen::Index src = t + k - half;
        if (src >= 0 && src < T) u.block(t, k * C, 1, C) = h.row(src);
      }
    return u;
  }

  RowMatrix fold(const RowMatrix& du, Eigen::Index T) const {
    const int K = cfg_.kernel_size, half = K / 2;
    const Eigen::Index C = du.cols() / K;
    RowMatrix dh = RowMatrix::Zero(T, C);
    for (Eigen::Index t = 0; t < T; ++t)
      for (int k = 0; k < K; ++k) {
        const Eigen::Index src = t + k - half;
        if (src >= 0 && src < T) dh.row(src) += du.block(t, k * C, 1, C);
      }
    return dh;
  }

  ToySpectralConfig cfg_;
  LogMelFrontend frontend_;
};

// ---------------------------------------------------------------------------

struct PrecomputedConfig {
  std::string feature_dir;
  int dim = 0;
  double frame_rate = 50.0;
  std::string layer_select = "last";
};

/// Looks up <feature_dir>/<sample_id>.feat, or <sample_id>.layer<k>.feat when
/// a specific layer is selected.
class PrecomputedEncoder {
 public:
  explicit PrecomputedEncoder(PrecomputedConfig cfg) : cfg_(std::move(cfg)) {
    if (cfg_.dim <= 0) throw ConfigError("precomputed encoder: dim must be > 0");
    if (cfg_.frame_rate <= 0) throw ConfigError("precomputed encoder: frame_rate must be > 0");
  }
  const PrecomputedConfig& config() const { return cfg_; }
  EncoderInfo info() const { return {"precomputed", cfg_.frame_rate, cfg_.dim, false, cfg_.layer_select}; }

  std::string path_for(const std::string& sample_id) const {
    const std::string file = cfg_.layer_select == "last"
                                 ? sample_id + ".feat"
                                 : sample_id + ".layer" + cfg_.layer_select + ".feat";
    return (std::filesystem::path(cfg_.feature_dir) / file).string();
  }

  FrameFeatures encode(const std::string& sample_id) const {
    const std::string p = path_for(sample_id);
    FrameFeatures f{read_feature_matrix(p), cfg_.frame_rate};
    if (f.frames() < 1) throw FormatError(p + ": zero frames");
    if (f.dim() != cfg_.dim)
      throw FormatError(p + ": dimension " + std::to_string(f.dim()) + " != configured " + std::to_string(cfg_.dim));
    if (!f.matrix.allFinite()) throw FormatError(p + ": non-finite features");
    return f;
  }

 private:
  PrecomputedConfig cfg_;
};

using Encoder = std::variant<ToySpectralEncoder, PrecomputedEncoder>;

}  // namespace sheet

#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "sheet/common.hpp"

namespace sheet {

struct Waveform {
  std::vector<double> samples;
  int rate = 16000;

  double duration() const { return static_cast<double>(samples.size()) / rate; }
};

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Batched waveforms. Row b holds waveform b tiled cyclically out to cols().
struct WaveBatch {
  RowMatrix padded_samples;
  std::vector<std::size_t> true_lengths;
  int rate = 16000;

  std::size_t size() const { return true_lengths.size(); }
  Waveform unpadded(std::size_t b) const {
    Waveform w;
    w.rate = rate;
    w.samples.assign(padded_samples.row(b).data(), padded_samples.row(b).data() + true_lengths[b]);
    return w;
  }
};

struct ResamplerConfig {
  int half_width = 16;        // zero crossings on each side of the kernel centre
  double rolloff = 0.945;     // cutoff as a fraction of the lower Nyquist rate
  double kaiser_beta = 8.6;
};

namespace detail {

template <typename T>
T read_le(const unsigned char* p) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  return v;
}

inline double sinc(double x) {
  if (std::abs(x) < 1e-12) return 1.0;
  const double px = M_PI * x;
  return std::sin(px) / px;
}

}  // namespace detail

/// Reads RIFF/WAVE with 16-bit integer PCM or 32-bit IEEE float samples.
/// Multi-channel input is down-mixed by channel average.
inline Waveform read_wav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open audio file " + path);
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (buf.size() < 12 || std::memcmp(buf.data(), "RIFF", 4) != 0 ||
      std::memcmp(buf.data() + 8, "WAVE", 4) != 0)
    throw IoError(path + ": not a RIFF/WAVE file");

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const unsigned char* data = nullptr;
  std::size_t data_size = 0;
  std::size_t pos = 12;
  while (pos + 8 <= buf.size()) {
    const unsigned char* chunk = buf.data() + pos;
    const auto size = detail::read_le<std::uint32_t>(chunk + 4);
    const std::size_t body = pos + 8;
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (size < 16 || body + size > buf.size()) throw IoError(path + ": truncated fmt chunk");
      format = detail::read_le<std::uint16_t>(buf.data() + body);
      channels = detail::read_le<std::uint16_t>(buf.data() + body + 2);
      rate = detail::read_le<std::uint32_t>(buf.data() + body + 4);
      bits = detail::read_le<std::uint16_t>(buf.data() + body + 14);
      if (format == 0xFFFE && size >= 26)  // WAVE_FORMAT_EXTENSIBLE: sub-format GUID
        format = detail::read_le<std::uint16_t>(buf.data() + body + 24);
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      data = buf.data() + body;
      data_size = std::min<std::size_t>(size, buf.size() - body);
    }
    pos = body + size + (size & 1u);
  }
  if (!channels || !rate) throw IoError(path + ": missing fmt chunk");
  if (!data) throw IoError(path + ": missing data chunk");

  const bool pcm16 = format == 1 && bits == 16;
  const bool f32 = format == 3 && bits == 32;
  if (!pcm16 && !f32)
    throw FormatError(path + ": unsupported encoding (format " + std::to_string(format) + ", " +
                      std::to_string(bits) + " bit); expected 16-bit PCM or 32-bit float");

  const std::size_t bytes_per = bits / 8;
  const std::size_t frames = data_size / (bytes_per * channels);
  Waveform w;
  w.rate = static_cast<int>(rate);
  w.samples.resize(frames);
  for (std::size_t i = 0; i < frames; ++i) {
    double acc = 0.0;
    for (std::size_t c = 0; c < channels; ++c) {
      const unsigned char* p = data + (i * channels + c) * bytes_per;
      acc += pcm16 ? detail::read_le<std::int16_t>(p) / 32768.0
                   : static_cast<double>(detail::read_le<float>(p));
    }
    w.samples[i] = acc / channels;
  }
  for (double s : w.samples)
    if (!std::isfinite(s)) throw FormatError(path + ": non-finite sample");
  return w;
}

/// Writes mono 16-bit PCM. Samples are clamped to [-1, 1].
inline void write_wav(const std::string& path, const Waveform& w) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  auto put32 = [&](std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); };
  auto put16 = [&](std::uint16_t v) { out.write(reinterpret_cast<const char*>(&v), 2); };
  const std::uint32_t data_bytes = static_cast<std::uint32_t>(w.samples.size() * 2);
  out.write("RIFF", 4);
  put32(36 + data_bytes);
  out.write("WAVEfmt ", 8);
  put32(16);
  put16(1);
  put16(1);
  put32(static_cast<std::uint32_t>(w.rate));
  put32(static_cast<std::uint32_t>(w.rate) * 2);
  put16(2);
  put16(16);
  out.write("data", 4);
  put32(data_bytes);
  for (double s : w.samples) {
    const double c = std::clamp(s, -1.0, 1.0);
    put16(static_cast<std::uint16_t>(static_cast<std::int16_t>(std::lround(c * 32767.0))));
  }
  if (!out) throw IoError("write failed for " + path);
}

/// Band-limited rational-ratio resampling with a Kaiser-windowed sinc kernel.
/// One kernel is tabulated per output phase (polyphase form). Output length is
/// ceil(n * target / source).
inline Waveform resample(const Waveform& in, int target_rate, const ResamplerConfig& cfg = {}) {
  if (target_rate <= 0 || in.rate <= 0) throw std::invalid_argument("resample: rates must be positive");
  if (in.rate == target_rate) return in;

  const long g = std::gcd(in.rate, target_rate);
  const long up = target_rate / g;
  const long down = in.rate / g;
  const double cutoff = std::min(1.0, static_cast<double>(up) / down) * cfg.rolloff;
  const long W = static_cast<long>(std::ceil(cfg.half_width / cutoff));
  const double i0_beta = std::cyl_bessel_i(0.0, cfg.kaiser_beta);

  // table[p][j] weights input sample (base + j - W + 1) for output phase p.
  const long taps = 2 * W;
  std::vector<double> table(static_cast<std::size_t>(up * taps));
  for (long p = 0; p < up; ++p) {
    const double frac = static_cast<double>(p) / up;
    for (long j = 0; j < taps; ++j) {
      const double x = frac - static_cast<double>(j - W + 1);  // distance from output point
      const double r = x / (W + 1);
      const double win = std::abs(r) < 1.0
                             ? std::cyl_bessel_i(0.0, cfg.kaiser_beta * std::sqrt(1.0 - r * r)) / i0_beta
                             : 0.0;
      table[static_cast<std::size_t>(p * taps + j)] = cutoff * detail::sinc(cutoff * x) * win;
    }
  }

  const long n_in = static_cast<long>(in.samples.size());
  const long n_out = (n_in * up + down - 1) / down;
  Waveform out;
  out.rate = target_rate;
  out.samples.resize(static_cast<std::size_t>(n_out));
  for (long n = 0; n < n_out; ++n) {
    const long pos = n * down;
    const long base = pos / up;
    const long phase = pos % up;
    const double* h = &table[static_cast<std::size_t>(phase * taps)];
    double acc = 0.0;
    for (long j = 0; j < taps; ++j) {
      const long k = base + j - W + 1;
      if (k >= 0 && k < n_in) acc += h[j] * in.samples[static_cast<std::size_t>(k)];
    }
    out.samples[static_cast<std::size_t>(n)] = acc;
  }
  return out;
}

inline Waveform load_and_resample(const std::string& path, int target_rate,
                                  const ResamplerConfig& cfg = {}) {
  return resample(read_wav(path), target_rate, cfg);
}

/// Keeps at most max_seconds of audio from the start; max_seconds <= 0 disables.
inline Waveform crop(Waveform w, double max_seconds) {
  if (max_seconds > 0) {
    const auto max_n = static_cast<std::size_t>(max_seconds * w.rate);
    if (w.samples.size() > max_n) w.samples.resize(max_n);
  }
  return w;
}

/// Pads every waveform to the longest by cyclic repetition: out[i] = in[i mod n].
inline WaveBatch repetitive_pad(std::span<const Waveform> waves) {
  if (waves.empty()) throw std::invalid_argument("repetitive_pad: empty batch");
  const int rate = waves.front().rate;
  std::size_t L = 0;
  for (const auto& w : waves) {
    if (w.rate != rate) throw std::invalid_argument("repetitive_pad: mixed sample rates in batch");
    if (w.samples.empty()) throw std::invalid_argument("repetitive_pad: empty waveform in batch");
    L = std::max(L, w.samples.size());
  }
  WaveBatch batch;
  batch.rate = rate;
  batch.padded_samples.resize(static_cast<Eigen::Index>(waves.size()), static_cast<Eigen::Index>(L));
  for (std::size_t b = 0; b < waves.size(); ++b) {
    const auto& s = waves[b].samples;
    batch.true_lengths.push_back(s.size());
    double* row = batch.padded_samples.row(static_cast<Eigen::Index>(b)).data();
    for (std::size_t i = 0; i < L; i += s.size())
      std::copy_n(s.begin(), std::min(s.size(), L - i), row + i);
  }
  return batch;
}

}  // namespace sheet

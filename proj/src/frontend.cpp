// SPDX-License-Identifier: Apache-2.0
#include "tds/frontend.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numbers>
#include <stdexcept>
#include <string>

namespace tds {

namespace {

// In-place iterative radix-2 FFT; size must be a power of two.
void fft(std::vector<std::complex<double>>& a) {
  const std::size_t n = a.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * std::numbers::pi / static_cast<double>(len);
    for (std::size_t i = 0; i < n; i += len) {
      for (std::size_t k = 0; k < len / 2; ++k) {
        const std::complex<double> w = std::polar(1.0, ang * static_cast<double>(k));
        const auto u = a[i + k];
        const auto v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
      }
    }
  }
}

template <typename T>
T read_le(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("wav: unexpected end of file");
  return v;
}

template <typename T>
void write_le(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

}  // namespace

std::size_t FeatureConfig::window_length() const {
  return static_cast<std::size_t>(std::lround(sample_rate * window_ms / 1000.0));
}

std::size_t FeatureConfig::hop_length() const {
  return static_cast<std::size_t>(std::lround(sample_rate * hop_ms / 1000.0));
}

std::size_t FeatureConfig::fft_size() const {
  std::size_t n = 1;
  while (n < window_length()) n <<= 1;
  return n;
}

void FeatureConfig::validate() const {
  if (!(sample_rate > 0.0)) throw std::invalid_argument("features: sample_rate must be positive");
  if (n_mels < 1) throw std::invalid_argument("features: n_mels must be >= 1");
  if (!(hop_ms > 0.0) || window_ms < hop_ms)
    throw std::invalid_argument("features: need window_ms >= hop_ms > 0");
  if (hop_length() < 1) throw std::invalid_argument("features: hop shorter than one sample");
  if (!(log_floor > 0.0)) throw std::invalid_argument("features: log_floor must be positive");
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

std::vector<double> mel_center_frequencies(const FeatureConfig& cfg) {
  const double top = hz_to_mel(cfg.sample_rate / 2.0);
  const double step = top / static_cast<double>(cfg.n_mels + 1);
  std::vector<double> centers(cfg.n_mels);
  for (std::size_t m = 0; m < cfg.n_mels; ++m) centers[m] = mel_to_hz(step * (m + 1));
  return centers;
}

Tensor mel_filterbank(const FeatureConfig& cfg) {
  cfg.validate();
  const std::size_t n_fft = cfg.fft_size();
  const std::size_t n_bins = n_fft / 2 + 1;
  const double top = hz_to_mel(cfg.sample_rate / 2.0);
  const double step = top / static_cast<double>(cfg.n_mels + 1);
  std::vector<double> edges(cfg.n_mels + 2);
  for (std::size_t i = 0; i < edges.size(); ++i) edges[i] = mel_to_hz(step * i);

  std::vector<double> fb(n_bins * cfg.n_mels, 0.0);
  for (std::size_t k = 0; k < n_bins; ++k) {
    const double f = cfg.sample_rate * static_cast<double>(k) / static_cast<double>(n_fft);
    for (std::size_t m = 0; m < cfg.n_mels; ++m) {
      const double lo = edges[m], mid = edges[m + 1], hi = edges[m + 2];
      double w = 0.0;
      if (f > lo && f <= mid) w = (f - lo) / (mid - lo);
      else if (f > mid && f < hi) w = (hi - f) / (hi - mid);
      fb[k * cfg.n_mels + m] = w;
    }
  }
  return Tensor::from({n_bins, cfg.n_mels}, std::move(fb));
}

Tensor frame_signal(std::span<const double> samples, const FeatureConfig& cfg) {
  cfg.validate();
  const std::size_t win = cfg.window_length(), hop = cfg.hop_length();
  if (samples.size() < win) {
    throw std::invalid_argument("signal of " + std::to_string(samples.size()) +
                                " samples is shorter than one window (" +
                                std::to_string(win) + ")");
  }
  std::vector<double> signal(samples.begin(), samples.end());
  if (cfg.pre_emphasis) {
    for (std::size_t i = signal.size() - 1; i > 0; --i)
      signal[i] -= cfg.pre_emphasis_coeff * signal[i - 1];
  }
  const std::size_t n_frames = 1 + (signal.size() - win) / hop;
  std::vector<double> window(win);
  for (std::size_t i = 0; i < win; ++i) {
    window[i] = win == 1 ? 1.0
                         : 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                                                  static_cast<double>(win - 1));
  }
  std::vector<double> frames(n_frames * win);
  for (std::size_t f = 0; f < n_frames; ++f)
    for (std::size_t i = 0; i < win; ++i) frames[f * win + i] = signal[f * hop + i] * window[i];
  return Tensor::from({n_frames, win}, std::move(frames));
}

Tensor log_mel(std::span<const double> samples, const FeatureConfig& cfg) {
  const Tensor frames = frame_signal(samples, cfg);
  const Tensor fb = mel_filterbank(cfg);
  const std::size_t n_frames = frames.dim(0), win = frames.dim(1);
  const std::size_t n_fft = cfg.fft_size(), n_bins = n_fft / 2 + 1, M = cfg.n_mels;

  std::vector<double> out(n_frames * M);
  std::vector<std::complex<double>> buf(n_fft);
  std::vector<double> power(n_bins);
  for (std::size_t f = 0; f < n_frames; ++f) {
    std::fill(buf.begin(), buf.end(), std::complex<double>{});
    for (std::size_t i = 0; i < win; ++i) buf[i] = frames[f * win + i];
    fft(buf);
    for (std::size_t k = 0; k < n_bins; ++k) power[k] = std::norm(buf[k]);
    for (std::size_t m = 0; m < M; ++m) {
      double e = 0.0;
      for (std::size_t k = 0; k < n_bins; ++k) e += power[k] * fb[k * M + m];
      out[f * M + m] = std::log(std::max(e, cfg.log_floor));
    }
  }
  if (cfg.normalize && n_frames > 1) {
    for (std::size_t m = 0; m < M; ++m) {
      double mu = 0.0, var = 0.0;
      for (std::size_t f = 0; f < n_frames; ++f) mu += out[f * M + m];
      mu /= static_cast<double>(n_frames);
      for (std::size_t f = 0; f < n_frames; ++f) var += std::pow(out[f * M + m] - mu, 2);
      const double is = 1.0 / std::sqrt(var / static_cast<double>(n_frames) + 1e-10);
      for (std::size_t f = 0; f < n_frames; ++f) out[f * M + m] = (out[f * M + m] - mu) * is;
    }
  }
  return Tensor::from({n_frames, M}, std::move(out));
}

WavAudio read_wav(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  char tag[4];
  is.read(tag, 4);
  if (!is || std::memcmp(tag, "RIFF", 4) != 0) throw std::runtime_error(path.string() + ": not RIFF");
  read_le<std::uint32_t>(is);
  is.read(tag, 4);
  if (!is || std::memcmp(tag, "WAVE", 4) != 0) throw std::runtime_error(path.string() + ": not WAVE");

  WavAudio audio;
  bool have_fmt = false;
  while (is.read(tag, 4)) {
    const auto size = read_le<std::uint32_t>(is);
    if (std::memcmp(tag, "fmt ", 4) == 0) {
      const auto format = read_le<std::uint16_t>(is);
      const auto channels = read_le<std::uint16_t>(is);
      const auto rate = read_le<std::uint32_t>(is);
      read_le<std::uint32_t>(is);
      read_le<std::uint16_t>(is);
      const auto bits = read_le<std::uint16_t>(is);
      if (format != 1 || channels != 1 || bits != 16) {
        throw std::runtime_error(path.string() + ": only 16-bit PCM mono is supported");
      }
      audio.sample_rate = rate;
      is.ignore(size - 16 + (size & 1));
      have_fmt = true;
    } else if (std::memcmp(tag, "data", 4) == 0) {
      if (!have_fmt) throw std::runtime_error(path.string() + ": data chunk before fmt");
      audio.samples.resize(size / 2);
      for (auto& s : audio.samples) s = read_le<std::int16_t>(is) / 32768.0;
      return audio;
    } else {
      is.ignore(size + (size & 1));
    }
  }
  throw std::runtime_error(path.string() + ": no data chunk");
}

void write_wav(const std::filesystem::path& path, std::span<const double> samples,
               double sample_rate) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  const auto data_bytes = static_cast<std::uint32_t>(samples.size() * 2);
  const auto rate = static_cast<std::uint32_t>(sample_rate);
  os.write("RIFF", 4);
  write_le<std::uint32_t>(os, 36 + data_bytes);
  os.write("WAVEfmt ", 8);
  write_le<std::uint32_t>(os, 16);
  write_le<std::uint16_t>(os, 1);
  write_le<std::uint16_t>(os, 1);
  write_le<std::uint32_t>(os, rate);
  write_le<std::uint32_t>(os, rate * 2);
  write_le<std::uint16_t>(os, 2);
  write_le<std::uint16_t>(os, 16);
  os.write("data", 4);
  write_le<std::uint32_t>(os, data_bytes);
  for (double s : samples) {
    const double c = std::clamp(s, -1.0, 32767.0 / 32768.0);
    write_le<std::int16_t>(os, static_cast<std::int16_t>(std::lround(c * 32768.0)));
  }
}

}  // namespace tds

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "tds/tensor.hpp"

namespace tds {

/// Log-mel filterbank settings. Defaults give 80 filters every 10 ms over a
/// 25 ms window.
struct FeatureConfig {
  double sample_rate = 16000.0;
  std::size_t n_mels = 80;
  double window_ms = 25.0;
  double hop_ms = 10.0;
  double log_floor = 1e-10;
  bool pre_emphasis = false;
  double pre_emphasis_coeff = 0.97;
  /// Per-utterance mean/variance normalization of each mel channel.
  bool normalize = false;

  std::size_t window_length() const;
  std::size_t hop_length() const;
  /// Smallest power of two holding one window.
  std::size_t fft_size() const;
  void validate() const;
};

double hz_to_mel(double hz);  // HTK: 2595 log10(1 + f / 700)
double mel_to_hz(double mel);

/// Center frequency in Hz of each triangular filter.
std::vector<double> mel_center_frequencies(const FeatureConfig& cfg);

/// Triangular filters spanning 0 .. Nyquist, evaluated at the FFT bin
/// frequencies: [fft_size / 2 + 1, n_mels].
Tensor mel_filterbank(const FeatureConfig& cfg);

/// Hamming-windowed frames: [1 + (N - window) / hop, window].
/// Throws std::invalid_argument if the signal is shorter than one window.
Tensor frame_signal(std::span<const double> samples, const FeatureConfig& cfg);

/// log(max(mel energy, log_floor)) per frame: [n_frames, n_mels].
Tensor log_mel(std::span<const double> samples, const FeatureConfig& cfg);

struct WavAudio {
  double sample_rate = 0.0;
  std::vector<double> samples;  // in [-1, 1)
};

/// 16-bit PCM mono RIFF/WAVE only.
WavAudio read_wav(const std::filesystem::path& path);
void write_wav(const std::filesystem::path& path, std::span<const double> samples,
               double sample_rate);

}  // namespace tds

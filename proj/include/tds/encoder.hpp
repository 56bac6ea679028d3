// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "json.hpp"
#include "tds/ops.hpp"
#include "tds/params.hpp"

namespace tds {

struct TdsBlockConfig {
  std::size_t channels = 10;  // c
  std::size_t width = 80;     // w
  std::size_t kernel = 21;    // k, odd
  double dropout = 0.0;

  void validate() const;
};

/// Layout of the fully convolutional encoder.
///
/// The input [T, f] is viewed as [T, w = f, 1]. A leading stride-2
/// sub-sampling convolution maps it to the first group's channel count, and
/// every later group is preceded by another sub-sampling layer that changes
/// the channel count. A final linear layer maps each [w * c] frame to
/// 2 * attention_dim values: the first half are keys, the second values.
struct EncoderConfig {
  std::size_t input_dim = 80;
  /// (number of TDS blocks, channels) per group.
  std::vector<std::pair<std::size_t, std::size_t>> groups{{2, 10}, {3, 14}, {6, 18}};
  std::size_t kernel = 21;
  std::size_t stride = 2;
  std::size_t attention_dim = 512;
  double dropout = 0.2;
  bool subsample_dropout = true;
  double ln_eps = 1e-5;

  void validate() const;
  std::size_t width() const { return input_dim; }
  std::size_t num_subsample_layers() const { return groups.size(); }
  std::size_t subsample_factor() const;
  std::size_t num_blocks() const;
  /// Encoded length for an input of `frames` frames.
  std::size_t output_length(std::size_t frames) const;

  nlohmann::json to_json() const;
  static EncoderConfig from_json(const nlohmann::json& j);
};

/// Input frames that influence one encoded step.
std::size_t receptive_field(const EncoderConfig& cfg);

struct LayerNormParams {
  Tensor gain;
  Tensor bias;
};

struct TdsBlockParams {
  Tensor conv_w, conv_b;  // [k, c, c], [c]
  LayerNormParams ln1;
  Tensor fc1_w, fc1_b;  // [wc, wc], [wc]
  Tensor fc2_w, fc2_b;
  LayerNormParams ln2;

  static TdsBlockParams init(const TdsBlockConfig& cfg, Rng& rng);
  void collect(ParamList& out, const std::string& prefix) const;
};

struct SubsampleParams {
  Tensor conv_w, conv_b;  // [k, c_in, c_out], [c_out]
  LayerNormParams ln;

  static SubsampleParams init(std::size_t kernel, std::size_t c_in, std::size_t c_out, Rng& rng);
  void collect(ParamList& out, const std::string& prefix) const;
};

/// One TDS block on x: [T, w, c] or [B, T, w, c] (with `lengths`).
///
///   y = LN(x + dropout(relu(conv(x))))
///   z = LN(y + dropout(W2 dropout(relu(W1 y + b1)) + b2))   over [T, 1, w c]
Tensor tds_block(const Tensor& x, const TdsBlockParams& p, const TdsBlockConfig& cfg, Rng& rng,
                 bool training, Lengths lengths = {}, double ln_eps = 1e-5);

/// Strided time convolution followed by ReLU, optional dropout and layer
/// norm. No residual. `lengths` is updated to the output lengths.
Tensor subsample_layer(const Tensor& x, const SubsampleParams& p, std::size_t stride,
                       double dropout_p, Rng& rng, bool training,
                       std::vector<std::size_t>* lengths = nullptr, double ln_eps = 1e-5);

struct EncoderOutput {
  Tensor keys;    // [T', d]
  Tensor values;  // [T', d]
  /// Input frame at the center of each encoded step.
  std::vector<std::size_t> frame_positions;

  std::size_t length() const { return keys.dim(0); }
  std::size_t dim() const { return keys.dim(1); }
};

class Encoder {
 public:
  Encoder(EncoderConfig cfg, Rng& init_rng);

  const EncoderConfig& config() const { return cfg_; }

  /// features: [T, input_dim].
  EncoderOutput encode(const Tensor& features, Rng& rng, bool training) const;
  /// Pads to the longest utterance and runs one batched pass; padded frames
  /// never influence the valid region.
  std::vector<EncoderOutput> encode_batch(const std::vector<Tensor>& features, Rng& rng,
                                          bool training) const;

  ParamList parameters() const;

 private:
  EncoderConfig cfg_;
  std::vector<SubsampleParams> subsample_;
  std::vector<std::vector<TdsBlockParams>> blocks_;
  Tensor out_w_, out_b_;
};

}  // namespace tds

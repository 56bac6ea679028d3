// SPDX-License-Identifier: Apache-2.0
#include "tds/encoder.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

namespace tds {

namespace {

LayerNormParams unit_layer_norm() {
  return {Tensor::scalar(1.0, true), Tensor::scalar(0.0, true)};
}

void collect_ln(const LayerNormParams& ln, ParamList& out, const std::string& prefix) {
  out.emplace_back(prefix + ".gain", ln.gain);
  out.emplace_back(prefix + ".bias", ln.bias);
}

}  // namespace

void TdsBlockConfig::validate() const {
  if (kernel % 2 == 0) throw std::invalid_argument("TDS kernel size must be odd");
  if (channels < 1 || width < 1) throw std::invalid_argument("TDS channels and width must be >= 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("dropout must be in [0, 1)");
}

void EncoderConfig::validate() const {
  if (input_dim < 1) throw std::invalid_argument("encoder: input_dim must be >= 1");
  if (groups.empty()) throw std::invalid_argument("encoder: at least one group is required");
  for (const auto& [n, c] : groups) {
    if (c < 1) throw std::invalid_argument("encoder: group channels must be >= 1");
    (void)n;
  }
  if (kernel % 2 == 0 || kernel < 1) throw std::invalid_argument("encoder: kernel must be odd");
  if (stride < 1) throw std::invalid_argument("encoder: stride must be >= 1");
  if (attention_dim < 1) throw std::invalid_argument("encoder: attention_dim must be >= 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("encoder: dropout in [0, 1)");
  if (!(ln_eps > 0.0)) throw std::invalid_argument("encoder: ln_eps must be positive");
}

std::size_t EncoderConfig::subsample_factor() const {
  std::size_t f = 1;
  for (std::size_t i = 0; i < num_subsample_layers(); ++i) f *= stride;
  return f;
}

std::size_t EncoderConfig::num_blocks() const {
  std::size_t n = 0;
  for (const auto& g : groups) n += g.first;
  return n;
}

std::size_t EncoderConfig::output_length(std::size_t frames) const {
  if (frames < 1) throw std::invalid_argument("encoder: empty utterance");
  std::size_t t = frames;
  for (std::size_t i = 0; i < num_subsample_layers(); ++i)
    t = conv_output_length(t, kernel, stride, (kernel - 1) / 2);
  return t;
}

nlohmann::json EncoderConfig::to_json() const {
  nlohmann::json g = nlohmann::json::array();
  for (const auto& [n, c] : groups) g.push_back({n, c});
  return {{"input_dim", input_dim}, {"groups", g},         {"kernel", kernel},
          {"stride", stride},       {"attention_dim", attention_dim}, {"dropout", dropout},
          {"subsample_dropout", subsample_dropout}, {"ln_eps", ln_eps}};
}

EncoderConfig EncoderConfig::from_json(const nlohmann::json& j) {
  EncoderConfig c;
  c.input_dim = j.at("input_dim");
  c.groups.clear();
  for (const auto& g : j.at("groups")) c.groups.emplace_back(g.at(0), g.at(1));
  c.kernel = j.at("kernel");
  c.stride = j.at("stride");
  c.attention_dim = j.at("attention_dim");
  c.dropout = j.at("dropout");
  c.subsample_dropout = j.at("subsample_dropout");
  c.ln_eps = j.at("ln_eps");
  c.validate();
  return c;
}

std::size_t receptive_field(const EncoderConfig& cfg) {
  cfg.validate();
  std::size_t rf = 1, jump = 1;
  auto conv = [&](std::size_t stride) {
    rf += (cfg.kernel - 1) * jump;
    jump *= stride;
  };
  for (const auto& [blocks, channels] : cfg.groups) {
    conv(cfg.stride);
    for (std::size_t b = 0; b < blocks; ++b) conv(1);
  }
  return rf;
}

TdsBlockParams TdsBlockParams::init(const TdsBlockConfig& cfg, Rng& rng) {
  cfg.validate();
  const std::size_t c = cfg.channels, k = cfg.kernel, wc = cfg.width * cfg.channels;
  TdsBlockParams p;
  p.conv_w = init_uniform({k, c, c}, k * c, rng);
  p.conv_b = init_uniform({c}, k * c, rng);
  p.ln1 = unit_layer_norm();
  p.fc1_w = init_uniform({wc, wc}, wc, rng);
  p.fc1_b = init_uniform({wc}, wc, rng);
  p.fc2_w = init_uniform({wc, wc}, wc, rng);
  p.fc2_b = init_uniform({wc}, wc, rng);
  p.ln2 = unit_layer_norm();
  return p;
}

void TdsBlockParams::collect(ParamList& out, const std::string& prefix) const {
  out.emplace_back(prefix + ".conv.weight", conv_w);
  out.emplace_back(prefix + ".conv.bias", conv_b);
  collect_ln(ln1, out, prefix + ".ln1");
  out.emplace_back(prefix + ".fc1.weight", fc1_w);
  out.emplace_back(prefix + ".fc1.bias", fc1_b);
  out.emplace_back(prefix + ".fc2.weight", fc2_w);
  out.emplace_back(prefix + ".fc2.bias", fc2_b);
  collect_ln(ln2, out, prefix + ".ln2");
}

SubsampleParams SubsampleParams::init(std::size_t kernel, std::size_t c_in, std::size_t c_out,
                                      Rng& rng) {
  SubsampleParams p;
  p.conv_w = init_uniform({kernel, c_in, c_out}, kernel * c_in, rng);
  p.conv_b = init_uniform({c_out}, kernel * c_in, rng);
  p.ln = unit_layer_norm();
  return p;
}

void SubsampleParams::collect(ParamList& out, const std::string& prefix) const {
  out.emplace_back(prefix + ".conv.weight", conv_w);
  out.emplace_back(prefix + ".conv.bias", conv_b);
  collect_ln(ln, out, prefix + ".ln");
}

Tensor tds_block(const Tensor& x, const TdsBlockParams& p, const TdsBlockConfig& cfg, Rng& rng,
                 bool training, Lengths lengths, double ln_eps) {
  const bool batched = x.rank() == 4;
  if (!(x.rank() == 3 || batched) || x.shape()[x.rank() - 1] != cfg.channels ||
      x.shape()[x.rank() - 2] != cfg.width) {
    throw ShapeError("tds_block: input " + shape_str(x.shape()) + " does not match w=" +
                     std::to_string(cfg.width) + ", c=" + std::to_string(cfg.channels));
  }
  const std::size_t pad = (cfg.kernel - 1) / 2;
  Tensor h = dropout(relu(conv2d_time(x, p.conv_w, p.conv_b, 1, pad, lengths)), cfg.dropout, rng,
                     training);
  Tensor y = layer_norm_example(add(x, h), p.ln1.gain, p.ln1.bias, ln_eps, lengths);

  // fully connected sub-block over the flattened [w * c] frame
  Shape flat = y.shape();
  flat[flat.size() - 2] = 1;
  flat.back() = cfg.width * cfg.channels;
  const Tensor yf = reshape(y, flat);
  Tensor f = dropout(relu(linear(yf, p.fc1_w, p.fc1_b)), cfg.dropout, rng, training);
  f = dropout(linear(f, p.fc2_w, p.fc2_b), cfg.dropout, rng, training);
  Tensor z = layer_norm_example(add(yf, f), p.ln2.gain, p.ln2.bias, ln_eps, lengths);
  return reshape(z, x.shape());
}

Tensor subsample_layer(const Tensor& x, const SubsampleParams& p, std::size_t stride,
                       double dropout_p, Rng& rng, bool training,
                       std::vector<std::size_t>* lengths, double ln_eps) {
  const std::size_t k = p.conv_w.dim(0);
  const std::size_t pad = (k - 1) / 2;
  const Lengths in_lengths = lengths ? Lengths(*lengths) : Lengths{};
  Tensor h = conv2d_time(x, p.conv_w, p.conv_b, stride, pad, in_lengths);
  if (lengths) {
    for (auto& l : *lengths) l = conv_output_length(l, k, stride, pad);
  }
  h = dropout(relu(h), dropout_p, rng, training);
  return layer_norm_example(h, p.ln.gain, p.ln.bias, ln_eps,
                            lengths ? Lengths(*lengths) : Lengths{});
}

Encoder::Encoder(EncoderConfig cfg, Rng& init_rng) : cfg_(std::move(cfg)) {
  cfg_.validate();
  std::size_t c_in = 1;
  for (const auto& [n_blocks, channels] : cfg_.groups) {
    subsample_.push_back(SubsampleParams::init(cfg_.kernel, c_in, channels, init_rng));
    TdsBlockConfig bc{channels, cfg_.width(), cfg_.kernel, cfg_.dropout};
    auto& group = blocks_.emplace_back();
    for (std::size_t b = 0; b < n_blocks; ++b) group.push_back(TdsBlockParams::init(bc, init_rng));
    c_in = channels;
  }
  const std::size_t wc = cfg_.width() * c_in;
  out_w_ = init_uniform({wc, 2 * cfg_.attention_dim}, wc, init_rng);
  out_b_ = init_uniform({2 * cfg_.attention_dim}, wc, init_rng);
}

ParamList Encoder::parameters() const {
  ParamList out;
  for (std::size_t g = 0; g < cfg_.groups.size(); ++g) {
    subsample_[g].collect(out, "encoder.subsample" + std::to_string(g));
    for (std::size_t b = 0; b < blocks_[g].size(); ++b) {
      blocks_[g][b].collect(out, "encoder.group" + std::to_string(g) + ".block" + std::to_string(b));
    }
  }
  out.emplace_back("encoder.output.weight", out_w_);
  out.emplace_back("encoder.output.bias", out_b_);
  return out;
}

EncoderOutput Encoder::encode(const Tensor& features, Rng& rng, bool training) const {
  return encode_batch({features}, rng, training).front();
}

std::vector<EncoderOutput> Encoder::encode_batch(const std::vector<Tensor>& features, Rng& rng,
                                                 bool training) const {
  if (features.empty()) throw std::invalid_argument("encode: empty batch");
  const std::size_t B = features.size(), f = cfg_.input_dim;
  std::vector<std::size_t> lengths;
  for (const auto& x : features) {
    if (x.rank() != 2 || x.dim(1) != f) {
      throw ShapeError("encode: features must be [T, " + std::to_string(f) + "], got " +
                       shape_str(x.shape()));
    }
    lengths.push_back(x.dim(0));
  }
  const std::size_t T = *std::max_element(lengths.begin(), lengths.end());

  Tensor h;
  if (B == 1) {
    h = reshape(features[0], {1, T, f, 1});
  } else {
    std::vector<Tensor> padded;
    for (const auto& x : features) {
      Tensor e = reshape(x, {1, x.dim(0), f, 1});
      if (x.dim(0) < T) e = concat({e, Tensor::zeros({1, T - x.dim(0), f, 1})}, 1);
      padded.push_back(e);
    }
    h = concat(padded, 0);
  }

  const double sub_p = cfg_.subsample_dropout ? cfg_.dropout : 0.0;
  for (std::size_t g = 0; g < cfg_.groups.size(); ++g) {
    h = subsample_layer(h, subsample_[g], cfg_.stride, sub_p, rng, training, &lengths, cfg_.ln_eps);
    TdsBlockConfig bc{cfg_.groups[g].second, cfg_.width(), cfg_.kernel, cfg_.dropout};
    for (const auto& block : blocks_[g]) h = tds_block(h, block, bc, rng, training, lengths, cfg_.ln_eps);
  }
  const std::size_t t_out = h.dim(1), wc = h.dim(2) * h.dim(3), d = cfg_.attention_dim;
  const Tensor kv = linear(reshape(h, {B, t_out, wc}), out_w_, out_b_);

  const std::size_t factor = cfg_.subsample_factor();
  std::vector<EncoderOutput> outs;
  for (std::size_t b = 0; b < B; ++b) {
    Tensor rows = reshape(slice(slice(kv, 0, b, 1), 1, 0, lengths[b]), {lengths[b], 2 * d});
    EncoderOutput o{slice(rows, 1, 0, d), slice(rows, 1, d, d), {}};
    for (std::size_t i = 0; i < lengths[b]; ++i) o.frame_positions.push_back(i * factor);
    outs.push_back(std::move(o));
  }
  return outs;
}

}  // namespace tds

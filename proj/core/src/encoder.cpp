#include "filter/encoder.hpp"

#include <cmath>
#include <numeric>

#include "filter/errors.hpp"
#include "filter/rng.hpp"

namespace filter {

void validate(const EncoderConfig& cfg) {
  auto positive = [](int v, const char* name) {
    if (v <= 0)
      throw ConfigError(std::string(name) + " must be positive, got " +
                        std::to_string(v));
  };
  positive(cfg.vocab_size, "vocab_size");
  positive(cfg.d_model, "d_model");
  positive(cfg.n_heads, "n_heads");
  positive(cfg.d_ff, "d_ff");
  positive(cfg.max_positions, "max_positions");
  positive(cfg.n_layers, "n_layers");
  if (cfg.d_model % cfg.n_heads != 0)
    throw ConfigError("d_model " + std::to_string(cfg.d_model) +
                      " not divisible by n_heads " +
                      std::to_string(cfg.n_heads));
}

Tensor uniform_parameter(int rows, int cols, double bound,
                         Xoshiro256StarStar rng) {
  Tensor t(rows, cols, /*requires_grad=*/true);
  for (double& v : t.values_mut()) v = rng.uniform(-bound, bound);
  return t;
}

Encoder::Encoder(EncoderConfig cfg, std::uint64_t seed) : cfg_(cfg) {
  validate(cfg_);
  const int d = cfg_.d_model;
  const int dh = d / cfg_.n_heads;
  const double bound = 1.0 / std::sqrt(static_cast<double>(d));

  // One stream per parameter, drawn in declaration order, so the values of
  // any one parameter do not depend on the sizes of the others.
  SeedSequence seq(seed);
  tok_emb_ = uniform_parameter(d, cfg_.vocab_size, bound, seq.next_stream());
  pos_emb_ = uniform_parameter(d, cfg_.max_positions, bound, seq.next_stream());
  layers_.reserve(cfg_.n_layers);
  for (int i = 0; i < cfg_.n_layers; ++i) {
    LayerWeights lw;
    lw.heads.reserve(cfg_.n_heads);
    for (int h = 0; h < cfg_.n_heads; ++h) {
      AttentionHead head;
      head.wq = uniform_parameter(d, dh, bound, seq.next_stream());
      head.wk = uniform_parameter(d, dh, bound, seq.next_stream());
      head.wv = uniform_parameter(d, dh, bound, seq.next_stream());
      head.wo = uniform_parameter(dh, d, bound, seq.next_stream());
      lw.heads.push_back(std::move(head));
    }
    lw.ffn_in = uniform_parameter(d, cfg_.d_ff, bound, seq.next_stream());
    lw.ffn_out = uniform_parameter(cfg_.d_ff, d, bound, seq.next_stream());
    lw.ln1_gain = Tensor::full(1, d, 1.0, true);
    lw.ln1_bias = Tensor::zeros(1, d, true);
    lw.ln2_gain = Tensor::full(1, d, 1.0, true);
    lw.ln2_bias = Tensor::zeros(1, d, true);
    layers_.push_back(std::move(lw));
  }
}

Tensor Encoder::embed(const std::vector<int>& tokens) const {
  if (tokens.empty()) throw DataError("embed: empty token sequence");
  if (static_cast<int>(tokens.size()) > cfg_.max_positions)
    throw DataError("embed: sequence length " + std::to_string(tokens.size()) +
                    " exceeds max_positions " +
                    std::to_string(cfg_.max_positions));
  for (int id : tokens)
    if (id < 0 || id >= cfg_.vocab_size)
      throw DataError("embed: token id " + std::to_string(id) +
                      " outside vocabulary of size " +
                      std::to_string(cfg_.vocab_size));
  std::vector<int> positions(tokens.size());
  std::iota(positions.begin(), positions.end(), 0);
  return transpose(
      add(gather_cols(tok_emb_, tokens), gather_cols(pos_emb_, positions)));
}

Tensor key_padding_mask(const std::vector<std::uint8_t>& keep) {
  const int len = static_cast<int>(keep.size());
  if (len == 0) throw ShapeError("key_padding_mask: empty key set");
  bool any = false;
  for (auto k : keep) any = any || k;
  if (!any) throw ShapeError("key_padding_mask: every key hidden");
  Tensor mask(len, len);
  for (int q = 0; q < len; ++q)
    for (int k = 0; k < len; ++k)
      mask.at(q, k) = keep[k] ? 0.0 : -1e9;
  return mask;
}

Tensor Encoder::attention(const Tensor& x, int layer,
                          const Tensor* mask) const {
  if (layer < 0 || layer >= cfg_.n_layers)
    throw ShapeError("attention: layer " + std::to_string(layer) +
                     " out of range");
  if (x.cols() != cfg_.d_model)
    throw ShapeError("attention: expected len x " +
                     std::to_string(cfg_.d_model) + " input, got " +
                     x.shape_str());
  if (mask != nullptr && (mask->rows() != x.rows() || mask->cols() != x.rows()))
    throw ShapeError("attention: mask " + mask->shape_str() +
                     " does not match sequence length " +
                     std::to_string(x.rows()));
  const LayerWeights& lw = layers_[layer];
  const int dh = cfg_.d_model / cfg_.n_heads;
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

  Tensor out;
  for (int h = 0; h < cfg_.n_heads; ++h) {
    const AttentionHead& hd = lw.heads[h];
    Tensor q = matmul(x, hd.wq);
    Tensor k = matmul(x, hd.wk);
    Tensor v = matmul(x, hd.wv);
    Tensor scores = scale(matmul(q, transpose(k)), inv_sqrt_dh);
    if (mask != nullptr) scores = add(scores, *mask);
    Tensor ctx = matmul(softmax_rows(scores), v);
    Tensor out_h = matmul(ctx, hd.wo);
    out = (h == 0) ? out_h : add(out, out_h);
  }
  return out;
}

Tensor Encoder::feed_forward(const Tensor& x, int layer) const {
  if (layer < 0 || layer >= cfg_.n_layers)
    throw ShapeError("feed_forward: layer " + std::to_string(layer) +
                     " out of range");
  const LayerWeights& lw = layers_[layer];
  return matmul(gelu(matmul(x, lw.ffn_in)), lw.ffn_out);
}

Tensor Encoder::run_layer(const Tensor& x, int layer,
                          const Tensor* mask) const {
  if (layer < 0 || layer >= cfg_.n_layers)
    throw ShapeError("run_layer: layer " + std::to_string(layer) +
                     " out of range");
  const LayerWeights& lw = layers_[layer];
  Tensor a = layer_norm(add(x, attention(x, layer, mask)), lw.ln1_gain,
                        lw.ln1_bias);
  return layer_norm(add(a, feed_forward(a, layer)), lw.ln2_gain, lw.ln2_bias);
}

Tensor Encoder::run_stack(const Tensor& x, int lo, int hi,
                          const Tensor* mask) const {
  if (lo < 0 || hi < lo || hi > cfg_.n_layers)
    throw ShapeError("run_stack: bad layer range [" + std::to_string(lo) +
                     ", " + std::to_string(hi) + ")");
  Tensor h = x;
  for (int i = lo; i < hi; ++i) h = run_layer(h, i, mask);
  return h;
}

std::vector<std::pair<std::string, Tensor>> Encoder::named_parameters() const {
  std::vector<std::pair<std::string, Tensor>> out;
  out.emplace_back("tok_emb", tok_emb_);
  out.emplace_back("pos_emb", pos_emb_);
  for (int i = 0; i < cfg_.n_layers; ++i) {
    const LayerWeights& lw = layers_[i];
    const std::string p = "layer." + std::to_string(i) + ".";
    for (int h = 0; h < cfg_.n_heads; ++h) {
      const std::string hp = p + "attn.";
      const std::string hs = "." + std::to_string(h);
      out.emplace_back(hp + "wq" + hs, lw.heads[h].wq);
      out.emplace_back(hp + "wk" + hs, lw.heads[h].wk);
      out.emplace_back(hp + "wv" + hs, lw.heads[h].wv);
      out.emplace_back(hp + "wo" + hs, lw.heads[h].wo);
    }
    out.emplace_back(p + "ffn.in", lw.ffn_in);
    out.emplace_back(p + "ffn.out", lw.ffn_out);
    out.emplace_back(p + "ln1.gain", lw.ln1_gain);
    out.emplace_back(p + "ln1.bias", lw.ln1_bias);
    out.emplace_back(p + "ln2.gain", lw.ln2_gain);
    out.emplace_back(p + "ln2.bias", lw.ln2_bias);
  }
  return out;
}

}  // namespace filter

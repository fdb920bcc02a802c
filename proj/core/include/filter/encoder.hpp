#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "filter/rng.hpp"
#include "filter/tensor.hpp"

namespace filter {

// Fresh trainable parameter with entries uniform in [-bound, bound], one
// dedicated stream per parameter.
Tensor uniform_parameter(int rows, int cols, double bound,
                         Xoshiro256StarStar rng);

struct EncoderConfig {
  int vocab_size = 131;
  int d_model = 32;
  int n_heads = 4;
  int d_ff = 64;
  int max_positions = 64;
  int n_layers = 6;

  bool operator==(const EncoderConfig&) const = default;
};

// Throws ConfigError on non-positive dimensions or d_model % n_heads != 0.
void validate(const EncoderConfig& cfg);

struct AttentionHead {
  Tensor wq, wk, wv;  // d x dh
  Tensor wo;          // dh x d
};

struct LayerWeights {
  std::vector<AttentionHead> heads;
  Tensor ffn_in;   // d x d_ff
  Tensor ffn_out;  // d_ff x d
  Tensor ln1_gain, ln1_bias;  // 1 x d
  Tensor ln2_gain, ln2_bias;
};

// Additive attention mask that hides the keys with keep[j] == 0 from every
// query: len x len, 0 where visible and -1e9 where hidden. Constant (no
// gradient side). Every query must keep at least one key.
Tensor key_padding_mask(const std::vector<std::uint8_t>& keep);

// Post-norm transformer encoder stack. Activations are len x d (one row per
// position). All layers share one weight set per depth index; which depths a
// given stream runs through is the caller's business, so the stack exposes
// an arbitrary [lo, hi) depth range.
class Encoder {
 public:
  Encoder(EncoderConfig cfg, std::uint64_t seed);

  const EncoderConfig& config() const { return cfg_; }

  // Token + learned position embeddings, positions counted from 0 for each
  // sequence independently. Throws DataError on out-of-range ids or length.
  Tensor embed(const std::vector<int>& tokens) const;

  // Applies layers [lo, hi); an empty range returns the input unchanged.
  // mask, when given, is a len x len additive score offset (see
  // key_padding_mask); nullptr means full visibility.
  Tensor run_stack(const Tensor& x, int lo, int hi,
                   const Tensor* mask = nullptr) const;

  Tensor run_layer(const Tensor& x, int layer,
                   const Tensor* mask = nullptr) const;

  // Multi-head self-attention sublayer output (before residual and norm).
  Tensor attention(const Tensor& x, int layer,
                   const Tensor* mask = nullptr) const;

  // Position-wise FFN sublayer output (before residual and norm).
  Tensor feed_forward(const Tensor& x, int layer) const;

  // Handles into the shared parameter storage, in initialization order.
  std::vector<std::pair<std::string, Tensor>> named_parameters() const;

 private:
  EncoderConfig cfg_;
  Tensor tok_emb_;  // d x vocab
  Tensor pos_emb_;  // d x max_positions
  std::vector<LayerWeights> layers_;
};

}  // namespace filter

#pragma once

#include <cstddef>
#include <vector>

#include "chemnne/rng.hpp"
#include "chemnne/spectral.hpp"
#include "chemnne/tensor.hpp"

namespace chemnne {

/// First-layer frequency scale for sine layers (standard SIREN practice).
constexpr double kSirenOmega0 = 30.0;

/// Sine-activated linear layer. The ablated variant swaps the activation
/// for tanh and the init for the plain uniform rule.
struct InrLayer {
    Tensor weight;  // [d_in, d_out]
    Tensor bias;    // [d_out]
    bool is_first = false;
    bool use_sine = true;
};

/// Sine layers: hidden weights ~ U(-sqrt(6/d_in), sqrt(6/d_in)); the first
/// layer uses U(-1/d_in, 1/d_in) with omega_0 applied inside the sine.
/// Biases start at zero.
InrLayer siren_init(std::size_t d_in, std::size_t d_out, bool is_first, Rng& rng);

/// Tanh replacement used when sine features are ablated away.
InrLayer plain_activation_layer(std::size_t d_in, std::size_t d_out, Rng& rng);

Tensor inr_forward(const InrLayer& layer, const Tensor& x);

/// Plain linear layer, weights ~ U(-sqrt(1/d_in), sqrt(1/d_in)), zero bias.
struct Linear {
    Tensor weight;  // [d_in, d_out]
    Tensor bias;    // [d_out]; undefined when bias-less
};

Linear linear_init(std::size_t d_in, std::size_t d_out, Rng& rng, bool with_bias = true);
Tensor linear_forward(const Linear& layer, const Tensor& x);

/// Learnable sinusoidal features of normalized time:
/// lambda(t) = (sin(2 pi f t), cos(2 pi f t)), output width 2L.
struct TimeEmbedding {
    Tensor freqs;  // [L]
};

/// Frequencies start at 1..L so integer times wrap periodically.
TimeEmbedding time_embedding_init(std::size_t l_features);

/// t of shape [.., T] -> [.., T, 2L]; components bounded in [-1, 1].
Tensor time_embed(const TimeEmbedding& te, const Tensor& t);

struct FeedForward {
    Linear fc1;  // d -> d_ff, sine (or tanh) activation
    Linear fc2;  // d_ff -> d, linear
    bool use_sine = true;
};

/// Time-conditioned self-attention with the double-residual update
/// out = z_l + ffn(z_l + softmax(Q K^T / sqrt(d/h)) V), z_l = z + lambda.
/// Q/K/V projections carry no bias.
struct AttentionBlock {
    Tensor wq, wk, wv;  // [d, d]
    FeedForward ffn;
    std::size_t heads = 1;
};

AttentionBlock attention_init(std::size_t d, std::size_t heads, std::size_t d_ff,
                              bool use_sine, Rng& rng);

/// z: [B, T, d]; lambda broadcastable against it ([T, d] or [B, T, d]).
Tensor attention_forward(const AttentionBlock& blk, const Tensor& z, const Tensor& lambda);

enum class FnoActivation { Gelu, Sine, Identity };

/// One spectral-propagator layer: act(z W_local + spectral_conv(z)).
struct FnoBlock {
    Tensor w_local;  // [d_v, d_v], no bias
    SpectralWeights spectral;
    FnoActivation activation = FnoActivation::Gelu;
};

/// Spectral weights are scaled by 1/d_v^2 so the frequency path starts small.
FnoBlock fno_init(std::size_t d_v, std::size_t modes, FnoActivation act, Rng& rng);

Tensor fno_forward(const FnoBlock& blk, const Tensor& z);

/// Shared per-token decoder head: sine layer, then linear+sine, then a free
/// linear output. The same weights apply at every token position.
struct MlpDecoder {
    InrLayer inr;  // d -> d
    Linear mid;    // d -> d, sine (or tanh) activation
    Linear out;    // d -> n_out, linear
    bool use_sine = true;
};

MlpDecoder decoder_init(std::size_t d, std::size_t n_out, bool use_sine, Rng& rng);
Tensor decoder_forward(const MlpDecoder& dec, const Tensor& z);

}  // namespace chemnne

#include "chemnne/nn.hpp"

#include <cmath>

#include "chemnne/errors.hpp"

namespace chemnne {

namespace {

constexpr double kTau = 6.28318530717958647692;

Tensor activate(const Tensor& x, bool use_sine) {
    return use_sine ? sin(x) : tanh(x);
}

}  // namespace

InrLayer siren_init(std::size_t d_in, std::size_t d_out, bool is_first, Rng& rng) {
    if (d_in < 1 || d_out < 1) throw ConfigError("siren_init: dimensions must be >= 1");
    const double bound = is_first ? 1.0 / static_cast<double>(d_in)
                                  : std::sqrt(6.0 / static_cast<double>(d_in));
    InrLayer layer;
    layer.weight = Tensor::uniform({d_in, d_out}, -bound, bound, rng);
    layer.bias = Tensor::zeros({d_out});
    layer.is_first = is_first;
    layer.use_sine = true;
    return layer;
}

InrLayer plain_activation_layer(std::size_t d_in, std::size_t d_out, Rng& rng) {
    const double bound = std::sqrt(1.0 / static_cast<double>(d_in));
    InrLayer layer;
    layer.weight = Tensor::uniform({d_in, d_out}, -bound, bound, rng);
    layer.bias = Tensor::zeros({d_out});
    layer.is_first = false;
    layer.use_sine = false;
    return layer;
}

Tensor inr_forward(const InrLayer& layer, const Tensor& x) {
    Tensor pre = add(matmul(x, layer.weight), layer.bias);
    if (!layer.use_sine) return tanh(pre);
    return layer.is_first ? sin(scale(pre, kSirenOmega0)) : sin(pre);
}

Linear linear_init(std::size_t d_in, std::size_t d_out, Rng& rng, bool with_bias) {
    const double bound = std::sqrt(1.0 / static_cast<double>(d_in));
    Linear layer;
    layer.weight = Tensor::uniform({d_in, d_out}, -bound, bound, rng);
    if (with_bias) layer.bias = Tensor::zeros({d_out});
    return layer;
}

Tensor linear_forward(const Linear& layer, const Tensor& x) {
    Tensor out = matmul(x, layer.weight);
    return layer.bias.defined() ? add(out, layer.bias) : out;
}

TimeEmbedding time_embedding_init(std::size_t l_features) {
    if (l_features < 1) throw ConfigError("time embedding needs at least one frequency");
    std::vector<double> freqs(l_features);
    for (std::size_t j = 0; j < l_features; ++j) freqs[j] = static_cast<double>(j + 1);
    return {Tensor::from({l_features}, std::move(freqs))};
}

Tensor time_embed(const TimeEmbedding& te, const Tensor& t) {
    for (const double v : t.values()) {
        if (!std::isfinite(v)) throw NumericError("time_embed: non-finite time value");
    }
    Shape col_shape = t.shape();
    col_shape.push_back(1);
    Tensor angles = scale(mul(reshape(t, col_shape), te.freqs), kTau);  // [.., T, L]
    Tensor parts[] = {sin(angles), cos(angles)};
    return concat(parts, angles.rank() - 1);
}

AttentionBlock attention_init(std::size_t d, std::size_t heads, std::size_t d_ff,
                              bool use_sine, Rng& rng) {
    if (heads == 0 || d % heads != 0) {
        throw ConfigError("attention: width " + std::to_string(d) +
                          " is not divisible by " + std::to_string(heads) + " heads");
    }
    AttentionBlock blk;
    blk.wq = linear_init(d, d, rng, false).weight;
    blk.wk = linear_init(d, d, rng, false).weight;
    blk.wv = linear_init(d, d, rng, false).weight;
    // fc1 feeds the sine activation, so it takes the sine-layer init.
    if (use_sine) {
        InrLayer fc1 = siren_init(d, d_ff, false, rng);
        blk.ffn.fc1 = Linear{fc1.weight, fc1.bias};
    } else {
        blk.ffn.fc1 = linear_init(d, d_ff, rng);
    }
    blk.ffn.fc2 = linear_init(d_ff, d, rng);
    blk.ffn.use_sine = use_sine;
    blk.heads = heads;
    return blk;
}

Tensor attention_forward(const AttentionBlock& blk, const Tensor& z, const Tensor& lambda) {
    if (z.rank() != 3) {
        throw DimensionError("attention: expected [batch, tokens, width], got " +
                             shape_str(z.shape()));
    }
    const std::size_t batch = z.shape()[0];
    const std::size_t tokens = z.shape()[1];
    const std::size_t width = z.shape()[2];
    const std::size_t heads = blk.heads;
    if (heads == 0 || width % heads != 0) {
        throw ConfigError("attention: width " + std::to_string(width) +
                          " is not divisible by " + std::to_string(heads) + " heads");
    }
    const std::size_t head_dim = width / heads;

    Tensor zl = add(z, lambda);
    Tensor q = matmul(zl, blk.wq);
    Tensor k = matmul(zl, blk.wk);
    Tensor v = matmul(zl, blk.wv);

    auto split_heads = [&](const Tensor& x) {
        return transpose(reshape(x, {batch, tokens, heads, head_dim}), {0, 2, 1, 3});
    };
    Tensor qh = split_heads(q);
    Tensor kh = split_heads(k);
    Tensor vh = split_heads(v);

    Tensor scores = scale(matmul(qh, transpose_last(kh)),
                          1.0 / std::sqrt(static_cast<double>(head_dim)));
    Tensor attn = softmax(scores, 3);
    Tensor ctx = matmul(attn, vh);  // [B, h, T, head_dim]
    Tensor merged = reshape(transpose(ctx, {0, 2, 1, 3}), {batch, tokens, width});

    Tensor ffn_in = add(zl, merged);
    Tensor hiddenv = activate(linear_forward(blk.ffn.fc1, ffn_in), blk.ffn.use_sine);
    Tensor ffn_out = linear_forward(blk.ffn.fc2, hiddenv);
    return add(zl, ffn_out);
}

FnoBlock fno_init(std::size_t d_v, std::size_t modes, FnoActivation act, Rng& rng) {
    if (modes < 1) throw ConfigError("fno: need at least one mode");
    FnoBlock blk;
    blk.w_local = linear_init(d_v, d_v, rng, false).weight;
    const double bound = 1.0 / static_cast<double>(d_v * d_v);
    blk.spectral.modes_kept = modes;
    blk.spectral.r_re = Tensor::uniform({modes, d_v, d_v}, -bound, bound, rng);
    blk.spectral.r_im = Tensor::uniform({modes, d_v, d_v}, -bound, bound, rng);
    blk.activation = act;
    return blk;
}

Tensor fno_forward(const FnoBlock& blk, const Tensor& z) {
    Tensor mixed = add(matmul(z, blk.w_local), spectral_conv(z, blk.spectral));
    switch (blk.activation) {
        case FnoActivation::Gelu: return gelu(mixed);
        case FnoActivation::Sine: return sin(mixed);
        case FnoActivation::Identity: return mixed;
    }
    return mixed;
}

MlpDecoder decoder_init(std::size_t d, std::size_t n_out, bool use_sine, Rng& rng) {
    MlpDecoder dec;
    dec.inr = use_sine ? siren_init(d, d, false, rng) : plain_activation_layer(d, d, rng);
    if (use_sine) {
        InrLayer mid = siren_init(d, d, false, rng);
        dec.mid = Linear{mid.weight, mid.bias};
    } else {
        dec.mid = linear_init(d, d, rng);
    }
    dec.out = linear_init(d, n_out, rng);
    dec.use_sine = use_sine;
    return dec;
}

Tensor decoder_forward(const MlpDecoder& dec, const Tensor& z) {
    Tensor h = inr_forward(dec.inr, z);
    h = activate(linear_forward(dec.mid, h), dec.use_sine);
    return linear_forward(dec.out, h);
}

}  // namespace chemnne

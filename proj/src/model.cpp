#include "chemnne/model.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "chemnne/errors.hpp"

namespace chemnne {

void ModelConfig::validate() const {
    if (n_in < 1 || n_env < 1 || n_out < 1 || n_steps < 1 || hidden < 1 ||
        time_features < 1 || heads < 1 || d_ff < 1) {
        throw ConfigError("model config: all counts must be >= 1");
    }
    if (2 * time_features != hidden) {
        throw ConfigError("model config: 2L must equal the hidden width (got L = " +
                          std::to_string(time_features) + ", hidden = " +
                          std::to_string(hidden) + ")");
    }
    if (fno_modes > n_steps / 2 + 1) {
        throw ConfigError("model config: fno_modes " + std::to_string(fno_modes) +
                          " exceeds floor(T/2)+1 = " + std::to_string(n_steps / 2 + 1));
    }
    if (fno_modes < 1 || attn_blocks < 1 || fno_blocks < 1) {
        throw ConfigError("model config: block counts and modes must be >= 1");
    }
    if (hidden % heads != 0) {
        throw ConfigError("model config: hidden width not divisible by head count");
    }
}

ChemNNEModel ChemNNEModel::build(const ModelConfig& cfg, Rng& rng) {
    cfg.validate();
    ChemNNEModel m;
    m.cfg_ = cfg;

    m.input_linear_ = linear_init(cfg.n_in + cfg.n_env, cfg.hidden, rng);
    m.encoder_map_ = cfg.use_inr ? siren_init(cfg.hidden, cfg.hidden, /*is_first=*/true, rng)
                                 : plain_activation_layer(cfg.hidden, cfg.hidden, rng);
    if (cfg.use_time_emb) m.time_emb_ = time_embedding_init(cfg.time_features);
    if (cfg.use_attn) {
        for (std::size_t b = 0; b < cfg.attn_blocks; ++b) {
            m.attn_.push_back(
                attention_init(cfg.hidden, cfg.heads, cfg.d_ff, cfg.use_inr, rng));
        }
    }
    if (cfg.use_fno) {
        for (std::size_t b = 0; b < cfg.fno_blocks; ++b) {
            m.fno_.push_back(fno_init(cfg.hidden, cfg.fno_modes, cfg.fno_activation, rng));
        }
    } else {
        for (std::size_t b = 0; b < cfg.fno_blocks; ++b) {
            m.token_mlp_.push_back(linear_init(cfg.hidden, cfg.hidden, rng));
        }
    }
    m.decoder_ = decoder_init(cfg.hidden, cfg.n_out, cfg.use_inr, rng);
    m.register_params();
    return m;
}

void ChemNNEModel::register_params() {
    params_.clear();
    auto reg = [this](const std::string& name, Tensor& t) {
        t.set_requires_grad(true);
        params_.emplace_back(name, t);
    };
    reg("encoder.in.weight", input_linear_.weight);
    reg("encoder.in.bias", input_linear_.bias);
    reg("encoder.map.weight", encoder_map_.weight);
    reg("encoder.map.bias", encoder_map_.bias);
    if (cfg_.use_time_emb) reg("time_embed.freqs", time_emb_.freqs);
    for (std::size_t b = 0; b < attn_.size(); ++b) {
        const std::string p = "attn" + std::to_string(b) + ".";
        reg(p + "wq", attn_[b].wq);
        reg(p + "wk", attn_[b].wk);
        reg(p + "wv", attn_[b].wv);
        reg(p + "ffn1.weight", attn_[b].ffn.fc1.weight);
        reg(p + "ffn1.bias", attn_[b].ffn.fc1.bias);
        reg(p + "ffn2.weight", attn_[b].ffn.fc2.weight);
        reg(p + "ffn2.bias", attn_[b].ffn.fc2.bias);
    }
    for (std::size_t b = 0; b < fno_.size(); ++b) {
        const std::string p = "fno" + std::to_string(b) + ".";
        reg(p + "local", fno_[b].w_local);
        reg(p + "spectral.re", fno_[b].spectral.r_re);
        reg(p + "spectral.im", fno_[b].spectral.r_im);
    }
    for (std::size_t b = 0; b < token_mlp_.size(); ++b) {
        const std::string p = "tokmlp" + std::to_string(b) + ".";
        reg(p + "weight", token_mlp_[b].weight);
        reg(p + "bias", token_mlp_[b].bias);
    }
    reg("decoder.inr.weight", decoder_.inr.weight);
    reg("decoder.inr.bias", decoder_.inr.bias);
    reg("decoder.mid.weight", decoder_.mid.weight);
    reg("decoder.mid.bias", decoder_.mid.bias);
    reg("decoder.out.weight", decoder_.out.weight);
    reg("decoder.out.bias", decoder_.out.bias);
}

Tensor ChemNNEModel::forward(const Tensor& x0, const Tensor& env, const Tensor& t_grid) const {
    if (x0.rank() != 2 || x0.shape()[1] != cfg_.n_in) {
        throw DimensionError("forward: x0 " + shape_str(x0.shape()) + " does not match n_in = " +
                             std::to_string(cfg_.n_in));
    }
    const std::size_t batch = x0.shape()[0];
    if (env.rank() != 2 || env.shape()[0] != batch || env.shape()[1] != cfg_.n_env) {
        throw DimensionError("forward: env " + shape_str(env.shape()) +
                             " does not match [batch, n_env]");
    }
    std::size_t t_len = 0;
    if (t_grid.rank() == 1) {
        t_len = t_grid.shape()[0];
    } else if (t_grid.rank() == 2 && t_grid.shape()[0] == batch) {
        t_len = t_grid.shape()[1];
    } else {
        throw DimensionError("forward: t_grid " + shape_str(t_grid.shape()) +
                             " must be [T] or [batch, T]");
    }
    if (t_len < 1) throw DimensionError("forward: empty time grid");

    Tensor inputs[] = {x0, env};
    Tensor z0 = linear_forward(input_linear_, concat(inputs, 1));
    Tensor mapped = inr_forward(encoder_map_, z0);           // [B, d]
    Tensor tokens = reshape(mapped, {batch, 1, cfg_.hidden});  // broadcast over T

    Tensor lambda = cfg_.use_time_emb
                        ? time_embed(time_emb_, t_grid)
                        : (t_grid.rank() == 1 ? Tensor::zeros({t_len, cfg_.hidden})
                                              : Tensor::zeros({batch, t_len, cfg_.hidden}));

    Tensor z;
    if (!attn_.empty()) {
        z = attention_forward(attn_[0], tokens, lambda);
        Tensor no_offset = Tensor::zeros({1, cfg_.hidden});
        for (std::size_t b = 1; b < attn_.size(); ++b) {
            z = attention_forward(attn_[b], z, no_offset);
        }
    } else {
        z = add(tokens, lambda);
    }

    Tensor f = z;
    if (!fno_.empty()) {
        for (const auto& blk : fno_) f = fno_forward(blk, f);
    } else {
        for (const auto& layer : token_mlp_) {
            Tensor mixed = linear_forward(layer, f);
            switch (cfg_.fno_activation) {
                case FnoActivation::Gelu: f = gelu(mixed); break;
                case FnoActivation::Sine: f = sin(mixed); break;
                case FnoActivation::Identity: f = mixed; break;
            }
        }
    }
    Tensor latent = add(z, f);  // the integral term enters as a residual
    return decoder_forward(decoder_, latent);
}

Tensor ChemNNEModel::predict_initial(const Tensor& x0, const Tensor& env) const {
    Tensor out = forward(x0, env, Tensor::zeros({1}));
    return reshape(out, {x0.shape()[0], cfg_.n_out});
}

Tensor ChemNNEModel::default_time_grid() const {
    std::vector<double> t(cfg_.n_steps);
    for (std::size_t i = 0; i < cfg_.n_steps; ++i) {
        t[i] = static_cast<double>(i + 1) / static_cast<double>(cfg_.n_steps);
    }
    return Tensor::from({cfg_.n_steps}, std::move(t));
}

std::size_t ChemNNEModel::param_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : params_) n += t.numel();
    return n;
}

void ChemNNEModel::zero_grad() {
    for (auto& [name, t] : params_) t.zero_grad();
}

std::size_t ChemNNEModel::expected_param_count(const ModelConfig& cfg) {
    const std::size_t d = cfg.hidden;
    std::size_t n = (cfg.n_in + cfg.n_env) * d + d;  // input linear
    n += d * d + d;                                  // encoder map
    if (cfg.use_time_emb) n += cfg.time_features;
    if (cfg.use_attn) {
        n += cfg.attn_blocks * (3 * d * d + d * cfg.d_ff + cfg.d_ff + cfg.d_ff * d + d);
    }
    if (cfg.use_fno) {
        n += cfg.fno_blocks * (d * d + 2 * cfg.fno_modes * d * d);
    } else {
        n += cfg.fno_blocks * (d * d + d);
    }
    n += (d * d + d) + (d * d + d) + (d * cfg.n_out + cfg.n_out);  // decoder
    return n;
}

std::size_t ChemNNEModel::attention_param_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : params_) {
        if (name.rfind("attn", 0) == 0) n += t.numel();
    }
    return n;
}

std::size_t ChemNNEModel::spectral_param_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : params_) {
        if (name.rfind("fno", 0) == 0) n += t.numel();
    }
    return n;
}

bool ChemNNEModel::uses_sine() const {
    if (encoder_map_.use_sine || decoder_.use_sine) return true;
    for (const auto& blk : attn_) {
        if (blk.ffn.use_sine) return true;
    }
    if (cfg_.use_fno && cfg_.fno_activation == FnoActivation::Sine) return true;
    return false;
}

std::size_t MacCounts::total() const {
    return encoder_linear + encoder_map + time_embedding + attention_qkv + attention_mix +
           attention_ffn + propagator_local + propagator_spectral + propagator_dft + decoder;
}

MacCounts count_macs(const ModelConfig& cfg) {
    cfg.validate();
    const std::size_t d = cfg.hidden;
    const std::size_t t = cfg.n_steps;
    const std::size_t t_freq = t / 2 + 1;
    MacCounts mac;
    mac.encoder_linear = linear_macs(1, cfg.n_in + cfg.n_env, d);
    mac.encoder_map = linear_macs(1, d, d);
    if (cfg.use_time_emb) mac.time_embedding = t * cfg.time_features;
    if (cfg.use_attn) {
        mac.attention_qkv = cfg.attn_blocks * 3 * t * d * d;
        mac.attention_mix = cfg.attn_blocks * 2 * t * t * d;
        mac.attention_ffn = cfg.attn_blocks * 2 * t * d * cfg.d_ff;
    }
    if (cfg.use_fno) {
        mac.propagator_local = cfg.fno_blocks * linear_macs(t, d, d);
        // complex multiply = 4 real MACs per kept mode
        mac.propagator_spectral =
            cfg.fno_blocks * 4 * std::min(cfg.fno_modes, t_freq) * d * d;
        mac.propagator_dft = cfg.fno_blocks * 2 * t * t * d;  // naive, both directions
    } else {
        mac.propagator_local = cfg.fno_blocks * linear_macs(t, d, d);
    }
    mac.decoder = linear_macs(t, d, d) + linear_macs(t, d, d) + linear_macs(t, d, cfg.n_out);
    return mac;
}

TimingReport timing_harness(const ChemNNEModel& model, const ChemDataset& ds,
                            std::size_t batch) {
    if (ds.size() == 0) throw ContractError("timing_harness: empty dataset");
    if (batch == 0) throw ContractError("timing_harness: batch must be >= 1");
    batch = std::min(batch, ds.size());
    const auto& cfg = model.config();
    if (ds.n_in != cfg.n_in || ds.n_out != cfg.n_out) {
        throw DimensionError("timing_harness: dataset shapes do not match the model");
    }

    std::vector<double> x0(ds.x0.begin(), ds.x0.begin() + static_cast<long>(batch * ds.n_in));
    std::vector<double> env(ds.env.begin(), ds.env.begin() + static_cast<long>(batch * ds.n_env));
    Tensor x0_t = Tensor::from({batch, ds.n_in}, std::move(x0));
    Tensor env_t = Tensor::from({batch, ds.n_env}, std::move(env));
    Tensor grid = model.default_time_grid();

    NoGradGuard no_grad;
    using Clock = std::chrono::steady_clock;
    constexpr int kWarmup = 3;
    constexpr int kRuns = 30;
    std::vector<double> per_sample;
    per_sample.reserve(kRuns);
    for (int run = 0; run < kWarmup + kRuns; ++run) {
        const auto start = Clock::now();
        Tensor out = model.forward(x0_t, env_t, grid);
        const auto stop = Clock::now();
        (void)out;
        if (run >= kWarmup) {
            const double secs = std::chrono::duration<double>(stop - start).count();
            per_sample.push_back(secs / static_cast<double>(batch));
        }
    }
    std::sort(per_sample.begin(), per_sample.end());
    TimingReport report;
    report.seconds_per_sample = per_sample[per_sample.size() / 2];
    report.runs = per_sample.size();
    report.batch = batch;
    return report;
}

}  // namespace chemnne

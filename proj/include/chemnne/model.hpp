#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "chemnne/dataset.hpp"
#include "chemnne/nn.hpp"

namespace chemnne {

struct ModelConfig {
    std::size_t n_in = 49;
    std::size_t n_env = 3;
    std::size_t n_out = 49;
    std::size_t n_steps = 11;
    std::size_t hidden = 128;
    std::size_t time_features = 64;  // L; 2L must equal hidden
    std::size_t attn_blocks = 2;
    std::size_t heads = 1;
    std::size_t fno_blocks = 4;
    std::size_t fno_modes = 6;
    std::size_t d_ff = 256;
    bool use_attn = true;
    bool use_time_emb = true;
    bool use_inr = true;
    bool use_fno = true;
    FnoActivation fno_activation = FnoActivation::Gelu;

    void validate() const;
};

/// The assembled emulator: encoder (input linear + sine map + attention,
/// with sinusoidal time codes), a spectral propagator applied as a residual
/// around the token path, and a shared per-token decoder head.
class ChemNNEModel {
public:
    static ChemNNEModel build(const ModelConfig& cfg, Rng& rng);

    /// x0 [B, n_in], env [B, n_env], t_grid [T] (or per-sample [B, T]) of
    /// normalized times -> [B, T, n_out].
    Tensor forward(const Tensor& x0, const Tensor& env, const Tensor& t_grid) const;

    /// Decoder output at the t = 0 token: the whole network run on the
    /// single-entry time grid {0}. Equals forward(x0, env, [0])[:, 0, :].
    Tensor predict_initial(const Tensor& x0, const Tensor& env) const;

    /// Normalized prediction times i/T, i = 1..T (t0 excluded).
    Tensor default_time_grid() const;

    const ModelConfig& config() const { return cfg_; }
    std::vector<std::pair<std::string, Tensor>>& parameters() { return params_; }
    const std::vector<std::pair<std::string, Tensor>>& parameters() const { return params_; }
    std::size_t param_count() const;
    void zero_grad();

    static std::size_t expected_param_count(const ModelConfig& cfg);

    /// Census counts for the ablation soundness check.
    std::size_t attention_param_count() const;
    std::size_t spectral_param_count() const;
    bool uses_sine() const;

    // read access to the assembled pieces (tests, reports)
    const Linear& input_linear() const { return input_linear_; }
    const InrLayer& encoder_map() const { return encoder_map_; }
    const TimeEmbedding& time_embedding() const { return time_emb_; }
    const std::vector<AttentionBlock>& attention() const { return attn_; }
    const std::vector<FnoBlock>& fno() const { return fno_; }
    const MlpDecoder& decoder() const { return decoder_; }

    ChemNNEModel(const ChemNNEModel&) = delete;
    ChemNNEModel& operator=(const ChemNNEModel&) = delete;
    ChemNNEModel(ChemNNEModel&&) = default;
    ChemNNEModel& operator=(ChemNNEModel&&) = default;

private:
    ChemNNEModel() = default;

    ModelConfig cfg_;
    Linear input_linear_;
    InrLayer encoder_map_;
    TimeEmbedding time_emb_;    // defined only when use_time_emb
    std::vector<AttentionBlock> attn_;
    std::vector<FnoBlock> fno_;
    std::vector<Linear> token_mlp_;  // propagator replacement when !use_fno
    MlpDecoder decoder_;
    std::vector<std::pair<std::string, Tensor>> params_;

    void register_params();
};

/// Analytic multiply-accumulate census for one forward pass of one sample.
struct MacCounts {
    std::size_t encoder_linear = 0;
    std::size_t encoder_map = 0;
    std::size_t time_embedding = 0;
    std::size_t attention_qkv = 0;
    std::size_t attention_mix = 0;  // scores + weighted sum
    std::size_t attention_ffn = 0;
    std::size_t propagator_local = 0;
    std::size_t propagator_spectral = 0;
    std::size_t propagator_dft = 0;
    std::size_t decoder = 0;

    std::size_t total() const;
    double total_millions() const { return static_cast<double>(total()) / 1e6; }
};

/// tokens x d_in x d_out.
constexpr std::size_t linear_macs(std::size_t tokens, std::size_t d_in, std::size_t d_out) {
    return tokens * d_in * d_out;
}

MacCounts count_macs(const ModelConfig& cfg);

struct TimingReport {
    double seconds_per_sample = 0.0;
    std::size_t runs = 0;
    std::size_t batch = 0;
};

/// Median wall-clock forward time per sample over >= 30 runs after >= 3
/// discarded warmup runs.
TimingReport timing_harness(const ChemNNEModel& model, const ChemDataset& ds,
                            std::size_t batch);

}  // namespace chemnne

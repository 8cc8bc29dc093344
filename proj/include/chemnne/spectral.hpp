#pragma once

#include <cstddef>
#include <utility>

#include "chemnne/tensor.hpp"

namespace chemnne {

/// Split-storage complex tensor; re and im always share a shape.
struct ComplexTensor {
    Tensor re;
    Tensor im;
};

/// Learnable per-mode complex mixing matrices for the spectral convolution:
/// r_re/r_im have shape [modes_kept, d_v, d_v].
struct SpectralWeights {
    std::size_t modes_kept = 0;
    Tensor r_re;
    Tensor r_im;
};

/// Number of non-redundant frequency bins of a real length-T signal.
inline std::size_t freq_bins(std::size_t t_len) { return t_len / 2 + 1; }

/// Real-input forward transform along the last axis: [.., T] -> [.., T/2+1]
/// bins, un-normalized. Differentiable (the backward is the adjoint map).
ComplexTensor dft(const Tensor& x);

/// Inverse transform to a real signal of length t_len, 1/T-normalized.
/// Bins that must be real for a real target (k = 0, and k = T/2 for even T)
/// are checked when `check_hermitian` is set; a residual imaginary part
/// raises ContractError. The unchecked variant projects it away, which is
/// what the spectral convolution wants.
Tensor idft(const ComplexTensor& spectrum, std::size_t t_len, bool check_hermitian = true);

/// Truncated spectral convolution along the time axis of z [B, T, d_v]:
/// per kept mode k, the d_v-vector of bin values is mixed by the complex
/// matrix R[k]; truncated modes are zeroed. Modes beyond what a length-T
/// signal carries are inert.
Tensor spectral_conv(const Tensor& z, const SpectralWeights& w);

/// (sum x^2, (1/T) sum w_k |X_k|^2) with Hermitian double-counting weights;
/// equal for an exact transform (Parseval).
std::pair<double, double> parseval_check(const Tensor& x);

}  // namespace chemnne

#include "chemnne/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "chemnne/errors.hpp"

namespace chemnne {

namespace {

constexpr double kTau = 6.28318530717958647692;

// Forward matrices: re = x . C, im = x . S with C,S of shape [T, K].
// C[t,k] = cos(2 pi k t / T), S[t,k] = -sin(2 pi k t / T).
void forward_matrices(std::size_t t_len, Tensor& c, Tensor& s) {
    const std::size_t k_len = freq_bins(t_len);
    std::vector<double> cv(t_len * k_len), sv(t_len * k_len);
    for (std::size_t t = 0; t < t_len; ++t) {
        for (std::size_t k = 0; k < k_len; ++k) {
            const double angle = kTau * static_cast<double>(k * t) / static_cast<double>(t_len);
            cv[t * k_len + k] = std::cos(angle);
            sv[t * k_len + k] = -std::sin(angle);
        }
    }
    c = Tensor::from({t_len, k_len}, std::move(cv));
    s = Tensor::from({t_len, k_len}, std::move(sv));
}

// Inverse matrices: x = re . A + im . B with A,B of shape [K, T] carrying
// the 1/T normalization and the Hermitian double-count weights.
void inverse_matrices(std::size_t t_len, Tensor& a, Tensor& b) {
    const std::size_t k_len = freq_bins(t_len);
    std::vector<double> av(k_len * t_len), bv(k_len * t_len);
    const double inv_t = 1.0 / static_cast<double>(t_len);
    for (std::size_t k = 0; k < k_len; ++k) {
        const bool self_conjugate = (k == 0) || (t_len % 2 == 0 && k == t_len / 2);
        const double w = self_conjugate ? 1.0 : 2.0;
        for (std::size_t t = 0; t < t_len; ++t) {
            const double angle = kTau * static_cast<double>(k * t) / static_cast<double>(t_len);
            av[k * t_len + t] = w * inv_t * std::cos(angle);
            bv[k * t_len + t] = -w * inv_t * std::sin(angle);
        }
    }
    a = Tensor::from({k_len, t_len}, std::move(av));
    b = Tensor::from({k_len, t_len}, std::move(bv));
}

}  // namespace

ComplexTensor dft(const Tensor& x) {
    if (x.rank() < 1 || x.shape().back() < 1) {
        throw DimensionError("dft: need at least one sample along the last axis");
    }
    const std::size_t t_len = x.shape().back();
    Tensor c, s;
    forward_matrices(t_len, c, s);
    if (x.rank() == 1) {
        Tensor row = reshape(x, {1, t_len});
        const std::size_t k_len = freq_bins(t_len);
        return {reshape(matmul(row, c), {k_len}), reshape(matmul(row, s), {k_len})};
    }
    return {matmul(x, c), matmul(x, s)};
}

Tensor idft(const ComplexTensor& spectrum, std::size_t t_len, bool check_hermitian) {
    if (spectrum.re.shape() != spectrum.im.shape()) {
        throw DimensionError("idft: re/im shapes differ, " + shape_str(spectrum.re.shape()) +
                             " vs " + shape_str(spectrum.im.shape()));
    }
    const std::size_t k_len = freq_bins(t_len);
    if (spectrum.re.shape().back() != k_len) {
        throw DimensionError("idft: expected " + std::to_string(k_len) +
                             " bins for length " + std::to_string(t_len) + ", got " +
                             shape_str(spectrum.re.shape()));
    }
    if (check_hermitian) {
        double scale = 1.0;
        for (const double v : spectrum.re.values()) scale = std::max(scale, std::abs(v));
        for (const double v : spectrum.im.values()) scale = std::max(scale, std::abs(v));
        const double tol = 1e-9 * scale;
        const auto im = spectrum.im.values();
        const std::size_t lanes = spectrum.im.numel() / k_len;
        for (std::size_t lane = 0; lane < lanes; ++lane) {
            if (std::abs(im[lane * k_len]) > tol ||
                (t_len % 2 == 0 && std::abs(im[lane * k_len + t_len / 2]) > tol)) {
                throw ContractError(
                    "idft: spectrum is not Hermitian-consistent with a real signal");
            }
        }
    }
    Tensor a, b;
    inverse_matrices(t_len, a, b);
    if (spectrum.re.rank() == 1) {
        Tensor re = reshape(spectrum.re, {1, k_len});
        Tensor im = reshape(spectrum.im, {1, k_len});
        return reshape(add(matmul(re, a), matmul(im, b)), {t_len});
    }
    return add(matmul(spectrum.re, a), matmul(spectrum.im, b));
}

Tensor spectral_conv(const Tensor& z, const SpectralWeights& w) {
    if (z.rank() != 3) {
        throw DimensionError("spectral_conv: expected [batch, time, d_v], got " +
                             shape_str(z.shape()));
    }
    const std::size_t batch = z.shape()[0];
    const std::size_t t_len = z.shape()[1];
    const std::size_t d_v = z.shape()[2];
    if (w.r_re.rank() != 3 || w.r_re.shape()[1] != d_v || w.r_re.shape()[2] != d_v) {
        throw DimensionError("spectral_conv: weights of shape " + shape_str(w.r_re.shape()) +
                             " do not match d_v = " + std::to_string(d_v));
    }
    if (w.r_re.shape() != w.r_im.shape() || w.r_re.shape()[0] < w.modes_kept) {
        throw DimensionError("spectral_conv: inconsistent spectral weights");
    }
    const std::size_t k_len = freq_bins(t_len);
    const std::size_t kept = std::min(w.modes_kept, k_len);

    // [B,T,d] -> [B,d,T] -> bins [B,d,K] -> [K,B,d] for per-mode mixing.
    ComplexTensor bins = dft(transpose(z, {0, 2, 1}));
    Tensor fre = transpose(bins.re, {2, 0, 1});
    Tensor fim = transpose(bins.im, {2, 0, 1});
    Tensor fre_k = slice(fre, 0, 0, kept);
    Tensor fim_k = slice(fim, 0, 0, kept);

    // out[k,b,l] = sum_j R[k,l,j] F[k,b,j]  (complex product, split form)
    Tensor rre_t = transpose_last(slice(w.r_re, 0, 0, kept));
    Tensor rim_t = transpose_last(slice(w.r_im, 0, 0, kept));
    Tensor out_re = sub(matmul(fre_k, rre_t), matmul(fim_k, rim_t));
    Tensor out_im = add(matmul(fre_k, rim_t), matmul(fim_k, rre_t));

    if (kept < k_len) {
        Tensor pad = Tensor::zeros({k_len - kept, batch, d_v});
        Tensor re_parts[] = {out_re, pad};
        Tensor im_parts[] = {out_im, pad};
        out_re = concat(re_parts, 0);
        out_im = concat(im_parts, 0);
    }

    ComplexTensor mixed{transpose(out_re, {1, 2, 0}), transpose(out_im, {1, 2, 0})};
    Tensor back = idft(mixed, t_len, /*check_hermitian=*/false);
    return transpose(back, {0, 2, 1});
}

std::pair<double, double> parseval_check(const Tensor& x) {
    if (x.rank() != 1) throw DimensionError("parseval_check: expected a 1-D signal");
    const std::size_t t_len = x.shape()[0];
    double time_energy = 0.0;
    for (const double v : x.values()) time_energy += v * v;

    NoGradGuard no_grad;
    ComplexTensor bins = dft(x);
    double freq_energy = 0.0;
    const std::size_t k_len = freq_bins(t_len);
    for (std::size_t k = 0; k < k_len; ++k) {
        const bool self_conjugate = (k == 0) || (t_len % 2 == 0 && k == t_len / 2);
        const double w = self_conjugate ? 1.0 : 2.0;
        freq_energy += w * (bins.re[k] * bins.re[k] + bins.im[k] * bins.im[k]);
    }
    freq_energy /= static_cast<double>(t_len);
    return {time_energy, freq_energy};
}

}  // namespace chemnne

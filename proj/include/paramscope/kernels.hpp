#pragma once

#include <span>
#include <vector>

#include "paramscope/tensor.hpp"

// Forward/backward kernels shared by every model family. All functions are
// pure: they read their arguments and return fresh tensors.
//
// Tensors whose leading dimensions are "batch-like" (e.g. [B,T,d]) are treated
// as a matrix of rows over the last dimension wherever a kernel operates
// per-row (linear, softmax, layer_norm).

namespace paramscope {

// ---- fully connected ------------------------------------------------------

/// y = xW + b with x [..., in], W [in, out], b [out].
Tensor linear_forward(const Tensor& x, const Tensor& W, const Tensor& b);

struct LinearGrads {
    Tensor dx;  ///< empty when not requested
    Tensor dW;
    Tensor db;
};
LinearGrads linear_backward(const Tensor& x, const Tensor& W, const Tensor& dy, bool need_dx = true);

/// y = xW without bias (attention projections).
Tensor matmul(const Tensor& x, const Tensor& W);

// ---- activations, softmax, loss ------------------------------------------

Tensor relu(const Tensor& x);
/// dx = dy where x > 0, else 0.
Tensor relu_backward(const Tensor& x, const Tensor& dy);

/// Row-wise softmax over the last dimension with max subtraction.
Tensor softmax(const Tensor& z);

/// Mean over rows of -ln p[label]. `probs` is [B, K].
double cross_entropy(const Tensor& probs, std::span<const int> labels);

/// Cross entropy straight from logits via log-sum-exp. Returns the mean loss
/// and writes softmax probabilities into `probs` when non-null.
double softmax_cross_entropy(const Tensor& logits, std::span<const int> labels, Tensor* probs = nullptr);

/// Gradient of the mean cross entropy with respect to the logits: (p - onehot) / B.
Tensor softmax_cross_entropy_backward(const Tensor& probs, std::span<const int> labels);

// ---- convolution ----------------------------------------------------------

/// Valid 3x3, stride 1 cross-correlation: x [B,Cin,H,W], k [Cout,Cin,3,3],
/// b [Cout] -> [B,Cout,H-2,W-2].
Tensor conv2d_forward(const Tensor& x, const Tensor& k, const Tensor& b);

struct Conv2dGrads {
    Tensor dx;  ///< empty when not requested
    Tensor dk;
    Tensor db;
};
Conv2dGrads conv2d_backward(const Tensor& x, const Tensor& k, const Tensor& dy, bool need_dx = true);

// ---- attention ------------------------------------------------------------

/// Intermediates kept by multi_head_attention for the backward pass.
struct AttentionCache {
    Tensor q, k, v;  ///< [B*T, d]
    Tensor probs;    ///< [B, nhead, T, T]
    Tensor concat;   ///< [B*T, d] heads before the output projection
};

/// Scaled dot-product multi-head self-attention on x [B,T,d]. Head h uses
/// columns [h*dh, (h+1)*dh) of the projections, dh = d / nhead, and scores
/// are scaled by 1/sqrt(dh). Heads are concatenated and projected by Wo.
Tensor multi_head_attention(const Tensor& x, const Tensor& Wq, const Tensor& Wk, const Tensor& Wv,
                            const Tensor& Wo, std::size_t nhead, AttentionCache* cache = nullptr);

struct AttentionGrads {
    Tensor dx, dWq, dWk, dWv, dWo;
};
AttentionGrads attention_backward(const Tensor& x, const Tensor& Wq, const Tensor& Wk, const Tensor& Wv,
                                  const Tensor& Wo, std::size_t nhead, const AttentionCache& cache,
                                  const Tensor& dy);

// ---- layer norm -----------------------------------------------------------

inline constexpr double kLayerNormEps = 1e-9;

struct LayerNormCache {
    Tensor xhat;                  ///< standardized input
    std::vector<double> inv_std;  ///< one per row
};

/// Per-row standardization over the last dimension followed by gamma*xhat + beta.
/// Denominator is sqrt(var + eps) with the population variance.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = kLayerNormEps,
                  LayerNormCache* cache = nullptr);

struct LayerNormGrads {
    Tensor dx, dgamma, dbeta;
};
LayerNormGrads layer_norm_backward(const Tensor& gamma, const LayerNormCache& cache, const Tensor& dy);

// ---- misc -----------------------------------------------------------------

void add_inplace(Tensor& a, const Tensor& b);

}  // namespace paramscope

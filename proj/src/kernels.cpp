#include "paramscope/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <utility>

#include <Eigen/Dense>

namespace paramscope {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;
using CMapVec = Eigen::Map<const Eigen::RowVectorXd>;

std::size_t last_dim(const Tensor& t) { return t.shape().back(); }
std::size_t row_count(const Tensor& t) { return t.size() / last_dim(t); }

CMapMat as_rows(const Tensor& t) {
    return CMapMat(t.data(), static_cast<Eigen::Index>(row_count(t)), static_cast<Eigen::Index>(last_dim(t)));
}
MapMat as_rows(Tensor& t) {
    return MapMat(t.data(), static_cast<Eigen::Index>(row_count(t)), static_cast<Eigen::Index>(last_dim(t)));
}

Shape with_last(Shape s, std::size_t last) {
    s.back() = last;
    return s;
}

void require(bool ok, const std::string& what) {
    if (!ok) throw ShapeError(what);
}

void check_labels(const Tensor& p, std::span<const int> labels) {
    require(p.rank() == 2, "expected [B,K] probabilities, got " + shape_str(p.shape()));
    require(labels.size() == p.dim(0), "label count does not match batch size");
    for (int y : labels)
        if (y < 0 || static_cast<std::size_t>(y) >= p.dim(1))
            throw std::out_of_range("label " + std::to_string(y) + " outside [0," + std::to_string(p.dim(1)) + ")");
}

}  // namespace

Tensor linear_forward(const Tensor& x, const Tensor& W, const Tensor& b) {
    require(W.rank() == 2, "linear: weight must be [in,out], got " + shape_str(W.shape()));
    require(last_dim(x) == W.dim(0),
            "linear: input " + shape_str(x.shape()) + " incompatible with weight " + shape_str(W.shape()));
    require(b.size() == W.dim(1), "linear: bias length must equal " + std::to_string(W.dim(1)));
    Tensor y(with_last(x.shape(), W.dim(1)));
    auto Y = as_rows(y);
    Y.noalias() = as_rows(x) * as_rows(W);
    Y.rowwise() += CMapVec(b.data(), static_cast<Eigen::Index>(b.size()));
    return y;
}

Tensor matmul(const Tensor& x, const Tensor& W) {
    require(W.rank() == 2 && last_dim(x) == W.dim(0),
            "matmul: " + shape_str(x.shape()) + " x " + shape_str(W.shape()));
    Tensor y(with_last(x.shape(), W.dim(1)));
    as_rows(y).noalias() = as_rows(x) * as_rows(W);
    return y;
}

LinearGrads linear_backward(const Tensor& x, const Tensor& W, const Tensor& dy, bool need_dx) {
    require(last_dim(x) == W.dim(0) && last_dim(dy) == W.dim(1) && row_count(x) == row_count(dy),
            "linear_backward: shape mismatch");
    LinearGrads g;
    g.dW = Tensor(W.shape());
    as_rows(g.dW).noalias() = as_rows(x).transpose() * as_rows(dy);
    g.db = Tensor({W.dim(1)});
    Eigen::Map<Eigen::RowVectorXd>(g.db.data(), static_cast<Eigen::Index>(g.db.size())) =
        as_rows(dy).colwise().sum();
    if (need_dx) {
        g.dx = Tensor(x.shape());
        as_rows(g.dx).noalias() = as_rows(dy) * as_rows(W).transpose();
    }
    return g;
}

Tensor relu(const Tensor& x) {
    Tensor y = x;
    for (auto& v : y.values()) v = v > 0.0 ? v : 0.0;
    return y;
}

Tensor relu_backward(const Tensor& x, const Tensor& dy) {
    require(x.shape() == dy.shape(), "relu_backward: shape mismatch");
    Tensor dx(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) dx[i] = x[i] > 0.0 ? dy[i] : 0.0;
    return dx;
}

Tensor softmax(const Tensor& z) {
    Tensor p(z.shape());
    const std::size_t k = last_dim(z), rows = row_count(z);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* in = z.data() + r * k;
        double* out = p.data() + r * k;
        const double mx = *std::max_element(in, in + k);
        double sum = 0.0;
        for (std::size_t j = 0; j < k; ++j) sum += (out[j] = std::exp(in[j] - mx));
        for (std::size_t j = 0; j < k; ++j) out[j] /= sum;
    }
    return p;
}

double cross_entropy(const Tensor& probs, std::span<const int> labels) {
    check_labels(probs, labels);
    const std::size_t k = probs.dim(1);
    double loss = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i) loss -= std::log(probs[i * k + static_cast<std::size_t>(labels[i])]);
    return loss / static_cast<double>(labels.size());
}

double softmax_cross_entropy(const Tensor& logits, std::span<const int> labels, Tensor* probs) {
    check_labels(logits, labels);
    const std::size_t k = logits.dim(1);
    double loss = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const double* row = logits.data() + i * k;
        const double mx = *std::max_element(row, row + k);
        double sum = 0.0;
        for (std::size_t j = 0; j < k; ++j) sum += std::exp(row[j] - mx);
        const double lse = mx + std::log(sum);
        loss += lse - row[labels[i]];
    }
    if (probs) *probs = softmax(logits);
    return loss / static_cast<double>(labels.size());
}

Tensor softmax_cross_entropy_backward(const Tensor& probs, std::span<const int> labels) {
    check_labels(probs, labels);
    Tensor d = probs;
    const std::size_t k = probs.dim(1);
    const double inv_b = 1.0 / static_cast<double>(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) d[i * k + static_cast<std::size_t>(labels[i])] -= 1.0;
    for (auto& v : d.values()) v *= inv_b;
    return d;
}

// Convolution goes through im2col: column matrix [Cin*9, Ho*Wo] per sample.
namespace {

void im2col(const double* img, std::size_t cin, std::size_t h, std::size_t w, double* cols) {
    const std::size_t ho = h - 2, wo = w - 2, plane = ho * wo;
    for (std::size_t c = 0; c < cin; ++c)
        for (std::size_t ky = 0; ky < 3; ++ky)
            for (std::size_t kx = 0; kx < 3; ++kx) {
                double* dst = cols + ((c * 3 + ky) * 3 + kx) * plane;
                const double* src = img + c * h * w + ky * w + kx;
                for (std::size_t y = 0; y < ho; ++y)
                    for (std::size_t x = 0; x < wo; ++x) dst[y * wo + x] = src[y * w + x];
            }
}

void col2im_add(const double* cols, std::size_t cin, std::size_t h, std::size_t w, double* img) {
    const std::size_t ho = h - 2, wo = w - 2, plane = ho * wo;
    for (std::size_t c = 0; c < cin; ++c)
        for (std::size_t ky = 0; ky < 3; ++ky)
            for (std::size_t kx = 0; kx < 3; ++kx) {
                const double* src = cols + ((c * 3 + ky) * 3 + kx) * plane;
                double* dst = img + c * h * w + ky * w + kx;
                for (std::size_t y = 0; y < ho; ++y)
                    for (std::size_t x = 0; x < wo; ++x) dst[y * w + x] += src[y * wo + x];
            }
}

void check_conv(const Tensor& x, const Tensor& k) {
    require(x.rank() == 4, "conv2d: input must be [B,Cin,H,W], got " + shape_str(x.shape()));
    require(k.rank() == 4 && k.dim(2) == 3 && k.dim(3) == 3,
            "conv2d: kernel must be [Cout,Cin,3,3], got " + shape_str(k.shape()));
    require(k.dim(1) == x.dim(1), "conv2d: kernel input channels do not match input");
    require(x.dim(2) >= 3 && x.dim(3) >= 3, "conv2d: spatial size must be at least 3x3");
}

}  // namespace

Tensor conv2d_forward(const Tensor& x, const Tensor& k, const Tensor& b) {
    check_conv(x, k);
    const std::size_t n = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3), cout = k.dim(0);
    require(b.size() == cout, "conv2d: bias length must equal output channels");
    const std::size_t ho = h - 2, wo = w - 2, plane = ho * wo, kk = cin * 9;
    Tensor y({n, cout, ho, wo});
    AlignedVector cols(kk * plane);
    CMapMat K(k.data(), static_cast<Eigen::Index>(cout), static_cast<Eigen::Index>(kk));
    for (std::size_t s = 0; s < n; ++s) {
        im2col(x.data() + s * cin * h * w, cin, h, w, cols.data());
        MapMat Y(y.data() + s * cout * plane, static_cast<Eigen::Index>(cout), static_cast<Eigen::Index>(plane));
        Y.noalias() = K * CMapMat(cols.data(), static_cast<Eigen::Index>(kk), static_cast<Eigen::Index>(plane));
        for (std::size_t c = 0; c < cout; ++c) Y.row(static_cast<Eigen::Index>(c)).array() += b[c];
    }
    return y;
}

Conv2dGrads conv2d_backward(const Tensor& x, const Tensor& k, const Tensor& dy, bool need_dx) {
    check_conv(x, k);
    const std::size_t n = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3), cout = k.dim(0);
    const std::size_t ho = h - 2, wo = w - 2, plane = ho * wo, kk = cin * 9;
    require(dy.shape() == Shape({n, cout, ho, wo}), "conv2d_backward: dy shape mismatch");
    Conv2dGrads g;
    g.dk = Tensor(k.shape());
    g.db = Tensor({cout});
    if (need_dx) g.dx = Tensor(x.shape());
    AlignedVector cols(kk * plane), dcols(kk * plane);
    CMapMat K(k.data(), static_cast<Eigen::Index>(cout), static_cast<Eigen::Index>(kk));
    MapMat dK(g.dk.data(), static_cast<Eigen::Index>(cout), static_cast<Eigen::Index>(kk));
    for (std::size_t s = 0; s < n; ++s) {
        im2col(x.data() + s * cin * h * w, cin, h, w, cols.data());
        CMapMat dY(dy.data() + s * cout * plane, static_cast<Eigen::Index>(cout), static_cast<Eigen::Index>(plane));
        dK.noalias() += dY * CMapMat(cols.data(), static_cast<Eigen::Index>(kk), static_cast<Eigen::Index>(plane)).transpose();
        for (std::size_t c = 0; c < cout; ++c) g.db[c] += dY.row(static_cast<Eigen::Index>(c)).sum();
        if (need_dx) {
            MapMat dC(dcols.data(), static_cast<Eigen::Index>(kk), static_cast<Eigen::Index>(plane));
            dC.noalias() = K.transpose() * dY;
            col2im_add(dcols.data(), cin, h, w, g.dx.data() + s * cin * h * w);
        }
    }
    return g;
}

Tensor multi_head_attention(const Tensor& x, const Tensor& Wq, const Tensor& Wk, const Tensor& Wv,
                            const Tensor& Wo, std::size_t nhead, AttentionCache* cache) {
    require(x.rank() == 3, "attention: input must be [B,T,d], got " + shape_str(x.shape()));
    const std::size_t nb = x.dim(0), nt = x.dim(1), d = x.dim(2);
    if (nhead == 0 || d % nhead != 0)
        throw std::invalid_argument("attention: d=" + std::to_string(d) + " not divisible by nhead=" +
                                    std::to_string(nhead));
    for (const Tensor* w : {&Wq, &Wk, &Wv, &Wo})
        require(w->shape() == Shape({d, d}), "attention: projections must be [d,d]");
    const auto dh = static_cast<Eigen::Index>(d / nhead);
    const auto T = static_cast<Eigen::Index>(nt);
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    const Tensor flat = x.reshaped({nb * nt, d});
    Tensor q = matmul(flat, Wq), k = matmul(flat, Wk), v = matmul(flat, Wv);
    Tensor probs({nb, nhead, nt, nt});
    Tensor concat({nb * nt, d});
    auto Q = as_rows(std::as_const(q)), K = as_rows(std::as_const(k)), V = as_rows(std::as_const(v));
    auto O = as_rows(concat);
    RowMat scores(T, T);
    for (std::size_t b = 0; b < nb; ++b) {
        const auto r0 = static_cast<Eigen::Index>(b * nt);
        for (std::size_t h = 0; h < nhead; ++h) {
            const auto c0 = static_cast<Eigen::Index>(h) * dh;
            scores.noalias() = scale * Q.block(r0, c0, T, dh) * K.block(r0, c0, T, dh).transpose();
            MapMat A(probs.data() + (b * nhead + h) * nt * nt, T, T);
            for (Eigen::Index i = 0; i < T; ++i) {
                const double mx = scores.row(i).maxCoeff();
                A.row(i) = (scores.row(i).array() - mx).exp();
                A.row(i) /= A.row(i).sum();
            }
            O.block(r0, c0, T, dh).noalias() = A * V.block(r0, c0, T, dh);
        }
    }
    Tensor y = matmul(concat, Wo);
    y.reshape({nb, nt, d});
    if (cache) {
        cache->q = std::move(q);
        cache->k = std::move(k);
        cache->v = std::move(v);
        cache->probs = std::move(probs);
        cache->concat = std::move(concat);
    }
    return y;
}

AttentionGrads attention_backward(const Tensor& x, const Tensor& Wq, const Tensor& Wk, const Tensor& Wv,
                                  const Tensor& Wo, std::size_t nhead, const AttentionCache& cache,
                                  const Tensor& dy) {
    const std::size_t nb = x.dim(0), nt = x.dim(1), d = x.dim(2);
    require(dy.shape() == x.shape(), "attention_backward: dy shape mismatch");
    const auto dh = static_cast<Eigen::Index>(d / nhead);
    const auto T = static_cast<Eigen::Index>(nt);
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    const Tensor flat = x.reshaped({nb * nt, d});
    const Tensor dflat = dy.reshaped({nb * nt, d});
    AttentionGrads g;
    LinearGrads out = linear_backward(cache.concat, Wo, dflat);
    g.dWo = std::move(out.dW);
    const Tensor& dconcat = out.dx;

    Tensor dq({nb * nt, d}), dk({nb * nt, d}), dv({nb * nt, d});
    auto Q = as_rows(cache.q), K = as_rows(cache.k), V = as_rows(cache.v);
    auto dO = as_rows(dconcat);
    auto dQ = as_rows(dq), dK = as_rows(dk), dV = as_rows(dv);
    RowMat dA(T, T), dS(T, T);
    for (std::size_t b = 0; b < nb; ++b) {
        const auto r0 = static_cast<Eigen::Index>(b * nt);
        for (std::size_t h = 0; h < nhead; ++h) {
            const auto c0 = static_cast<Eigen::Index>(h) * dh;
            CMapMat A(cache.probs.data() + (b * nhead + h) * nt * nt, T, T);
            auto dOh = dO.block(r0, c0, T, dh);
            dA.noalias() = dOh * V.block(r0, c0, T, dh).transpose();
            dV.block(r0, c0, T, dh).noalias() = A.transpose() * dOh;
            for (Eigen::Index i = 0; i < T; ++i) {
                const double dot = dA.row(i).dot(A.row(i));
                dS.row(i) = A.row(i).array() * (dA.row(i).array() - dot);
            }
            dS *= scale;
            dQ.block(r0, c0, T, dh).noalias() = dS * K.block(r0, c0, T, dh);
            dK.block(r0, c0, T, dh).noalias() = dS.transpose() * Q.block(r0, c0, T, dh);
        }
    }
    LinearGrads gq = linear_backward(flat, Wq, dq);
    LinearGrads gk = linear_backward(flat, Wk, dk);
    LinearGrads gv = linear_backward(flat, Wv, dv);
    g.dWq = std::move(gq.dW);
    g.dWk = std::move(gk.dW);
    g.dWv = std::move(gv.dW);
    g.dx = std::move(gq.dx);
    add_inplace(g.dx, gk.dx);
    add_inplace(g.dx, gv.dx);
    g.dx.reshape(x.shape());
    return g;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps, LayerNormCache* cache) {
    const std::size_t d = last_dim(x), rows = row_count(x);
    require(gamma.size() == d && beta.size() == d, "layer_norm: gamma/beta length must equal last dim");
    Tensor y(x.shape());
    Tensor xhat(x.shape());
    std::vector<double> inv_std(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* in = x.data() + r * d;
        double mean = 0.0;
        for (std::size_t j = 0; j < d; ++j) mean += in[j];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) var += (in[j] - mean) * (in[j] - mean);
        var /= static_cast<double>(d);
        const double is = 1.0 / std::sqrt(var + eps);
        inv_std[r] = is;
        for (std::size_t j = 0; j < d; ++j) {
            const double xh = (in[j] - mean) * is;
            xhat[r * d + j] = xh;
            y[r * d + j] = gamma[j] * xh + beta[j];
        }
    }
    if (cache) {
        cache->xhat = std::move(xhat);
        cache->inv_std = std::move(inv_std);
    }
    return y;
}

LayerNormGrads layer_norm_backward(const Tensor& gamma, const LayerNormCache& cache, const Tensor& dy) {
    const Tensor& xhat = cache.xhat;
    require(dy.shape() == xhat.shape(), "layer_norm_backward: dy shape mismatch");
    const std::size_t d = last_dim(dy), rows = row_count(dy);
    LayerNormGrads g{Tensor(dy.shape()), Tensor({d}), Tensor({d})};
    const double inv_d = 1.0 / static_cast<double>(d);
    std::vector<double> dxh(d);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* gy = dy.data() + r * d;
        const double* xh = xhat.data() + r * d;
        double sum = 0.0, sum_x = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            g.dgamma[j] += gy[j] * xh[j];
            g.dbeta[j] += gy[j];
            dxh[j] = gy[j] * gamma[j];
            sum += dxh[j];
            sum_x += dxh[j] * xh[j];
        }
        double* out = g.dx.data() + r * d;
        for (std::size_t j = 0; j < d; ++j)
            out[j] = cache.inv_std[r] * (dxh[j] - inv_d * sum - xh[j] * inv_d * sum_x);
    }
    return g;
}

void add_inplace(Tensor& a, const Tensor& b) {
    require(a.size() == b.size(), "add: size mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

}  // namespace paramscope

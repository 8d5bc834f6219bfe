#pragma once

// Layer kernels of the 1D network. Single-sample tensors are stored
// channel-major, x[c * len + i]; batches stack samples back to back.
// Backward routines accumulate parameter gradients (callers zero them).

#include <algorithm>
#include <cmath>
#include <cstddef>

namespace thzleaf::cnn {

/// Deterministic dot product with eight interleaved partial sums.
template <class T>
T dot(const T* a, const T* b, std::size_t n) {
  T acc[8] = {};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    for (int l = 0; l < 8; ++l) acc[l] += a[i + l] * b[i + l];
  T s = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

/// Cross-correlation with zero padding k/2 on both sides (same length):
/// y[o][i] = b[o] + sum_c sum_j w[o][c][j] * x[c][i + j - k/2].
template <class T>
void conv1d_forward(const T* x, std::size_t cin, std::size_t len, const T* w, const T* b, std::size_t cout,
                    std::size_t k, T* y) {
  const auto pad = static_cast<std::ptrdiff_t>(k / 2);
  const auto n = static_cast<std::ptrdiff_t>(len);
  for (std::size_t o = 0; o < cout; ++o) {
    T* yo = y + o * len;
    std::fill(yo, yo + len, b ? b[o] : T(0));
    for (std::size_t c = 0; c < cin; ++c) {
      const T* xc = x + c * len;
      for (std::size_t j = 0; j < k; ++j) {
        const T wv = w[(o * cin + c) * k + j];
        const std::ptrdiff_t s = static_cast<std::ptrdiff_t>(j) - pad;
        const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, -s), hi = std::min(n, n - s);
        for (std::ptrdiff_t i = lo; i < hi; ++i) yo[i] += wv * xc[i + s];
      }
    }
  }
}

/// dx (optional, overwritten), dw and db (accumulated) from dy.
template <class T>
void conv1d_backward(const T* x, std::size_t cin, std::size_t len, const T* w, std::size_t cout, std::size_t k,
                     const T* dy, T* dx, T* dw, T* db) {
  const auto pad = static_cast<std::ptrdiff_t>(k / 2);
  const auto n = static_cast<std::ptrdiff_t>(len);
  if (dx) std::fill(dx, dx + cin * len, T(0));
  for (std::size_t o = 0; o < cout; ++o) {
    const T* dyo = dy + o * len;
    if (db) {
      T s = 0;
      for (std::size_t i = 0; i < len; ++i) s += dyo[i];
      db[o] += s;
    }
    for (std::size_t c = 0; c < cin; ++c) {
      const T* xc = x + c * len;
      for (std::size_t j = 0; j < k; ++j) {
        const std::ptrdiff_t s = static_cast<std::ptrdiff_t>(j) - pad;
        const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, -s), hi = std::min(n, n - s);
        if (hi <= lo) continue;
        dw[(o * cin + c) * k + j] += dot(dyo + lo, xc + lo + s, static_cast<std::size_t>(hi - lo));
        if (dx) {
          const T wv = w[(o * cin + c) * k + j];
          T* dxc = dx + c * len;
          for (std::ptrdiff_t i = lo; i < hi; ++i) dxc[i + s] += wv * dyo[i];
        }
      }
    }
  }
}

/// Max over non-overlapping pairs; an odd trailing element is dropped and
/// ties go to the earlier index.
template <class T>
void maxpool_forward(const T* x, std::size_t channels, std::size_t len, T* y, int* argmax) {
  const std::size_t out = len / 2;
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t i = 0; i < out; ++i) {
      const T a = x[c * len + 2 * i], b = x[c * len + 2 * i + 1];
      const bool second = b > a;
      y[c * out + i] = second ? b : a;
      if (argmax) argmax[c * out + i] = static_cast<int>(2 * i + (second ? 1 : 0));
    }
}

/// Overwrites dx (channels * len) with dy routed to the argmax positions.
template <class T>
void maxpool_backward(const T* dy, const int* argmax, std::size_t channels, std::size_t len, T* dx) {
  const std::size_t out = len / 2;
  std::fill(dx, dx + channels * len, T(0));
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t i = 0; i < out; ++i) dx[c * len + static_cast<std::size_t>(argmax[c * out + i])] += dy[c * out + i];
}

/// y = W x + b with W stored row-major [out][in].
template <class T>
void dense_forward(const T* x, std::size_t in, const T* w, const T* b, std::size_t out, T* y) {
  for (std::size_t o = 0; o < out; ++o) y[o] = b[o] + dot(w + o * in, x, in);
}

template <class T>
void dense_backward(const T* x, std::size_t in, const T* w, std::size_t out, const T* dy, T* dx, T* dw, T* db) {
  if (dx) std::fill(dx, dx + in, T(0));
  for (std::size_t o = 0; o < out; ++o) {
    const T g = dy[o];
    db[o] += g;
    T* dwo = dw + o * in;
    for (std::size_t i = 0; i < in; ++i) dwo[i] += g * x[i];
    if (dx) {
      const T* wo = w + o * in;
      for (std::size_t i = 0; i < in; ++i) dx[i] += g * wo[i];
    }
  }
}

template <class T>
void relu_inplace(T* x, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) x[i] = x[i] > T(0) ? x[i] : T(0);
}

struct BatchNormConfig {
  double momentum = 0.1;  // running <- (1 - m) running + m batch
  double eps = 1e-5;
};

/// In-place batch norm over a batch of `batch` samples, each channels x len.
/// Training mode normalises with the biased batch variance per channel over
/// batch and length, stores x_hat and 1/sqrt(var + eps) for the backward pass,
/// and updates the running statistics with the unbiased variance.
/// Inference mode uses the running statistics.
template <class T>
void batchnorm_forward(T* x, std::size_t batch, std::size_t channels, std::size_t len, const T* gamma,
                       const T* beta, T* running_mean, T* running_var, bool training, const BatchNormConfig& cfg,
                       T* xhat, T* invstd) {
  const std::size_t count = batch * len;
  for (std::size_t c = 0; c < channels; ++c) {
    T mean, inv;
    if (training) {
      double s = 0.0;
      for (std::size_t b = 0; b < batch; ++b) {
        const T* p = x + (b * channels + c) * len;
        for (std::size_t i = 0; i < len; ++i) s += static_cast<double>(p[i]);
      }
      const double m = s / static_cast<double>(count);
      double v = 0.0;
      for (std::size_t b = 0; b < batch; ++b) {
        const T* p = x + (b * channels + c) * len;
        for (std::size_t i = 0; i < len; ++i) v += (static_cast<double>(p[i]) - m) * (static_cast<double>(p[i]) - m);
      }
      const double var = v / static_cast<double>(count);
      mean = static_cast<T>(m);
      inv = static_cast<T>(1.0 / std::sqrt(var + cfg.eps));
      if (invstd) invstd[c] = inv;
      if (running_mean && running_var) {
        const double unbiased = count > 1 ? v / static_cast<double>(count - 1) : var;
        running_mean[c] = static_cast<T>((1.0 - cfg.momentum) * running_mean[c] + cfg.momentum * m);
        running_var[c] = static_cast<T>((1.0 - cfg.momentum) * running_var[c] + cfg.momentum * unbiased);
      }
    } else {
      mean = running_mean[c];
      inv = static_cast<T>(1.0 / std::sqrt(static_cast<double>(running_var[c]) + cfg.eps));
    }
    const T g = gamma[c], be = beta[c];
    for (std::size_t b = 0; b < batch; ++b) {
      T* p = x + (b * channels + c) * len;
      T* h = xhat ? xhat + (b * channels + c) * len : nullptr;
      for (std::size_t i = 0; i < len; ++i) {
        const T n = (p[i] - mean) * inv;
        if (h) h[i] = n;
        p[i] = g * n + be;
      }
    }
  }
}

/// dy -> dx in place (training-mode statistics), accumulating dgamma, dbeta.
template <class T>
void batchnorm_backward(T* dy, const T* xhat, const T* invstd, std::size_t batch, std::size_t channels,
                        std::size_t len, const T* gamma, T* dgamma, T* dbeta) {
  const auto count = static_cast<double>(batch * len);
  for (std::size_t c = 0; c < channels; ++c) {
    double sdy = 0.0, sdyx = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
      const T* d = dy + (b * channels + c) * len;
      const T* h = xhat + (b * channels + c) * len;
      for (std::size_t i = 0; i < len; ++i) {
        sdy += static_cast<double>(d[i]);
        sdyx += static_cast<double>(d[i]) * static_cast<double>(h[i]);
      }
    }
    dgamma[c] += static_cast<T>(sdyx);
    dbeta[c] += static_cast<T>(sdy);
    const T scale = static_cast<T>(static_cast<double>(gamma[c]) * static_cast<double>(invstd[c]));
    const T mdy = static_cast<T>(sdy / count), mdyx = static_cast<T>(sdyx / count);
    for (std::size_t b = 0; b < batch; ++b) {
      T* d = dy + (b * channels + c) * len;
      const T* h = xhat + (b * channels + c) * len;
      for (std::size_t i = 0; i < len; ++i) d[i] = scale * (d[i] - mdy - h[i] * mdyx);
    }
  }
}

}  // namespace thzleaf::cnn

#include "freetrain/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

namespace freetrain {

namespace {

template <class... Parts>
std::string cat(const Parts&... parts) {
  std::ostringstream out;
  (out << ... << parts);
  return out.str();
}

void expect(bool ok, const std::string& msg) {
  if (!ok) throw TensorError(msg);
}

void expect_inputs(OpKind kind, std::size_t got, std::size_t lo, std::size_t hi) {
  expect(got >= lo && got <= hi,
         cat(op_name(kind), ": expected ", lo == hi ? cat(lo) : cat(lo, " to ", hi),
             " inputs, got ", got));
}

void check_labels(OpKind kind, const OpAttrs& attrs, std::size_t batch,
                  std::size_t classes) {
  expect(attrs.labels.size() == batch,
         cat(op_name(kind), ": expected ", batch, " labels, got ",
             attrs.labels.size()));
  for (std::size_t i = 0; i < attrs.labels.size(); ++i) {
    const int y = attrs.labels[i];
    expect(y >= 0 && static_cast<std::size_t>(y) < classes,
           cat(op_name(kind), ": label ", y, " at position ", i,
               " outside expected range [0, ", classes, ")"));
  }
}

struct ConvDims {
  std::size_t batch, ci, h, w;      // input
  std::size_t co, kh, kw;           // kernel
  std::size_t ho, wo;               // output
  std::size_t k() const { return ci * kh * kw; }
  std::size_t n() const { return ho * wo; }
};

ConvDims conv_dims(const Tensor& x, const Tensor& w, const Tensor* bias,
                   const OpAttrs& attrs) {
  expect(x.rank() == 4, cat("conv2d: input expected rank 4 [B, Ci, H, W], got ",
                            shape_str(x.shape)));
  expect(w.rank() == 4, cat("conv2d: kernel expected rank 4 [Co, Ci, kh, kw], got ",
                            shape_str(w.shape)));
  expect(attrs.stride >= 1, cat("conv2d: stride expected >= 1, got ", attrs.stride));
  expect(attrs.padding >= 0,
         cat("conv2d: padding expected >= 0, got ", attrs.padding));
  ConvDims d;
  d.batch = x.shape[0];
  d.ci = x.shape[1];
  d.h = x.shape[2];
  d.w = x.shape[3];
  d.co = w.shape[0];
  d.kh = w.shape[2];
  d.kw = w.shape[3];
  expect(w.shape[1] == d.ci,
         cat("conv2d: kernel expected ", d.ci, " input channels, got ", w.shape[1]));
  const std::size_t pad = static_cast<std::size_t>(attrs.padding);
  const std::size_t stride = static_cast<std::size_t>(attrs.stride);
  expect(d.h + 2 * pad >= d.kh && d.w + 2 * pad >= d.kw,
         cat("conv2d: kernel ", d.kh, "x", d.kw, " larger than padded input ",
             d.h + 2 * pad, "x", d.w + 2 * pad));
  d.ho = (d.h + 2 * pad - d.kh) / stride + 1;
  d.wo = (d.w + 2 * pad - d.kw) / stride + 1;
  if (bias)
    expect(bias->shape == std::vector<std::size_t>{d.co},
           cat("conv2d: bias expected shape [", d.co, "], got ",
               shape_str(bias->shape)));
  return d;
}

// Unrolls one image into a [Ci*kh*kw, Ho*Wo] matrix; out-of-bounds taps are 0.
void im2col(const float* x, const ConvDims& d, int stride, int padding,
            float* col) {
  const std::size_t n = d.n();
  for (std::size_t ci = 0; ci < d.ci; ++ci)
    for (std::size_t ki = 0; ki < d.kh; ++ki)
      for (std::size_t kj = 0; kj < d.kw; ++kj) {
        float* row = col + ((ci * d.kh + ki) * d.kw + kj) * n;
        for (std::size_t ho = 0; ho < d.ho; ++ho) {
          const std::ptrdiff_t hi =
              static_cast<std::ptrdiff_t>(ho * stride + ki) - padding;
          for (std::size_t wo = 0; wo < d.wo; ++wo) {
            const std::ptrdiff_t wi =
                static_cast<std::ptrdiff_t>(wo * stride + kj) - padding;
            const bool in = hi >= 0 && hi < static_cast<std::ptrdiff_t>(d.h) &&
                            wi >= 0 && wi < static_cast<std::ptrdiff_t>(d.w);
            row[ho * d.wo + wo] = in ? x[(ci * d.h + hi) * d.w + wi] : 0.0f;
          }
        }
      }
}

// Scatter-add of a column matrix back onto one image.
void col2im_add(const float* col, const ConvDims& d, int stride, int padding,
                float* x) {
  const std::size_t n = d.n();
  for (std::size_t ci = 0; ci < d.ci; ++ci)
    for (std::size_t ki = 0; ki < d.kh; ++ki)
      for (std::size_t kj = 0; kj < d.kw; ++kj) {
        const float* row = col + ((ci * d.kh + ki) * d.kw + kj) * n;
        for (std::size_t ho = 0; ho < d.ho; ++ho) {
          const std::ptrdiff_t hi =
              static_cast<std::ptrdiff_t>(ho * stride + ki) - padding;
          if (hi < 0 || hi >= static_cast<std::ptrdiff_t>(d.h)) continue;
          for (std::size_t wo = 0; wo < d.wo; ++wo) {
            const std::ptrdiff_t wi =
                static_cast<std::ptrdiff_t>(wo * stride + kj) - padding;
            if (wi < 0 || wi >= static_cast<std::ptrdiff_t>(d.w)) continue;
            x[(ci * d.h + hi) * d.w + wi] += row[ho * d.wo + wo];
          }
        }
      }
}

std::vector<float> transposed(const float* a, std::size_t rows, std::size_t cols) {
  std::vector<float> t(rows * cols);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) t[j * rows + i] = a[i * cols + j];
  return t;
}

struct PoolDims {
  std::size_t batch, c, h, w, ho, wo;
};

PoolDims pool_dims(const Tensor& x, const OpAttrs& attrs) {
  expect(x.rank() == 4, cat("maxpool2d: input expected rank 4 [B, C, H, W], got ",
                            shape_str(x.shape)));
  expect(attrs.window >= 1,
         cat("maxpool2d: window expected >= 1, got ", attrs.window));
  expect(attrs.stride >= 1,
         cat("maxpool2d: stride expected >= 1, got ", attrs.stride));
  PoolDims d;
  d.batch = x.shape[0];
  d.c = x.shape[1];
  d.h = x.shape[2];
  d.w = x.shape[3];
  const std::size_t win = static_cast<std::size_t>(attrs.window);
  expect(d.h >= win && d.w >= win,
         cat("maxpool2d: window ", win, " larger than input ", d.h, "x", d.w));
  d.ho = (d.h - win) / attrs.stride + 1;
  d.wo = (d.w - win) / attrs.stride + 1;
  return d;
}

void check_logits(OpKind kind, const Tensor& z) {
  expect(z.rank() == 2, cat(op_name(kind), ": logits expected rank 2 [B, C], got ",
                            shape_str(z.shape)));
}

}  // namespace

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::MatMul: return "matmul";
    case OpKind::Add: return "add";
    case OpKind::Relu: return "relu";
    case OpKind::Conv2d: return "conv2d";
    case OpKind::MaxPool2d: return "maxpool2d";
    case OpKind::Flatten: return "flatten";
    case OpKind::SoftmaxCrossEntropy: return "softmax_cross_entropy";
    case OpKind::CwMargin: return "cw_margin";
    case OpKind::BatchMean: return "batch_mean";
    case OpKind::ScalarMul: return "scalar_mul";
  }
  return "unknown";
}

void matmul_accumulate(const float* a, const float* b, float* c, std::size_t m,
                       std::size_t k, std::size_t n, bool accumulate) {
  std::vector<double> acc(n);
  for (std::size_t i = 0; i < m; ++i) {
    float* crow = c + i * n;
    if (accumulate)
      for (std::size_t j = 0; j < n; ++j) acc[j] = crow[j];
    else
      std::fill(acc.begin(), acc.end(), 0.0);
    const float* arow = a + i * k;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double av = arow[kk];
      const float* brow = b + kk * n;
      for (std::size_t j = 0; j < n; ++j) acc[j] += av * brow[j];
    }
    for (std::size_t j = 0; j < n; ++j) crow[j] = static_cast<float>(acc[j]);
  }
}

OpResult eval_primitive(OpKind kind, const std::vector<const Tensor*>& inputs,
                        const OpAttrs& attrs) {
  OpResult r;
  switch (kind) {
    case OpKind::MatMul: {
      expect_inputs(kind, inputs.size(), 2, 2);
      const Tensor& a = *inputs[0];
      const Tensor& b = *inputs[1];
      expect(a.rank() == 2 && b.rank() == 2,
             cat("matmul: expected rank-2 operands, got ", shape_str(a.shape),
                 " and ", shape_str(b.shape)));
      expect(a.shape[1] == b.shape[0],
             cat("matmul: ", shape_str(a.shape), " by ", shape_str(b.shape),
                 ": expected inner dimensions to match (", a.shape[1], " vs ",
                 b.shape[0], ")"));
      r.value = Tensor::zeros({a.shape[0], b.shape[1]});
      matmul_accumulate(a.data.data(), b.data.data(), r.value.data.data(),
                        a.shape[0], a.shape[1], b.shape[1], false);
      break;
    }
    case OpKind::Add: {
      expect_inputs(kind, inputs.size(), 2, 2);
      const Tensor& a = *inputs[0];
      const Tensor& b = *inputs[1];
      if (a.same_shape(b)) {
        r.value = a;
        for (std::size_t i = 0; i < b.numel(); ++i) r.value.data[i] += b.data[i];
      } else {
        const bool bias_like =
            a.rank() >= 2 &&
            std::equal(a.shape.begin() + 1, a.shape.end(), b.shape.begin(),
                       b.shape.end());
        expect(bias_like, cat("add: ", shape_str(a.shape), " + ",
                              shape_str(b.shape),
                              ": expected equal shapes or a bias broadcast over "
                              "the leading batch axis"));
        r.value = a;
        const std::size_t rest = b.numel();
        for (std::size_t i = 0; i < a.shape[0]; ++i)
          for (std::size_t j = 0; j < rest; ++j)
            r.value.data[i * rest + j] += b.data[j];
      }
      break;
    }
    case OpKind::Relu: {
      expect_inputs(kind, inputs.size(), 1, 1);
      r.value = *inputs[0];
      for (auto& v : r.value.data) v = v > 0.0f ? v : 0.0f;
      break;
    }
    case OpKind::Conv2d: {
      expect_inputs(kind, inputs.size(), 2, 3);
      const Tensor& x = *inputs[0];
      const Tensor& w = *inputs[1];
      const Tensor* bias = inputs.size() == 3 ? inputs[2] : nullptr;
      const ConvDims d = conv_dims(x, w, bias, attrs);
      r.value = Tensor::zeros({d.batch, d.co, d.ho, d.wo});
      const std::size_t k = d.k(), n = d.n();
      std::vector<float> col(k * n);
      for (std::size_t b = 0; b < d.batch; ++b) {
        im2col(x.data.data() + b * d.ci * d.h * d.w, d, attrs.stride,
               attrs.padding, col.data());
        float* out = r.value.data.data() + b * d.co * n;
        if (bias)
          for (std::size_t co = 0; co < d.co; ++co)
            std::fill(out + co * n, out + (co + 1) * n, bias->data[co]);
        matmul_accumulate(w.data.data(), col.data(), out, d.co, k, n,
                          bias != nullptr);
      }
      break;
    }
    case OpKind::MaxPool2d: {
      expect_inputs(kind, inputs.size(), 1, 1);
      const Tensor& x = *inputs[0];
      const PoolDims d = pool_dims(x, attrs);
      r.value = Tensor::zeros({d.batch, d.c, d.ho, d.wo});
      r.aux_idx.resize(r.value.numel());
      const std::size_t win = static_cast<std::size_t>(attrs.window);
      std::size_t o = 0;
      for (std::size_t b = 0; b < d.batch; ++b)
        for (std::size_t c = 0; c < d.c; ++c) {
          const float* plane = x.data.data() + (b * d.c + c) * d.h * d.w;
          const std::size_t base = (b * d.c + c) * d.h * d.w;
          for (std::size_t ho = 0; ho < d.ho; ++ho)
            for (std::size_t wo = 0; wo < d.wo; ++wo, ++o) {
              const std::size_t h0 = ho * attrs.stride, w0 = wo * attrs.stride;
              float best = plane[h0 * d.w + w0];
              std::size_t best_at = h0 * d.w + w0;
              for (std::size_t i = 0; i < win; ++i)
                for (std::size_t j = 0; j < win; ++j) {
                  const std::size_t at = (h0 + i) * d.w + (w0 + j);
                  if (plane[at] > best) {  // first maximum wins ties
                    best = plane[at];
                    best_at = at;
                  }
                }
              r.value.data[o] = best;
              r.aux_idx[o] = static_cast<std::int32_t>(base + best_at);
            }
        }
      break;
    }
    case OpKind::Flatten: {
      expect_inputs(kind, inputs.size(), 1, 1);
      const Tensor& x = *inputs[0];
      expect(x.rank() >= 2, cat("flatten: expected rank >= 2, got ",
                                shape_str(x.shape)));
      r.value.shape = {x.shape[0], x.numel() / x.shape[0]};
      r.value.data = x.data;
      break;
    }
    case OpKind::SoftmaxCrossEntropy: {
      expect_inputs(kind, inputs.size(), 1, 1);
      const Tensor& z = *inputs[0];
      check_logits(kind, z);
      const std::size_t batch = z.shape[0], classes = z.shape[1];
      check_labels(kind, attrs, batch, classes);
      r.value = Tensor::zeros({batch});
      r.aux = Tensor::zeros({batch, classes});
      for (std::size_t b = 0; b < batch; ++b) {
        const float* row = z.data.data() + b * classes;
        float peak = row[0];
        for (std::size_t j = 1; j < classes; ++j) peak = std::max(peak, row[j]);
        double sum = 0.0;
        for (std::size_t j = 0; j < classes; ++j)
          sum += std::exp(static_cast<double>(row[j]) - peak);
        for (std::size_t j = 0; j < classes; ++j)
          r.aux.data[b * classes + j] = static_cast<float>(
              std::exp(static_cast<double>(row[j]) - peak) / sum);
        const int y = attrs.labels[b];
        r.value.data[b] = static_cast<float>(
            std::log(sum) - (static_cast<double>(row[y]) - peak));
      }
      break;
    }
    case OpKind::CwMargin: {
      expect_inputs(kind, inputs.size(), 1, 1);
      const Tensor& z = *inputs[0];
      check_logits(kind, z);
      const std::size_t batch = z.shape[0], classes = z.shape[1];
      expect(classes >= 2, cat("cw_margin: expected >= 2 classes, got ", classes));
      check_labels(kind, attrs, batch, classes);
      r.value = Tensor::zeros({batch});
      r.aux_idx.resize(batch);
      for (std::size_t b = 0; b < batch; ++b) {
        const float* row = z.data.data() + b * classes;
        const std::size_t y = static_cast<std::size_t>(attrs.labels[b]);
        std::size_t best = y == 0 ? 1 : 0;
        for (std::size_t j = 0; j < classes; ++j)
          if (j != y && row[j] > row[best]) best = j;  // first maximum wins ties
        r.value.data[b] = row[best] - row[y];
        r.aux_idx[b] = static_cast<std::int32_t>(best);
      }
      break;
    }
    case OpKind::BatchMean: {
      expect_inputs(kind, inputs.size(), 1, 1);
      const Tensor& x = *inputs[0];
      expect(x.numel() > 0, "batch_mean: expected a non-empty input");
      double sum = 0.0;
      for (float v : x.data) sum += v;
      r.value = Tensor::scalar(
          static_cast<float>(sum / static_cast<double>(x.numel())));
      break;
    }
    case OpKind::ScalarMul: {
      expect_inputs(kind, inputs.size(), 1, 1);
      r.value = *inputs[0];
      for (auto& v : r.value.data) v *= attrs.scalar;
      break;
    }
  }
  expect(r.value.all_finite(), cat(op_name(kind), ": non-finite output"));
  return r;
}

Tensor apply_primitive(OpKind kind, const std::vector<Tensor>& inputs,
                       const OpAttrs& attrs) {
  std::vector<const Tensor*> ptrs;
  ptrs.reserve(inputs.size());
  for (const Tensor& t : inputs) ptrs.push_back(&t);
  return eval_primitive(kind, ptrs, attrs).value;
}

void backward_primitive(OpKind kind, const std::vector<const Tensor*>& inputs,
                        const OpAttrs& attrs, const OpResult& saved,
                        const Tensor& grad_out, std::vector<Tensor*>& grads_in) {
  switch (kind) {
    case OpKind::MatMul: {
      const Tensor& a = *inputs[0];
      const Tensor& b = *inputs[1];
      const std::size_t m = a.shape[0], k = a.shape[1], n = b.shape[1];
      if (grads_in[0]) {
        std::vector<float> bt = transposed(b.data.data(), k, n);
        matmul_accumulate(grad_out.data.data(), bt.data(),
                          grads_in[0]->data.data(), m, n, k, true);
      }
      if (grads_in[1]) {
        std::vector<float> at = transposed(a.data.data(), m, k);
        matmul_accumulate(at.data(), grad_out.data.data(),
                          grads_in[1]->data.data(), k, m, n, true);
      }
      break;
    }
    case OpKind::Add: {
      const Tensor& a = *inputs[0];
      const Tensor& b = *inputs[1];
      if (grads_in[0])
        for (std::size_t i = 0; i < a.numel(); ++i)
          grads_in[0]->data[i] += grad_out.data[i];
      if (grads_in[1]) {
        if (a.same_shape(b)) {
          for (std::size_t i = 0; i < b.numel(); ++i)
            grads_in[1]->data[i] += grad_out.data[i];
        } else {
          const std::size_t rest = b.numel();
          std::vector<double> acc(rest, 0.0);
          for (std::size_t i = 0; i < a.shape[0]; ++i)
            for (std::size_t j = 0; j < rest; ++j)
              acc[j] += grad_out.data[i * rest + j];
          for (std::size_t j = 0; j < rest; ++j)
            grads_in[1]->data[j] =
                static_cast<float>(grads_in[1]->data[j] + acc[j]);
        }
      }
      break;
    }
    case OpKind::Relu: {
      if (grads_in[0]) {
        const Tensor& x = *inputs[0];
        for (std::size_t i = 0; i < x.numel(); ++i)
          if (x.data[i] > 0.0f) grads_in[0]->data[i] += grad_out.data[i];
      }
      break;
    }
    case OpKind::Conv2d: {
      const Tensor& x = *inputs[0];
      const Tensor& w = *inputs[1];
      const Tensor* bias = inputs.size() == 3 ? inputs[2] : nullptr;
      const ConvDims d = conv_dims(x, w, bias, attrs);
      const std::size_t k = d.k(), n = d.n();
      std::vector<float> col(k * n), colt, dcol;
      std::vector<float> wt;
      if (grads_in[0]) {
        wt = transposed(w.data.data(), d.co, k);
        dcol.resize(k * n);
      }
      for (std::size_t b = 0; b < d.batch; ++b) {
        const float* gout = grad_out.data.data() + b * d.co * n;
        if (grads_in[0] || grads_in[1])
          im2col(x.data.data() + b * d.ci * d.h * d.w, d, attrs.stride,
                 attrs.padding, col.data());
        if (grads_in[1]) {
          colt = transposed(col.data(), k, n);
          matmul_accumulate(gout, colt.data(), grads_in[1]->data.data(), d.co, n,
                            k, true);
        }
        if (grads_in[0]) {
          matmul_accumulate(wt.data(), gout, dcol.data(), k, d.co, n, false);
          col2im_add(dcol.data(), d, attrs.stride, attrs.padding,
                     grads_in[0]->data.data() + b * d.ci * d.h * d.w);
        }
      }
      if (bias && grads_in[2]) {
        for (std::size_t co = 0; co < d.co; ++co) {
          double acc = 0.0;
          for (std::size_t b = 0; b < d.batch; ++b) {
            const float* gout = grad_out.data.data() + (b * d.co + co) * n;
            for (std::size_t i = 0; i < n; ++i) acc += gout[i];
          }
          grads_in[2]->data[co] =
              static_cast<float>(grads_in[2]->data[co] + acc);
        }
      }
      break;
    }
    case OpKind::MaxPool2d: {
      if (grads_in[0])
        for (std::size_t o = 0; o < grad_out.numel(); ++o)
          grads_in[0]->data[static_cast<std::size_t>(saved.aux_idx[o])] +=
              grad_out.data[o];
      break;
    }
    case OpKind::Flatten: {
      if (grads_in[0])
        for (std::size_t i = 0; i < grad_out.numel(); ++i)
          grads_in[0]->data[i] += grad_out.data[i];
      break;
    }
    case OpKind::SoftmaxCrossEntropy: {
      if (grads_in[0]) {
        const std::size_t batch = inputs[0]->shape[0],
                          classes = inputs[0]->shape[1];
        for (std::size_t b = 0; b < batch; ++b) {
          const float g = grad_out.data[b];
          const std::size_t y = static_cast<std::size_t>(attrs.labels[b]);
          for (std::size_t j = 0; j < classes; ++j) {
            const float p = saved.aux.data[b * classes + j];
            grads_in[0]->data[b * classes + j] +=
                g * (p - (j == y ? 1.0f : 0.0f));
          }
        }
      }
      break;
    }
    case OpKind::CwMargin: {
      if (grads_in[0]) {
        const std::size_t batch = inputs[0]->shape[0],
                          classes = inputs[0]->shape[1];
        for (std::size_t b = 0; b < batch; ++b) {
          const float g = grad_out.data[b];
          const std::size_t y = static_cast<std::size_t>(attrs.labels[b]);
          const std::size_t runner = static_cast<std::size_t>(saved.aux_idx[b]);
          grads_in[0]->data[b * classes + runner] += g;
          grads_in[0]->data[b * classes + y] -= g;
        }
      }
      break;
    }
    case OpKind::BatchMean: {
      if (grads_in[0]) {
        const std::size_t n = inputs[0]->numel();
        const float g = static_cast<float>(static_cast<double>(grad_out.data[0]) /
                                           static_cast<double>(n));
        for (std::size_t i = 0; i < n; ++i) grads_in[0]->data[i] += g;
      }
      break;
    }
    case OpKind::ScalarMul: {
      if (grads_in[0])
        for (std::size_t i = 0; i < grad_out.numel(); ++i)
          grads_in[0]->data[i] += attrs.scalar * grad_out.data[i];
      break;
    }
  }
}

}  // namespace freetrain

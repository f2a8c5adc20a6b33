#include "pnnunet/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace pnn {

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ')';
  return os.str();
}

namespace {

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using MatMap = Eigen::Map<RowMatrix<Scalar>>;
template <typename Scalar>
using ConstMatMap = Eigen::Map<const RowMatrix<Scalar>>;

void require_rank(const Shape& s, int rank, const char* what) {
  if (static_cast<int>(s.size()) != rank)
    throw ShapeError(std::string(what) + " expects rank " + std::to_string(rank) + ", got " + shape_string(s));
}

struct ConvGeometry {
  Index channels, height, width, kh, kw, out_h, out_w;
  int stride, padding;
  Index patch() const { return channels * kh * kw; }
  Index pixels() const { return out_h * out_w; }
};

// cols has patch() rows and pixels() columns, row-major.
template <typename Scalar>
void im2col(const Scalar* image, const ConvGeometry& g, Scalar* cols) {
  for (Index c = 0; c < g.channels; ++c)
    for (Index i = 0; i < g.kh; ++i)
      for (Index j = 0; j < g.kw; ++j) {
        Scalar* row = cols + ((c * g.kh + i) * g.kw + j) * g.pixels();
        for (Index y = 0; y < g.out_h; ++y) {
          const Index iy = y * g.stride + i - g.padding;
          Scalar* dst = row + y * g.out_w;
          if (iy < 0 || iy >= g.height) {
            std::fill(dst, dst + g.out_w, Scalar(0));
            continue;
          }
          const Scalar* src = image + (c * g.height + iy) * g.width;
          for (Index x = 0; x < g.out_w; ++x) {
            const Index ix = x * g.stride + j - g.padding;
            dst[x] = (ix >= 0 && ix < g.width) ? src[ix] : Scalar(0);
          }
        }
      }
}

template <typename Scalar>
void col2im_add(const Scalar* cols, const ConvGeometry& g, Scalar* image) {
  for (Index c = 0; c < g.channels; ++c)
    for (Index i = 0; i < g.kh; ++i)
      for (Index j = 0; j < g.kw; ++j) {
        const Scalar* row = cols + ((c * g.kh + i) * g.kw + j) * g.pixels();
        for (Index y = 0; y < g.out_h; ++y) {
          const Index iy = y * g.stride + i - g.padding;
          if (iy < 0 || iy >= g.height) continue;
          const Scalar* src = row + y * g.out_w;
          Scalar* dst = image + (c * g.height + iy) * g.width;
          for (Index x = 0; x < g.out_w; ++x) {
            const Index ix = x * g.stride + j - g.padding;
            if (ix >= 0 && ix < g.width) dst[ix] += src[x];
          }
        }
      }
}

template <typename Scalar>
Scalar* sample_ptr(Tensor<Scalar>& t, Index n) {
  return t.data() + n * (t.size() / t.dim(0));
}
template <typename Scalar>
const Scalar* sample_ptr(const Tensor<Scalar>& t, Index n) {
  return t.data() + n * (t.size() / t.dim(0));
}

void check_labels(const LabelBatch& targets, const Shape& s, int class_count) {
  if (targets.batch != s[0] || targets.height != s[2] || targets.width != s[3])
    throw ShapeError("target labels do not match prediction shape " + shape_string(s));
  for (int label : targets.labels)
    if (label < 0 || label >= class_count)
      throw LabelError("label " + std::to_string(label) + " outside [0," + std::to_string(class_count) + ")");
}

}  // namespace

template <typename Scalar>
Var conv2d(Tape<Scalar>& tape, Var input, Var weight, Var bias, int stride, int padding) {
  if (stride <= 0) throw ConfigError("conv2d stride must be positive");
  if (padding < 0) throw ConfigError("conv2d padding must be non-negative");
  const Tensor<Scalar>& x = tape.value(input);
  const Tensor<Scalar>& w = tape.value(weight);
  const Tensor<Scalar>& b = tape.value(bias);
  require_rank(x.shape(), 4, "conv2d input");
  require_rank(w.shape(), 4, "conv2d weight");
  const Index batch = x.dim(0), cout = w.dim(0);
  if (x.dim(1) != w.dim(1))
    throw ShapeError("conv2d input channels " + std::to_string(x.dim(1)) + " != weight Cin " + std::to_string(w.dim(1)));
  if (b.shape() != Shape{cout}) throw ShapeError("conv2d bias must have shape (Cout)");
  if (x.dim(2) + 2 * padding < w.dim(2) || x.dim(3) + 2 * padding < w.dim(3))
    throw ShapeError("conv2d kernel larger than padded input " + shape_string(x.shape()));

  ConvGeometry g{x.dim(1), x.dim(2), x.dim(3), w.dim(2), w.dim(3), 0, 0, stride, padding};
  g.out_h = (g.height + 2 * padding - g.kh) / stride + 1;
  g.out_w = (g.width + 2 * padding - g.kw) / stride + 1;

  Tensor<Scalar> out({batch, cout, g.out_h, g.out_w});
  RowMatrix<Scalar> cols(g.patch(), g.pixels());
  ConstMatMap<Scalar> wmat(w.data(), cout, g.patch());
  for (Index n = 0; n < batch; ++n) {
    im2col(sample_ptr(x, n), g, cols.data());
    MatMap<Scalar> y(sample_ptr(out, n), cout, g.pixels());
    y.noalias() = wmat * cols;
    y.colwise() += b.array().matrix();
  }

  return tape.record(std::move(out), {input, weight, bias}, [=](Tape<Scalar>& t, Var, const Tensor<Scalar>& dy) {
    const Tensor<Scalar>& xv = t.value(input);
    const Tensor<Scalar>& wv = t.value(weight);
    const bool need_x = t.requires_grad(input), need_w = t.requires_grad(weight), need_b = t.requires_grad(bias);
    ConstMatMap<Scalar> wm(wv.data(), cout, g.patch());
    RowMatrix<Scalar> c(g.patch(), g.pixels());
    RowMatrix<Scalar> dcols;
    Tensor<Scalar>* dx = need_x ? &t.grad(input) : nullptr;
    Tensor<Scalar>* dw = need_w ? &t.grad(weight) : nullptr;
    Tensor<Scalar>* db = need_b ? &t.grad(bias) : nullptr;
    for (Index n = 0; n < batch; ++n) {
      ConstMatMap<Scalar> g_out(sample_ptr(dy, n), cout, g.pixels());
      if (db) db->array().matrix() += g_out.rowwise().sum();
      if (dw) {
        im2col(sample_ptr(xv, n), g, c.data());
        MatMap<Scalar>(dw->data(), cout, g.patch()).noalias() += g_out * c.transpose();
      }
      if (dx) {
        dcols.noalias() = wm.transpose() * g_out;
        col2im_add(dcols.data(), g, sample_ptr(*dx, n));
      }
    }
  });
}

template <typename Scalar>
Var conv_transpose2d(Tape<Scalar>& tape, Var input, Var weight, Var bias, int stride) {
  const Tensor<Scalar>& x = tape.value(input);
  const Tensor<Scalar>& w = tape.value(weight);
  const Tensor<Scalar>& b = tape.value(bias);
  require_rank(x.shape(), 4, "conv_transpose2d input");
  require_rank(w.shape(), 4, "conv_transpose2d weight");
  const Index k = w.dim(2);
  if (stride <= 0 || w.dim(3) != k || k != stride)
    throw ConfigError("conv_transpose2d supports only square kernels equal to the stride");
  const Index batch = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3), cout = w.dim(1);
  if (w.dim(0) != cin)
    throw ShapeError("conv_transpose2d input channels " + std::to_string(cin) + " != weight Cin " + std::to_string(w.dim(0)));
  if (b.shape() != Shape{cout}) throw ShapeError("conv_transpose2d bias must have shape (Cout)");

  const Index taps = cout * k * k, pixels = h * wd;
  const Index oh = h * k, ow = wd * k;
  Tensor<Scalar> out({batch, cout, oh, ow});
  ConstMatMap<Scalar> wmat(w.data(), cin, taps);
  RowMatrix<Scalar> spread(taps, pixels);
  for (Index n = 0; n < batch; ++n) {
    spread.noalias() = wmat.transpose() * ConstMatMap<Scalar>(sample_ptr(x, n), cin, pixels);
    Scalar* dst = sample_ptr(out, n);
    for (Index o = 0; o < cout; ++o)
      for (Index i = 0; i < k; ++i)
        for (Index j = 0; j < k; ++j) {
          const Scalar* row = spread.data() + ((o * k + i) * k + j) * pixels;
          for (Index y = 0; y < h; ++y)
            for (Index xx = 0; xx < wd; ++xx)
              dst[(o * oh + y * k + i) * ow + xx * k + j] = row[y * wd + xx] + b[o];
        }
  }

  return tape.record(std::move(out), {input, weight, bias}, [=](Tape<Scalar>& t, Var, const Tensor<Scalar>& dy) {
    const Tensor<Scalar>& xv = t.value(input);
    const Tensor<Scalar>& wv = t.value(weight);
    ConstMatMap<Scalar> wm(wv.data(), cin, taps);
    Tensor<Scalar>* dx = t.requires_grad(input) ? &t.grad(input) : nullptr;
    Tensor<Scalar>* dw = t.requires_grad(weight) ? &t.grad(weight) : nullptr;
    Tensor<Scalar>* db = t.requires_grad(bias) ? &t.grad(bias) : nullptr;
    RowMatrix<Scalar> gathered(taps, pixels);
    for (Index n = 0; n < batch; ++n) {
      const Scalar* src = sample_ptr(dy, n);
      for (Index o = 0; o < cout; ++o)
        for (Index i = 0; i < k; ++i)
          for (Index j = 0; j < k; ++j) {
            Scalar* row = gathered.data() + ((o * k + i) * k + j) * pixels;
            for (Index y = 0; y < h; ++y)
              for (Index xx = 0; xx < wd; ++xx) row[y * wd + xx] = src[(o * oh + y * k + i) * ow + xx * k + j];
          }
      if (db)
        for (Index o = 0; o < cout; ++o) (*db)[o] += gathered.middleRows(o * k * k, k * k).sum();
      if (dw)
        MatMap<Scalar>(dw->data(), cin, taps).noalias() +=
            ConstMatMap<Scalar>(sample_ptr(xv, n), cin, pixels) * gathered.transpose();
      if (dx) MatMap<Scalar>(sample_ptr(*dx, n), cin, pixels).noalias() += wm * gathered;
    }
  });
}

template <typename Scalar>
Var maxpool2d(Tape<Scalar>& tape, Var input, int window) {
  const Tensor<Scalar>& x = tape.value(input);
  require_rank(x.shape(), 4, "maxpool2d input");
  if (window <= 0) throw ConfigError("maxpool2d window must be positive");
  if (x.dim(2) % window != 0 || x.dim(3) % window != 0)
    throw ShapeError("maxpool2d needs extents divisible by the window, got " + shape_string(x.shape()));
  const Index planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  const Index oh = h / window, ow = w / window;
  Tensor<Scalar> out({x.dim(0), x.dim(1), oh, ow});
  std::vector<Index> argmax(static_cast<std::size_t>(out.size()));
  for (Index p = 0; p < planes; ++p)
    for (Index y = 0; y < oh; ++y)
      for (Index xx = 0; xx < ow; ++xx) {
        Index best = (p * h + y * window) * w + xx * window;
        for (Index i = 0; i < window; ++i)
          for (Index j = 0; j < window; ++j) {
            const Index idx = (p * h + y * window + i) * w + xx * window + j;
            if (x[idx] > x[best]) best = idx;
          }
        const Index o = (p * oh + y) * ow + xx;
        out[o] = x[best];
        argmax[static_cast<std::size_t>(o)] = best;
      }
  return tape.record(std::move(out), {input}, [input, argmax = std::move(argmax)](Tape<Scalar>& t, Var, const Tensor<Scalar>& dy) {
    Tensor<Scalar>& dx = t.grad(input);
    for (std::size_t o = 0; o < argmax.size(); ++o) dx[argmax[o]] += dy[static_cast<Index>(o)];
  });
}

template <typename Scalar>
Var leaky_relu(Tape<Scalar>& tape, Var input, Scalar slope) {
  if (!(slope >= Scalar(0) && slope < Scalar(1))) throw ConfigError("leaky_relu slope must lie in [0,1)");
  const Tensor<Scalar>& x = tape.value(input);
  Tensor<Scalar> out(x.shape(), (x.array() >= Scalar(0)).select(x.array(), slope * x.array()));
  return tape.record(std::move(out), {input}, [input, slope](Tape<Scalar>& t, Var, const Tensor<Scalar>& dy) {
    const auto& xv = t.value(input).array();
    t.grad(input).array() += (xv >= Scalar(0)).select(dy.array(), slope * dy.array());
  });
}

template <typename Scalar>
Var concat_channels(Tape<Scalar>& tape, Var a, Var b) {
  const Tensor<Scalar>& ta = tape.value(a);
  const Tensor<Scalar>& tb = tape.value(b);
  require_rank(ta.shape(), 4, "concat_channels");
  require_rank(tb.shape(), 4, "concat_channels");
  if (ta.dim(0) != tb.dim(0) || ta.dim(2) != tb.dim(2) || ta.dim(3) != tb.dim(3))
    throw ShapeError("concat_channels shapes " + shape_string(ta.shape()) + " and " + shape_string(tb.shape()) +
                     " disagree outside the channel axis");
  const Index batch = ta.dim(0), ca = ta.dim(1), cb = tb.dim(1), plane = ta.dim(2) * ta.dim(3);
  Tensor<Scalar> out({batch, ca + cb, ta.dim(2), ta.dim(3)});
  for (Index n = 0; n < batch; ++n) {
    out.array().segment(n * (ca + cb) * plane, ca * plane) = ta.array().segment(n * ca * plane, ca * plane);
    out.array().segment((n * (ca + cb) + ca) * plane, cb * plane) = tb.array().segment(n * cb * plane, cb * plane);
  }
  return tape.record(std::move(out), {a, b}, [=](Tape<Scalar>& t, Var, const Tensor<Scalar>& dy) {
    for (Index n = 0; n < batch; ++n) {
      if (t.requires_grad(a))
        t.grad(a).array().segment(n * ca * plane, ca * plane) += dy.array().segment(n * (ca + cb) * plane, ca * plane);
      if (t.requires_grad(b))
        t.grad(b).array().segment(n * cb * plane, cb * plane) +=
            dy.array().segment((n * (ca + cb) + ca) * plane, cb * plane);
    }
  });
}

namespace {

template <typename Scalar>
Tensor<Scalar> softmax_values(const Tensor<Scalar>& logits) {
  const Index batch = logits.dim(0), classes = logits.dim(1), plane = logits.dim(2) * logits.dim(3);
  Tensor<Scalar> probs(logits.shape());
  for (Index n = 0; n < batch; ++n) {
    const Scalar* src = sample_ptr(logits, n);
    Scalar* dst = sample_ptr(probs, n);
    for (Index p = 0; p < plane; ++p) {
      Scalar peak = src[p];
      for (Index c = 1; c < classes; ++c) peak = std::max(peak, src[c * plane + p]);
      Scalar total = 0;
      for (Index c = 0; c < classes; ++c) total += (dst[c * plane + p] = std::exp(src[c * plane + p] - peak));
      for (Index c = 0; c < classes; ++c) dst[c * plane + p] /= total;
    }
  }
  return probs;
}

}  // namespace

template <typename Scalar>
Var softmax(Tape<Scalar>& tape, Var logits) {
  const Tensor<Scalar>& x = tape.value(logits);
  require_rank(x.shape(), 4, "softmax");
  const Index batch = x.dim(0), classes = x.dim(1), plane = x.dim(2) * x.dim(3);
  return tape.record(softmax_values(x), {logits}, [=](Tape<Scalar>& t, Var self, const Tensor<Scalar>& dy) {
    const Tensor<Scalar>& y = t.value(self);
    Tensor<Scalar>& dx = t.grad(logits);
    for (Index n = 0; n < batch; ++n) {
      const Scalar* yp = sample_ptr(y, n);
      const Scalar* gp = sample_ptr(dy, n);
      Scalar* dp = sample_ptr(dx, n);
      for (Index p = 0; p < plane; ++p) {
        Scalar dot = 0;
        for (Index c = 0; c < classes; ++c) dot += yp[c * plane + p] * gp[c * plane + p];
        for (Index c = 0; c < classes; ++c) dp[c * plane + p] += yp[c * plane + p] * (gp[c * plane + p] - dot);
      }
    }
  });
}

template <typename Scalar>
Var softmax_cross_entropy(Tape<Scalar>& tape, Var logits, const LabelBatch& targets, int class_count) {
  const Tensor<Scalar>& x = tape.value(logits);
  require_rank(x.shape(), 4, "softmax_cross_entropy");
  if (x.dim(1) != class_count)
    throw ShapeError("logit channels " + std::to_string(x.dim(1)) + " != class count " + std::to_string(class_count));
  check_labels(targets, x.shape(), class_count);
  const Index batch = x.dim(0), plane = x.dim(2) * x.dim(3);
  const Scalar count = static_cast<Scalar>(batch * plane);
  Tensor<Scalar> probs = softmax_values(x);
  Scalar loss = 0;
  for (Index n = 0; n < batch; ++n) {
    const Scalar* src = sample_ptr(x, n);
    for (Index p = 0; p < plane; ++p) {
      Scalar peak = src[p];
      for (Index c = 1; c < class_count; ++c) peak = std::max(peak, src[c * plane + p]);
      Scalar total = 0;
      for (Index c = 0; c < class_count; ++c) total += std::exp(src[c * plane + p] - peak);
      const int label = targets.labels[static_cast<std::size_t>(n * plane + p)];
      loss += peak + std::log(total) - src[label * plane + p];
    }
  }
  Tensor<Scalar> value = Tensor<Scalar>::constant({1}, loss / count);
  return tape.record(std::move(value), {logits},
                     [=, probs = std::move(probs)](Tape<Scalar>& t, Var, const Tensor<Scalar>& dy) {
                       Tensor<Scalar>& dx = t.grad(logits);
                       const Scalar scale = dy[0] / count;
                       dx.array() += scale * probs.array();
                       for (Index n = 0; n < batch; ++n)
                         for (Index p = 0; p < plane; ++p) {
                           const int label = targets.labels[static_cast<std::size_t>(n * plane + p)];
                           sample_ptr(dx, n)[label * plane + p] -= scale;
                         }
                     });
}

template <typename Scalar>
Var nll_from_probs(Tape<Scalar>& tape, Var probs, const LabelBatch& targets) {
  const Tensor<Scalar>& x = tape.value(probs);
  require_rank(x.shape(), 4, "nll_from_probs");
  const int classes = static_cast<int>(x.dim(1));
  check_labels(targets, x.shape(), classes);
  const Index batch = x.dim(0), plane = x.dim(2) * x.dim(3);
  const Scalar count = static_cast<Scalar>(batch * plane);
  const Scalar floor_value = std::numeric_limits<Scalar>::min();
  Scalar loss = 0;
  for (Index n = 0; n < batch; ++n)
    for (Index p = 0; p < plane; ++p) {
      const int label = targets.labels[static_cast<std::size_t>(n * plane + p)];
      loss -= std::log(std::max(sample_ptr(x, n)[label * plane + p], floor_value));
    }
  if (!std::isfinite(loss)) throw NumericError("non-finite negative log-likelihood");
  return tape.record(Tensor<Scalar>::constant({1}, loss / count), {probs},
                     [=](Tape<Scalar>& t, Var, const Tensor<Scalar>& dy) {
                       const Tensor<Scalar>& pv = t.value(probs);
                       Tensor<Scalar>& dx = t.grad(probs);
                       for (Index n = 0; n < batch; ++n)
                         for (Index p = 0; p < plane; ++p) {
                           const int label = targets.labels[static_cast<std::size_t>(n * plane + p)];
                           const Scalar prob = sample_ptr(pv, n)[label * plane + p];
                           if (prob > floor_value) sample_ptr(dx, n)[label * plane + p] -= dy[0] / (count * prob);
                         }
                     });
}

template <typename Scalar>
Var soft_dice_loss(Tape<Scalar>& tape, Var probs, const LabelBatch& targets) {
  const Tensor<Scalar>& x = tape.value(probs);
  require_rank(x.shape(), 4, "soft_dice_loss");
  const int classes = static_cast<int>(x.dim(1));
  if (classes < 2) throw ConfigError("soft dice needs a background and at least one foreground class");
  check_labels(targets, x.shape(), classes);
  const Index batch = x.dim(0), plane = x.dim(2) * x.dim(3);
  std::vector<double> inter(static_cast<std::size_t>(classes), 0), total(static_cast<std::size_t>(classes), 0);
  for (Index n = 0; n < batch; ++n)
    for (Index p = 0; p < plane; ++p) {
      const int label = targets.labels[static_cast<std::size_t>(n * plane + p)];
      for (int c = 1; c < classes; ++c) {
        const double v = sample_ptr(x, n)[c * plane + p];
        total[static_cast<std::size_t>(c)] += v + (label == c);
        if (label == c) inter[static_cast<std::size_t>(c)] += v;
      }
    }
  double score = 0;
  for (int c = 1; c < classes; ++c) score += (2 * inter[static_cast<std::size_t>(c)] + 1) / (total[static_cast<std::size_t>(c)] + 1);
  const double fg = classes - 1;
  return tape.record(Tensor<Scalar>::constant({1}, static_cast<Scalar>(1 - score / fg)), {probs},
                     [=](Tape<Scalar>& t, Var, const Tensor<Scalar>& dy) {
                       Tensor<Scalar>& dx = t.grad(probs);
                       for (Index n = 0; n < batch; ++n)
                         for (Index p = 0; p < plane; ++p) {
                           const int label = targets.labels[static_cast<std::size_t>(n * plane + p)];
                           for (int c = 1; c < classes; ++c) {
                             const double u = total[static_cast<std::size_t>(c)] + 1;
                             const double num = 2 * inter[static_cast<std::size_t>(c)] + 1;
                             const double d = (2.0 * (label == c) * u - num) / (u * u);
                             sample_ptr(dx, n)[c * plane + p] -= static_cast<Scalar>(dy[0] * d / fg);
                           }
                         }
                     });
}

template <typename Scalar>
Var mean_of(Tape<Scalar>& tape, std::span<const Var> members) {
  if (members.empty()) throw ConfigError("mean_of needs at least one member");
  Tensor<Scalar> acc = tape.value(members[0]);
  for (std::size_t i = 1; i < members.size(); ++i) {
    const Tensor<Scalar>& m = tape.value(members[i]);
    if (m.shape() != acc.shape())
      throw ShapeError("mean_of member shapes differ: " + shape_string(m.shape()) + " vs " + shape_string(acc.shape()));
    acc.array() += m.array();
  }
  const Scalar inv = Scalar(1) / static_cast<Scalar>(members.size());
  acc.array() *= inv;
  std::vector<Var> inputs(members.begin(), members.end());
  return tape.record(std::move(acc), inputs, [inputs, inv](Tape<Scalar>& t, Var, const Tensor<Scalar>& dy) {
    for (const Var& v : inputs)
      if (t.requires_grad(v)) t.grad(v).array() += inv * dy.array();
  });
}

template <typename Scalar>
Var mse(Tape<Scalar>& tape, Var prediction, const Tensor<Scalar>& reference) {
  const Tensor<Scalar>& x = tape.value(prediction);
  if (x.shape() != reference.shape())
    throw ShapeError("mse shapes " + shape_string(x.shape()) + " and " + shape_string(reference.shape()) + " differ");
  const Scalar count = static_cast<Scalar>(x.size());
  Scalar value = (x.array() - reference.array()).square().sum() / count;
  return tape.record(Tensor<Scalar>::constant({1}, value), {prediction},
                     [=, ref = reference](Tape<Scalar>& t, Var, const Tensor<Scalar>& dy) {
                       t.grad(prediction).array() += (Scalar(2) * dy[0] / count) * (t.value(prediction).array() - ref.array());
                     });
}

template <typename Scalar>
Var add_scaled(Tape<Scalar>& tape, Var a, Var b, Scalar weight) {
  const Tensor<Scalar>& ta = tape.value(a);
  const Tensor<Scalar>& tb = tape.value(b);
  if (ta.shape() != tb.shape()) throw ShapeError("add_scaled shapes differ");
  Tensor<Scalar> out(ta.shape(), ta.array() + weight * tb.array());
  return tape.record(std::move(out), {a, b}, [=](Tape<Scalar>& t, Var, const Tensor<Scalar>& dy) {
    if (t.requires_grad(a)) t.grad(a).array() += dy.array();
    if (t.requires_grad(b)) t.grad(b).array() += weight * dy.array();
  });
}

template <typename Scalar>
Var sum(Tape<Scalar>& tape, Var input) {
  const Scalar total = tape.value(input).array().sum();
  return tape.record(Tensor<Scalar>::constant({1}, total), {input}, [input](Tape<Scalar>& t, Var, const Tensor<Scalar>& dy) {
    t.grad(input).array() += dy[0];
  });
}

template <typename Scalar>
Var weighted_sum(Tape<Scalar>& tape, Var input, const Tensor<Scalar>& weights) {
  const Tensor<Scalar>& x = tape.value(input);
  if (x.shape() != weights.shape()) throw ShapeError("weighted_sum shapes differ");
  const Scalar total = (x.array() * weights.array()).sum();
  return tape.record(Tensor<Scalar>::constant({1}, total), {input},
                     [input, w = weights](Tape<Scalar>& t, Var, const Tensor<Scalar>& dy) {
                       t.grad(input).array() += dy[0] * w.array();
                     });
}

template <typename Scalar>
LabelBatch argmax_channels(const Tensor<Scalar>& scores) {
  require_rank(scores.shape(), 4, "argmax_channels");
  const Index batch = scores.dim(0), classes = scores.dim(1), plane = scores.dim(2) * scores.dim(3);
  LabelBatch out(batch, scores.dim(2), scores.dim(3));
  for (Index n = 0; n < batch; ++n) {
    const Scalar* src = sample_ptr(scores, n);
    for (Index p = 0; p < plane; ++p) {
      int best = 0;
      for (Index c = 1; c < classes; ++c)
        if (src[c * plane + p] > src[best * plane + p]) best = static_cast<int>(c);
      out.labels[static_cast<std::size_t>(n * plane + p)] = best;
    }
  }
  return out;
}

#define PNN_INSTANTIATE_OPS(S)                                                                  \
  template Var conv2d<S>(Tape<S>&, Var, Var, Var, int, int);                                    \
  template Var conv_transpose2d<S>(Tape<S>&, Var, Var, Var, int);                               \
  template Var maxpool2d<S>(Tape<S>&, Var, int);                                                \
  template Var leaky_relu<S>(Tape<S>&, Var, S);                                                 \
  template Var concat_channels<S>(Tape<S>&, Var, Var);                                          \
  template Var softmax<S>(Tape<S>&, Var);                                                       \
  template Var softmax_cross_entropy<S>(Tape<S>&, Var, const LabelBatch&, int);                 \
  template Var nll_from_probs<S>(Tape<S>&, Var, const LabelBatch&);                             \
  template Var soft_dice_loss<S>(Tape<S>&, Var, const LabelBatch&);                            \
  template Var mean_of<S>(Tape<S>&, std::span<const Var>);                                      \
  template Var mse<S>(Tape<S>&, Var, const Tensor<S>&);                                         \
  template Var add_scaled<S>(Tape<S>&, Var, Var, S);                                            \
  template Var sum<S>(Tape<S>&, Var);                                                           \
  template Var weighted_sum<S>(Tape<S>&, Var, const Tensor<S>&);                                \
  template LabelBatch argmax_channels<S>(const Tensor<S>&);

PNN_INSTANTIATE_OPS(float)
PNN_INSTANTIATE_OPS(double)

}  // namespace pnn

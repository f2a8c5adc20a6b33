#pragma once

#include <span>

#include "pnnunet/tape.hpp"

namespace pnn {

/// Slope of the leaky rectifier used after every hidden convolution.
inline constexpr double kLeakySlope = 0.01;

/// 2D cross-correlation. input NCHW, weight [Cout, Cin, kh, kw], bias [Cout].
/// Output extents are floor((H + 2p - kh) / stride) + 1 (same for W).
template <typename Scalar>
Var conv2d(Tape<Scalar>& tape, Var input, Var weight, Var bias, int stride, int padding);

/// Transposed convolution for the kernel == stride case (the 2x2 / stride-2
/// up-sampling of the decoders). weight [Cin, Cout, k, k]. Output extents are
/// the input extents times stride. This is the adjoint of conv2d with the
/// same kernel and stride, plus bias.
template <typename Scalar>
Var conv_transpose2d(Tape<Scalar>& tape, Var input, Var weight, Var bias, int stride);

/// Disjoint window max pooling. Ties route gradient to the first maximum in
/// row-major order.
template <typename Scalar>
Var maxpool2d(Tape<Scalar>& tape, Var input, int window = 2);

template <typename Scalar>
Var leaky_relu(Tape<Scalar>& tape, Var input, Scalar slope = Scalar(kLeakySlope));

/// Channel concatenation: a fills channels [0, Ca), b fills [Ca, Ca + Cb).
template <typename Scalar>
Var concat_channels(Tape<Scalar>& tape, Var a, Var b);

/// Channel-wise softmax of NCHW logits, max-subtracted.
template <typename Scalar>
Var softmax(Tape<Scalar>& tape, Var logits);

/// Mean over pixels of -log softmax(logits)[target]. Labels must lie in
/// [0, class_count) and class_count must equal the channel count.
template <typename Scalar>
Var softmax_cross_entropy(Tape<Scalar>& tape, Var logits, const LabelBatch& targets, int class_count);

/// Mean over pixels of -log probs[target] for inputs that already are
/// probabilities (e.g. a soft vote). Probabilities are floored at the
/// smallest normal value before the log.
template <typename Scalar>
Var nll_from_probs(Tape<Scalar>& tape, Var probs, const LabelBatch& targets);

/// 1 - mean over foreground classes (1..C-1) of (2 sum(p g) + 1) / (sum(p) + sum(g) + 1),
/// with g the one-hot targets, summed over the whole batch.
template <typename Scalar>
Var soft_dice_loss(Tape<Scalar>& tape, Var probs, const LabelBatch& targets);

/// Elementwise arithmetic mean of equally shaped values.
template <typename Scalar>
Var mean_of(Tape<Scalar>& tape, std::span<const Var> members);

/// Mean squared difference between prediction and a fixed reference tensor.
template <typename Scalar>
Var mse(Tape<Scalar>& tape, Var prediction, const Tensor<Scalar>& reference);

/// a + weight * b for scalars.
template <typename Scalar>
Var add_scaled(Tape<Scalar>& tape, Var a, Var b, Scalar weight);

/// Sum of all elements.
template <typename Scalar>
Var sum(Tape<Scalar>& tape, Var input);

/// Sum of all elements of (input * weights) for a fixed weight tensor; used to
/// contract an output against a random direction.
template <typename Scalar>
Var weighted_sum(Tape<Scalar>& tape, Var input, const Tensor<Scalar>& weights);

/// Per-pixel argmax over channels with ties resolved to the lowest index.
template <typename Scalar>
LabelBatch argmax_channels(const Tensor<Scalar>& scores);

}  // namespace pnn

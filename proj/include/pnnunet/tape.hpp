#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <memory>
#include <vector>

#include "pnnunet/tensor.hpp"

namespace pnn {

/// Handle to a value recorded on a Tape. Only meaningful for the tape that
/// issued it.
struct Var {
  std::size_t id = static_cast<std::size_t>(-1);
  const void* owner = nullptr;
};

/// Reverse-mode differentiation tape.
///
/// Every primitive appends one record holding its output value, its inputs
/// and a closure that pushes the output gradient back onto the inputs.
/// Records are appended in execution order, so the record list is already a
/// topological order and backward() is a single reverse sweep.
///
/// Parameter leaves alias the weight and gradient storage of a Parameter:
/// gradients reaching a leaf accumulate straight into Parameter::grad.
/// A tape is confined to one thread.
template <typename Scalar>
class Tape {
 public:
  using TensorT = Tensor<Scalar>;
  using BackwardFn = std::function<void(Tape&, Var self, const TensorT& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(TensorT value) {
    Record r;
    r.owned = std::move(value);
    return push(std::move(r));
  }

  Var parameter(Parameter<Scalar>& p) {
    Record r;
    r.alias = &p.value;
    r.sink = &p.grad;
    r.requires_grad = true;
    return push(std::move(r));
  }

  Var record(TensorT value, std::initializer_list<Var> inputs, BackwardFn fn) {
    return record(std::move(value), std::vector<Var>(inputs), std::move(fn));
  }

  Var record(TensorT value, std::vector<Var> inputs, BackwardFn fn) {
    Record r;
    r.owned = std::move(value);
    for (const Var& v : inputs) {
      check(v);
      r.requires_grad = r.requires_grad || records_[v.id].requires_grad;
    }
    r.inputs = std::move(inputs);
    if (r.requires_grad) r.backward = std::move(fn);
    return push(std::move(r));
  }

  const TensorT& value(Var v) const {
    check(v);
    const Record& r = records_[v.id];
    return r.alias ? *r.alias : r.owned;
  }

  bool requires_grad(Var v) const {
    check(v);
    return records_[v.id].requires_grad;
  }

  /// Gradient accumulator for v, zero-initialized on first access. Backward
  /// closures add into it.
  TensorT& grad(Var v) {
    check(v);
    Record& r = records_[v.id];
    if (r.sink) {
      r.reached = true;
      return *r.sink;
    }
    if (!r.reached) {
      r.grad = TensorT(value(v).shape());
      r.reached = true;
    }
    return r.grad;
  }

  /// Seeds d(loss)/d(loss) = 1 and sweeps the records in reverse. Parameter
  /// gradients are accumulated, so zero them before each step.
  void backward(Var loss) {
    if (loss.owner != this || loss.id >= records_.size())
      throw TapeError("backward called on a value not recorded on this tape");
    if (value(loss).size() != 1) throw TapeError("backward requires a scalar loss");
    if (!records_[loss.id].requires_grad)
      throw TapeError("loss does not depend on any parameter");
    if (backward_done_) throw TapeError("backward already ran on this tape");
    backward_done_ = true;
    grad(loss).array().setOnes();
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Record& r = records_[i];
      if (!r.reached || !r.backward) continue;
      r.backward(*this, Var{i, this}, r.grad);
      r.grad = TensorT();  // release intermediate gradients as soon as they are consumed
    }
  }

  std::size_t size() const { return records_.size(); }

 private:
  struct Record {
    TensorT owned;
    const TensorT* alias = nullptr;
    TensorT* sink = nullptr;
    TensorT grad;
    std::vector<Var> inputs;
    BackwardFn backward;
    bool requires_grad = false;
    bool reached = false;
  };

  Var push(Record r) {
    records_.push_back(std::move(r));
    return Var{records_.size() - 1, this};
  }

  void check(Var v) const {
    if (v.owner != this || v.id >= records_.size()) throw TapeError("value is not recorded on this tape");
  }

  std::deque<Record> records_;
  bool backward_done_ = false;
};

}  // namespace pnn

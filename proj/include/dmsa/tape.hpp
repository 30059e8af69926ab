#pragma once

#include <functional>
#include <span>
#include <unordered_map>
#include <vector>

#include "dmsa/tensor.hpp"

namespace dmsa {

/// Gradients keyed by tensor id, returned by backward().
class Gradients {
 public:
  bool contains(const Tensor& t) const;
  /// Gradient of `t`; zeros when no path from the loss reached it.
  Tensor get(const Tensor& t) const;
  std::size_t size() const { return grads_.size(); }

 private:
  friend class GradTape;
  std::unordered_map<Tensor::Id, Tensor> grads_;
};

/// Accumulator handed to each node's backward function. Slot i refers to the
/// i-th input passed to GradTape::record.
class GradSink {
 public:
  bool wants(std::size_t slot) const;
  /// Mutable gradient buffer for an input slot; accumulate into it.
  std::span<double> grad(std::size_t slot);

 private:
  friend class GradTape;
  struct Slot {
    Tensor::Id id;
    std::size_t size;
  };
  GradSink(std::span<const Slot> slots,
           std::unordered_map<Tensor::Id, std::vector<double>>& store)
      : slots_(slots), store_(store) {}

  std::span<const Slot> slots_;
  std::unordered_map<Tensor::Id, std::vector<double>>& store_;
  std::vector<double> scratch_;
};

/// Ordered record of differentiable operations for reverse-mode AD.
///
/// A tape is bound to the calling thread while a Scope is alive; operations
/// executed in that window with at least one tracked input are recorded.
/// backward() replays nodes in exact reverse order and consumes the tape.
class GradTape {
 public:
  using BackwardFn = std::function<void(std::span<const double> grad_out, GradSink& sink)>;

  class Scope {
   public:
    explicit Scope(GradTape& tape);
    ~Scope();
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    GradTape* previous_;
  };

  GradTape() = default;
  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;

  static GradTape* active();

  /// Records `output` as produced from `inputs`; returns the tracked output.
  Tensor record(const Tensor& output, std::span<const Tensor* const> inputs, BackwardFn fn);

  Gradients backward(const Tensor& loss);

  std::size_t size() const { return nodes_.size(); }
  bool owns(const Tensor& t) const;
  /// Output ids in recording order; exposed for ordering checks.
  std::vector<Tensor::Id> order() const;

 private:
  struct Node {
    Tensor::Id out;
    std::vector<GradSink::Slot> inputs;
    std::vector<Shape> input_shapes;
    BackwardFn fn;
  };
  std::vector<Node> nodes_;
  std::unordered_map<Tensor::Id, std::size_t> index_;
};

/// Records an op on the active tape when any input is tracked; otherwise
/// returns `output` untouched.
Tensor record_op(const Tensor& output, std::initializer_list<const Tensor*> inputs,
                 GradTape::BackwardFn fn);
Tensor record_op(const Tensor& output, const std::vector<const Tensor*>& inputs,
                 GradTape::BackwardFn fn);

/// Backward pass on the thread's active tape.
Gradients backward(const Tensor& loss);

}  // namespace dmsa

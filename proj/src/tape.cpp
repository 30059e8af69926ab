#include "dmsa/tape.hpp"

#include <algorithm>

namespace dmsa {

namespace {
thread_local GradTape* g_active = nullptr;
}

bool Gradients::contains(const Tensor& t) const { return grads_.count(t.id()) != 0; }

Tensor Gradients::get(const Tensor& t) const {
  auto it = grads_.find(t.id());
  if (it == grads_.end() || t.id() == 0) return Tensor::zeros(t.shape());
  return it->second;
}

bool GradSink::wants(std::size_t slot) const { return slots_[slot].id != 0; }

std::span<double> GradSink::grad(std::size_t slot) {
  const auto& s = slots_[slot];
  if (s.id == 0) {
    scratch_.assign(s.size, 0.0);
    return scratch_;
  }
  auto& buf = store_[s.id];
  if (buf.empty()) buf.assign(s.size, 0.0);
  return buf;
}

GradTape::Scope::Scope(GradTape& tape) : previous_(g_active) { g_active = &tape; }
GradTape::Scope::~Scope() { g_active = previous_; }

GradTape* GradTape::active() { return g_active; }

Tensor GradTape::record(const Tensor& output, std::span<const Tensor* const> inputs, BackwardFn fn) {
  Node node;
  node.out = Tensor::next_id();
  node.inputs.reserve(inputs.size());
  for (const Tensor* in : inputs) {
    node.inputs.push_back({in->id(), in->size()});
    node.input_shapes.push_back(in->shape());
  }
  node.fn = std::move(fn);
  index_[node.out] = nodes_.size();
  Tensor tracked(output.shape(), output.buffer(), node.out);
  nodes_.push_back(std::move(node));
  return tracked;
}

bool GradTape::owns(const Tensor& t) const { return t.id() != 0 && index_.count(t.id()) != 0; }

std::vector<Tensor::Id> GradTape::order() const {
  std::vector<Tensor::Id> ids;
  ids.reserve(nodes_.size());
  for (const auto& n : nodes_) ids.push_back(n.out);
  return ids;
}

Gradients GradTape::backward(const Tensor& loss) {
  if (loss.size() != 1) {
    throw TapeError("backward() needs a scalar loss, got shape " + shape_str(loss.shape()));
  }
  if (!owns(loss)) throw TapeError("backward(): loss tensor is not on this tape");

  std::unordered_map<Tensor::Id, std::vector<double>> store;
  store[loss.id()] = {1.0};
  std::unordered_map<Tensor::Id, Shape> leaf_shapes;

  const std::size_t last = index_.at(loss.id());
  for (std::size_t k = last + 1; k-- > 0;) {
    Node& node = nodes_[k];
    for (std::size_t i = 0; i < node.inputs.size(); ++i) {
      auto id = node.inputs[i].id;
      if (id != 0 && index_.count(id) == 0) leaf_shapes.emplace(id, node.input_shapes[i]);
    }
    auto it = store.find(node.out);
    if (it == store.end()) continue;
    std::vector<double> grad_out = std::move(it->second);
    store.erase(it);
    GradSink sink(node.inputs, store);
    node.fn(grad_out, sink);
  }

  Gradients result;
  for (auto& [id, shape] : leaf_shapes) {
    auto it = store.find(id);
    if (it == store.end()) continue;
    Tensor g(shape, std::move(it->second));
    result.grads_.emplace(id, Tensor(g.shape(), g.buffer(), 0));
  }
  nodes_.clear();
  index_.clear();
  return result;
}

namespace {
Tensor record_impl(const Tensor& output, std::span<const Tensor* const> inputs,
                   GradTape::BackwardFn& fn) {
  GradTape* tape = GradTape::active();
  if (tape == nullptr) return output;
  bool any = std::any_of(inputs.begin(), inputs.end(), [](const Tensor* t) { return t->requires_grad(); });
  if (!any) return output;
  return tape->record(output, inputs, std::move(fn));
}
}  // namespace

Tensor record_op(const Tensor& output, std::initializer_list<const Tensor*> inputs,
                 GradTape::BackwardFn fn) {
  return record_impl(output, std::span<const Tensor* const>(inputs.begin(), inputs.size()), fn);
}

Tensor record_op(const Tensor& output, const std::vector<const Tensor*>& inputs,
                 GradTape::BackwardFn fn) {
  return record_impl(output, inputs, fn);
}

Gradients backward(const Tensor& loss) {
  GradTape* tape = GradTape::active();
  if (tape == nullptr) throw TapeError("backward(): no active gradient tape");
  return tape->backward(loss);
}

}  // namespace dmsa

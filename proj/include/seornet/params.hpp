#pragma once

// Named parameter tensors, their binding onto a tape, and the two layer
// shapes every network in the library is assembled from.

#include "seornet/autodiff.hpp"

#include <map>
#include <string>
#include <vector>

namespace seornet {

using ParamId = std::size_t;

template <class T>
class ParamStore {
 public:
  struct Tensor {
    std::string name;
    Mat<T> value;
    Mat<T> grad;
  };

  ParamId add(std::string name, Mat<T> value) {
    require(!index_.contains(name), "duplicate parameter ", name);
    const ParamId id = tensors_.size();
    index_[name] = id;
    Mat<T> g = Mat<T>::Zero(value.rows(), value.cols());
    tensors_.push_back(Tensor{std::move(name), std::move(value), std::move(g)});
    return id;
  }

  /// He-uniform weight: Uniform(-sqrt(6/fan_in), sqrt(6/fan_in)).
  ParamId add_weight(std::string name, int fan_in, int fan_out, Rng& rng) {
    return add_weight(std::move(name), fan_in, fan_out, fan_in, rng);
  }
  ParamId add_weight(std::string name, int rows, int cols, int fan_in, Rng& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    Mat<T> w(rows, cols);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = T(rng.uniform(-bound, bound));
    return add(std::move(name), std::move(w));
  }
  ParamId add_constant(std::string name, int rows, int cols, T v) {
    return add(std::move(name), Mat<T>::Constant(rows, cols, v));
  }

  std::size_t size() const { return tensors_.size(); }
  const Tensor& operator[](ParamId id) const { return tensors_[id]; }
  Tensor& operator[](ParamId id) { return tensors_[id]; }
  Mat<T>& value(ParamId id) { return tensors_[id].value; }
  const Mat<T>& value(ParamId id) const { return tensors_[id].value; }
  Mat<T>& grad(ParamId id) { return tensors_[id].grad; }
  const Mat<T>& grad(ParamId id) const { return tensors_[id].grad; }

  ParamId id(const std::string& name) const {
    auto it = index_.find(name);
    require(it != index_.end(), "unknown parameter ", name);
    return it->second;
  }
  bool contains(const std::string& name) const { return index_.contains(name); }

  void zero_grad() {
    for (auto& t : tensors_) t.grad.setZero();
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors_) n += static_cast<std::size_t>(t.value.size());
    return n;
  }

  bool same_layout(const ParamStore& other) const {
    if (size() != other.size()) return false;
    for (std::size_t i = 0; i < size(); ++i) {
      const auto& a = tensors_[i];
      const auto& b = other.tensors_[i];
      if (a.name != b.name || a.value.rows() != b.value.rows() ||
          a.value.cols() != b.value.cols())
        return false;
    }
    return true;
  }

  template <class U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& t : tensors_) out.add(t.name, t.value.template cast<U>());
    return out;
  }

  auto begin() const { return tensors_.begin(); }
  auto end() const { return tensors_.end(); }

 private:
  std::vector<Tensor> tensors_;
  std::map<std::string, ParamId> index_;
};

/// Exposes a ParamStore on one tape. Trainable bindings route gradients
/// into the store; frozen bindings expose the values as constants.
template <class T>
class ParamBinding {
 public:
  ParamBinding(Tape<T>& tape, ParamStore<T>& store, bool trainable)
      : tape_(&tape), store_(&store), trainable_(trainable), cache_(store.size(), -1) {}

  Var<T> operator()(ParamId id) {
    if (cache_[id] >= 0) return Var<T>{tape_, cache_[id]};
    Var<T> v = trainable_ ? tape_->leaf(store_->value(id), &store_->grad(id))
                          : tape_->constant(store_->value(id));
    cache_[id] = v.id;
    return v;
  }

  Tape<T>& tape() { return *tape_; }
  bool trainable() const { return trainable_; }

 private:
  Tape<T>* tape_;
  ParamStore<T>* store_;
  bool trainable_;
  std::vector<int> cache_;
};

/// Dense per-row layer: y = x W + b.
struct Linear {
  ParamId weight = 0, bias = 0;
  int in = 0, out = 0;

  template <class T>
  static Linear create(ParamStore<T>& store, const std::string& name, int in, int out, Rng& rng) {
    Linear l;
    l.in = in;
    l.out = out;
    l.weight = store.add_weight(name + ".weight", in, out, rng);
    l.bias = store.add_constant(name + ".bias", 1, out, T(0));
    return l;
  }

  template <class T>
  Var<T> operator()(ParamBinding<T>& p, Var<T> x) const {
    require(x.cols() == in, "Linear: expected ", in, " input channels, got ", x.cols());
    return add_row(matmul(x, p(weight)), p(bias));
  }
};

/// Row-wise layer normalization with learned gain and shift.
struct LayerNorm {
  ParamId gain = 0, shift = 0;

  template <class T>
  static LayerNorm create(ParamStore<T>& store, const std::string& name, int width) {
    LayerNorm n;
    n.gain = store.add_constant(name + ".gain", 1, width, T(1));
    n.shift = store.add_constant(name + ".shift", 1, width, T(0));
    return n;
  }

  template <class T>
  Var<T> operator()(ParamBinding<T>& p, Var<T> x) const {
    return layer_norm(x, p(gain), p(shift));
  }
};

}  // namespace seornet

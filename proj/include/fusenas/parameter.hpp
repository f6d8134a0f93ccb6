#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "fusenas/common.hpp"
#include "fusenas/rng.hpp"

namespace fusenas {

// A named learnable array plus its gradient accumulator.
template <typename T>
struct Parameter {
  std::string name;
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;
  bool trainable = true;

  Parameter(std::string name_, Shape shape_, bool trainable_)
      : name(std::move(name_)),
        shape(shape_),
        value(std::size_t(shape_.numel()), T(0)),
        grad(std::size_t(shape_.numel()), T(0)),
        trainable(trainable_) {}

  void zero_grad() { std::fill(grad.begin(), grad.end(), T(0)); }
};

enum class Init { zeros, ones, he_normal, uniform_small };

// Owns every parameter of a network, keyed by hierarchical name.
// Initialization is derived from (seed, name) so it does not depend on
// construction order.
template <typename T>
class ParamStore {
 public:
  explicit ParamStore(std::uint64_t seed = 0) : seed_(seed) {}

  Parameter<T>& create(const std::string& name, Shape shape, Init init,
                       bool trainable = true, double fan_in = 0.0) {
    require(params_.find(name) == params_.end(),
            "duplicate parameter name: " + name);
    auto p = std::make_unique<Parameter<T>>(name, shape, trainable);
    Rng rng(hash_combine(seed_, fnv1a(name)));
    switch (init) {
      case Init::zeros:
        break;
      case Init::ones:
        std::fill(p->value.begin(), p->value.end(), T(1));
        break;
      case Init::he_normal: {
        double fi = fan_in > 0 ? fan_in : double(shape.c) * shape.h * shape.w;
        double s = std::sqrt(2.0 / fi);
        for (auto& v : p->value) v = T(rng.normal(0.0, s));
        break;
      }
      case Init::uniform_small:
        for (auto& v : p->value) v = T(rng.uniform(-0.05, 0.05));
        break;
    }
    auto* raw = p.get();
    order_.push_back(name);
    params_[name] = std::move(p);
    return *raw;
  }

  Parameter<T>& at(const std::string& name) {
    auto it = params_.find(name);
    require(it != params_.end(), "unknown parameter: " + name);
    return *it->second;
  }
  const Parameter<T>& at(const std::string& name) const {
    auto it = params_.find(name);
    require(it != params_.end(), "unknown parameter: " + name);
    return *it->second;
  }
  bool has(const std::string& name) const {
    return params_.find(name) != params_.end();
  }

  void zero_grads() {
    for (auto& name : order_) params_[name]->zero_grad();
  }

  // stable iteration order = creation order
  template <typename F>
  void for_each(F&& f) {
    for (auto& name : order_) f(*params_[name]);
  }
  template <typename F>
  void for_each(F&& f) const {
    for (auto& name : order_) f(*params_.at(name));
  }

  std::size_t size() const { return params_.size(); }
  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
  std::vector<std::string> order_;
  std::map<std::string, std::unique_ptr<Parameter<T>>> params_;
};

}  // namespace fusenas

/*
 * Copyright 2026 The msrd authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <cmath>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "msrd/rng.hpp"
#include "msrd/tensor.hpp"

namespace msrd {

enum class Init { kZeros, kOnes, kUniformFanIn };

/// One named trainable tensor with its gradient and Adam moment buffers.
template <class T>
struct ParamTensor {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  Tensor<T> adam_m;
  Tensor<T> adam_v;
  Init init = Init::kZeros;
  bool trainable = true;

  void zero_grad() { grad.fill(T(0)); }
};

/// Ordered collection of uniquely named parameters.
///
/// Each tensor is initialized from a stream derived from (master seed, name),
/// so the same name always draws the same values regardless of what else is
/// registered. Registration order is the checkpoint serialization order.
template <class T>
class ParamSet {
 public:
  using Ptr = std::shared_ptr<ParamTensor<T>>;

  explicit ParamSet(std::uint64_t init_seed = 0) : init_seed_(init_seed) {}

  Ptr create(const std::string& name, std::vector<std::int64_t> shape, Init init,
             std::int64_t fan_in = 0) {
    if (index_.count(name)) throw ParamError("duplicate parameter name: " + name);
    auto p = std::make_shared<ParamTensor<T>>();
    p->name = name;
    p->init = init;
    p->value = Tensor<T>(shape);
    p->grad = Tensor<T>(shape);
    p->adam_m = Tensor<T>(shape);
    p->adam_v = Tensor<T>(shape);
    switch (init) {
      case Init::kZeros:
        break;
      case Init::kOnes:
        p->value.fill(T(1));
        break;
      case Init::kUniformFanIn: {
        if (fan_in <= 0) throw ParamError("fan_in required for uniform init: " + name);
        Rng rng(derive_seed(init_seed_, hash_name(name)));
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        for (auto& x : p->value.v) x = static_cast<T>(rng.uniform(-bound, bound));
        break;
      }
    }
    index_[name] = items_.size();
    items_.push_back(p);
    return p;
  }

  Ptr find(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw LookupError("unknown parameter: " + name);
    return items_[it->second];
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  const std::vector<Ptr>& items() const { return items_; }
  std::size_t size() const { return items_.size(); }

  std::int64_t total_values() const {
    std::int64_t n = 0;
    for (const auto& p : items_) n += p->value.numel();
    return n;
  }

  void zero_grads() {
    for (auto& p : items_) p->zero_grad();
  }

  void set_trainable(bool flag) {
    for (auto& p : items_) p->trainable = flag;
  }

  std::uint64_t init_seed() const { return init_seed_; }

 private:
  std::uint64_t init_seed_;
  std::vector<Ptr> items_;
  std::map<std::string, std::size_t> index_;
};

}  // namespace msrd

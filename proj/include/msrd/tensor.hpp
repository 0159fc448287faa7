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
#include <cstdint>
#include <initializer_list>
#include <sstream>
#include <string>
#include <vector>

#include "msrd/error.hpp"
#include "msrd/rng.hpp"

namespace msrd {

/// Dense row-major tensor of rank 0..3. Rank 0 is a scalar with one element.
template <class T>
struct Tensor {
  std::vector<std::int64_t> shape;
  std::vector<T> v;

  Tensor() : v(1, T(0)) {}

  explicit Tensor(std::vector<std::int64_t> s) : shape(std::move(s)) {
    v.assign(static_cast<std::size_t>(numel_of(shape)), T(0));
  }

  static std::int64_t numel_of(const std::vector<std::int64_t>& s) {
    std::int64_t n = 1;
    for (auto d : s) {
      if (d <= 0) throw ShapeError("tensor dimension must be positive");
      n *= d;
    }
    return n;
  }

  static Tensor zeros(std::vector<std::int64_t> s) { return Tensor(std::move(s)); }

  static Tensor full(std::vector<std::int64_t> s, T value) {
    Tensor t(std::move(s));
    for (auto& x : t.v) x = value;
    return t;
  }

  static Tensor scalar(T value) {
    Tensor t;
    t.v[0] = value;
    return t;
  }

  static Tensor normal(std::vector<std::int64_t> s, Rng& rng, T mean = T(0), T stddev = T(1)) {
    Tensor t(std::move(s));
    for (auto& x : t.v) x = static_cast<T>(rng.normal(mean, stddev));
    return t;
  }

  std::int64_t numel() const { return static_cast<std::int64_t>(v.size()); }
  int rank() const { return static_cast<int>(shape.size()); }
  std::int64_t dim(int i) const { return shape[static_cast<std::size_t>(i)]; }

  T& at(std::int64_t i) { return v[static_cast<std::size_t>(i)]; }
  const T& at(std::int64_t i) const { return v[static_cast<std::size_t>(i)]; }

  T& at(std::int64_t i, std::int64_t j) { return v[static_cast<std::size_t>(i * shape[1] + j)]; }
  const T& at(std::int64_t i, std::int64_t j) const {
    return v[static_cast<std::size_t>(i * shape[1] + j)];
  }

  T& at(std::int64_t i, std::int64_t j, std::int64_t k) {
    return v[static_cast<std::size_t>((i * shape[1] + j) * shape[2] + k)];
  }
  const T& at(std::int64_t i, std::int64_t j, std::int64_t k) const {
    return v[static_cast<std::size_t>((i * shape[1] + j) * shape[2] + k)];
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  bool all_finite() const {
    for (const T& x : v)
      if (!std::isfinite(static_cast<double>(x))) return false;
    return true;
  }

  void fill(T value) {
    for (auto& x : v) x = value;
  }

  template <class U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out.shape = shape;
    out.v.resize(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out.v[i] = static_cast<U>(v[i]);
    return out;
  }

  std::string shape_str() const {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
      if (i) os << ",";
      os << shape[i];
    }
    os << "]";
    return os.str();
  }
};

template <class T>
inline void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* where) {
  if (!a.same_shape(b))
    throw ShapeError(std::string(where) + ": shape mismatch " + a.shape_str() + " vs " +
                     b.shape_str());
}

}  // namespace msrd

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

#include <algorithm>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "msrd/graph.hpp"
#include "msrd/rng.hpp"

namespace msrd {

/// What a gradient-check unit exposes after building its graph.
///
/// fd_leaves are differentiated and compared against central differences.
/// zero_leaves must receive an exactly-zero analytic gradient (used for
/// branches behind stop_gradient, where a finite difference would by design
/// disagree with the defined derivative).
struct CheckUnit {
  Var loss;
  std::vector<Var> fd_leaves;
  std::vector<Var> zero_leaves;
};

using UnitBuilder = std::function<CheckUnit(Graph<double>&, Rng&)>;

/// Runs one finite-difference verification in 64-bit mode.
///
/// Returns max over all checked coordinates of
///   |analytic - central_difference| / max(1, |analytic|),
/// and +infinity if any zero_leaf carries a nonzero analytic gradient.
double run_grad_check(const UnitBuilder& builder, std::uint64_t seed, double epsilon);

/// Named registry of checkable units; cmd_gradcheck iterates it.
class GradCheckRegistry {
 public:
  static GradCheckRegistry& instance();

  void add(const std::string& name, UnitBuilder builder);
  bool contains(const std::string& name) const { return units_.count(name) != 0; }
  const UnitBuilder& find(const std::string& name) const;
  std::vector<std::string> names() const;

 private:
  std::map<std::string, UnitBuilder> units_;
};

/// grad_check entry point: builds the named unit from a seed-derived random
/// point and returns the max relative error. epsilon must lie in
/// [1e-7, 1e-3]; an unknown name raises LookupError.
double grad_check(const std::string& op_name, std::uint64_t seed, double epsilon);

/// Registers the operator-level units (idempotent).
void register_kernel_units();

/// Registers the composite network/loss units (idempotent).
void register_model_units();

}  // namespace msrd

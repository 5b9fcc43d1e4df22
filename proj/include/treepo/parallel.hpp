// Copyright 2026 The TreePO-Toy Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Execution mode shared by the data-parallel kernels. Every kernel has a
// serial reference path; the OpenMP path must produce bit-identical results.

#pragma once

#include <cstddef>
#include <exception>
#include <mutex>

namespace treepo {

enum class Exec { Serial, Parallel };

/// Number of OpenMP threads (1 when built without OpenMP).
int max_threads();
void set_threads(int n);

/// Collects the first exception thrown inside a parallel region so it can be
/// rethrown on the calling thread; OpenMP regions must not propagate them.
class ExceptionSlot {
 public:
  template <class F>
  void run(F&& f) noexcept {
    try {
      f();
    } catch (...) {
      std::lock_guard<std::mutex> lock(mu_);
      if (!first_) first_ = std::current_exception();
    }
  }
  void rethrow() const {
    if (first_) std::rethrow_exception(first_);
  }

 private:
  std::mutex mu_;
  std::exception_ptr first_;
};

}  // namespace treepo

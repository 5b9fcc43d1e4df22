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

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace treepo {

enum class ErrorCode {
  // tree
  AttachToLeaf,
  DepthExceeded,
  UnknownNode,
  ActiveNodesRemain,
  // engine
  ConfigInvalid,
  BackendFailure,
  EmptyActiveSet,
  FallbackNotEligible,
  // advantage
  DegenerateGroup,
  DepthOutOfRange,
  UnfilteredDegenerateQuery,
  // objective
  EmptyBatch,
  ShapeMismatch,
  // costmodel
  DivisionByZero,
  // io
  Io,
  Parse,
};

/// Error families, used by the CLI to pick an exit code.
enum class ErrorFamily { Tree = 2, Engine = 3, Advantage = 4, Objective = 5, Cost = 6, Io = 7 };

constexpr ErrorFamily family_of(ErrorCode code) {
  switch (code) {
    case ErrorCode::AttachToLeaf:
    case ErrorCode::DepthExceeded:
    case ErrorCode::UnknownNode:
    case ErrorCode::ActiveNodesRemain:
      return ErrorFamily::Tree;
    case ErrorCode::ConfigInvalid:
    case ErrorCode::BackendFailure:
    case ErrorCode::EmptyActiveSet:
    case ErrorCode::FallbackNotEligible:
      return ErrorFamily::Engine;
    case ErrorCode::DegenerateGroup:
    case ErrorCode::DepthOutOfRange:
    case ErrorCode::UnfilteredDegenerateQuery:
      return ErrorFamily::Advantage;
    case ErrorCode::EmptyBatch:
    case ErrorCode::ShapeMismatch:
      return ErrorFamily::Objective;
    case ErrorCode::DivisionByZero:
      return ErrorFamily::Cost;
    case ErrorCode::Io:
    case ErrorCode::Parse:
      return ErrorFamily::Io;
  }
  return ErrorFamily::Io;
}

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }
  ErrorFamily family() const noexcept { return family_of(code_); }

 private:
  ErrorCode code_;
};

}  // namespace treepo

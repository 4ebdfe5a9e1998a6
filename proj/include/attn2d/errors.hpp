// Copyright 2026 The Attention2D Simulator Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <stdexcept>
#include <string>

namespace attn2d {

// Operand shapes do not agree.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class DivisionByZeroError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// A query row has no attendable key left at finalization.
class FullyMaskedRowError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Invalid run configuration (grid not square, p does not divide n, ...).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Misuse of the simulated fabric: un-waited buffer read, double wait,
// leaked handle, double-buffer overflow.
class SimulationFault : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Every live processor is blocked on a receive nobody will satisfy.
class DeadlockError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InfeasibleStrategyError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace attn2d

// Copyright 2026 The msavg Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <functional>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace msavg {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using RowVec = Eigen::RowVectorXd;

// Batched field evaluation. Column k of x (m x K) and y (n x K) is one
// evaluation point; all points share the time t. Vector fields write a
// dim x K block, matrix fields write (rows*cols) x K with each column holding
// a column-major rows x cols matrix.
using ConstBatch = Eigen::Ref<const Mat>;
using OutBatch = Eigen::Ref<Mat>;
using Field = std::function<void(ConstBatch x, ConstBatch y, double t, OutBatch out)>;

enum class ErrorKind {
  kModelEvaluation,
  kSingularDiffusion,
  kInvalidDensity,
  kCellSolver,
  kCentering,
  kDependency,
  kAveraging,
  kDivergence,
  kNumerical,
  kUnsupportedModel,
  kIneligibleModel,
  kConfiguration,
  kEstimation,
  kIo,
};

const char* to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(std::string module, ErrorKind kind, const std::string& what)
      : std::runtime_error(module + ": " + to_string(kind) + ": " + what),
        module_(std::move(module)),
        kind_(kind) {}

  const std::string& module() const { return module_; }
  ErrorKind kind() const { return kind_; }

 private:
  std::string module_;
  ErrorKind kind_;
};

// Formats a point for error messages.
std::string describe_point(const Vec& x, const Vec& y, double t);

}  // namespace msavg

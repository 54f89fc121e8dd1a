// Copyright 2026 The codkit Authors. All Rights Reserved.
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
#include <vector>

namespace codkit {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Input that violates a documented precondition (bad box, bad argument).
class InvalidInput : public Error {
 public:
  using Error::Error;
};

// Inconsistent or unsupported configuration. Maps to exit code 2 in the CLI.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Failure while reading an external dataset file; the message names the file.
class IngestionError : public Error {
 public:
  IngestionError(const std::string& file, const std::string& what)
      : Error(file + ": " + what), file_(file) {}
  const std::string& file() const { return file_; }

 private:
  std::string file_;
};

// Non-finite loss or similar fault during optimization. Carries the most
// recent ledger rows (already formatted as CSV lines) for diagnosis.
class TrainingFault : public Error {
 public:
  TrainingFault(const std::string& what, std::vector<std::string> recent_rows)
      : Error(what), recent_rows_(std::move(recent_rows)) {}
  const std::vector<std::string>& recent_rows() const { return recent_rows_; }

 private:
  std::vector<std::string> recent_rows_;
};

}  // namespace codkit

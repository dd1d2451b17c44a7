// risknav - lidar annotation and risk-aware navigation
// SPDX-License-Identifier: MIT

#pragma once

#include <stdexcept>
#include <string>

namespace risknav {

// Error taxonomy shared by the library and the command line front end.
// ConfigError  -> bad configuration (unknown keys, invalid values)
// DataError    -> malformed or inconsistent input data (files, frames, maps)
// IcpError     -> alignment failure (divergence, degenerate geometry)
// PlanError    -> planning failure (unreachable goal, optimizer breakdown)

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : Error {
  using Error::Error;
};

struct DataError : Error {
  using Error::Error;
};

struct IcpError : Error {
  using Error::Error;
};

struct PlanError : Error {
  using Error::Error;
};

}  // namespace risknav

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace cfgrpo {

enum class ErrorKind {
    Contract = 1,
    Config = 2,
    Io = 3,
    Numerical = 4,
    Corruption = 5,
};

class Error : public std::runtime_error {
  public:
    Error(ErrorKind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

  private:
    ErrorKind kind_;
};

struct ContractViolation : Error {
    explicit ContractViolation(const std::string& m) : Error(ErrorKind::Contract, m) {}
};
struct ConfigError : Error {
    explicit ConfigError(const std::string& m) : Error(ErrorKind::Config, m) {}
};
struct IoError : Error {
    explicit IoError(const std::string& m) : Error(ErrorKind::Io, m) {}
};
struct NumericalError : Error {
    explicit NumericalError(const std::string& m) : Error(ErrorKind::Numerical, m) {}
};
struct CorruptionError : Error {
    explicit CorruptionError(const std::string& m) : Error(ErrorKind::Corruption, m) {}
};

#define CFGRPO_REQUIRE(cond, msg)                                   \
    do {                                                            \
        if (!(cond)) throw ::cfgrpo::ContractViolation(msg);        \
    } while (0)

} // namespace cfgrpo

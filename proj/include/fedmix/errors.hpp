#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace fedmix {

// Shape or layout disagreement between inputs (wrong vector length,
// mismatched parameter blocks, stale caches).
class StructuralError : public std::runtime_error {
public:
    explicit StructuralError(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid configuration value (bad hyperparameter range, missing field).
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// A documented precondition on the data itself was violated at runtime
// (off-simplex rows, empty count vectors).
class ContractViolation : public std::runtime_error {
public:
    explicit ContractViolation(const std::string& msg) : std::runtime_error(msg) {}
};

// Training produced a non-finite loss or parameter; carries the round at
// which the run stopped.
class DivergenceError : public std::runtime_error {
public:
    DivergenceError(std::uint64_t round, const std::string& msg)
        : std::runtime_error(msg), round_(round) {}
    std::uint64_t round() const { return round_; }

private:
    std::uint64_t round_;
};

} // namespace fedmix

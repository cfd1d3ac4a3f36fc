#pragma once

#include <stdexcept>
#include <utility>
#include <string>

namespace gcs {

/// Input outside the mathematical domain of an operation.
class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// A statistic that is undefined for the given state (e.g. Mandel Q of the vacuum).
class UndefinedStatistic : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// Two evaluation routes that must agree did not.
class NumericalConsistencyError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A series produced a non-finite intermediate.
class OverflowError : public std::overflow_error {
public:
    using std::overflow_error::overflow_error;
};

/// Adaptive quadrature did not settle within its refinement budget.
class ConvergenceError : public std::runtime_error {
public:
    ConvergenceError(const std::string& what, double previous, double last)
        : std::runtime_error(what + " (last estimates " + std::to_string(previous) + ", " +
                             std::to_string(last) + ")"),
          previous_(previous), last_(last) {}

    double previous_estimate() const noexcept { return previous_; }
    double last_estimate() const noexcept { return last_; }

private:
    double previous_;
    double last_;
};

/// Malformed or invalid scan configuration. `key_path` names the offending entry.
class ConfigError : public std::runtime_error {
public:
    ConfigError(std::string key_path, const std::string& what)
        : std::runtime_error(key_path.empty() ? what : key_path + ": " + what),
          key_path_(std::move(key_path)) {}

    const std::string& key_path() const noexcept { return key_path_; }

private:
    std::string key_path_;
};

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace gcs

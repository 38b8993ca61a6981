#pragma once

#include <stdexcept>
#include <string>

namespace tesser {

// Caller broke an internal contract (e.g. a hook returned a gradient with the
// wrong shape). Distinct from invalid_argument so the CLI can report it as an
// internal consistency failure rather than bad user input.
struct ContractViolation : std::logic_error {
    explicit ContractViolation(const std::string& msg) : std::logic_error(msg) {}
};

// Malformed or inconsistent checkpoint file; message names the offending field.
struct FormatError : std::runtime_error {
    explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

struct TrainingFailure : std::runtime_error {
    int epoch;
    TrainingFailure(const std::string& msg, int epoch_index)
        : std::runtime_error(msg), epoch(epoch_index) {}
};

struct UnsupportedArchitecture : std::invalid_argument {
    explicit UnsupportedArchitecture(const std::string& msg) : std::invalid_argument(msg) {}
};

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

inline void require_contract(bool cond, const std::string& msg) {
    if (!cond) throw ContractViolation(msg);
}

}  // namespace tesser

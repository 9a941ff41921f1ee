#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace trustgan {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed or out-of-range data handed to an operation.
class InvalidInput : public Error {
public:
    using Error::Error;
};

/// Caller broke a precondition of the API (wrong rank, shape mismatch, ...).
class ContractViolation : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

/// Operation requires state that does not exist yet (e.g. an empty snapshot store).
class StateError : public Error {
public:
    using Error::Error;
};

class FormatError : public Error {
public:
    FormatError(const std::string& what, std::size_t offset)
        : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}

    std::size_t offset() const noexcept { return offset_; }

private:
    std::size_t offset_;
};

class TrainingDiverged : public Error {
public:
    TrainingDiverged(const std::string& what, std::size_t epoch, std::size_t batch)
        : Error(what + " (epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch) + ")"),
          epoch_(epoch),
          batch_(batch) {}

    std::size_t epoch() const noexcept { return epoch_; }
    std::size_t batch() const noexcept { return batch_; }

private:
    std::size_t epoch_;
    std::size_t batch_;
};

class UndefinedMetric : public Error {
public:
    using Error::Error;
};

class UnattainableOperatingPoint : public Error {
public:
    using Error::Error;
};

}  // namespace trustgan

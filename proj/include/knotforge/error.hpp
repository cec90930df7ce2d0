#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace knotforge {

/// Base class for every error raised by the engine.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Tensor shapes do not line up.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// A softmax row has no unmasked entry.
class DegenerateRowError : public Error {
public:
    using Error::Error;
};

/// Invalid configuration values.
class ConfigError : public Error {
public:
    using Error::Error;
};

class IndexError : public Error {
public:
    using Error::Error;
};

/// Two frames share a RoPE position where that is forbidden.
class PositionError : public Error {
public:
    using Error::Error;
};

/// Cache positions pushed out of order.
class OrderingError : public Error {
public:
    using Error::Error;
};

/// Timestep outside [0, 1000].
class ScheduleError : public Error {
public:
    using Error::Error;
};

/// A chunk produced non-finite values; carries the offending chunk index.
class NumericError : public Error {
public:
    NumericError(std::size_t chunk, const std::string& what)
        : Error(what), chunk_(chunk) {}
    std::size_t chunk() const noexcept { return chunk_; }

private:
    std::size_t chunk_;
};

}  // namespace knotforge

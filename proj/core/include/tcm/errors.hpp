#pragma once

#include <stdexcept>
#include <string>

namespace tcm {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid model/block configuration or shape contract violation.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Malformed container, wrong magic/version, model-id mismatch.
class FormatError : public Error {
public:
    using Error::Error;
};

/// Entropy-coded payload could not be decoded. `stream_index` is -1 for the
/// hyper stream and the slice index otherwise.
class DecodeError : public Error {
public:
    DecodeError(const std::string& what, int stream_index = -2)
        : Error(what), stream_index_(stream_index) {}
    int stream_index() const { return stream_index_; }

private:
    int stream_index_;
};

/// Non-finite loss or parameter during optimization.
class NumericalError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace tcm

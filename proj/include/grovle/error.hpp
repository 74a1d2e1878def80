#pragma once

#include <stdexcept>
#include <string>

namespace grovle {

// Base for every error the library raises.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Malformed input, shape mismatch, or a violated precondition on data.
class DataError : public Error {
public:
    using Error::Error;
};

// The filesystem refused a read or write.
class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace grovle

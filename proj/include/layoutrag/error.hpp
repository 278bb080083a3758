#pragma once

#include <stdexcept>
#include <string>

namespace layoutrag {

// Base of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Input data that cannot be used: unreadable files, bad records, invalid conditions.
class DataError : public Error {
 public:
  using Error::Error;
};

// Caller misuse: bad arguments or configuration.
class UsageError : public Error {
 public:
  using Error::Error;
};

class CorruptFileError : public DataError {
 public:
  using DataError::DataError;
};

class VersionError : public DataError {
 public:
  using DataError::DataError;
};

// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace layoutrag

#pragma once

#include <stdexcept>
#include <string>

namespace coda {

/// Root of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// A box corner sits at or behind the image plane; the box is not observable.
class BehindCamera : public Error {
 public:
  using Error::Error;
};

class EmptyCrop : public Error {
 public:
  using Error::Error;
};

/// Text embedding rejection sampling ran out of attempts (D too small for C).
class EmbeddingCollision : public Error {
 public:
  using Error::Error;
};

class TooFewPoints : public Error {
 public:
  using Error::Error;
};

class NonFiniteGradient : public Error {
 public:
  NonFiniteGradient(std::string head, const std::string& context = {})
      : Error("non-finite gradient in head '" + head + "'" +
              (context.empty() ? std::string{} : " (" + context + ")")),
        head_(std::move(head)) {}

  const std::string& head() const noexcept { return head_; }

 private:
  std::string head_;
};

class MissingMetrics : public Error {
 public:
  using Error::Error;
};

}  // namespace coda

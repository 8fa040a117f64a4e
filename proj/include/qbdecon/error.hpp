#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace qbd {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidParameter : public Error {
 public:
  using Error::Error;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

// The mixing characteristic function fell below the floor at `point`.
class DegeneratePoint : public Error {
 public:
  DegeneratePoint(const std::string& what, Eigen::VectorXd point)
      : Error(what), point_(std::move(point)) {}
  const Eigen::VectorXd& point() const { return point_; }

 private:
  Eigen::VectorXd point_;
};

class IdentificationError : public Error {
 public:
  IdentificationError(const std::string& what, Eigen::Index rank)
      : Error(what), rank_(rank) {}
  Eigen::Index rank() const { return rank_; }

 private:
  Eigen::Index rank_;
};

class ResourceError : public Error {
 public:
  using Error::Error;
};

class SamplerAbort : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  ConfigError(std::string field, const std::string& what)
      : Error(field + ": " + what), field_(std::move(field)), message_(what) {}
  const std::string& field() const { return field_; }
  const std::string& message() const { return message_; }

 private:
  std::string field_;
  std::string message_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace qbd

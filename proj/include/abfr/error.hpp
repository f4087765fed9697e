#pragma once

#include <stdexcept>
#include <string>

namespace abfr {

// Base for every error raised by the library. Subclasses only carry the
// category; the message names the offending field or value.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

class ContractError : public Error {
 public:
  using Error::Error;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class ParseError : public FormatError {
 public:
  ParseError(std::string field, const std::string& what)
      : FormatError(field + ": " + what), field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

class InfeasibleError : public Error {
 public:
  InfeasibleError(const std::string& what, double acceptance_rate)
      : Error(what), acceptance_rate_(acceptance_rate) {}
  double acceptance_rate() const { return acceptance_rate_; }

 private:
  double acceptance_rate_;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace abfr

#pragma once

#include <limits>
#include <stdexcept>
#include <string>

namespace ivbandit {

// Invalid experiment or distribution parameters.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Caller broke a precondition (dimension mismatch, arm out of range, ...).
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A matrix that must be inverted is singular (or numerically so). Carries
/// the ratio of extreme eigenvalues that triggered the failure.
class SingularityError : public NumericalError {
 public:
  SingularityError(const std::string& what, double condition)
      : NumericalError(what + " (condition " + std::to_string(condition) + ")"),
        condition_(condition) {}

  double condition() const noexcept { return condition_; }

 private:
  double condition_;
};

// The instrument Gram matrix Z'Z is singular.
class IvGramSingular : public SingularityError {
 public:
  explicit IvGramSingular(double condition)
      : SingularityError("IV Gram singular", condition) {}
};

// The projected regressor Gram V'P[Z]V is singular; instruments do not
// identify the coefficients on this sample.
class IdentificationFailure : public SingularityError {
 public:
  explicit IdentificationFailure(double condition)
      : SingularityError("identification failure", condition) {}
};

class ArmUnderSampled : public std::runtime_error {
 public:
  ArmUnderSampled(int arm, long observations, long required)
      : std::runtime_error("arm under-sampled: arm " + std::to_string(arm) + " has " +
                           std::to_string(observations) + " observations, needs " +
                           std::to_string(required)),
        arm_(arm) {}

  int arm() const noexcept { return arm_; }

 private:
  int arm_;
};

class RootOutsideBeliefRange : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

}  // namespace ivbandit

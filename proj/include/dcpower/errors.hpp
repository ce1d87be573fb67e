#pragma once

#include <stdexcept>
#include <string>

namespace dcpower {

/// Base of all library errors. `context()` names the module/operation.
class Error : public std::runtime_error {
public:
    Error(std::string context, const std::string& what)
        : std::runtime_error(context.empty() ? what : context + ": " + what), context_(std::move(context)) {}

    const std::string& context() const noexcept { return context_; }

private:
    std::string context_;
};

/// A residual evaluator hit a domain violation (e.g. a nonpositive voltage in a divisor).
class DomainError : public Error {
public:
    DomainError(const std::string& block, const std::string& variable, const std::string& what)
        : Error(block, variable + ": " + what), block_(block), variable_(variable) {}

    const std::string& block() const noexcept { return block_; }
    const std::string& variable() const noexcept { return variable_; }

private:
    std::string block_;
    std::string variable_;
};

class ParameterError : public Error {
public:
    ParameterError(const std::string& name, const std::string& what) : Error("parameters", name + ": " + what), name_(name) {}
    const std::string& name() const noexcept { return name_; }

private:
    std::string name_;
};

class BuildError : public Error {
public:
    explicit BuildError(const std::string& what) : Error("assembly", what) {}
};

class SolverError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& what) : Error("config", what) {}
};

}  // namespace dcpower

#pragma once

#include <stdexcept>
#include <string>

namespace forestvol {

/// Invalid configuration value. `field` is the dotted path, e.g. "training.epochs".
class ConfigError : public std::invalid_argument {
public:
    ConfigError(std::string field, const std::string& what)
        : std::invalid_argument(field + ": " + what), field_(std::move(field)) {}

    const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

/// Problem with an input record (file, plot, cloud). `record` names the offender.
class DataError : public std::runtime_error {
public:
    DataError(std::string record, const std::string& what)
        : std::runtime_error(record + ": " + what), record_(std::move(record)) {}

    const std::string& record() const noexcept { return record_; }

private:
    std::string record_;
};

}  // namespace forestvol

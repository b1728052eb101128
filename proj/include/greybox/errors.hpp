#pragma once

#include <stdexcept>
#include <string>

namespace greybox {

// Error taxonomy mapped to CLI exit codes: config -> 1, data -> 2, numerical -> 3.
enum class ErrorKind { Config, Data, Numerical };

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, std::string message)
        : std::runtime_error(std::move(message)), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

    int exit_code() const noexcept {
        switch (kind_) {
            case ErrorKind::Config: return 1;
            case ErrorKind::Data: return 2;
            case ErrorKind::Numerical: return 3;
        }
        return 3;
    }

private:
    ErrorKind kind_;
};

inline Error config_error(std::string msg) { return Error(ErrorKind::Config, std::move(msg)); }
inline Error data_error(std::string msg) { return Error(ErrorKind::Data, std::move(msg)); }
inline Error numerical_error(std::string msg) { return Error(ErrorKind::Numerical, std::move(msg)); }

} // namespace greybox

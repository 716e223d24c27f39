#pragma once

#include <stdexcept>
#include <string>

namespace dmsp {

// Error categories map to CLI exit codes: usage=2, data=3, numeric=4.
enum class ErrorKind { usage, data, numeric };

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, std::string code, const std::string& detail)
        : std::runtime_error(detail.empty() ? code : code + ": " + detail),
          kind_(kind),
          code_(std::move(code)) {}

    ErrorKind kind() const noexcept { return kind_; }
    const std::string& code() const noexcept { return code_; }

private:
    ErrorKind kind_;
    std::string code_;
};

inline Error data_error(std::string code, const std::string& detail = "") {
    return Error(ErrorKind::data, std::move(code), detail);
}

inline Error numeric_error(std::string code, const std::string& detail = "") {
    return Error(ErrorKind::numeric, std::move(code), detail);
}

inline Error usage_error(std::string code, const std::string& detail = "") {
    return Error(ErrorKind::usage, std::move(code), detail);
}

}  // namespace dmsp

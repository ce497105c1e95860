#ifndef DKPS_ERROR_HPP
#define DKPS_ERROR_HPP

#include <stdexcept>
#include <string>

namespace dkps {

/// Every failure raised by the library carries a short machine-readable code
/// (e.g. "MissingCell", "ParseError") next to the human message.
class Error : public std::runtime_error {
public:
    Error(std::string code, const std::string& message)
        : std::runtime_error(message), code_(std::move(code)) {}

    const std::string& code() const noexcept { return code_; }

private:
    std::string code_;
};

/// Bad command-line usage; the CLI maps it to exit status 1.
class UsageError : public Error {
public:
    explicit UsageError(const std::string& message) : Error("UsageError", message) {}
};

} // namespace dkps

#endif

#ifndef MKNOCK_COMMON_HPP
#define MKNOCK_COMMON_HPP

#include <functional>
#include <stdexcept>
#include <string>

namespace mknock {

// Error categories map 1:1 onto CLI exit codes (see tools/).
struct config_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct io_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Numerical preconditions violated (non-PSD Gram, degenerate design, ...).
struct numerical_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Iterative solver failed to converge.
struct solver_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Non-fatal diagnostics (rank-deficient QR, tiny batches, ...) go through
// this hook so tests and the CLI can capture or silence them.
using WarningHandler = std::function<void(const std::string&)>;

void set_warning_handler(WarningHandler handler);
void warn(const std::string& message);

inline constexpr const char* kVersion = "0.1.0";

}  // namespace mknock

#endif

#pragma once

#include <stdexcept>

namespace wfqkd {

/// A fitness sample could not be produced (e.g. the monitor arm saw nothing).
/// Aborts an optimization run.
class EvaluationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace wfqkd

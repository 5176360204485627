#pragma once

#include <stdexcept>
#include <string>

namespace ego2front {

// Caller supplied something invalid (bad shape, out-of-range value, unknown
// config key, missing file). The CLI maps this to exit status 1.
class UserError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ShapeError : public UserError {
public:
    using UserError::UserError;
};

class RangeError : public UserError {
public:
    using UserError::UserError;
};

// A configured ablation component (external weights, feature extractor) is
// not available. Never silently replaced by another variant.
class AblationUnavailable : public UserError {
public:
    using UserError::UserError;
};

// Training produced a non-finite loss. The last good checkpoint is kept.
class TrainingDiverged : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace ego2front

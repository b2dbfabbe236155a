#pragma once

#include <stdexcept>
#include <string>

namespace sfada {

/// Bad value passed through a public contract (negative temperature,
/// out-of-range ratio, unknown strategy name, ...).
struct InvalidParameterError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Operands whose dimensions do not line up.
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Structurally valid call on data the operation cannot accept
/// (zero-norm vector, empty sample set, ...).
struct InvalidInputError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Dataset content violates an invariant (missing class, label out of range).
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Malformed on-disk artifact; message carries line/field position.
struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Non-finite value produced where a finite one is required.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// A sample index was queried from the oracle more than once.
struct DuplicateQueryError : std::logic_error {
  using std::logic_error::logic_error;
};

/// The oracle's labeling budget is already spent.
struct BudgetExhaustedError : std::logic_error {
  using std::logic_error::logic_error;
};

/// Caller broke an API precondition (e.g. queried sample without a label).
struct ContractError : std::logic_error {
  using std::logic_error::logic_error;
};

}  // namespace sfada

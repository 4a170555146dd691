#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace alime {

enum class ErrorCode {
  missing_column,
  unknown_category,
  non_binary_label,
  empty_matrix,
  dimension_mismatch,
  degenerate_split,
  non_finite_input,
  non_finite_loss,
  fold_too_small,
  invalid_variance,
  negative_distance,
  too_few_runs,
  grid_exceeds_pool,
  invalid_argument,
  missing_file,
  io_error,
  parse_error,
  index_error,
};

constexpr std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::missing_column: return "MissingColumn";
    case ErrorCode::unknown_category: return "UnknownCategory";
    case ErrorCode::non_binary_label: return "NonBinaryLabel";
    case ErrorCode::empty_matrix: return "EmptyMatrix";
    case ErrorCode::dimension_mismatch: return "DimensionMismatch";
    case ErrorCode::degenerate_split: return "DegenerateSplit";
    case ErrorCode::non_finite_input: return "NonFiniteInput";
    case ErrorCode::non_finite_loss: return "NonFiniteLoss";
    case ErrorCode::fold_too_small: return "FoldTooSmall";
    case ErrorCode::invalid_variance: return "InvalidVariance";
    case ErrorCode::negative_distance: return "NegativeDistance";
    case ErrorCode::too_few_runs: return "TooFewRuns";
    case ErrorCode::grid_exceeds_pool: return "GridExceedsPool";
    case ErrorCode::invalid_argument: return "InvalidArgument";
    case ErrorCode::missing_file: return "MissingFile";
    case ErrorCode::io_error: return "IoError";
    case ErrorCode::parse_error: return "ParseError";
    case ErrorCode::index_error: return "IndexError";
  }
  return "Unknown";
}

/// Library-wide exception. The code identifies the failure class, the message
/// carries the details (column names, shapes, offending values).
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline void require(bool condition, ErrorCode code, const std::string& message) {
  if (!condition) throw Error(code, message);
}

}  // namespace alime

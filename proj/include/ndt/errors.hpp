#ifndef NDT_ERRORS_HPP_
#define NDT_ERRORS_HPP_

#include <stdexcept>
#include <string>

namespace ndt {

// Thrown when a requested route does not exist.
struct NoPathError : std::runtime_error {
  explicit NoPathError(const std::string& what) : std::runtime_error(what) {}
};

// Thrown when a generator would produce a graph without any links.
struct EmptyGraphError : std::runtime_error {
  explicit EmptyGraphError(const std::string& what) : std::runtime_error(what) {}
};

// Thrown when a spread-normalized metric is requested on zero-spread data.
struct DegenerateSpreadError : std::runtime_error {
  explicit DegenerateSpreadError(const std::string& what) : std::runtime_error(what) {}
};

// Thrown by the fixed-output-width baseline when the scenario path count
// does not match the width the model was built for.
struct FixedOutputWidthError : std::runtime_error {
  explicit FixedOutputWidthError(const std::string& what) : std::runtime_error(what) {}
};

// Thrown when dataset generation or training cannot proceed.
struct TrainingError : std::runtime_error {
  explicit TrainingError(const std::string& what) : std::runtime_error(what) {}
};

struct DatasetBuildError : std::runtime_error {
  explicit DatasetBuildError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace ndt

#endif  // NDT_ERRORS_HPP_

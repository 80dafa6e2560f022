// Exception taxonomy shared across the toolkit.
#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace easqe {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// BIO label sequence has an I tag with no compatible predecessor.
struct InvalidBioError : Error {
  using Error::Error;
};

struct OverlapError : Error {
  using Error::Error;
};

struct CategoryError : Error {
  using Error::Error;
};

// Framed input would exceed the sequence-length cap.
struct TooLongError : Error {
  using Error::Error;
};

struct SpanOutOfBoundsError : Error {
  using Error::Error;
};

struct MissingEmbeddingError : Error {
  using Error::Error;
};

struct DimensionMismatchError : Error {
  using Error::Error;
};

struct FormatError : Error {
  using Error::Error;
};

struct ShapeError : Error {
  using Error::Error;
};

struct ModeError : Error {
  using Error::Error;
};

struct EmptyDatasetError : Error {
  using Error::Error;
};

struct SchemeMismatchError : Error {
  using Error::Error;
};

struct TaskError : Error {
  using Error::Error;
};

struct IdMismatchError : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};

struct ParseError : Error {
  ParseError(std::size_t line_no, const std::string& what)
      : Error("line " + std::to_string(line_no) + ": " + what), line(line_no) {}
  std::size_t line;
};

struct ValidationError : Error {
  ValidationError(std::size_t line_no, const std::string& what,
                  std::vector<std::string> violation_list = {})
      : Error("line " + std::to_string(line_no) + ": " + what),
        line(line_no),
        violations(std::move(violation_list)) {}
  std::size_t line;
  std::vector<std::string> violations;
};

}  // namespace easqe

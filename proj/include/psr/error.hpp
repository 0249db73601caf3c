#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace psr {

/// Base of every error raised by the library. `kind()` is a stable
/// machine-readable tag that the CLI and tests key on.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(kind + ": " + what), kind_(std::move(kind)) {}

  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

#define PSR_DEFINE_ERROR(Name)                                       \
  class Name : public Error {                                        \
   public:                                                           \
    explicit Name(const std::string& what) : Error(#Name, what) {}   \
  }

PSR_DEFINE_ERROR(MalformedStep);
PSR_DEFINE_ERROR(NonContiguousIndex);
PSR_DEFINE_ERROR(MissingPlaceholder);
PSR_DEFINE_ERROR(EmptyInput);
PSR_DEFINE_ERROR(InvalidArgument);
PSR_DEFINE_ERROR(UnknownAction);
PSR_DEFINE_ERROR(OracleUnavailable);
PSR_DEFINE_ERROR(NotSynthetic);
PSR_DEFINE_ERROR(BackendError);
PSR_DEFINE_ERROR(GenerationError);
PSR_DEFINE_ERROR(UnparseableScore);
PSR_DEFINE_ERROR(NonFiniteInput);
PSR_DEFINE_ERROR(EmptyPairs);
PSR_DEFINE_ERROR(ProducerVersionError);
PSR_DEFINE_ERROR(IoError);
PSR_DEFINE_ERROR(SchemaMismatch);
PSR_DEFINE_ERROR(ContentAltered);
PSR_DEFINE_ERROR(AnnotatorError);
PSR_DEFINE_ERROR(NoAnswerFound);
PSR_DEFINE_ERROR(NoPairsGenerated);
PSR_DEFINE_ERROR(ConfigError);
PSR_DEFINE_ERROR(Timeout);
PSR_DEFINE_ERROR(RetriesExhausted);
PSR_DEFINE_ERROR(MalformedResponse);

#undef PSR_DEFINE_ERROR

class MalformedLine : public Error {
 public:
  MalformedLine(std::size_t line_no, const std::string& what)
      : Error("MalformedLine", "line " + std::to_string(line_no) + ": " + what),
        line_no_(line_no) {}
  std::size_t line_no() const noexcept { return line_no_; }

 private:
  std::size_t line_no_;
};

class HttpError : public Error {
 public:
  HttpError(int status, const std::string& what)
      : Error("HttpError", "status " + std::to_string(status) + ": " + what),
        status_(status) {}
  int status() const noexcept { return status_; }

 private:
  int status_;
};

/// A judge failure annotated with the tournament coordinates that raised it.
class JudgeError : public Error {
 public:
  JudgeError(std::size_t i, std::size_t j, const std::string& what)
      : Error("JudgeError",
              "comparison (" + std::to_string(i) + ", " + std::to_string(j) + "): " + what),
        i_(i), j_(j) {}
  std::size_t i() const noexcept { return i_; }
  std::size_t j() const noexcept { return j_; }

 private:
  std::size_t i_, j_;
};

}  // namespace psr

#pragma once

#include <stdexcept>
#include <string>

namespace mrd {

// Every error raised by the library carries a short machine-readable kind
// ("dimension", "parameter", ...) next to its human-readable message.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& message)
      : std::runtime_error(message), kind_(std::move(kind)) {}

  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

#define MRD_DEFINE_ERROR(Name, kind_name)                                  \
  class Name : public Error {                                              \
   public:                                                                 \
    explicit Name(const std::string& message) : Error(kind_name, message) {} \
  };

MRD_DEFINE_ERROR(DimensionError, "dimension")
MRD_DEFINE_ERROR(ParameterError, "parameter")
MRD_DEFINE_ERROR(ValidationError, "validation")
MRD_DEFINE_ERROR(IndexError, "index")
MRD_DEFINE_ERROR(ContractError, "contract")
MRD_DEFINE_ERROR(FormatError, "format")
MRD_DEFINE_ERROR(ConfigError, "config")
MRD_DEFINE_ERROR(ShapeError, "shape")
MRD_DEFINE_ERROR(VersionError, "version")
MRD_DEFINE_ERROR(EndpointError, "endpoint")
MRD_DEFINE_ERROR(IoError, "io")

#undef MRD_DEFINE_ERROR

}  // namespace mrd

#pragma once

#include <stdexcept>
#include <string>

namespace elib {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct CodecError : Error { using Error::Error; };       // block quantization / packing
struct FormatError : Error { using Error::Error; };      // container magic / version
struct ValidationError : Error { using Error::Error; };  // tensor shape vs spec
struct IoError : Error { using Error::Error; };
struct ShapeError : Error { using Error::Error; };
struct CapacityError : Error { using Error::Error; };    // KV cache / sequence limits
struct SamplingError : Error { using Error::Error; };
struct TokenError : Error { using Error::Error; };
struct MetricError : Error { using Error::Error; };
struct ConfigError : Error { using Error::Error; };
struct SpecError : Error { using Error::Error; };

}  // namespace elib

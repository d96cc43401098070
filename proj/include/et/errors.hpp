#pragma once

#include <stdexcept>
#include <string>

namespace et {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ShapeError : Error { using Error::Error; };
struct IndexError : Error { using Error::Error; };
struct ContractError : Error { using Error::Error; };
struct MaskedEmptyRowError : Error { using Error::Error; };
struct ConfigError : Error { using Error::Error; };
struct CorpusError : Error { using Error::Error; };
struct MetricError : Error { using Error::Error; };
struct TrainError : Error { using Error::Error; };
struct FormatError : Error { using Error::Error; };
struct IoError : Error { using Error::Error; };

} // namespace et

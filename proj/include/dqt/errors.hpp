#pragma once

#include <stdexcept>
#include <string>

namespace dqt {

struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// container / io
struct BadMagic : Error { using Error::Error; };
struct TruncatedFile : Error { using Error::Error; };
struct ShapeMismatch : Error { using Error::Error; };
struct NonFiniteData : Error { using Error::Error; };
struct IoError : Error { using Error::Error; };

// sketch
struct AlphaOutOfRange : Error { using Error::Error; };
struct AlphaMismatch : Error { using Error::Error; };
struct EmptySketch : Error { using Error::Error; };

// scores
struct MissingGradients : Error { using Error::Error; };
struct MissingScores : Error { using Error::Error; };

// clustering
struct TooFewDistinctPoints : Error { using Error::Error; };

// config search
struct ExternalEvaluatorFailed : Error { using Error::Error; };

// codec / chain
struct CorruptIndex : Error { using Error::Error; };
struct CorruptBitstream : Error { using Error::Error; };
struct ChecksumMismatch : Error { using Error::Error; };
struct UnknownStep : Error { using Error::Error; };
struct ChainCorrupt : Error { using Error::Error; };

}  // namespace dqt

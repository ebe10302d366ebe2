#pragma once

#include <stdexcept>
#include <string>

namespace s2l {

// Base classes carry the CLI exit-code contract:
// UsageError -> 2, IoError -> 3, DataError -> 4.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct UsageError : Error {
  using Error::Error;
};
struct IoError : Error {
  using Error::Error;
};
struct DataError : Error {
  using Error::Error;
};

struct InvalidCoordinate : DataError {
  using DataError::DataError;
};
struct InvalidGridSpec : DataError {
  using DataError::DataError;
};
struct InvalidLevel : DataError {
  using DataError::DataError;
};
struct UnsupportedAudio : DataError {
  using DataError::DataError;
};
struct EmptyAudio : DataError {
  using DataError::DataError;
};
struct ShapeError : DataError {
  using DataError::DataError;
};
struct LabelError : DataError {
  using DataError::DataError;
};
struct BatchTooSmall : DataError {
  using DataError::DataError;
};
struct CorruptEmbeddingFile : DataError {
  using DataError::DataError;
};
struct CorruptFile : DataError {
  using DataError::DataError;
};
struct EmptyDataset : DataError {
  using DataError::DataError;
};
struct DimensionMismatch : DataError {
  using DataError::DataError;
};
struct EmptyGallery : DataError {
  using DataError::DataError;
};
struct EmptyClipList : DataError {
  using DataError::DataError;
};
struct GalleryMismatch : DataError {
  using DataError::DataError;
};
struct LengthMismatch : DataError {
  using DataError::DataError;
};
struct ManifestFieldError : DataError {
  using DataError::DataError;
};
struct SamplingExhausted : DataError {
  using DataError::DataError;
};
struct ConfigError : UsageError {
  using UsageError::UsageError;
};

}  // namespace s2l

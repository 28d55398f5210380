#pragma once

#include <stdexcept>
#include <string>

namespace scholarpipe {

enum class Errc {
  InvalidArgument,
  DuplicatePosition,
  MalformedRecord,
  SourceIO,
  EmptyPattern,
  PoolTooSmall,
  BackendExhausted,
  EmptyDocument,
  ZeroVector,
  DimensionMismatch,
  FrameTooSmall,
  IncompleteTriplet,
  UnknownLevel,
  RankDeficient,
  ZeroBase,
  SingleTopicUniverse,
  MissingPopulation,
  Config,
};

inline const char* errc_name(Errc code) {
  switch (code) {
    case Errc::InvalidArgument: return "InvalidArgument";
    case Errc::DuplicatePosition: return "DuplicatePosition";
    case Errc::MalformedRecord: return "MalformedRecord";
    case Errc::SourceIO: return "SourceIO";
    case Errc::EmptyPattern: return "EmptyPattern";
    case Errc::PoolTooSmall: return "PoolTooSmall";
    case Errc::BackendExhausted: return "BackendExhausted";
    case Errc::EmptyDocument: return "EmptyDocument";
    case Errc::ZeroVector: return "ZeroVector";
    case Errc::DimensionMismatch: return "DimensionMismatch";
    case Errc::FrameTooSmall: return "FrameTooSmall";
    case Errc::IncompleteTriplet: return "IncompleteTriplet";
    case Errc::UnknownLevel: return "UnknownLevel";
    case Errc::RankDeficient: return "RankDeficient";
    case Errc::ZeroBase: return "ZeroBase";
    case Errc::SingleTopicUniverse: return "SingleTopicUniverse";
    case Errc::MissingPopulation: return "MissingPopulation";
    case Errc::Config: return "Config";
  }
  return "Unknown";
}

// All library failures are reported through this one exception type; the
// code tells callers which contract was violated.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace scholarpipe

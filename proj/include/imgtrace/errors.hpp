#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace imgtrace {

// Base type for all toolkit errors. The CLI maps subtypes onto exit codes:
// configuration 2, missing stage dependency 3, data/provider/numeric 4.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

// Payload could not be decoded into a raster image (also raised for
// zero-area images and rejected animated formats).
class DecodeError : public Error {
public:
    using Error::Error;
};

// Malformed serialized value (hash hex, CSV field, JSON record).
class ParseError : public Error {
public:
    using Error::Error;
};

class EmptyClusterError : public Error {
public:
    using Error::Error;
};

// Remote web-detection call failed after retries.
class ProviderError : public Error {
public:
    ProviderError(const std::string& what, int attempts, int last_status)
        : Error(what), attempts(attempts), last_status(last_status) {}
    int attempts = 0;
    int last_status = 0;  // HTTP status of the last attempt, 0 = transport failure
};

// Offline provider has no fixture entry for the requested hash.
class FixtureMissError : public Error {
public:
    using Error::Error;
};

// One or more clusters lack a detection; carries the offending ids.
class AnnotationGapError : public Error {
public:
    AnnotationGapError(const std::string& what, std::vector<int64_t> ids)
        : Error(what), cluster_ids(std::move(ids)) {}
    std::vector<int64_t> cluster_ids;
};

// An upstream pipeline stage has not produced its artifact yet.
class DependencyError : public Error {
public:
    DependencyError(const std::string& what, std::string stage)
        : Error(what), stage(std::move(stage)) {}
    std::string stage;
};

// Stage artifact exists but was produced under a different configuration.
class StaleArtifactError : public Error {
public:
    using Error::Error;
};

class StabilityError : public Error {
public:
    using Error::Error;
};

// Non-finite likelihood or parameter during inference; carries a dump of
// the model state for post-mortem.
class NumericalError : public Error {
public:
    NumericalError(const std::string& what, std::string dump)
        : Error(what), model_dump(std::move(dump)) {}
    std::string model_dump;
};

class StatError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace imgtrace

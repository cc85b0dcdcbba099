#pragma once

#include <stdexcept>
#include <string>

namespace semid {

// Error hierarchy mirrored by the CLI exit codes (see tools/main.cpp).
struct InvalidArgument : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ParseError : std::runtime_error {
    ParseError(const std::string& path, long line, const std::string& what)
        : std::runtime_error(path + ":" + std::to_string(line) + ": " + what),
          line_number(line) {}
    long line_number;
};

struct MissingArtifact : std::runtime_error {
    MissingArtifact(const std::string& path, const std::string& producing_stage)
        : std::runtime_error("missing artifact '" + path + "' (produced by stage '" +
                             producing_stage + "')"),
          stage(producing_stage) {}
    std::string stage;
};

struct ConfigInvalid : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NumericDivergence : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace semid

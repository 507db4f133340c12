#pragma once

#include <stdexcept>
#include <string>

namespace trackteller {

// Base class for all library errors.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor shape / dimension mismatch. Message names both shapes.
struct ShapeError : Error {
  using Error::Error;
};

// Attention called with an empty key set; callers decide the fallback.
struct EmptyKeyError : Error {
  using Error::Error;
};

// Autodiff misuse: non-scalar loss, detached graph, double backward.
struct GradError : Error {
  using Error::Error;
};

// Unknown / missing parameter, missing gradient. Carries the name.
struct ParamError : Error {
  explicit ParamError(const std::string& name, const std::string& what)
      : Error("parameter '" + name + "': " + what), name(name) {}
  std::string name;
};

// Value outside an operation's domain (e.g. scores outside (0,1)).
struct DomainError : Error {
  using Error::Error;
};

// Word not in the fixed vocabulary.
struct VocabError : Error {
  explicit VocabError(const std::string& word)
      : Error("word not in vocabulary: '" + word + "'"), word(word) {}
  std::string word;
};

// Bad or unknown configuration key. Carries the key name.
struct ConfigError : Error {
  explicit ConfigError(const std::string& key, const std::string& what)
      : Error("config key '" + key + "': " + what), key(key) {}
  std::string key;
};

// Filesystem / IO failure.
struct IoError : Error {
  using Error::Error;
};

// Malformed record in an NDJSON stream. Carries the 1-based line number.
struct SchemaError : Error {
  SchemaError(long line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line(line) {}
  long line;
};

// Parameter file incompatible with the model configuration.
struct CompatError : Error {
  using Error::Error;
};

// Numerical failure during training (NaN/Inf loss).
struct NumericError : Error {
  using Error::Error;
};

// Prompt generation could not find a satisfying object.
struct GenError : Error {
  using Error::Error;
};

}  // namespace trackteller

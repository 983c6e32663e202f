#pragma once

#include <stdexcept>
#include <string>

namespace aogparts {

// Every failure the library raises derives from Error.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class FormatError : public Error { using Error::Error; };    // malformed file or document
class IndexError : public Error { using Error::Error; };     // unit index out of range
class ArgumentError : public Error { using Error::Error; };  // bad caller input
class LookupError : public Error { using Error::Error; };    // missing layer / slice
class ParseError : public Error { using Error::Error; };     // inference cannot proceed
class ContractError : public Error { using Error::Error; };  // violated precondition
class GenerationError : public Error { using Error::Error; }; // synthetic data cannot be built
class FitError : public Error { using Error::Error; };       // rank-curve fit impossible
class IoError : public Error { using Error::Error; };

} // namespace aogparts

#include "pairloc/error.hpp"

namespace pairloc {

ParseError::ParseError(const std::string& source, std::size_t line, const std::string& what)
    : Error(source + ":" + std::to_string(line) + ": " + what), line_(line) {}

}  // namespace pairloc

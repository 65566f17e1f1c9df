#pragma once

#include <stdexcept>
#include <string>

namespace softood {

// Every failure raised by the library carries a short machine-readable kind
// ("dimension_mismatch", "parse_error", ...) next to the human message. The
// CLI turns both into the JSON error object it prints on stderr.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& message)
      : std::runtime_error(message), kind_(std::move(kind)) {}

  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

}  // namespace softood

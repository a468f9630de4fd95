#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace breakdown {

// Error taxonomy used across the library. `Input` covers malformed data,
// configs, and schema violations; `Numerical` covers solver failures on
// well-formed inputs. The CLI maps the two kinds to distinct exit codes.
class Error : public std::runtime_error {
 public:
  enum class Kind { Input, Numerical };

  Error(Kind kind, std::string code, const std::string& message)
      : std::runtime_error(message), kind_(kind), code_(std::move(code)) {}

  Kind kind() const { return kind_; }
  const std::string& code() const { return code_; }

 private:
  Kind kind_;
  std::string code_;
};

[[noreturn]] inline void throw_input(const std::string& code, const std::string& msg) {
  throw Error(Error::Kind::Input, code, msg);
}

[[noreturn]] inline void throw_numerical(const std::string& code, const std::string& msg) {
  throw Error(Error::Kind::Numerical, code, msg);
}

}  // namespace breakdown

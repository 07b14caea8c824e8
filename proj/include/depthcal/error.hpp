#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace depthcal {

enum class Errc {
  empty_vector,
  dim_mismatch,
  non_finite,
  invalid_box,
  empty_box,
  degenerate_box,
  insufficient_objects,
  packing_failure,
  limit,
  schema,
  empty_input,
  no_seeds,
  io,
};

inline std::string_view errc_name(Errc code) {
  switch (code) {
    case Errc::empty_vector: return "empty-vector";
    case Errc::dim_mismatch: return "dim-mismatch";
    case Errc::non_finite: return "non-finite";
    case Errc::invalid_box: return "invalid-box";
    case Errc::empty_box: return "empty-box";
    case Errc::degenerate_box: return "degenerate-box";
    case Errc::insufficient_objects: return "insufficient-objects";
    case Errc::packing_failure: return "packing-failure";
    case Errc::limit: return "packing/limit";
    case Errc::schema: return "schema";
    case Errc::empty_input: return "empty-input";
    case Errc::no_seeds: return "no seeds";
    case Errc::io: return "io";
  }
  return "unknown";
}

/// Every failure raised by the library carries one of the Errc codes; the
/// what() string starts with the code name so callers can match on text.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& detail)
      : std::runtime_error(compose(code, detail)), code_(code) {}
  explicit Error(Errc code) : Error(code, "") {}

  Errc code() const noexcept { return code_; }

 private:
  static std::string compose(Errc code, const std::string& detail) {
    std::string msg(errc_name(code));
    if (!detail.empty()) {
      msg += ": ";
      msg += detail;
    }
    return msg;
  }

  Errc code_;
};

}  // namespace depthcal

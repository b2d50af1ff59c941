#include "nvs/rng.hpp"

#include <sstream>
#include <stdexcept>

namespace nvs {

std::string Rng::serialize() const {
  std::ostringstream os;
  os << engine_;
  return os.str();
}

Rng Rng::deserialize(const std::string& text) {
  std::istringstream is(text);
  std::mt19937_64 e;
  is >> e;
  if (is.fail()) throw std::runtime_error("rng: malformed serialized state");
  return Rng(e);
}

}  // namespace nvs

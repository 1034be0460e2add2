#include "weakpair/random.hpp"

#include <sstream>
#include <stdexcept>

namespace weakpair {

std::string serialize_rng(const Rng& rng) {
    std::ostringstream os;
    os << rng;
    return os.str();
}

Rng deserialize_rng(const std::string& text) {
    std::istringstream is(text);
    Rng rng;
    is >> rng;
    if (is.fail()) throw std::runtime_error("malformed rng state");
    return rng;
}

}  // namespace weakpair

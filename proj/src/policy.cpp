#include "nasb/policy.hpp"

#include "nasb/error.hpp"

namespace nasb {

PrecisionPolicy PrecisionPolicy::full() {
  PrecisionPolicy p;
  p.binarize = false;
  return p;
}

PrecisionPolicy PrecisionPolicy::binary() { return PrecisionPolicy{}; }

PrecisionPolicy PrecisionPolicy::parse(const std::string& name) {
  if (name == "full") return full();
  if (name == "binary") return binary();
  if (name == "binary+1x1") {
    PrecisionPolicy p;
    p.exempt_1x1 = true;
    return p;
  }
  throw ValueError(msg("unknown precision policy '", name,
                       "' (expected full, binary or binary+1x1)"));
}

std::string PrecisionPolicy::name() const {
  if (!binarize) return "full";
  return exempt_1x1 ? "binary+1x1" : "binary";
}

}  // namespace nasb

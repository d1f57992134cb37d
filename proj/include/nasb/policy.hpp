#pragma once

#include <string>

namespace nasb {

// Layers kept full precision inside a binary model. Defaults follow the
// usual binary-CNN convention: first conv, classifier and downsampling stay
// real; 1x1 convolutions can additionally be exempted.
struct PrecisionPolicy {
  bool binarize = true;          // false = everything full precision
  bool exempt_first_conv = true;
  bool exempt_classifier = true;
  bool exempt_downsample = true;
  bool exempt_1x1 = false;

  static PrecisionPolicy full();
  static PrecisionPolicy binary();

  // "full" | "binary" | "binary+1x1"
  static PrecisionPolicy parse(const std::string& name);
  std::string name() const;
};

}  // namespace nasb

#pragma once

#include <array>
#include <cstdint>
#include <string_view>

namespace nasb::cell {

// The ten candidate operations of a cell edge. Conv/DilConv kinds are binary
// precision, the rest stay full precision.
enum class OpKind : int {
  Zero = 0,
  AvgPool3 = 1,
  MaxPool3 = 2,
  Identity = 3,
  Conv1 = 4,
  Conv3 = 5,
  Conv5 = 6,
  DilConv1 = 7,
  DilConv3 = 8,
  DilConv5 = 9,
};

inline constexpr int kNumOpKinds = 10;

constexpr std::array<OpKind, kNumOpKinds> all_op_kinds() {
  return {OpKind::Zero,  OpKind::AvgPool3, OpKind::MaxPool3, OpKind::Identity,
          OpKind::Conv1, OpKind::Conv3,    OpKind::Conv5,    OpKind::DilConv1,
          OpKind::DilConv3, OpKind::DilConv5};
}

constexpr bool is_conv(OpKind k) { return static_cast<int>(k) >= 4; }
constexpr bool is_binary_precision(OpKind k) { return is_conv(k); }
constexpr bool is_pool(OpKind k) { return k == OpKind::AvgPool3 || k == OpKind::MaxPool3; }

constexpr std::int64_t conv_kernel(OpKind k) {
  switch (k) {
    case OpKind::Conv1:
    case OpKind::DilConv1: return 1;
    case OpKind::Conv3:
    case OpKind::DilConv3: return 3;
    case OpKind::Conv5:
    case OpKind::DilConv5: return 5;
    default: return 0;
  }
}

constexpr std::int64_t conv_dilation(OpKind k) {
  switch (k) {
    case OpKind::DilConv1:
    case OpKind::DilConv3:
    case OpKind::DilConv5: return 2;
    default: return 1;
  }
}

std::string_view op_name(OpKind k);
OpKind op_from_name(std::string_view name);

}  // namespace nasb::cell

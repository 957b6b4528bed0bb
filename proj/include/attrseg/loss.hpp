#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "attrseg/autodiff.hpp"

namespace attrseg {

inline constexpr int kIgnoreLabel = 255;

// One-hot targets over k columns plus a per-pixel validity mask.
// col_of_label maps a mask value to a column index, or -1 to ignore the pixel
// (used to drop labels outside the training vocabulary). kIgnoreLabel pixels
// are always invalid.
struct Targets {
    ad::Mat onehot;                  // (P x k)
    std::vector<uint8_t> valid;      // P entries
    long valid_count = 0;
};

Targets build_targets(const std::vector<int>& mask, const std::vector<int>& col_of_label, int k);

// Mean sigmoid binary cross-entropy of logits against targets over valid
// (pixel, class) pairs, as a tape node. Errors when no pixel is valid.
ad::Node* bce_loss(ad::Tape& t, ad::Node* logits, const Targets& targets);

// Plain-value version for evaluation paths (no tape).
double bce_loss_value(const ad::Mat& logits, const Targets& targets);

}  // namespace attrseg

#include "attrseg/loss.hpp"

#include <cmath>
#include <stdexcept>

namespace attrseg {

using namespace ad;

Targets build_targets(const std::vector<int>& mask, const std::vector<int>& col_of_label, int k) {
    Targets t;
    const long P = static_cast<long>(mask.size());
    t.onehot = Mat::Zero(P, k);
    t.valid.assign(mask.size(), 0);
    for (long i = 0; i < P; ++i) {
        const int label = mask[static_cast<size_t>(i)];
        if (label == kIgnoreLabel) continue;
        if (label < 0 || label >= static_cast<int>(col_of_label.size()))
            throw std::out_of_range("mask label " + std::to_string(label) + " outside the class list");
        const int col = col_of_label[static_cast<size_t>(label)];
        if (col < 0) continue;  // label outside the training vocabulary
        t.onehot(i, col) = 1.0;
        t.valid[static_cast<size_t>(i)] = 1;
        ++t.valid_count;
    }
    return t;
}

Node* bce_loss(Tape& t, Node* logits, const Targets& targets) {
    return bce_logits(t, logits, targets.onehot, targets.valid);
}

double bce_loss_value(const Mat& logits, const Targets& targets) {
    const long P = logits.rows(), K = logits.cols();
    if (targets.onehot.rows() != P || targets.onehot.cols() != K)
        throw std::invalid_argument("target shape mismatch");
    if (targets.valid_count == 0) throw std::invalid_argument("all pixels ignored, loss undefined");
    double acc = 0.0;
    for (long i = 0; i < P; ++i) {
        if (!targets.valid[static_cast<size_t>(i)]) continue;
        for (long j = 0; j < K; ++j) {
            const double x = logits(i, j), y = targets.onehot(i, j);
            acc += std::max(x, 0.0) - x * y + std::log1p(std::exp(-std::abs(x)));
        }
    }
    return acc / (static_cast<double>(targets.valid_count) * static_cast<double>(K));
}

}  // namespace attrseg

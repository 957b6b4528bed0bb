#pragma once

#include <functional>
#include <string>
#include <vector>

#include "attrseg/data.hpp"
#include "attrseg/model.hpp"
#include "attrseg/prompts.hpp"

namespace attrseg {

// Training vocabulary: the seen classes, in global order, plus the map from
// a mask label (global class index) to a logit column (-1 = not trained on).
struct TrainSetup {
    std::vector<std::string> seen_classes;
    std::vector<int> col_of_label;
};

TrainSetup make_train_setup(const Split& split);

struct TrainResult {
    std::vector<double> losses;  // one entry per iteration
    double final_w = 0.5;
    long iterations = 0;
};

// Called after each optimizer step with (iteration index, loss, fusion w).
using TrainCallback = std::function<void(long, double, double)>;

// Runs the optimization loop in place on `model` (whose config supplies the
// schedule: lr, weight decay, batch size, iteration count, seed). Text
// embeddings cover only the seen classes; each iteration draws its batch and
// flip decisions from a child random stream of the run seed, so the sequence
// of updates is a pure function of (weights at entry, config, data, bank).
// Aborts with a diagnostic if the loss leaves the finite range.
TrainResult train_model(Model& model, const ClassDescriptionSet& bank, const Split& train_split,
                        const TrainSetup& setup, const TrainCallback& callback = {});

}  // namespace attrseg

#pragma once

#include <string>
#include <unordered_set>
#include <vector>

#include "attrseg/autodiff.hpp"
#include "attrseg/model.hpp"

namespace attrseg {

// The selective fine-tuning policies: which encoder sub-projections train.
// "full" additionally trains the encoder MLPs/norms/embeddings (the
// from-scratch default); every other policy freezes both encoder bodies
// except the listed attention projections. Heads (fusion, enhancement,
// decoder, text projection) always train; the text-encoder body follows its
// own config flag.
const std::vector<std::string>& known_policies();             // includes "full"
const std::vector<std::string>& finetune_table_policies();    // the 7 ablation rows

// Sets Param::trainable across the model. Throws on an unknown policy name.
void apply_policy(Model& model, const std::string& policy, bool text_trainable);

std::vector<ad::Param*> trainable_params(Model& model);
std::vector<ad::Param*> frozen_params(Model& model);

// AdamW with decoupled weight decay. Parameters in `no_decay` skip the decay
// term (used for the fusion weight scalar).
class AdamW {
public:
    AdamW(std::vector<ad::Param*> params, double lr, double weight_decay,
          std::unordered_set<const ad::Param*> no_decay = {}, double beta1 = 0.9, double beta2 = 0.999,
          double eps = 1e-8);

    void step();
    void zero_grad();
    long iterations_done() const { return t_; }
    const std::vector<ad::Param*>& params() const { return params_; }

private:
    std::vector<ad::Param*> params_;
    double lr_, wd_, b1_, b2_, eps_;
    long t_ = 0;
    std::vector<ad::Mat> m_, v_;
    std::unordered_set<const ad::Param*> no_decay_;
};

}  // namespace attrseg

#include "attrseg/train.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "attrseg/loss.hpp"
#include "attrseg/optim.hpp"
#include "attrseg/rng.hpp"

namespace attrseg {

TrainSetup make_train_setup(const Split& split) {
    TrainSetup setup;
    setup.col_of_label.assign(split.classes.size(), -1);
    for (size_t i = 0; i < split.classes.size(); ++i) {
        if (std::find(split.unseen_indices.begin(), split.unseen_indices.end(),
                      static_cast<int>(i)) != split.unseen_indices.end())
            continue;
        setup.col_of_label[i] = static_cast<int>(setup.seen_classes.size());
        setup.seen_classes.push_back(split.classes[i]);
    }
    if (setup.seen_classes.empty()) throw std::invalid_argument("no seen classes to train on");
    return setup;
}

TrainResult train_model(Model& model, const ClassDescriptionSet& bank, const Split& train_split,
                        const TrainSetup& setup, const TrainCallback& callback) {
    const RunConfig& cfg = model.config();
    if (train_split.samples.empty()) throw std::invalid_argument("train split is empty");
    for (const std::string& name : setup.seen_classes)
        if (!bank.has(name, cfg.attribute))
            throw std::runtime_error("description bank lacks an entry for class '" + name +
                                     "' and attribute '" + attribute_token(cfg.attribute) + "'");

    std::unordered_set<const ad::Param*> no_decay{&model.fusion().weight()};
    AdamW opt(trainable_params(model), cfg.lr, cfg.weight_decay, std::move(no_decay));

    const uint64_t batch_stream = seed_child(cfg.seed, 7);
    const int n = static_cast<int>(train_split.samples.size());
    const int k = static_cast<int>(setup.seen_classes.size());

    TrainResult result;
    result.final_w = model.fusion().weight_value();
    for (long iter = 0; iter < cfg.iterations; ++iter) {
        Rng rng(seed_child(batch_stream, static_cast<uint64_t>(iter)));

        ad::Tape tape;
        ad::Ctx ctx(tape);
        ad::Node* text = model.text().encode_classes(ctx, bank, setup.seen_classes, cfg.attribute);

        ad::Node* total = nullptr;
        for (int b = 0; b < cfg.batch_size; ++b) {
            const int idx = static_cast<int>(rng.below(static_cast<uint32_t>(n)));
            const bool flip = rng.uniform() < 0.5;
            const Sample& base = train_split.samples[static_cast<size_t>(idx)];
            const Sample view = flip ? hflip(base) : base;

            Targets targets = build_targets(view.mask, setup.col_of_label, k);
            if (targets.valid_count == 0) continue;  // fully ignored draw contributes nothing
            ad::Node* logits = model.forward_image(ctx, view.image, text);
            ad::Node* sample_loss = bce_loss(tape, logits, targets);
            total = total ? ad::add(tape, total, sample_loss) : sample_loss;
        }
        if (!total)
            throw std::runtime_error("iteration " + std::to_string(iter) +
                                     ": every drawn sample was fully ignored");
        ad::Node* loss = ad::scale(tape, total, 1.0 / cfg.batch_size);

        const double loss_value = loss->val(0, 0);
        const double w_value = model.fusion().weight_value();
        if (!std::isfinite(loss_value)) {
            std::ostringstream msg;
            msg << "non-finite loss at iteration " << iter << " (lr=" << cfg.lr
                << ", fusion w=" << w_value << ")";
            throw std::runtime_error(msg.str());
        }

        tape.backward(loss);
        opt.step();
        opt.zero_grad();

        result.losses.push_back(loss_value);
        result.final_w = model.fusion().weight_value();
        if (callback) callback(iter, loss_value, result.final_w);
    }
    result.iterations = cfg.iterations;
    return result;
}

}  // namespace attrseg

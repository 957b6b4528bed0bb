#include "attrseg/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace attrseg {

using namespace ad;

const std::vector<std::string>& known_policies() {
    static const std::vector<std::string> v{"full",
                                            "freeze",
                                            "clip_qk",
                                            "clip_kv",
                                            "clip_qv",
                                            "clip_qv_sam_proj",
                                            "clip_qv_sam_qkv",
                                            "clip_qv_sam_proj_qkv"};
    return v;
}

const std::vector<std::string>& finetune_table_policies() {
    static const std::vector<std::string> v{"freeze",
                                            "clip_qk",
                                            "clip_kv",
                                            "clip_qv",
                                            "clip_qv_sam_proj",
                                            "clip_qv_sam_qkv",
                                            "clip_qv_sam_proj_qkv"};
    return v;
}

namespace {

struct PolicyParts {
    std::vector<std::string> clip;  // attention parts of the primary branch
    std::vector<std::string> sam;   // attention parts of the secondary branch
    bool full = false;
};

PolicyParts parse_policy(const std::string& policy) {
    PolicyParts p;
    if (policy == "full") {
        p.full = true;
    } else if (policy == "freeze") {
        // both branches fully frozen
    } else if (policy == "clip_qk") {
        p.clip = {"q", "k"};
    } else if (policy == "clip_kv") {
        p.clip = {"k", "v"};
    } else if (policy == "clip_qv") {
        p.clip = {"q", "v"};
    } else if (policy == "clip_qv_sam_proj") {
        p.clip = {"q", "v"};
        p.sam = {"o"};
    } else if (policy == "clip_qv_sam_qkv") {
        p.clip = {"q", "v"};
        p.sam = {"q", "k", "v"};
    } else if (policy == "clip_qv_sam_proj_qkv") {
        p.clip = {"q", "v"};
        p.sam = {"q", "k", "v", "o"};
    } else {
        throw std::invalid_argument("unknown fine-tuning policy: " + policy);
    }
    return p;
}

}  // namespace

void apply_policy(Model& model, const std::string& policy, bool text_trainable) {
    const PolicyParts parts = parse_policy(policy);

    // Heads always train.
    std::vector<Param*> heads;
    model.fusion().collect(heads);
    model.spatial().collect(heads);
    model.cls_enhancer().collect(heads);
    model.decoder().collect(heads);
    model.text().collect_proj(heads);
    for (Param* p : heads) p->trainable = true;

    std::vector<Param*> text_body;
    model.text().collect_body(text_body);
    for (Param* p : text_body) p->trainable = text_trainable;

    std::vector<Param*> clip_all, sam_all;
    model.clip().collect(clip_all);
    model.sam().collect(sam_all);
    for (Param* p : clip_all) p->trainable = parts.full;
    for (Param* p : sam_all) p->trainable = parts.full;
    if (!parts.full) {
        std::vector<Param*> thaw;
        for (const std::string& part : parts.clip) model.clip().collect_attn_part(part, thaw);
        for (const std::string& part : parts.sam) model.sam().collect_attn_part(part, thaw);
        for (Param* p : thaw) p->trainable = true;
    }
}

std::vector<Param*> trainable_params(Model& model) {
    std::vector<Param*> out;
    for (Param* p : model.all_params())
        if (p->trainable) out.push_back(p);
    return out;
}

std::vector<Param*> frozen_params(Model& model) {
    std::vector<Param*> out;
    for (Param* p : model.all_params())
        if (!p->trainable) out.push_back(p);
    return out;
}

AdamW::AdamW(std::vector<Param*> params, double lr, double weight_decay,
             std::unordered_set<const Param*> no_decay, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), wd_(weight_decay), b1_(beta1), b2_(beta2), eps_(eps),
      no_decay_(std::move(no_decay)) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (Param* p : params_) {
        m_.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
        v_.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
    }
}

void AdamW::step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
        Param* p = params_[i];
        const Mat& g = p->grad;
        m_[i] = b1_ * m_[i] + (1.0 - b1_) * g;
        v_[i] = b2_ * v_[i] + (1.0 - b2_) * g.cwiseProduct(g);
        const Mat mhat = m_[i] / bc1;
        const Mat vhat = v_[i] / bc2;
        p->value -= lr_ * (mhat.array() / (vhat.array().sqrt() + eps_)).matrix();
        if (wd_ > 0.0 && !no_decay_.count(p)) p->value -= (lr_ * wd_) * p->value;
    }
}

void AdamW::zero_grad() {
    for (Param* p : params_) p->zero_grad();
}

}  // namespace attrseg

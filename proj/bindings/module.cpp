#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <numeric>

#include "attrseg/autodiff.hpp"
#include "attrseg/digest.hpp"
#include "attrseg/fusion.hpp"
#include "attrseg/loss.hpp"
#include "attrseg/metrics.hpp"
#include "attrseg/prompts.hpp"
#include "attrseg/tokenizer.hpp"

namespace py = pybind11;

namespace {

attrseg::ad::Mat py_cost_map(const attrseg::ad::Mat& features, const attrseg::ad::Mat& text) {
    attrseg::ad::Tape tape(false);
    attrseg::ad::Node* f = attrseg::ad::constant(tape, features);
    attrseg::ad::Node* t = attrseg::ad::constant(tape, text);
    return attrseg::cost_map(tape, f, t)->val;
}

double py_bce(const attrseg::ad::Mat& logits, const std::vector<int>& mask) {
    std::vector<int> identity(static_cast<size_t>(logits.cols()));
    std::iota(identity.begin(), identity.end(), 0);
    attrseg::Targets targets =
        attrseg::build_targets(mask, identity, static_cast<int>(logits.cols()));
    return attrseg::bce_loss_value(logits, targets);
}

py::dict py_miou(const std::vector<int>& reference, const std::vector<int>& predicted,
                 const std::vector<std::string>& classes, const std::vector<int>& unseen) {
    attrseg::Confusion confusion(static_cast<int>(classes.size()));
    confusion.add(reference, predicted);
    attrseg::IoUReport rep = attrseg::compute_iou(confusion, classes, unseen);
    py::dict out;
    out["miou"] = rep.miou;
    out["seen_miou"] = rep.seen_miou;
    out["unseen_miou"] = rep.unseen_miou;
    py::list per_class;
    for (size_t c = 0; c < classes.size(); ++c) {
        py::dict e;
        e["class"] = classes[c];
        e["defined"] = static_cast<bool>(rep.defined[c]);
        e["iou"] = rep.defined[c] ? py::cast(rep.iou[c]) : py::none();
        per_class.append(e);
    }
    out["per_class"] = per_class;
    return out;
}

std::string py_generate_fixture_bank(const std::vector<std::string>& classes,
                                     const std::string& attribute, const std::string& cache_path) {
    attrseg::FixtureClient client;
    attrseg::GenerateResult res = attrseg::generate_descriptions(
        classes, attrseg::parse_attribute(attribute), client, cache_path);
    return res.bank_hash;
}

std::string py_description(const std::string& bank_path, const std::string& class_name,
                           const std::string& attribute) {
    attrseg::ClassDescriptionSet set = attrseg::load_bank(bank_path);
    return set.get(class_name, attrseg::parse_attribute(attribute)).text;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Open-vocabulary segmentation core operations";

    m.def("cost_map", &py_cost_map, py::arg("features"), py::arg("text"),
          "Pairwise cosine similarity: (P x D) features vs (k x D) text rows -> (P x k).");
    m.def("bce_loss", &py_bce, py::arg("logits"), py::arg("mask"),
          "Mean sigmoid binary cross-entropy of (P x k) logits against integer labels; "
          "255 marks ignored pixels.");
    m.def("predict_labels", &attrseg::predict_labels, py::arg("scores"),
          "Row-wise argmax with ties broken toward the lowest index.");
    m.def("miou", &py_miou, py::arg("reference"), py::arg("predicted"), py::arg("classes"),
          py::arg("unseen") = std::vector<int>{},
          "Dataset-level IoU report from flat label vectors (255 = ignore).");
    m.def("name_template", &attrseg::name_template, py::arg("class_name"));
    m.def(
        "attribute_query",
        [](const std::string& cls, const std::string& attr) {
            return attrseg::build_attribute_query(cls, attrseg::parse_attribute(attr));
        },
        py::arg("class_name"), py::arg("attribute"));
    m.def("generate_fixture_bank", &py_generate_fixture_bank, py::arg("classes"),
          py::arg("attribute"), py::arg("cache_path"),
          "Fill a description bank from the built-in fixture client; returns the bank hash.");
    m.def("bank_description", &py_description, py::arg("bank_path"), py::arg("class_name"),
          py::arg("attribute"));
    m.def("sha256_file", &attrseg::sha256_file, py::arg("path"));
    m.def(
        "token_ids",
        [](const std::string& text, int vocab, int context) {
            return attrseg::token_ids(text, vocab, context);
        },
        py::arg("text"), py::arg("vocab") = 1024, py::arg("context") = 77,
        "Hashed word-token ids with bos=0 / eos=1 framing.");
}

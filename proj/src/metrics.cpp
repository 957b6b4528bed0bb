#include "attrseg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

#include "attrseg/loss.hpp"
#include "attrseg/png_io.hpp"

namespace attrseg {

namespace fs = std::filesystem;
using nlohmann::json;

std::vector<int> predict_labels(const ad::Mat& scores) {
    std::vector<int> labels(static_cast<size_t>(scores.rows()));
    for (long r = 0; r < scores.rows(); ++r) {
        int best = 0;
        double best_v = scores(r, 0);
        for (long c = 1; c < scores.cols(); ++c)
            if (scores(r, c) > best_v) {
                best_v = scores(r, c);
                best = static_cast<int>(c);
            }
        labels[static_cast<size_t>(r)] = best;
    }
    return labels;
}

Confusion::Confusion(int k) : k_(k), counts_(static_cast<size_t>(k) * k, 0) {
    if (k < 1) throw std::invalid_argument("confusion needs at least one class");
}

void Confusion::add(const std::vector<int>& reference, const std::vector<int>& predicted) {
    if (reference.size() != predicted.size())
        throw std::invalid_argument("reference/prediction length mismatch");
    for (size_t i = 0; i < reference.size(); ++i) {
        const int ref = reference[i];
        if (ref == kIgnoreLabel) continue;
        const int pred = predicted[i];
        if (ref < 0 || ref >= k_)
            throw std::out_of_range("reference label out of range: " + std::to_string(ref));
        if (pred < 0 || pred >= k_)
            throw std::out_of_range("predicted label out of range: " + std::to_string(pred));
        ++counts_[static_cast<size_t>(ref) * k_ + pred];
    }
}

IoUReport compute_iou(const Confusion& confusion, const std::vector<std::string>& classes,
                      const std::vector<int>& unseen_indices) {
    const int k = confusion.k();
    if (static_cast<int>(classes.size()) != k)
        throw std::invalid_argument("class list does not match confusion size");

    IoUReport rep;
    rep.classes = classes;
    rep.iou.assign(static_cast<size_t>(k), 0.0);
    rep.defined.assign(static_cast<size_t>(k), false);
    rep.pixel_count.assign(static_cast<size_t>(k), 0);

    std::vector<bool> is_unseen(static_cast<size_t>(k), false);
    for (int u : unseen_indices) {
        if (u < 0 || u >= k) throw std::out_of_range("unseen index out of range");
        is_unseen[static_cast<size_t>(u)] = true;
    }

    double sum = 0.0, seen_sum = 0.0, unseen_sum = 0.0;
    for (int c = 0; c < k; ++c) {
        int64_t row = 0, col = 0;
        for (int j = 0; j < k; ++j) {
            row += confusion.at(c, j);
            col += confusion.at(j, c);
        }
        rep.pixel_count[static_cast<size_t>(c)] = row;
        const int64_t inter = confusion.at(c, c);
        const int64_t uni = row + col - inter;
        if (uni == 0) continue;
        const double v = static_cast<double>(inter) / static_cast<double>(uni);
        rep.iou[static_cast<size_t>(c)] = v;
        rep.defined[static_cast<size_t>(c)] = true;
        ++rep.defined_count;
        sum += v;
        if (is_unseen[static_cast<size_t>(c)]) {
            unseen_sum += v;
            ++rep.unseen_defined;
        } else {
            seen_sum += v;
            ++rep.seen_defined;
        }
    }
    rep.miou = rep.defined_count ? sum / rep.defined_count : 0.0;
    rep.seen_miou = rep.seen_defined ? seen_sum / rep.seen_defined : 0.0;
    rep.unseen_miou = rep.unseen_defined ? unseen_sum / rep.unseen_defined : 0.0;
    return rep;
}

std::string report_to_json(const IoUReport& report) {
    json per_class = json::array();
    for (size_t c = 0; c < report.classes.size(); ++c) {
        json entry = {{"class", report.classes[c]},
                      {"defined", static_cast<bool>(report.defined[c])},
                      {"pixels", report.pixel_count[c]}};
        if (report.defined[c]) entry["iou"] = report.iou[c];
        per_class.push_back(std::move(entry));
    }
    json j = {{"miou", report.miou},
              {"seen_miou", report.seen_miou},
              {"unseen_miou", report.unseen_miou},
              {"defined_classes", report.defined_count},
              {"per_class", per_class}};
    return j.dump(2);
}

std::string report_to_table(const IoUReport& report, const std::vector<int>& unseen_indices) {
    std::vector<bool> is_unseen(report.classes.size(), false);
    for (int u : unseen_indices)
        if (u >= 0 && u < static_cast<int>(report.classes.size()))
            is_unseen[static_cast<size_t>(u)] = true;

    size_t name_w = 5;
    for (const std::string& name : report.classes) name_w = std::max(name_w, name.size());

    std::ostringstream out;
    char line[160];
    std::snprintf(line, sizeof line, "%-*s  %6s  %8s  %10s\n", static_cast<int>(name_w), "class",
                  "split", "iou", "pixels");
    out << line;
    out << std::string(name_w + 30, '-') << "\n";
    for (size_t c = 0; c < report.classes.size(); ++c) {
        char iou_buf[32];
        if (report.defined[c])
            std::snprintf(iou_buf, sizeof iou_buf, "%8.4f", report.iou[c]);
        else
            std::snprintf(iou_buf, sizeof iou_buf, "%8s", "n/a");
        std::snprintf(line, sizeof line, "%-*s  %6s  %s  %10lld\n", static_cast<int>(name_w),
                      report.classes[c].c_str(), is_unseen[c] ? "unseen" : "seen", iou_buf,
                      static_cast<long long>(report.pixel_count[c]));
        out << line;
    }
    out << std::string(name_w + 30, '-') << "\n";
    std::snprintf(line, sizeof line, "mIoU %.4f   seen %.4f   unseen %.4f\n", report.miou,
                  report.seen_miou, report.unseen_miou);
    out << line;
    return out.str();
}

std::string slugify(const std::string& name) {
    std::string slug;
    bool pending_sep = false;
    for (char ch : name) {
        const char lo = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
        if ((lo >= 'a' && lo <= 'z') || (lo >= '0' && lo <= '9')) {
            if (pending_sep && !slug.empty()) slug += '-';
            pending_sep = false;
            slug += lo;
        } else {
            pending_sep = true;
        }
    }
    return slug.empty() ? "class" : slug;
}

std::vector<std::string> export_costmap_heatmaps(const ad::Mat& scores, int h, int w,
                                                 const std::vector<std::string>& classes,
                                                 const std::string& dir) {
    if (scores.rows() != static_cast<long>(h) * w)
        throw std::invalid_argument("score rows do not match the stated grid");
    if (scores.cols() != static_cast<long>(classes.size()))
        throw std::invalid_argument("score columns do not match the class list");
    fs::create_directories(dir);

    std::vector<std::string> written;
    std::ostringstream side;
    for (size_t c = 0; c < classes.size(); ++c) {
        double lo = std::numeric_limits<double>::infinity(), hi = -lo;
        for (long r = 0; r < scores.rows(); ++r) {
            lo = std::min(lo, scores(r, static_cast<long>(c)));
            hi = std::max(hi, scores(r, static_cast<long>(c)));
        }
        ImageU8 img;
        img.width = w;
        img.height = h;
        img.channels = 1;
        img.pixels.resize(static_cast<size_t>(h) * w);
        const bool degenerate = !(hi > lo);
        for (long r = 0; r < scores.rows(); ++r) {
            const double v = scores(r, static_cast<long>(c));
            img.pixels[static_cast<size_t>(r)] =
                degenerate ? 128
                           : static_cast<uint8_t>(std::lround(255.0 * (v - lo) / (hi - lo)));
        }
        char num[8];
        std::snprintf(num, sizeof num, "%02zu", c);
        const std::string path =
            (fs::path(dir) / (std::string(num) + "_" + slugify(classes[c]) + ".png")).string();
        write_png(path, img);
        written.push_back(path);
        side << num << "_" << slugify(classes[c]) << ".png  min=" << lo << "  max=" << hi;
        if (degenerate) side << "  (degenerate: constant slice, rendered mid-gray)";
        side << "\n";
    }
    std::ofstream sidecar(fs::path(dir) / "ranges.txt", std::ios::trunc);
    sidecar << side.str();
    return written;
}

}  // namespace attrseg

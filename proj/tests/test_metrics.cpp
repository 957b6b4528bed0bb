#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "json.hpp"

#include "attrseg/metrics.hpp"
#include "attrseg/png_io.hpp"
#include "helpers.hpp"

using namespace attrseg;
using namespace attrseg::testutil;

namespace {

constexpr int kIgnore = 255;

std::vector<std::string> letter_names(int k) {
    std::vector<std::string> names;
    for (int i = 0; i < k; ++i) names.push_back(std::string(1, static_cast<char>('a' + i)));
    return names;
}

// Independent per-class IoU from raw pixel sets, ignoring gt==255 everywhere.
struct OracleIoU {
    double iou = 0.0;
    bool defined = false;
};
std::vector<OracleIoU> oracle_iou(const std::vector<int>& gt, const std::vector<int>& pred, int k) {
    std::vector<OracleIoU> out(static_cast<size_t>(k));
    for (int c = 0; c < k; ++c) {
        long inter = 0, uni = 0;
        for (size_t i = 0; i < gt.size(); ++i) {
            if (gt[i] == kIgnore) continue;
            const bool in_gt = gt[i] == c, in_pred = pred[i] == c;
            if (in_gt && in_pred) ++inter;
            if (in_gt || in_pred) ++uni;
        }
        if (uni > 0) {
            out[static_cast<size_t>(c)].defined = true;
            out[static_cast<size_t>(c)].iou = static_cast<double>(inter) / static_cast<double>(uni);
        }
    }
    return out;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path);
    REQUIRE(in.good());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("argmax predictions break ties toward the lowest class index") {
    ad::Mat scores(4, 3);
    scores << 0.1, 0.9, 0.3,   // clear winner 1
        0.5, 0.5, 0.5,         // three-way tie -> 0
        0.2, 0.7, 0.7,         // tie between 1 and 2 -> 1
        -1.0, -2.0, -0.5;      // negative scores work
    CHECK(predict_labels(scores) == std::vector<int>{1, 0, 1, 2});
}

TEST_CASE("adding a per-pixel constant never changes the prediction") {
    Rng rng(31);
    ad::Mat scores = random_mat(rng, 20, 4);
    const std::vector<int> base = predict_labels(scores);
    ad::Mat shifted = scores;
    for (int i = 0; i < shifted.rows(); ++i) shifted.row(i).array() += (rng.uniform() - 0.5) * 10.0;
    CHECK(predict_labels(shifted) == base);
}

TEST_CASE("confusion matrix accumulates reference/prediction pairs") {
    Confusion cm(3);
    cm.add({0, 1, kIgnore, 2}, {0, 2, 1, 2});
    cm.add({0}, {1});
    CHECK(cm.at(0, 0) == 1);
    CHECK(cm.at(0, 1) == 1);
    CHECK(cm.at(1, 2) == 1);
    CHECK(cm.at(2, 2) == 1);
    CHECK(cm.at(1, 1) == 0);
    int64_t total = 0;
    for (int64_t v : cm.counts()) total += v;
    CHECK(total == 4);  // the ignored pixel contributed nothing

    CHECK_THROWS(cm.add({5}, {0}));            // reference out of range
    CHECK_THROWS(cm.add({0}, {3}));            // prediction out of range
    CHECK_THROWS(cm.add({0, 1}, {0}));         // length mismatch
    CHECK_THROWS(cm.add({0}, {kIgnore}));      // ignore is not a valid prediction
}

TEST_CASE("intersection-over-union hand case") {
    // A 2x2 image with one extra ignored pixel (which drops out entirely):
    //   gt   = 0 0 1 1 255
    //   pred = 0 1 1 1 0
    // class 0: inter 1, union 2 -> 1/2 ; class 1: inter 2, union 3 -> 2/3
    Confusion cm(2);
    cm.add({0, 0, 1, 1, kIgnore}, {0, 1, 1, 1, 0});
    IoUReport r = compute_iou(cm, letter_names(2), {});
    REQUIRE(r.defined == std::vector<bool>{true, true});
    CHECK(r.iou[0] == 0.5);
    CHECK(r.iou[1] == 2.0 / 3.0);
    CHECK(r.miou == (0.5 + 2.0 / 3.0) / 2.0);
    CHECK(std::abs(r.miou - 7.0 / 12.0) < 1e-15);
    CHECK(r.pixel_count[0] == 2);
    CHECK(r.pixel_count[1] == 2);
    CHECK(r.defined_count == 2);
    CHECK(r.seen_miou == r.miou);
    CHECK(r.unseen_defined == 0);
}

TEST_CASE("metric matches a set-based oracle on random instances") {
    Rng rng(32);
    for (int trial = 0; trial < 200; ++trial) {
        const int k = 2 + static_cast<int>(rng.below(4));
        const int n = 1 + static_cast<int>(rng.below(40));
        std::vector<int> gt(static_cast<size_t>(n)), pred(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) {
            gt[static_cast<size_t>(i)] =
                rng.uniform() < 0.2 ? kIgnore : static_cast<int>(rng.below(static_cast<uint32_t>(k)));
            pred[static_cast<size_t>(i)] = static_cast<int>(rng.below(static_cast<uint32_t>(k)));
        }
        Confusion cm(k);
        cm.add(gt, pred);
        std::vector<int> unseen_indices{k - 1};
        IoUReport r = compute_iou(cm, letter_names(k), unseen_indices);
        auto want = oracle_iou(gt, pred, k);

        double sum = 0.0, seen_sum = 0.0, unseen_sum = 0.0;
        int defined = 0, seen_defined = 0, unseen_defined = 0;
        for (int c = 0; c < k; ++c) {
            REQUIRE(r.defined[static_cast<size_t>(c)] == want[static_cast<size_t>(c)].defined);
            if (!want[static_cast<size_t>(c)].defined) continue;
            REQUIRE(r.iou[static_cast<size_t>(c)] ==
                    doctest::Approx(want[static_cast<size_t>(c)].iou).epsilon(1e-12));
            sum += want[static_cast<size_t>(c)].iou;
            ++defined;
            if (c == k - 1) {
                unseen_sum += want[static_cast<size_t>(c)].iou;
                ++unseen_defined;
            } else {
                seen_sum += want[static_cast<size_t>(c)].iou;
                ++seen_defined;
            }
        }
        CHECK(r.defined_count == defined);
        CHECK(r.seen_defined == seen_defined);
        CHECK(r.unseen_defined == unseen_defined);
        if (defined > 0) CHECK(std::abs(r.miou - sum / defined) < 1e-12);
        if (seen_defined > 0) CHECK(std::abs(r.seen_miou - seen_sum / seen_defined) < 1e-12);
        if (unseen_defined > 0) CHECK(std::abs(r.unseen_miou - unseen_sum / unseen_defined) < 1e-12);
    }
}

TEST_CASE("relabeling classes permutes the per-class results") {
    Rng rng(33);
    const int k = 4, n = 60;
    std::vector<int> gt(n), pred(n);
    for (int i = 0; i < n; ++i) {
        gt[static_cast<size_t>(i)] = rng.uniform() < 0.15 ? kIgnore : static_cast<int>(rng.below(k));
        pred[static_cast<size_t>(i)] = static_cast<int>(rng.below(k));
    }
    const std::vector<int> perm{2, 3, 1, 0};  // new label of old class c
    std::vector<int> gt_p(n), pred_p(n);
    for (int i = 0; i < n; ++i) {
        gt_p[static_cast<size_t>(i)] = gt[static_cast<size_t>(i)] == kIgnore
                                           ? kIgnore
                                           : perm[static_cast<size_t>(gt[static_cast<size_t>(i)])];
        pred_p[static_cast<size_t>(i)] = perm[static_cast<size_t>(pred[static_cast<size_t>(i)])];
    }
    Confusion a(k), b(k);
    a.add(gt, pred);
    b.add(gt_p, pred_p);
    IoUReport ra = compute_iou(a, letter_names(k), {});
    IoUReport rb = compute_iou(b, letter_names(k), {});
    for (int c = 0; c < k; ++c) {
        CHECK(rb.defined[static_cast<size_t>(perm[static_cast<size_t>(c)])] ==
              ra.defined[static_cast<size_t>(c)]);
        if (ra.defined[static_cast<size_t>(c)])
            CHECK(rb.iou[static_cast<size_t>(perm[static_cast<size_t>(c)])] ==
                  ra.iou[static_cast<size_t>(c)]);
    }
    CHECK(ra.miou == rb.miou);
}

TEST_CASE("predictions on ignored pixels are irrelevant") {
    Rng rng(34);
    const int k = 3, n = 50;
    std::vector<int> gt(n), pred(n), pred2(n);
    for (int i = 0; i < n; ++i) {
        gt[static_cast<size_t>(i)] = rng.uniform() < 0.4 ? kIgnore : static_cast<int>(rng.below(k));
        pred[static_cast<size_t>(i)] = static_cast<int>(rng.below(k));
        pred2[static_cast<size_t>(i)] = gt[static_cast<size_t>(i)] == kIgnore
                                            ? static_cast<int>(rng.below(k))
                                            : pred[static_cast<size_t>(i)];
    }
    Confusion a(k), b(k);
    a.add(gt, pred);
    b.add(gt, pred2);
    IoUReport ra = compute_iou(a, letter_names(k), {0});
    IoUReport rb = compute_iou(b, letter_names(k), {0});
    CHECK(ra.miou == rb.miou);
    for (int c = 0; c < k; ++c) {
        CHECK(ra.defined[static_cast<size_t>(c)] == rb.defined[static_cast<size_t>(c)]);
        if (ra.defined[static_cast<size_t>(c)])
            CHECK(ra.iou[static_cast<size_t>(c)] == rb.iou[static_cast<size_t>(c)]);
    }
}

TEST_CASE("classes absent from both reference and prediction are excluded") {
    Confusion cm(3);
    cm.add({0, 0, 1}, {0, 1, 1});  // class 2 never appears
    IoUReport r = compute_iou(cm, letter_names(3), {2});
    CHECK(r.defined == std::vector<bool>{true, true, false});
    CHECK(r.defined_count == 2);
    CHECK(r.unseen_defined == 0);
    CHECK(r.unseen_miou == 0.0);
    CHECK(r.miou == (0.5 + 0.5) / 2.0);  // class 0: 1/2; class 1: inter 1 / union 2
}

TEST_CASE("reports serialize every class with its split and coverage") {
    Confusion cm(3);
    cm.add({0, 0, 1, 2}, {0, 1, 1, 2});
    IoUReport r = compute_iou(cm, {"red circle", "blue square", "red ring"}, {2});

    const std::string json_text = report_to_json(r);
    auto j = nlohmann::json::parse(json_text);
    CHECK(j.at("miou").get<double>() == r.miou);
    CHECK(j.at("seen_miou").get<double>() == r.seen_miou);
    CHECK(j.at("unseen_miou").get<double>() == r.unseen_miou);
    CHECK(j.at("defined_classes").get<int>() == 3);
    REQUIRE(j.at("per_class").size() == 3);
    CHECK(j.at("per_class")[0].at("class") == "red circle");
    CHECK(j.at("per_class")[0].at("defined").get<bool>());
    CHECK(j.at("per_class")[2].at("iou").get<double>() == 1.0);
    CHECK(j.at("per_class")[0].at("pixels").get<int64_t>() == 2);

    const std::string table = report_to_table(r, {2});
    CHECK(table.find("red circle") != std::string::npos);
    CHECK(table.find("blue square") != std::string::npos);
    CHECK(table.find("red ring") != std::string::npos);
    CHECK(table.find("unseen") != std::string::npos);
    CHECK(table.find("seen") != std::string::npos);
    CHECK(table.find("mIoU") != std::string::npos);
}

TEST_CASE("slugs are lowercase filesystem-safe tokens") {
    CHECK(slugify("red circle") == "red-circle");
    CHECK(slugify("Blue/Square!") == "blue-square");
    CHECK(slugify("  A  B  ") == "a-b");
    CHECK(slugify("???") == "class");
    CHECK(slugify("Tie") == "tie");
}

TEST_CASE("heatmap export writes one normalized png per class plus a range sidecar") {
    TempDir tmp("heatmaps");
    const int h = 4, w = 5;
    ad::Mat scores(h * w, 3);
    Rng rng(35);
    for (int i = 0; i < scores.rows(); ++i) {
        scores(i, 0) = rng.uniform() * 2.0 - 1.0;
        scores(i, 1) = 0.25;  // constant slice -> degenerate
        scores(i, 2) = static_cast<double>(i);
    }
    auto paths = export_costmap_heatmaps(scores, h, w, {"red circle", "blue square", "red ring"},
                                         tmp.str("maps"));
    REQUIRE(paths.size() == 3);
    CHECK(paths[0].find("00_red-circle.png") != std::string::npos);
    CHECK(paths[1].find("01_blue-square.png") != std::string::npos);
    CHECK(paths[2].find("02_red-ring.png") != std::string::npos);
    for (const std::string& p : paths) CHECK(std::filesystem::exists(p));

    // Non-degenerate slices span the full 0..255 range after normalization.
    ImageU8 img0 = read_png(paths[0]);
    CHECK(img0.width == w);
    CHECK(img0.height == h);
    CHECK(img0.channels == 1);
    uint8_t lo = 255, hi = 0;
    for (uint8_t v : img0.pixels) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    CHECK(lo == 0);
    CHECK(hi == 255);

    // The linear ramp maps monotonically.
    ImageU8 img2 = read_png(paths[2]);
    CHECK(img2.pixels.front() == 0);
    CHECK(img2.pixels.back() == 255);
    CHECK(std::is_sorted(img2.pixels.begin(), img2.pixels.end()));

    // The constant slice renders mid-gray and is flagged in the sidecar.
    ImageU8 img1 = read_png(paths[1]);
    for (uint8_t v : img1.pixels) CHECK(v == 128);

    const std::string ranges = read_file(tmp.str("maps/ranges.txt"));
    CHECK(ranges.find("red-circle") != std::string::npos);
    CHECK(ranges.find("blue-square") != std::string::npos);
    CHECK(ranges.find("degenerate") != std::string::npos);
    CHECK(ranges.find("0.25") != std::string::npos);
}

#pragma once

#include <string>
#include <vector>

#include "attrseg/autodiff.hpp"

namespace attrseg {

// Row-wise argmax over per-class scores; ties resolve to the lowest index.
std::vector<int> predict_labels(const ad::Mat& scores);

// k x k confusion counts: rows index the reference label, columns the
// prediction. Pixels whose reference label is the ignore value contribute
// nothing. Reference labels must be valid indices or the ignore value;
// predictions must be valid indices.
struct Confusion {
    explicit Confusion(int k);
    void add(const std::vector<int>& reference, const std::vector<int>& predicted);
    int k() const { return k_; }
    const std::vector<int64_t>& counts() const { return counts_; }
    int64_t at(int ref, int pred) const { return counts_[static_cast<size_t>(ref) * k_ + pred]; }

  private:
    int k_;
    std::vector<int64_t> counts_;
};

struct IoUReport {
    std::vector<std::string> classes;
    std::vector<double> iou;          // per class; meaningless where !defined
    std::vector<bool> defined;        // union > 0
    std::vector<int64_t> pixel_count; // reference pixels per class
    double miou = 0.0;                // mean over defined classes
    double seen_miou = 0.0;           // mean over defined seen classes
    double unseen_miou = 0.0;         // mean over defined unseen classes
    int defined_count = 0, seen_defined = 0, unseen_defined = 0;
};

IoUReport compute_iou(const Confusion& confusion, const std::vector<std::string>& classes,
                      const std::vector<int>& unseen_indices);

std::string report_to_json(const IoUReport& report);
std::string report_to_table(const IoUReport& report, const std::vector<int>& unseen_indices);

// Turn a class name into a filesystem-safe slug (lowercase, '-' separators).
std::string slugify(const std::string& name);

// Write one grayscale PNG per class from an (h*w x k) score map, min-max
// normalized per class, plus a "ranges.txt" sidecar recording the original
// value range of every slice. A constant slice is written mid-gray and
// flagged as degenerate in the sidecar. Returns the written PNG paths.
std::vector<std::string> export_costmap_heatmaps(const ad::Mat& scores, int h, int w,
                                                 const std::vector<std::string>& classes,
                                                 const std::string& dir);

}  // namespace attrseg

#pragma once

#include <string>
#include <vector>

#include "attrseg/config.hpp"
#include "attrseg/data.hpp"
#include "attrseg/metrics.hpp"
#include "attrseg/model.hpp"
#include "attrseg/prompts.hpp"

namespace attrseg {

// ---- generate-prompts --------------------------------------------------------

struct GeneratePromptsArgs {
    std::string classes_file;                  // one class name per line
    std::vector<std::string> attributes{"comprehensive"};  // tokens; "all" = every kind
    std::string client = "fixture";            // "fixture" or "http"
    std::string endpoint;                      // required for the http client
    std::string cache_path;
    int retries = 2;
};

// Fills the cache for every (class, attribute) pair and returns the bank hash.
std::string run_generate_prompts(const GeneratePromptsArgs& args);

// ---- make-dataset -------------------------------------------------------------

struct MakeDatasetArgs {
    std::string out_dir;
    int train_images = 400;
    int val_images = 100;
    int image_size = 64;
    uint64_t seed = 7;
};

void run_make_dataset(const MakeDatasetArgs& args);

// ---- train ---------------------------------------------------------------------

// Trains from scratch per cfg; writes config.json, loss.csv, checkpoint.bin
// under cfg.output_dir and returns the checkpoint path.
std::string run_train(const RunConfig& cfg);

// ---- eval ----------------------------------------------------------------------

// Scores one split against the full dataset vocabulary. The model's config
// supplies the attribute kind; the bank must cover every class.
IoUReport evaluate_split(Model& model, const ClassDescriptionSet& bank, const Split& split);

struct EvalArgs {
    std::string checkpoint;
    std::string data_root;
    std::string bank_path;
    std::string output_dir;
    std::string split = "val";
};

// Verifies the bank hash against the checkpoint, evaluates, writes
// report.json + report.txt (and a config echo), and returns the report.
IoUReport run_eval(const EvalArgs& args);

// ---- visualize -----------------------------------------------------------------

struct VisualizeArgs {
    std::string checkpoint;
    std::string image_path;
    std::string bank_path;
    std::string output_dir;
    std::vector<std::string> class_names;  // empty = the checkpoint's vocabulary
};

// Writes one similarity heatmap PNG per class (plus a ranges sidecar) from
// the raw cost volume, upsampled to image resolution. Returns the PNG paths.
std::vector<std::string> run_visualize(const VisualizeArgs& args);

// ---- ablate --------------------------------------------------------------------

struct AblateArgs {
    RunConfig base;                 // shared settings; output_dir is the grid root
    std::vector<std::string> axes;  // subset of {"prompt","fusion","enhancement","finetune"}; empty = all
    int iterations = 300;
    int parallel = 1;               // worker threads over independent runs
};

struct AblateRow {
    std::string axis;
    std::string value;
    double seen_miou = 0.0;
    double unseen_miou = 0.0;
    double miou = 0.0;
    double avg = 0.0;  // mean of the seen and unseen columns
};

// Trains + evaluates one run per axis value and writes per-axis table.txt /
// table.json under base.output_dir. Returns every row.
std::vector<AblateRow> run_ablate(const AblateArgs& args);

const std::vector<std::string>& ablation_axes();

}  // namespace attrseg

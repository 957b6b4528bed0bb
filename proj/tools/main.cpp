#include <cstdio>
#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "attrseg/config.hpp"
#include "attrseg/runner.hpp"

namespace {

// Options shared by train and ablate: every flag overrides the value loaded
// from --config (or the built-in default) only when the user passed it.
struct RunFlags {
    std::string config_path, data, bank, out, policy, fusion, enhance, attribute;
    double lr = 0.0;
    int iterations = 0, batch = 0, image_size = 0;
    unsigned long long seed = 0;

    void attach(CLI::App* cmd, bool with_iterations) {
        cmd->add_option("--config", config_path, "JSON run configuration to start from")
            ->check(CLI::ExistingFile);
        cmd->add_option("--data", data, "dataset directory");
        cmd->add_option("--bank", bank, "prompt bank TSV path");
        cmd->add_option("--out", out, "output directory");
        cmd->add_option("--policy", policy, "fine-tuning policy name");
        cmd->add_option("--fusion", fusion, "fusion strategy: weighted|concat|attention");
        cmd->add_option("--enhance", enhance, "enhancement mode: none|spatial|class|both");
        cmd->add_option("--attribute", attribute,
                        "prompt attribute: color|shape|texture|comprehensive|name");
        cmd->add_option("--lr", lr, "learning rate");
        if (with_iterations) cmd->add_option("--iterations", iterations, "training iterations");
        cmd->add_option("--batch", batch, "batch size");
        cmd->add_option("--image-size", image_size, "input image side length");
        cmd->add_option("--seed", seed, "run seed");
    }

    attrseg::RunConfig resolve(CLI::App* cmd) const {
        attrseg::RunConfig cfg;
        if (cmd->count("--config")) cfg = attrseg::RunConfig::load(config_path);
        if (cmd->count("--data")) cfg.data_root = data;
        if (cmd->count("--bank")) cfg.bank_path = bank;
        if (cmd->count("--out")) cfg.output_dir = out;
        if (cmd->count("--policy")) cfg.policy = policy;
        if (cmd->count("--fusion")) cfg.fusion = attrseg::parse_fusion(fusion);
        if (cmd->count("--enhance"))
            attrseg::parse_enhancement(enhance, cfg.enh_spatial, cfg.enh_class);
        if (cmd->count("--attribute")) cfg.attribute = attrseg::parse_attribute(attribute);
        if (cmd->count("--lr")) cfg.lr = lr;
        if (cmd->count("--iterations")) cfg.iterations = iterations;
        if (cmd->count("--batch")) cfg.batch_size = batch;
        if (cmd->count("--image-size")) cfg.image_size = image_size;
        if (cmd->count("--seed")) cfg.seed = seed;
        if (cfg.data_root.empty()) throw CLI::ValidationError("--data (or a config with data.root) is required");
        if (cfg.bank_path.empty()) throw CLI::ValidationError("--bank (or a config with prompts.bank) is required");
        return cfg;
    }
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Open-vocabulary semantic segmentation with attribute prompts"};
    app.require_subcommand(1);

    // generate-prompts
    attrseg::GeneratePromptsArgs gp;
    auto* gen = app.add_subcommand("generate-prompts",
                                   "Fill the class-description cache for a class list");
    gen->add_option("--classes", gp.classes_file, "file with one class name per line")
        ->required()
        ->check(CLI::ExistingFile);
    gen->add_option("--attribute", gp.attributes,
                    "attribute kind(s): color|shape|texture|comprehensive|name|all");
    gen->add_option("--client", gp.client, "description source: fixture|http")
        ->default_val("fixture");
    gen->add_option("--cache", gp.cache_path, "bank TSV path to fill")->required();
    gen->add_option("--endpoint", gp.endpoint, "http client endpoint (http://host:port/path)");
    gen->add_option("--retries", gp.retries, "extra attempts after a failed query")->default_val(2);
    gen->callback([&] { attrseg::run_generate_prompts(gp); });

    // make-dataset
    attrseg::MakeDatasetArgs md;
    auto* mk = app.add_subcommand("make-dataset", "Generate the bundled synthetic dataset");
    mk->add_option("--out", md.out_dir, "dataset directory to create")->required();
    mk->add_option("--train", md.train_images, "train image count")->default_val(400);
    mk->add_option("--val", md.val_images, "val image count")->default_val(100);
    mk->add_option("--size", md.image_size, "image side length")->default_val(64);
    mk->add_option("--seed", md.seed, "generator seed")->default_val(7);
    mk->callback([&] { attrseg::run_make_dataset(md); });

    // train
    RunFlags train_flags;
    auto* tr = app.add_subcommand("train", "Train a model and write a checkpoint");
    train_flags.attach(tr, true);
    tr->callback([&] { attrseg::run_train(train_flags.resolve(tr)); });

    // eval
    attrseg::EvalArgs ev;
    auto* evc = app.add_subcommand("eval", "Score a checkpoint on a dataset split");
    evc->add_option("--checkpoint", ev.checkpoint, "checkpoint file")->required()
        ->check(CLI::ExistingFile);
    evc->add_option("--data", ev.data_root, "dataset directory")->required();
    evc->add_option("--bank", ev.bank_path, "prompt bank TSV (must match the checkpoint)")
        ->required()
        ->check(CLI::ExistingFile);
    evc->add_option("--out", ev.output_dir, "output directory")->required();
    evc->add_option("--split", ev.split, "split to score: train|val")->default_val("val");
    evc->callback([&] { attrseg::run_eval(ev); });

    // visualize
    attrseg::VisualizeArgs vz;
    auto* vis = app.add_subcommand("visualize",
                                   "Export per-class similarity heatmaps for one image");
    vis->add_option("--checkpoint", vz.checkpoint, "checkpoint file")->required()
        ->check(CLI::ExistingFile);
    vis->add_option("--image", vz.image_path, "input PNG")->required()->check(CLI::ExistingFile);
    vis->add_option("--bank", vz.bank_path, "prompt bank TSV (must match the checkpoint)")
        ->required()
        ->check(CLI::ExistingFile);
    vis->add_option("--out", vz.output_dir, "output directory")->required();
    vis->add_option("--class", vz.class_names,
                    "class name(s) to score (default: the checkpoint's vocabulary)");
    vis->callback([&] { attrseg::run_visualize(vz); });

    // ablate
    RunFlags ab_flags;
    attrseg::AblateArgs ab;
    auto* abc = app.add_subcommand("ablate", "Train/evaluate one run per axis value");
    ab_flags.attach(abc, false);
    abc->add_option("--axis", ab.axes,
                    "axis (repeatable): prompt|fusion|enhancement|finetune (default: all)");
    abc->add_option("--iterations", ab.iterations, "iterations per run")->default_val(300);
    abc->add_option("--parallel", ab.parallel, "worker threads over independent runs")
        ->default_val(1);
    abc->callback([&] {
        ab.base = ab_flags.resolve(abc);
        attrseg::run_ablate(ab);
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

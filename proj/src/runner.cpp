#include "attrseg/runner.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <set>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "json.hpp"

#include "attrseg/digest.hpp"
#include "attrseg/optim.hpp"
#include "attrseg/png_io.hpp"
#include "attrseg/train.hpp"

namespace attrseg {

namespace fs = std::filesystem;
using nlohmann::json;

// ---- generate-prompts --------------------------------------------------------

std::string run_generate_prompts(const GeneratePromptsArgs& args) {
    if (args.cache_path.empty()) throw std::invalid_argument("no cache path given");
    const std::vector<std::string> classes = read_class_list(args.classes_file);

    std::vector<AttributeKind> kinds;
    for (const std::string& token : args.attributes) {
        if (token == "all") {
            kinds = {AttributeKind::NameOnly, AttributeKind::Color, AttributeKind::ShapeSize,
                     AttributeKind::TextureMaterial, AttributeKind::Comprehensive};
            break;
        }
        kinds.push_back(parse_attribute(token));
    }
    if (kinds.empty()) throw std::invalid_argument("no attribute kinds requested");

    std::unique_ptr<LLMClient> client;
    if (args.client == "fixture") {
        client = std::make_unique<FixtureClient>();
    } else if (args.client == "http") {
        if (args.endpoint.empty())
            throw std::invalid_argument("the http client needs --endpoint http://host:port/path");
        client = std::make_unique<HttpClient>(args.endpoint);
    } else {
        throw std::invalid_argument("unknown client '" + args.client + "' (use fixture or http)");
    }

    std::string hash;
    int total_calls = 0;
    for (AttributeKind kind : kinds) {
        GenerateResult res =
            generate_descriptions(classes, kind, *client, args.cache_path, args.retries);
        hash = res.bank_hash;
        total_calls += res.client_calls;
        std::cout << "attribute " << attribute_token(kind) << ": " << classes.size()
                  << " classes covered (" << res.client_calls << " client calls)\n";
    }
    std::cout << "bank " << args.cache_path << "\nbank hash " << hash << "\n";
    (void)total_calls;
    return hash;
}

// ---- make-dataset -------------------------------------------------------------

void run_make_dataset(const MakeDatasetArgs& args) {
    if (args.out_dir.empty()) throw std::invalid_argument("no output directory given");
    SyntheticSpec spec = default_spec();
    spec.image_size = args.image_size;
    spec.seed = args.seed;
    Dataset ds = generate_dataset(spec, args.train_images, args.val_images);
    write_dataset(ds, args.out_dir);
    std::cout << "wrote " << ds.train.samples.size() << " train + " << ds.val.samples.size()
              << " val images (" << spec.image_size << "x" << spec.image_size << ", "
              << spec.classes.size() << " classes, unseen:";
    for (const std::string& u : spec.unseen) std::cout << " " << u;
    std::cout << ") to " << args.out_dir << "\n";
}

// ---- shared helpers -----------------------------------------------------------

namespace {

void check_image_sizes(const Split& split, int image_size, const std::string& what) {
    for (const Sample& s : split.samples)
        if (s.h != image_size || s.w != image_size)
            throw std::runtime_error(what + " sample '" + s.id + "' is " + std::to_string(s.w) +
                                     "x" + std::to_string(s.h) + " but the model expects " +
                                     std::to_string(image_size) + "x" + std::to_string(image_size));
}

void check_bank_coverage(const ClassDescriptionSet& bank, const std::vector<std::string>& classes,
                         AttributeKind attribute) {
    for (const std::string& name : classes)
        if (!bank.has(name, attribute))
            throw std::runtime_error("description bank lacks an entry for class '" + name +
                                     "' and attribute '" + attribute_token(attribute) + "'");
}

ad::Mat text_embedding_values(Model& model, const ClassDescriptionSet& bank,
                              const std::vector<std::string>& classes) {
    ad::Tape tape(false);
    ad::Ctx ctx(tape);
    ad::Node* t = model.text().encode_classes(ctx, bank, classes, model.config().attribute);
    return t->val;
}

void write_text_file(const fs::path& path, const std::string& body) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << body;
}

}  // namespace

// ---- train ---------------------------------------------------------------------

std::string run_train(const RunConfig& cfg) {
    cfg.validate();
    Dataset ds = load_dataset(cfg.data_root);
    check_image_sizes(ds.train, cfg.image_size, "train");

    ClassDescriptionSet bank = load_bank(cfg.bank_path);
    const std::string bank_hash = sha256_file(cfg.bank_path);

    Model model(cfg);
    apply_policy(model, cfg.policy, cfg.text_trainable);
    const TrainSetup setup = make_train_setup(ds.train);
    check_bank_coverage(bank, setup.seen_classes, cfg.attribute);

    fs::create_directories(cfg.output_dir);
    cfg.save((fs::path(cfg.output_dir) / "config.json").string());

    std::ofstream csv(fs::path(cfg.output_dir) / "loss.csv", std::ios::trunc);
    csv << "iteration,loss,w\n";
    csv.precision(17);
    const long report_every = std::max(1, cfg.iterations / 20);
    auto callback = [&](long iter, double loss, double w) {
        csv << iter << "," << loss << "," << w << "\n";
        if ((iter + 1) % report_every == 0 || iter + 1 == cfg.iterations) {
            std::printf("iter %6ld/%d  loss %.5f  w %.4f\n", iter + 1, cfg.iterations, loss, w);
            std::fflush(stdout);
        }
    };

    TrainResult tr = train_model(model, bank, ds.train, setup, callback);

    CheckpointMeta meta;
    meta.config = cfg;
    meta.bank_hash = bank_hash;
    meta.class_order = setup.seen_classes;
    meta.eval_classes = ds.train.classes;
    meta.attribute = attribute_token(cfg.attribute);
    meta.iteration = tr.iterations;
    meta.fusion_w = tr.final_w;
    meta.metrics = json::object();
    if (!tr.losses.empty()) {
        meta.metrics["final_loss"] = tr.losses.back();
        const size_t tail = std::min<size_t>(tr.losses.size(), 50);
        double acc = 0.0;
        for (size_t i = tr.losses.size() - tail; i < tr.losses.size(); ++i) acc += tr.losses[i];
        meta.metrics["tail_mean_loss"] = acc / static_cast<double>(tail);
    }

    const std::string ckpt = (fs::path(cfg.output_dir) / "checkpoint.bin").string();
    save_checkpoint(ckpt, model, meta);
    std::cout << "checkpoint " << ckpt << "\n";
    return ckpt;
}

// ---- eval ----------------------------------------------------------------------

IoUReport evaluate_split(Model& model, const ClassDescriptionSet& bank, const Split& split) {
    const RunConfig& cfg = model.config();
    if (split.samples.empty()) throw std::invalid_argument("evaluation split is empty");
    check_image_sizes(split, cfg.image_size, "eval");
    check_bank_coverage(bank, split.classes, cfg.attribute);

    const ad::Mat text = text_embedding_values(model, bank, split.classes);
    Confusion confusion(static_cast<int>(split.classes.size()));
    for (const Sample& s : split.samples) {
        ad::Tape tape(false);
        ad::Ctx ctx(tape);
        ad::Node* t = ad::constant(tape, text);
        ad::Node* logits = model.forward_image(ctx, s.image, t);
        confusion.add(s.mask, predict_labels(logits->val));
    }
    return compute_iou(confusion, split.classes, split.unseen_indices);
}

IoUReport run_eval(const EvalArgs& args) {
    CheckpointMeta meta = read_checkpoint_meta(args.checkpoint);
    const std::string bank_hash = sha256_file(args.bank_path);
    if (bank_hash != meta.bank_hash)
        throw std::runtime_error("prompt bank mismatch: checkpoint was trained against bank " +
                                 meta.bank_hash + " but the supplied bank hashes to " + bank_hash);
    ClassDescriptionSet bank = load_bank(args.bank_path);

    Model model(meta.config);
    load_checkpoint_weights(args.checkpoint, model);

    Dataset ds = load_dataset(args.data_root);
    const Split* split = nullptr;
    if (args.split == "val")
        split = &ds.val;
    else if (args.split == "train")
        split = &ds.train;
    else
        throw std::invalid_argument("unknown split '" + args.split + "' (use train or val)");

    IoUReport report = evaluate_split(model, bank, *split);

    fs::create_directories(args.output_dir);
    RunConfig echo = meta.config;
    echo.output_dir = args.output_dir;
    echo.save((fs::path(args.output_dir) / "config.json").string());
    write_text_file(fs::path(args.output_dir) / "report.json", report_to_json(report) + "\n");
    const std::string table = report_to_table(report, split->unseen_indices);
    write_text_file(fs::path(args.output_dir) / "report.txt", table);
    std::cout << table;
    return report;
}

// ---- visualize -----------------------------------------------------------------

std::vector<std::string> run_visualize(const VisualizeArgs& args) {
    CheckpointMeta meta = read_checkpoint_meta(args.checkpoint);
    const std::string bank_hash = sha256_file(args.bank_path);
    if (bank_hash != meta.bank_hash)
        throw std::runtime_error("prompt bank mismatch: checkpoint was trained against bank " +
                                 meta.bank_hash + " but the supplied bank hashes to " + bank_hash);
    ClassDescriptionSet bank = load_bank(args.bank_path);

    Model model(meta.config);
    load_checkpoint_weights(args.checkpoint, model);
    const RunConfig& cfg = model.config();

    const std::vector<std::string>& classes =
        args.class_names.empty() ? meta.eval_classes : args.class_names;
    if (classes.empty()) throw std::invalid_argument("no classes to visualize");
    check_bank_coverage(bank, classes, cfg.attribute);

    ImageU8 img = read_png(args.image_path);
    if (img.width != cfg.image_size || img.height != cfg.image_size)
        throw std::runtime_error("image is " + std::to_string(img.width) + "x" +
                                 std::to_string(img.height) + " but the model expects " +
                                 std::to_string(cfg.image_size) + "x" +
                                 std::to_string(cfg.image_size));
    ad::Mat pixels(static_cast<long>(img.height) * img.width, 3);
    for (long i = 0; i < pixels.rows(); ++i)
        for (int ch = 0; ch < 3; ++ch) {
            const size_t src = img.channels == 3 ? static_cast<size_t>(i) * 3 + ch
                                                 : static_cast<size_t>(i);
            pixels(i, ch) = img.pixels[src] / 255.0;
        }

    const ad::Mat text = text_embedding_values(model, bank, classes);
    ad::Tape tape(false);
    ad::Ctx ctx(tape);
    ForwardTrace trace;
    model.forward_image(ctx, pixels, ad::constant(tape, text), &trace);
    if (!trace.raw_cost) throw std::logic_error("forward pass produced no cost volume");

    ad::Node* up = ad::bilinear_resize(tape, trace.raw_cost, trace.grid_h, trace.grid_w,
                                       img.height, img.width);
    fs::create_directories(args.output_dir);
    std::vector<std::string> written =
        export_costmap_heatmaps(up->val, img.height, img.width, classes, args.output_dir);
    std::cout << "wrote " << written.size() << " heatmaps to " << args.output_dir << "\n";
    return written;
}

// ---- ablate --------------------------------------------------------------------

const std::vector<std::string>& ablation_axes() {
    static const std::vector<std::string> axes{"prompt", "fusion", "enhancement", "finetune"};
    return axes;
}

namespace {

struct AblateRunSpec {
    std::string axis;
    std::string value;
    RunConfig cfg;
};

RunConfig with_prompt(RunConfig cfg, AttributeKind kind) {
    cfg.attribute = kind;
    return cfg;
}

std::vector<AblateRunSpec> build_runs(const RunConfig& base, const std::vector<std::string>& axes) {
    std::vector<AblateRunSpec> runs;
    for (const std::string& axis : axes) {
        if (axis == "prompt") {
            for (AttributeKind kind : {AttributeKind::NameOnly, AttributeKind::Color,
                                       AttributeKind::ShapeSize, AttributeKind::TextureMaterial,
                                       AttributeKind::Comprehensive})
                runs.push_back({axis, attribute_token(kind), with_prompt(base, kind)});
        } else if (axis == "fusion") {
            for (FusionStrategy strategy :
                 {FusionStrategy::Weighted, FusionStrategy::Concat, FusionStrategy::Attention}) {
                RunConfig cfg = base;
                cfg.fusion = strategy;
                runs.push_back({axis, fusion_token(strategy), cfg});
            }
        } else if (axis == "enhancement") {
            for (const char* mode : {"none", "spatial", "class", "both"}) {
                RunConfig cfg = base;
                parse_enhancement(mode, cfg.enh_spatial, cfg.enh_class);
                runs.push_back({axis, mode, cfg});
            }
        } else if (axis == "finetune") {
            for (const std::string& policy : finetune_table_policies()) {
                RunConfig cfg = base;
                cfg.policy = policy;
                runs.push_back({axis, policy, cfg});
            }
        } else {
            throw std::invalid_argument("unknown ablation axis '" + axis +
                                        "' (use prompt, fusion, enhancement, finetune)");
        }
    }
    return runs;
}

std::string ablate_table_text(const std::string& axis, int iterations,
                              const std::vector<AblateRow>& rows) {
    size_t name_w = 5;
    for (const AblateRow& r : rows) name_w = std::max(name_w, r.value.size());
    std::ostringstream out;
    out << "axis: " << axis << "  (" << iterations << " iterations per run)\n";
    char line[200];
    std::snprintf(line, sizeof line, "%-*s  %8s  %8s  %8s  %8s\n", static_cast<int>(name_w),
                  "value", "seen", "unseen", "miou", "avg");
    out << line;
    out << std::string(name_w + 42, '-') << "\n";
    for (const AblateRow& r : rows) {
        std::snprintf(line, sizeof line, "%-*s  %8.4f  %8.4f  %8.4f  %8.4f\n",
                      static_cast<int>(name_w), r.value.c_str(), r.seen_miou, r.unseen_miou,
                      r.miou, r.avg);
        out << line;
    }
    return out.str();
}

json ablate_table_json(const std::string& axis, int iterations,
                       const std::vector<AblateRow>& rows) {
    json jrows = json::array();
    for (const AblateRow& r : rows)
        jrows.push_back({{"value", r.value},
                         {"seen_miou", r.seen_miou},
                         {"unseen_miou", r.unseen_miou},
                         {"miou", r.miou},
                         {"avg", r.avg}});
    return {{"axis", axis}, {"iterations", iterations}, {"rows", jrows}};
}

}  // namespace

std::vector<AblateRow> run_ablate(const AblateArgs& args) {
    RunConfig base = args.base;
    base.iterations = args.iterations;
    base.validate();

    const std::vector<std::string>& axes = args.axes.empty() ? ablation_axes() : args.axes;
    for (const std::string& axis : axes)
        if (std::find(ablation_axes().begin(), ablation_axes().end(), axis) ==
            ablation_axes().end())
            throw std::invalid_argument("unknown ablation axis '" + axis + "'");

    Dataset ds = load_dataset(base.data_root);
    check_image_sizes(ds.train, base.image_size, "train");
    check_image_sizes(ds.val, base.image_size, "val");
    ClassDescriptionSet bank = load_bank(base.bank_path);

    // Every attribute any run will touch must already be cached so results do
    // not depend on run order.
    std::set<AttributeKind> needed{base.attribute};
    if (std::find(axes.begin(), axes.end(), std::string("prompt")) != axes.end())
        needed = {AttributeKind::NameOnly, AttributeKind::Color, AttributeKind::ShapeSize,
                  AttributeKind::TextureMaterial, AttributeKind::Comprehensive};
    for (AttributeKind kind : needed) check_bank_coverage(bank, ds.train.classes, kind);

    std::vector<AblateRunSpec> runs = build_runs(base, axes);
    const TrainSetup setup = make_train_setup(ds.train);

    fs::create_directories(base.output_dir);
    std::vector<AblateRow> rows(runs.size());
    std::atomic<size_t> next{0};
    std::mutex io_mutex;
    std::vector<std::string> failures;

    auto worker = [&]() {
        for (;;) {
            const size_t i = next.fetch_add(1);
            if (i >= runs.size()) return;
            AblateRunSpec& run = runs[i];
            const fs::path run_dir =
                fs::path(base.output_dir) / run.axis / "runs" / slugify(run.value);
            try {
                fs::create_directories(run_dir);
                run.cfg.output_dir = run_dir.string();
                run.cfg.save((run_dir / "config.json").string());

                Model model(run.cfg);
                apply_policy(model, run.cfg.policy, run.cfg.text_trainable);

                std::ofstream csv(run_dir / "loss.csv", std::ios::trunc);
                csv << "iteration,loss,w\n";
                csv.precision(17);
                auto callback = [&csv](long iter, double loss, double w) {
                    csv << iter << "," << loss << "," << w << "\n";
                };
                train_model(model, bank, ds.train, setup, callback);

                IoUReport rep = evaluate_split(model, bank, ds.val);
                write_text_file(run_dir / "report.json", report_to_json(rep) + "\n");

                AblateRow row;
                row.axis = run.axis;
                row.value = run.value;
                row.seen_miou = rep.seen_miou;
                row.unseen_miou = rep.unseen_miou;
                row.miou = rep.miou;
                row.avg = 0.5 * (rep.seen_miou + rep.unseen_miou);
                rows[i] = row;
                std::lock_guard<std::mutex> lock(io_mutex);
                std::printf("[%zu/%zu] %s=%s  seen %.4f  unseen %.4f  miou %.4f\n", i + 1,
                            runs.size(), run.axis.c_str(), run.value.c_str(), row.seen_miou,
                            row.unseen_miou, row.miou);
                std::fflush(stdout);
            } catch (const std::exception& e) {
                std::lock_guard<std::mutex> lock(io_mutex);
                failures.push_back(run.axis + "=" + run.value + ": " + e.what());
            }
        }
    };

    const int workers = std::max(1, std::min<int>(args.parallel, static_cast<int>(runs.size())));
    if (workers == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < workers; ++t) pool.emplace_back(worker);
        for (std::thread& t : pool) t.join();
    }
    if (!failures.empty()) {
        std::string msg = "ablation runs failed:";
        for (const std::string& f : failures) msg += "\n  " + f;
        throw std::runtime_error(msg);
    }

    std::vector<AblateRow> all;
    for (const std::string& axis : axes) {
        std::vector<AblateRow> axis_rows;
        for (const AblateRow& r : rows)
            if (r.axis == axis) axis_rows.push_back(r);
        const std::string table = ablate_table_text(axis, args.iterations, axis_rows);
        write_text_file(fs::path(base.output_dir) / axis / "table.txt", table);
        write_text_file(fs::path(base.output_dir) / axis / "table.json",
                        ablate_table_json(axis, args.iterations, axis_rows).dump(2) + "\n");
        std::cout << "\n" << table;
        all.insert(all.end(), axis_rows.begin(), axis_rows.end());
    }
    return all;
}

}  // namespace attrseg

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "json.hpp"

#include "attrseg/config.hpp"
#include "attrseg/data.hpp"
#include "attrseg/digest.hpp"
#include "attrseg/runner.hpp"
#include "helpers.hpp"

using namespace attrseg;
using namespace attrseg::testutil;

namespace {

std::string read_file(const std::string& path) {
    std::ifstream in(path);
    REQUIRE(in.good());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

long count_lines(const std::string& text) {
    long n = 0;
    for (char ch : text)
        if (ch == '\n') ++n;
    return n;
}

// Small end-to-end configuration: 32 px images, shallow towers.
RunConfig small_cfg() {
    RunConfig cfg;
    cfg.image_size = 32;
    cfg.clip_patch = 8;
    cfg.clip_dim = 16;
    cfg.clip_depth = 3;
    cfg.clip_heads = 2;
    cfg.clip_taps = {1, 2, 3};
    cfg.sam_patch = 8;
    cfg.sam_dim = 16;
    cfg.sam_depth = 3;
    cfg.sam_heads = 2;
    cfg.text_vocab = 512;
    cfg.text_context = 77;
    cfg.text_dim = 16;
    cfg.text_depth = 1;
    cfg.text_heads = 2;
    cfg.mlp_ratio = 2;
    cfg.embed_dim = 8;
    cfg.window = 2;
    cfg.enh_heads = 2;
    cfg.spatial_blocks = 1;
    cfg.class_blocks = 1;
    cfg.upsample_stages = 1;
    cfg.stage_channels = {8};
    cfg.guid_channels = 4;
    cfg.lr = 1e-3;
    cfg.weight_decay = 1e-4;
    cfg.batch_size = 2;
    cfg.iterations = 2;
    cfg.seed = 3;
    return cfg;
}

// One shared fixture directory for the runner pipeline tests: dataset + bank
// are built once, then train/eval/visualize reuse them.
struct PipelineFixture {
    TempDir tmp{"pipeline"};
    std::string data_root, bank_path, bank_hash, classes_file, checkpoint;

    PipelineFixture() {
        MakeDatasetArgs mk;
        mk.out_dir = tmp.str("data");
        mk.train_images = 6;
        mk.val_images = 2;
        mk.image_size = 32;
        mk.seed = 9;
        run_make_dataset(mk);
        data_root = mk.out_dir;

        classes_file = tmp.str("classes.txt");
        {
            std::ofstream f(classes_file);
            for (const SynthClass& c : default_spec().classes) f << c.name << "\n";
        }
        GeneratePromptsArgs gen;
        gen.classes_file = classes_file;
        gen.attributes = {"comprehensive"};
        gen.cache_path = tmp.str("bank.tsv");
        bank_hash = run_generate_prompts(gen);
        bank_path = gen.cache_path;

        RunConfig cfg = small_cfg();
        cfg.data_root = data_root;
        cfg.bank_path = bank_path;
        cfg.output_dir = tmp.str("run");
        checkpoint = run_train(cfg);
    }
};

PipelineFixture& pipeline() {
    static PipelineFixture fx;
    return fx;
}

}  // namespace

TEST_CASE("config serialization round-trips and rejects unknown keys") {
    RunConfig cfg = small_cfg();
    cfg.data_root = "some/data";
    cfg.bank_path = "bank.tsv";
    cfg.attribute = AttributeKind::Color;
    cfg.fusion = FusionStrategy::Attention;
    cfg.policy = "clip_qv";
    cfg.text_trainable = false;

    const nlohmann::json j = cfg.to_json();
    RunConfig back = RunConfig::from_json(j);
    CHECK(back.to_json() == j);
    CHECK(back.attribute == AttributeKind::Color);
    CHECK(back.fusion == FusionStrategy::Attention);
    CHECK(back.policy == "clip_qv");
    CHECK(back.clip_taps == cfg.clip_taps);
    CHECK_FALSE(back.text_trainable);

    nlohmann::json stray = j;
    stray["learning_rate"] = 0.1;  // not a real key
    try {
        RunConfig::from_json(stray);
        FAIL("expected the unknown key to be rejected");
    } catch (const std::exception& e) {
        CHECK(std::string(e.what()).find("learning_rate") != std::string::npos);
    }
}

TEST_CASE("config files round-trip through disk") {
    TempDir tmp("config");
    RunConfig cfg = small_cfg();
    cfg.seed = 123;
    cfg.save(tmp.str("run.json"));
    RunConfig back = RunConfig::load(tmp.str("run.json"));
    CHECK(back.to_json() == cfg.to_json());
    CHECK_THROWS(RunConfig::load(tmp.str("missing.json")));
}

TEST_CASE("config validation rejects inconsistent geometry and schedules") {
    CHECK_NOTHROW(small_cfg().validate());

    RunConfig bad = small_cfg();
    bad.image_size = 30;  // not a multiple of the patch size
    CHECK_THROWS(bad.validate());

    bad = small_cfg();
    bad.clip_taps = {1, 2};  // must name three tap depths
    CHECK_THROWS(bad.validate());

    bad = small_cfg();
    bad.clip_taps = {1, 2, 5};  // beyond the tower depth
    CHECK_THROWS(bad.validate());

    bad = small_cfg();
    bad.clip_dim = 15;  // not divisible by heads
    CHECK_THROWS(bad.validate());

    bad = small_cfg();
    bad.embed_dim = 9;
    CHECK_THROWS(bad.validate());

    bad = small_cfg();
    bad.upsample_stages = 3;  // more stages than channel widths
    CHECK_THROWS(bad.validate());

    bad = small_cfg();
    bad.batch_size = 0;
    CHECK_THROWS(bad.validate());

    bad = small_cfg();
    bad.iterations = -1;
    CHECK_THROWS(bad.validate());

    bad = small_cfg();
    bad.policy = "warmup_only";
    CHECK_THROWS(bad.validate());
}

TEST_CASE("enhancement mode tokens cover all four flag combinations") {
    CHECK(enhancement_token(true, true) == "both");
    CHECK(enhancement_token(true, false) == "spatial");
    CHECK(enhancement_token(false, true) == "class");
    CHECK(enhancement_token(false, false) == "none");
    for (const std::string mode : {"none", "spatial", "class", "both"}) {
        bool sp = false, cl = false;
        parse_enhancement(mode, sp, cl);
        CHECK(enhancement_token(sp, cl) == mode);
    }
    bool sp = false, cl = false;
    CHECK_THROWS(parse_enhancement("maximal", sp, cl));
}

TEST_CASE("prompt generation runner fills a cache and reports its digest") {
    PipelineFixture& fx = pipeline();
    REQUIRE(fx.bank_hash.size() == 64);
    CHECK(std::filesystem::exists(fx.bank_path));
    CHECK(sha256_file(fx.bank_path) == fx.bank_hash);

    // Re-running against the same cache is idempotent.
    GeneratePromptsArgs again;
    again.classes_file = fx.classes_file;
    again.attributes = {"comprehensive"};
    again.cache_path = fx.bank_path;
    CHECK(run_generate_prompts(again) == fx.bank_hash);

    // "all" adds the remaining attribute kinds and changes the digest.
    GeneratePromptsArgs all;
    all.classes_file = fx.classes_file;
    all.attributes = {"all"};
    all.cache_path = fx.tmp.str("bank_all.tsv");
    const std::string all_hash = run_generate_prompts(all);
    CHECK(all_hash != fx.bank_hash);
    ClassDescriptionSet set = load_bank(all.cache_path);
    CHECK(set.entries.size() == 25);  // 5 classes x 5 attribute kinds

    GeneratePromptsArgs bad;
    bad.classes_file = fx.tmp.str("no-such-file.txt");
    bad.cache_path = fx.tmp.str("unused.tsv");
    CHECK_THROWS(run_generate_prompts(bad));
}

TEST_CASE("dataset runner writes a loadable benchmark") {
    PipelineFixture& fx = pipeline();
    Dataset ds = load_dataset(fx.data_root);
    CHECK(ds.train.samples.size() == 6);
    CHECK(ds.val.samples.size() == 2);
    CHECK(ds.train.classes.size() == 5);
    CHECK(ds.train.unseen_indices.size() == 1);
    CHECK(ds.spec.image_size == 32);
}

TEST_CASE("training runner writes config, loss curve, and checkpoint") {
    PipelineFixture& fx = pipeline();
    CHECK(std::filesystem::exists(fx.checkpoint));
    CHECK(std::filesystem::exists(fx.tmp.str("run/config.json")));
    const std::string csv = read_file(fx.tmp.str("run/loss.csv"));
    CHECK(count_lines(csv) == 3);  // header + one row per iteration
    CHECK(csv.rfind("iteration,loss,w", 0) == 0);

    CheckpointMeta meta = read_checkpoint_meta(fx.checkpoint);
    CHECK(meta.bank_hash == fx.bank_hash);
    CHECK(meta.iteration == 2);
    CHECK(meta.class_order.size() == 4);   // seen classes only
    CHECK(meta.eval_classes.size() == 5);  // full vocabulary
    CHECK(meta.attribute == "comprehensive");
    CHECK(meta.metrics.contains("final_loss"));
    RunConfig echoed = RunConfig::load(fx.tmp.str("run/config.json"));
    CHECK(echoed.to_json() == meta.config.to_json());
}

TEST_CASE("evaluation runner scores the requested split and writes reports") {
    PipelineFixture& fx = pipeline();
    EvalArgs ev;
    ev.checkpoint = fx.checkpoint;
    ev.data_root = fx.data_root;
    ev.bank_path = fx.bank_path;
    ev.output_dir = fx.tmp.str("eval");
    IoUReport rep = run_eval(ev);
    CHECK(rep.classes.size() == 5);
    CHECK(std::filesystem::exists(fx.tmp.str("eval/report.json")));
    CHECK(std::filesystem::exists(fx.tmp.str("eval/report.txt")));
    CHECK(std::filesystem::exists(fx.tmp.str("eval/config.json")));
    auto j = nlohmann::json::parse(read_file(fx.tmp.str("eval/report.json")));
    CHECK(j.at("miou").get<double>() == rep.miou);
    CHECK(j.at("per_class").size() == 5);

    EvalArgs train_split = ev;
    train_split.split = "train";
    train_split.output_dir = fx.tmp.str("eval_train");
    CHECK_NOTHROW(run_eval(train_split));

    EvalArgs bad_split = ev;
    bad_split.split = "test";
    CHECK_THROWS(run_eval(bad_split));
}

TEST_CASE("evaluation refuses a bank that differs from the training bank") {
    PipelineFixture& fx = pipeline();

    // A bank with extra entries hashes differently.
    GeneratePromptsArgs extra;
    extra.classes_file = fx.classes_file;
    extra.attributes = {"comprehensive", "color"};
    extra.cache_path = fx.tmp.str("bank_tampered.tsv");
    {
        std::ifstream src(fx.bank_path, std::ios::binary);
        std::ofstream dst(extra.cache_path, std::ios::binary);
        dst << src.rdbuf();
    }
    const std::string other_hash = run_generate_prompts(extra);
    REQUIRE(other_hash != fx.bank_hash);

    EvalArgs ev;
    ev.checkpoint = fx.checkpoint;
    ev.data_root = fx.data_root;
    ev.bank_path = extra.cache_path;
    ev.output_dir = fx.tmp.str("eval_bad");
    try {
        run_eval(ev);
        FAIL("expected the bank digest guard to fire");
    } catch (const std::exception& e) {
        const std::string msg = e.what();
        CHECK(msg.find("mismatch") != std::string::npos);
        CHECK(msg.find(fx.bank_hash) != std::string::npos);
        CHECK(msg.find(other_hash) != std::string::npos);
    }
}

TEST_CASE("visualization runner writes one heatmap per class") {
    PipelineFixture& fx = pipeline();
    VisualizeArgs vz;
    vz.checkpoint = fx.checkpoint;
    vz.image_path = fx.data_root + "/images/val_0000.png";
    vz.bank_path = fx.bank_path;
    vz.output_dir = fx.tmp.str("viz");
    auto paths = run_visualize(vz);
    REQUIRE(paths.size() == 5);  // the checkpoint vocabulary
    for (const std::string& p : paths) CHECK(std::filesystem::exists(p));
    CHECK(std::filesystem::exists(fx.tmp.str("viz/ranges.txt")));

    VisualizeArgs two = vz;
    two.class_names = {"red circle", "blue ring"};
    two.output_dir = fx.tmp.str("viz2");
    auto two_paths = run_visualize(two);
    REQUIRE(two_paths.size() == 2);
    CHECK(two_paths[0].find("red-circle") != std::string::npos);
    CHECK(two_paths[1].find("blue-ring") != std::string::npos);

    VisualizeArgs missing = vz;
    missing.class_names = {"purple hexagon"};  // not in the bank
    missing.output_dir = fx.tmp.str("viz3");
    CHECK_THROWS(run_visualize(missing));
}

TEST_CASE("the ablation runner sweeps one axis and tabulates every value") {
    PipelineFixture& fx = pipeline();
    AblateArgs ab;
    ab.base = small_cfg();
    ab.base.data_root = fx.data_root;
    ab.base.bank_path = fx.bank_path;
    ab.base.output_dir = fx.tmp.str("grid");
    ab.axes = {"fusion"};
    ab.iterations = 1;
    auto rows = run_ablate(ab);
    REQUIRE(rows.size() == 3);
    std::vector<std::string> values;
    for (const AblateRow& r : rows) {
        CHECK(r.axis == "fusion");
        values.push_back(r.value);
        CHECK(r.avg == 0.5 * (r.seen_miou + r.unseen_miou));
    }
    CHECK(values == std::vector<std::string>{"weighted", "concat", "attention"});

    CHECK(std::filesystem::exists(fx.tmp.str("grid/fusion/table.txt")));
    auto j = nlohmann::json::parse(read_file(fx.tmp.str("grid/fusion/table.json")));
    CHECK(j.at("axis") == "fusion");
    CHECK(j.at("iterations").get<int>() == 1);
    REQUIRE(j.at("rows").size() == 3);
    CHECK(j.at("rows")[0].at("value") == "weighted");
    for (const std::string v : {"weighted", "concat", "attention"}) {
        CHECK(std::filesystem::exists(fx.tmp.str("grid/fusion/runs/" + v + "/config.json")));
        CHECK(std::filesystem::exists(fx.tmp.str("grid/fusion/runs/" + v + "/loss.csv")));
        CHECK(std::filesystem::exists(fx.tmp.str("grid/fusion/runs/" + v + "/report.json")));
    }

    CHECK(ablation_axes() ==
          std::vector<std::string>{"prompt", "fusion", "enhancement", "finetune"});
    AblateArgs bad = ab;
    bad.axes = {"optimizer"};
    CHECK_THROWS(run_ablate(bad));
}

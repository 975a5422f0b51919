#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "mcn/checkpoint.hpp"
#include "mcn/config.hpp"
#include "mcn/control.hpp"
#include "mcn/image_io.hpp"
#include "mcn/meta.hpp"
#include "mcn/metrics.hpp"
#include "mcn/tasks.hpp"

namespace fs = std::filesystem;
using namespace mcn;

namespace {

struct CommonOpts {
    std::string config_file;
    std::vector<std::string> overrides;
    int64_t seed = -1;  // <0 = keep config value
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
    cmd->add_option("--config", opts.config_file, "key=value config file");
    cmd->add_option("--set", opts.overrides, "override a config key (key=value), repeatable");
    cmd->add_option("--seed", opts.seed, "master seed (overrides the config's seed key)");
}

RunConfig make_config(const CommonOpts& opts) {
    RunConfig cfg;
    if (!opts.config_file.empty()) cfg.load_file(opts.config_file);
    for (const std::string& kv : opts.overrides) cfg.set_override(kv);
    if (opts.seed >= 0) cfg.set("seed", std::to_string(opts.seed));
    return cfg;
}

Dataset load_data(const std::string& dir, const RunConfig& cfg) {
    Dataset ds = load_dataset(dir);
    if (ds.size != cfg.get_int("unet.size"))
        throw ConfigError("dataset size " + std::to_string(ds.size) + " != unet.size " +
                          cfg.get("unet.size"));
    return ds;
}

std::vector<std::pair<std::string, std::string>> ckpt_config(const RunConfig& cfg,
                                                             const std::string& kind) {
    auto items = cfg.items();
    items.emplace_back("ckpt.kind", kind);
    std::sort(items.begin(), items.end());
    return items;
}

UNetConfig unet_from_ckpt(const Checkpoint& c) {
    UNetConfig u;
    u.image_size = std::stoi(c.config_value("unet.size"));
    u.base_channels = std::stoi(c.config_value("unet.channels"));
    u.time_embed_dim = std::stoi(c.config_value("unet.time_embed"));
    u.class_count = std::stoi(c.config_value("unet.classes"));
    u.validate();
    return u;
}

NoiseSchedule sched_from_ckpt(const Checkpoint& c) {
    return NoiseSchedule::linear(std::stoi(c.config_value("diff.steps")),
                                 std::stod(c.config_value("diff.beta_start")),
                                 std::stod(c.config_value("diff.beta_end")));
}

void require_kind(const Checkpoint& c, const std::string& kind, const std::string& path) {
    if (!c.has_config("ckpt.kind") || c.config_value("ckpt.kind") != kind)
        throw DataError("checkpoint '" + path + "' is not a " + kind + " checkpoint");
}

// Split a control checkpoint into the frozen base and the trainable branch,
// restoring any recorded connection policy.
ControlModel model_from_ckpt(const Checkpoint& c, const std::string& path) {
    require_kind(c, "control", path);
    ControlModel m;
    m.cfg = unet_from_ckpt(c);
    for (const auto& [k, v] : c.params) {
        if (k.rfind("base.", 0) == 0)
            m.base.insert(k, v);
        else
            m.theta.insert(k, v);
    }
    m.base.set_requires_grad(false);
    if (c.has_config("ckpt.disconnected")) {
        const std::string& d = c.config_value("ckpt.disconnected");
        for (char ch : d)
            if (ch >= '1' && ch <= '4') m.links.enc_link[static_cast<size_t>(ch - '1')] = false;
    }
    if (m.base.empty() || m.theta.empty())
        throw DataError("checkpoint '" + path + "' lacks base or control parameters");
    return m;
}

ParamSet merge_params(const ParamSet& a, const ParamSet& b) {
    ParamSet out;
    for (const auto& [k, v] : a) out.insert(k, v);
    for (const auto& [k, v] : b) out.insert(k, v);
    return out;
}

std::string checkpoint_path_check(const std::string& path) {
    if (!fs::exists(path)) throw DataError("checkpoint path '" + path + "' does not exist");
    return path;
}

// ---- commands ---------------------------------------------------------------

int cmd_gen_data(int n, int size, uint64_t seed, const std::string& out, bool force) {
    Dataset ds = gen_dataset(n, size, seed);
    save_dataset(ds, out, force);
    std::printf("wrote %d %dx%d images to %s\n", ds.count(), size, size, out.c_str());
    return 0;
}

int cmd_train_base(const CommonOpts& common, const std::string& data, const std::string& out,
                   const std::string& log) {
    RunConfig cfg = make_config(common);
    Dataset ds = load_data(data, cfg);
    UNetConfig ucfg = cfg.unet();
    NoiseSchedule sched = cfg.schedule();
    BaseUNet base = build_base_unet(ucfg, cfg.seed());
    BatchSource src = BatchSource::plain(ds, cfg.get_int("base.batch"), cfg.seed());
    TrainResult result =
        train_base(ucfg, base.params, sched, cfg.get_int("base.steps"),
                   cfg.get_double("base.alpha"), "adam", cfg.get_int("base.accum"), cfg.seed(), src);

    Checkpoint ckpt;
    ckpt.config = ckpt_config(cfg, "base");
    ckpt.rng_state = result.rng_state;
    ckpt.moments = result.opt;
    ckpt.params = result.theta;
    std::string digest = save_checkpoint(out, ckpt);
    if (!log.empty()) write_loss_log_csv(log, result.log);
    std::printf("base checkpoint %s (sha256 %.16s), final loss %.4f\n", out.c_str(),
                digest.c_str(), result.log.empty() ? 0.0 : result.log.back().loss);
    return 0;
}

int cmd_meta_train(const CommonOpts& common, const std::string& data, const std::string& base_path,
                   const std::string& out, const std::string& log, bool joint) {
    RunConfig cfg = make_config(common);
    Dataset ds = load_data(data, cfg);
    Checkpoint base_ckpt = load_checkpoint(checkpoint_path_check(base_path));
    require_kind(base_ckpt, "base", base_path);
    for (const char* key : {"unet.size", "unet.channels", "unet.time_embed", "unet.classes"})
        if (base_ckpt.config_value(key) != cfg.get(key))
            throw ConfigError(std::string("config key ") + key + " (" + cfg.get(key) +
                              ") differs from the base checkpoint (" +
                              base_ckpt.config_value(key) + ")");

    UNetConfig ucfg = cfg.unet();
    NoiseSchedule sched = cfg.schedule();
    ControlModel model = attach_control_branch(base_ckpt.params, ucfg, cfg.seed());
    MetaConfig mcfg = cfg.meta();
    BatchSource src(ds, meta_train_tasks(), mcfg.total_batch, cfg.seed());
    TrainResult result = joint ? baseline_joint_train(model, model.theta, sched, mcfg, src)
                               : meta_train(model, model.theta, sched, mcfg, src);

    Checkpoint ckpt;
    ckpt.config = ckpt_config(cfg, "control");
    ckpt.rng_state = result.rng_state;
    ckpt.moments = result.opt;
    ckpt.params = merge_params(model.base, result.theta);
    std::string digest = save_checkpoint(out, ckpt);
    if (!log.empty()) write_loss_log_csv(log, result.log);
    std::printf("%s checkpoint %s (sha256 %.16s)\n", joint ? "joint" : "meta", out.c_str(),
                digest.c_str());
    return 0;
}

int cmd_adapt(const CommonOpts& common, const std::string& ckpt_path, const std::string& data,
              const std::string& task_name, const std::string& out, const std::string& log) {
    RunConfig cfg = make_config(common);
    Checkpoint in_ckpt = load_checkpoint(checkpoint_path_check(ckpt_path));
    ControlModel model = model_from_ckpt(in_ckpt, ckpt_path);
    NoiseSchedule sched = sched_from_ckpt(in_ckpt);
    Dataset ds = load_dataset(data);
    if (ds.size != model.cfg.image_size)
        throw ConfigError("dataset size does not match the checkpoint's image size");

    const TaskSpec& task = task_by_name(task_name);
    AdaptConfig acfg = cfg.adapt();
    TrainResult result;
    if (acfg.steps == 0) {
        result.theta = model.theta.clone();  // zero-shot path: untouched parameters
        result.rng_state = Rng(acfg.seed).fork("training").state();
    } else {
        BatchSource src = BatchSource::few_shot(ds, task, acfg.shots, acfg.batch, acfg.seed);
        result = adapt(model, model.theta, sched, acfg, src);
    }

    Checkpoint ckpt;
    ckpt.config = ckpt_config(cfg, "control");
    for (auto& [k, v] : ckpt.config) {  // keep the model geometry of the source
        if (k.rfind("unet.", 0) == 0 || k.rfind("diff.", 0) == 0) v = in_ckpt.config_value(k);
    }
    std::sort(ckpt.config.begin(), ckpt.config.end());
    ckpt.config.emplace_back("ckpt.task", task.name);
    std::sort(ckpt.config.begin(), ckpt.config.end());
    if (result.opt.initialized()) ckpt.moments = result.opt;
    ckpt.rng_state = result.rng_state;
    ckpt.params = merge_params(model.base, result.theta);
    std::string digest = save_checkpoint(out, ckpt);
    if (!log.empty()) write_loss_log_csv(log, result.log);
    std::printf("adapted checkpoint %s (task %s, %d steps, sha256 %.16s)\n", out.c_str(),
                task.name.c_str(), acfg.steps, digest.c_str());
    return 0;
}

int cmd_sample(const CommonOpts& common, const std::string& ckpt_path, const std::string& data,
               const std::string& task_name, int n, const std::string& out, int cols) {
    RunConfig cfg = make_config(common);
    Checkpoint ckpt = load_checkpoint(checkpoint_path_check(ckpt_path));
    NoiseSchedule sched = sched_from_ckpt(ckpt);
    UNetConfig ucfg = unet_from_ckpt(ckpt);
    uint64_t sample_seed = Rng(cfg.seed()).fork("sampling").state();

    Tensor grid;
    if (ckpt.config_value("ckpt.kind") == "base") {
        ModelFn fn = base_model_fn(ucfg, ckpt.params);
        grid = sample(fn, nullptr, nullptr, sched, sched.T, n, ucfg.image_size, sample_seed);
    } else {
        if (task_name.empty()) throw ConfigError("sampling a control checkpoint needs --task");
        ControlModel model = model_from_ckpt(ckpt, ckpt_path);
        Dataset ds = load_dataset(data);
        if (ds.test_count() < n)
            throw DataError("test split smaller than requested sample count");
        const TaskSpec& task = task_by_name(task_name);
        const int s = ucfg.image_size;
        const int64_t per = static_cast<int64_t>(s) * s;
        Tensor controls = Tensor::zeros({n, 1, s, s}, DType::F32);
        for (int i = 0; i < n; ++i) {
            TaskPair pair =
                task_pair(ds.images.at(static_cast<size_t>(ds.train_count() + i)), task.kind);
            for (int64_t k = 0; k < per; ++k) controls.set(i * per + k, pair.control.get(k));
        }
        ModelFn fn = control_model_fn(model, model.theta);
        grid = sample(fn, &controls, nullptr, sched, sched.T, n, s, sample_seed);
    }
    write_ppm_grid(out, grid, cols);
    std::printf("wrote %d samples to %s\n", n, out.c_str());
    return 0;
}

struct EvalTarget {
    std::string label;
    std::string path;
};

std::vector<EvalTarget> parse_eval_targets(const std::vector<std::string>& specs) {
    std::vector<EvalTarget> out;
    for (const std::string& s : specs) {
        size_t eq = s.find('=');
        if (eq == std::string::npos)
            throw ConfigError("--ckpt expects label=path, got '" + s + "'");
        out.push_back({s.substr(0, eq), s.substr(eq + 1)});
    }
    return out;
}

int cmd_eval(const CommonOpts& common, const std::string& data,
             const std::vector<std::string>& ckpt_specs, std::vector<std::string> tasks, int n,
             const std::string& out_dir) {
    RunConfig cfg = make_config(common);
    std::vector<EvalTarget> targets = parse_eval_targets(ckpt_specs);
    if (targets.empty()) throw ConfigError("eval: at least one --ckpt label=path required");
    if (tasks.empty()) tasks = {"edge-canny"};
    Dataset ds = load_dataset(data);
    fs::create_directories(out_dir);
    PerceptualProxy proxy(cfg.seed());

    std::vector<MetricsReport> reports;
    for (const EvalTarget& tgt : targets) {
        Checkpoint ckpt = load_checkpoint(checkpoint_path_check(tgt.path));
        ControlModel model = model_from_ckpt(ckpt, tgt.path);
        NoiseSchedule sched = sched_from_ckpt(ckpt);
        if (ds.size != model.cfg.image_size)
            throw ConfigError("dataset size does not match checkpoint '" + tgt.label + "'");
        ModelFn fn = control_model_fn(model, model.theta);
        std::string ckpt_id = sha256_hex(tgt.path + ":" + ckpt.config_value("ckpt.kind"));
        for (const std::string& tname : tasks) {
            const TaskSpec& task = task_by_name(tname);
            MetricsReport r = control_fidelity(fn, task, ds, n, cfg.seed(), sched, proxy,
                                               tgt.label, cfg.hash(), ckpt_id.substr(0, 16));
            write_report_csv(out_dir + "/report_" + tgt.label + "_" + task.name + ".csv", r);
            std::printf("[%s/%s] mse %.4f ssim %.3f edge-iou %.3f perceptual %.4f\n",
                        tgt.label.c_str(), task.name.c_str(), r.mean.mse, r.mean.ssim,
                        r.mean.edge_iou, r.mean.perceptual);
            reports.push_back(std::move(r));
        }
    }
    if (targets.size() >= 2) {
        ComparisonTable tab = compare_report(reports);
        std::ofstream csv(out_dir + "/comparison.csv", std::ios::binary);
        csv << tab.to_csv();
        std::ofstream txt(out_dir + "/comparison.txt", std::ios::binary);
        txt << tab.to_text();
        std::printf("%s", tab.to_text().c_str());
    }
    return 0;
}

int cmd_ablate_freeze(const CommonOpts& common, const std::string& data,
                      const std::string& base_path, const std::string& out_dir) {
    RunConfig cfg = make_config(common);
    Dataset ds = load_data(data, cfg);
    Checkpoint base_ckpt = load_checkpoint(checkpoint_path_check(base_path));
    require_kind(base_ckpt, "base", base_path);
    UNetConfig ucfg = cfg.unet();
    NoiseSchedule sched = cfg.schedule();
    fs::create_directories(out_dir);
    PerceptualProxy proxy(cfg.seed());

    std::vector<MetricsReport> reports;
    const TaskSpec& canny = task_by_name("edge-canny");
    for (FreezePolicy policy : {FreezePolicy::Enc4Mid, FreezePolicy::Enc2to4Mid,
                                FreezePolicy::Enc1to3, FreezePolicy::None}) {
        MetaConfig mcfg = cfg.meta();
        mcfg.freeze = policy;
        ControlModel model = attach_control_branch(base_ckpt.params, ucfg, cfg.seed());
        BatchSource src(ds, meta_train_tasks(), mcfg.total_batch, cfg.seed());
        TrainResult result = meta_train(model, model.theta, sched, mcfg, src);

        std::string name = to_string(policy);
        Checkpoint ckpt;
        ckpt.config = ckpt_config(cfg, "control");
        for (auto& [k, v] : ckpt.config)
            if (k == "meta.freeze") v = name;
        std::sort(ckpt.config.begin(), ckpt.config.end());
        ckpt.rng_state = result.rng_state;
        ckpt.moments = result.opt;
        ckpt.params = merge_params(model.base, result.theta);
        save_checkpoint(out_dir + "/" + name + ".ckpt", ckpt);
        write_loss_log_csv(out_dir + "/" + name + "_loss.csv", result.log);

        ModelFn fn = control_model_fn(model, result.theta);
        MetricsReport r = control_fidelity(fn, canny, ds, cfg.get_int("eval.n"), cfg.seed(), sched,
                                           proxy, name, cfg.hash(), name);
        write_report_csv(out_dir + "/report_" + name + "_" + canny.name + ".csv", r);
        std::printf("[freeze=%s] zero-shot canny edge-iou %.3f perceptual %.4f\n", name.c_str(),
                    r.mean.edge_iou, r.mean.perceptual);
        reports.push_back(std::move(r));
    }
    ComparisonTable tab = compare_report(reports);
    std::ofstream csv(out_dir + "/freeze_ablation.csv", std::ios::binary);
    csv << tab.to_csv();
    std::ofstream txt(out_dir + "/freeze_ablation.txt", std::ios::binary);
    txt << tab.to_text();
    std::printf("%s", tab.to_text().c_str());
    return 0;
}

int cmd_ablate_connection(const CommonOpts& common, const std::string& data,
                          const std::string& base_path, const std::string& out_dir,
                          std::vector<int> blocks) {
    RunConfig cfg = make_config(common);
    Dataset ds = load_data(data, cfg);
    Checkpoint base_ckpt = load_checkpoint(checkpoint_path_check(base_path));
    require_kind(base_ckpt, "base", base_path);
    UNetConfig ucfg = cfg.unet();
    NoiseSchedule sched = cfg.schedule();
    fs::create_directories(out_dir);
    PerceptualProxy proxy(cfg.seed());

    struct Variant {
        std::string name;
        std::set<int> disconnected;
    };
    std::vector<Variant> variants{{"full", {}}};
    if (blocks.empty()) blocks = {1, 2, 3, 4};
    for (int b : blocks) variants.push_back({"nodec" + std::to_string(b), {b}});

    std::vector<MetricsReport> reports;
    for (const Variant& var : variants) {
        MetaConfig mcfg = cfg.meta();
        mcfg.track_zc_groups = true;
        ControlModel model = attach_control_branch(base_ckpt.params, ucfg, cfg.seed());
        model = set_connection_policy(model, var.disconnected);
        BatchSource src(ds, meta_train_tasks(), mcfg.total_batch, cfg.seed());
        TrainResult result = meta_train(model, model.theta, sched, mcfg, src);

        Checkpoint ckpt;
        ckpt.config = ckpt_config(cfg, "control");
        std::string dstr;
        for (int b : var.disconnected) dstr += std::to_string(b);
        if (!dstr.empty()) ckpt.config.emplace_back("ckpt.disconnected", dstr);
        std::sort(ckpt.config.begin(), ckpt.config.end());
        ckpt.rng_state = result.rng_state;
        ckpt.moments = result.opt;
        ckpt.params = merge_params(model.base, result.theta);
        save_checkpoint(out_dir + "/" + var.name + ".ckpt", ckpt);
        write_loss_log_csv(out_dir + "/" + var.name + "_loss.csv", result.log);
        write_group_norm_csv(out_dir + "/" + var.name + "_zc_norms.csv", result.zc_log);

        ModelFn fn = control_model_fn(model, result.theta);
        std::vector<SampleMetrics> all;
        for (const TaskSpec& task : meta_train_tasks()) {
            MetricsReport r = control_fidelity(fn, task, ds, cfg.get_int("eval.n"), cfg.seed(),
                                               sched, proxy, var.name, cfg.hash(), var.name);
            write_report_csv(out_dir + "/report_" + var.name + "_" + task.name + ".csv", r);
            reports.push_back(std::move(r));
        }
        std::printf("[connection=%s] trained and evaluated\n", var.name.c_str());
    }
    ComparisonTable tab = compare_report(reports);
    std::ofstream csv(out_dir + "/connection_ablation.csv", std::ios::binary);
    csv << tab.to_csv();
    std::ofstream txt(out_dir + "/connection_ablation.txt", std::ios::binary);
    txt << tab.to_text();
    std::printf("%s", tab.to_text().c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"meta-learned ControlNet adapters on a toy diffusion model"};
    app.require_subcommand(1);

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "generate the synthetic shape dataset");
    int gd_n = 512, gd_size = 32;
    uint64_t gd_seed = 0;
    std::string gd_out;
    bool gd_force = false;
    gen->add_option("--n", gd_n, "image count");
    gen->add_option("--size", gd_size, "image side (multiple of 16)");
    gen->add_option("--seed", gd_seed, "dataset seed");
    gen->add_option("--out", gd_out, "output directory")->required();
    gen->add_flag("--force", gd_force, "overwrite a non-empty output directory");

    // train-base
    auto* tb = app.add_subcommand("train-base", "pretrain the unconditional base U-Net");
    CommonOpts tb_common;
    std::string tb_data, tb_out, tb_log;
    add_common(tb, tb_common);
    tb->add_option("--data", tb_data, "dataset directory")->required();
    tb->add_option("--out", tb_out, "output checkpoint")->required();
    tb->add_option("--log", tb_log, "loss log CSV");

    // meta-train
    auto* mt = app.add_subcommand("meta-train", "meta-train the control branch (FO-MAML)");
    CommonOpts mt_common;
    std::string mt_data, mt_base, mt_out, mt_log;
    bool mt_joint = false;
    add_common(mt, mt_common);
    mt->add_option("--data", mt_data, "dataset directory")->required();
    mt->add_option("--base", mt_base, "base checkpoint")->required();
    mt->add_option("--out", mt_out, "output checkpoint")->required();
    mt->add_option("--log", mt_log, "loss log CSV");
    mt->add_flag("--joint", mt_joint, "run the joint multi-task baseline instead of FO-MAML");

    // adapt
    auto* ad = app.add_subcommand("adapt", "finetune a control checkpoint on one task");
    CommonOpts ad_common;
    std::string ad_ckpt, ad_data, ad_task, ad_out, ad_log;
    add_common(ad, ad_common);
    ad->add_option("--ckpt", ad_ckpt, "control checkpoint")->required();
    ad->add_option("--data", ad_data, "dataset directory")->required();
    ad->add_option("--task", ad_task, "task name")->required();
    ad->add_option("--out", ad_out, "output checkpoint")->required();
    ad->add_option("--log", ad_log, "loss log CSV");

    // sample
    auto* sp = app.add_subcommand("sample", "render a sample grid from a checkpoint");
    CommonOpts sp_common;
    std::string sp_ckpt, sp_data, sp_task, sp_out;
    int sp_n = 16, sp_cols = 4;
    add_common(sp, sp_common);
    sp->add_option("--ckpt", sp_ckpt, "checkpoint")->required();
    sp->add_option("--data", sp_data, "dataset directory (control maps for control checkpoints)");
    sp->add_option("--task", sp_task, "task providing the control maps");
    sp->add_option("--n", sp_n, "sample count");
    sp->add_option("--cols", sp_cols, "mosaic columns");
    sp->add_option("--out", sp_out, "output PPM")->required();

    // eval
    auto* ev = app.add_subcommand("eval", "control-fidelity metrics and comparison tables");
    CommonOpts ev_common;
    std::string ev_data, ev_outdir;
    std::vector<std::string> ev_ckpts, ev_tasks;
    int ev_n = 16;
    add_common(ev, ev_common);
    ev->add_option("--data", ev_data, "dataset directory")->required();
    ev->add_option("--ckpt", ev_ckpts, "label=path, repeatable")->required();
    ev->add_option("--task", ev_tasks, "task name, repeatable (default edge-canny)");
    ev->add_option("--n", ev_n, "test images per task");
    ev->add_option("--out-dir", ev_outdir, "report directory")->required();

    // ablate-freeze
    auto* af = app.add_subcommand("ablate-freeze", "meta-train under all four freeze policies");
    CommonOpts af_common;
    std::string af_data, af_base, af_outdir;
    add_common(af, af_common);
    af->add_option("--data", af_data, "dataset directory")->required();
    af->add_option("--base", af_base, "base checkpoint")->required();
    af->add_option("--out-dir", af_outdir, "output directory")->required();

    // ablate-connection
    auto* ac = app.add_subcommand("ablate-connection", "disconnect decoder links one at a time");
    CommonOpts ac_common;
    std::string ac_data, ac_base, ac_outdir;
    std::vector<int> ac_blocks;
    add_common(ac, ac_common);
    ac->add_option("--data", ac_data, "dataset directory")->required();
    ac->add_option("--base", ac_base, "base checkpoint")->required();
    ac->add_option("--out-dir", ac_outdir, "output directory")->required();
    ac->add_option("--block", ac_blocks, "decoder block to disconnect (repeatable; default all)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);
        app.exit(e);
        return 2;
    }

    try {
        if (gen->parsed()) return cmd_gen_data(gd_n, gd_size, gd_seed, gd_out, gd_force);
        if (tb->parsed()) return cmd_train_base(tb_common, tb_data, tb_out, tb_log);
        if (mt->parsed()) return cmd_meta_train(mt_common, mt_data, mt_base, mt_out, mt_log, mt_joint);
        if (ad->parsed()) return cmd_adapt(ad_common, ad_ckpt, ad_data, ad_task, ad_out, ad_log);
        if (sp->parsed()) return cmd_sample(sp_common, sp_ckpt, sp_data, sp_task, sp_n, sp_out, sp_cols);
        if (ev->parsed()) return cmd_eval(ev_common, ev_data, ev_ckpts, ev_tasks, ev_n, ev_outdir);
        if (af->parsed()) return cmd_ablate_freeze(af_common, af_data, af_base, af_outdir);
        if (ac->parsed())
            return cmd_ablate_connection(ac_common, ac_data, ac_base, ac_outdir, ac_blocks);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const DataError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return 3;
    } catch (const NumericError& e) {
        std::fprintf(stderr, "numeric error: %s\n", e.what());
        return 4;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}

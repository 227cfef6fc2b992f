// bp-shift: synthetic-cohort generation, ingestion, labeling, training, and
// evaluation of blood-pressure-change classifiers from paired PPG segments.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "bpshift/config.hpp"
#include "bpshift/error.hpp"
#include "bpshift/pipeline.hpp"
#include "bpshift/segment_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace bpshift;

namespace {

// Flags shared across subcommands; optionals override the config file.
struct Cli {
    std::string config_path;
    std::string out_dir = ".";
    std::optional<std::uint64_t> seed;
    std::optional<std::string> arch, input_type, bp_type, preset, synth_preset;
    std::optional<double> threshold, seconds, lr;
    std::optional<std::size_t> per_class, epochs, batch, patience, folds, patients, segments;
    std::optional<std::size_t> sweep_train_pc, sweep_test_pc;
    bool with_initial_bp = false;
    bool no_initial_bp = false;

    // Subcommand-specific paths and knobs.
    std::string in_path;
    std::string checkpoint;
    std::string name = "run";
    std::string patient_id;
    std::size_t split_k = 5;
    bool reuse_model = false;
};

void add_common(CLI::App* cmd, Cli& cli) {
    cmd->add_option("--config", cli.config_path, "JSON config file");
    cmd->add_option("--out-dir", cli.out_dir, "directory all relative paths resolve against");
    cmd->add_option("--seed", cli.seed, "master seed (overrides config and BPSHIFT_SEED)");
}

void add_model_flags(CLI::App* cmd, Cli& cli) {
    cmd->add_option("--arch", cli.arch, "mlp | cnn | resnet | encoder");
    cmd->add_option("--input-type", cli.input_type, "ppg | feat | sdppg");
    cmd->add_option("--bp-type", cli.bp_type, "sbp | dbp | mbp");
    cmd->add_option("--threshold", cli.threshold, "shift threshold (mmHg) for the active BP type");
    cmd->add_option("--seconds", cli.seconds, "input length: 3, 5, or 7");
    cmd->add_flag("--with-initial-bp", cli.with_initial_bp, "condition on the initial BP");
    cmd->add_flag("--no-initial-bp", cli.no_initial_bp, "ablate the initial-BP conditioning");
    cmd->add_option("--preset", cli.preset, "desk | paper");
    cmd->add_option("--per-class", cli.per_class, "training pairs sampled per label");
    cmd->add_option("--epochs", cli.epochs, "epoch cap");
    cmd->add_option("--batch", cli.batch, "mini-batch size");
    cmd->add_option("--lr", cli.lr, "learning rate");
    cmd->add_option("--patience", cli.patience, "early-stop patience (0 disables)");
    cmd->add_option("--folds", cli.folds, "cross-validation folds (0 = single split)");
}

void add_synth_flags(CLI::App* cmd, Cli& cli) {
    cmd->add_option("--synth-preset", cli.synth_preset, "learnable | control | oracle");
    cmd->add_option("--patients", cli.patients, "training patients to synthesize");
    cmd->add_option("--segments", cli.segments, "segments per patient");
}

RunConfig resolve_config(const Cli& cli) {
    RunConfig cfg =
        cli.config_path.empty() ? RunConfig{} : load_run_config(cli.config_path);
    apply_env_seed(cfg);
    if (cli.seed) cfg.seed = *cli.seed;
    if (cli.arch) cfg.arch = parse_arch(*cli.arch);
    if (cli.input_type) cfg.input_type = parse_input_type(*cli.input_type);
    if (cli.bp_type) cfg.bp_type = parse_bp_type(*cli.bp_type);
    if (cli.preset) cfg.preset = parse_preset(*cli.preset);
    if (cli.synth_preset) cfg.synth.preset = *cli.synth_preset;
    if (cli.patients) cfg.synth.n_patients = *cli.patients;
    if (cli.segments) cfg.synth.segments_per_patient = *cli.segments;
    if (cli.seconds) cfg.seconds = *cli.seconds;
    if (cli.per_class) cfg.per_class = *cli.per_class;
    if (cli.epochs) cfg.train.epochs = *cli.epochs;
    if (cli.batch) cfg.train.batch_size = *cli.batch;
    if (cli.lr) cfg.train.lr = *cli.lr;
    if (cli.patience) cfg.train.patience = *cli.patience;
    if (cli.folds) cfg.folds = *cli.folds;
    if (cli.with_initial_bp && cli.no_initial_bp)
        raise(Err::UsageError, "--with-initial-bp and --no-initial-bp are mutually exclusive");
    if (cli.with_initial_bp) cfg.include_initial_bp = true;
    if (cli.no_initial_bp) cfg.include_initial_bp = false;
    if (cli.threshold) {
        switch (cfg.bp_type) {
        case BpType::Sbp: cfg.thresholds.sbp = *cli.threshold; break;
        case BpType::Dbp: cfg.thresholds.dbp = *cli.threshold; break;
        case BpType::Mbp: cfg.thresholds.mbp = *cli.threshold; break;
        }
    }
    if (cli.sweep_train_pc) cfg.sweep.train_per_class = *cli.sweep_train_pc;
    if (cli.sweep_test_pc) cfg.sweep.test_per_class = *cli.sweep_test_pc;
    if (cli.reuse_model) cfg.sweep.reuse_model = true;
    // Re-validate through the JSON round trip so flag values face the same
    // checks as file values.
    return parse_run_config(run_config_json(cfg), "command line");
}

std::string resolve_path(const Cli& cli, const std::string& path) {
    if (path.empty() || fs::path(path).is_absolute()) return path;
    return (fs::path(cli.out_dir) / path).string();
}

std::string save_run(const Cli& cli, const RunConfig& cfg, TrainedRun& run,
                     std::vector<std::string>& outputs) {
    const std::string ckpt = resolve_path(cli, cli.name + ".ckpt");
    const json meta = {{"model_spec", json::parse(run.model->spec().to_json())},
                       {"config", json::parse(run_config_json(cfg))}};
    save_checkpoint(ckpt, run.model->params(), meta.dump());

    const std::string history = resolve_path(cli, cli.name + ".history.ndjson");
    write_history_ndjson(history, run.history);

    const std::string report = resolve_path(cli, cli.name + ".report.json");
    {
        std::ofstream f(report, std::ios::trunc);
        if (!f) raise(Err::IoError, "cannot open " + report);
        f << report_json(cfg, run, file_hash_hex(ckpt)) << "\n";
    }
    outputs.insert(outputs.end(), {ckpt, history, report});
    return report;
}

int cmd_synth(const Cli& cli) {
    const RunConfig cfg = resolve_config(cli);
    const DirLock lock(cli.out_dir);
    const SynthConfig sc = resolved_synth_config(cfg);
    const SynthCohort cohort = gen_cohort(sc);
    const auto series = group_by_patient(cohort.segments);

    std::vector<std::string> outputs;
    std::size_t at = 0;
    for (const auto& patient : series) {
        const std::string path = resolve_path(cli, patient.patient_id + ".ndjson");
        std::vector<SampledSignal> abp(cohort.abp.begin() + static_cast<std::ptrdiff_t>(at),
                                       cohort.abp.begin() +
                                           static_cast<std::ptrdiff_t>(at + patient.segments.size()));
        write_segments_ndjson(path, patient.segments, &abp);
        at += patient.segments.size();
        outputs.push_back(path);
    }
    write_run_manifest(cli.out_dir, "synth", run_config_json(cfg), {}, outputs);
    std::printf("wrote %zu patients (%zu segments) to %s\n", series.size(),
                cohort.segments.size(), cli.out_dir.c_str());
    return 0;
}

int cmd_ingest(const Cli& cli) {
    const RunConfig cfg = resolve_config(cli);
    const DirLock lock(cli.out_dir);
    std::vector<std::string> inputs;
    const std::string in = resolve_path(cli, cli.in_path);
    if (fs::is_directory(in)) {
        for (const auto& entry : fs::directory_iterator(in))
            if (entry.path().extension() == ".ndjson") inputs.push_back(entry.path().string());
        std::sort(inputs.begin(), inputs.end());
    } else {
        inputs.push_back(in);
    }
    if (inputs.empty()) raise(Err::UsageError, "no .ndjson inputs under " + in);

    IngestStats stats;
    std::vector<SegmentRecord> segments;
    for (const auto& path : inputs) {
        auto part = read_segments_ndjson(path, &stats);
        segments.insert(segments.end(), std::make_move_iterator(part.begin()),
                        std::make_move_iterator(part.end()));
    }
    const std::string out = resolve_path(cli, "segments.ndjson");
    write_segments_ndjson(out, segments);

    json config = json::parse(run_config_json(cfg));
    config["ingest_stats"] = {{"read", stats.read},
                              {"kept", stats.kept},
                              {"dropped", stats.dropped},
                              {"drop_reasons", stats.drop_reasons}};
    write_run_manifest(cli.out_dir, "ingest", config.dump(2), inputs, {out});
    std::printf("ingested %zu segments (%zu dropped) -> %s\n", stats.kept, stats.dropped,
                out.c_str());
    return 0;
}

int cmd_features(const Cli& cli) {
    const RunConfig cfg = resolve_config(cli);
    const DirLock lock(cli.out_dir);
    const std::string in = resolve_path(cli, cli.in_path);
    const auto segments = read_segments_ndjson(in);
    IngestStats stats;
    const auto rows = compute_feature_rows(segments, &stats);
    const std::string out = resolve_path(cli, "features.csv");
    write_features_csv(out, rows);

    json config = json::parse(run_config_json(cfg));
    config["feature_stats"] = {{"read", stats.read},
                               {"kept", stats.kept},
                               {"dropped", stats.dropped},
                               {"drop_reasons", stats.drop_reasons}};
    write_run_manifest(cli.out_dir, "features", config.dump(2), {in}, {out});
    std::printf("features for %zu segments (%zu dropped) -> %s\n", stats.kept, stats.dropped,
                out.c_str());
    return 0;
}

int cmd_label(const Cli& cli) {
    const RunConfig cfg = resolve_config(cli);
    const DirLock lock(cli.out_dir);
    const std::string in = resolve_path(cli, cli.in_path);
    const auto series = group_by_patient(read_segments_ndjson(in));
    std::vector<ChangePair> pairs;
    for (const auto& patient : series) {
        auto labeled = label_patient(patient.segments, cfg.thresholds);
        pairs.insert(pairs.end(), labeled.begin(), labeled.end());
    }
    const std::string out = resolve_path(cli, "pairs.ndjson");
    write_pairs_ndjson(out, pairs);
    write_run_manifest(cli.out_dir, "label", run_config_json(cfg), {in}, {out});
    std::printf("labeled %zu pairs from %zu patients -> %s\n", pairs.size(), series.size(),
                out.c_str());
    return 0;
}

int cmd_sample(const Cli& cli) {
    const RunConfig cfg = resolve_config(cli);
    const DirLock lock(cli.out_dir);
    const std::string in = resolve_path(cli, cli.in_path);
    const auto pairs = read_pairs_ndjson(in);
    const auto ids = balanced_sample(pairs, cfg.bp_type, cfg.per_class,
                                     derive_seed(cfg.seed, fnv1a64("sample.train")));
    std::vector<ChangePair> picked;
    picked.reserve(ids.size());
    for (const auto id : ids) picked.push_back(pairs[id]);
    const std::string out = resolve_path(cli, "sample.ndjson");
    write_pairs_ndjson(out, picked);
    write_run_manifest(cli.out_dir, "sample", run_config_json(cfg), {in}, {out});
    std::printf("sampled %zu pairs (%zu per class) -> %s\n", picked.size(), cfg.per_class,
                out.c_str());
    return 0;
}

int cmd_split(const Cli& cli) {
    const RunConfig cfg = resolve_config(cli);
    const DirLock lock(cli.out_dir);
    const std::string in = resolve_path(cli, cli.in_path);
    const auto pairs = read_pairs_ndjson(in);
    std::vector<std::size_t> ids(pairs.size());
    for (std::size_t k = 0; k < ids.size(); ++k) ids[k] = k;

    const DatasetSplit split =
        split_train_val(ids, 0.8, derive_seed(cfg.seed, fnv1a64("split.train-val")));
    const auto folds = kfold(ids, cli.split_k, cfg.seed);

    const std::string out = resolve_path(cli, "split.json");
    {
        std::ofstream f(out, std::ios::trunc);
        if (!f) raise(Err::IoError, "cannot open " + out);
        f << json{{"kind", "split"}, {"train", split.train}, {"val", split.val},
                  {"folds", folds}}
                 .dump(2)
          << "\n";
    }
    write_run_manifest(cli.out_dir, "split", run_config_json(cfg), {in}, {out});
    std::printf("split %zu ids into %zu train / %zu val and %zu folds -> %s\n", ids.size(),
                split.train.size(), split.val.size(), folds.size(), out.c_str());
    return 0;
}

int cmd_train(const Cli& cli) {
    const RunConfig cfg = resolve_config(cli);
    const DirLock lock(cli.out_dir);
    const CohortBundle cohorts = make_cohorts(cfg);
    TrainedRun run = run_training(cfg, cohorts);

    std::vector<std::string> outputs;
    save_run(cli, cfg, run, outputs);
    write_run_manifest(cli.out_dir, "train", run_config_json(cfg), {}, outputs);
    std::printf("best epoch %zu: val %.4f, test1 %.4f, test2 %.4f\n", run.history.best_epoch,
                run.history.best_val_accuracy, run.test1.accuracy, run.test2.accuracy);
    return 0;
}

int cmd_evaluate(const Cli& cli) {
    const DirLock lock(cli.out_dir);
    const std::string ckpt = resolve_path(cli, cli.checkpoint);
    const json meta = json::parse(read_checkpoint_meta(ckpt));
    RunConfig cfg = parse_run_config(meta.at("config").dump(), ckpt);
    apply_env_seed(cfg);
    if (cli.seed) cfg.seed = *cli.seed;

    auto model = build_model(ModelSpec::from_json(meta.at("model_spec").dump()));
    load_checkpoint(ckpt, model->params());

    const CohortBundle cohorts = make_cohorts(cfg);
    const AssemblyOptions assembly = assembly_options(cfg);

    std::vector<ChangePair> pairs;
    for (const auto& series : cohorts.test1) {
        auto labeled = label_patient(series.segments, cfg.thresholds);
        pairs.insert(pairs.end(), labeled.begin(), labeled.end());
    }
    const auto ids = balanced_sample(pairs, cfg.bp_type, cfg.sweep.test_per_class,
                                     derive_seed(cfg.seed, fnv1a64("sample.test1")));
    std::vector<ChangePair> picked;
    for (const auto id : ids) picked.push_back(pairs[id]);
    const AssemblyResult test1 = assemble_pairs(cohorts.test1, picked, assembly);

    std::set<std::string> excluded;
    for (const auto& series : cohorts.train) excluded.insert(series.patient_id);
    for (const auto& series : cohorts.test1) excluded.insert(series.patient_id);
    const AssemblyResult test2 = build_test_II(cohorts.test2, cfg.thresholds, assembly, excluded);

    TrainedRun run;
    run.model = std::move(model);
    run.test1_examples = test1.examples.size();
    run.test2_examples = test2.examples.size();
    if (!test1.examples.empty()) run.test1 = evaluate(*run.model, test1.examples);
    if (!test2.examples.empty()) run.test2 = evaluate(*run.model, test2.examples);

    const std::string out = resolve_path(cli, cli.name + ".eval.json");
    {
        std::ofstream f(out, std::ios::trunc);
        if (!f) raise(Err::IoError, "cannot open " + out);
        f << report_json(cfg, run, file_hash_hex(ckpt)) << "\n";
    }
    write_run_manifest(cli.out_dir, "evaluate", run_config_json(cfg), {ckpt}, {out});
    std::printf("test1 %.4f, test2 %.4f -> %s\n", run.test1.accuracy, run.test2.accuracy,
                out.c_str());
    return 0;
}

TrainFn make_train_fn(const RunConfig& base) {
    return [base](const std::vector<Example>& train, const std::vector<Example>& val,
                  double threshold) {
        RunConfig cfg = base;
        switch (cfg.bp_type) {
        case BpType::Sbp: cfg.thresholds.sbp = threshold; break;
        case BpType::Dbp: cfg.thresholds.dbp = threshold; break;
        case BpType::Mbp: cfg.thresholds.mbp = threshold; break;
        }
        const std::size_t channels = train.front().x.dim(0);
        const std::size_t length = train.front().x.dim(1);
        ModelSpec spec;
        spec.kind = cfg.arch;
        spec.input_channels = channels;
        spec.input_length = length;
        spec.aux_dim = train.front().aux.size();
        spec.include_initial_bp = cfg.include_initial_bp;
        spec.conv_widths = cfg.model.conv_widths;
        spec.kernel_sizes = cfg.model.kernel_sizes;
        spec.mlp_width = cfg.model.mlp_width;
        spec.dropout = cfg.model.dropout;
        spec.init_seed = derive_seed(cfg.seed, fnv1a64("model-init") ^
                                                   static_cast<std::uint64_t>(
                                                       std::llround(threshold)));
        auto model = build_model(spec);
        TrainConfig tc = resolved_train_config(cfg);
        tc.seed = derive_seed(tc.seed, static_cast<std::uint64_t>(std::llround(threshold)));
        train_model(*model, train, val, tc);
        return model;
    };
}

int cmd_sweep(const Cli& cli) {
    const RunConfig cfg = resolve_config(cli);
    const DirLock lock(cli.out_dir);
    const CohortBundle cohorts = make_cohorts(cfg);

    SweepOptions opt;
    opt.assembly = assembly_options(cfg);
    opt.train_per_class = cfg.sweep.train_per_class;
    opt.test_per_class = cfg.sweep.test_per_class;
    opt.seed = cfg.seed;
    opt.reuse_model = cfg.sweep.reuse_model;

    const auto points = threshold_sweep(cohorts.train, cohorts.test2, opt, make_train_fn(cfg));

    json rows = json::array();
    const std::string csv_path = resolve_path(cli, "sweep.csv");
    {
        std::ofstream csv(csv_path, std::ios::trunc);
        if (!csv) raise(Err::IoError, "cannot open " + csv_path);
        csv << "threshold,skipped,stable_fraction,always_stable_accuracy,"
               "test1_accuracy,test1_macro_f1,test2_accuracy,test2_macro_f1\n";
        char buf[256];
        for (const auto& p : points) {
            std::snprintf(buf, sizeof buf, "%.10g,%d,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g",
                          p.threshold, p.skipped ? 1 : 0, p.stable_fraction,
                          p.always_stable_accuracy, p.test1.accuracy, p.test1.macro_f1,
                          p.test2.accuracy, p.test2.macro_f1);
            csv << buf << "\n";
            json row = {{"threshold", p.threshold},
                        {"skipped", p.skipped},
                        {"stable_fraction", p.stable_fraction},
                        {"always_stable_accuracy", p.always_stable_accuracy},
                        {"test1_examples", p.test1_examples},
                        {"test2_examples", p.test2_examples}};
            if (p.skipped) row["skip_reason"] = p.skip_reason;
            if (!p.skipped) {
                row["test1"] = json::parse(eval_report_json(p.test1));
                row["test2"] = json::parse(eval_report_json(p.test2));
            }
            rows.push_back(std::move(row));
        }
    }
    const std::string out = resolve_path(cli, "sweep.json");
    {
        std::ofstream f(out, std::ios::trunc);
        if (!f) raise(Err::IoError, "cannot open " + out);
        f << json{{"kind", "sweep"}, {"points", rows}}.dump(2) << "\n";
    }
    write_run_manifest(cli.out_dir, "sweep", run_config_json(cfg), {}, {out, csv_path});
    std::printf("swept %zu thresholds -> %s\n", points.size(), out.c_str());
    return 0;
}

int cmd_ablate(const Cli& cli) {
    RunConfig cfg = resolve_config(cli);
    const DirLock lock(cli.out_dir);
    const CohortBundle cohorts = make_cohorts(cfg);

    cfg.include_initial_bp = true;
    const TrainedRun with_bp = run_training(cfg, cohorts);
    cfg.include_initial_bp = false;
    const TrainedRun without_bp = run_training(cfg, cohorts);

    cfg.include_initial_bp = true;
    const json j = {{"kind", "ablation"},
                    {"config", json::parse(run_config_json(cfg))},
                    {"with_initial_bp",
                     {{"test1", json::parse(eval_report_json(with_bp.test1))},
                      {"test2", json::parse(eval_report_json(with_bp.test2))}}},
                    {"without_initial_bp",
                     {{"test1", json::parse(eval_report_json(without_bp.test1))},
                      {"test2", json::parse(eval_report_json(without_bp.test2))}}},
                    {"test2_accuracy_delta",
                     with_bp.test2.accuracy - without_bp.test2.accuracy}};
    const std::string out = resolve_path(cli, "ablation.json");
    {
        std::ofstream f(out, std::ios::trunc);
        if (!f) raise(Err::IoError, "cannot open " + out);
        f << j.dump(2) << "\n";
    }
    write_run_manifest(cli.out_dir, "ablate", run_config_json(cfg), {}, {out});
    std::printf("test2 accuracy with %.4f vs without %.4f -> %s\n", with_bp.test2.accuracy,
                without_bp.test2.accuracy, out.c_str());
    return 0;
}

int cmd_matrix(const Cli& cli) {
    const RunConfig cfg = resolve_config(cli);
    const DirLock lock(cli.out_dir);
    const CohortBundle cohorts = make_cohorts(cfg);
    const auto cells = run_matrix(cfg, cohorts);

    std::vector<std::string> outputs;
    for (const auto& cell : cells) {
        const std::string path = resolve_path(cli, cell.name + ".report.json");
        std::ofstream f(path, std::ios::trunc);
        if (!f) raise(Err::IoError, "cannot open " + path);
        f << json{{"kind", "matrix-cell"},
                  {"name", cell.name},
                  {"config", json::parse(run_config_json(cell.cfg))},
                  {"val_accuracy", cell.val_accuracy},
                  {"test1", json::parse(eval_report_json(cell.test1))},
                  {"test2", json::parse(eval_report_json(cell.test2))}}
                 .dump(2)
          << "\n";
        outputs.push_back(path);
    }
    const std::string out = resolve_path(cli, "matrix.json");
    {
        std::ofstream f(out, std::ios::trunc);
        if (!f) raise(Err::IoError, "cannot open " + out);
        f << matrix_json(cells) << "\n";
    }
    outputs.push_back(out);
    write_run_manifest(cli.out_dir, "matrix", run_config_json(cfg), {}, outputs);
    std::printf("ran %zu cells -> %s\n", cells.size(), out.c_str());
    return 0;
}

int cmd_bands(const Cli& cli) {
    const DirLock lock(cli.out_dir);
    const std::string ckpt = resolve_path(cli, cli.checkpoint);
    const json meta = json::parse(read_checkpoint_meta(ckpt));
    RunConfig cfg = parse_run_config(meta.at("config").dump(), ckpt);
    apply_env_seed(cfg);
    if (cli.seed) cfg.seed = *cli.seed;

    auto model = build_model(ModelSpec::from_json(meta.at("model_spec").dump()));
    load_checkpoint(ckpt, model->params());

    const CohortBundle cohorts = make_cohorts(cfg);
    const PatientSeries* patient = nullptr;
    if (cli.patient_id.empty()) {
        patient = &cohorts.test2.front();
    } else {
        for (const auto& bundle : {&cohorts.test2, &cohorts.test1, &cohorts.train})
            for (const auto& series : *bundle)
                if (series.patient_id == cli.patient_id) patient = &series;
        if (!patient) raise(Err::UsageError, "no patient named " + cli.patient_id);
    }

    const AssemblyOptions assembly = assembly_options(cfg);
    Model* m = model.get();
    const auto bands = label_band_export(
        *patient, cfg.thresholds.of(cfg.bp_type), assembly, [m](const Example& ex) {
            RunCtx ctx;
            return predict(m->forward(ex.x, ex.aux, ctx));
        });
    const std::string out = resolve_path(cli, "bands.csv");
    write_band_csv(out, bands);

    json config = json::parse(run_config_json(cfg));
    config["bands"] = {{"patient", patient->patient_id},
                       {"initial_bp", bands.initial_bp},
                       {"rows", bands.rows.size()},
                       {"dropped", bands.dropped}};
    write_run_manifest(cli.out_dir, "bands", config.dump(2), {ckpt}, {out});
    std::printf("exported %zu rows for %s -> %s\n", bands.rows.size(),
                patient->patient_id.c_str(), out.c_str());
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"blood-pressure shift detection from paired PPG segments"};
    app.require_subcommand(1);

    Cli cli;
    auto* synth = app.add_subcommand("synth", "generate a synthetic cohort as NDJSON files");
    add_common(synth, cli);
    add_synth_flags(synth, cli);

    auto* ingest = app.add_subcommand("ingest", "validate and summarize segment NDJSON");
    add_common(ingest, cli);
    ingest->add_option("--in", cli.in_path, "segment file or directory")->required();

    auto* features = app.add_subcommand("features", "per-segment curvature features CSV");
    add_common(features, cli);
    features->add_option("--in", cli.in_path, "segments.ndjson")->required();

    auto* label = app.add_subcommand("label", "pairwise shift labels");
    add_common(label, cli);
    add_model_flags(label, cli);
    label->add_option("--in", cli.in_path, "segments.ndjson")->required();

    auto* sample = app.add_subcommand("sample", "balanced pair sampling");
    add_common(sample, cli);
    add_model_flags(sample, cli);
    sample->add_option("--in", cli.in_path, "pairs.ndjson")->required();

    auto* split = app.add_subcommand("split", "train/val split and k folds");
    add_common(split, cli);
    split->add_option("--in", cli.in_path, "pairs.ndjson")->required();
    split->add_option("--folds", cli.split_k, "fold count (default 5)");

    auto* train = app.add_subcommand("train", "train one configuration end to end");
    add_common(train, cli);
    add_model_flags(train, cli);
    add_synth_flags(train, cli);
    train->add_option("--name", cli.name, "artifact basename (default 'run')");

    auto* evaluate = app.add_subcommand("evaluate", "re-evaluate a checkpoint");
    add_common(evaluate, cli);
    evaluate->add_option("--checkpoint", cli.checkpoint, "model checkpoint")->required();
    evaluate->add_option("--name", cli.name, "artifact basename");

    auto* sweep = app.add_subcommand("sweep", "metrics across the threshold grid");
    add_common(sweep, cli);
    add_model_flags(sweep, cli);
    add_synth_flags(sweep, cli);
    sweep->add_option("--train-per-class", cli.sweep_train_pc, "training pool per label");
    sweep->add_option("--test-per-class", cli.sweep_test_pc, "held-out pool per label");
    sweep->add_flag("--reuse-model", cli.reuse_model,
                    "train once and reuse across thresholds");

    auto* ablate = app.add_subcommand("ablate", "initial-BP conditioning on/off pair");
    add_common(ablate, cli);
    add_model_flags(ablate, cli);
    add_synth_flags(ablate, cli);

    auto* matrix = app.add_subcommand("matrix", "architecture x input x BP-type grid");
    add_common(matrix, cli);
    add_model_flags(matrix, cli);
    add_synth_flags(matrix, cli);

    auto* bands = app.add_subcommand("bands", "per-lag label bands for one patient");
    add_common(bands, cli);
    bands->add_option("--checkpoint", cli.checkpoint, "model checkpoint")->required();
    bands->add_option("--patient", cli.patient_id, "patient id (default: first held-out)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (synth->parsed()) return cmd_synth(cli);
        if (ingest->parsed()) return cmd_ingest(cli);
        if (features->parsed()) return cmd_features(cli);
        if (label->parsed()) return cmd_label(cli);
        if (sample->parsed()) return cmd_sample(cli);
        if (split->parsed()) return cmd_split(cli);
        if (train->parsed()) return cmd_train(cli);
        if (evaluate->parsed()) return cmd_evaluate(cli);
        if (sweep->parsed()) return cmd_sweep(cli);
        if (ablate->parsed()) return cmd_ablate(cli);
        if (matrix->parsed()) return cmd_matrix(cli);
        if (bands->parsed()) return cmd_bands(cli);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        switch (e.kind()) {
        case Err::ConfigError:
        case Err::UsageError:
        case Err::InvalidConfig:
        case Err::InvalidSpec: return 2;
        default: return 1;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

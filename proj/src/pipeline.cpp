#include "bpshift/pipeline.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <filesystem>
#include <fstream>
#include <set>

#include <json.hpp>

#include "bpshift/error.hpp"
#include "bpshift/rng.hpp"
#include "bpshift/segment_io.hpp"

namespace bpshift {

using nlohmann::json;

CohortBundle partition_cohort(const SynthCohort& cohort, std::size_t train_patients,
                              std::size_t test1_patients, std::size_t test2_patients) {
    auto series = group_by_patient(cohort.segments);
    if (series.size() != train_patients + test1_patients + test2_patients)
        raise(Err::InvalidConfig,
              "cohort has " + std::to_string(series.size()) + " patients, expected " +
                  std::to_string(train_patients + test1_patients + test2_patients));
    CohortBundle out;
    auto it = series.begin();
    out.train.assign(it, it + static_cast<std::ptrdiff_t>(train_patients));
    it += static_cast<std::ptrdiff_t>(train_patients);
    out.test1.assign(it, it + static_cast<std::ptrdiff_t>(test1_patients));
    it += static_cast<std::ptrdiff_t>(test1_patients);
    out.test2.assign(it, it + static_cast<std::ptrdiff_t>(test2_patients));
    return out;
}

CohortBundle make_cohorts(const RunConfig& cfg) {
    SynthConfig sc = resolved_synth_config(cfg);
    const std::size_t train_n = sc.n_patients;
    const std::size_t test1_n = std::max<std::size_t>(4, (train_n + 3) / 4);
    const std::size_t test2_n = std::max<std::size_t>(4, (train_n + 4) / 5);
    sc.n_patients = train_n + test1_n + test2_n;
    return partition_cohort(gen_cohort(sc), train_n, test1_n, test2_n);
}

namespace {

std::vector<ChangePair> label_cohort(const std::vector<PatientSeries>& cohort,
                                     const Thresholds& thresholds) {
    std::vector<ChangePair> pairs;
    for (const auto& series : cohort) {
        auto labeled = label_patient(series.segments, thresholds);
        pairs.insert(pairs.end(), labeled.begin(), labeled.end());
    }
    return pairs;
}

std::vector<ChangePair> pick(const std::vector<ChangePair>& pairs,
                             const std::vector<std::size_t>& ids) {
    std::vector<ChangePair> out;
    out.reserve(ids.size());
    for (const auto id : ids) out.push_back(pairs[id]);
    return out;
}

double cohort_fs(const CohortBundle& cohorts) {
    if (cohorts.train.empty() || cohorts.train.front().segments.empty())
        raise(Err::InvalidConfig, "training cohort is empty");
    return cohorts.train.front().segments.front().ppg.fs;
}

} // namespace

TrainedRun run_training(const RunConfig& cfg, const CohortBundle& cohorts) {
    const AssemblyOptions assembly = assembly_options(cfg);

    const auto train_pairs = label_cohort(cohorts.train, cfg.thresholds);
    const auto train_ids = balanced_sample(train_pairs, cfg.bp_type, cfg.per_class,
                                           derive_seed(cfg.seed, fnv1a64("sample.train")));
    const AssemblyResult train_asm =
        assemble_pairs(cohorts.train, pick(train_pairs, train_ids), assembly);
    if (train_asm.examples.empty()) raise(Err::TooFewExamples, "every training example dropped");

    std::vector<std::size_t> example_ids(train_asm.examples.size());
    for (std::size_t k = 0; k < example_ids.size(); ++k) example_ids[k] = k;
    const DatasetSplit split =
        split_train_val(example_ids, 0.8, derive_seed(cfg.seed, fnv1a64("split.train-val")));
    std::vector<Example> train_ex, val_ex;
    train_ex.reserve(split.train.size());
    val_ex.reserve(split.val.size());
    for (const auto id : split.train) train_ex.push_back(train_asm.examples[id]);
    for (const auto id : split.val) val_ex.push_back(train_asm.examples[id]);

    const ModelSpec spec = resolved_model_spec(cfg, cohort_fs(cohorts));
    TrainedRun run;
    run.model = build_model(spec);
    run.train_examples = train_ex.size();
    run.val_examples = val_ex.size();
    run.dropped_examples = train_asm.dropped;

    const TrainConfig tc = resolved_train_config(cfg);
    run.history = train_model(*run.model, train_ex, val_ex, tc);
    run.val = evaluate(*run.model, val_ex);

    if (!cohorts.test1.empty()) {
        const auto test1_pairs = label_cohort(cohorts.test1, cfg.thresholds);
        const auto test1_ids =
            balanced_sample(test1_pairs, cfg.bp_type, cfg.sweep.test_per_class,
                            derive_seed(cfg.seed, fnv1a64("sample.test1")));
        const AssemblyResult test1_asm =
            assemble_pairs(cohorts.test1, pick(test1_pairs, test1_ids), assembly);
        run.test1_examples = test1_asm.examples.size();
        run.dropped_examples += test1_asm.dropped;
        if (!test1_asm.examples.empty()) run.test1 = evaluate(*run.model, test1_asm.examples);
    }

    if (!cohorts.test2.empty()) {
        std::set<std::string> excluded;
        for (const auto& series : cohorts.train) excluded.insert(series.patient_id);
        for (const auto& series : cohorts.test1) excluded.insert(series.patient_id);
        const AssemblyResult test2_asm =
            build_test_II(cohorts.test2, cfg.thresholds, assembly, excluded);
        run.test2_examples = test2_asm.examples.size();
        run.dropped_examples += test2_asm.dropped;
        if (!test2_asm.examples.empty()) run.test2 = evaluate(*run.model, test2_asm.examples);
    }
    return run;
}

std::vector<MatrixCell> run_matrix(const RunConfig& base, const CohortBundle& cohorts) {
    std::vector<MatrixCell> cells;
    const auto add = [&](const std::string& name, const RunConfig& cfg) {
        const TrainedRun run = run_training(cfg, cohorts);
        MatrixCell cell;
        cell.name = name;
        cell.cfg = cfg;
        cell.val_accuracy = run.history.best_val_accuracy;
        cell.test1 = run.test1;
        cell.test2 = run.test2;
        cells.push_back(std::move(cell));
    };

    for (const ArchKind arch :
         {ArchKind::Mlp, ArchKind::Cnn, ArchKind::ResNet, ArchKind::Encoder})
        for (const BpType bp : {BpType::Sbp, BpType::Dbp, BpType::Mbp}) {
            RunConfig cfg = base;
            cfg.arch = arch;
            cfg.bp_type = bp;
            add(std::string("matrix-") + arch_name(arch) + "-" +
                    input_type_name(base.input_type) + "-" + bp_type_name(bp),
                cfg);
        }

    for (const double seconds : {3.0, 5.0, 7.0}) {
        RunConfig cfg = base;
        cfg.seconds = seconds;
        add("length-" + std::to_string(static_cast<int>(seconds)) + "s", cfg);
    }

    for (const bool with_bp : {true, false}) {
        RunConfig cfg = base;
        cfg.include_initial_bp = with_bp;
        add(with_bp ? "ablation-with-initial-bp" : "ablation-without-initial-bp", cfg);
    }
    return cells;
}

namespace {

json eval_report_obj(const EvalReport& r) {
    json confusion = json::array();
    for (int row = 0; row < 3; ++row)
        confusion.push_back({r.cm.counts[row][0], r.cm.counts[row][1], r.cm.counts[row][2]});
    json per_class;
    for (int c = 0; c < 3; ++c) {
        const ClassMetrics& m = r.per_class[c];
        per_class[label_name(static_cast<ChangeLabel>(c))] = {{"precision", m.precision},
                                                              {"recall", m.recall},
                                                              {"f1", m.f1},
                                                              {"accuracy", m.accuracy}};
    }
    return json{{"accuracy", r.accuracy},
                {"balanced_accuracy", r.balanced_accuracy},
                {"macro_f1", r.macro_f1},
                {"confusion", confusion},
                {"per_class", per_class}};
}

} // namespace

std::string eval_report_json(const EvalReport& report) {
    return eval_report_obj(report).dump(2);
}

std::string report_json(const RunConfig& cfg, const TrainedRun& run,
                        const std::string& checkpoint_hash) {
    json j = {{"kind", "run-report"},
              {"config", json::parse(run_config_json(cfg))},
              {"best_epoch", run.history.best_epoch},
              {"epochs_run", run.history.history.size()},
              {"counts",
               {{"train", run.train_examples},
                {"val", run.val_examples},
                {"test1", run.test1_examples},
                {"test2", run.test2_examples},
                {"dropped", run.dropped_examples}}},
              {"metrics",
               {{"val", eval_report_obj(run.val)},
                {"test1", eval_report_obj(run.test1)},
                {"test2", eval_report_obj(run.test2)}}}};
    if (!checkpoint_hash.empty()) j["checkpoint_hash"] = checkpoint_hash;
    return j.dump(2);
}

std::string matrix_json(const std::vector<MatrixCell>& cells) {
    json rows = json::array();
    for (const auto& cell : cells)
        rows.push_back({{"name", cell.name},
                        {"arch", arch_name(cell.cfg.arch)},
                        {"input_type", input_type_name(cell.cfg.input_type)},
                        {"bp_type", bp_type_name(cell.cfg.bp_type)},
                        {"seconds", cell.cfg.seconds},
                        {"include_initial_bp", cell.cfg.include_initial_bp},
                        {"val_accuracy", cell.val_accuracy},
                        {"test1", eval_report_obj(cell.test1)},
                        {"test2", eval_report_obj(cell.test2)}});
    return json{{"kind", "matrix"}, {"cells", rows}}.dump(2);
}

DirLock::DirLock(const std::string& dir) {
    std::filesystem::create_directories(dir);
    path_ = dir + "/.bpshift.lock";
    const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd < 0) {
        if (errno == EEXIST)
            raise(Err::UsageError,
                  "another run is writing to " + dir + " (remove " + path_ + " if stale)");
        raise(Err::IoError, "cannot create " + path_);
    }
    ::close(fd);
}

DirLock::~DirLock() {
    std::error_code ec;
    std::filesystem::remove(path_, ec);
}

void write_run_manifest(const std::string& dir, const std::string& subcommand,
                        const std::string& config_json, const std::vector<std::string>& inputs,
                        const std::vector<std::string>& outputs) {
    const auto entry_list = [](const std::vector<std::string>& paths) {
        json list = json::array();
        for (const auto& p : paths)
            list.push_back({{"path", std::filesystem::path(p).filename().string()},
                            {"hash", file_hash_hex(p)}});
        return list;
    };
    const json manifest = {{"kind", "manifest"},
                           {"subcommand", subcommand},
                           {"config", json::parse(config_json)},
                           {"inputs", entry_list(inputs)},
                           {"outputs", entry_list(outputs)}};

    const std::string path = dir + "/" + subcommand + ".manifest.json";
    const std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::trunc);
        if (!f) raise(Err::IoError, "cannot open " + tmp + " for writing");
        f << manifest.dump(2) << "\n";
        if (!f) raise(Err::IoError, "short write to " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

} // namespace bpshift

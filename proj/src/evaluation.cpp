#include "bpshift/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "bpshift/error.hpp"
#include "bpshift/rng.hpp"

namespace bpshift {

std::uint64_t ConfusionMatrix::total() const {
    std::uint64_t n = 0;
    for (const auto& row : counts)
        for (const auto v : row) n += v;
    return n;
}

std::uint64_t ConfusionMatrix::trace() const {
    return counts[0][0] + counts[1][1] + counts[2][2];
}

std::uint64_t ConfusionMatrix::row_sum(int c) const {
    return counts[c][0] + counts[c][1] + counts[c][2];
}

std::uint64_t ConfusionMatrix::col_sum(int c) const {
    return counts[0][c] + counts[1][c] + counts[2][c];
}

BinaryCounts one_vs_rest(const ConfusionMatrix& cm, int c) {
    BinaryCounts b;
    b.tp = cm.counts[c][c];
    b.fn = cm.row_sum(c) - b.tp;
    b.fp = cm.col_sum(c) - b.tp;
    b.tn = cm.total() - b.tp - b.fn - b.fp;
    return b;
}

namespace {

double ratio(std::uint64_t num, std::uint64_t den) {
    return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

} // namespace

EvalReport metrics(const ConfusionMatrix& cm) {
    const std::uint64_t total = cm.total();
    if (total == 0) raise(Err::EmptyEvaluation, "confusion matrix is empty");

    EvalReport r;
    r.cm = cm;
    r.accuracy = ratio(cm.trace(), total);
    double f1_sum = 0.0, recall_sum = 0.0;
    for (int c = 0; c < 3; ++c) {
        const BinaryCounts b = one_vs_rest(cm, c);
        ClassMetrics& m = r.per_class[c];
        m.precision = ratio(b.tp, b.tp + b.fp);
        m.recall = ratio(b.tp, b.tp + b.fn);
        m.f1 = (m.precision + m.recall) > 0.0
                   ? 2.0 * m.precision * m.recall / (m.precision + m.recall)
                   : 0.0;
        m.accuracy = ratio(b.tp + b.tn, total);
        f1_sum += m.f1;
        recall_sum += m.recall;
    }
    r.macro_f1 = f1_sum / 3.0;
    r.balanced_accuracy = recall_sum / 3.0;
    return r;
}

double micro_precision(const ConfusionMatrix& cm) {
    std::uint64_t tp = 0, fp = 0;
    for (int c = 0; c < 3; ++c) {
        const BinaryCounts b = one_vs_rest(cm, c);
        tp += b.tp;
        fp += b.fp;
    }
    return ratio(tp, tp + fp);
}

double micro_recall(const ConfusionMatrix& cm) {
    std::uint64_t tp = 0, fn = 0;
    for (int c = 0; c < 3; ++c) {
        const BinaryCounts b = one_vs_rest(cm, c);
        tp += b.tp;
        fn += b.fn;
    }
    return ratio(tp, tp + fn);
}

EvalReport evaluate(Model& model, const std::vector<Example>& examples) {
    if (examples.empty()) raise(Err::EmptyEvaluation, "no examples to evaluate");
    RunCtx ctx; // eval mode: no dropout, no rng
    ConfusionMatrix cm;
    for (const auto& ex : examples) {
        const Tensor logits = model.forward(ex.x, ex.aux, ctx);
        cm.add(ex.y, predict(logits));
    }
    return metrics(cm);
}

namespace {

Thresholds with_active(BpType t, double theta) {
    Thresholds th;
    switch (t) {
    case BpType::Sbp: th.sbp = theta; break;
    case BpType::Dbp: th.dbp = theta; break;
    case BpType::Mbp: th.mbp = theta; break;
    }
    return th;
}

} // namespace

std::vector<SweepPoint> threshold_sweep(const std::vector<PatientSeries>& train_cohort,
                                        const std::vector<PatientSeries>& test2_cohort,
                                        const SweepOptions& opt, const TrainFn& train_fn) {
    std::vector<ChangePair> pairs;
    for (const auto& series : train_cohort) {
        auto labeled = label_patient(series.segments, Thresholds{});
        pairs.insert(pairs.end(), labeled.begin(), labeled.end());
    }
    std::set<std::string> train_ids;
    for (const auto& series : train_cohort) train_ids.insert(series.patient_id);

    std::vector<SweepPoint> points;
    std::unique_ptr<Model> model;
    for (const double theta : threshold_grid(opt.assembly.bp_type)) {
        SweepPoint point;
        point.threshold = theta;
        const Thresholds th = with_active(opt.assembly.bp_type, theta);
        relabel(pairs, th);

        // All-pairs cohort labels and the always-Stable baseline.
        AssemblyOptions assembly = opt.assembly;
        const AssemblyResult all = build_test_II(test2_cohort, th, assembly, train_ids);
        point.test2_examples = all.examples.size();
        std::size_t stable = 0;
        ConfusionMatrix baseline;
        for (const auto& ex : all.examples) {
            if (ex.y == ChangeLabel::Stable) ++stable;
            baseline.add(ex.y, ChangeLabel::Stable);
        }
        point.stable_fraction = all.examples.empty()
                                    ? 0.0
                                    : static_cast<double>(stable) /
                                          static_cast<double>(all.examples.size());
        if (!all.examples.empty()) point.always_stable_accuracy = metrics(baseline).accuracy;

        const std::uint64_t theta_seed =
            derive_seed(opt.seed, fnv1a64("sweep") ^ static_cast<std::uint64_t>(std::llround(theta)));
        const std::size_t per_class = opt.train_per_class + opt.test_per_class;
        std::vector<std::size_t> ids;
        try {
            ids = balanced_sample(pairs, opt.assembly.bp_type, per_class, theta_seed);
        } catch (const ClassCountError& e) {
            point.skipped = true;
            point.skip_reason = e.what();
            points.push_back(std::move(point));
            continue;
        }

        // The sample comes back in class blocks, so slicing each block keeps
        // both pools exactly uniform.
        std::vector<ChangePair> train_pool, test_pool;
        for (int c = 0; c < 3; ++c) {
            const std::size_t base = static_cast<std::size_t>(c) * per_class;
            for (std::size_t k = 0; k < opt.train_per_class; ++k)
                train_pool.push_back(pairs[ids[base + k]]);
            for (std::size_t k = opt.train_per_class; k < per_class; ++k)
                test_pool.push_back(pairs[ids[base + k]]);
        }

        const AssemblyResult train_asm = assemble_pairs(train_cohort, train_pool, assembly);
        const AssemblyResult test_asm = assemble_pairs(train_cohort, test_pool, assembly);
        point.test1_examples = test_asm.examples.size();

        if (!model || !opt.reuse_model) {
            std::vector<std::size_t> example_ids(train_asm.examples.size());
            for (std::size_t k = 0; k < example_ids.size(); ++k) example_ids[k] = k;
            const DatasetSplit split =
                split_train_val(example_ids, opt.train_fraction, theta_seed);
            std::vector<Example> train_ex, val_ex;
            for (const auto id : split.train) train_ex.push_back(train_asm.examples[id]);
            for (const auto id : split.val) val_ex.push_back(train_asm.examples[id]);
            model = train_fn(train_ex, val_ex, theta);
        }

        if (!test_asm.examples.empty()) point.test1 = evaluate(*model, test_asm.examples);
        if (!all.examples.empty()) point.test2 = evaluate(*model, all.examples);
        points.push_back(std::move(point));
    }
    return points;
}

BandExport label_band_export(const PatientSeries& patient, double threshold,
                             const AssemblyOptions& assembly,
                             const std::function<ChangeLabel(const Example&)>& predict) {
    const Thresholds th = with_active(assembly.bp_type, threshold);
    auto pairs = label_patient(patient.segments, th); // raises TooFewSegments

    BandExport out;
    out.initial_bp = 0.0;
    for (const auto& seg : patient.segments)
        if (seg.index == 1) {
            switch (assembly.bp_type) {
            case BpType::Sbp: out.initial_bp = seg.sbp; break;
            case BpType::Dbp: out.initial_bp = seg.dbp; break;
            case BpType::Mbp: out.initial_bp = seg.mbp; break;
            }
        }

    for (const auto& pair : pairs) {
        if (pair.i != 1) continue;
        BandRow row;
        row.j = pair.j;
        row.t_seconds = 10.0 * pair.j;
        row.truth = pair.label_of(assembly.bp_type);
        const SegmentRecord* later = nullptr;
        for (const auto& seg : patient.segments)
            if (seg.index == pair.i + pair.j) later = &seg;
        if (!later)
            raise(Err::IndexOutOfRange, "missing segment " + std::to_string(pair.i + pair.j));
        switch (assembly.bp_type) {
        case BpType::Sbp: row.reference_bp = later->sbp; break;
        case BpType::Dbp: row.reference_bp = later->dbp; break;
        case BpType::Mbp: row.reference_bp = later->mbp; break;
        }
        try {
            const SegmentRecord* first = nullptr;
            for (const auto& seg : patient.segments)
                if (seg.index == 1) first = &seg;
            const Example ex = assemble_example(pair, *first, *later, assembly);
            row.predicted = predict(ex);
        } catch (const Error&) {
            ++out.dropped;
            continue;
        }
        out.rows.push_back(row);
    }
    return out;
}

void write_band_csv(const std::string& path, const BandExport& bands) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::trunc);
        if (!f) raise(Err::IoError, "cannot open " + tmp + " for writing");
        f << "t_seconds,reference_bp,true_label,predicted_label\n";
        char buf[64];
        for (const auto& row : bands.rows) {
            std::snprintf(buf, sizeof buf, "%.10g,%.10g", row.t_seconds, row.reference_bp);
            f << buf << ',' << label_name(row.truth) << ',' << label_name(row.predicted) << '\n';
        }
        if (!f) raise(Err::IoError, "short write to " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

} // namespace bpshift

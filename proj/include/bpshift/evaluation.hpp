#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "bpshift/dataset.hpp"
#include "bpshift/models.hpp"

namespace bpshift {

// Rows are true labels, columns predicted, both in class order Spike,
// Stable, Dip.
struct ConfusionMatrix {
    std::array<std::array<std::uint64_t, 3>, 3> counts{};

    void add(ChangeLabel truth, ChangeLabel pred) {
        ++counts[static_cast<int>(truth)][static_cast<int>(pred)];
    }
    std::uint64_t total() const;
    std::uint64_t trace() const;
    std::uint64_t row_sum(int c) const;
    std::uint64_t col_sum(int c) const;
};

struct BinaryCounts {
    std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;
};

BinaryCounts one_vs_rest(const ConfusionMatrix& cm, int c);

struct ClassMetrics {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    double accuracy = 0.0; // one-vs-rest (tp + tn) / total, diagnostic only
};

struct EvalReport {
    ConfusionMatrix cm;
    double accuracy = 0.0;          // trace / total
    double balanced_accuracy = 0.0; // mean one-vs-rest recall
    std::array<ClassMetrics, 3> per_class{};
    double macro_f1 = 0.0;
};

// All 0/0 ratios collapse to 0 so macro scores stay defined when a class is
// absent from both truth and prediction.
EvalReport metrics(const ConfusionMatrix& cm);

// Micro-averaged one-vs-rest precision and recall. For single-label
// multiclass counts both reduce to trace/total, which is the overall
// accuracy we report; the with-true-negatives averages do not, so they are
// deliberately not offered.
double micro_precision(const ConfusionMatrix& cm);
double micro_recall(const ConfusionMatrix& cm);

// Eval-mode forwards over the whole set; pure counting, deterministic, and
// invariant to example order.
EvalReport evaluate(Model& model, const std::vector<Example>& examples);

// Trains on the supplied train/val split; the threshold is passed so the
// callback can vary its seed per sweep point.
using TrainFn = std::function<std::unique_ptr<Model>(
    const std::vector<Example>& train, const std::vector<Example>& val, double threshold)>;

struct SweepOptions {
    AssemblyOptions assembly;
    std::size_t train_per_class = 400; // training pool size per label
    std::size_t test_per_class = 100;  // uniformly sampled held-out pool
    double train_fraction = 0.8;
    std::uint64_t seed = 1;
    bool reuse_model = false; // train once at the first feasible threshold
};

struct SweepPoint {
    double threshold = 0.0;
    bool skipped = false; // a class ran out of candidates at this threshold
    std::string skip_reason;
    std::size_t test1_examples = 0;
    std::size_t test2_examples = 0;
    double stable_fraction = 0.0;        // label recount on the full-pair cohort
    double always_stable_accuracy = 0.0; // trivial baseline on the same cohort
    EvalReport test1;
    EvalReport test2;
};

// Walks the threshold grid of the active BP type. Per threshold: relabel,
// draw a fresh uniform sample (train pool + held-out test), train via
// train_fn (or reuse the first model), and evaluate on both the uniform
// held-out set and the all-pairs cohort.
std::vector<SweepPoint> threshold_sweep(const std::vector<PatientSeries>& train_cohort,
                                        const std::vector<PatientSeries>& test2_cohort,
                                        const SweepOptions& opt, const TrainFn& train_fn);

struct BandRow {
    int j = 0;
    double t_seconds = 0.0;   // j * 10 s after the initial segment
    double reference_bp = 0.0; // BP of segment 1 + j, active type
    ChangeLabel truth = ChangeLabel::Stable;
    ChangeLabel predicted = ChangeLabel::Stable;
};

struct BandExport {
    std::vector<BandRow> rows;
    std::size_t dropped = 0;
    double initial_bp = 0.0; // BP of segment 1, active type
};

// Label band over one patient's series with the initial segment fixed at
// i = 1: one row per lag j with the reference BP and both labels.
BandExport label_band_export(const PatientSeries& patient, double threshold,
                             const AssemblyOptions& assembly,
                             const std::function<ChangeLabel(const Example&)>& predict);

void write_band_csv(const std::string& path, const BandExport& bands);

} // namespace bpshift

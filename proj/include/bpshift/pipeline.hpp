#pragma once

#include <memory>
#include <string>
#include <vector>

#include "bpshift/config.hpp"
#include "bpshift/dataset.hpp"
#include "bpshift/evaluation.hpp"
#include "bpshift/models.hpp"
#include "bpshift/synth.hpp"
#include "bpshift/train.hpp"

namespace bpshift {

// Patient-disjoint cohorts: the configured patient count trains, a quarter
// more feeds the uniform held-out test, and a fifth more the all-pairs
// test, all drawn from one generator run so ordinals stay stable.
struct CohortBundle {
    std::vector<PatientSeries> train;
    std::vector<PatientSeries> test1;
    std::vector<PatientSeries> test2;
};

CohortBundle make_cohorts(const RunConfig& cfg);
CohortBundle partition_cohort(const SynthCohort& cohort, std::size_t train_patients,
                              std::size_t test1_patients, std::size_t test2_patients);

struct TrainedRun {
    std::unique_ptr<Model> model;
    TrainResult history;
    EvalReport val;   // best-epoch validation split
    EvalReport test1; // uniform held-out cohort
    EvalReport test2; // all-pairs cohort
    std::size_t train_examples = 0;
    std::size_t val_examples = 0;
    std::size_t test1_examples = 0;
    std::size_t test2_examples = 0;
    std::size_t dropped_examples = 0;
};

// Label, balance-sample, assemble, split, train, and evaluate one
// configuration end to end. Deterministic in cfg.seed.
TrainedRun run_training(const RunConfig& cfg, const CohortBundle& cohorts);

struct MatrixCell {
    std::string name;
    RunConfig cfg;
    double val_accuracy = 0.0;
    EvalReport test1;
    EvalReport test2;
};

// The full report grid: every architecture crossed with every BP type at
// the base input type, the {3,5,7} s input-length study, and the
// initial-BP ablation pair.
std::vector<MatrixCell> run_matrix(const RunConfig& base, const CohortBundle& cohorts);

// Report JSON for one trained configuration (metrics, config, seed, and
// the checkpoint's content hash when given).
std::string report_json(const RunConfig& cfg, const TrainedRun& run,
                        const std::string& checkpoint_hash);
std::string matrix_json(const std::vector<MatrixCell>& cells);

// Serialize an EvalReport (confusion matrix plus derived metrics).
std::string eval_report_json(const EvalReport& report);

// Exclusive advisory lock: creates <dir>/.bpshift.lock or raises UsageError
// if a writer already holds it; the destructor removes the file.
class DirLock {
public:
    explicit DirLock(const std::string& dir);
    ~DirLock();
    DirLock(const DirLock&) = delete;
    DirLock& operator=(const DirLock&) = delete;

private:
    std::string path_;
};

// Provenance manifest beside the outputs: config, seed, and content hashes
// of every input and output, so runs chain back to their sources.
void write_run_manifest(const std::string& dir, const std::string& subcommand,
                        const std::string& config_json, const std::vector<std::string>& inputs,
                        const std::vector<std::string>& outputs);

} // namespace bpshift

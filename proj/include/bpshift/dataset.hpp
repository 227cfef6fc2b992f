#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "bpshift/labeling.hpp"
#include "bpshift/tensor.hpp"

namespace bpshift {

// Model input layouts. Waveform channel counts: PpgWaveform 2,
// WaveformFeature 2 (plus 10 aux scalars), PpgSdppgWaveform 4.
enum class InputType { PpgWaveform, WaveformFeature, PpgSdppgWaveform };

const char* input_type_name(InputType t); // "ppg" | "feat" | "sdppg"
InputType parse_input_type(const std::string& s);
std::size_t input_channels(InputType t);

struct AssemblyOptions {
    InputType input_type = InputType::PpgWaveform;
    BpType bp_type = BpType::Mbp;    // selects both the label and the initial-BP scalar
    double seconds = 7.0;            // one of {3, 5, 7}
    bool include_initial_bp = false; // appends BP_i / 200 as the last aux entry
};

struct ExampleMeta {
    std::string patient_id;
    int i = 0; // 1-based initial segment index
    int j = 0; // lag; the later segment is i + j
};

// One model input. x is [channels, L] with every channel min-max normalized
// to [0,1] and L == seconds * fs exactly. aux carries the per-segment
// curvature features (initial segment first, later segment second) and/or
// the scaled initial BP.
struct Example {
    Tensor x;
    std::vector<double> aux;
    ChangeLabel y = ChangeLabel::Stable;
    ExampleMeta meta;
};

struct PatientSeries {
    std::string patient_id;
    std::vector<SegmentRecord> segments; // sorted by 1-based index
};

// Group a flat segment stream by patient id, keeping first-appearance order
// of patients; each group is sorted by segment index.
std::vector<PatientSeries> group_by_patient(std::vector<SegmentRecord> segments);

// Build one example from a labeled pair. PPG channels are the min-max
// normalized cycle-aligned truncations; sdPPG channels re-normalize the
// second derivative of the band-passed normalized truncation, so all
// channels share one time support. Feature auxes are computed on the full
// 10-second segments (more beats, steadier averages than the truncation).
Example assemble_example(const ChangePair& pair, const SegmentRecord& seg_i,
                         const SegmentRecord& seg_j, const AssemblyOptions& opt);

struct AssemblyResult {
    std::vector<Example> examples;
    std::size_t attempted = 0;
    std::size_t dropped = 0;
    std::map<std::string, std::size_t> drop_reasons; // error name -> count
};

// Assemble the given pairs, looking segments up by patient id and index.
// Signal and fiducial failures drop the example and are tallied.
AssemblyResult assemble_pairs(const std::vector<PatientSeries>& patients,
                              const std::vector<ChangePair>& pairs, const AssemblyOptions& opt);

// Exactly per_class pair indices per label, drawn uniformly without
// replacement. Output is deterministic given the seed and ordered Spike
// block, Stable block, Dip block.
std::vector<std::size_t> balanced_sample(const std::vector<ChangePair>& pairs, BpType bp_type,
                                         std::size_t per_class, std::uint64_t seed);

struct DatasetSplit {
    std::vector<std::size_t> train;
    std::vector<std::size_t> val;
};

// Deterministic split by example id; train gets round(fraction * n) ids,
// clamped so both sides are non-empty. Outputs are sorted ascending.
DatasetSplit split_train_val(const std::vector<std::size_t>& ids, double fraction,
                             std::uint64_t seed);

// Disjoint folds covering ids, sizes differing by at most one, each sorted
// ascending. Deterministic given the seed.
std::vector<std::vector<std::size_t>> kfold(const std::vector<std::size_t>& ids, std::size_t k,
                                            std::uint64_t seed);

// Every enumerable pair of every patient, natural label imbalance kept.
// Any patient also present in excluded_patients (the train/val cohort)
// refuses the construction with InvalidConfig.
AssemblyResult build_test_II(const std::vector<PatientSeries>& patients,
                             const Thresholds& thresholds, const AssemblyOptions& opt,
                             const std::set<std::string>& excluded_patients);

// Sidecar layout: 8-byte magic "BPSHIFT1", then u32 n_examples, u32
// channels, u32 length (little-endian), then one f32 channel-major block
// per example. The manifest is NDJSON: a header object carrying layout,
// options, and drop tallies, then one descriptor line per example.
void write_examples(const std::string& manifest_path, const std::string& sidecar_path,
                    const std::vector<Example>& examples, const AssemblyOptions& opt,
                    const AssemblyResult* stats = nullptr);

struct LoadedDataset {
    std::vector<Example> examples;
    AssemblyOptions options;
    std::size_t attempted = 0;
    std::size_t dropped = 0;
};

LoadedDataset read_examples(const std::string& manifest_path, const std::string& sidecar_path);

} // namespace bpshift

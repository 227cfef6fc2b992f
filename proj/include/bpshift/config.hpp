#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>

#include "bpshift/dataset.hpp"
#include "bpshift/models.hpp"
#include "bpshift/synth.hpp"
#include "bpshift/train.hpp"

namespace bpshift {

// Training presets. "paper" carries the published hyperparameters (1024
// epochs, batch 500, learning rate 1e-3, or 1e-4 for the attention model);
// "desk" is sized for a single CPU (200 epoch cap, early stopping).
enum class Preset { Desk, Paper };

const char* preset_name(Preset p);
Preset parse_preset(const std::string& s);

struct TrainOverrides {
    std::optional<std::size_t> epochs;
    std::optional<std::size_t> batch_size;
    std::optional<double> lr;
    std::optional<std::size_t> patience;
};

struct ModelOverrides {
    std::array<std::size_t, 3> conv_widths{24, 24, 24};
    std::array<std::size_t, 3> kernel_sizes{9, 5, 3};
    std::size_t mlp_width = 500;
    double dropout = 0.2;
};

struct SynthOverrides {
    std::string preset = "learnable"; // learnable | control | oracle
    std::optional<std::size_t> n_patients;
    std::optional<std::size_t> segments_per_patient;
};

struct SweepOverrides {
    std::size_t train_per_class = 400;
    std::size_t test_per_class = 100;
    bool reuse_model = false;
};

struct RunConfig {
    std::uint64_t seed = 1;
    ArchKind arch = ArchKind::Encoder;
    InputType input_type = InputType::PpgSdppgWaveform;
    BpType bp_type = BpType::Mbp;
    Thresholds thresholds; // 30 / 15 / 20 mmHg
    double seconds = 7.0;
    bool include_initial_bp = true;
    Preset preset = Preset::Desk;
    std::size_t per_class = 2000;
    std::size_t folds = 0; // 0 trains on a single 80/20 split
    TrainOverrides train;
    ModelOverrides model;
    SynthOverrides synth;
    SweepOverrides sweep;
};

// Published learning rate per architecture: 1e-4 for the attention encoder,
// 1e-3 elsewhere.
double default_lr(ArchKind arch);

// Preset training parameters with any overrides applied.
TrainConfig resolved_train_config(const RunConfig& cfg);

// Synthetic-cohort configuration for the named preset with the run seed and
// size overrides applied.
SynthConfig resolved_synth_config(const RunConfig& cfg);

// Model shape for the run: channels from the input type, length from
// seconds * fs, aux width from features and the initial-BP flag.
ModelSpec resolved_model_spec(const RunConfig& cfg, double fs);

AssemblyOptions assembly_options(const RunConfig& cfg);

// Parse and validate a config JSON object (strict: unknown keys are
// ConfigErrors, thresholds must lie inside their sweep grids, seconds must
// be 3, 5, or 7, seeds must be non-negative). An empty text yields the
// documented defaults.
RunConfig parse_run_config(const std::string& text, const std::string& where);
RunConfig load_run_config(const std::string& path);

// BPSHIFT_SEED, when set, overrides the config seed; malformed values are
// ConfigErrors.
void apply_env_seed(RunConfig& cfg);

std::string run_config_json(const RunConfig& cfg);

} // namespace bpshift

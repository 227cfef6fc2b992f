#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "bpshift/fiducials.hpp"
#include "bpshift/rng.hpp"
#include "bpshift/signal.hpp"

namespace bpshift {

// Synthetic paired PPG/ABP cohort. Each PPG beat is three Gaussian lobes
// (systolic, dicrotic, diastolic) overlap-added along a jittered beat grid;
// the paired ABP beat is a raised cosine between dbp and sbp. Higher MBP
// makes the dicrotic lobe taller and earlier (and nudges heart rate up), so
// the BP-change class is readable from morphology; zeroing the coupling
// gains removes that signal and yields the negative-control cohort.
struct SynthConfig {
    std::size_t n_patients = 20;
    std::size_t segments_per_patient = 12;
    double fs = 125.0;
    double segment_seconds = 10.0;
    std::uint64_t seed = 1;

    // Heart rate band (bpm): per-patient base plus BP coupling plus
    // per-segment variability, per-beat period jitter (s). hr_sd keeps the
    // rate an unreliable BP cue, so classifiers must read morphology.
    double hr_lo = 48.0, hr_hi = 66.0;
    double hr_bp_gain = 1.0;
    double hr_sd = 3.0;
    double period_jitter = 0.012;

    // Pulse lobes: amplitude (arb. units), center (s after beat onset),
    // width (s). Widths are broad enough that the 0.5-8 Hz pass ahead of the
    // fiducial chain barely dents the curvature extrema.
    double sys_amp = 1.0, sys_mu = 0.20, sys_sigma = 0.095;
    double dic_amp = 0.30, dic_mu = 0.45, dic_sigma = 0.105;
    double dia_amp = 0.18, dia_mu = 0.71, dia_sigma = 0.155;
    double lobe_jitter = 0.02; // relative per-beat amplitude noise

    // Morphology-BP coupling per normalized MBP excursion (mbp-95)/50.
    double dic_amp_gain = 0.22;
    double dic_mu_gain = 0.05;

    // Measurement imperfections on PPG (ABP stays clean).
    double noise_sd = 0.004;
    double wander_amp = 0.02;

    // BP trajectory: bounded random walk plus held spike/dip events.
    double sbp_start_lo = 100.0, sbp_start_hi = 140.0;
    double dbp_start_lo = 60.0, dbp_start_hi = 85.0;
    double walk_sd_sbp = 4.0, walk_sd_dbp = 2.2;
    double event_rate = 0.18; // per segment transition
    double event_sbp_lo = 18.0, event_sbp_hi = 48.0;
    double event_dbp_frac = 0.55; // DBP shift as a fraction of the SBP shift
    double event_hold = 0.6;      // chance an active event persists
    double sbp_min = 85.0, sbp_max = 195.0;
    double dbp_min = 45.0, dbp_max = 115.0;

    void validate() const; // InvalidConfig outside physiologic bounds

    static SynthConfig learnable(); // 50 x 30, coupling on
    static SynthConfig control();   // coupling gains zeroed
    static SynthConfig oracle();    // low noise, for signal-level oracles
};

struct BeatTruth {
    std::size_t onset = 0; // composite-minimum sample index
    std::size_t peak = 0;  // systolic-maximum sample index
    double onset_time = 0.0;
    double period = 0.0;
    double dic_amp = 0.0; // dicrotic lobe parameters actually used
    double dic_mu = 0.0;
    FeatureVector features; // from the analytic sdPPG, normalized units
    bool features_valid = false;
};

struct SegmentTruth {
    double sbp = 0.0, dbp = 0.0, mbp = 0.0;
    double clean_min = 0.0, clean_max = 0.0; // noise-free composite range
    bool in_event = false;
    std::vector<BeatTruth> beats; // beats fully inside the segment
};

struct PatientEvent {
    std::size_t start_index = 0; // 1-based segment index
    std::size_t duration = 0;    // segments
    double sbp_shift = 0.0, dbp_shift = 0.0;
};

struct PatientTruth {
    std::string patient_id;
    std::vector<SegmentTruth> segments;
    std::vector<PatientEvent> events;
};

struct SynthCohort {
    std::vector<SegmentRecord> segments; // patient-major, index order
    std::vector<SampledSignal> abp;      // parallel to segments
    std::vector<PatientTruth> truth;     // one per patient
};

// Patient rng seed is config.seed ^ ordinal, so patients are independent and
// cohort assembly order never matters.
SynthCohort gen_cohort(const SynthConfig& cfg);

struct BeatPair {
    std::vector<double> ppg; // one period, raw units
    std::vector<double> abp; // mmHg, raised cosine
    double period = 0.0;
    double dic_amp = 0.0, dic_mu = 0.0;
};

// One isolated beat of the pulse model at an explicit BP state.
BeatPair gen_beat(const SynthConfig& cfg, double hr_bpm, double sbp, double dbp, Rng& rng);

// One patient synthesized around an explicit per-segment (sbp, dbp) series;
// the cohort path layers the random walk and events on top of this.
std::vector<SegmentRecord> gen_patient_segments(const SynthConfig& cfg,
                                                const std::string& patient_id,
                                                const std::vector<std::pair<double, double>>& bp,
                                                std::uint64_t seed, PatientTruth* truth = nullptr,
                                                std::vector<SampledSignal>* abp_out = nullptr);

} // namespace bpshift

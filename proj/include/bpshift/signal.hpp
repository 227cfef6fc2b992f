#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace bpshift {

struct SampledSignal {
    std::vector<double> samples;
    double fs = 0.0; // Hz

    std::size_t size() const { return samples.size(); }
    double duration() const { return fs > 0.0 ? static_cast<double>(samples.size()) / fs : 0.0; }
};

// One 10-second reading after ingestion. `index` is the 1-based position of
// the segment within its patient's retained series; BP values are summaries
// of the paired ABP, mbp always recomputed as (sbp + 2*dbp) / 3.
struct SegmentRecord {
    std::string patient_id;
    int index = 0;
    SampledSignal ppg;
    double sbp = 0.0;
    double dbp = 0.0;
    double mbp = 0.0;
};

// Feet are pulse onsets (local minima); peaks are systolic maxima. peaks[k]
// lies strictly between feet[k] and feet[k+1]; one trailing peak after the
// last foot may be present when the signal ends past a final systole.
struct BeatMarkers {
    std::vector<std::size_t> feet;
    std::vector<std::size_t> peaks;

    std::size_t complete_beats() const { return feet.size() < 2 ? 0 : feet.size() - 1; }
};

struct BpSummary {
    double sbp = 0.0;
    double dbp = 0.0;
    double mbp = 0.0;
};

inline double mean_bp(double sbp, double dbp) { return (sbp + 2.0 * dbp) / 3.0; }

// Zero-phase (forward-backward) Butterworth filters with odd-reflection
// padding. `order` is the single-pass order; the magnitude response is
// squared by the second pass.
SampledSignal lowpass_filtfilt(const SampledSignal& s, double cutoff_hz, int order = 4);
SampledSignal highpass_filtfilt(const SampledSignal& s, double cutoff_hz, int order = 2);
SampledSignal bandpass_filtfilt(const SampledSignal& s, double low_hz, double high_hz);

// The 0.5-8 Hz pass used ahead of all derivative and fiducial work.
SampledSignal fiducial_bandpass(const SampledSignal& s);

// Pulse detection on an 8 Hz low-passed copy of the signal. Systolic peaks
// are local maxima above a rolling mean plus a global-deviation margin; a
// refractory window of 60/max_hr seconds keeps the taller peak, and gaps
// longer than 60/min_hr are patched with the tallest interior maximum. Feet
// are the deepest samples between consecutive peaks (plus one leading foot).
// Segments whose foot spacing still violates the heart-rate band are
// unusable (NoBeatsFound).
BeatMarkers detect_beats(const SampledSignal& s, double min_hr = 30.0, double max_hr = 200.0);

// Per-beat extrema over complete foot-to-foot cycles of an ABP segment:
// sbp = mean of beat maxima, dbp = mean of foot values, mbp = (sbp+2*dbp)/3.
BpSummary segment_bp_summary(const SampledSignal& abp);

// Second-order central difference scaled by fs^2; endpoint values replicate
// their nearest interior neighbour. Needs at least 5 samples.
SampledSignal second_derivative(const SampledSignal& s);

// Affine map onto [0, 1]. ConstantSignal when max == min.
SampledSignal min_max_normalize(const SampledSignal& s);

// Cycle-aligned truncation: drop everything before the first detected foot,
// then keep exactly target_seconds * fs samples. target_seconds must be one
// of {3, 5, 7}.
SampledSignal truncate_to_cycles(const SampledSignal& ppg, double target_seconds);

} // namespace bpshift

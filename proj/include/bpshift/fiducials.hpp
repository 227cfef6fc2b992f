#pragma once

#include <cstddef>
#include <vector>

#include "bpshift/signal.hpp"

namespace bpshift {

// Amplitudes and times of the five systolic-phase waves of the second
// derivative of a single PPG beat. Times are seconds from the beat onset
// (the start of the supplied slice). For physiological beats a > 0 and
// b < 0 on the band-passed sdPPG.
struct SdppgFiducials {
    double a = 0.0, b = 0.0, c = 0.0, d = 0.0, e = 0.0;
    double t_a = 0.0, t_b = 0.0, t_c = 0.0, t_d = 0.0, t_e = 0.0;
};

struct FeatureVector {
    double b_over_a = 0.0;
    double slope_bc = 0.0; // (b - c) / (T_b - T_c)
    double slope_bd = 0.0; // (b - d) / (T_b - T_d)
    double agi = 0.0;      // (b - c - d - e) / a
    double agi_mod = 0.0;  // (b - c - d) / a

    static constexpr std::size_t count = 5;
    double operator[](std::size_t k) const {
        const double v[count] = {b_over_a, slope_bc, slope_bd, agi, agi_mod};
        return v[k];
    }
};

// Wave search on one foot-to-foot sdPPG slice: a is the first prominent
// maximum inside the first 30% of the beat with positive value, then b, c,
// d, e alternate as the next minimum / maximum after their predecessor.
// Sub-prominence ripples (< 2% of the slice range) are ignored. A missing
// wave raises FiducialError carrying which one.
SdppgFiducials locate_fiducials(const SampledSignal& sdppg_beat);

// Table of per-beat curvature features; DegenerateTiming when T_b equals
// T_c or T_d.
FeatureVector extract_features(const SdppgFiducials& f);

struct BeatFiducialResult {
    std::size_t foot = 0; // onset sample within the segment
    SdppgFiducials fid;
    FeatureVector features;
};

struct SegmentFiducials {
    std::vector<BeatFiducialResult> beats; // valid beats only
    std::size_t attempted = 0;
};

// Full segment pipeline: normalize, 0.5-8 Hz band-pass, second derivative,
// then per-beat wave search over complete foot-to-foot cycles.
SegmentFiducials locate_segment_fiducials(const SampledSignal& ppg);

// Arithmetic mean of the per-beat features over valid beats; NoValidBeats
// when every beat fails.
FeatureVector segment_features(const SampledSignal& ppg);

} // namespace bpshift

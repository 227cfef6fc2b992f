#include "bpshift/fiducials.hpp"

#include <algorithm>
#include <cmath>

#include "bpshift/error.hpp"

namespace bpshift {

namespace {

struct Extremum {
    std::size_t idx;
    bool is_max;
};

// Interior extrema in order; plateaus collapse onto their first sample.
std::vector<Extremum> scan_extrema(const std::vector<double>& x) {
    std::vector<Extremum> out;
    const std::size_t n = x.size();
    std::size_t last_distinct = 0;
    for (std::size_t i = 1; i + 1 < n; ++i) {
        if (x[i] == x[last_distinct]) continue;
        double prev = x[last_distinct];
        // look ahead past any plateau for the next distinct value
        std::size_t j = i + 1;
        while (j < n && x[j] == x[i]) ++j;
        if (j == n) break;
        if (x[i] > prev && x[i] > x[j]) out.push_back({i, true});
        else if (x[i] < prev && x[i] < x[j]) out.push_back({i, false});
        last_distinct = i;
    }
    return out;
}

// Remove adjacent min/max pairs whose span is below the prominence floor,
// smallest ripple first. Alternation survives pair removal.
void prune_ripples(std::vector<Extremum>& ext, const std::vector<double>& x, double floor) {
    while (ext.size() >= 2) {
        std::size_t best = 0;
        double best_span = -1.0;
        for (std::size_t k = 0; k + 1 < ext.size(); ++k) {
            const double span = std::fabs(x[ext[k].idx] - x[ext[k + 1].idx]);
            if (best_span < 0.0 || span < best_span) {
                best_span = span;
                best = k;
            }
        }
        if (best_span >= floor) break;
        ext.erase(ext.begin() + static_cast<std::ptrdiff_t>(best),
                  ext.begin() + static_cast<std::ptrdiff_t>(best) + 2);
    }
}

} // namespace

SdppgFiducials locate_fiducials(const SampledSignal& sdppg_beat) {
    if (sdppg_beat.fs <= 0.0) raise(Err::InvalidConfig, "sampling rate must be positive");
    const std::vector<double>& x = sdppg_beat.samples;
    if (x.size() < 5) raise(Err::SignalTooShort, "beat slice shorter than 5 samples");

    const auto [mn, mx] = std::minmax_element(x.begin(), x.end());
    std::vector<Extremum> ext = scan_extrema(x);
    prune_ripples(ext, x, 0.02 * (*mx - *mn));

    const double limit_a = 0.30 * static_cast<double>(x.size());

    std::size_t pos = 0;
    auto next_wave = [&](bool want_max, bool positive_only, double idx_limit, Wave which) {
        for (; pos < ext.size(); ++pos) {
            if (idx_limit > 0.0 && static_cast<double>(ext[pos].idx) >= idx_limit)
                throw FiducialError(which, "not found before the search window closed");
            if (ext[pos].is_max != want_max) continue;
            if (positive_only && x[ext[pos].idx] <= 0.0) continue;
            return ext[pos++].idx;
        }
        throw FiducialError(which, "no qualifying extremum left in the beat");
    };

    SdppgFiducials f;
    const double dt = 1.0 / sdppg_beat.fs;
    const std::size_t ia = next_wave(true, true, limit_a, Wave::A);
    const std::size_t ib = next_wave(false, false, 0.0, Wave::B);
    const std::size_t ic = next_wave(true, false, 0.0, Wave::C);
    const std::size_t id = next_wave(false, false, 0.0, Wave::D);
    const std::size_t ie = next_wave(true, false, 0.0, Wave::E);

    f.a = x[ia];
    f.b = x[ib];
    f.c = x[ic];
    f.d = x[id];
    f.e = x[ie];
    f.t_a = static_cast<double>(ia) * dt;
    f.t_b = static_cast<double>(ib) * dt;
    f.t_c = static_cast<double>(ic) * dt;
    f.t_d = static_cast<double>(id) * dt;
    f.t_e = static_cast<double>(ie) * dt;
    return f;
}

FeatureVector extract_features(const SdppgFiducials& f) {
    if (f.t_b == f.t_c || f.t_b == f.t_d)
        raise(Err::DegenerateTiming, "coincident wave times leave a slope undefined");
    if (f.a == 0.0) raise(Err::DegenerateTiming, "zero a-wave amplitude");
    FeatureVector v;
    v.b_over_a = f.b / f.a;
    v.slope_bc = (f.b - f.c) / (f.t_b - f.t_c);
    v.slope_bd = (f.b - f.d) / (f.t_b - f.t_d);
    v.agi = (f.b - f.c - f.d - f.e) / f.a;
    v.agi_mod = (f.b - f.c - f.d) / f.a;
    return v;
}

SegmentFiducials locate_segment_fiducials(const SampledSignal& ppg) {
    const SampledSignal norm = min_max_normalize(ppg);
    const SampledSignal filt = fiducial_bandpass(norm);
    const BeatMarkers marks = detect_beats(norm);
    const SampledSignal sd = second_derivative(filt);

    SegmentFiducials out;
    for (std::size_t k = 0; k + 1 < marks.feet.size(); ++k) {
        const std::size_t lo = marks.feet[k];
        const std::size_t hi = marks.feet[k + 1];
        if (hi - lo < 5) continue;
        ++out.attempted;
        SampledSignal beat{
            std::vector<double>(sd.samples.begin() + static_cast<std::ptrdiff_t>(lo),
                                sd.samples.begin() + static_cast<std::ptrdiff_t>(hi)),
            sd.fs};
        try {
            BeatFiducialResult r;
            r.foot = lo;
            r.fid = locate_fiducials(beat);
            r.features = extract_features(r.fid);
            out.beats.push_back(std::move(r));
        } catch (const Error&) {
            // invalid beat, skip; segment-level failure handled by caller
        }
    }
    return out;
}

FeatureVector segment_features(const SampledSignal& ppg) {
    const SegmentFiducials seg = locate_segment_fiducials(ppg);
    if (seg.beats.empty()) raise(Err::NoValidBeats, "no beat yielded a full fiducial set");
    FeatureVector mean;
    for (const BeatFiducialResult& r : seg.beats) {
        mean.b_over_a += r.features.b_over_a;
        mean.slope_bc += r.features.slope_bc;
        mean.slope_bd += r.features.slope_bd;
        mean.agi += r.features.agi;
        mean.agi_mod += r.features.agi_mod;
    }
    const auto n = static_cast<double>(seg.beats.size());
    mean.b_over_a /= n;
    mean.slope_bc /= n;
    mean.slope_bd /= n;
    mean.agi /= n;
    mean.agi_mod /= n;
    return mean;
}

} // namespace bpshift

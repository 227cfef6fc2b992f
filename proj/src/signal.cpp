#include "bpshift/signal.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "bpshift/error.hpp"

namespace bpshift {

const char* err_name(Err kind) {
    switch (kind) {
        case Err::NoBeatsFound: return "NoBeatsFound";
        case Err::SignalTooShort: return "SignalTooShort";
        case Err::ConstantSignal: return "ConstantSignal";
        case Err::InsufficientLength: return "InsufficientLength";
        case Err::FiducialNotFound: return "FiducialNotFound";
        case Err::DegenerateTiming: return "DegenerateTiming";
        case Err::NoValidBeats: return "NoValidBeats";
        case Err::IndexOutOfRange: return "IndexOutOfRange";
        case Err::TooFewSegments: return "TooFewSegments";
        case Err::InsufficientClassCount: return "InsufficientClassCount";
        case Err::TooFewExamples: return "TooFewExamples";
        case Err::ShapeMismatch: return "ShapeMismatch";
        case Err::InvalidSpec: return "InvalidSpec";
        case Err::MissingInitialBp: return "MissingInitialBp";
        case Err::DivergedLoss: return "DivergedLoss";
        case Err::EmptyEvaluation: return "EmptyEvaluation";
        case Err::InvalidConfig: return "InvalidConfig";
        case Err::ConfigError: return "ConfigError";
        case Err::UsageError: return "UsageError";
        case Err::IoError: return "IoError";
    }
    return "UnknownError";
}

const char* wave_name(Wave w) {
    switch (w) {
        case Wave::A: return "a";
        case Wave::B: return "b";
        case Wave::C: return "c";
        case Wave::D: return "d";
        case Wave::E: return "e";
    }
    return "?";
}

namespace {

constexpr double kPi = 3.14159265358979323846264338327950288;

// RBJ cookbook biquad, direct form II transposed.
struct Biquad {
    double b0 = 1.0, b1 = 0.0, b2 = 0.0, a1 = 0.0, a2 = 0.0;

    void apply(std::vector<double>& x) const {
        double z1 = 0.0, z2 = 0.0;
        for (double& v : x) {
            const double in = v;
            const double out = b0 * in + z1;
            z1 = b1 * in - a1 * out + z2;
            z2 = b2 * in - a2 * out;
            v = out;
        }
    }
};

Biquad design_lowpass(double fs, double cutoff_hz, double q) {
    const double w0 = 2.0 * kPi * cutoff_hz / fs;
    const double cw = std::cos(w0);
    const double alpha = std::sin(w0) / (2.0 * q);
    const double a0 = 1.0 + alpha;
    Biquad bq;
    bq.b0 = (1.0 - cw) / 2.0 / a0;
    bq.b1 = (1.0 - cw) / a0;
    bq.b2 = bq.b0;
    bq.a1 = -2.0 * cw / a0;
    bq.a2 = (1.0 - alpha) / a0;
    return bq;
}

Biquad design_highpass(double fs, double cutoff_hz, double q) {
    const double w0 = 2.0 * kPi * cutoff_hz / fs;
    const double cw = std::cos(w0);
    const double alpha = std::sin(w0) / (2.0 * q);
    const double a0 = 1.0 + alpha;
    Biquad bq;
    bq.b0 = (1.0 + cw) / 2.0 / a0;
    bq.b1 = -(1.0 + cw) / a0;
    bq.b2 = bq.b0;
    bq.a1 = -2.0 * cw / a0;
    bq.a2 = (1.0 - alpha) / a0;
    return bq;
}

// Butterworth pole Q values for a cascade of second-order sections.
std::vector<double> butterworth_q(int order) {
    if (order % 2 != 0 || order < 2)
        raise(Err::InvalidConfig, "filter order must be a positive even number");
    std::vector<double> qs;
    const int sections = order / 2;
    for (int k = 0; k < sections; ++k) {
        const double theta = kPi * (2.0 * k + 1.0) / (2.0 * order);
        qs.push_back(1.0 / (2.0 * std::cos(theta)));
    }
    return qs;
}

// Forward-backward pass over an odd-reflection padded copy. The reflection
// keeps edge transients proportional to local curvature instead of the jump
// to zero initial conditions.
std::vector<double> filtfilt(const std::vector<double>& x, const std::vector<Biquad>& sections,
                             std::size_t padlen) {
    const std::size_t n = x.size();
    if (n < 2) return x;
    padlen = std::min(padlen, n - 1);

    std::vector<double> ext;
    ext.reserve(n + 2 * padlen);
    for (std::size_t i = padlen; i >= 1; --i) ext.push_back(2.0 * x[0] - x[i]);
    ext.insert(ext.end(), x.begin(), x.end());
    for (std::size_t i = 1; i <= padlen; ++i) ext.push_back(2.0 * x[n - 1] - x[n - 1 - i]);

    for (const Biquad& bq : sections) bq.apply(ext);
    std::reverse(ext.begin(), ext.end());
    for (const Biquad& bq : sections) bq.apply(ext);
    std::reverse(ext.begin(), ext.end());

    return std::vector<double>(ext.begin() + static_cast<std::ptrdiff_t>(padlen),
                               ext.begin() + static_cast<std::ptrdiff_t>(padlen + n));
}

void check_signal(const SampledSignal& s, std::size_t min_samples) {
    if (s.fs <= 0.0) raise(Err::InvalidConfig, "sampling rate must be positive");
    if (s.size() < min_samples)
        raise(Err::SignalTooShort, "need at least " + std::to_string(min_samples) + " samples, got " +
                                       std::to_string(s.size()));
}

// Centered moving average via prefix sums; window clipped at the edges.
std::vector<double> rolling_mean(const std::vector<double>& x, std::size_t win) {
    const std::size_t n = x.size();
    std::vector<double> cum(n + 1, 0.0);
    for (std::size_t i = 0; i < n; ++i) cum[i + 1] = cum[i] + x[i];
    std::vector<double> out(n);
    const std::size_t half = win / 2;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t lo = i > half ? i - half : 0;
        const std::size_t hi = std::min(n, i + half + 1);
        out[i] = (cum[hi] - cum[lo]) / static_cast<double>(hi - lo);
    }
    return out;
}

} // namespace

SampledSignal lowpass_filtfilt(const SampledSignal& s, double cutoff_hz, int order) {
    check_signal(s, 2);
    if (cutoff_hz <= 0.0 || cutoff_hz >= s.fs / 2.0)
        raise(Err::InvalidConfig, "low-pass cutoff must sit inside (0, fs/2)");
    std::vector<Biquad> sections;
    for (double q : butterworth_q(order)) sections.push_back(design_lowpass(s.fs, cutoff_hz, q));
    const auto padlen = static_cast<std::size_t>(std::lround(2.0 * s.fs / cutoff_hz));
    return {filtfilt(s.samples, sections, padlen), s.fs};
}

SampledSignal highpass_filtfilt(const SampledSignal& s, double cutoff_hz, int order) {
    check_signal(s, 2);
    if (cutoff_hz <= 0.0 || cutoff_hz >= s.fs / 2.0)
        raise(Err::InvalidConfig, "high-pass cutoff must sit inside (0, fs/2)");
    std::vector<Biquad> sections;
    for (double q : butterworth_q(order)) sections.push_back(design_highpass(s.fs, cutoff_hz, q));
    const auto padlen = static_cast<std::size_t>(std::lround(2.0 * s.fs / cutoff_hz));
    return {filtfilt(s.samples, sections, padlen), s.fs};
}

SampledSignal bandpass_filtfilt(const SampledSignal& s, double low_hz, double high_hz) {
    if (low_hz <= 0.0 || high_hz <= low_hz)
        raise(Err::InvalidConfig, "band edges must satisfy 0 < low < high");
    return highpass_filtfilt(lowpass_filtfilt(s, high_hz, 4), low_hz, 2);
}

SampledSignal fiducial_bandpass(const SampledSignal& s) {
    return bandpass_filtfilt(s, 0.5, 8.0);
}

BeatMarkers detect_beats(const SampledSignal& s, double min_hr, double max_hr) {
    if (!(min_hr >= 20.0 && min_hr < max_hr && max_hr <= 220.0))
        raise(Err::InvalidConfig, "heart-rate bounds must satisfy 20 <= min < max <= 220");
    check_signal(s, 8);

    const SampledSignal f = lowpass_filtfilt(s, 8.0, 4);
    const std::vector<double>& x = f.samples;
    const std::size_t n = x.size();

    const double mean = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(n);
    double var = 0.0;
    for (double v : x) var += (v - mean) * (v - mean);
    const double sd = std::sqrt(var / static_cast<double>(n));
    if (sd == 0.0) raise(Err::NoBeatsFound, "flat signal");

    const std::vector<double> local = rolling_mean(x, static_cast<std::size_t>(std::lround(1.2 * s.fs)));

    const double min_gap = s.fs * 60.0 / max_hr;
    const double max_gap = s.fs * 60.0 / min_hr;

    // Systolic peaks first: they tower over dicrotic/diastolic structure, so
    // thresholding them is robust where thresholding valley minima is not.
    // Plateau maxima resolve to their first sample.
    auto is_local_max = [&](std::size_t i) {
        return i > 0 && i + 1 < n && x[i] > x[i - 1] && x[i] >= x[i + 1];
    };
    std::vector<std::size_t> peaks;
    for (std::size_t i = 1; i + 1 < n; ++i) {
        if (!is_local_max(i) || x[i] < local[i] + 0.30 * sd) continue;
        if (!peaks.empty() && static_cast<double>(i - peaks.back()) < min_gap) {
            if (x[i] > x[peaks.back()]) peaks.back() = i;
            continue;
        }
        peaks.push_back(i);
    }

    // Rescue pass: a gap longer than one slowest-allowed beat means a systole
    // sat under the threshold; take the tallest interior maximum far enough
    // from both neighbours. An unclosable gap makes the segment unusable.
    for (bool changed = true; changed;) {
        changed = false;
        for (std::size_t k = 0; k + 1 < peaks.size(); ++k) {
            if (static_cast<double>(peaks[k + 1] - peaks[k]) <= max_gap) continue;
            const std::size_t lo = peaks[k] + static_cast<std::size_t>(min_gap);
            const std::size_t hi = peaks[k + 1] - static_cast<std::size_t>(min_gap);
            std::size_t best = 0;
            bool found = false;
            for (std::size_t i = lo; i <= hi; ++i) {
                if (is_local_max(i) && (!found || x[i] > x[best])) {
                    best = i;
                    found = true;
                }
            }
            if (!found)
                raise(Err::NoBeatsFound, "inter-beat gap exceeds 60/min_hr with no rescue maximum");
            peaks.insert(peaks.begin() + static_cast<std::ptrdiff_t>(k) + 1, best);
            changed = true;
            break;
        }
    }

    if (peaks.size() < 2) raise(Err::NoBeatsFound, "fewer than two systolic peaks detected");

    // Feet: deepest point before each peak (first index on ties). When the
    // pre-peak minimum collapses to sample 0 the window may have cut that
    // beat's upstroke, leaving its true foot outside the recording; keeping
    // it would fabricate a diastolic value. Sample 0 counts as a real foot
    // only if it is about as deep as the interior feet; otherwise the
    // truncated first beat is dropped (kept when only two peaks exist, where
    // an edge foot beats NoBeatsFound).
    auto argmin_between = [&](std::size_t lo, std::size_t hi) {
        std::size_t best = lo;
        for (std::size_t i = lo + 1; i <= hi; ++i)
            if (x[i] < x[best]) best = i;
        return best;
    };
    auto median_of = [](std::vector<double> v) {
        std::sort(v.begin(), v.end());
        return v[v.size() / 2];
    };
    std::size_t first_peak = 0;
    if (argmin_between(0, peaks[0]) == 0 && peaks.size() >= 3) {
        std::vector<double> foot_vals, peak_vals;
        for (std::size_t k = 0; k + 1 < peaks.size(); ++k) {
            foot_vals.push_back(x[argmin_between(peaks[k], peaks[k + 1])]);
            peak_vals.push_back(x[peaks[k]]);
        }
        const double foot_med = median_of(foot_vals);
        const double amp = median_of(peak_vals) - foot_med;
        if (x[0] - foot_med > 0.08 * amp) first_peak = 1;
    }
    BeatMarkers out;
    out.feet.push_back(first_peak == 0 ? argmin_between(0, peaks[0])
                                       : argmin_between(peaks[0], peaks[1]));
    for (std::size_t k = first_peak; k + 1 < peaks.size(); ++k)
        out.feet.push_back(argmin_between(peaks[k], peaks[k + 1]));
    out.peaks.assign(peaks.begin() + static_cast<std::ptrdiff_t>(first_peak), peaks.end());

    for (std::size_t k = 0; k + 1 < out.feet.size(); ++k) {
        const auto gap = static_cast<double>(out.feet[k + 1] - out.feet[k]);
        if (gap < min_gap - 2.0 || gap > max_gap + 2.0)
            raise(Err::NoBeatsFound, "inter-foot interval outside the heart-rate band");
    }
    return out;
}

BpSummary segment_bp_summary(const SampledSignal& abp) {
    const BeatMarkers marks = detect_beats(abp);
    const std::vector<double>& x = abp.samples;

    double sum_max = 0.0, sum_min = 0.0;
    const std::size_t beats = marks.complete_beats();
    for (std::size_t k = 0; k < beats; ++k) {
        double beat_max = x[marks.feet[k]];
        for (std::size_t i = marks.feet[k]; i <= marks.feet[k + 1]; ++i) beat_max = std::max(beat_max, x[i]);
        sum_max += beat_max;
        sum_min += x[marks.feet[k]];
    }

    BpSummary out;
    out.sbp = sum_max / static_cast<double>(beats);
    out.dbp = sum_min / static_cast<double>(beats);
    out.mbp = mean_bp(out.sbp, out.dbp);
    return out;
}

SampledSignal second_derivative(const SampledSignal& s) {
    check_signal(s, 5);
    const std::size_t n = s.size();
    const double scale = s.fs * s.fs;
    std::vector<double> out(n);
    for (std::size_t i = 1; i + 1 < n; ++i)
        out[i] = (s.samples[i + 1] - 2.0 * s.samples[i] + s.samples[i - 1]) * scale;
    out[0] = out[1];
    out[n - 1] = out[n - 2];
    return {std::move(out), s.fs};
}

SampledSignal min_max_normalize(const SampledSignal& s) {
    if (s.size() == 0) raise(Err::SignalTooShort, "cannot normalize an empty signal");
    const auto [mn, mx] = std::minmax_element(s.samples.begin(), s.samples.end());
    if (*mx == *mn) raise(Err::ConstantSignal, "min == max leaves scale undefined");
    const double span = *mx - *mn;
    std::vector<double> out(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) out[i] = (s.samples[i] - *mn) / span;
    return {std::move(out), s.fs};
}

SampledSignal truncate_to_cycles(const SampledSignal& ppg, double target_seconds) {
    if (target_seconds != 3.0 && target_seconds != 5.0 && target_seconds != 7.0)
        raise(Err::InvalidConfig, "window length must be 3, 5, or 7 seconds");
    const BeatMarkers marks = detect_beats(ppg);
    const std::size_t first_foot = marks.feet.front();
    const auto want = static_cast<std::size_t>(std::lround(target_seconds * ppg.fs));
    if (ppg.size() < first_foot + want)
        raise(Err::InsufficientLength, std::to_string(ppg.size() - first_foot) +
                                           " samples after the first onset, need " + std::to_string(want));
    std::vector<double> out(ppg.samples.begin() + static_cast<std::ptrdiff_t>(first_foot),
                            ppg.samples.begin() + static_cast<std::ptrdiff_t>(first_foot + want));
    return {std::move(out), ppg.fs};
}

} // namespace bpshift

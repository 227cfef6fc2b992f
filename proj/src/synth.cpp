#include "bpshift/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>

#include "bpshift/error.hpp"

namespace bpshift {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;
constexpr double kPeriodMin = 0.55, kPeriodMax = 1.25;
// Lobe support used for overlap-add, generous for sigma <= 0.15.
constexpr double kTailBefore = 0.40, kTailAfter = 1.70;

struct Lobe {
    double amp = 0.0, mu = 0.0, sigma = 1.0;
};

double lobes_value(const std::array<Lobe, 3>& lobes, double t) {
    double v = 0.0;
    for (const Lobe& l : lobes) {
        const double d = t - l.mu;
        v += l.amp * std::exp(-d * d / (2.0 * l.sigma * l.sigma));
    }
    return v;
}

// Analytic second time-derivative of the lobe sum.
double lobes_curvature(const std::array<Lobe, 3>& lobes, double t) {
    double v = 0.0;
    for (const Lobe& l : lobes) {
        const double d = t - l.mu;
        const double s2 = l.sigma * l.sigma;
        v += l.amp * std::exp(-d * d / (2.0 * s2)) * (d * d - s2) / (s2 * s2);
    }
    return v;
}

struct PlannedBeat {
    double onset = 0.0;  // s, may be negative for the lead-in beat
    double period = 0.0; // s
    std::array<Lobe, 3> lobes;
    double dic_amp = 0.0, dic_mu = 0.0;
};

// Normalized MBP excursion driving the morphology coupling.
double bp_excursion(double sbp, double dbp) { return (mean_bp(sbp, dbp) - 95.0) / 50.0; }

std::array<Lobe, 3> plan_lobes(const SynthConfig& cfg, double u, Rng& rng, double* dic_amp_out,
                               double* dic_mu_out) {
    // Coupling moves the dicrotic lobe up and earlier with MBP; excursions
    // are clamped relative to the configured base so a zero base stays zero.
    const double da_shift =
        std::clamp(cfg.dic_amp_gain * u, -0.5 * cfg.dic_amp, 0.8 * cfg.dic_amp);
    const double dm_shift = std::clamp(-cfg.dic_mu_gain * u, -0.05, 0.05);
    const double dic_amp = cfg.dic_amp + da_shift;
    const double dic_mu = cfg.dic_mu + dm_shift;

    auto jitter = [&] {
        return cfg.lobe_jitter > 0.0 ? 1.0 + cfg.lobe_jitter * draw_normal(rng) : 1.0;
    };
    std::array<Lobe, 3> lobes{};
    lobes[0] = {cfg.sys_amp * jitter(), cfg.sys_mu, cfg.sys_sigma};
    lobes[1] = {dic_amp * jitter(), dic_mu, cfg.dic_sigma};
    lobes[2] = {cfg.dia_amp * jitter(), cfg.dia_mu, cfg.dia_sigma};
    if (dic_amp_out) *dic_amp_out = lobes[1].amp;
    if (dic_mu_out) *dic_mu_out = dic_mu;
    return lobes;
}

double clamp_period(double t) { return std::clamp(t, kPeriodMin, kPeriodMax); }

std::size_t argmin_range(const std::vector<double>& v, std::size_t lo, std::size_t hi) {
    std::size_t best = lo;
    for (std::size_t i = lo + 1; i <= hi; ++i)
        if (v[i] < v[best]) best = i;
    return best;
}

std::size_t argmax_range(const std::vector<double>& v, std::size_t lo, std::size_t hi) {
    std::size_t best = lo;
    for (std::size_t i = lo + 1; i <= hi; ++i)
        if (v[i] > v[best]) best = i;
    return best;
}

} // namespace

void SynthConfig::validate() const {
    auto bad = [](const std::string& msg) { raise(Err::InvalidConfig, msg); };
    if (n_patients == 0) bad("need at least one patient");
    if (segments_per_patient < 2) bad("need at least two segments per patient");
    if (fs < 50.0 || fs > 1000.0) bad("fs outside [50, 1000] Hz");
    if (segment_seconds < 2.0 || segment_seconds > 60.0) bad("segment length outside [2, 60] s");
    if (hr_lo < 40.0 || hr_hi > 180.0 || hr_lo >= hr_hi) bad("heart-rate band outside [40, 180] bpm");
    if (hr_sd < 0.0) bad("heart-rate variability must be non-negative");
    if (period_jitter < 0.0 || lobe_jitter < 0.0) bad("jitter must be non-negative");
    if (noise_sd < 0.0 || wander_amp < 0.0) bad("noise amplitudes must be non-negative");
    if (sys_amp <= 0.0 || dic_amp < 0.0 || dia_amp < 0.0) bad("lobe amplitudes invalid");
    if (sys_sigma <= 0.0 || dic_sigma <= 0.0 || dia_sigma <= 0.0) bad("lobe widths must be positive");
    if (sys_mu <= 0.0) bad("systolic lobe center must be positive");
    if (dic_amp > 0.0 && dic_mu <= sys_mu) bad("dicrotic lobe must follow the systolic lobe");
    if (dia_amp > 0.0 && dia_mu <= (dic_amp > 0.0 ? dic_mu : sys_mu))
        bad("diastolic lobe must come last");
    if (dic_amp_gain < 0.0 || dic_mu_gain < 0.0 || hr_bp_gain < 0.0)
        bad("coupling gains must be non-negative");
    if (sbp_min < 80.0 || sbp_max > 200.0 || sbp_min >= sbp_max) bad("SBP bounds outside [80, 200]");
    if (dbp_min < 40.0 || dbp_max > 120.0 || dbp_min >= dbp_max) bad("DBP bounds outside [40, 120]");
    if (sbp_start_lo < sbp_min || sbp_start_hi > sbp_max || sbp_start_lo > sbp_start_hi)
        bad("SBP start range outside bounds");
    if (dbp_start_lo < dbp_min || dbp_start_hi > dbp_max || dbp_start_lo > dbp_start_hi)
        bad("DBP start range outside bounds");
    if (walk_sd_sbp < 0.0 || walk_sd_dbp < 0.0) bad("walk sd must be non-negative");
    if (event_rate < 0.0 || event_rate > 1.0) bad("event rate outside [0, 1]");
    if (event_hold < 0.0 || event_hold >= 1.0) bad("event hold outside [0, 1)");
    if (event_sbp_lo < 0.0 || event_sbp_lo > event_sbp_hi) bad("event magnitude range invalid");
    if (event_dbp_frac < 0.0 || event_dbp_frac > 1.0) bad("event DBP fraction outside [0, 1]");
}

SynthConfig SynthConfig::learnable() {
    SynthConfig c;
    c.n_patients = 50;
    c.segments_per_patient = 30;
    return c;
}

SynthConfig SynthConfig::control() {
    SynthConfig c;
    c.n_patients = 24;
    c.segments_per_patient = 16;
    c.dic_amp_gain = 0.0;
    c.dic_mu_gain = 0.0;
    c.hr_bp_gain = 0.0;
    return c;
}

SynthConfig SynthConfig::oracle() {
    SynthConfig c;
    c.noise_sd = 0.001;
    c.wander_amp = 0.01;
    c.period_jitter = 0.010;
    c.hr_sd = 0.0; // signal-level oracles want a controlled rate
    return c;
}

BeatPair gen_beat(const SynthConfig& cfg, double hr_bpm, double sbp, double dbp, Rng& rng) {
    if (hr_bpm < 40.0 || hr_bpm > 180.0) raise(Err::InvalidConfig, "heart rate outside [40, 180]");
    if (!(sbp > dbp) || dbp <= 0.0) raise(Err::InvalidConfig, "need sbp > dbp > 0");
    BeatPair out;
    out.period = clamp_period(60.0 / hr_bpm + cfg.period_jitter * draw_normal(rng));
    const auto lobes = plan_lobes(cfg, bp_excursion(sbp, dbp), rng, &out.dic_amp, &out.dic_mu);
    const auto len = static_cast<std::size_t>(std::llround(out.period * cfg.fs));
    out.ppg.resize(len);
    out.abp.resize(len);
    for (std::size_t i = 0; i < len; ++i) {
        const double t = static_cast<double>(i) / cfg.fs;
        out.ppg[i] = lobes_value(lobes, t);
        const double phase = static_cast<double>(i) / static_cast<double>(len);
        out.abp[i] = dbp + (sbp - dbp) * 0.5 * (1.0 - std::cos(kTwoPi * phase));
    }
    return out;
}

std::vector<SegmentRecord> gen_patient_segments(const SynthConfig& cfg,
                                                const std::string& patient_id,
                                                const std::vector<std::pair<double, double>>& bp,
                                                std::uint64_t seed, PatientTruth* truth,
                                                std::vector<SampledSignal>* abp_out) {
    if (bp.empty()) raise(Err::InvalidConfig, "empty BP series");
    Rng rng = make_rng(seed);
    const double margin = std::min(6.0, (cfg.hr_hi - cfg.hr_lo) / 4.0);
    const double hr_base = draw_uniform(rng, cfg.hr_lo + margin, cfg.hr_hi - margin);
    const auto n = static_cast<std::size_t>(std::llround(cfg.segment_seconds * cfg.fs));
    const double seg_len = static_cast<double>(n) / cfg.fs;

    std::vector<SegmentRecord> records;
    records.reserve(bp.size());
    if (truth) {
        truth->patient_id = patient_id;
        truth->segments.clear();
        truth->segments.reserve(bp.size());
    }
    if (abp_out) abp_out->clear();

    for (std::size_t k = 0; k < bp.size(); ++k) {
        const double sbp = bp[k].first, dbp = bp[k].second;
        if (!(sbp > dbp) || dbp <= 0.0) raise(Err::InvalidConfig, "need sbp > dbp > 0");
        const double u = bp_excursion(sbp, dbp);
        const double hr = std::clamp(hr_base + cfg.hr_bp_gain * u + cfg.hr_sd * draw_normal(rng),
                                     cfg.hr_lo, cfg.hr_hi);
        const double t_mean = 60.0 / hr;

        // Beat grid. The window starts at a uniform phase within one beat
        // period — recordings are cut at arbitrary phase, so absolute sample
        // positions must stay uninformative. Lead-in beats walk backwards
        // until the grid covers the window head; the plan stays
        // onset-ascending because the phase walker and truth pairing rely
        // on it.
        std::vector<PlannedBeat> plan;
        const double first = draw_uniform(rng, 0.02, 0.02 + t_mean);
        for (double back = first;;) {
            PlannedBeat lead;
            lead.period = clamp_period(t_mean + cfg.period_jitter * draw_normal(rng));
            lead.onset = back - lead.period;
            lead.lobes = plan_lobes(cfg, u, rng, &lead.dic_amp, &lead.dic_mu);
            back = lead.onset;
            plan.push_back(lead);
            if (back <= 0.0) break;
        }
        std::reverse(plan.begin(), plan.end());
        double t = first;
        while (t < seg_len + 0.4) {
            PlannedBeat b;
            b.onset = t;
            b.period = clamp_period(t_mean + cfg.period_jitter * draw_normal(rng));
            b.lobes = plan_lobes(cfg, u, rng, &b.dic_amp, &b.dic_mu);
            plan.push_back(b);
            t += b.period;
        }

        // Noise-free composite and its analytic second derivative.
        std::vector<double> clean(n, 0.0), curv(n, 0.0);
        for (const PlannedBeat& b : plan) {
            const double lo = (b.onset - kTailBefore) * cfg.fs;
            const double hi = (b.onset + kTailAfter) * cfg.fs;
            const auto i0 = static_cast<std::size_t>(std::max(0.0, std::ceil(lo)));
            const auto i1 = static_cast<std::size_t>(
                std::min(static_cast<double>(n - 1), std::floor(hi)));
            for (std::size_t i = i0; i <= i1 && i < n; ++i) {
                const double dt = static_cast<double>(i) / cfg.fs - b.onset;
                clean[i] += lobes_value(b.lobes, dt);
                curv[i] += lobes_curvature(b.lobes, dt);
            }
        }

        SegmentRecord rec;
        rec.patient_id = patient_id;
        rec.index = static_cast<int>(k) + 1;
        rec.sbp = sbp;
        rec.dbp = dbp;
        rec.mbp = mean_bp(sbp, dbp);
        rec.ppg.fs = cfg.fs;
        rec.ppg.samples.resize(n);
        const double wander_hz = draw_uniform(rng, 0.12, 0.22);
        const double wander_phase = draw_uniform(rng, 0.0, kTwoPi);
        for (std::size_t i = 0; i < n; ++i) {
            const double ti = static_cast<double>(i) / cfg.fs;
            double v = clean[i];
            if (cfg.wander_amp > 0.0)
                v += cfg.wander_amp * std::sin(kTwoPi * wander_hz * ti + wander_phase);
            if (cfg.noise_sd > 0.0) v += cfg.noise_sd * draw_normal(rng);
            rec.ppg.samples[i] = v;
        }

        if (abp_out) {
            SampledSignal abp;
            abp.fs = cfg.fs;
            abp.samples.resize(n);
            std::size_t p = 0;
            for (std::size_t i = 0; i < n; ++i) {
                const double ti = static_cast<double>(i) / cfg.fs;
                while (p + 1 < plan.size() && ti >= plan[p + 1].onset) ++p;
                const double phase = (ti - plan[p].onset) / plan[p].period;
                abp.samples[i] = dbp + (sbp - dbp) * 0.5 * (1.0 - std::cos(kTwoPi * phase));
            }
            abp_out->push_back(std::move(abp));
        }

        if (truth) {
            SegmentTruth st;
            st.sbp = sbp;
            st.dbp = dbp;
            st.mbp = rec.mbp;
            st.clean_min = *std::min_element(clean.begin(), clean.end());
            st.clean_max = *std::max_element(clean.begin(), clean.end());
            const double range = st.clean_max - st.clean_min;

            // True onsets: composite minimum near each planned onset.
            std::vector<std::ptrdiff_t> onset_idx(plan.size(), -1);
            for (std::size_t b = 0; b < plan.size(); ++b) {
                const double lo = (plan[b].onset - 0.12) * cfg.fs;
                const double hi = (plan[b].onset + 0.14) * cfg.fs;
                if (hi < 0.0 || lo > static_cast<double>(n - 1)) continue;
                const auto w0 = static_cast<std::size_t>(std::max(0.0, std::ceil(lo)));
                const auto w1 = static_cast<std::size_t>(
                    std::min(static_cast<double>(n - 1), std::floor(hi)));
                onset_idx[b] = static_cast<std::ptrdiff_t>(argmin_range(clean, w0, w1));
            }

            for (std::size_t b = 0; b + 1 < plan.size(); ++b) {
                if (plan[b].onset < 0.0 || plan[b + 1].onset > seg_len) continue;
                if (onset_idx[b] < 0 || onset_idx[b + 1] < 0) continue;
                const auto o = static_cast<std::size_t>(onset_idx[b]);
                const auto next_o = static_cast<std::size_t>(onset_idx[b + 1]);
                if (next_o <= o + 4) continue;

                BeatTruth bt;
                bt.onset = o;
                bt.onset_time = plan[b].onset;
                bt.period = plan[b].period;
                bt.dic_amp = plan[b].dic_amp;
                bt.dic_mu = plan[b].dic_mu;
                const auto peak_hi = std::min(
                    n - 1, o + static_cast<std::size_t>(std::llround(0.50 * cfg.fs)));
                bt.peak = argmax_range(clean, o, peak_hi);

                SampledSignal slice;
                slice.fs = cfg.fs;
                slice.samples.assign(curv.begin() + static_cast<std::ptrdiff_t>(o),
                                     curv.begin() + static_cast<std::ptrdiff_t>(next_o));
                for (double& v : slice.samples) v /= range;
                try {
                    bt.features = extract_features(locate_fiducials(slice));
                    bt.features_valid = true;
                } catch (const Error&) {
                    bt.features_valid = false;
                }
                st.beats.push_back(bt);
            }
            truth->segments.push_back(std::move(st));
        }
        records.push_back(std::move(rec));
    }
    return records;
}

SynthCohort gen_cohort(const SynthConfig& cfg) {
    cfg.validate();
    SynthCohort out;
    out.segments.reserve(cfg.n_patients * cfg.segments_per_patient);
    out.abp.reserve(cfg.n_patients * cfg.segments_per_patient);
    out.truth.reserve(cfg.n_patients);

    for (std::size_t ord = 0; ord < cfg.n_patients; ++ord) {
        char buf[16];
        std::snprintf(buf, sizeof buf, "p%04zu", ord + 1);
        const std::string id(buf);
        const std::uint64_t patient_seed = cfg.seed ^ static_cast<std::uint64_t>(ord);

        // BP trajectory: bounded walk plus held events, on its own stream so
        // waveform detail never shifts the labels.
        Rng wrng = make_rng(patient_seed, fnv1a64("bp-walk"));
        double sbp = draw_uniform(wrng, cfg.sbp_start_lo, cfg.sbp_start_hi);
        double dbp = draw_uniform(wrng, cfg.dbp_start_lo, cfg.dbp_start_hi);
        if (sbp - dbp < 25.0) dbp = sbp - 25.0;

        std::vector<std::pair<double, double>> bp;
        std::vector<char> active;
        std::vector<PatientEvent> events;
        double ev_sbp = 0.0, ev_dbp = 0.0;
        std::size_t ev_left = 0;
        for (std::size_t k = 0; k < cfg.segments_per_patient; ++k) {
            if (k > 0) {
                sbp += cfg.walk_sd_sbp * draw_normal(wrng);
                dbp += cfg.walk_sd_dbp * draw_normal(wrng);
                sbp = std::clamp(sbp, cfg.sbp_min, cfg.sbp_max);
                dbp = std::clamp(dbp, cfg.dbp_min, cfg.dbp_max);
                if (ev_left > 0) {
                    if (--ev_left == 0) ev_sbp = ev_dbp = 0.0;
                } else if (cfg.event_rate > 0.0 && draw_unit(wrng) < cfg.event_rate) {
                    const double sign = draw_unit(wrng) < 0.5 ? 1.0 : -1.0;
                    const double mag = draw_uniform(wrng, cfg.event_sbp_lo, cfg.event_sbp_hi);
                    ev_sbp = sign * mag;
                    ev_dbp = sign * mag * cfg.event_dbp_frac;
                    std::size_t dur = 1;
                    while (dur < cfg.segments_per_patient && draw_unit(wrng) < cfg.event_hold)
                        ++dur;
                    ev_left = dur;
                    // The recorded span is clipped to the series end.
                    events.push_back({k + 1, std::min(dur, cfg.segments_per_patient - k), ev_sbp,
                                      ev_dbp});
                }
            }
            double s = std::clamp(sbp + ev_sbp, cfg.sbp_min, cfg.sbp_max);
            double d = std::clamp(dbp + ev_dbp, cfg.dbp_min, cfg.dbp_max);
            if (s - d < 20.0) d = s - 20.0;
            bp.emplace_back(s, d);
            active.push_back(ev_left > 0 ? 1 : 0);
        }

        PatientTruth pt;
        std::vector<SampledSignal> abps;
        auto segs = gen_patient_segments(cfg, id, bp, patient_seed, &pt, &abps);
        pt.events = std::move(events);
        for (std::size_t k = 0; k < pt.segments.size(); ++k)
            pt.segments[k].in_event = active[k] != 0;

        for (auto& s : segs) out.segments.push_back(std::move(s));
        for (auto& a : abps) out.abp.push_back(std::move(a));
        out.truth.push_back(std::move(pt));
    }
    return out;
}

} // namespace bpshift

#include "bpshift/labeling.hpp"

#include "bpshift/error.hpp"

namespace bpshift {

const char* bp_type_name(BpType t) {
    switch (t) {
        case BpType::Sbp: return "sbp";
        case BpType::Dbp: return "dbp";
        case BpType::Mbp: return "mbp";
    }
    return "?";
}

const char* label_name(ChangeLabel l) {
    switch (l) {
        case ChangeLabel::Spike: return "spike";
        case ChangeLabel::Stable: return "stable";
        case ChangeLabel::Dip: return "dip";
    }
    return "?";
}

BpType parse_bp_type(const std::string& s) {
    if (s == "sbp") return BpType::Sbp;
    if (s == "dbp") return BpType::Dbp;
    if (s == "mbp") return BpType::Mbp;
    raise(Err::ConfigError, "unknown bp type '" + s + "', expected one of {sbp, dbp, mbp}");
}

ChangeLabel parse_label(const std::string& s) {
    if (s == "spike") return ChangeLabel::Spike;
    if (s == "stable") return ChangeLabel::Stable;
    if (s == "dip") return ChangeLabel::Dip;
    raise(Err::ConfigError, "unknown label '" + s + "', expected one of {spike, stable, dip}");
}

double Thresholds::of(BpType t) const {
    switch (t) {
        case BpType::Sbp: return sbp;
        case BpType::Dbp: return dbp;
        case BpType::Mbp: return mbp;
    }
    return 0.0;
}

std::vector<double> threshold_grid(BpType t) {
    double hi = 0.0;
    switch (t) {
        case BpType::Sbp: hi = 45.0; break;
        case BpType::Dbp: hi = 35.0; break;
        case BpType::Mbp: hi = 40.0; break;
    }
    std::vector<double> grid;
    for (double v = 5.0; v <= hi; v += 5.0) grid.push_back(v);
    return grid;
}

double delta_bp(const std::vector<double>& series, int i, int j) {
    const int n = static_cast<int>(series.size());
    if (i < 1 || i > n - 1 || j < 1 || j > n - i)
        raise(Err::IndexOutOfRange, "pair (i=" + std::to_string(i) + ", j=" + std::to_string(j) +
                                        ") outside a series of " + std::to_string(n));
    return series[static_cast<std::size_t>(i + j - 1)] - series[static_cast<std::size_t>(i - 1)];
}

std::vector<std::pair<int, int>> enumerate_pairs(int n_segments) {
    if (n_segments < 2) raise(Err::TooFewSegments, "need at least two segments to form a pair");
    std::vector<std::pair<int, int>> out;
    out.reserve(static_cast<std::size_t>(n_segments) * (n_segments - 1) / 2);
    for (int i = 1; i <= n_segments - 1; ++i)
        for (int j = 1; j <= n_segments - i; ++j) out.emplace_back(i, j);
    return out;
}

ChangeLabel classify_change(double delta, double threshold) {
    if (threshold <= 0.0) raise(Err::InvalidConfig, "threshold must be positive");
    if (delta > threshold) return ChangeLabel::Spike;
    if (delta < -threshold) return ChangeLabel::Dip;
    return ChangeLabel::Stable;
}

double ChangePair::delta_of(BpType t) const {
    switch (t) {
        case BpType::Sbp: return delta_sbp;
        case BpType::Dbp: return delta_dbp;
        case BpType::Mbp: return delta_mbp;
    }
    return 0.0;
}

ChangeLabel ChangePair::label_of(BpType t) const {
    switch (t) {
        case BpType::Sbp: return label_sbp;
        case BpType::Dbp: return label_dbp;
        case BpType::Mbp: return label_mbp;
    }
    return ChangeLabel::Stable;
}

std::vector<ChangePair> label_patient(const std::vector<SegmentRecord>& segments,
                                      const Thresholds& thresholds) {
    if (segments.size() < 2) raise(Err::TooFewSegments, "a patient needs two segments to label");
    for (std::size_t k = 1; k < segments.size(); ++k) {
        if (segments[k].patient_id != segments[0].patient_id)
            raise(Err::InvalidConfig, "mixed patient ids in one series");
        if (segments[k].index <= segments[k - 1].index)
            raise(Err::InvalidConfig, "segments must be sorted by index");
    }

    const int n = static_cast<int>(segments.size());
    std::vector<ChangePair> out;
    out.reserve(static_cast<std::size_t>(n) * (n - 1) / 2);
    for (const auto& [i, j] : enumerate_pairs(n)) {
        const SegmentRecord& a = segments[static_cast<std::size_t>(i - 1)];
        const SegmentRecord& b = segments[static_cast<std::size_t>(i + j - 1)];
        ChangePair p;
        p.patient_id = a.patient_id;
        p.i = i;
        p.j = j;
        p.delta_sbp = b.sbp - a.sbp;
        p.delta_dbp = b.dbp - a.dbp;
        p.delta_mbp = b.mbp - a.mbp;
        p.thresholds = thresholds;
        p.label_sbp = classify_change(p.delta_sbp, thresholds.sbp);
        p.label_dbp = classify_change(p.delta_dbp, thresholds.dbp);
        p.label_mbp = classify_change(p.delta_mbp, thresholds.mbp);
        out.push_back(std::move(p));
    }
    return out;
}

void relabel(std::vector<ChangePair>& pairs, const Thresholds& thresholds) {
    for (ChangePair& p : pairs) {
        p.thresholds = thresholds;
        p.label_sbp = classify_change(p.delta_sbp, thresholds.sbp);
        p.label_dbp = classify_change(p.delta_dbp, thresholds.dbp);
        p.label_mbp = classify_change(p.delta_mbp, thresholds.mbp);
    }
}

} // namespace bpshift

#pragma once

#include <string>
#include <utility>
#include <vector>

#include "bpshift/signal.hpp"

namespace bpshift {

enum class BpType { Sbp, Dbp, Mbp };

// Class order is fixed everywhere: logits, confusion matrices, tie-breaks.
enum class ChangeLabel : int { Spike = 0, Stable = 1, Dip = 2 };

const char* bp_type_name(BpType t);
const char* label_name(ChangeLabel l);
BpType parse_bp_type(const std::string& s);
ChangeLabel parse_label(const std::string& s);

struct Thresholds {
    double sbp = 30.0;
    double dbp = 15.0;
    double mbp = 20.0;

    double of(BpType t) const;
};

// Sweep grids in mmHg, step 5: SBP 5-45, DBP 5-35, MBP 5-40.
std::vector<double> threshold_grid(BpType t);

// Future-minus-initial difference over a 1-based series: value[i+j] - value[i].
double delta_bp(const std::vector<double>& series, int i, int j);

// All (i, j) with 1 <= i <= n-1 and 1 <= j <= n-i, lexicographic. Size is
// n*(n-1)/2.
std::vector<std::pair<int, int>> enumerate_pairs(int n_segments);

// delta > threshold: Spike; delta < -threshold: Dip; boundary is Stable.
ChangeLabel classify_change(double delta, double threshold);

struct ChangePair {
    std::string patient_id;
    int i = 0; // 1-based initial segment
    int j = 0; // lag; the later segment is i + j
    double delta_sbp = 0.0, delta_dbp = 0.0, delta_mbp = 0.0;
    ChangeLabel label_sbp = ChangeLabel::Stable;
    ChangeLabel label_dbp = ChangeLabel::Stable;
    ChangeLabel label_mbp = ChangeLabel::Stable;
    Thresholds thresholds;

    double delta_of(BpType t) const;
    ChangeLabel label_of(BpType t) const;
};

// Pairwise labels for one patient's ordered series. Segments must share one
// patient_id and be sorted by index; fewer than two raises TooFewSegments.
std::vector<ChangePair> label_patient(const std::vector<SegmentRecord>& segments,
                                      const Thresholds& thresholds);

// Recompute the three labels from stored deltas under new thresholds.
void relabel(std::vector<ChangePair>& pairs, const Thresholds& thresholds);

} // namespace bpshift

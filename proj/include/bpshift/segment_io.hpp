#pragma once

#include <map>
#include <string>
#include <vector>

#include "bpshift/fiducials.hpp"
#include "bpshift/labeling.hpp"
#include "bpshift/signal.hpp"

namespace bpshift {

struct IngestStats {
    std::size_t read = 0;
    std::size_t kept = 0;
    std::size_t dropped = 0;
    std::map<std::string, std::size_t> drop_reasons; // error name -> count
};

// Segment files are NDJSON, one object per 10-second reading:
//   {patient_id, index, fs, ppg:[...], abp:[...]}            summaries computed
//   {patient_id, index, fs, ppg:[...], sbp:..., dbp:...}     summaries given
// mbp is always recomputed as (sbp + 2*dbp) / 3, never trusted from file.
// Malformed JSON or missing fields fail the whole read (IoError); segments
// with non-finite samples, implausible BP, or unusable ABP are dropped and
// tallied. Retained segments are renumbered 1..N per patient in original
// index order, so a lag j always means "j retained readings later".
std::vector<SegmentRecord> read_segments_ndjson(const std::string& path,
                                                IngestStats* stats = nullptr);

// Scalar-BP form of the same layout; abp, when given, is written verbatim
// alongside (parallel to segments) so readers exercise the summary path.
void write_segments_ndjson(const std::string& path, const std::vector<SegmentRecord>& segments,
                           const std::vector<SampledSignal>* abp = nullptr);

struct FeatureRow {
    std::string patient_id;
    int index = 0;
    FeatureVector features;
};

// Per-segment curvature features; segments whose beats all fail are dropped
// and tallied.
std::vector<FeatureRow> compute_feature_rows(const std::vector<SegmentRecord>& segments,
                                             IngestStats* stats = nullptr);
void write_features_csv(const std::string& path, const std::vector<FeatureRow>& rows);

void write_pairs_ndjson(const std::string& path, const std::vector<ChangePair>& pairs);
std::vector<ChangePair> read_pairs_ndjson(const std::string& path);

// FNV-1a over the raw bytes, as 16 hex digits; the manifest chain uses it
// to fingerprint inputs and outputs.
std::string file_hash_hex(const std::string& path);

} // namespace bpshift

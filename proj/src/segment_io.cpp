#include "bpshift/segment_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

#include "bpshift/error.hpp"
#include "bpshift/rng.hpp"

namespace bpshift {

using nlohmann::json;

namespace {

bool all_finite(const std::vector<double>& v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

json require_field(const json& obj, const char* key, const std::string& where) {
    const auto it = obj.find(key);
    if (it == obj.end()) raise(Err::IoError, where + ": missing field '" + key + "'");
    return *it;
}

} // namespace

std::vector<SegmentRecord> read_segments_ndjson(const std::string& path, IngestStats* stats) {
    std::ifstream f(path);
    if (!f) raise(Err::IoError, "cannot open " + path);

    IngestStats local;
    IngestStats& st = stats ? *stats : local;

    std::vector<SegmentRecord> kept;
    std::vector<int> original_index;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty()) continue;
        const std::string where = path + ":" + std::to_string(line_no);
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded()) raise(Err::IoError, where + ": malformed JSON");
        ++st.read;

        SegmentRecord seg;
        seg.patient_id = require_field(j, "patient_id", where).get<std::string>();
        const int index = require_field(j, "index", where).get<int>();
        seg.ppg.fs = require_field(j, "fs", where).get<double>();
        seg.ppg.samples = require_field(j, "ppg", where).get<std::vector<double>>();
        if (seg.patient_id.empty() || index < 1 || !(seg.ppg.fs > 0.0) || seg.ppg.samples.empty())
            raise(Err::IoError, where + ": invalid patient_id, index, fs, or ppg");
        const bool has_abp = j.contains("abp");
        const bool has_scalars = j.contains("sbp") && j.contains("dbp");
        if (!has_abp && !has_scalars)
            raise(Err::IoError, where + ": needs either abp samples or sbp and dbp");

        try {
            if (!all_finite(seg.ppg.samples)) {
                ++st.dropped;
                ++st.drop_reasons["NonFiniteSamples"];
                continue;
            }
            if (has_abp) {
                SampledSignal abp;
                abp.fs = seg.ppg.fs;
                abp.samples = j.at("abp").get<std::vector<double>>();
                if (!all_finite(abp.samples)) {
                    ++st.dropped;
                    ++st.drop_reasons["NonFiniteSamples"];
                    continue;
                }
                const BpSummary bp = segment_bp_summary(abp);
                seg.sbp = bp.sbp;
                seg.dbp = bp.dbp;
            } else {
                seg.sbp = j.at("sbp").get<double>();
                seg.dbp = j.at("dbp").get<double>();
            }
            if (!(std::isfinite(seg.sbp) && std::isfinite(seg.dbp) && seg.sbp > seg.dbp &&
                  seg.dbp > 0.0)) {
                ++st.dropped;
                ++st.drop_reasons["InvalidBp"];
                continue;
            }
            seg.mbp = mean_bp(seg.sbp, seg.dbp);
        } catch (const Error& e) {
            ++st.dropped;
            ++st.drop_reasons[err_name(e.kind())];
            continue;
        }
        kept.push_back(std::move(seg));
        original_index.push_back(index);
    }

    // Renumber retained segments 1..N per patient, in original index order.
    std::unordered_map<std::string, std::vector<std::size_t>> by_patient;
    for (std::size_t k = 0; k < kept.size(); ++k) by_patient[kept[k].patient_id].push_back(k);
    for (auto& [pid, slots] : by_patient) {
        std::stable_sort(slots.begin(), slots.end(), [&](std::size_t a, std::size_t b) {
            return original_index[a] < original_index[b];
        });
        for (std::size_t r = 1; r < slots.size(); ++r)
            if (original_index[slots[r]] == original_index[slots[r - 1]])
                raise(Err::IoError, path + ": duplicate index " +
                                        std::to_string(original_index[slots[r]]) +
                                        " for patient " + pid);
        for (std::size_t r = 0; r < slots.size(); ++r)
            kept[slots[r]].index = static_cast<int>(r + 1);
    }

    st.kept += kept.size(); // accumulates, like read and dropped, across multi-file ingests
    return kept;
}

void write_segments_ndjson(const std::string& path, const std::vector<SegmentRecord>& segments,
                           const std::vector<SampledSignal>* abp) {
    if (abp && abp->size() != segments.size())
        raise(Err::InvalidConfig, "abp list does not match the segment list");
    const std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::trunc);
        if (!f) raise(Err::IoError, "cannot open " + tmp + " for writing");
        for (std::size_t k = 0; k < segments.size(); ++k) {
            const SegmentRecord& seg = segments[k];
            json j = {{"patient_id", seg.patient_id},
                      {"index", seg.index},
                      {"fs", seg.ppg.fs},
                      {"ppg", seg.ppg.samples}};
            if (abp) {
                j["abp"] = (*abp)[k].samples;
            } else {
                j["sbp"] = seg.sbp;
                j["dbp"] = seg.dbp;
            }
            f << j.dump() << "\n";
        }
        if (!f) raise(Err::IoError, "short write to " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

std::vector<FeatureRow> compute_feature_rows(const std::vector<SegmentRecord>& segments,
                                             IngestStats* stats) {
    IngestStats local;
    IngestStats& st = stats ? *stats : local;
    std::vector<FeatureRow> rows;
    rows.reserve(segments.size());
    for (const auto& seg : segments) {
        ++st.read;
        try {
            rows.push_back(FeatureRow{seg.patient_id, seg.index, segment_features(seg.ppg)});
        } catch (const Error& e) {
            ++st.dropped;
            ++st.drop_reasons[err_name(e.kind())];
        }
    }
    st.kept += rows.size();
    return rows;
}

void write_features_csv(const std::string& path, const std::vector<FeatureRow>& rows) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::trunc);
        if (!f) raise(Err::IoError, "cannot open " + tmp + " for writing");
        f << "patient_id,index,b_over_a,slope_bc,slope_bd,agi,agi_mod\n";
        char buf[192];
        for (const auto& row : rows) {
            const FeatureVector& v = row.features;
            std::snprintf(buf, sizeof buf, "%d,%.10g,%.10g,%.10g,%.10g,%.10g", row.index,
                          v.b_over_a, v.slope_bc, v.slope_bd, v.agi, v.agi_mod);
            f << row.patient_id << ',' << buf << '\n';
        }
        if (!f) raise(Err::IoError, "short write to " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

void write_pairs_ndjson(const std::string& path, const std::vector<ChangePair>& pairs) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::trunc);
        if (!f) raise(Err::IoError, "cannot open " + tmp + " for writing");
        for (const auto& p : pairs) {
            const json j = {{"patient_id", p.patient_id},
                            {"i", p.i},
                            {"j", p.j},
                            {"delta_sbp", p.delta_sbp},
                            {"delta_dbp", p.delta_dbp},
                            {"delta_mbp", p.delta_mbp},
                            {"label_sbp", label_name(p.label_sbp)},
                            {"label_dbp", label_name(p.label_dbp)},
                            {"label_mbp", label_name(p.label_mbp)},
                            {"thresholds",
                             {{"sbp", p.thresholds.sbp},
                              {"dbp", p.thresholds.dbp},
                              {"mbp", p.thresholds.mbp}}}};
            f << j.dump() << "\n";
        }
        if (!f) raise(Err::IoError, "short write to " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

std::vector<ChangePair> read_pairs_ndjson(const std::string& path) {
    std::ifstream f(path);
    if (!f) raise(Err::IoError, "cannot open " + path);
    std::vector<ChangePair> pairs;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty()) continue;
        const std::string where = path + ":" + std::to_string(line_no);
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded()) raise(Err::IoError, where + ": malformed JSON");
        ChangePair p;
        p.patient_id = require_field(j, "patient_id", where).get<std::string>();
        p.i = require_field(j, "i", where).get<int>();
        p.j = require_field(j, "j", where).get<int>();
        p.delta_sbp = require_field(j, "delta_sbp", where).get<double>();
        p.delta_dbp = require_field(j, "delta_dbp", where).get<double>();
        p.delta_mbp = require_field(j, "delta_mbp", where).get<double>();
        p.label_sbp = parse_label(require_field(j, "label_sbp", where).get<std::string>());
        p.label_dbp = parse_label(require_field(j, "label_dbp", where).get<std::string>());
        p.label_mbp = parse_label(require_field(j, "label_mbp", where).get<std::string>());
        const json th = require_field(j, "thresholds", where);
        p.thresholds.sbp = require_field(th, "sbp", where).get<double>();
        p.thresholds.dbp = require_field(th, "dbp", where).get<double>();
        p.thresholds.mbp = require_field(th, "mbp", where).get<double>();
        pairs.push_back(std::move(p));
    }
    return pairs;
}

std::string file_hash_hex(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) raise(Err::IoError, "cannot open " + path);
    std::uint64_t h = kFnvOffset;
    char buf[65536];
    while (f.read(buf, sizeof buf) || f.gcount() > 0)
        h = fnv1a64(buf, static_cast<std::size_t>(f.gcount()), h);
    char out[17];
    std::snprintf(out, sizeof out, "%016llx", static_cast<unsigned long long>(h));
    return out;
}

} // namespace bpshift

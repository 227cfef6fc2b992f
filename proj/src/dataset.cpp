#include "bpshift/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <unordered_map>

#include <json.hpp>

#include "bpshift/error.hpp"
#include "bpshift/fiducials.hpp"
#include "bpshift/rng.hpp"
#include "bpshift/signal.hpp"

namespace bpshift {

using nlohmann::json;

const char* input_type_name(InputType t) {
    switch (t) {
    case InputType::PpgWaveform: return "ppg";
    case InputType::WaveformFeature: return "feat";
    case InputType::PpgSdppgWaveform: return "sdppg";
    }
    return "?";
}

InputType parse_input_type(const std::string& s) {
    if (s == "ppg") return InputType::PpgWaveform;
    if (s == "feat") return InputType::WaveformFeature;
    if (s == "sdppg") return InputType::PpgSdppgWaveform;
    raise(Err::ConfigError, "unknown input type '" + s + "' (expected ppg, feat, or sdppg)");
}

std::size_t input_channels(InputType t) {
    return t == InputType::PpgSdppgWaveform ? 4 : 2;
}

std::vector<PatientSeries> group_by_patient(std::vector<SegmentRecord> segments) {
    std::vector<PatientSeries> out;
    std::unordered_map<std::string, std::size_t> slot;
    for (auto& seg : segments) {
        auto [it, fresh] = slot.try_emplace(seg.patient_id, out.size());
        if (fresh) out.push_back(PatientSeries{seg.patient_id, {}});
        out[it->second].segments.push_back(std::move(seg));
    }
    for (auto& series : out)
        std::sort(series.segments.begin(), series.segments.end(),
                  [](const SegmentRecord& a, const SegmentRecord& b) { return a.index < b.index; });
    return out;
}

namespace {

double bp_of(const SegmentRecord& seg, BpType t) {
    switch (t) {
    case BpType::Sbp: return seg.sbp;
    case BpType::Dbp: return seg.dbp;
    case BpType::Mbp: return seg.mbp;
    }
    return 0.0;
}

// Second-derivative channel on the same support as the normalized truncation.
SampledSignal sdppg_channel(const SampledSignal& normalized_ppg) {
    return min_max_normalize(second_derivative(fiducial_bandpass(normalized_ppg)));
}

const SegmentRecord& find_segment(const PatientSeries& series, int index) {
    const auto& segs = series.segments;
    if (index >= 1 && static_cast<std::size_t>(index) <= segs.size() &&
        segs[index - 1].index == index)
        return segs[index - 1];
    for (const auto& seg : segs)
        if (seg.index == index) return seg;
    raise(Err::IndexOutOfRange,
          "patient " + series.patient_id + " has no segment " + std::to_string(index));
}

} // namespace

Example assemble_example(const ChangePair& pair, const SegmentRecord& seg_i,
                         const SegmentRecord& seg_j, const AssemblyOptions& opt) {
    if (seg_i.patient_id != pair.patient_id || seg_j.patient_id != pair.patient_id)
        raise(Err::IndexOutOfRange, "segments belong to a different patient than the pair");
    if (seg_i.index != pair.i || seg_j.index != pair.i + pair.j)
        raise(Err::IndexOutOfRange, "segment indices do not match the pair (i, i+j)");

    const SampledSignal ppg_i = min_max_normalize(truncate_to_cycles(seg_i.ppg, opt.seconds));
    const SampledSignal ppg_j = min_max_normalize(truncate_to_cycles(seg_j.ppg, opt.seconds));
    const std::size_t length = ppg_i.size();

    std::vector<const SampledSignal*> channels = {&ppg_i, &ppg_j};
    SampledSignal sd_i, sd_j;
    if (opt.input_type == InputType::PpgSdppgWaveform) {
        sd_i = sdppg_channel(ppg_i);
        sd_j = sdppg_channel(ppg_j);
        channels.push_back(&sd_i);
        channels.push_back(&sd_j);
    }

    Example ex;
    ex.x = Tensor({channels.size(), length});
    for (std::size_t c = 0; c < channels.size(); ++c)
        std::copy(channels[c]->samples.begin(), channels[c]->samples.end(), ex.x.row(c));

    if (opt.input_type == InputType::WaveformFeature) {
        const FeatureVector fi = segment_features(seg_i.ppg);
        const FeatureVector fj = segment_features(seg_j.ppg);
        for (std::size_t k = 0; k < FeatureVector::count; ++k) ex.aux.push_back(fi[k]);
        for (std::size_t k = 0; k < FeatureVector::count; ++k) ex.aux.push_back(fj[k]);
    }
    if (opt.include_initial_bp) {
        const double bp = bp_of(seg_i, opt.bp_type);
        if (!(bp > 0.0))
            raise(Err::MissingInitialBp, "segment " + std::to_string(pair.i) + " of patient " +
                                             pair.patient_id + " has no usable initial BP");
        ex.aux.push_back(bp / 200.0);
    }

    ex.y = pair.label_of(opt.bp_type);
    ex.meta = ExampleMeta{pair.patient_id, pair.i, pair.j};
    return ex;
}

AssemblyResult assemble_pairs(const std::vector<PatientSeries>& patients,
                              const std::vector<ChangePair>& pairs, const AssemblyOptions& opt) {
    std::unordered_map<std::string, const PatientSeries*> by_id;
    for (const auto& p : patients) by_id.emplace(p.patient_id, &p);

    AssemblyResult out;
    out.examples.reserve(pairs.size());
    for (const auto& pair : pairs) {
        ++out.attempted;
        const auto it = by_id.find(pair.patient_id);
        if (it == by_id.end())
            raise(Err::IndexOutOfRange, "unknown patient id " + pair.patient_id);
        try {
            const SegmentRecord& a = find_segment(*it->second, pair.i);
            const SegmentRecord& b = find_segment(*it->second, pair.i + pair.j);
            out.examples.push_back(assemble_example(pair, a, b, opt));
        } catch (const Error& e) {
            if (e.kind() == Err::IndexOutOfRange) throw; // a wiring bug, not a data drop
            ++out.dropped;
            ++out.drop_reasons[err_name(e.kind())];
        }
    }
    return out;
}

std::vector<std::size_t> balanced_sample(const std::vector<ChangePair>& pairs, BpType bp_type,
                                         std::size_t per_class, std::uint64_t seed) {
    std::vector<std::size_t> bucket[3];
    for (std::size_t k = 0; k < pairs.size(); ++k)
        bucket[static_cast<int>(pairs[k].label_of(bp_type))].push_back(k);

    std::vector<std::size_t> out;
    out.reserve(3 * per_class);
    for (int c = 0; c < 3; ++c) {
        const auto label = static_cast<ChangeLabel>(c);
        if (bucket[c].size() < per_class)
            throw ClassCountError(c, bucket[c].size(), per_class,
                                  std::string(label_name(label)) + " has " +
                                      std::to_string(bucket[c].size()) + " candidates, need " +
                                      std::to_string(per_class));
        Rng rng = make_rng(seed, fnv1a64(std::string("sample.") + label_name(label)));
        for (const std::size_t k : sample_without_replacement(bucket[c].size(), per_class, rng))
            out.push_back(bucket[c][k]);
    }
    return out;
}

DatasetSplit split_train_val(const std::vector<std::size_t>& ids, double fraction,
                             std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction < 1.0))
        raise(Err::InvalidConfig, "split fraction must lie in (0, 1)");
    if (ids.size() < 2) raise(Err::TooFewExamples, "need at least two ids to split");

    std::vector<std::size_t> shuffled = ids;
    Rng rng = make_rng(seed, fnv1a64("split.train-val"));
    shuffle_vec(shuffled, rng);

    auto n_train = static_cast<std::size_t>(
        std::llround(fraction * static_cast<double>(shuffled.size())));
    n_train = std::clamp<std::size_t>(n_train, 1, shuffled.size() - 1);

    DatasetSplit split;
    split.train.assign(shuffled.begin(), shuffled.begin() + static_cast<std::ptrdiff_t>(n_train));
    split.val.assign(shuffled.begin() + static_cast<std::ptrdiff_t>(n_train), shuffled.end());
    std::sort(split.train.begin(), split.train.end());
    std::sort(split.val.begin(), split.val.end());
    return split;
}

std::vector<std::vector<std::size_t>> kfold(const std::vector<std::size_t>& ids, std::size_t k,
                                            std::uint64_t seed) {
    if (k < 2) raise(Err::InvalidConfig, "cross-validation needs at least two folds");
    if (ids.size() < k)
        raise(Err::TooFewExamples, std::to_string(ids.size()) + " ids cannot fill " +
                                       std::to_string(k) + " folds");

    std::vector<std::size_t> shuffled = ids;
    Rng rng = make_rng(seed, fnv1a64("split.kfold"));
    shuffle_vec(shuffled, rng);

    std::vector<std::vector<std::size_t>> folds(k);
    const std::size_t base = shuffled.size() / k;
    const std::size_t rem = shuffled.size() % k;
    std::size_t at = 0;
    for (std::size_t f = 0; f < k; ++f) {
        const std::size_t take = base + (f < rem ? 1 : 0);
        folds[f].assign(shuffled.begin() + static_cast<std::ptrdiff_t>(at),
                        shuffled.begin() + static_cast<std::ptrdiff_t>(at + take));
        std::sort(folds[f].begin(), folds[f].end());
        at += take;
    }
    return folds;
}

AssemblyResult build_test_II(const std::vector<PatientSeries>& patients,
                             const Thresholds& thresholds, const AssemblyOptions& opt,
                             const std::set<std::string>& excluded_patients) {
    std::vector<ChangePair> pairs;
    for (const auto& series : patients) {
        if (excluded_patients.count(series.patient_id))
            raise(Err::InvalidConfig,
                  "patient " + series.patient_id + " already belongs to the training cohort");
        auto labeled = label_patient(series.segments, thresholds);
        pairs.insert(pairs.end(), labeled.begin(), labeled.end());
    }
    return assemble_pairs(patients, pairs, opt);
}

namespace {

constexpr char kMagic[8] = {'B', 'P', 'S', 'H', 'I', 'F', 'T', '1'};

void put_u32(std::ostream& f, std::uint32_t v) {
    const char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                       static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
    f.write(b, 4);
}

std::uint32_t get_u32(std::istream& f) {
    unsigned char b[4];
    f.read(reinterpret_cast<char*>(b), 4);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void put_f32(std::ostream& f, double v) {
    const auto x = static_cast<float>(v);
    std::uint32_t bits;
    std::memcpy(&bits, &x, 4);
    put_u32(f, bits);
}

double get_f32(std::istream& f) {
    const std::uint32_t bits = get_u32(f);
    float x;
    std::memcpy(&x, &bits, 4);
    return static_cast<double>(x);
}

json options_json(const AssemblyOptions& opt) {
    return json{{"input_type", input_type_name(opt.input_type)},
                {"bp_type", bp_type_name(opt.bp_type)},
                {"seconds", opt.seconds},
                {"include_initial_bp", opt.include_initial_bp}};
}

} // namespace

void write_examples(const std::string& manifest_path, const std::string& sidecar_path,
                    const std::vector<Example>& examples, const AssemblyOptions& opt,
                    const AssemblyResult* stats) {
    std::size_t channels = 0, length = 0;
    if (!examples.empty()) {
        channels = examples.front().x.dim(0);
        length = examples.front().x.dim(1);
        for (const auto& ex : examples)
            require_shape(ex.x, {channels, length}, "dataset example");
    }

    const std::string side_tmp = sidecar_path + ".tmp";
    {
        std::ofstream f(side_tmp, std::ios::binary | std::ios::trunc);
        if (!f) raise(Err::IoError, "cannot open " + side_tmp + " for writing");
        f.write(kMagic, 8);
        put_u32(f, static_cast<std::uint32_t>(examples.size()));
        put_u32(f, static_cast<std::uint32_t>(channels));
        put_u32(f, static_cast<std::uint32_t>(length));
        for (const auto& ex : examples)
            for (const double v : ex.x.data) put_f32(f, v);
        if (!f) raise(Err::IoError, "short write to " + side_tmp);
    }
    std::filesystem::rename(side_tmp, sidecar_path);

    json header = {{"kind", "dataset"},
                   {"examples", examples.size()},
                   {"channels", channels},
                   {"length", length},
                   {"options", options_json(opt)},
                   {"attempted", stats ? stats->attempted : examples.size()},
                   {"dropped", stats ? stats->dropped : 0},
                   {"drop_reasons", json::object()}};
    if (stats)
        for (const auto& [reason, count] : stats->drop_reasons)
            header["drop_reasons"][reason] = count;

    const std::string man_tmp = manifest_path + ".tmp";
    {
        std::ofstream f(man_tmp, std::ios::trunc);
        if (!f) raise(Err::IoError, "cannot open " + man_tmp + " for writing");
        f << header.dump() << "\n";
        for (const auto& ex : examples) {
            const json line = {{"kind", "example"},
                               {"patient_id", ex.meta.patient_id},
                               {"i", ex.meta.i},
                               {"j", ex.meta.j},
                               {"label", label_name(ex.y)},
                               {"aux", ex.aux}};
            f << line.dump() << "\n";
        }
        if (!f) raise(Err::IoError, "short write to " + man_tmp);
    }
    std::filesystem::rename(man_tmp, manifest_path);
}

LoadedDataset read_examples(const std::string& manifest_path, const std::string& sidecar_path) {
    std::ifstream mf(manifest_path);
    if (!mf) raise(Err::IoError, "cannot open " + manifest_path);
    std::string line;
    if (!std::getline(mf, line)) raise(Err::IoError, manifest_path + " is empty");

    json header = json::parse(line, nullptr, false);
    if (header.is_discarded() || header.value("kind", "") != "dataset")
        raise(Err::IoError, manifest_path + " does not start with a dataset header");

    LoadedDataset out;
    const auto n = header.at("examples").get<std::size_t>();
    const auto channels = header.at("channels").get<std::size_t>();
    const auto length = header.at("length").get<std::size_t>();
    const json& jopt = header.at("options");
    out.options.input_type = parse_input_type(jopt.at("input_type").get<std::string>());
    out.options.bp_type = parse_bp_type(jopt.at("bp_type").get<std::string>());
    out.options.seconds = jopt.at("seconds").get<double>();
    out.options.include_initial_bp = jopt.at("include_initial_bp").get<bool>();
    out.attempted = header.value("attempted", n);
    out.dropped = header.value("dropped", std::size_t{0});

    out.examples.reserve(n);
    while (std::getline(mf, line)) {
        if (line.empty()) continue;
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded() || j.value("kind", "") != "example")
            raise(Err::IoError, manifest_path + " has a malformed example line");
        Example ex;
        ex.meta.patient_id = j.at("patient_id").get<std::string>();
        ex.meta.i = j.at("i").get<int>();
        ex.meta.j = j.at("j").get<int>();
        ex.y = parse_label(j.at("label").get<std::string>());
        ex.aux = j.at("aux").get<std::vector<double>>();
        out.examples.push_back(std::move(ex));
    }
    if (out.examples.size() != n)
        raise(Err::IoError, manifest_path + " lists " + std::to_string(out.examples.size()) +
                                " examples, header says " + std::to_string(n));

    std::ifstream sf(sidecar_path, std::ios::binary);
    if (!sf) raise(Err::IoError, "cannot open " + sidecar_path);
    char magic[8];
    sf.read(magic, 8);
    if (!sf || std::memcmp(magic, kMagic, 8) != 0)
        raise(Err::IoError, sidecar_path + " has a bad magic header");
    if (get_u32(sf) != n || get_u32(sf) != channels || get_u32(sf) != length)
        raise(Err::IoError, sidecar_path + " layout disagrees with the manifest");
    for (auto& ex : out.examples) {
        ex.x = Tensor({channels, length});
        for (double& v : ex.x.data) v = get_f32(sf);
    }
    if (!sf) raise(Err::IoError, sidecar_path + " is truncated");
    return out;
}

} // namespace bpshift

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <vector>

#include "bpshift/dataset.hpp"
#include "bpshift/error.hpp"
#include "bpshift/fiducials.hpp"
#include "bpshift/synth.hpp"

using namespace bpshift;

namespace {

SynthCohort tiny_cohort(std::size_t patients = 3, std::size_t segments = 8) {
    SynthConfig cfg = SynthConfig::oracle();
    cfg.n_patients = patients;
    cfg.segments_per_patient = segments;
    return gen_cohort(cfg);
}

std::vector<ChangePair> labeled_pairs(const std::vector<PatientSeries>& patients) {
    std::vector<ChangePair> out;
    for (const PatientSeries& p : patients) {
        const auto pairs = label_patient(p.segments, Thresholds{});
        out.insert(out.end(), pairs.begin(), pairs.end());
    }
    return out;
}

// Pairs with hand-set labels; only the label matters for sampling.
std::vector<ChangePair> fake_pairs(std::size_t spike, std::size_t stable, std::size_t dip) {
    std::vector<ChangePair> out;
    auto push = [&](ChangeLabel l, std::size_t n) {
        for (std::size_t k = 0; k < n; ++k) {
            ChangePair p;
            p.patient_id = "p";
            p.i = 1;
            p.j = 1;
            p.label_mbp = l;
            out.push_back(p);
        }
    };
    push(ChangeLabel::Spike, spike);
    push(ChangeLabel::Stable, stable);
    push(ChangeLabel::Dip, dip);
    return out;
}

std::string tmp_file(const char* name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

} // namespace

TEST_CASE("input type names, parsing, and channel counts") {
    CHECK(std::string(input_type_name(InputType::PpgWaveform)) == "ppg");
    CHECK(std::string(input_type_name(InputType::WaveformFeature)) == "feat");
    CHECK(std::string(input_type_name(InputType::PpgSdppgWaveform)) == "sdppg");
    CHECK(parse_input_type("ppg") == InputType::PpgWaveform);
    CHECK(parse_input_type("feat") == InputType::WaveformFeature);
    CHECK(parse_input_type("sdppg") == InputType::PpgSdppgWaveform);
    CHECK(input_channels(InputType::PpgWaveform) == 2);
    CHECK(input_channels(InputType::WaveformFeature) == 2);
    CHECK(input_channels(InputType::PpgSdppgWaveform) == 4);
    CHECK_THROWS_AS(static_cast<void>(parse_input_type("spectrogram")), Error);
}

TEST_CASE("group_by_patient keeps first-appearance order and sorts by index") {
    std::vector<SegmentRecord> flat;
    auto add = [&](const char* id, int index) {
        SegmentRecord s;
        s.patient_id = id;
        s.index = index;
        s.sbp = 120.0;
        s.dbp = 80.0;
        s.mbp = mean_bp(120.0, 80.0);
        flat.push_back(s);
    };
    add("b", 2);
    add("a", 1);
    add("b", 1);
    add("a", 2);
    const auto groups = group_by_patient(flat);
    REQUIRE(groups.size() == 2);
    CHECK(groups[0].patient_id == "b");
    CHECK(groups[1].patient_id == "a");
    CHECK(groups[0].segments[0].index == 1);
    CHECK(groups[0].segments[1].index == 2);
}

TEST_CASE("assembled examples have the contracted shapes") {
    const SynthCohort cohort = tiny_cohort(1, 3);
    const auto patients = group_by_patient(cohort.segments);
    const auto pairs = label_patient(patients[0].segments, Thresholds{});
    const SegmentRecord& s1 = patients[0].segments[0];
    const SegmentRecord& s2 = patients[0].segments[1];

    AssemblyOptions opt;
    for (auto [type, channels] : {std::pair{InputType::PpgWaveform, std::size_t{2}},
                                  std::pair{InputType::WaveformFeature, std::size_t{2}},
                                  std::pair{InputType::PpgSdppgWaveform, std::size_t{4}}}) {
        opt.input_type = type;
        for (double seconds : {3.0, 5.0, 7.0}) {
            opt.seconds = seconds;
            const Example ex = assemble_example(pairs[0], s1, s2, opt);
            const auto want_len = static_cast<std::size_t>(seconds * 125.0);
            REQUIRE(ex.x.shape == std::vector<std::size_t>{channels, want_len});
            const std::size_t want_aux = type == InputType::WaveformFeature ? 10 : 0;
            CHECK(ex.aux.size() == want_aux);
            CHECK(ex.meta.patient_id == "p0001");
            CHECK(ex.meta.i == 1);
            CHECK(ex.meta.j == 1);
            CHECK(ex.y == pairs[0].label_mbp);
            // Every channel is min-max normalized onto [0, 1] and spans it.
            for (std::size_t c = 0; c < channels; ++c) {
                double lo = 1e300, hi = -1e300;
                for (std::size_t t = 0; t < want_len; ++t) {
                    lo = std::min(lo, ex.x(c, t));
                    hi = std::max(hi, ex.x(c, t));
                }
                CHECK(lo == doctest::Approx(0.0).epsilon(1e-12));
                CHECK(hi == doctest::Approx(1.0).epsilon(1e-12));
            }
        }
    }
}

TEST_CASE("aux layout: five features per segment, initial BP last") {
    const SynthCohort cohort = tiny_cohort(1, 3);
    const auto patients = group_by_patient(cohort.segments);
    const auto pairs = label_patient(patients[0].segments, Thresholds{});
    const SegmentRecord& s1 = patients[0].segments[0];
    const SegmentRecord& s2 = patients[0].segments[1];

    AssemblyOptions opt;
    opt.input_type = InputType::WaveformFeature;
    opt.bp_type = BpType::Mbp;
    const Example plain = assemble_example(pairs[0], s1, s2, opt);
    REQUIRE(plain.aux.size() == 10);

    opt.include_initial_bp = true;
    const Example with_bp = assemble_example(pairs[0], s1, s2, opt);
    REQUIRE(with_bp.aux.size() == 11);
    for (std::size_t k = 0; k < 10; ++k) CHECK(with_bp.aux[k] == plain.aux[k]);
    CHECK(with_bp.aux[10] == doctest::Approx(s1.mbp / 200.0).epsilon(1e-12));

    opt.bp_type = BpType::Sbp;
    const auto sbp_pairs = label_patient(patients[0].segments, Thresholds{});
    const Example sbp_ex = assemble_example(sbp_pairs[0], s1, s2, opt);
    CHECK(sbp_ex.aux[10] == doctest::Approx(s1.sbp / 200.0).epsilon(1e-12));
    CHECK(sbp_ex.y == sbp_pairs[0].label_sbp);

    // The first five aux entries describe the initial segment, the next five
    // the later one; both are the full-segment feature means.
    const FeatureVector f1 = segment_features(s1.ppg);
    const FeatureVector f2 = segment_features(s2.ppg);
    for (std::size_t k = 0; k < 5; ++k) {
        CHECK(plain.aux[k] == doctest::Approx(f1[k]).epsilon(1e-12));
        CHECK(plain.aux[5 + k] == doctest::Approx(f2[k]).epsilon(1e-12));
    }

    // A bare waveform input with conditioning carries exactly one aux scalar.
    opt.input_type = InputType::PpgWaveform;
    opt.bp_type = BpType::Mbp;
    const Example ppg_bp = assemble_example(pairs[0], s1, s2, opt);
    REQUIRE(ppg_bp.aux.size() == 1);
    CHECK(ppg_bp.aux[0] == doctest::Approx(s1.mbp / 200.0).epsilon(1e-12));
}

TEST_CASE("missing initial BP is rejected when conditioning is on") {
    const SynthCohort cohort = tiny_cohort(1, 3);
    const auto patients = group_by_patient(cohort.segments);
    const auto pairs = label_patient(patients[0].segments, Thresholds{});
    SegmentRecord broken = patients[0].segments[0];
    broken.mbp = 0.0;
    AssemblyOptions opt;
    opt.include_initial_bp = true;
    try {
        static_cast<void>(assemble_example(pairs[0], broken, patients[0].segments[1], opt));
        FAIL("expected a missing-BP error");
    } catch (const Error& e) {
        CHECK(e.kind() == Err::MissingInitialBp);
    }
}

TEST_CASE("assemble_example validates pair/segment identity") {
    const SynthCohort cohort = tiny_cohort(1, 4);
    const auto patients = group_by_patient(cohort.segments);
    const auto pairs = label_patient(patients[0].segments, Thresholds{});
    AssemblyOptions opt;
    // Wrong later segment for pair (1,1).
    CHECK_THROWS_AS(static_cast<void>(assemble_example(pairs[0], patients[0].segments[0],
                                                       patients[0].segments[2], opt)),
                    Error);
}

TEST_CASE("assemble_pairs tallies drops and keeps wiring errors fatal") {
    const SynthCohort cohort = tiny_cohort(2, 4);
    auto patients = group_by_patient(cohort.segments);
    auto pairs = labeled_pairs(patients);
    AssemblyOptions opt;
    const AssemblyResult res = assemble_pairs(patients, pairs, opt);
    CHECK(res.attempted == pairs.size());
    CHECK(res.examples.size() + res.dropped == res.attempted);
    CHECK(res.dropped == 0);

    // A flat-lined segment cannot be truncated; the pair is dropped, tallied.
    auto broken = patients;
    broken[0].segments[0].ppg.samples.assign(1250, 1.0);
    const AssemblyResult res2 = assemble_pairs(broken, pairs, opt);
    CHECK(res2.attempted == pairs.size());
    CHECK(res2.dropped == 3); // pairs (1,1), (1,2), (1,3)
    std::size_t tallied = 0;
    for (const auto& [reason, count] : res2.drop_reasons) tallied += count;
    CHECK(tallied == res2.dropped);

    // A pair naming a segment that does not exist is a caller bug.
    ChangePair ghost = pairs[0];
    ghost.i = 9;
    try {
        static_cast<void>(assemble_pairs(patients, {ghost}, opt));
        FAIL("expected an index error");
    } catch (const Error& e) {
        CHECK(e.kind() == Err::IndexOutOfRange);
    }
}

TEST_CASE("balanced_sample returns exact class blocks deterministically") {
    const auto pairs = fake_pairs(20, 30, 10);
    const auto ids = balanced_sample(pairs, BpType::Mbp, 10, 42);
    REQUIRE(ids.size() == 30);
    for (std::size_t k = 0; k < 10; ++k) CHECK(pairs[ids[k]].label_mbp == ChangeLabel::Spike);
    for (std::size_t k = 10; k < 20; ++k) CHECK(pairs[ids[k]].label_mbp == ChangeLabel::Stable);
    for (std::size_t k = 20; k < 30; ++k) CHECK(pairs[ids[k]].label_mbp == ChangeLabel::Dip);
    std::set<std::size_t> unique(ids.begin(), ids.end());
    CHECK(unique.size() == ids.size());
    CHECK(balanced_sample(pairs, BpType::Mbp, 10, 42) == ids);
    CHECK(balanced_sample(pairs, BpType::Mbp, 10, 43) != ids);
}

TEST_CASE("balanced_sample reports the starved class") {
    const auto pairs = fake_pairs(20, 30, 10);
    try {
        static_cast<void>(balanced_sample(pairs, BpType::Mbp, 11, 1));
        FAIL("expected a class-count error");
    } catch (const ClassCountError& e) {
        CHECK(e.kind() == Err::InsufficientClassCount);
        CHECK(e.label() == static_cast<int>(ChangeLabel::Dip));
        CHECK(e.have() == 10);
        CHECK(e.need() == 11);
    }
}

TEST_CASE("split_train_val proportions, determinism, and clamping") {
    std::vector<std::size_t> ids(10);
    for (std::size_t k = 0; k < 10; ++k) ids[k] = k * 7; // arbitrary labels
    const DatasetSplit s = split_train_val(ids, 0.8, 9);
    CHECK(s.train.size() == 8);
    CHECK(s.val.size() == 2);
    CHECK(std::is_sorted(s.train.begin(), s.train.end()));
    CHECK(std::is_sorted(s.val.begin(), s.val.end()));
    std::set<std::size_t> all(s.train.begin(), s.train.end());
    all.insert(s.val.begin(), s.val.end());
    CHECK(all.size() == 10);
    for (std::size_t v : ids) CHECK(all.count(v) == 1);

    const DatasetSplit again = split_train_val(ids, 0.8, 9);
    CHECK(again.train == s.train);
    CHECK(again.val == s.val);

    CHECK(split_train_val(ids, 0.999, 1).train.size() == 9);
    CHECK(split_train_val(ids, 0.001, 1).train.size() == 1);
    CHECK_THROWS_AS(static_cast<void>(split_train_val({1}, 0.8, 1)), Error);
}

TEST_CASE("kfold covers the ids with near-equal sorted folds") {
    std::vector<std::size_t> ids(101);
    for (std::size_t k = 0; k < ids.size(); ++k) ids[k] = k;
    const auto folds = kfold(ids, 5, 7);
    REQUIRE(folds.size() == 5);
    CHECK(folds[0].size() == 21);
    for (std::size_t f = 1; f < 5; ++f) CHECK(folds[f].size() == 20);
    std::set<std::size_t> all;
    for (const auto& f : folds) {
        CHECK(std::is_sorted(f.begin(), f.end()));
        all.insert(f.begin(), f.end());
    }
    CHECK(all.size() == 101);
    CHECK(kfold(ids, 5, 7) == folds);
    CHECK(kfold(ids, 5, 8) != folds);
    CHECK_THROWS_AS(static_cast<void>(kfold(ids, 1, 7)), Error);
    CHECK_THROWS_AS(static_cast<void>(kfold({1, 2}, 3, 7)), Error);
}

TEST_CASE("build_test_II keeps natural imbalance and refuses cohort overlap") {
    const SynthCohort cohort = tiny_cohort(3, 8);
    const auto patients = group_by_patient(cohort.segments);
    AssemblyOptions opt;
    const AssemblyResult res = build_test_II(patients, Thresholds{}, opt, {"someone-else"});
    CHECK(res.attempted == 3 * (8 * 7) / 2);
    CHECK(res.examples.size() == res.attempted - res.dropped);
    // Natural class mix: Stable dominates a random walk at default thresholds.
    std::size_t stable = 0;
    for (const Example& ex : res.examples) stable += ex.y == ChangeLabel::Stable;
    CHECK(stable > res.examples.size() / 2);

    try {
        static_cast<void>(build_test_II(patients, Thresholds{}, opt, {"p0002"}));
        FAIL("expected an overlap refusal");
    } catch (const Error& e) {
        CHECK(e.kind() == Err::InvalidConfig);
    }
}

TEST_CASE("example files round-trip") {
    const SynthCohort cohort = tiny_cohort(2, 4);
    const auto patients = group_by_patient(cohort.segments);
    const auto pairs = labeled_pairs(patients);
    AssemblyOptions opt;
    opt.input_type = InputType::WaveformFeature;
    opt.include_initial_bp = true;
    opt.seconds = 5.0;
    const AssemblyResult res = assemble_pairs(patients, pairs, opt);
    REQUIRE(!res.examples.empty());

    const std::string manifest = tmp_file("bpshift_ds_manifest.ndjson");
    const std::string sidecar = tmp_file("bpshift_ds_sidecar.bin");
    write_examples(manifest, sidecar, res.examples, opt, &res);

    const LoadedDataset back = read_examples(manifest, sidecar);
    REQUIRE(back.examples.size() == res.examples.size());
    CHECK(back.options.input_type == opt.input_type);
    CHECK(back.options.bp_type == opt.bp_type);
    CHECK(back.options.seconds == opt.seconds);
    CHECK(back.options.include_initial_bp == opt.include_initial_bp);
    CHECK(back.attempted == res.attempted);
    CHECK(back.dropped == res.dropped);
    for (std::size_t k = 0; k < back.examples.size(); ++k) {
        const Example& a = res.examples[k];
        const Example& b = back.examples[k];
        CHECK(a.y == b.y);
        CHECK(a.meta.patient_id == b.meta.patient_id);
        CHECK(a.meta.i == b.meta.i);
        CHECK(a.meta.j == b.meta.j);
        REQUIRE(a.x.shape == b.x.shape);
        for (std::size_t t = 0; t < a.x.numel(); ++t)
            CHECK(b.x.data[t] == doctest::Approx(a.x.data[t]).epsilon(1e-6));
        REQUIRE(a.aux.size() == b.aux.size());
        for (std::size_t t = 0; t < a.aux.size(); ++t)
            CHECK(b.aux[t] == doctest::Approx(a.aux[t]).epsilon(1e-12));
    }

    // Re-writing the same dataset produces byte-identical files.
    const std::string manifest2 = tmp_file("bpshift_ds_manifest2.ndjson");
    const std::string sidecar2 = tmp_file("bpshift_ds_sidecar2.bin");
    write_examples(manifest2, sidecar2, res.examples, opt, &res);
    auto slurp = [](const std::string& p) {
        std::ifstream in(p, std::ios::binary);
        return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    };
    CHECK(slurp(manifest) == slurp(manifest2));
    CHECK(slurp(sidecar) == slurp(sidecar2));

    for (const auto& p : {manifest, sidecar, manifest2, sidecar2}) std::filesystem::remove(p);
}

TEST_CASE("corrupt example files are rejected") {
    const SynthCohort cohort = tiny_cohort(1, 3);
    const auto patients = group_by_patient(cohort.segments);
    const auto pairs = labeled_pairs(patients);
    AssemblyOptions opt;
    const AssemblyResult res = assemble_pairs(patients, pairs, opt);
    const std::string manifest = tmp_file("bpshift_bad_manifest.ndjson");
    const std::string sidecar = tmp_file("bpshift_bad_sidecar.bin");
    write_examples(manifest, sidecar, res.examples, opt, &res);

    // Truncate the sidecar.
    {
        std::ifstream in(sidecar, std::ios::binary);
        std::string bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>{});
        std::ofstream out(sidecar, std::ios::binary | std::ios::trunc);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
    }
    try {
        static_cast<void>(read_examples(manifest, sidecar));
        FAIL("expected a truncation error");
    } catch (const Error& e) {
        CHECK(e.kind() == Err::IoError);
    }

    // Break the magic.
    write_examples(manifest, sidecar, res.examples, opt, &res);
    {
        std::fstream f(sidecar, std::ios::binary | std::ios::in | std::ios::out);
        f.seekp(0);
        f.write("XXXXXXXX", 8);
    }
    try {
        static_cast<void>(read_examples(manifest, sidecar));
        FAIL("expected a magic error");
    } catch (const Error& e) {
        CHECK(e.kind() == Err::IoError);
    }

    CHECK_THROWS_AS(static_cast<void>(read_examples(tmp_file("bpshift_missing.ndjson"), sidecar)),
                    Error);
    std::filesystem::remove(manifest);
    std::filesystem::remove(sidecar);
}

TEST_CASE("sdppg channels differ from their ppg channels") {
    const SynthCohort cohort = tiny_cohort(1, 3);
    const auto patients = group_by_patient(cohort.segments);
    const auto pairs = label_patient(patients[0].segments, Thresholds{});
    AssemblyOptions opt;
    opt.input_type = InputType::PpgSdppgWaveform;
    const Example ex =
        assemble_example(pairs[0], patients[0].segments[0], patients[0].segments[1], opt);
    REQUIRE(ex.x.dim(0) == 4);
    double diff = 0.0;
    for (std::size_t t = 0; t < ex.x.dim(1); ++t) diff += std::abs(ex.x(0, t) - ex.x(2, t));
    CHECK(diff > 1.0);
}

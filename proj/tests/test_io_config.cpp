#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "bpshift/config.hpp"
#include "bpshift/error.hpp"
#include "bpshift/pipeline.hpp"
#include "bpshift/segment_io.hpp"
#include "bpshift/synth.hpp"

using namespace bpshift;

namespace {

std::filesystem::path tmp_path(const std::string& stem) {
    return std::filesystem::temp_directory_path() / ("bpshift_io_" + stem);
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::trunc | std::ios::binary);
    f << text;
}

std::string slurp(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Err thrown_kind(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.kind();
    }
    FAIL("expected an Error");
    return Err::IoError;
}

} // namespace

TEST_CASE("scalar segments survive a write/read round trip") {
    SynthConfig cfg = SynthConfig::oracle();
    cfg.n_patients = 2;
    cfg.segments_per_patient = 4;
    cfg.seed = 5;
    const SynthCohort cohort = gen_cohort(cfg);
    const auto path = tmp_path("scalar.ndjson");
    write_segments_ndjson(path.string(), cohort.segments);

    IngestStats stats;
    const auto back = read_segments_ndjson(path.string(), &stats);
    CHECK(stats.read == cohort.segments.size());
    CHECK(stats.kept == cohort.segments.size());
    CHECK(stats.dropped == 0);
    REQUIRE(back.size() == cohort.segments.size());
    for (std::size_t k = 0; k < back.size(); ++k) {
        CHECK(back[k].patient_id == cohort.segments[k].patient_id);
        CHECK(back[k].index == cohort.segments[k].index);
        CHECK(back[k].ppg.fs == cohort.segments[k].ppg.fs);
        CHECK(back[k].ppg.samples == cohort.segments[k].ppg.samples);
        CHECK(back[k].sbp == cohort.segments[k].sbp);
        CHECK(back[k].dbp == cohort.segments[k].dbp);
        CHECK(back[k].mbp == doctest::Approx(mean_bp(back[k].sbp, back[k].dbp)).epsilon(1e-15));
    }
    std::filesystem::remove(path);
}

TEST_CASE("waveform-BP segments are summarized on read") {
    SynthConfig cfg = SynthConfig::oracle();
    cfg.n_patients = 1;
    cfg.segments_per_patient = 4;
    cfg.seed = 7;
    const SynthCohort cohort = gen_cohort(cfg);
    REQUIRE(cohort.abp.size() == cohort.segments.size());
    const auto path = tmp_path("abp.ndjson");
    write_segments_ndjson(path.string(), cohort.segments, &cohort.abp);

    const auto back = read_segments_ndjson(path.string());
    REQUIRE(back.size() == cohort.segments.size());
    for (std::size_t k = 0; k < back.size(); ++k) {
        // Summaries come from the rendered pressure wave, not the stored
        // scalars, so they agree only to the rendering tolerance.
        CHECK(back[k].sbp == doctest::Approx(cohort.segments[k].sbp).epsilon(0.01));
        CHECK(back[k].dbp == doctest::Approx(cohort.segments[k].dbp).epsilon(0.01));
        CHECK(back[k].mbp == doctest::Approx(mean_bp(back[k].sbp, back[k].dbp)).epsilon(1e-15));
    }
    std::filesystem::remove(path);
}

TEST_CASE("retained segments are renumbered per patient in original order") {
    SynthConfig cfg = SynthConfig::oracle();
    cfg.n_patients = 1;
    cfg.segments_per_patient = 4;
    const SynthCohort cohort = gen_cohort(cfg);

    // Sparse, interleaved original indices for two patients.
    std::vector<SegmentRecord> segs;
    const int pa_idx[3] = {9, 2, 5};
    const int pb_idx[2] = {4, 3};
    for (int k = 0; k < 3; ++k) {
        SegmentRecord s = cohort.segments[k];
        s.patient_id = "pa";
        s.index = pa_idx[k];
        segs.push_back(s);
    }
    for (int k = 0; k < 2; ++k) {
        SegmentRecord s = cohort.segments[k];
        s.patient_id = "pb";
        s.index = pb_idx[k];
        segs.push_back(s);
    }
    const auto path = tmp_path("renumber.ndjson");
    write_segments_ndjson(path.string(), segs);
    const auto back = read_segments_ndjson(path.string());
    REQUIRE(back.size() == 5);
    // File order is preserved; indices become the per-patient rank.
    CHECK(back[0].patient_id == "pa");
    CHECK(back[0].index == 3); // original 9 is the latest of {2, 5, 9}
    CHECK(back[1].index == 1); // original 2
    CHECK(back[2].index == 2); // original 5
    CHECK(back[3].patient_id == "pb");
    CHECK(back[3].index == 2); // original 4
    CHECK(back[4].index == 1); // original 3
    std::filesystem::remove(path);
}

TEST_CASE("unusable segments are dropped and tallied by reason") {
    SynthConfig cfg = SynthConfig::oracle();
    cfg.n_patients = 1;
    cfg.segments_per_patient = 2;
    const SynthCohort cohort = gen_cohort(cfg);
    const SegmentRecord& good = cohort.segments[0];

    nlohmann::json good_line = {{"patient_id", "pa"},
                                {"index", 1},
                                {"fs", good.ppg.fs},
                                {"ppg", good.ppg.samples},
                                {"sbp", 120.0},
                                {"dbp", 80.0}};
    nlohmann::json inverted = good_line;
    inverted["index"] = 2;
    inverted["sbp"] = 70.0; // below the diastolic value
    nlohmann::json flat_abp = good_line;
    flat_abp["index"] = 3;
    flat_abp.erase("sbp");
    flat_abp.erase("dbp");
    flat_abp["abp"] = std::vector<double>(1250, 90.0);
    nlohmann::json short_abp = good_line;
    short_abp["index"] = 4;
    short_abp.erase("sbp");
    short_abp.erase("dbp");
    short_abp["abp"] = std::vector<double>{80.0, 90.0, 100.0, 90.0};

    const auto path = tmp_path("drops.ndjson");
    write_text(path, good_line.dump() + "\n" + inverted.dump() + "\n" + flat_abp.dump() + "\n" +
                         short_abp.dump() + "\n");
    IngestStats stats;
    const auto back = read_segments_ndjson(path.string(), &stats);
    CHECK(back.size() == 1);
    CHECK(stats.read == 4);
    CHECK(stats.kept == 1);
    CHECK(stats.dropped == 3);
    CHECK(stats.drop_reasons.at("InvalidBp") == 1);
    CHECK(stats.drop_reasons.at("NoBeatsFound") == 1);
    CHECK(stats.drop_reasons.at("SignalTooShort") == 1);
    std::filesystem::remove(path);
}

TEST_CASE("schema violations fail the whole read") {
    SynthConfig cfg = SynthConfig::oracle();
    cfg.n_patients = 1;
    cfg.segments_per_patient = 2;
    const SynthCohort cohort = gen_cohort(cfg);
    nlohmann::json base = {{"patient_id", "pa"},
                           {"index", 1},
                           {"fs", 125.0},
                           {"ppg", cohort.segments[0].ppg.samples},
                           {"sbp", 120.0},
                           {"dbp", 80.0}};
    const auto path = tmp_path("schema.ndjson");
    const auto expect_io_error = [&](const std::string& body) {
        write_text(path, body);
        CHECK(thrown_kind([&] { static_cast<void>(read_segments_ndjson(path.string())); }) ==
              Err::IoError);
    };

    expect_io_error("{not json\n");
    nlohmann::json j = base;
    j.erase("fs");
    expect_io_error(j.dump() + "\n");
    j = base;
    j.erase("dbp"); // sbp alone is not a BP source
    expect_io_error(j.dump() + "\n");
    j = base;
    j["index"] = 0;
    expect_io_error(j.dump() + "\n");
    j = base;
    j["patient_id"] = "";
    expect_io_error(j.dump() + "\n");
    // Duplicate index within one patient.
    expect_io_error(base.dump() + "\n" + base.dump() + "\n");
    CHECK(thrown_kind([] { static_cast<void>(read_segments_ndjson("/nonexistent/x.ndjson")); }) ==
          Err::IoError);
    std::filesystem::remove(path);
}

TEST_CASE("feature rows and their csv layout") {
    SynthConfig cfg = SynthConfig::oracle();
    cfg.n_patients = 1;
    cfg.segments_per_patient = 3;
    cfg.seed = 3;
    const SynthCohort cohort = gen_cohort(cfg);
    IngestStats stats;
    const auto rows = compute_feature_rows(cohort.segments, &stats);
    CHECK(stats.read == 3);
    CHECK(stats.kept == rows.size());
    REQUIRE(!rows.empty());
    CHECK(rows[0].patient_id == "p0001");
    CHECK(rows[0].index == 1);

    const auto path = tmp_path("features.csv");
    write_features_csv(path.string(), rows);
    std::ifstream in(path);
    std::string line;
    REQUIRE(std::getline(in, line));
    CHECK(line == "patient_id,index,b_over_a,slope_bc,slope_bd,agi,agi_mod");
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        CHECK(line.rfind("p0001,", 0) == 0);
        CHECK(std::count(line.begin(), line.end(), ',') == 6);
    }
    CHECK(n == rows.size());
    std::filesystem::remove(path);
}

TEST_CASE("labeled pairs survive a write/read round trip") {
    std::vector<SegmentRecord> segs;
    const double bp[4][2] = {{100, 60}, {140, 70}, {95, 58}, {121, 81}};
    for (int k = 0; k < 4; ++k) {
        SegmentRecord s;
        s.patient_id = "pa";
        s.index = k + 1;
        s.sbp = bp[k][0];
        s.dbp = bp[k][1];
        s.mbp = mean_bp(s.sbp, s.dbp);
        segs.push_back(s);
    }
    Thresholds th;
    th.sbp = 25.0;
    const auto pairs = label_patient(segs, th);
    const auto path = tmp_path("pairs.ndjson");
    write_pairs_ndjson(path.string(), pairs);
    const auto back = read_pairs_ndjson(path.string());
    REQUIRE(back.size() == pairs.size());
    for (std::size_t k = 0; k < pairs.size(); ++k) {
        CHECK(back[k].patient_id == pairs[k].patient_id);
        CHECK(back[k].i == pairs[k].i);
        CHECK(back[k].j == pairs[k].j);
        CHECK(back[k].delta_sbp == pairs[k].delta_sbp);
        CHECK(back[k].delta_dbp == pairs[k].delta_dbp);
        CHECK(back[k].delta_mbp == pairs[k].delta_mbp);
        CHECK(back[k].label_sbp == pairs[k].label_sbp);
        CHECK(back[k].label_dbp == pairs[k].label_dbp);
        CHECK(back[k].label_mbp == pairs[k].label_mbp);
        CHECK(back[k].thresholds.sbp == pairs[k].thresholds.sbp);
        CHECK(back[k].thresholds.dbp == pairs[k].thresholds.dbp);
        CHECK(back[k].thresholds.mbp == pairs[k].thresholds.mbp);
    }
    std::filesystem::remove(path);
}

TEST_CASE("file hashes use 64-bit FNV-1a hex") {
    const auto path = tmp_path("hash.bin");
    write_text(path, "a");
    CHECK(file_hash_hex(path.string()) == "af63dc4c8601ec8c");
    write_text(path, "abc");
    const std::string h = file_hash_hex(path.string());
    CHECK(h == "e71fa2190541574b");
    CHECK(h == file_hash_hex(path.string()));
    CHECK(thrown_kind([] { static_cast<void>(file_hash_hex("/nonexistent/x")); }) == Err::IoError);
    std::filesystem::remove(path);
}

TEST_CASE("an empty config text yields the documented defaults") {
    const RunConfig cfg = parse_run_config("", "test");
    CHECK(cfg.seed == 1);
    CHECK(cfg.arch == ArchKind::Encoder);
    CHECK(cfg.input_type == InputType::PpgSdppgWaveform);
    CHECK(cfg.bp_type == BpType::Mbp);
    CHECK(cfg.thresholds.sbp == 30.0);
    CHECK(cfg.thresholds.dbp == 15.0);
    CHECK(cfg.thresholds.mbp == 20.0);
    CHECK(cfg.seconds == 7.0);
    CHECK(cfg.include_initial_bp);
    CHECK(cfg.preset == Preset::Desk);
    CHECK(cfg.per_class == 2000);
    CHECK(cfg.folds == 0);
    CHECK(cfg.model.conv_widths == std::array<std::size_t, 3>{24, 24, 24});
    CHECK(cfg.model.kernel_sizes == std::array<std::size_t, 3>{9, 5, 3});
    CHECK(cfg.model.mlp_width == 500);
    CHECK(cfg.model.dropout == 0.2);
    CHECK(cfg.synth.preset == "learnable");
    CHECK(cfg.sweep.train_per_class == 400);
    CHECK(cfg.sweep.test_per_class == 100);
    CHECK(!cfg.sweep.reuse_model);
}

TEST_CASE("every config field parses and overrides") {
    const std::string text = R"({
        "seed": 7, "arch": "cnn", "input_type": "feat", "bp_type": "sbp",
        "thresholds": {"sbp": 25, "dbp": 10, "mbp": 35},
        "seconds": 5, "include_initial_bp": false, "preset": "paper",
        "per_class": 64, "folds": 5,
        "train": {"epochs": 12, "batch_size": 32, "lr": 0.01, "patience": 3},
        "model": {"conv_widths": [8, 16, 32], "kernel_sizes": [7, 5, 3],
                  "mlp_width": 100, "dropout": 0.1},
        "synth": {"preset": "oracle", "n_patients": 9, "segments_per_patient": 6},
        "sweep": {"train_per_class": 50, "test_per_class": 10, "reuse_model": true}
    })";
    const RunConfig cfg = parse_run_config(text, "test");
    CHECK(cfg.seed == 7);
    CHECK(cfg.arch == ArchKind::Cnn);
    CHECK(cfg.input_type == InputType::WaveformFeature);
    CHECK(cfg.bp_type == BpType::Sbp);
    CHECK(cfg.thresholds.sbp == 25.0);
    CHECK(cfg.thresholds.dbp == 10.0);
    CHECK(cfg.thresholds.mbp == 35.0);
    CHECK(cfg.seconds == 5.0);
    CHECK(!cfg.include_initial_bp);
    CHECK(cfg.preset == Preset::Paper);
    CHECK(cfg.per_class == 64);
    CHECK(cfg.folds == 5);
    CHECK(cfg.model.conv_widths == std::array<std::size_t, 3>{8, 16, 32});
    CHECK(cfg.model.mlp_width == 100);
    CHECK(cfg.synth.preset == "oracle");
    CHECK(cfg.synth.n_patients.value() == 9);
    CHECK(cfg.synth.segments_per_patient.value() == 6);
    CHECK(cfg.sweep.train_per_class == 50);
    CHECK(cfg.sweep.reuse_model);

    // Explicit train overrides beat the preset.
    const TrainConfig tc = resolved_train_config(cfg);
    CHECK(tc.epochs == 12);
    CHECK(tc.batch_size == 32);
    CHECK(tc.lr == 0.01);
    CHECK(tc.patience == 3);
    CHECK(tc.seed == derive_seed(7, fnv1a64("train")));

    const SynthConfig sc = resolved_synth_config(cfg);
    CHECK(sc.n_patients == 9);
    CHECK(sc.segments_per_patient == 6);
    CHECK(sc.seed == derive_seed(7, fnv1a64("synth")));
}

TEST_CASE("bad configs are rejected with ConfigError") {
    const auto rejects = [](const std::string& text) {
        CHECK(thrown_kind([&] { static_cast<void>(parse_run_config(text, "test")); }) ==
              Err::ConfigError);
    };
    rejects(R"({"bogus": 1})");
    rejects(R"({"train": {"nope": 1}})");
    rejects(R"({"thresholds": {"sbp": 50}})"); // grid tops out at 45
    rejects(R"({"thresholds": {"mbp": 2}})");  // grid starts at 5
    rejects(R"({"seed": -3})");
    rejects(R"({"seconds": 4})");
    rejects(R"({"per_class": 0})");
    rejects(R"({"train": {"lr": 0}})");
    rejects(R"({"model": {"dropout": 1.0}})");
    rejects(R"({"model": {"conv_widths": [8, 8]}})");
    rejects(R"({"synth": {"preset": "vitals"}})");
    rejects(R"({"preset": "gpu"})");
    rejects("{");
    rejects("[1, 2]");
    CHECK(thrown_kind([] { static_cast<void>(load_run_config("/nonexistent/cfg.json")); }) ==
          Err::ConfigError);
}

TEST_CASE("the seed environment variable overrides the config") {
    RunConfig cfg;
    cfg.seed = 5;
    ::unsetenv("BPSHIFT_SEED");
    apply_env_seed(cfg);
    CHECK(cfg.seed == 5);
    ::setenv("BPSHIFT_SEED", "42", 1);
    apply_env_seed(cfg);
    CHECK(cfg.seed == 42);
    ::setenv("BPSHIFT_SEED", "abc", 1);
    CHECK(thrown_kind([&] { apply_env_seed(cfg); }) == Err::ConfigError);
    ::setenv("BPSHIFT_SEED", "-5", 1);
    CHECK(thrown_kind([&] { apply_env_seed(cfg); }) == Err::ConfigError);
    ::setenv("BPSHIFT_SEED", "", 1);
    cfg.seed = 9;
    apply_env_seed(cfg);
    CHECK(cfg.seed == 9);
    ::unsetenv("BPSHIFT_SEED");
}

TEST_CASE("presets resolve the published hyperparameters") {
    RunConfig cfg;
    cfg.preset = Preset::Desk;
    cfg.arch = ArchKind::Mlp;
    TrainConfig desk = resolved_train_config(cfg);
    CHECK(desk.epochs == 200);
    CHECK(desk.batch_size == 64);
    CHECK(desk.patience == 20);
    CHECK(desk.lr == 1e-3);

    cfg.preset = Preset::Paper;
    cfg.arch = ArchKind::Encoder;
    TrainConfig paper = resolved_train_config(cfg);
    CHECK(paper.epochs == 1024);
    CHECK(paper.batch_size == 500);
    CHECK(paper.patience == 0);
    CHECK(paper.lr == 1e-4);

    CHECK(default_lr(ArchKind::Mlp) == 1e-3);
    CHECK(default_lr(ArchKind::Cnn) == 1e-3);
    CHECK(default_lr(ArchKind::ResNet) == 1e-3);
    CHECK(default_lr(ArchKind::Encoder) == 1e-4);

    CHECK(std::string(preset_name(Preset::Desk)) == "desk");
    CHECK(std::string(preset_name(Preset::Paper)) == "paper");
    CHECK(parse_preset("desk") == Preset::Desk);
    CHECK(parse_preset("paper") == Preset::Paper);
    CHECK(thrown_kind([] { static_cast<void>(parse_preset("fast")); }) == Err::ConfigError);
}

TEST_CASE("the model spec tracks input type, seconds, and the BP flag") {
    RunConfig cfg;
    cfg.seed = 3;
    cfg.arch = ArchKind::Encoder;

    cfg.input_type = InputType::PpgSdppgWaveform;
    cfg.seconds = 7.0;
    cfg.include_initial_bp = true;
    ModelSpec spec = resolved_model_spec(cfg, 125.0);
    CHECK(spec.kind == ArchKind::Encoder);
    CHECK(spec.input_channels == 4);
    CHECK(spec.input_length == 875);
    CHECK(spec.aux_dim == 1);
    CHECK(spec.include_initial_bp);
    CHECK(spec.init_seed == derive_seed(3, fnv1a64("model-init")));
    spec.validate();

    cfg.input_type = InputType::WaveformFeature;
    cfg.seconds = 5.0;
    spec = resolved_model_spec(cfg, 125.0);
    CHECK(spec.input_channels == 2);
    CHECK(spec.input_length == 625);
    CHECK(spec.aux_dim == 11);
    spec.validate();

    cfg.input_type = InputType::PpgWaveform;
    cfg.seconds = 3.0;
    cfg.include_initial_bp = false;
    spec = resolved_model_spec(cfg, 125.0);
    CHECK(spec.input_channels == 2);
    CHECK(spec.input_length == 375);
    CHECK(spec.aux_dim == 0);
    CHECK(!spec.include_initial_bp);
    spec.validate();

    const AssemblyOptions opt = assembly_options(cfg);
    CHECK(opt.input_type == InputType::PpgWaveform);
    CHECK(opt.bp_type == cfg.bp_type);
    CHECK(opt.seconds == 3.0);
    CHECK(!opt.include_initial_bp);
}

TEST_CASE("config json is a fixed point through parse") {
    RunConfig cfg;
    const std::string j1 = run_config_json(cfg);
    const RunConfig cfg2 = parse_run_config(j1, "roundtrip");
    CHECK(run_config_json(cfg2) == j1);

    RunConfig custom = parse_run_config(
        R"({"seed": 11, "arch": "resnet", "bp_type": "dbp", "preset": "paper",
            "synth": {"preset": "control", "n_patients": 8}})",
        "test");
    const std::string j3 = run_config_json(custom);
    CHECK(run_config_json(parse_run_config(j3, "roundtrip")) == j3);
    const auto parsed = nlohmann::json::parse(j3);
    CHECK(parsed["arch"] == "resnet");
    CHECK(parsed["synth"]["n_patients"] == 8);
}

TEST_CASE("a directory accepts exactly one writer at a time") {
    const auto dir = tmp_path("lockdir");
    std::filesystem::remove_all(dir);
    {
        DirLock lock(dir.string());
        CHECK(std::filesystem::exists(dir / ".bpshift.lock"));
        CHECK(thrown_kind([&] { DirLock second(dir.string()); }) == Err::UsageError);
    }
    CHECK(!std::filesystem::exists(dir / ".bpshift.lock"));
    DirLock third(dir.string()); // released locks can be retaken
    std::filesystem::remove_all(dir);
}

TEST_CASE("run manifests fingerprint inputs and outputs") {
    const auto dir = tmp_path("manifest");
    std::filesystem::create_directories(dir);
    const auto input = dir / "in.txt";
    const auto output = dir / "out.txt";
    write_text(input, "input-bytes");
    write_text(output, "output-bytes");
    RunConfig cfg;
    write_run_manifest(dir.string(), "label", run_config_json(cfg), {input.string()},
                       {output.string()});

    const auto manifest_path = dir / "label.manifest.json";
    REQUIRE(std::filesystem::exists(manifest_path));
    const auto j = nlohmann::json::parse(slurp(manifest_path));
    CHECK(j.at("kind") == "manifest");
    CHECK(j.at("subcommand") == "label");
    CHECK(j.at("config").at("seed") == 1);
    REQUIRE(j.at("inputs").size() == 1);
    CHECK(j["inputs"][0]["path"] == "in.txt");
    CHECK(j["inputs"][0]["hash"] == file_hash_hex(input.string()));
    REQUIRE(j.at("outputs").size() == 1);
    CHECK(j["outputs"][0]["hash"] == file_hash_hex(output.string()));
    std::filesystem::remove_all(dir);
}

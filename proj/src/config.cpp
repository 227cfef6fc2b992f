#include "bpshift/config.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "bpshift/error.hpp"

namespace bpshift {

using nlohmann::json;

const char* preset_name(Preset p) {
    return p == Preset::Paper ? "paper" : "desk";
}

Preset parse_preset(const std::string& s) {
    if (s == "desk") return Preset::Desk;
    if (s == "paper") return Preset::Paper;
    raise(Err::ConfigError, "unknown preset '" + s + "', expected one of {desk, paper}");
}

double default_lr(ArchKind arch) {
    return arch == ArchKind::Encoder ? 1e-4 : 1e-3;
}

TrainConfig resolved_train_config(const RunConfig& cfg) {
    TrainConfig t;
    if (cfg.preset == Preset::Paper) {
        t.epochs = 1024;
        t.batch_size = 500;
        t.patience = 0; // run the full schedule
    } else {
        t.epochs = 200;
        t.batch_size = 64;
        t.patience = 20;
    }
    t.lr = default_lr(cfg.arch);
    if (cfg.train.epochs) t.epochs = *cfg.train.epochs;
    if (cfg.train.batch_size) t.batch_size = *cfg.train.batch_size;
    if (cfg.train.lr) t.lr = *cfg.train.lr;
    if (cfg.train.patience) t.patience = *cfg.train.patience;
    t.seed = derive_seed(cfg.seed, fnv1a64("train"));
    return t;
}

SynthConfig resolved_synth_config(const RunConfig& cfg) {
    SynthConfig s;
    if (cfg.synth.preset == "learnable")
        s = SynthConfig::learnable();
    else if (cfg.synth.preset == "control")
        s = SynthConfig::control();
    else if (cfg.synth.preset == "oracle")
        s = SynthConfig::oracle();
    else
        raise(Err::ConfigError, "unknown synth preset '" + cfg.synth.preset +
                                    "', expected one of {learnable, control, oracle}");
    if (cfg.synth.n_patients) s.n_patients = *cfg.synth.n_patients;
    if (cfg.synth.segments_per_patient) s.segments_per_patient = *cfg.synth.segments_per_patient;
    s.seed = derive_seed(cfg.seed, fnv1a64("synth"));
    return s;
}

ModelSpec resolved_model_spec(const RunConfig& cfg, double fs) {
    ModelSpec spec;
    spec.kind = cfg.arch;
    spec.input_channels = input_channels(cfg.input_type);
    spec.input_length = static_cast<std::size_t>(std::llround(cfg.seconds * fs));
    spec.aux_dim = (cfg.input_type == InputType::WaveformFeature ? 10 : 0) +
                   (cfg.include_initial_bp ? 1 : 0);
    spec.include_initial_bp = cfg.include_initial_bp;
    spec.conv_widths = cfg.model.conv_widths;
    spec.kernel_sizes = cfg.model.kernel_sizes;
    spec.mlp_width = cfg.model.mlp_width;
    spec.dropout = cfg.model.dropout;
    spec.init_seed = derive_seed(cfg.seed, fnv1a64("model-init"));
    return spec;
}

AssemblyOptions assembly_options(const RunConfig& cfg) {
    AssemblyOptions opt;
    opt.input_type = cfg.input_type;
    opt.bp_type = cfg.bp_type;
    opt.seconds = cfg.seconds;
    opt.include_initial_bp = cfg.include_initial_bp;
    return opt;
}

namespace {

void check_known_keys(const json& obj, const std::set<std::string>& known,
                      const std::string& where) {
    for (const auto& [key, value] : obj.items())
        if (!known.count(key))
            raise(Err::ConfigError, where + ": unknown field '" + key + "'");
}

std::uint64_t read_seed(const json& j, const std::string& where) {
    if (j.is_number_integer() && j.get<long long>() < 0)
        raise(Err::ConfigError, where + ": seed must be non-negative");
    if (!j.is_number_unsigned() && !j.is_number_integer())
        raise(Err::ConfigError, where + ": seed must be an integer");
    return j.get<std::uint64_t>();
}

void check_threshold(double value, BpType t, const std::string& where) {
    const auto grid = threshold_grid(t);
    if (!(value >= grid.front() && value <= grid.back())) {
        std::ostringstream msg;
        msg << where << ": " << bp_type_name(t) << " threshold " << value
            << " outside the sweep range [" << grid.front() << ", " << grid.back() << "]";
        raise(Err::ConfigError, msg.str());
    }
}

std::size_t read_count(const json& j, const char* field, const std::string& where) {
    if (!j.is_number_integer() && !j.is_number_unsigned())
        raise(Err::ConfigError, where + ": " + field + " must be an integer");
    if (j.is_number_integer() && j.get<long long>() < 0)
        raise(Err::ConfigError, where + ": " + field + " must be non-negative");
    return j.get<std::size_t>();
}

} // namespace

RunConfig parse_run_config(const std::string& text, const std::string& where) {
    RunConfig cfg;
    std::string trimmed = text;
    trimmed.erase(0, trimmed.find_first_not_of(" \t\r\n"));
    if (trimmed.empty()) return cfg;

    json j = json::parse(text, nullptr, false);
    if (j.is_discarded()) raise(Err::ConfigError, where + ": malformed JSON");
    if (!j.is_object()) raise(Err::ConfigError, where + ": config must be a JSON object");

    check_known_keys(j, {"seed", "arch", "input_type", "bp_type", "thresholds", "seconds",
                         "include_initial_bp", "preset", "per_class", "folds", "train", "model",
                         "synth", "sweep"},
                     where);

    if (j.contains("seed")) cfg.seed = read_seed(j["seed"], where);
    if (j.contains("arch")) cfg.arch = parse_arch(j["arch"].get<std::string>());
    if (j.contains("input_type"))
        cfg.input_type = parse_input_type(j["input_type"].get<std::string>());
    if (j.contains("bp_type")) cfg.bp_type = parse_bp_type(j["bp_type"].get<std::string>());
    if (j.contains("thresholds")) {
        const json& th = j["thresholds"];
        check_known_keys(th, {"sbp", "dbp", "mbp"}, where + ".thresholds");
        if (th.contains("sbp")) cfg.thresholds.sbp = th["sbp"].get<double>();
        if (th.contains("dbp")) cfg.thresholds.dbp = th["dbp"].get<double>();
        if (th.contains("mbp")) cfg.thresholds.mbp = th["mbp"].get<double>();
    }
    if (j.contains("seconds")) cfg.seconds = j["seconds"].get<double>();
    if (j.contains("include_initial_bp"))
        cfg.include_initial_bp = j["include_initial_bp"].get<bool>();
    if (j.contains("preset")) cfg.preset = parse_preset(j["preset"].get<std::string>());
    if (j.contains("per_class")) cfg.per_class = read_count(j["per_class"], "per_class", where);
    if (j.contains("folds")) cfg.folds = read_count(j["folds"], "folds", where);

    if (j.contains("train")) {
        const json& t = j["train"];
        check_known_keys(t, {"epochs", "batch_size", "lr", "patience"}, where + ".train");
        if (t.contains("epochs")) cfg.train.epochs = read_count(t["epochs"], "epochs", where);
        if (t.contains("batch_size"))
            cfg.train.batch_size = read_count(t["batch_size"], "batch_size", where);
        if (t.contains("lr")) cfg.train.lr = t["lr"].get<double>();
        if (t.contains("patience"))
            cfg.train.patience = read_count(t["patience"], "patience", where);
    }
    if (j.contains("model")) {
        const json& m = j["model"];
        check_known_keys(m, {"conv_widths", "kernel_sizes", "mlp_width", "dropout"},
                         where + ".model");
        if (m.contains("conv_widths")) {
            const auto v = m["conv_widths"].get<std::vector<std::size_t>>();
            if (v.size() != 3) raise(Err::ConfigError, where + ": conv_widths needs 3 entries");
            std::copy(v.begin(), v.end(), cfg.model.conv_widths.begin());
        }
        if (m.contains("kernel_sizes")) {
            const auto v = m["kernel_sizes"].get<std::vector<std::size_t>>();
            if (v.size() != 3) raise(Err::ConfigError, where + ": kernel_sizes needs 3 entries");
            std::copy(v.begin(), v.end(), cfg.model.kernel_sizes.begin());
        }
        if (m.contains("mlp_width"))
            cfg.model.mlp_width = read_count(m["mlp_width"], "mlp_width", where);
        if (m.contains("dropout")) cfg.model.dropout = m["dropout"].get<double>();
    }
    if (j.contains("synth")) {
        const json& s = j["synth"];
        check_known_keys(s, {"preset", "n_patients", "segments_per_patient"}, where + ".synth");
        if (s.contains("preset")) cfg.synth.preset = s["preset"].get<std::string>();
        if (s.contains("n_patients"))
            cfg.synth.n_patients = read_count(s["n_patients"], "n_patients", where);
        if (s.contains("segments_per_patient"))
            cfg.synth.segments_per_patient =
                read_count(s["segments_per_patient"], "segments_per_patient", where);
    }
    if (j.contains("sweep")) {
        const json& s = j["sweep"];
        check_known_keys(s, {"train_per_class", "test_per_class", "reuse_model"},
                         where + ".sweep");
        if (s.contains("train_per_class"))
            cfg.sweep.train_per_class = read_count(s["train_per_class"], "train_per_class", where);
        if (s.contains("test_per_class"))
            cfg.sweep.test_per_class = read_count(s["test_per_class"], "test_per_class", where);
        if (s.contains("reuse_model")) cfg.sweep.reuse_model = s["reuse_model"].get<bool>();
    }

    check_threshold(cfg.thresholds.sbp, BpType::Sbp, where);
    check_threshold(cfg.thresholds.dbp, BpType::Dbp, where);
    check_threshold(cfg.thresholds.mbp, BpType::Mbp, where);
    if (cfg.seconds != 3.0 && cfg.seconds != 5.0 && cfg.seconds != 7.0)
        raise(Err::ConfigError, where + ": seconds must be 3, 5, or 7");
    if (cfg.per_class == 0) raise(Err::ConfigError, where + ": per_class must be positive");
    if (cfg.train.lr && !(*cfg.train.lr > 0.0))
        raise(Err::ConfigError, where + ": lr must be positive");
    if (!(cfg.model.dropout >= 0.0 && cfg.model.dropout < 1.0))
        raise(Err::ConfigError, where + ": dropout must lie in [0, 1)");
    resolved_synth_config(cfg); // validates the synth preset name
    return cfg;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) raise(Err::ConfigError, "cannot open config file " + path);
    std::ostringstream body;
    body << f.rdbuf();
    return parse_run_config(body.str(), path);
}

void apply_env_seed(RunConfig& cfg) {
    const char* env = std::getenv("BPSHIFT_SEED");
    if (!env || !*env) return;
    char* end = nullptr;
    const unsigned long long v = std::strtoull(env, &end, 10);
    if (end == env || *end != '\0' || std::string(env).find('-') != std::string::npos)
        raise(Err::ConfigError, std::string("BPSHIFT_SEED must be a non-negative integer, got '") +
                                    env + "'");
    cfg.seed = static_cast<std::uint64_t>(v);
}

std::string run_config_json(const RunConfig& cfg) {
    json j = {
        {"seed", cfg.seed},
        {"arch", arch_name(cfg.arch)},
        {"input_type", input_type_name(cfg.input_type)},
        {"bp_type", bp_type_name(cfg.bp_type)},
        {"thresholds",
         {{"sbp", cfg.thresholds.sbp}, {"dbp", cfg.thresholds.dbp}, {"mbp", cfg.thresholds.mbp}}},
        {"seconds", cfg.seconds},
        {"include_initial_bp", cfg.include_initial_bp},
        {"preset", preset_name(cfg.preset)},
        {"per_class", cfg.per_class},
        {"folds", cfg.folds},
        {"model",
         {{"conv_widths", cfg.model.conv_widths},
          {"kernel_sizes", cfg.model.kernel_sizes},
          {"mlp_width", cfg.model.mlp_width},
          {"dropout", cfg.model.dropout}}},
        {"synth", {{"preset", cfg.synth.preset}}},
        {"sweep",
         {{"train_per_class", cfg.sweep.train_per_class},
          {"test_per_class", cfg.sweep.test_per_class},
          {"reuse_model", cfg.sweep.reuse_model}}},
    };
    const TrainConfig t = resolved_train_config(cfg);
    j["train"] = {{"epochs", t.epochs},
                  {"batch_size", t.batch_size},
                  {"lr", t.lr},
                  {"patience", t.patience}};
    if (cfg.synth.n_patients) j["synth"]["n_patients"] = *cfg.synth.n_patients;
    if (cfg.synth.segments_per_patient)
        j["synth"]["segments_per_patient"] = *cfg.synth.segments_per_patient;
    return j.dump(2);
}

} // namespace bpshift

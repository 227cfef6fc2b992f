#include "bpshift/train.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "bpshift/error.hpp"
#include "bpshift/rng.hpp"

namespace bpshift {

using nlohmann::json;

namespace {

struct SetStats {
    double loss = 0.0;
    double accuracy = 0.0;
};

SetStats eval_set(Model& model, const std::vector<Example>& examples) {
    RunCtx ctx;
    SetStats s;
    std::size_t hits = 0;
    for (const auto& ex : examples) {
        const Tensor logits = model.forward(ex.x, ex.aux, ctx);
        s.loss += cross_entropy(logits, static_cast<int>(ex.y));
        if (predict(logits) == ex.y) ++hits;
    }
    s.loss /= static_cast<double>(examples.size());
    s.accuracy = static_cast<double>(hits) / static_cast<double>(examples.size());
    return s;
}

std::vector<Tensor> snapshot(const ParameterSet& ps) {
    std::vector<Tensor> out;
    out.reserve(ps.params.size());
    for (const Param* p : ps.params) out.push_back(p->value);
    return out;
}

void restore(ParameterSet& ps, const std::vector<Tensor>& values) {
    for (std::size_t k = 0; k < ps.params.size(); ++k) ps.params[k]->value = values[k];
}

} // namespace

TrainResult train_model(Model& model, const std::vector<Example>& train,
                        const std::vector<Example>& val, const TrainConfig& cfg) {
    if (train.empty() || val.empty())
        raise(Err::TooFewExamples, "training needs non-empty train and validation sets");
    if (cfg.batch_size == 0) raise(Err::InvalidConfig, "batch size must be positive");

    ParameterSet& ps = model.params();
    AdamConfig adam;
    adam.lr = cfg.lr;

    Rng shuffle_rng = make_rng(cfg.seed, fnv1a64("train.shuffle"));
    Rng dropout_rng = make_rng(cfg.seed, fnv1a64("train.dropout"));

    std::vector<std::size_t> order(train.size());
    for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;

    TrainResult result;
    std::vector<Tensor> best;
    std::size_t stale = 0;
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        shuffle_vec(order, shuffle_rng);

        double loss_sum = 0.0;
        std::size_t hits = 0;
        for (std::size_t at = 0; at < order.size(); at += cfg.batch_size) {
            const std::size_t stop = std::min(order.size(), at + cfg.batch_size);
            ps.zero_grad();
            for (std::size_t k = at; k < stop; ++k) {
                const Example& ex = train[order[k]];
                RunCtx ctx{true, &dropout_rng};
                const Tensor logits = model.forward(ex.x, ex.aux, ctx);
                Tensor dlogits;
                const double loss = cross_entropy(logits, static_cast<int>(ex.y), &dlogits);
                if (!std::isfinite(loss))
                    raise(Err::DivergedLoss,
                          "non-finite loss at epoch " + std::to_string(epoch));
                loss_sum += loss;
                if (predict(logits) == ex.y) ++hits;
                model.backward(dlogits);
            }
            const double scale = 1.0 / static_cast<double>(stop - at);
            for (Param* p : ps.params)
                for (double& g : p->grad.data) g *= scale;
            adam_step(ps, adam);
        }

        EpochStats stats;
        stats.epoch = epoch;
        stats.train_loss = loss_sum / static_cast<double>(train.size());
        stats.train_accuracy = static_cast<double>(hits) / static_cast<double>(train.size());
        const SetStats v = eval_set(model, val);
        if (!std::isfinite(v.loss))
            raise(Err::DivergedLoss, "non-finite validation loss at epoch " + std::to_string(epoch));
        stats.val_loss = v.loss;
        stats.val_accuracy = v.accuracy;
        result.history.push_back(stats);

        const bool improved =
            result.best_epoch == 0 || v.accuracy > result.best_val_accuracy ||
            (v.accuracy == result.best_val_accuracy && v.loss < result.best_val_loss);
        if (improved) {
            result.best_epoch = epoch;
            result.best_val_accuracy = v.accuracy;
            result.best_val_loss = v.loss;
            best = snapshot(ps);
            stale = 0;
        } else if (++stale >= cfg.patience && cfg.patience > 0) {
            break;
        }
    }

    if (!best.empty()) restore(ps, best);
    return result;
}

void write_history_ndjson(const std::string& path, const TrainResult& result) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::trunc);
        if (!f) raise(Err::IoError, "cannot open " + tmp + " for writing");
        for (const auto& e : result.history) {
            const json line = {{"epoch", e.epoch},
                               {"train_loss", e.train_loss},
                               {"train_accuracy", e.train_accuracy},
                               {"val_loss", e.val_loss},
                               {"val_accuracy", e.val_accuracy}};
            f << line.dump() << "\n";
        }
        const json tail = {{"kind", "summary"},
                           {"best_epoch", result.best_epoch},
                           {"best_val_accuracy", result.best_val_accuracy},
                           {"best_val_loss", result.best_val_loss},
                           {"epochs_run", result.history.size()}};
        f << tail.dump() << "\n";
        if (!f) raise(Err::IoError, "short write to " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

std::vector<FoldResult> cross_validate(const ModelSpec& spec, const std::vector<Example>& pool,
                                       std::size_t k, const TrainConfig& cfg) {
    std::vector<std::size_t> ids(pool.size());
    for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i;
    const auto folds = kfold(ids, k, cfg.seed);

    std::vector<FoldResult> out;
    for (std::size_t f = 0; f < folds.size(); ++f) {
        std::vector<char> held(pool.size(), 0);
        for (const auto id : folds[f]) held[id] = 1;
        std::vector<Example> train, val;
        for (std::size_t i = 0; i < pool.size(); ++i)
            (held[i] ? val : train).push_back(pool[i]);

        ModelSpec fold_spec = spec;
        fold_spec.init_seed = derive_seed(spec.init_seed, f + 1);
        auto model = build_model(fold_spec);

        TrainConfig fold_cfg = cfg;
        fold_cfg.seed = derive_seed(cfg.seed, fnv1a64("fold") ^ (f + 1));

        FoldResult r;
        r.fold = f + 1;
        r.result = train_model(*model, train, val, fold_cfg);
        r.val_report = evaluate(*model, val);
        out.push_back(std::move(r));
    }
    return out;
}

} // namespace bpshift

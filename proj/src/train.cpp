#include "mmret/train.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "mmret/objectives.hpp"
#include "mmret/ops.hpp"

namespace mmret {

using nlohmann::json;

void TrainConfig::validate() const {
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (epochs_intent < 1 || epochs_text < 1 || epochs_image < 1 || epochs_joint < 1)
        throw ConfigError("epoch budgets must be >= 1");
    if (!(base_lr > 0.0)) throw ConfigError("base_lr must be positive");
    if (eval_every < 1) throw ConfigError("eval_every must be >= 1");
    if (joint_image_ratio && (*joint_image_ratio < 0.0 || *joint_image_ratio > 1.0))
        throw ConfigError("joint_image_ratio must be in [0, 1]");
}

std::string MetricsLine::to_json() const {
    json j;
    j["phase"] = phase;
    j["step"] = step;
    j["loss"] = loss;
    j["lr"] = lr;
    if (dev) j["dev"] = json::parse(dev->to_json());
    return j.dump();
}

namespace {

/// Endless per-objective batch supply; reshuffles with a fresh derived seed
/// every time one pass over the filtered examples is exhausted.
class BatchStream {
public:
    BatchStream(const Dataset& ds, Objective obj, int batch_size, uint64_t seed,
                std::optional<double> ratio)
        : ds_(&ds), obj_(obj), batch_size_(batch_size), seed_(seed), ratio_(ratio) {
        refill();
    }

    size_t batches_per_pass() const { return current_.size(); }

    std::vector<size_t> next() {
        if (at_ >= current_.size()) refill();
        return current_[at_++];
    }

private:
    void refill() {
        current_ = make_batches(*ds_, obj_, batch_size_,
                                derive_seed(seed_, "pass:" + std::to_string(pass_++)), ratio_);
        at_ = 0;
    }

    const Dataset* ds_;
    Objective obj_;
    int batch_size_;
    uint64_t seed_;
    std::optional<double> ratio_;
    std::vector<std::vector<size_t>> current_;
    size_t at_ = 0;
    int pass_ = 0;
};

Tensor encode_batch_contexts(const TextEncoderParams& enc, const Dataset& ds,
                             const std::vector<size_t>& batch, const FwdCtx& ctx) {
    std::vector<Tensor> rows;
    rows.reserve(batch.size());
    for (size_t i : batch) rows.push_back(encode_context(enc, ds.examples[i].context, ctx));
    return ops::stack_rows(ctx.tape, rows);
}

std::vector<int> batch_group_ids(const Dataset& ds, const std::vector<size_t>& batch) {
    // response identity within the batch (prefix-augmented examples of one
    // dialogue share a gold response); "#..." suffixes collapse to the base id
    std::vector<int> groups;
    std::vector<std::string> seen;
    for (size_t i : batch) {
        std::string base = ds.examples[i].id;
        if (auto pos = base.find('#'); pos != std::string::npos) base.resize(pos);
        auto it = std::find(seen.begin(), seen.end(), base);
        if (it == seen.end()) {
            seen.push_back(base);
            groups.push_back(static_cast<int>(seen.size()) - 1);
        } else {
            groups.push_back(static_cast<int>(it - seen.begin()));
        }
    }
    return groups;
}

Tensor objective_forward(const ModelBundle& bundle, const Dataset& ds, Objective obj,
                         const std::vector<size_t>& batch, const FwdCtx& ctx,
                         const TrainConfig& cfg) {
    switch (obj) {
        case Objective::Intent: {
            IntentBatch ib;
            ib.context_embs = encode_batch_contexts(*bundle.ctx_intent, ds, batch, ctx);
            for (size_t i : batch)
                ib.labels.push_back(ds.examples[i].gold_modality == Modality::Image ? 1 : 0);
            return intent_loss(ctx.tape, ib, bundle.require_intent_head());
        }
        case Objective::Text: {
            ContrastiveBatch cb;
            cb.temperature = bundle.config.tau;
            cb.context_embs = encode_batch_contexts(*bundle.ctx_text, ds, batch, ctx);
            std::vector<Tensor> rows;
            for (size_t i : batch)
                rows.push_back(encode_text_response(*bundle.ctx_text, *ds.examples[i].text_response, ctx));
            cb.response_embs = ops::stack_rows(ctx.tape, rows);
            if (cfg.mask_duplicates) cb.response_group = batch_group_ids(ds, batch);
            return contrastive_loss(ctx.tape, cb, cfg.mask_duplicates);
        }
        case Objective::Image: {
            ContrastiveBatch cb;
            cb.temperature = bundle.config.tau;
            cb.context_embs = encode_batch_contexts(*bundle.ctx_image, ds, batch, ctx);
            std::vector<Tensor> rows;
            for (size_t i : batch)
                rows.push_back(encode_image_response(*bundle.image_encoder, *ds.examples[i].image_response, ctx));
            cb.response_embs = ops::stack_rows(ctx.tape, rows);
            if (cfg.mask_duplicates) cb.response_group = batch_group_ids(ds, batch);
            return contrastive_loss(ctx.tape, cb, cfg.mask_duplicates);
        }
        case Objective::Joint: {
            ContrastiveBatch cb;
            cb.temperature = bundle.config.tau;
            cb.context_embs = encode_batch_contexts(*bundle.ctx_text, ds, batch, ctx);
            std::vector<Tensor> rows;
            for (size_t i : batch) {
                const DialogueExample& ex = ds.examples[i];
                if (ex.gold_modality == Modality::Text)
                    rows.push_back(encode_text_response(*bundle.ctx_text, *ex.text_response, ctx));
                else
                    rows.push_back(encode_image_response(*bundle.image_encoder, *ex.image_response, ctx));
            }
            cb.response_embs = ops::stack_rows(ctx.tape, rows);
            if (cfg.mask_duplicates) cb.response_group = batch_group_ids(ds, batch);
            return joint_loss(ctx.tape, cb, cfg.mask_duplicates);
        }
    }
    throw StructureError("unreachable objective");
}

struct PhaseSpec {
    std::string name;
    std::vector<Objective> objectives;  // losses summed in this order each step
    int epochs = 1;
    std::vector<NamedParam> params;
    EvalOptions eval_options;
    std::function<size_t(const std::vector<CheckpointRecord>&)> selector;
    bool intent_only_eval = false;
};

struct PhaseResult {
    SubtaskTrail trail;
    ModelBundle best;
    bool aborted = false;
    std::string abort_reason;
};

PhaseResult run_phase(ModelBundle& bundle, const Dataset& train_split, const Dataset& dev_split,
                      const CandidatePools& dev_pools, const TrainConfig& cfg,
                      const PhaseSpec& spec, std::vector<MetricsLine>& log) {
    std::vector<BatchStream> streams;
    streams.reserve(spec.objectives.size());
    for (size_t k = 0; k < spec.objectives.size(); ++k)
        streams.emplace_back(train_split, spec.objectives[k], cfg.batch_size,
                             derive_seed(cfg.seed, spec.name + ":obj" + std::to_string(k)),
                             spec.objectives[k] == Objective::Joint ? cfg.joint_image_ratio : std::nullopt);

    // the first objective's pass length defines an epoch
    const int64_t steps_per_epoch = static_cast<int64_t>(streams[0].batches_per_pass());
    const int64_t total_steps = steps_per_epoch * spec.epochs;

    Adam optimizer(spec.params, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
    LrSchedule sched{cfg.base_lr, cfg.lr_decay_fraction, cfg.lr_decay_interval};
    std::mt19937_64 dropout_rng(derive_seed(cfg.seed, spec.name + ":dropout"));

    std::vector<CheckpointRecord> records;
    std::vector<ModelBundle> snapshots;
    double last_loss = 0.0;

    auto run_eval = [&](int64_t step) {
        EvalReport report = evaluate(bundle, dev_split, dev_pools, spec.eval_options);
        records.push_back({step, report});
        snapshots.push_back(clone_bundle(bundle));
        MetricsLine line{spec.name, step, last_loss, lr_at_step(sched, step), report};
        log.push_back(line);
    };

    PhaseResult result;
    run_eval(0);
    try {
        for (int64_t step = 0; step < total_steps; ++step) {
            Tape tape;
            FwdCtx ctx{&tape, &dropout_rng, true};
            optimizer.zero_grad();

            Tensor total;
            for (size_t k = 0; k < spec.objectives.size(); ++k) {
                Tensor l = objective_forward(bundle, train_split, spec.objectives[k], streams[k].next(), ctx, cfg);
                total = k == 0 ? l : ops::add(&tape, total, l);
            }
            last_loss = total[0];
            if (!std::isfinite(last_loss))
                throw NumericError("non-finite loss in phase '" + spec.name + "' at step " + std::to_string(step + 1));
            tape.backward(total);
            optimizer.step(lr_at_step(sched, step));

            const int64_t done = step + 1;
            if (done % cfg.eval_every == 0 || done == total_steps)
                run_eval(done);
            else
                log.push_back({spec.name, done, last_loss, lr_at_step(sched, step), std::nullopt});
        }
    } catch (const NumericError& e) {
        result.aborted = true;
        result.abort_reason = e.what();
    }

    result.trail.name = spec.name;
    result.trail.records = std::move(records);
    result.trail.selected = spec.selector(result.trail.records);
    result.trail.final_step = total_steps;
    result.best = std::move(snapshots[result.trail.selected]);
    return result;
}

EvalReport intent_only_report(const ModelBundle& bundle, const Dataset& split) {
    EvalReport r;
    long ok = 0;
    for (const auto& ex : split.examples) {
        const double p = intent_probability(bundle, ex.context);
        const Modality predicted = p > 0.5 ? Modality::Image : Modality::Text;
        ok += predicted == ex.gold_modality;
    }
    r.intent_accuracy = split.examples.empty() ? 0.0 : double(ok) / double(split.examples.size());
    r.counts["intent"] = static_cast<int>(split.examples.size());
    return r;
}

/// Variant of run_phase for DR's intent subtask: dev metric is intent
/// accuracy alone, no pools are touched.
PhaseResult run_intent_phase(ModelBundle& bundle, const Dataset& train_split, const Dataset& dev_split,
                             const TrainConfig& cfg, std::vector<MetricsLine>& log) {
    BatchStream stream(train_split, Objective::Intent, cfg.batch_size,
                       derive_seed(cfg.seed, "dr.intent:obj0"), std::nullopt);
    const int64_t steps_per_epoch = static_cast<int64_t>(stream.batches_per_pass());
    const int64_t total_steps = steps_per_epoch * cfg.epochs_intent;

    std::vector<NamedParam> params;
    append_params(params, "ctx_intent", *bundle.ctx_intent);
    append_params(params, "intent_head", *bundle.intent_head);
    Adam optimizer(params, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
    LrSchedule sched{cfg.base_lr, cfg.lr_decay_fraction, cfg.lr_decay_interval};
    std::mt19937_64 dropout_rng(derive_seed(cfg.seed, "dr.intent:dropout"));

    std::vector<CheckpointRecord> records;
    std::vector<ModelBundle> snapshots;
    double last_loss = 0.0;

    auto run_eval = [&](int64_t step) {
        EvalReport report = intent_only_report(bundle, dev_split);
        records.push_back({step, report});
        snapshots.push_back(clone_bundle(bundle));
        log.push_back({"dr.intent", step, last_loss, lr_at_step(sched, step), report});
    };

    PhaseResult result;
    run_eval(0);
    try {
        for (int64_t step = 0; step < total_steps; ++step) {
            Tape tape;
            FwdCtx ctx{&tape, &dropout_rng, true};
            optimizer.zero_grad();
            Tensor loss = objective_forward(bundle, train_split, Objective::Intent, stream.next(), ctx, cfg);
            last_loss = loss[0];
            if (!std::isfinite(last_loss))
                throw NumericError("non-finite loss in phase 'dr.intent' at step " + std::to_string(step + 1));
            tape.backward(loss);
            optimizer.step(lr_at_step(sched, step));
            const int64_t done = step + 1;
            if (done % cfg.eval_every == 0 || done == total_steps)
                run_eval(done);
            else
                log.push_back({"dr.intent", done, last_loss, lr_at_step(sched, step), std::nullopt});
        }
    } catch (const NumericError& e) {
        result.aborted = true;
        result.abort_reason = e.what();
    }

    result.trail.name = "dr.intent";
    result.trail.records = std::move(records);
    result.trail.selected = select_by_intent_accuracy(result.trail.records);
    result.trail.final_step = total_steps;
    result.best = std::move(snapshots[result.trail.selected]);
    return result;
}

}  // namespace

TrainResult train(ModelBundle& bundle, const Dataset& train_split, const Dataset& dev_split,
                  const CandidatePools& dev_pools, const TrainConfig& config) {
    config.validate();
    if (train_split.count_modality(Modality::Text) == 0 || train_split.count_modality(Modality::Image) == 0)
        throw DataError("training split must contain both response modalities");

    TrainResult result;

    auto note_abort = [&result](const PhaseResult& phase) {
        if (phase.aborted) {
            result.aborted = true;
            result.abort_reason = phase.abort_reason;
        }
        return phase.aborted;
    };

    switch (bundle.regime) {
        case Regime::DR: {
            // three independent optimizations over disjoint parameter sets
            PhaseResult intent = run_intent_phase(bundle, train_split, dev_split, config, result.log);
            note_abort(intent);

            PhaseSpec text_spec;
            text_spec.name = "dr.text";
            text_spec.objectives = {Objective::Text};
            text_spec.epochs = config.epochs_text;
            append_params(text_spec.params, "ctx_text", *bundle.ctx_text);
            text_spec.eval_options.protocols = {Protocol::Text};
            text_spec.selector = [](const std::vector<CheckpointRecord>& t) {
                return select_by_protocol_r1(t, Protocol::Text);
            };
            PhaseResult text = run_phase(bundle, train_split, dev_split, dev_pools, config, text_spec, result.log);
            note_abort(text);

            PhaseSpec image_spec;
            image_spec.name = "dr.image";
            image_spec.objectives = {Objective::Image};
            image_spec.epochs = config.epochs_image;
            append_params(image_spec.params, "ctx_image", *bundle.ctx_image);
            append_params(image_spec.params, "image_encoder", *bundle.image_encoder);
            image_spec.eval_options.protocols = {Protocol::Image};
            image_spec.selector = [](const std::vector<CheckpointRecord>& t) {
                return select_by_protocol_r1(t, Protocol::Image);
            };
            PhaseResult image = run_phase(bundle, train_split, dev_split, dev_pools, config, image_spec, result.log);
            note_abort(image);

            // compose the per-subtask winners into one DR model
            ModelBundle composed;
            composed.regime = Regime::DR;
            composed.config = bundle.config;
            composed.init_seed = bundle.init_seed;
            composed.ctx_text = text.best.ctx_text;
            composed.ctx_image = image.best.ctx_image;
            composed.ctx_intent = intent.best.ctx_intent;
            composed.image_encoder = image.best.image_encoder;
            composed.intent_head = intent.best.intent_head;

            result.best = composed;
            result.best_report = evaluate(composed, dev_split, dev_pools, {});
            result.best_step = std::max({intent.trail.records[intent.trail.selected].step,
                                         text.trail.records[text.trail.selected].step,
                                         image.trail.records[image.trail.selected].step});
            result.subtask_bests.emplace_back("intent", intent.best);
            result.subtask_bests.emplace_back("text", text.best);
            result.subtask_bests.emplace_back("image", image.best);
            result.trails.push_back(std::move(intent.trail));
            result.trails.push_back(std::move(text.trail));
            result.trails.push_back(std::move(image.trail));
            break;
        }
        case Regime::SDR: {
            PhaseSpec spec;
            spec.name = "sdr.unified";
            spec.objectives = {Objective::Intent, Objective::Image, Objective::Text};
            spec.epochs = std::max({config.epochs_intent, config.epochs_text, config.epochs_image});
            spec.params = named_parameters(bundle);
            spec.selector = select_checkpoint;
            PhaseResult r = run_phase(bundle, train_split, dev_split, dev_pools, config, spec, result.log);
            note_abort(r);
            result.best = r.best;
            result.best_report = r.trail.records[r.trail.selected].report;
            result.best_step = r.trail.records[r.trail.selected].step;
            result.trails.push_back(std::move(r.trail));
            break;
        }
        case Regime::MDR: {
            PhaseSpec spec;
            spec.name = "mdr.joint";
            spec.objectives = {Objective::Joint};
            spec.epochs = config.epochs_joint;
            spec.params = named_parameters(bundle);
            spec.selector = select_checkpoint;
            PhaseResult r = run_phase(bundle, train_split, dev_split, dev_pools, config, spec, result.log);
            note_abort(r);
            result.best = r.best;
            result.best_report = r.trail.records[r.trail.selected].report;
            result.best_step = r.trail.records[r.trail.selected].step;
            result.trails.push_back(std::move(r.trail));
            break;
        }
    }
    return result;
}

}  // namespace mmret

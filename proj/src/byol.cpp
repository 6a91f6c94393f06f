#include "relsar/byol.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>

using nlohmann::json;

namespace relsar {

ByolState init_byol_state(const EncoderConfig& enc, const HeadConfig& heads, double tau, Rng& rng) {
    if (tau < 0.0 || tau > 1.0) throw ConfigError("byol.tau outside [0,1]");
    ByolState s;
    s.encoder_cfg = enc;
    s.head_cfg = heads;
    s.online_encoder = init_encoder_params(enc, rng);
    s.online_projector = init_projector_params(enc.d_model, heads, rng);
    s.online_predictor = init_predictor_params(heads, rng);
    // The target starts as an exact copy of the online weights.
    s.target_encoder = s.online_encoder;
    s.target_projector = s.online_projector;
    s.tau = tau;
    return s;
}

void ema_update(const ParamSet& online, ParamSet& target, double tau) {
    if (tau < 0.0 || tau > 1.0) throw ConfigError("ema_update: tau outside [0,1]");
    if (online.order != target.order || online.buffer_order != target.buffer_order)
        throw DimensionError("ema_update: parameter trees do not match");
    const float t = static_cast<float>(tau);
    for (const auto& name : online.order) {
        const Tensor& src = online.at(name);
        Tensor& dst = target.at(name);
        if (!src.same_shape(dst)) throw DimensionError("ema_update: shape mismatch for '" + name + "'");
        for (int64_t i = 0; i < src.numel(); ++i) dst(i) = t * dst(i) + (1.0f - t) * src(i);
    }
    for (const auto& name : online.buffer_order) {
        const Tensor& src = online.buffer(name);
        Tensor& dst = target.buffer(name);
        for (int64_t i = 0; i < src.numel(); ++i) dst(i) = t * dst(i) + (1.0f - t) * src(i);
    }
}

double byol_loss_term(const std::vector<double>& q, const std::vector<double>& z) {
    if (q.size() != z.size()) throw DimensionError("byol_loss_term: dimension mismatch");
    if (q.empty()) throw DimensionError("byol_loss_term: empty vectors");
    Graph64 g;
    const auto n = static_cast<int64_t>(q.size());
    auto qv = g.constant(Tensor64(Shape{1, n}, std::vector<double>(q)));
    auto zv = g.constant(Tensor64(Shape{1, n}, std::vector<double>(z)));
    auto term = byol_term_batch(g, qv, g.stop_gradient(zv));
    return g.value(term)(0);
}

double collapse_metric(const Tensor& embeddings) {
    if (embeddings.rank() != 2 || embeddings.shape[0] < 2)
        throw DimensionError("collapse_metric: need a [B>=2, D] batch");
    const int64_t B = embeddings.shape[0], D = embeddings.shape[1];
    std::vector<double> normed(static_cast<size_t>(B * D));
    for (int64_t b = 0; b < B; ++b) {
        double sq = 0.0;
        for (int64_t d = 0; d < D; ++d) sq += static_cast<double>(embeddings(b, d)) * embeddings(b, d);
        const double n = std::sqrt(sq + 1e-12);
        for (int64_t d = 0; d < D; ++d) normed[static_cast<size_t>(b * D + d)] = embeddings(b, d) / n;
    }
    double acc = 0.0;
    for (int64_t d = 0; d < D; ++d) {
        double mean = 0.0;
        for (int64_t b = 0; b < B; ++b) mean += normed[static_cast<size_t>(b * D + d)];
        mean /= static_cast<double>(B);
        double var = 0.0;
        for (int64_t b = 0; b < B; ++b) {
            const double dd = normed[static_cast<size_t>(b * D + d)] - mean;
            var += dd * dd;
        }
        acc += std::sqrt(var / static_cast<double>(B));
    }
    return acc / static_cast<double>(D);
}

ByolStepResult byol_step(ByolState& state, ByolOptimizer& opt, const std::vector<const SkeletonSequence*>& batch,
                         const AugmentConfig& aug, double lr, Rng& rng) {
    std::vector<SkeletonSequence> view_a, view_b;
    view_a.reserve(batch.size());
    view_b.reserve(batch.size());
    for (const SkeletonSequence* s : batch) {
        auto [a, b] = make_views(*s, aug, rng);
        view_a.push_back(std::move(a));
        view_b.push_back(std::move(b));
    }
    std::vector<const SkeletonSequence*> pa, pb;
    for (const auto& v : view_a) pa.push_back(&v);
    for (const auto& v : view_b) pb.push_back(&v);

    Graph g;
    ByolGraphParams<float> p;
    p.online_encoder = bind(g, state.online_encoder);
    p.online_projector = bind(g, state.online_projector);
    p.online_predictor = bind(g, state.online_predictor);
    p.target_encoder = bind(g, state.target_encoder);
    p.target_projector = bind(g, state.target_projector);

    auto x_i = g.constant(batch_tensor(pa));
    auto x_j = g.constant(batch_tensor(pb));
    Graph::Var y_online{};
    auto loss = symmetric_byol_loss(g, p, state.encoder_cfg, state.head_cfg.activation, x_i, x_j, &rng, &y_online);

    ByolStepResult out;
    out.loss = g.value(loss)(0);
    out.collapse = batch.size() >= 2 ? collapse_metric(g.value(y_online)) : 0.0;
    if (!std::isfinite(out.loss)) throw TrainingError("byol: non-finite loss");

    g.backward(loss);
    auto apply = [&](ParamSet& set, const BoundParamsT<float>& bound, SgdMomentum& o) {
        auto grads = collect_grads(g, bound);
        o.step(set, grads, lr);
    };
    apply(state.online_encoder, p.online_encoder, opt.encoder);
    apply(state.online_projector, p.online_projector, opt.projector);
    apply(state.online_predictor, p.online_predictor, opt.predictor);

    ema_update(state.online_encoder, state.target_encoder, state.tau);
    ema_update(state.online_projector, state.target_projector, state.tau);
    ++state.step;
    return out;
}

namespace {

void dump_diagnostics(const std::string& log_path, const ByolState& state, int epoch, int64_t step,
                      const std::vector<double>& recent) {
    if (log_path.empty()) return;
    json d;
    d["reason"] = "non-finite loss";
    d["epoch"] = epoch;
    d["step"] = step;
    d["recent_losses"] = recent;
    d["online_params_finite"] = state.online_encoder.all_finite() && state.online_projector.all_finite() &&
                                state.online_predictor.all_finite();
    std::ofstream out(log_path + ".diagnostics.json");
    out << d.dump(2) << "\n";
}

} // namespace

PretrainResult pretrain(const WindowDataset& data, const EncoderConfig& enc, const HeadConfig& heads,
                        const ByolConfig& cfg, const AugmentConfig& aug, uint64_t seed,
                        const std::string& log_path, const std::function<void(int, double)>& on_epoch) {
    cfg.validate();
    aug.validate();
    if (data.train.empty()) throw ConfigError("pretrain: train split is empty");

    Rng rng(seed);
    PretrainResult result;
    result.state = init_byol_state(enc, heads, cfg.tau, rng);
    result.optimizer = ByolOptimizer(cfg.momentum, cfg.weight_decay);
    ByolOptimizer& opt = result.optimizer;

    std::ofstream log;
    if (!log_path.empty()) {
        log.open(log_path, std::ios::binary);
        if (!log) throw TrainingError("pretrain: cannot open log '" + log_path + "'");
    }

    std::vector<size_t> order(data.train.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    std::vector<double> recent;
    double last_collapse = 0.0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order);
        double epoch_loss = 0.0;
        int batches = 0;
        for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch_size)) {
            const size_t end = std::min(order.size(), start + static_cast<size_t>(cfg.batch_size));
            std::vector<const SkeletonSequence*> batch;
            for (size_t i = start; i < end; ++i) batch.push_back(&data.train[order[i]]);
            const double lr = cosine_lr(result.state.step, cfg.lr, cfg.decay_steps);
            ByolStepResult step;
            try {
                step = byol_step(result.state, opt, batch, aug, lr, rng);
            } catch (const TrainingError&) {
                dump_diagnostics(log_path, result.state, epoch, result.state.step, recent);
                throw TrainingError("pretrain: non-finite loss at step " + std::to_string(result.state.step) +
                                    (log_path.empty() ? "" : "; diagnostics at " + log_path + ".diagnostics.json"));
            }
            epoch_loss += step.loss;
            last_collapse = step.collapse;
            ++batches;
            recent.push_back(step.loss);
            if (recent.size() > 16) recent.erase(recent.begin());
            if (log) {
                json line = {{"step", result.state.step}, {"epoch", epoch},           {"lr", lr},
                             {"loss", step.loss},         {"collapse", step.collapse}};
                log << line.dump() << "\n";
            }
        }
        result.epoch_mean_loss.push_back(epoch_loss / std::max(1, batches));
        if (on_epoch) on_epoch(epoch, result.epoch_mean_loss.back());
    }
    result.final_collapse = last_collapse;
    return result;
}

Checkpoint full_checkpoint(const ByolState& state, const ByolOptimizer& opt) {
    Checkpoint c;
    c.encoder = state.encoder_cfg;
    c.heads = state.head_cfg;
    c.meta = {{"kind", "byol_full"}, {"step", state.step}, {"tau", state.tau}};
    c.sections["online_encoder"] = state.online_encoder;
    c.sections["online_projector"] = state.online_projector;
    c.sections["online_predictor"] = state.online_predictor;
    c.sections["target_encoder"] = state.target_encoder;
    c.sections["target_projector"] = state.target_projector;
    auto velocities = [](const SgdMomentum& o) {
        ParamSet vel;
        for (const auto& [name, t] : o.state()) vel.add(name, t);
        return vel;
    };
    c.sections["velocity_encoder"] = velocities(opt.encoder);
    c.sections["velocity_projector"] = velocities(opt.projector);
    c.sections["velocity_predictor"] = velocities(opt.predictor);
    return c;
}

Checkpoint encoder_checkpoint(const ByolState& state) {
    Checkpoint c;
    c.encoder = state.encoder_cfg;
    c.heads = state.head_cfg;
    c.meta = {{"kind", "encoder"}, {"step", state.step}};
    c.sections["encoder"] = state.online_encoder;
    return c;
}

} // namespace relsar

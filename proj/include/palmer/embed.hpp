#pragma once

#include <array>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "palmer/buffer.hpp"
#include "palmer/net.hpp"
#include "palmer/qlearn.hpp"

namespace palmer {

enum class EncoderArch { identity, linear, mlp };

inline EncoderArch parse_encoder_arch(const std::string& s) {
    if (s == "identity") return EncoderArch::identity;
    if (s == "linear") return EncoderArch::linear;
    if (s == "mlp") return EncoderArch::mlp;
    throw std::runtime_error("unknown embed.arch: " + s);
}

// Perceptual encoder f_phi: observation -> R^d. Identity is the debug
// architecture (latent = observation); linear and mlp are trained.
class Encoder {
public:
    static Encoder identity(std::size_t obs_dim) {
        Encoder e;
        e.arch_ = EncoderArch::identity;
        e.obs_dim_ = obs_dim;
        e.latent_dim_ = obs_dim;
        return e;
    }

    static Encoder linear(std::size_t obs_dim, std::size_t latent_dim, Rng& rng) {
        Encoder e;
        e.arch_ = EncoderArch::linear;
        e.obs_dim_ = obs_dim;
        e.latent_dim_ = latent_dim;
        e.net_ = std::make_shared<Mlp>(int(obs_dim), std::vector<int>{}, int(latent_dim), rng);
        return e;
    }

    static Encoder nonlinear(std::size_t obs_dim, std::size_t latent_dim,
                             const std::vector<int>& hidden, Rng& rng) {
        Encoder e;
        e.arch_ = EncoderArch::mlp;
        e.obs_dim_ = obs_dim;
        e.latent_dim_ = latent_dim;
        e.net_ = std::make_shared<Mlp>(int(obs_dim), hidden, int(latent_dim), rng);
        return e;
    }

    EncoderArch arch() const { return arch_; }
    std::size_t obs_dim() const { return obs_dim_; }
    std::size_t latent_dim() const { return latent_dim_; }

    Vec embed(const Obs& o) const {
        Vec x(Eigen::Index(o.size()));
        for (std::size_t i = 0; i < o.size(); ++i) x(Eigen::Index(i)) = o[i];
        if (arch_ == EncoderArch::identity) return x;
        return net_->forward(x);
    }

    Vec embed(const Obs& o, Mlp::Workspace& ws) const {
        Vec x(Eigen::Index(o.size()));
        for (std::size_t i = 0; i < o.size(); ++i) x(Eigen::Index(i)) = o[i];
        if (arch_ == EncoderArch::identity) return x;
        return net_->forward(x, ws);
    }

    double d_phi(const Obs& a, const Obs& b) const { return (embed(a) - embed(b)).norm(); }

    bool trainable() const { return arch_ != EncoderArch::identity; }
    Mlp* net() { return net_.get(); }
    const Mlp* net() const { return net_.get(); }

    void save(BinWriter& w) const {
        w.u32(std::uint32_t(arch_));
        w.u64(obs_dim_);
        w.u64(latent_dim_);
        if (net_) net_->save(w);
    }

    static Encoder load(BinReader& r) {
        Encoder e;
        e.arch_ = EncoderArch(r.u32());
        e.obs_dim_ = r.u64();
        e.latent_dim_ = r.u64();
        if (e.arch_ != EncoderArch::identity) e.net_ = std::make_shared<Mlp>(Mlp::load(r));
        return e;
    }

private:
    EncoderArch arch_ = EncoderArch::identity;
    std::size_t obs_dim_ = 0;
    std::size_t latent_dim_ = 0;
    std::shared_ptr<Mlp> net_;
};

// Auxiliary heads over the latent space: forward model, inverse action
// model, and the timestep distribution over {0..T_max} with a catch-all
// last bin.
struct AuxHeads {
    Mlp fwd;  // (z_t, onehot a) -> predicted z_{t+1} mean
    Mlp inv;  // (z_t, z_g) -> action logits
    Mlp time; // (z_t, z_g) -> T bin logits
};

struct EmbedTrainConfig {
    std::string arch = "mlp";
    long long latent_dim = 16;
    std::vector<int> hidden = {64, 64};
    std::vector<int> head_hidden = {64};
    double d_p = -1.0;         // <= 0: calibrate from a preliminary encoder
    double dp_fraction = 0.5;  // conservative: strictly inside one perceptual step
    double c_q = -1.0;        // <= 0: calibrate from the frozen Q
    double cq_fraction = 1.0;
    double w_q = 1.0, w_t = 1.0, w_inv = 1.0, w_fwd = 1.0;
    long long steps = 20000;
    long long batch = 32;
    double lr = 1e-3;
    double momentum = 0.9;
    long long t_max = 10;

    static EmbedTrainConfig from_config(const Config& c) {
        EmbedTrainConfig e;
        e.arch = c.str("embed.arch", e.arch);
        e.latent_dim = c.integer("embed.latent_dim", e.latent_dim);
        auto h = c.int_list("embed.hidden", {64, 64});
        e.hidden.assign(h.begin(), h.end());
        auto hh = c.int_list("embed.head_hidden", {64});
        e.head_hidden.assign(hh.begin(), hh.end());
        e.d_p = c.real("embed.d_p", e.d_p);
        e.dp_fraction = c.real("embed.dp_fraction", e.dp_fraction);
        e.c_q = c.real("embed.c_q", e.c_q);
        e.cq_fraction = c.real("embed.cq_fraction", e.cq_fraction);
        e.w_q = c.real("embed.w_q", e.w_q);
        e.w_t = c.real("embed.w_t", e.w_t);
        e.w_inv = c.real("embed.w_inv", e.w_inv);
        e.w_fwd = c.real("embed.w_fwd", e.w_fwd);
        e.steps = c.integer("embed.steps", e.steps);
        e.batch = c.integer("embed.batch", e.batch);
        e.lr = c.real("embed.lr", e.lr);
        e.momentum = c.real("embed.momentum", e.momentum);
        e.t_max = c.integer("embed.t_max", e.t_max);
        if (e.steps <= 0 || e.batch <= 0 || e.lr <= 0 || e.t_max <= 0 || e.latent_dim <= 0)
            throw std::runtime_error("embed config: counts and rates must be positive");
        return e;
    }
};

struct LossTerms {
    double lq = 0.0, lt = 0.0, linv = 0.0, lfwd = 0.0;

    double total(const std::array<double, 4>& w) const {
        return w[0] * lq + w[1] * lt + w[2] * linv + w[3] * lfwd;
    }
};

// hinge(x) = max(0, x)
inline double hinge(double x) { return x > 0.0 ? x : 0.0; }

// The gated contrastive loss on a single pair, stated on precomputed
// distances. Zero exactly when (d_q <= c_q and d_phi <= d_p) or
// (d_q >= c_q and d_phi >= d_p); both gates fire on the boundary.
inline double loss_lq_value(double d_phi, double d_q, double d_p, double c_q) {
    double l = 0.0;
    if (d_q <= c_q) l += hinge(d_phi - d_p);
    if (d_q >= c_q) l += hinge(d_p - d_phi);
    return l;
}

// One training example with the reachability gate precomputed from the
// frozen Q function.
struct EmbedSample {
    const Obs* obs = nullptr;
    int action = 0;
    const Obs* next_obs = nullptr;
    const Obs* goal = nullptr;
    long long t_offset = 0;
    double d_q = 0.0;
};

// Encoder + heads as one parameter block, with flat access for gradient
// checking and a single batch-evaluation entry point.
class EmbedModel {
public:
    EmbedModel(std::size_t obs_dim, int action_arity, const EmbedTrainConfig& cfg, Rng& rng)
        : arity_(action_arity),
          t_max_(cfg.t_max),
          d_p_(cfg.d_p),
          c_q_(cfg.c_q),
          encoder_(make_encoder(obs_dim, cfg, rng)),
          heads_{Mlp(int(encoder_.latent_dim()) + action_arity, cfg.head_hidden,
                     int(encoder_.latent_dim()), rng),
                 Mlp(2 * int(encoder_.latent_dim()), cfg.head_hidden, action_arity, rng),
                 Mlp(2 * int(encoder_.latent_dim()), cfg.head_hidden, int(cfg.t_max) + 1, rng)} {}

    EmbedModel(Encoder enc, AuxHeads heads, int arity, long long t_max, double d_p, double c_q)
        : arity_(arity), t_max_(t_max), d_p_(d_p), c_q_(c_q),
          encoder_(std::move(enc)), heads_{std::move(heads.fwd), std::move(heads.inv), std::move(heads.time)} {}

    Encoder& encoder() { return encoder_; }
    const Encoder& encoder() const { return encoder_; }
    AuxHeads& heads() { return heads_; }
    const AuxHeads& heads() const { return heads_; }
    int action_arity() const { return arity_; }
    long long t_max() const { return t_max_; }
    double d_p() const { return d_p_; }
    double c_q() const { return c_q_; }
    void set_d_p(double v) { d_p_ = v; }
    void set_c_q(double v) { c_q_ = v; }

    struct GradPack {
        std::unique_ptr<Mlp::Grad> enc;
        Mlp::Grad fwd, inv, time;
    };

    GradPack make_grads() const {
        GradPack g;
        if (encoder_.trainable()) g.enc = std::make_unique<Mlp::Grad>(encoder_.net()->make_grad());
        g.fwd = heads_.fwd.make_grad();
        g.inv = heads_.inv.make_grad();
        g.time = heads_.time.make_grad();
        return g;
    }

    // Evaluates batch-mean losses; when `grads` is given, accumulates the
    // gradient of the weight-combined total. `fixed_fwd_targets` replaces
    // the stop-gradient targets z_{t+1} (used by the stop-grad contract
    // test); by default they are recomputed and treated as constants.
    LossTerms eval_batch(std::span<const EmbedSample> batch,
                         const std::array<double, 4>& weights,
                         GradPack* grads = nullptr,
                         const std::vector<Vec>* fixed_fwd_targets = nullptr) const {
        if (batch.empty()) throw std::invalid_argument("eval_batch: empty batch");
        LossTerms terms;
        double inv_b = 1.0 / double(batch.size());
        Eigen::Index d = Eigen::Index(encoder_.latent_dim());
        Mlp::Workspace ws_t, ws_g, ws_fwd, ws_inv, ws_time;

        for (std::size_t si = 0; si < batch.size(); ++si) {
            const auto& s = batch[si];
            Vec z_t = encoder_.embed(*s.obs, ws_t);
            Vec z_g = encoder_.embed(*s.goal, ws_g);
            Vec z_n = fixed_fwd_targets ? (*fixed_fwd_targets)[si] : encoder_.embed(*s.next_obs);

            Vec dz_t = Vec::Zero(d);
            Vec dz_g = Vec::Zero(d);

            // L_Q: hinge(d_phi - d_p) 1[d_q <= c_q] + hinge(d_p - d_phi) 1[d_q >= c_q]
            {
                Vec diff = z_t - z_g;
                double dist = diff.norm();
                terms.lq += loss_lq_value(dist, s.d_q, d_p_, c_q_) * inv_b;
                double slope = 0.0;
                if (s.d_q <= c_q_ && dist > d_p_) slope += 1.0;
                if (s.d_q >= c_q_ && dist < d_p_) slope -= 1.0;
                if (grads && slope != 0.0 && dist > 0.0) {
                    Vec g = (weights[0] * slope * inv_b / dist) * diff;
                    dz_t += g;
                    dz_g -= g;
                }
            }

            // L_T: cross entropy against the (clipped) realized offset
            {
                Vec u(2 * d);
                u << z_t, z_g;
                Vec logits = heads_.time.forward(u, ws_time);
                int bin = int(std::min(s.t_offset, t_max_));
                Vec dlog;
                terms.lt += cross_entropy_logits(logits, bin, grads ? &dlog : nullptr) * inv_b;
                if (grads) {
                    Vec du = heads_.time.backward(ws_time, (weights[1] * inv_b) * dlog, grads->time);
                    dz_t += du.head(d);
                    dz_g += du.tail(d);
                }
            }

            // L_inv: cross entropy against the taken action
            {
                Vec u(2 * d);
                u << z_t, z_g;
                Vec logits = heads_.inv.forward(u, ws_inv);
                Vec dlog;
                terms.linv += cross_entropy_logits(logits, s.action, grads ? &dlog : nullptr) * inv_b;
                if (grads) {
                    Vec du = heads_.inv.backward(ws_inv, (weights[2] * inv_b) * dlog, grads->inv);
                    dz_t += du.head(d);
                    dz_g += du.tail(d);
                }
            }

            // L_fwd: mean squared error to the detached target embedding
            {
                Vec v(d + arity_);
                v.setZero();
                v.head(d) = z_t;
                v(d + s.action) = 1.0;
                Vec pred = heads_.fwd.forward(v, ws_fwd);
                Vec diff = pred - z_n;
                terms.lfwd += diff.squaredNorm() / double(d) * inv_b;
                if (grads) {
                    Vec dpred = (2.0 * weights[3] * inv_b / double(d)) * diff;
                    Vec dv = heads_.fwd.backward(ws_fwd, dpred, grads->fwd);
                    dz_t += dv.head(d);
                }
            }

            if (grads && grads->enc) {
                encoder_.net()->backward(ws_t, dz_t, *grads->enc);
                encoder_.net()->backward(ws_g, dz_g, *grads->enc);
            }
        }
        return terms;
    }

    std::size_t param_count() const {
        std::size_t n = heads_.fwd.param_count() + heads_.inv.param_count() + heads_.time.param_count();
        if (encoder_.trainable()) n += encoder_.net()->param_count();
        return n;
    }

    Vec get_params() const {
        Vec out(param_count());
        std::size_t k = 0;
        if (encoder_.trainable()) {
            encoder_.net()->flatten(out.data() + k);
            k += encoder_.net()->param_count();
        }
        heads_.fwd.flatten(out.data() + k);
        k += heads_.fwd.param_count();
        heads_.inv.flatten(out.data() + k);
        k += heads_.inv.param_count();
        heads_.time.flatten(out.data() + k);
        return out;
    }

    void set_params(const Vec& p) {
        std::size_t k = 0;
        if (encoder_.trainable()) {
            encoder_.net()->unflatten(p.data() + k);
            k += encoder_.net()->param_count();
        }
        heads_.fwd.unflatten(p.data() + k);
        k += heads_.fwd.param_count();
        heads_.inv.unflatten(p.data() + k);
        k += heads_.inv.param_count();
        heads_.time.unflatten(p.data() + k);
    }

    Vec flat_grads(const GradPack& g) const {
        Vec out = Vec::Zero(Eigen::Index(param_count()));
        std::size_t k = 0;
        if (g.enc) {
            Mlp::flatten_grad(*g.enc, out.data() + k);
            k += encoder_.net()->param_count();
        }
        Mlp::flatten_grad(g.fwd, out.data() + k);
        k += heads_.fwd.param_count();
        Mlp::flatten_grad(g.inv, out.data() + k);
        k += heads_.inv.param_count();
        Mlp::flatten_grad(g.time, out.data() + k);
        return out;
    }

    void sgd_step(const GradPack& g, double lr, double momentum) {
        if (g.enc) opt_enc_.step(*encoder_.net(), *g.enc, lr, momentum);
        opt_fwd_.step(heads_.fwd, g.fwd, lr, momentum);
        opt_inv_.step(heads_.inv, g.inv, lr, momentum);
        opt_time_.step(heads_.time, g.time, lr, momentum);
    }

    void save(const std::string& path) const {
        BinWriter w(path);
        w.magic("EMBD");
        w.u32(1);
        w.u32(std::uint32_t(arity_));
        w.u64(std::uint64_t(t_max_));
        w.f64(d_p_);
        w.f64(c_q_);
        encoder_.save(w);
        heads_.fwd.save(w);
        heads_.inv.save(w);
        heads_.time.save(w);
        w.close();
    }

    static EmbedModel load(const std::string& path) {
        BinReader r(path);
        r.expect_magic("EMBD", "embed model");
        r.expect_version(1, "embed model");
        int arity = int(r.u32());
        long long t_max = (long long)r.u64();
        double d_p = r.f64();
        double c_q = r.f64();
        Encoder enc = Encoder::load(r);
        AuxHeads heads{Mlp::load(r), Mlp::load(r), Mlp::load(r)};
        return EmbedModel(std::move(enc), std::move(heads), arity, t_max, d_p, c_q);
    }

private:
    static Encoder make_encoder(std::size_t obs_dim, const EmbedTrainConfig& cfg, Rng& rng) {
        switch (parse_encoder_arch(cfg.arch)) {
            case EncoderArch::identity: return Encoder::identity(obs_dim);
            case EncoderArch::linear: return Encoder::linear(obs_dim, std::size_t(cfg.latent_dim), rng);
            case EncoderArch::mlp:
                return Encoder::nonlinear(obs_dim, std::size_t(cfg.latent_dim), cfg.hidden, rng);
        }
        throw std::logic_error("unreachable");
    }

    int arity_;
    long long t_max_;
    double d_p_;
    double c_q_;
    Encoder encoder_;
    AuxHeads heads_;
    SgdMomentum opt_enc_, opt_fwd_, opt_inv_, opt_time_;
};

// Average d_phi between subsequent buffer states, collision self-pairs
// masked, scaled by `fraction`. Refuses a degenerate (collapsed) encoder.
inline double calibrate_dp(const Encoder& enc, const TrajectoryLog& log, double fraction) {
    if (log.empty() || log.total_steps() == 0) throw std::runtime_error("calibrate_dp: empty log");
    std::size_t stride = std::max<std::size_t>(1, log.total_steps() / 20000);
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t e = 0; e < log.episode_count(); ++e) {
        const auto& ep = log.episode(int(e));
        for (std::size_t k = 0; k < ep.length(); k += stride) {
            if (obs_equal(ep.states[k], ep.states[k + 1])) continue; // collision: same state
            sum += (enc.embed(ep.states[k]) - enc.embed(ep.states[k + 1])).norm();
            ++count;
        }
    }
    if (count == 0) throw std::runtime_error("calibrate_dp: no moving consecutive pairs in log");
    double mean = sum / double(count);
    if (!(mean > 1e-9))
        throw std::runtime_error("calibrate_dp: encoder is degenerate (collapsed embeddings)");
    return fraction * mean;
}

// All buffer states projected by the encoder, aligned to global indices.
struct EmbeddingIndex {
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> z;

    std::size_t rows() const { return std::size_t(z.rows()); }
};

inline EmbeddingIndex embed_all(const Encoder& enc, const TrajectoryLog& log) {
    EmbeddingIndex idx;
    idx.z.resize(Eigen::Index(log.state_count()), Eigen::Index(enc.latent_dim()));
    std::size_t row = 0;
    for (std::size_t e = 0; e < log.episode_count(); ++e)
        for (const auto& o : log.episode(int(e)).states)
            idx.z.row(Eigen::Index(row++)) = enc.embed(o).transpose();
    return idx;
}

struct EmbedTrainResult {
    EmbedModel model;
    std::vector<LossCurvePoint> curve; // total loss
    std::vector<LossTerms> term_curve;
};

// Joint training of the encoder and heads on hindsight pairs with the
// mixed-uniform offset distribution, gated by the frozen Q function.
// When d_p is not pinned in the config it is calibrated from a
// preliminary phase trained without L_Q, per the two-phase protocol.
inline EmbedTrainResult train_encoder(const TrajectoryLog& log, const QFunction& q,
                                      const EmbedTrainConfig& cfg, Rng& rng) {
    if (log.empty()) throw std::runtime_error("train_encoder: empty log");
    EmbedModel model(log.obs_dim(), log.action_arity(), cfg, rng);
    model.set_c_q(cfg.c_q > 0 ? cfg.c_q : calibrate_cQ(q, log, cfg.cq_fraction));

    HindsightParams hp;
    hp.t_max = cfg.t_max;
    std::vector<HindsightSample> hs(std::size_t(cfg.batch));
    std::vector<EmbedSample> batch(std::size_t(cfg.batch));
    EmbedTrainResult result{std::move(model), {}, {}};
    EmbedModel& m = result.model;

    auto draw_batch = [&]() {
        for (std::size_t i = 0; i < hs.size(); ++i) {
            hs[i] = log.sample_hindsight(HindsightMode::mixed_uniform, rng, hp);
            const Obs& o = log.hs_obs(hs[i]);
            const Obs& g = log.hs_goal(hs[i]);
            batch[i] = EmbedSample{&o, log.hs_action(hs[i]), &log.hs_next_obs(hs[i]), &g,
                                   hs[i].t_offset, q.d_q(o, g)};
        }
    };

    long long report_every = std::max(1ll, cfg.steps / 200);
    auto run_phase = [&](long long steps, const std::array<double, 4>& weights, long long step0) {
        for (long long step = 0; step < steps; ++step) {
            draw_batch();
            auto grads = m.make_grads();
            LossTerms terms = m.eval_batch(batch, weights, &grads);
            double total = terms.total(weights);
            if (!std::isfinite(total)) throw std::runtime_error("train_encoder: loss diverged");
            m.sgd_step(grads, cfg.lr, cfg.momentum);
            if ((step0 + step) % report_every == 0) {
                result.curve.push_back({step0 + step, total});
                result.term_curve.push_back(terms);
            }
        }
    };

    std::array<double, 4> weights{cfg.w_q, cfg.w_t, cfg.w_inv, cfg.w_fwd};
    long long warmup = 0;
    if (cfg.d_p > 0) {
        m.set_d_p(cfg.d_p);
    } else if (!m.encoder().trainable()) {
        m.set_d_p(calibrate_dp(m.encoder(), log, cfg.dp_fraction));
    } else {
        warmup = cfg.steps / 4;
        run_phase(warmup, {0.0, cfg.w_t, cfg.w_inv, cfg.w_fwd}, 0);
        m.set_d_p(calibrate_dp(m.encoder(), log, cfg.dp_fraction));
    }
    run_phase(cfg.steps - warmup, weights, warmup);
    return result;
}

} // namespace palmer

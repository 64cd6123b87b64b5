#pragma once

#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "palmer/buffer.hpp"
#include "palmer/config.hpp"
#include "palmer/net.hpp"

namespace palmer {

// Goal-equality predicate used by the TD indicator and step_distance.
// Exact observation equality for identity/onehot lifting; a proximity
// tolerance for random-feature and point-mass observations.
struct GoalTest {
    bool exact = true;
    double tol = 0.0;

    bool equal(const Obs& a, const Obs& b) const {
        if (exact) return obs_equal(a, b);
        return obs_distance(a, b) <= tol;
    }
};

// Goal-conditioned action-value function Q(s, a, g) with the derived
// step-distance estimate and the symmetric metric d_Q.
class QFunction {
public:
    QFunction(int arity, double gamma, GoalTest gt, double clamp_eps)
        : arity_(arity), gamma_(gamma), goal_test_(gt), clamp_eps_(clamp_eps) {
        if (gamma <= 0.0 || gamma >= 1.0) throw std::invalid_argument("gamma must be in (0,1)");
        if (clamp_eps <= 0.0 || clamp_eps >= 1.0) throw std::invalid_argument("clamp eps must be in (0,1)");
    }
    virtual ~QFunction() = default;

    virtual Vec q_values(const Obs& s, const Obs& g) const = 0;

    int action_arity() const { return arity_; }
    double gamma() const { return gamma_; }
    const GoalTest& goal_test() const { return goal_test_; }
    double clamp_eps() const { return clamp_eps_; }

    double max_q(const Obs& s, const Obs& g) const { return q_values(s, g).maxCoeff(); }

    int argmax_action(const Obs& s, const Obs& g) const {
        Vec q = q_values(s, g);
        int best = 0;
        for (int a = 1; a < arity_; ++a)
            if (q(a) > q(best)) best = a;
        return best;
    }

    // d_hat(s,g) = 1 + log_gamma(clamp(max_a Q, eps, 1)); 0 when s equals g.
    double step_distance(const Obs& s, const Obs& g) const {
        if (goal_test_.equal(s, g)) return 0.0;
        double m = std::clamp(max_q(s, g), clamp_eps_, 1.0);
        return 1.0 + std::log(m) / std::log(gamma_);
    }

    // two-way consistency: symmetric by construction
    double d_q(const Obs& s, const Obs& g) const {
        return std::max(step_distance(s, g), step_distance(g, s));
    }

    double d_max() const { return 1.0 + std::log(clamp_eps_) / std::log(gamma_); }

private:
    int arity_;
    double gamma_;
    GoalTest goal_test_;
    double clamp_eps_;
};

// Exact deduplication of observations into dense state ids. Deterministic
// lifting maps give bit-identical observations for revisited states, so
// byte equality is the right key for every grid observation mode.
class StateCodec {
public:
    static StateCodec from_log(const TrajectoryLog& log) {
        StateCodec c;
        for (std::size_t e = 0; e < log.episode_count(); ++e)
            for (const auto& o : log.episode(int(e)).states)
                c.intern(o);
        return c;
    }

    int intern(const Obs& o) {
        auto [it, inserted] = ids_.try_emplace(o, int(table_.size()));
        if (inserted) table_.push_back(o);
        return it->second;
    }

    int encode(const Obs& o) const {
        auto it = ids_.find(o);
        return it == ids_.end() ? -1 : it->second;
    }

    const Obs& obs_of(int id) const { return table_.at(std::size_t(id)); }
    std::size_t size() const { return table_.size(); }

private:
    std::map<Obs, int> ids_;
    std::vector<Obs> table_;
};

// Tabular backend keyed by (state id, action, goal id); default value 0.
class QTable final : public QFunction {
public:
    QTable(StateCodec codec, int arity, double gamma, GoalTest gt, double clamp_eps = 1e-6)
        : QFunction(arity, gamma, gt, clamp_eps), codec_(std::move(codec)) {
        std::size_t n = codec_.size();
        if (n * std::size_t(arity) * n > (std::size_t(1) << 25))
            throw std::invalid_argument("tabular backend too large for this state count");
        q_.assign(n * std::size_t(arity) * n, 0.0);
        target_ = q_;
    }

    Vec q_values(const Obs& s, const Obs& g) const override {
        Vec out = Vec::Zero(action_arity());
        int si = codec_.encode(s), gi = codec_.encode(g);
        if (si < 0 || gi < 0) return out;
        for (int a = 0; a < action_arity(); ++a) out(a) = q_[idx(si, a, gi)];
        return out;
    }

    const StateCodec& codec() const { return codec_; }

    void sync_target() { target_ = q_; }

    // One pass of per-sample TD updates over a hindsight batch (double-Q:
    // online argmax, target evaluation). Returns the mean squared TD error
    // of the batch measured before the updates.
    double td_update(const TrajectoryLog& log, std::span<const HindsightSample> batch, double lr) {
        if (batch.empty()) throw std::invalid_argument("td_update: empty batch");
        double sq = 0.0;
        for (const auto& h : batch) {
            int si = codec_.encode(log.hs_obs(h));
            int ni = codec_.encode(log.hs_next_obs(h));
            int gi = codec_.encode(log.hs_goal(h));
            int a = log.hs_action(h);
            if (si < 0 || ni < 0 || gi < 0) throw std::invalid_argument("td_update: state not in codec");
            double err = q_[idx(si, a, gi)] - target_value(ni, gi);
            sq += err * err;
            q_[idx(si, a, gi)] -= lr * err;
        }
        return sq / double(batch.size());
    }

    // Synchronous full sweeps over the log's empirical transition model
    // with every observed state as a goal; converges to the fixed point of
    // the TD target rule. Returns the number of sweeps executed.
    int converge_sweeps(const TrajectoryLog& log, double tol = 1e-12, int max_sweeps = 10000) {
        auto model = empirical_model(log);
        std::size_t n = codec_.size();
        std::vector<double> next(q_.size());
        int sweep = 0;
        for (; sweep < max_sweeps; ++sweep) {
            std::fill(next.begin(), next.end(), 0.0);
            double delta = 0.0;
            for (std::size_t g = 0; g < n; ++g) {
                for (const auto& [sa, ni] : model) {
                    auto [si, a] = sa;
                    double v;
                    if (std::size_t(ni) == g) {
                        v = 1.0;
                    } else {
                        double best = q_[idx(ni, 0, int(g))];
                        for (int b = 1; b < action_arity(); ++b)
                            best = std::max(best, q_[idx(ni, b, int(g))]);
                        v = gamma() * best;
                    }
                    std::size_t k = idx(si, a, int(g));
                    next[k] = v;
                    delta = std::max(delta, std::abs(v - q_[k]));
                }
            }
            q_.swap(next);
            if (delta < tol) {
                ++sweep;
                break;
            }
        }
        sync_target();
        return sweep;
    }

    void save(BinWriter& w) const {
        w.u64(codec_.size());
        w.u64(codec_.size() ? codec_.obs_of(0).size() : 0);
        for (std::size_t i = 0; i < codec_.size(); ++i) {
            const Obs& o = codec_.obs_of(int(i));
            w.f32_span(o.data(), o.size());
        }
        w.f64_span(q_.data(), q_.size());
    }

    static QTable load(BinReader& r, int arity, double gamma, GoalTest gt, double clamp_eps) {
        std::size_t n = r.u64();
        std::size_t dim = r.u64();
        StateCodec codec;
        for (std::size_t i = 0; i < n; ++i) {
            Obs o(dim);
            r.f32_span(o.data(), dim);
            codec.intern(o);
        }
        QTable t(std::move(codec), arity, gamma, gt, clamp_eps);
        r.f64_span(t.q_.data(), t.q_.size());
        t.sync_target();
        return t;
    }

private:
    std::size_t idx(int s, int a, int g) const {
        return (std::size_t(s) * std::size_t(action_arity()) + std::size_t(a)) * codec_.size() + std::size_t(g);
    }

    double target_value(int ni, int gi) const {
        if (ni == gi) return 1.0;
        // online net selects, target net evaluates
        int best = 0;
        for (int a = 1; a < action_arity(); ++a)
            if (q_[idx(ni, a, gi)] > q_[idx(ni, best, gi)]) best = a;
        return gamma() * target_[idx(ni, best, gi)];
    }

    // unique (state, action) -> next state pairs observed in the log
    std::vector<std::pair<std::pair<int, int>, int>> empirical_model(const TrajectoryLog& log) const {
        std::map<std::pair<int, int>, int> m;
        for (std::size_t e = 0; e < log.episode_count(); ++e) {
            const auto& ep = log.episode(int(e));
            for (std::size_t k = 0; k < ep.length(); ++k) {
                int si = codec_.encode(ep.states[k]);
                int ni = codec_.encode(ep.states[k + 1]);
                if (si < 0 || ni < 0) throw std::invalid_argument("log state missing from codec");
                m[{si, ep.actions[k]}] = ni;
            }
        }
        return {m.begin(), m.end()};
    }

    StateCodec codec_;
    std::vector<double> q_;
    std::vector<double> target_;
};

// Parametric backend: small fully-connected net over concat(obs, goal)
// with per-action outputs and a frozen target copy. Inputs are shifted
// and scaled per dimension; raw grid coordinates destabilize training.
class QNet final : public QFunction {
public:
    QNet(std::size_t obs_dim, int arity, const std::vector<int>& hidden, double gamma,
         GoalTest gt, Rng& rng, double clamp_eps = 1e-6)
        : QFunction(arity, gamma, gt, clamp_eps),
          obs_dim_(obs_dim),
          mean_(Vec::Zero(Eigen::Index(obs_dim))),
          scale_(Vec::Ones(Eigen::Index(obs_dim))),
          net_(int(2 * obs_dim), hidden, arity, rng),
          target_(net_) {}

    // per-dimension standardization from the training log
    void fit_normalization(const TrajectoryLog& log) {
        Vec sum = Vec::Zero(Eigen::Index(obs_dim_));
        Vec sq = Vec::Zero(Eigen::Index(obs_dim_));
        std::size_t n = 0;
        for (std::size_t e = 0; e < log.episode_count(); ++e)
            for (const auto& o : log.episode(int(e)).states) {
                for (std::size_t i = 0; i < obs_dim_; ++i) {
                    sum(Eigen::Index(i)) += o[i];
                    sq(Eigen::Index(i)) += double(o[i]) * double(o[i]);
                }
                ++n;
            }
        if (n == 0) return;
        mean_ = sum / double(n);
        for (Eigen::Index i = 0; i < mean_.size(); ++i) {
            double var = sq(i) / double(n) - mean_(i) * mean_(i);
            scale_(i) = 1.0 / std::sqrt(std::max(var, 1e-8));
        }
    }

    Vec q_values(const Obs& s, const Obs& g) const override {
        return net_.forward(pack_input(s, g));
    }

    void sync_target() { target_ = net_; }

    double td_update(const TrajectoryLog& log, std::span<const HindsightSample> batch,
                     double lr, double momentum) {
        if (batch.empty()) throw std::invalid_argument("td_update: empty batch");
        auto grad = net_.make_grad();
        double sq = 0.0;
        Mlp::Workspace ws;
        for (const auto& h : batch) {
            const Obs& s = log.hs_obs(h);
            const Obs& n = log.hs_next_obs(h);
            const Obs& g = log.hs_goal(h);
            int a = log.hs_action(h);
            double y;
            if (goal_test().equal(n, g)) {
                y = 1.0;
            } else {
                Vec online_next = net_.forward(pack_input(n, g));
                int best = 0;
                for (int b = 1; b < action_arity(); ++b)
                    if (online_next(b) > online_next(best)) best = b;
                y = gamma() * target_.forward(pack_input(n, g))(best);
            }
            Vec q = net_.forward(pack_input(s, g), ws);
            double err = q(a) - y;
            sq += err * err;
            Vec dy = Vec::Zero(action_arity());
            dy(a) = 2.0 * err / double(batch.size());
            net_.backward(ws, dy, grad);
        }
        opt_.step(net_, grad, lr, momentum);
        return sq / double(batch.size());
    }

    void save(BinWriter& w) const {
        w.u64(obs_dim_);
        w.f64_span(mean_.data(), obs_dim_);
        w.f64_span(scale_.data(), obs_dim_);
        net_.save(w);
    }

    static QNet load(BinReader& r, int arity, double gamma, GoalTest gt, double clamp_eps) {
        std::size_t obs_dim = r.u64();
        Rng dummy(0);
        QNet q(obs_dim, arity, {1}, gamma, gt, dummy, clamp_eps);
        r.f64_span(q.mean_.data(), obs_dim);
        r.f64_span(q.scale_.data(), obs_dim);
        q.net_ = Mlp::load(r);
        q.target_ = q.net_;
        return q;
    }

    Mlp& net() { return net_; }

    Vec pack_input(const Obs& s, const Obs& g) const {
        Vec x(2 * obs_dim_);
        for (std::size_t i = 0; i < obs_dim_; ++i)
            x(Eigen::Index(i)) = (s[i] - mean_(Eigen::Index(i))) * scale_(Eigen::Index(i));
        for (std::size_t i = 0; i < obs_dim_; ++i)
            x(Eigen::Index(obs_dim_ + i)) = (g[i] - mean_(Eigen::Index(i))) * scale_(Eigen::Index(i));
        return x;
    }

private:
    std::size_t obs_dim_;
    Vec mean_;
    Vec scale_;
    Mlp net_;
    Mlp target_;
    SgdMomentum opt_;
};

// Training ------------------------------------------------------------------

struct QTrainConfig {
    std::string backend = "tabular"; // tabular | mlp
    std::string mode = "sgd";        // sgd | sweep (tabular only)
    long long steps = 100000;        // sgd updates (batches)
    long long batch = 32;
    double lr = 0.25;                // tabular default; mlp wants ~1e-3
    double momentum = 0.9;           // mlp only
    long long target_sync_every = 100;
    double gamma = 0.95;
    double geom_p = 0.1;
    double clamp_eps = 1e-6;
    std::vector<int> hidden = {128, 128};

    static QTrainConfig from_config(const Config& c) {
        QTrainConfig q;
        q.backend = c.str("q.backend", q.backend);
        q.mode = c.str("q.mode", q.mode);
        q.steps = c.integer("q.steps", q.steps);
        q.batch = c.integer("q.batch", q.batch);
        q.lr = c.real("q.lr", q.backend == "mlp" ? 1e-3 : q.lr);
        q.momentum = c.real("q.momentum", q.momentum);
        q.target_sync_every = c.integer("q.target_sync_every", q.target_sync_every);
        q.gamma = c.real("q.gamma", q.gamma);
        q.geom_p = c.real("q.geom_p", q.geom_p);
        q.clamp_eps = c.real("q.clamp_eps", q.clamp_eps);
        auto hidden = c.int_list("q.hidden", {128, 128});
        q.hidden.assign(hidden.begin(), hidden.end());
        if (q.steps <= 0 || q.batch <= 0 || q.lr <= 0 || q.target_sync_every <= 0)
            throw std::runtime_error("q train config: counts and rates must be positive");
        return q;
    }
};

struct LossCurvePoint {
    long long step;
    double loss;
};

inline std::unique_ptr<QFunction> train_q(const TrajectoryLog& log, const QTrainConfig& cfg,
                                          GoalTest gt, Rng& rng,
                                          std::vector<LossCurvePoint>* curve = nullptr) {
    if (log.empty()) throw std::runtime_error("train_q: empty log");
    HindsightParams hp;
    hp.geom_p = cfg.geom_p;
    long long report_every = std::max(1ll, cfg.steps / 200);

    if (cfg.backend == "tabular") {
        auto q = std::make_unique<QTable>(StateCodec::from_log(log), log.action_arity(),
                                          cfg.gamma, gt, cfg.clamp_eps);
        if (cfg.mode == "sweep") {
            q->converge_sweeps(log);
            return q;
        }
        std::vector<HindsightSample> batch(std::size_t(cfg.batch));
        for (long long step = 0; step < cfg.steps; ++step) {
            for (auto& h : batch) h = log.sample_hindsight(HindsightMode::geometric, rng, hp);
            double loss = q->td_update(log, batch, cfg.lr);
            if ((step + 1) % cfg.target_sync_every == 0) q->sync_target();
            if (curve && step % report_every == 0) curve->push_back({step, loss});
        }
        q->sync_target();
        return q;
    }
    if (cfg.backend == "mlp") {
        auto q = std::make_unique<QNet>(log.obs_dim(), log.action_arity(), cfg.hidden,
                                        cfg.gamma, gt, rng, cfg.clamp_eps);
        q->fit_normalization(log);
        std::vector<HindsightSample> batch(std::size_t(cfg.batch));
        for (long long step = 0; step < cfg.steps; ++step) {
            for (auto& h : batch) h = log.sample_hindsight(HindsightMode::geometric, rng, hp);
            double loss = q->td_update(log, batch, cfg.lr, cfg.momentum);
            if ((step + 1) % cfg.target_sync_every == 0) q->sync_target();
            if (curve && step % report_every == 0) curve->push_back({step, loss});
        }
        return q;
    }
    throw std::runtime_error("unknown q.backend: " + cfg.backend);
}

// Average d_Q between consecutive buffer states (collision self-pairs
// excluded), scaled by a conservative fraction.
inline double calibrate_cQ(const QFunction& q, const TrajectoryLog& log, double fraction) {
    if (log.empty() || log.total_steps() == 0) throw std::runtime_error("calibrate_cQ: empty log");
    std::size_t stride = std::max<std::size_t>(1, log.total_steps() / 20000);
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t e = 0; e < log.episode_count(); ++e) {
        const auto& ep = log.episode(int(e));
        for (std::size_t k = 0; k < ep.length(); k += stride) {
            if (q.goal_test().equal(ep.states[k], ep.states[k + 1])) continue;
            sum += q.d_q(ep.states[k], ep.states[k + 1]);
            ++count;
        }
    }
    if (count == 0) throw std::runtime_error("calibrate_cQ: no moving consecutive pairs in log");
    return fraction * sum / double(count);
}

// Model file ----------------------------------------------------------------

inline void save_q(const QFunction& q, const std::string& path) {
    BinWriter w(path);
    w.magic("QFNC");
    w.u32(1);
    const auto* table = dynamic_cast<const QTable*>(&q);
    w.u32(table ? 0u : 1u);
    w.u32(std::uint32_t(q.action_arity()));
    w.f64(q.gamma());
    w.u32(q.goal_test().exact ? 1u : 0u);
    w.f64(q.goal_test().tol);
    w.f64(q.clamp_eps());
    if (table) {
        table->save(w);
    } else {
        dynamic_cast<const QNet&>(q).save(w);
    }
    w.close();
}

inline std::unique_ptr<QFunction> load_q(const std::string& path) {
    BinReader r(path);
    r.expect_magic("QFNC", "q model");
    r.expect_version(1, "q model");
    std::uint32_t kind = r.u32();
    int arity = int(r.u32());
    double gamma = r.f64();
    GoalTest gt;
    gt.exact = r.u32() != 0;
    gt.tol = r.f64();
    double eps = r.f64();
    if (kind == 0) return std::make_unique<QTable>(QTable::load(r, arity, gamma, gt, eps));
    if (kind == 1) return std::make_unique<QNet>(QNet::load(r, arity, gamma, gt, eps));
    throw std::runtime_error("q model: unknown backend kind");
}

} // namespace palmer

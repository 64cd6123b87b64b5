#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "palmer/io.hpp"
#include "palmer/rng.hpp"

namespace palmer {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// Fully-connected network, ReLU hidden layers, linear output.
// Double precision throughout so finite-difference checks are meaningful.
class Mlp {
public:
    struct Grad {
        std::vector<Mat> w;
        std::vector<Vec> b;
        void zero() {
            for (auto& m : w) m.setZero();
            for (auto& v : b) v.setZero();
        }
    };

    struct Workspace {
        std::vector<Vec> input; // input to each layer
        std::vector<Vec> pre;   // pre-activation of each layer
    };

    Mlp() = default;

    Mlp(int in, const std::vector<int>& hidden, int out, Rng& rng) {
        int prev = in;
        for (int h : hidden) {
            push_layer(prev, h, rng);
            prev = h;
        }
        push_layer(prev, out, rng);
    }

    int input_dim() const { return w_.empty() ? 0 : int(w_.front().cols()); }
    int output_dim() const { return w_.empty() ? 0 : int(w_.back().rows()); }
    std::size_t layer_count() const { return w_.size(); }

    Vec forward(const Vec& x, Workspace& ws) const {
        ws.input.resize(w_.size());
        ws.pre.resize(w_.size());
        Vec cur = x;
        for (std::size_t l = 0; l < w_.size(); ++l) {
            ws.input[l] = cur;
            ws.pre[l] = w_[l] * cur + b_[l];
            cur = (l + 1 == w_.size()) ? ws.pre[l] : relu(ws.pre[l]);
        }
        return cur;
    }

    Vec forward(const Vec& x) const {
        Workspace ws;
        return forward(x, ws);
    }

    // Accumulates parameter gradients for one sample; returns dL/dx.
    Vec backward(const Workspace& ws, const Vec& dy, Grad& g) const {
        Vec delta = dy;
        for (std::size_t l = w_.size(); l-- > 0;) {
            if (l + 1 != w_.size())
                delta = delta.cwiseProduct(relu_mask(ws.pre[l]));
            g.w[l].noalias() += delta * ws.input[l].transpose();
            g.b[l] += delta;
            if (l > 0) delta = w_[l].transpose() * delta;
            else return w_[0].transpose() * delta;
        }
        return Vec();
    }

    Grad make_grad() const {
        Grad g;
        for (std::size_t l = 0; l < w_.size(); ++l) {
            g.w.push_back(Mat::Zero(w_[l].rows(), w_[l].cols()));
            g.b.push_back(Vec::Zero(b_[l].size()));
        }
        return g;
    }

    std::size_t param_count() const {
        std::size_t n = 0;
        for (std::size_t l = 0; l < w_.size(); ++l)
            n += std::size_t(w_[l].size()) + std::size_t(b_[l].size());
        return n;
    }

    void flatten(double* out) const {
        std::size_t k = 0;
        for (std::size_t l = 0; l < w_.size(); ++l) {
            for (Eigen::Index i = 0; i < w_[l].size(); ++i) out[k++] = w_[l].data()[i];
            for (Eigen::Index i = 0; i < b_[l].size(); ++i) out[k++] = b_[l].data()[i];
        }
    }

    void unflatten(const double* in) {
        std::size_t k = 0;
        for (std::size_t l = 0; l < w_.size(); ++l) {
            for (Eigen::Index i = 0; i < w_[l].size(); ++i) w_[l].data()[i] = in[k++];
            for (Eigen::Index i = 0; i < b_[l].size(); ++i) b_[l].data()[i] = in[k++];
        }
    }

    static void flatten_grad(const Grad& g, double* out) {
        std::size_t k = 0;
        for (std::size_t l = 0; l < g.w.size(); ++l) {
            for (Eigen::Index i = 0; i < g.w[l].size(); ++i) out[k++] = g.w[l].data()[i];
            for (Eigen::Index i = 0; i < g.b[l].size(); ++i) out[k++] = g.b[l].data()[i];
        }
    }

    void save(BinWriter& w) const {
        w.u32(std::uint32_t(w_.size()));
        for (std::size_t l = 0; l < w_.size(); ++l) {
            w.u32(std::uint32_t(w_[l].rows()));
            w.u32(std::uint32_t(w_[l].cols()));
            w.f64_span(w_[l].data(), std::size_t(w_[l].size()));
            w.f64_span(b_[l].data(), std::size_t(b_[l].size()));
        }
    }

    static Mlp load(BinReader& r) {
        Mlp m;
        std::uint32_t layers = r.u32();
        for (std::uint32_t l = 0; l < layers; ++l) {
            std::uint32_t rows = r.u32(), cols = r.u32();
            Mat w(rows, cols);
            Vec b(rows);
            r.f64_span(w.data(), std::size_t(w.size()));
            r.f64_span(b.data(), std::size_t(b.size()));
            m.w_.push_back(std::move(w));
            m.b_.push_back(std::move(b));
        }
        return m;
    }

    // shrink one layer's weights; value heads start near zero output
    void scale_layer(std::size_t layer, double factor) {
        w_.at(layer) *= factor;
        b_.at(layer) *= factor;
    }

    bool same_shape(const Mlp& o) const {
        if (w_.size() != o.w_.size()) return false;
        for (std::size_t l = 0; l < w_.size(); ++l)
            if (w_[l].rows() != o.w_[l].rows() || w_[l].cols() != o.w_[l].cols()) return false;
        return true;
    }

    friend class SgdMomentum;

private:
    void push_layer(int in, int out, Rng& rng) {
        Mat w(out, in);
        double scale = std::sqrt(2.0 / double(in));
        for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = rng.normal() * scale;
        w_.push_back(std::move(w));
        b_.push_back(Vec::Zero(out));
    }

    static Vec relu(const Vec& v) { return v.cwiseMax(0.0); }
    static Vec relu_mask(const Vec& pre) {
        return (pre.array() > 0.0).cast<double>().matrix();
    }

    std::vector<Mat> w_;
    std::vector<Vec> b_;
};

// Classic momentum: v = mu * v - lr * g; theta += v.
class SgdMomentum {
public:
    void step(Mlp& m, const Mlp::Grad& g, double lr, double momentum) {
        if (vw_.empty()) {
            for (std::size_t l = 0; l < m.w_.size(); ++l) {
                vw_.push_back(Mat::Zero(m.w_[l].rows(), m.w_[l].cols()));
                vb_.push_back(Vec::Zero(m.b_[l].size()));
            }
        }
        for (std::size_t l = 0; l < m.w_.size(); ++l) {
            vw_[l] = momentum * vw_[l] - lr * g.w[l];
            vb_[l] = momentum * vb_[l] - lr * g.b[l];
            m.w_[l] += vw_[l];
            m.b_[l] += vb_[l];
        }
    }

private:
    std::vector<Mat> vw_;
    std::vector<Vec> vb_;
};

// Numerically stable cross-entropy over logits. Fills dlogits with the
// gradient (softmax - onehot) when requested.
inline double cross_entropy_logits(const Vec& logits, int target, Vec* dlogits = nullptr) {
    if (target < 0 || target >= logits.size()) throw std::invalid_argument("cross entropy target out of range");
    double m = logits.maxCoeff();
    Vec shifted = logits.array() - m;
    Vec e = shifted.array().exp();
    double z = e.sum();
    if (dlogits) {
        *dlogits = e / z;
        (*dlogits)(target) -= 1.0;
    }
    return std::log(z) - shifted(target);
}

inline Vec softmax(const Vec& logits) {
    double m = logits.maxCoeff();
    Vec e = (logits.array() - m).exp();
    return e / e.sum();
}

} // namespace palmer

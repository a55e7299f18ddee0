#include "tslim/qnet.hpp"

#include <cmath>
#include <stdexcept>

#include "tslim/kernels.hpp"

namespace tslim {

QNet::QNet(int input_dim, int output_dim, std::vector<int> hidden, std::uint64_t seed)
    : input_dim_(input_dim), output_dim_(output_dim) {
    if (input_dim <= 0 || output_dim <= 0) {
        throw std::invalid_argument("network dimensions must be positive");
    }
    Rng rng(seed);
    int prev = input_dim;
    hidden.push_back(output_dim);
    for (int width : hidden) {
        Layer layer;
        layer.rows = width;
        layer.cols = prev;
        layer.w.resize(static_cast<std::size_t>(width) * prev);
        layer.b.assign(width, 0.0);
        const double scale = std::sqrt(1.0 / prev);
        for (auto& w : layer.w) w = rng.uniform(-scale, scale);
        layers_.push_back(std::move(layer));
        prev = width;
    }
}

void QNet::forward_cached(const std::vector<double>& x,
                          std::vector<std::vector<double>>& acts) const {
    const auto& k = kernels::active();
    acts.clear();
    acts.push_back(x);
    for (std::size_t li = 0; li < layers_.size(); ++li) {
        const Layer& layer = layers_[li];
        std::vector<double> y(layer.rows);
        k.gemv(layer.w.data(), acts.back().data(), layer.b.data(), y.data(),
               static_cast<std::size_t>(layer.rows), static_cast<std::size_t>(layer.cols));
        if (li + 1 < layers_.size()) {
            for (auto& v : y) v = std::tanh(v);
        }
        acts.push_back(std::move(y));
    }
}

std::vector<double> QNet::forward(const std::vector<double>& x) const {
    std::vector<std::vector<double>> acts;
    forward_cached(x, acts);
    return acts.back();
}

double QNet::q_value(const std::vector<double>& x, int action) const {
    return forward(x)[static_cast<std::size_t>(action)];
}

int QNet::argmax(const std::vector<double>& x) const {
    const auto q = forward(x);
    int best = 0;
    for (int a = 1; a < output_dim_; ++a) {
        if (q[a] > q[best]) best = a;
    }
    return best;
}

double QNet::max_q(const std::vector<double>& x) const {
    const auto q = forward(x);
    double best = q[0];
    for (double v : q) best = std::max(best, v);
    return best;
}

std::size_t QNet::n_params() const {
    std::size_t n = 0;
    for (const auto& l : layers_) n += l.w.size() + l.b.size();
    return n;
}

std::vector<double> QNet::params_flat() const {
    std::vector<double> out;
    out.reserve(n_params());
    for (const auto& l : layers_) {
        out.insert(out.end(), l.w.begin(), l.w.end());
        out.insert(out.end(), l.b.begin(), l.b.end());
    }
    return out;
}

void QNet::set_params_flat(const std::vector<double>& p) {
    if (p.size() != n_params()) throw std::invalid_argument("flat parameter size mismatch");
    std::size_t off = 0;
    for (auto& l : layers_) {
        std::copy(p.begin() + off, p.begin() + off + l.w.size(), l.w.begin());
        off += l.w.size();
        std::copy(p.begin() + off, p.begin() + off + l.b.size(), l.b.begin());
        off += l.b.size();
    }
}

void QNet::copy_from(const QNet& other) {
    layers_ = other.layers_;
}

double QNet::loss_and_gradient(const std::vector<Sample>& batch,
                               std::vector<double>& grad) const {
    grad.assign(n_params(), 0.0);
    if (batch.empty()) return 0.0;
    const auto& k = kernels::active();

    // gradient slices per layer: [w | b] in layer order
    std::vector<std::size_t> w_off(layers_.size()), b_off(layers_.size());
    {
        std::size_t off = 0;
        for (std::size_t li = 0; li < layers_.size(); ++li) {
            w_off[li] = off;
            off += layers_[li].w.size();
            b_off[li] = off;
            off += layers_[li].b.size();
        }
    }

    double loss = 0.0;
    std::vector<std::vector<double>> acts;
    std::vector<double> dy, dx;
    const double inv_n = 1.0 / static_cast<double>(batch.size());

    for (const auto& sample : batch) {
        forward_cached(*sample.x, acts);
        const auto& out = acts.back();
        const double err = out[static_cast<std::size_t>(sample.action)] - sample.target;
        loss += 0.5 * err * err * inv_n;

        dy.assign(static_cast<std::size_t>(output_dim_), 0.0);
        dy[static_cast<std::size_t>(sample.action)] = err * inv_n;

        for (std::size_t li = layers_.size(); li-- > 0;) {
            const Layer& layer = layers_[li];
            const auto& input = acts[li];
            // dW += dy x^T, db += dy
            k.ger(grad.data() + w_off[li], dy.data(), input.data(), 1.0,
                  static_cast<std::size_t>(layer.rows), static_cast<std::size_t>(layer.cols));
            k.axpy(1.0, dy.data(), grad.data() + b_off[li],
                   static_cast<std::size_t>(layer.rows));
            if (li == 0) break;
            dx.resize(static_cast<std::size_t>(layer.cols));
            k.gemv_t(layer.w.data(), dy.data(), dx.data(),
                     static_cast<std::size_t>(layer.rows), static_cast<std::size_t>(layer.cols));
            // tanh derivative at the layer input activation
            const auto& a = acts[li];
            for (std::size_t i = 0; i < dx.size(); ++i) dx[i] *= 1.0 - a[i] * a[i];
            dy = dx;
        }
    }
    return loss;
}

double QNet::train_batch(const std::vector<Sample>& batch, double lr) {
    std::vector<double> grad;
    const double loss = loss_and_gradient(batch, grad);
    std::size_t off = 0;
    for (auto& l : layers_) {
        kernels::active().axpy(-lr, grad.data() + off, l.w.data(), l.w.size());
        off += l.w.size();
        kernels::active().axpy(-lr, grad.data() + off, l.b.data(), l.b.size());
        off += l.b.size();
    }
    return loss;
}

}  // namespace tslim

#pragma once

#include <cstddef>
#include <vector>

#include "tslim/rng.hpp"

namespace tslim {

// Small fully-connected network: tanh hidden layers, linear output head.
// Trained by plain SGD on the squared error of selected outputs. Gradients
// are computed in-repo and are finite-difference checkable through the flat
// parameter view.
class QNet {
public:
    QNet(int input_dim, int output_dim, std::vector<int> hidden, std::uint64_t seed);

    int input_dim() const { return input_dim_; }
    int output_dim() const { return output_dim_; }

    std::vector<double> forward(const std::vector<double>& x) const;
    double q_value(const std::vector<double>& x, int action) const;
    int argmax(const std::vector<double>& x) const;
    double max_q(const std::vector<double>& x) const;

    struct Sample {
        const std::vector<double>* x;
        int action;
        double target;
    };

    // Accumulated gradient of  mean_i 0.5*(Q(x_i)[a_i] - target_i)^2  over the
    // batch; grad has n_params entries. Returns the batch loss.
    double loss_and_gradient(const std::vector<Sample>& batch, std::vector<double>& grad) const;

    // One SGD step over the batch; returns the pre-step batch loss.
    double train_batch(const std::vector<Sample>& batch, double lr);

    std::size_t n_params() const;
    std::vector<double> params_flat() const;
    void set_params_flat(const std::vector<double>& p);
    void copy_from(const QNet& other);

private:
    struct Layer {
        int rows, cols;
        std::vector<double> w;  // row-major
        std::vector<double> b;
    };

    void forward_cached(const std::vector<double>& x, std::vector<std::vector<double>>& acts) const;

    int input_dim_, output_dim_;
    std::vector<Layer> layers_;
};

}  // namespace tslim

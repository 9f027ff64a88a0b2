#pragma once

#include "fedmix/param_vector.hpp"
#include "fedmix/rng.hpp"

#include <cstddef>
#include <vector>

namespace fedmix {

// Fully connected net: widths = {input dim, hidden..., C}. Hidden layers use
// the rectifier (subgradient 0 at 0); the final layer is linear logits.
// Parameter blocks are "L{i}/W" with dims {out, in} (row-major) and "L{i}/b".
struct MlpSpec {
    std::vector<std::size_t> widths;

    void validate() const;
    std::size_t input_dim() const { return widths.front(); }
    std::size_t output_dim() const { return widths.back(); }
    std::size_t num_layers() const { return widths.size() - 1; }
    // activations feeding the output layer; the input itself when no hidden
    std::size_t penultimate_dim() const { return widths[widths.size() - 2]; }
};

// Activations recorded by forward() so backward() can replay the graph.
// inputs[i] feeds layer i; pre[i] is layer i's pre-activation. pre.back()
// is the logits vector.
struct ForwardCache {
    std::vector<std::vector<double>> inputs;
    std::vector<std::vector<double>> pre;
};

struct ForwardResult {
    std::vector<double> logits;
    ForwardCache cache;

    const std::vector<double>& penultimate() const { return cache.inputs.back(); }
};

ForwardResult forward(const MlpSpec& spec, const ParamVector& params,
                      const std::vector<double>& x);

// Gradient of grad_logits · logits w.r.t. params. grad_penultimate, when
// given, is an extra gradient injected at the activation feeding the output
// layer (the gate reads that activation); it has no parameter to reach when
// the net has no hidden layer.
ParamVector backward(const MlpSpec& spec, const ParamVector& params,
                     const ForwardCache& cache,
                     const std::vector<double>& grad_logits,
                     const std::vector<double>* grad_penultimate = nullptr);

// Glorot-uniform weights, zero biases, all draws from the given stream.
ParamVector init_params(const MlpSpec& spec, RngStream& rng);

double log_sum_exp(const std::vector<double>& v);
std::vector<double> log_softmax(const std::vector<double>& v);
std::vector<double> softmax(const std::vector<double>& v);

} // namespace fedmix

#include "fedmix/mlp.hpp"

#include "fedmix/errors.hpp"
#include "fedmix/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace fedmix {

void MlpSpec::validate() const {
    if (widths.size() < 2) throw ConfigError("mlp needs at least input and output widths");
    for (std::size_t w : widths) {
        if (w == 0) throw ConfigError("mlp widths must be positive");
    }
}

namespace {

std::string weight_name(std::size_t layer) { return "L" + std::to_string(layer) + "/W"; }
std::string bias_name(std::size_t layer) { return "L" + std::to_string(layer) + "/b"; }

void require_layout(const MlpSpec& spec, const ParamVector& params) {
    const std::size_t layers = spec.num_layers();
    if (params.blocks.size() != 2 * layers) {
        throw StructuralError("params block count does not match mlp spec");
    }
    for (std::size_t i = 0; i < layers; ++i) {
        const Block& w = params.blocks[2 * i];
        const Block& b = params.blocks[2 * i + 1];
        const std::size_t in = spec.widths[i];
        const std::size_t out = spec.widths[i + 1];
        if (w.name != weight_name(i) || w.dims != std::vector<std::size_t>{out, in} ||
            b.name != bias_name(i) || b.dims != std::vector<std::size_t>{out}) {
            throw StructuralError("params layout does not match mlp spec at layer " +
                                  std::to_string(i));
        }
    }
}

void require_cache(const MlpSpec& spec, const ForwardCache& cache) {
    const std::size_t layers = spec.num_layers();
    if (cache.inputs.size() != layers || cache.pre.size() != layers) {
        throw StructuralError("forward cache does not match mlp spec");
    }
    for (std::size_t i = 0; i < layers; ++i) {
        if (cache.inputs[i].size() != spec.widths[i] ||
            cache.pre[i].size() != spec.widths[i + 1]) {
            throw StructuralError("forward cache does not match mlp spec at layer " +
                                  std::to_string(i));
        }
    }
}

} // namespace

ForwardResult forward(const MlpSpec& spec, const ParamVector& params,
                      const std::vector<double>& x) {
    spec.validate();
    require_layout(spec, params);
    if (x.size() != spec.input_dim()) {
        throw StructuralError("input length does not match mlp input width");
    }

    const std::size_t layers = spec.num_layers();
    ForwardResult res;
    res.cache.inputs.resize(layers);
    res.cache.pre.resize(layers);

    std::vector<double> a = x;
    for (std::size_t i = 0; i < layers; ++i) {
        const Block& w = params.blocks[2 * i];
        const Block& b = params.blocks[2 * i + 1];
        const std::size_t out = spec.widths[i + 1];

        std::vector<double> z(out);
        kernels::matvec(w.values.data(), a.data(), z.data(), out, spec.widths[i]);
        kernels::axpy(out, 1.0, b.values.data(), z.data());

        res.cache.inputs[i] = std::move(a);
        res.cache.pre[i] = z;
        if (i + 1 < layers) {
            a.resize(out);
            kernels::relu(out, z.data(), a.data());
        } else {
            res.logits = std::move(z);
        }
    }
    return res;
}

ParamVector backward(const MlpSpec& spec, const ParamVector& params,
                     const ForwardCache& cache,
                     const std::vector<double>& grad_logits,
                     const std::vector<double>* grad_penultimate) {
    spec.validate();
    require_layout(spec, params);
    require_cache(spec, cache);
    if (grad_logits.size() != spec.output_dim()) {
        throw StructuralError("grad_logits length does not match output width");
    }
    if (grad_penultimate && grad_penultimate->size() != spec.penultimate_dim()) {
        throw StructuralError("grad_penultimate length does not match penultimate width");
    }

    const std::size_t layers = spec.num_layers();
    ParamVector grad = ParamVector::zeros_like(params);

    // g holds the gradient w.r.t. layer i's pre-activation
    std::vector<double> g = grad_logits;
    for (std::size_t i = layers; i-- > 0;) {
        const Block& w = params.blocks[2 * i];
        Block& gw = grad.blocks[2 * i];
        Block& gb = grad.blocks[2 * i + 1];
        const std::size_t out = spec.widths[i + 1];
        const std::size_t in = spec.widths[i];

        kernels::outer_accum(gw.values.data(), g.data(), cache.inputs[i].data(), out, in);
        kernels::axpy(out, 1.0, g.data(), gb.values.data());

        if (i == 0) break;
        std::vector<double> da(in, 0.0);
        kernels::matvec_t_accum(w.values.data(), g.data(), da.data(), out, in);
        if (grad_penultimate && i == layers - 1) {
            kernels::axpy(in, 1.0, grad_penultimate->data(), da.data());
        }
        g.resize(in);
        kernels::relu_backward(in, cache.pre[i - 1].data(), da.data(), g.data());
    }
    return grad;
}

ParamVector init_params(const MlpSpec& spec, RngStream& rng) {
    spec.validate();
    ParamVector params;
    for (std::size_t i = 0; i < spec.num_layers(); ++i) {
        const std::size_t in = spec.widths[i];
        const std::size_t out = spec.widths[i + 1];
        const double bound = std::sqrt(6.0 / static_cast<double>(in + out));

        Block w{weight_name(i), {out, in}, std::vector<double>(out * in)};
        for (double& v : w.values) v = rng.uniform(-bound, bound);
        params.blocks.push_back(std::move(w));
        params.blocks.push_back({bias_name(i), {out}, std::vector<double>(out, 0.0)});
    }
    return params;
}

double log_sum_exp(const std::vector<double>& v) {
    const double mx = *std::max_element(v.begin(), v.end());
    double s = 0.0;
    for (double x : v) s += std::exp(x - mx);
    return mx + std::log(s);
}

std::vector<double> log_softmax(const std::vector<double>& v) {
    const double lse = log_sum_exp(v);
    std::vector<double> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] - lse;
    return out;
}

std::vector<double> softmax(const std::vector<double>& v) {
    std::vector<double> out = log_softmax(v);
    for (double& x : out) x = std::exp(x);
    return out;
}

} // namespace fedmix

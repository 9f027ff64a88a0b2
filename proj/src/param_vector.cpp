#include "fedmix/param_vector.hpp"

#include "fedmix/errors.hpp"
#include "fedmix/kernels.hpp"

#include <algorithm>
#include <unordered_set>

namespace fedmix {

ParamVector ParamVector::zeros_like(const ParamVector& other) {
    ParamVector out;
    out.blocks.reserve(other.blocks.size());
    for (const Block& b : other.blocks) {
        out.blocks.push_back({b.name, b.dims, std::vector<double>(b.values.size(), 0.0)});
    }
    return out;
}

Block& ParamVector::block(std::string_view name) {
    if (Block* b = find(name)) return *b;
    throw StructuralError("no block named '" + std::string(name) + "'");
}

const Block& ParamVector::block(std::string_view name) const {
    if (const Block* b = find(name)) return *b;
    throw StructuralError("no block named '" + std::string(name) + "'");
}

Block* ParamVector::find(std::string_view name) {
    for (Block& b : blocks) {
        if (b.name == name) return &b;
    }
    return nullptr;
}

const Block* ParamVector::find(std::string_view name) const {
    for (const Block& b : blocks) {
        if (b.name == name) return &b;
    }
    return nullptr;
}

std::size_t ParamVector::value_count() const {
    std::size_t n = 0;
    for (const Block& b : blocks) n += b.values.size();
    return n;
}

bool ParamVector::aligned_with(const ParamVector& other) const {
    if (blocks.size() != other.blocks.size()) return false;
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        if (blocks[i].name != other.blocks[i].name) return false;
        if (blocks[i].dims != other.blocks[i].dims) return false;
        if (blocks[i].values.size() != other.blocks[i].values.size()) return false;
    }
    return true;
}

void ParamVector::require_aligned(const ParamVector& other, std::string_view what) const {
    if (!aligned_with(other)) {
        throw StructuralError("layout mismatch in " + std::string(what));
    }
}

void ParamVector::validate() const {
    std::unordered_set<std::string_view> seen;
    for (const Block& b : blocks) {
        std::size_t prod = 1;
        for (std::size_t d : b.dims) prod *= d;
        if (b.dims.empty() || prod != b.values.size()) {
            throw StructuralError("block '" + b.name + "' dims do not match value count");
        }
        if (!seen.insert(b.name).second) {
            throw StructuralError("duplicate block name '" + b.name + "'");
        }
    }
}

void ParamVector::zero() {
    for (Block& b : blocks) std::fill(b.values.begin(), b.values.end(), 0.0);
}

void ParamVector::scale(double a) {
    for (Block& b : blocks) kernels::scale(b.values.size(), a, b.values.data());
}

void ParamVector::add(const ParamVector& other) {
    require_aligned(other, "ParamVector::add");
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        kernels::axpy(blocks[i].values.size(), 1.0,
                      other.blocks[i].values.data(), blocks[i].values.data());
    }
}

void ParamVector::axpy(double a, const ParamVector& x) {
    require_aligned(x, "ParamVector::axpy");
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        kernels::axpy(blocks[i].values.size(), a,
                      x.blocks[i].values.data(), blocks[i].values.data());
    }
}

ParamVector difference(const ParamVector& a, const ParamVector& b) {
    a.require_aligned(b, "difference");
    ParamVector out = a;
    out.axpy(-1.0, b);
    return out;
}

} // namespace fedmix

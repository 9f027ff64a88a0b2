#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace fedmix {

// One named tensor: dims are logical shape, values are flat row-major.
struct Block {
    std::string name;
    std::vector<std::size_t> dims;
    std::vector<double> values;

    std::size_t size() const { return values.size(); }
};

// Ordered collection of named blocks. Everything that moves between client
// and server (expert weights, gradients, deltas, Adam moments) is one of
// these; two ParamVectors interact only when their layouts align exactly.
struct ParamVector {
    std::vector<Block> blocks;

    static ParamVector zeros_like(const ParamVector& other);

    Block& block(std::string_view name);
    const Block& block(std::string_view name) const;
    Block* find(std::string_view name);
    const Block* find(std::string_view name) const;

    std::size_t value_count() const;
    bool aligned_with(const ParamVector& other) const;
    void require_aligned(const ParamVector& other, std::string_view what) const;

    // throws StructuralError when a block's dims do not multiply out to its
    // value count or a name repeats
    void validate() const;

    void zero();
    void scale(double a);
    void add(const ParamVector& other);
    void axpy(double a, const ParamVector& x);
};

// a - b as a fresh vector
ParamVector difference(const ParamVector& a, const ParamVector& b);

} // namespace fedmix

#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace dmsp::ad {

// Flat parameter storage. Affine blocks hold a row-major (out x in) weight
// matrix followed by the out-length bias; vector blocks are plain arrays.
class ParamStore {
public:
    enum class BlockKind { affine, vector };

    struct Block {
        std::string name;
        BlockKind kind;
        int out = 0, in = 0;    // for vector blocks: out = length, in = 0
        std::size_t offset = 0;
        std::size_t size = 0;
    };

    int add_affine(std::string name, int out, int in);
    int add_vector(std::string name, int length);

    int block_id(const std::string& name) const;  // -1 if absent
    const Block& block(int id) const { return blocks_[static_cast<std::size_t>(id)]; }
    const std::vector<Block>& blocks() const { return blocks_; }

    std::span<double> values(int id) {
        const auto& b = blocks_[static_cast<std::size_t>(id)];
        return {data_.data() + b.offset, b.size};
    }
    std::span<const double> values(int id) const {
        const auto& b = blocks_[static_cast<std::size_t>(id)];
        return {data_.data() + b.offset, b.size};
    }

    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }
    std::size_t size() const { return data_.size(); }

private:
    std::vector<double> data_;
    std::vector<Block> blocks_;
};

// Reverse-mode tape over small dense vectors. Nodes are appended during the
// forward pass; backward walks them once in reverse, accumulating parameter
// gradients into an external buffer sized like the ParamStore.
class Tape {
public:
    explicit Tape(const ParamStore& params) : params_(&params) {}

    void reset();

    int leaf(std::span<const double> v);
    int leaf1(double v);
    int param_vector(int block_id);            // trainable leaf
    int affine(int x, int block_id);           // W x + b
    int tanh(int x);
    int concat(int x, int y);
    int mean(std::span<const int> xs);         // elementwise mean of same-length vectors
    int stack(std::span<const int> scalars);   // N scalar nodes -> length-N vector
    int select(int x, std::span<const int> indices);
    int softmax(int x);
    int dot(int x, int y);
    int pick(int x, int index);                // scalar element of a vector
    int sub(int x, int y);                     // scalar
    int mul(int x, int y);                     // scalar
    int square(int x);                         // scalar

    std::span<const double> values(int node) const {
        const auto& n = nodes_[static_cast<std::size_t>(node)];
        return {val_.data() + n.off, static_cast<std::size_t>(n.len)};
    }
    double value(int node) const { return values(node)[0]; }

    // d(root)/d(params) accumulated into param_grad (+=). root must be scalar.
    void backward(int root, std::span<double> param_grad);

    std::size_t node_count() const { return nodes_.size(); }

private:
    enum class Op : unsigned char {
        leaf, param, affine, tanh_, concat, mean, stack, select, softmax,
        dot, pick, sub, mul, square
    };

    struct Node {
        Op op;
        int a = -1, b = -1;   // primary inputs
        int aux = 0;          // block id / pick index / pool offset
        int count = 0;        // pool entry count
        std::size_t off = 0;  // value/grad slot
        int len = 0;
    };

    const ParamStore* params_;
    std::vector<Node> nodes_;
    std::vector<double> val_, grad_;
    std::vector<int> pool_;

    int push(Op op, int len, int a = -1, int b = -1, int aux = 0, int count = 0);
    double* slot(const Node& n) { return val_.data() + n.off; }
    double* gslot(const Node& n) { return grad_.data() + n.off; }
};

}  // namespace dmsp::ad

#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "kt/errors.hpp"
#include "kt/fft.hpp"

namespace kt {

/// Dense shape, up to 4 axes. Unused trailing axes are held at 1 so that
/// equality is structural.
struct Shape {
    std::array<int, 4> d{1, 1, 1, 1};
    int ndim = 0;

    static Shape of(std::initializer_list<int> dims);
    std::int64_t numel() const;
    std::string str() const;
    bool operator==(const Shape&) const = default;
};

/// Real-valued array (f32) that may participate in an autodiff graph.
/// Complex quantities travel as paired-real tensors with a trailing axis
/// of extent 2 holding (re, im).
struct Tensor {
    Shape shape;
    std::vector<float> v;

    Tensor() = default;
    explicit Tensor(const Shape& s) : shape(s), v(static_cast<std::size_t>(s.numel()), 0.0f) {}
    Tensor(const Shape& s, std::vector<float> values);
};

using NodeId = int;

/// Gradients for leaf parameters, accumulated in f64.
using GradMap = std::unordered_map<NodeId, std::vector<double>>;

/// Reverse-mode tape. Forward values are computed eagerly at node creation
/// and cached in f32; FFTs and normalization statistics run internally in
/// f64. A graph is single-threaded during construction and backward;
/// distinct graphs may live on distinct threads.
class Graph {
public:
    NodeId constant(Tensor t);
    NodeId parameter(Tensor t);

    /// [k1,k2,2] -> [r,c,2], kernel anchored top-left, zero padding to the
    /// right and bottom.
    NodeId pad2d_complex(NodeId kernel, int out_rows, int out_cols);

    /// Unitary 2-D DFT over the trailing [r,c,2] axes; leading axis (if
    /// any) is batch. Backward applies the opposite-direction transform.
    NodeId dft2(NodeId x, TransformDirection dir);

    /// Element-wise complex product on paired-real tensors. Shapes must
    /// match, or one operand may be [r,c,2] against [N,r,c,2].
    NodeId complex_hadamard(NodeId a, NodeId b);

    /// p inputs of shape [N,r,c,2] -> [N,2p,r,c]; kernel j lands in
    /// channels (2j, 2j+1) as (re, im).
    NodeId stack_complex_channels(const std::vector<NodeId>& parts);

    /// Same-size 2-D convolution, stride 1, odd square kernels.
    /// x [N,C,H,W], w [OC,C,k,k], bias [OC] -> [N,OC,H,W].
    NodeId conv2d(NodeId x, NodeId w, NodeId bias);

    NodeId relu(NodeId x);

    /// Per-sample group normalization; gamma/beta have shape [C] and
    /// groups must divide C.
    NodeId group_norm(NodeId x, NodeId gamma, NodeId beta, int groups, double eps = 1e-5);

    /// Average pooling, window x window, given stride, no padding.
    NodeId avg_pool(NodeId x, int window, int stride);

    /// [N,C,H,W] -> [N,C] spatial mean.
    NodeId global_avg_pool(NodeId x);

    /// x [N,F], w [O,F], bias [O] -> [N,O].
    NodeId dense(NodeId x, NodeId w, NodeId bias);

    NodeId add(NodeId a, NodeId b);

    /// Mean binary cross-entropy with logits over the batch; labels in
    /// {0,1}. pos_weight scales the positive-class term. Scalar output.
    NodeId sigmoid_bce_loss(NodeId logits, std::vector<float> labels, double pos_weight = 1.0);

    /// Mean of scalar nodes (multi-head loss aggregation).
    NodeId mean_scalars(const std::vector<NodeId>& scalars);

    Tensor value(NodeId id) const;
    const std::vector<float>& values_raw(NodeId id) const;
    const Shape& shape(NodeId id) const;
    std::size_t node_count() const { return nodes_.size(); }

    /// Reverse-mode gradients of a scalar loss for every parameter leaf
    /// that reaches it. Deterministic: repeated calls yield bit-identical
    /// results.
    GradMap backward(NodeId loss) const;

    struct Replay {
        double loss = 0.0;
        std::vector<std::uint8_t> relu_signs; // concatenated x>0 masks, node order
    };

    /// Re-evaluates the loss in f64 with one leaf coordinate perturbed by
    /// delta. The recorded ReLU sign pattern lets finite-difference checks
    /// drop probes that straddle a kink.
    Replay replay_f64(NodeId loss, NodeId leaf, std::int64_t coord, double delta) const;

private:
    struct Node;
    std::vector<Node> nodes_;

    NodeId push(Node n);
    void check_id(NodeId id) const;
};

/// Max over leaf coordinates of |analytic - central difference| /
/// (|analytic| + |numeric| + 1e-8), probed at the given step. Coordinates
/// whose +/-eps replays disagree on any ReLU activation sign are skipped.
double gradient_check(const Graph& g, NodeId loss, NodeId leaf, double eps = 1e-3);

} // namespace kt
